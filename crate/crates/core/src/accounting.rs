//! Optimizer-state memory accounting for transformer-shaped models.
//!
//! A projected `n × m` layer stores a basis and two low-rank moments:
//! `min(n, m)·r + 2·r·max(n, m)` numbers. Full Adam stores `2·n·m`. Layers
//! that are never projected (embeddings, output heads, norms, biases) keep
//! full Adam states under every adaptive optimizer.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountingError {
    #[error("rank {rank} exceeds min({n}, {m}) of layer {layer}")]
    RankTooLarge {
        layer: String,
        n: u64,
        m: u64,
        rank: u64,
    },
    #[error("invalid model spec: {0}")]
    Invalid(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    /// Low-rank states under LDAdam and GaLore, full states under Adam.
    Projected,
    /// Full Adam states under every optimizer.
    Adam,
    /// No optimizer state (frozen).
    None,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub n: u64,
    pub m: u64,
    #[serde(default = "one")]
    pub count: u64,
    pub kind: StateKind,
}

fn one() -> u64 {
    1
}

impl LayerSpec {
    fn new(name: &str, n: u64, m: u64, count: u64, kind: StateKind) -> Self {
        Self {
            name: name.into(),
            n,
            m,
            count,
            kind,
        }
    }

    pub fn weights(&self) -> u64 {
        self.count * self.n * self.m
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), AccountingError> {
        if self.layers.is_empty() {
            return Err(AccountingError::Invalid(format!(
                "model {} has no layers",
                self.name
            )));
        }
        if let Some(l) = self.layers.iter().find(|l| l.n == 0 || l.m == 0) {
            return Err(AccountingError::Invalid(format!(
                "layer {} has an empty side",
                l.name
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, AccountingError> {
        let spec: Self =
            toml::from_str(text).map_err(|e| AccountingError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, AccountingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AccountingError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn weights(&self) -> u64 {
        self.layers.iter().map(LayerSpec::weights).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    LdAdam { rank: u64 },
    GaLore { rank: u64 },
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::LdAdam { .. } => "ldadam",
            Self::GaLore { .. } => "galore",
        }
    }
}

/// Numbers stored as optimizer state for `model` under `optimizer`.
pub fn optimizer_state_tokens(
    model: &ModelSpec,
    optimizer: OptimizerKind,
) -> Result<u64, AccountingError> {
    model.validate()?;
    let mut total = 0u64;
    for l in &model.layers {
        let per = match (l.kind, optimizer) {
            (StateKind::None, _) => 0,
            (StateKind::Adam, _) | (StateKind::Projected, OptimizerKind::Adam) => 2 * l.n * l.m,
            (
                StateKind::Projected,
                OptimizerKind::LdAdam { rank } | OptimizerKind::GaLore { rank },
            ) => {
                let (short, long) = (l.n.min(l.m), l.n.max(l.m));
                if rank > short {
                    return Err(AccountingError::RankTooLarge {
                        layer: l.name.clone(),
                        n: l.n,
                        m: l.m,
                        rank,
                    });
                }
                short * rank + 2 * rank * long
            }
        };
        total += l.count * per;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Memory {
    pub bytes: u64,
    /// `bytes / 1024³`, rounded to two decimals.
    pub gb: f64,
    /// `bytes / 10⁹`, rounded to two decimals.
    pub gb_decimal: f64,
}

/// Bytes for `tokens` numbers of `bytes_per_token` bytes (2 or 4).
pub fn memory_bytes(tokens: u64, bytes_per_token: u64) -> Memory {
    let bytes = tokens * bytes_per_token;
    let round = |x: f64| (x * 100.0).round() / 100.0;
    Memory {
        bytes,
        gb: round(bytes as f64 / 1024f64.powi(3)),
        gb_decimal: round(bytes as f64 / 1e9),
    }
}

/// Classification head size assumed for RoBERTa-base.
pub const ROBERTA_LABELS: u64 = 2;

fn roberta_base() -> ModelSpec {
    use StateKind::*;
    let h = 768;
    ModelSpec {
        name: "roberta-base".into(),
        layers: vec![
            LayerSpec::new("token_embedding", 50265, h, 1, Adam),
            LayerSpec::new("token_embedding_bias", 1, h, 1, Adam),
            LayerSpec::new("positional_embedding", 564, h, 1, Adam),
            LayerSpec::new("attention", h, h, 12 * 4, Projected),
            LayerSpec::new("mlp", 3072, h, 12 * 3, Projected),
            LayerSpec::new("embedding_norm", 1, h, 2, Adam),
            LayerSpec::new("block_norm", 1, h, 12 * 9, Adam),
            LayerSpec::new("block_norm_wide", 1, 3072, 12, Adam),
            LayerSpec::new("dense", h, h, 1, Adam),
            LayerSpec::new("dense_bias", 1, h, 1, Adam),
            LayerSpec::new("output", h, ROBERTA_LABELS, 1, Adam),
            LayerSpec::new("output_bias", 1, ROBERTA_LABELS, 1, Adam),
        ],
    }
}

fn llama(name: &str, h: u64, ffn: u64, blocks: u64) -> ModelSpec {
    use StateKind::*;
    ModelSpec {
        name: name.into(),
        layers: vec![
            LayerSpec::new("embedding", 32000, h, 1, Adam),
            LayerSpec::new("attention", h, h, blocks * 4, Projected),
            LayerSpec::new("mlp", h, ffn, blocks * 3, Projected),
            LayerSpec::new("norm", 1, h, blocks * 2 + 1, Adam),
            LayerSpec::new("output", h, 32000, 1, Adam),
        ],
    }
}

/// The four reference architectures.
pub fn builtin_model_specs() -> Vec<ModelSpec> {
    vec![
        roberta_base(),
        llama("llama-130m", 768, 2048, 12),
        llama("llama-350m", 1024, 2736, 24),
        llama("llama2-7b", 4096, 11008, 32),
    ]
}

pub fn builtin_model(name: &str) -> Result<ModelSpec, AccountingError> {
    builtin_model_specs()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| AccountingError::UnknownModel(name.into()))
}

/// A table of state tokens and memory for Adam, LDAdam and GaLore at `rank`.
pub fn memory_report(
    model: &ModelSpec,
    rank: u64,
    bytes_per_token: u64,
) -> Result<String, AccountingError> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} (r={rank}), {} bytes per number, {} weights",
        model.name,
        bytes_per_token,
        model.weights()
    );
    let _ = writeln!(
        s,
        "{:<8} {:>16} {:>10} {:>10}",
        "optim", "state tokens", "GB", "GB (1e9)"
    );
    for opt in [
        OptimizerKind::Adam,
        OptimizerKind::LdAdam { rank },
        OptimizerKind::GaLore { rank },
    ] {
        let tokens = optimizer_state_tokens(model, opt)?;
        let mem = memory_bytes(tokens, bytes_per_token);
        let _ = writeln!(
            s,
            "{:<8} {:>16} {:>10.2} {:>10.2}",
            opt.label(),
            tokens,
            mem.gb,
            mem.gb_decimal
        );
    }
    Ok(s)
}
