//! Plain-text dump of an [`LdAdamState`].
//!
//! ```text
//! ldadam-state 1
//! layer 0
//! shape 64 96
//! side left
//! step 12
//! vhat_max 0e0
//! prev_vhat_max 0e0
//! matrix,basis,64,8
//! <64 rows of 8 comma-separated values>
//! matrix,first_moment,8,96
//! ...
//! matrix,second_moment,8,96
//! matrix,accumulator,64,96
//! ```
//!
//! Values use Rust's shortest round-trip `{:e}` formatting, so a load returns
//! bit-identical matrices. Before the first step the basis is written as
//! `matrix,basis,0,0` with no rows. The hyperparameters are not stored; the
//! caller supplies them on load.

use std::io::{BufRead, Write};

use crate::linalg::{Matrix, OrthonormalBasis};

use super::{LdAdamState, OptimError, OptimizerConfig, Side};

const MAGIC: &str = "ldadam-state 1";

impl LdAdamState {
    pub fn dump(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "layer {}", self.layer())?;
        writeln!(out, "shape {} {}", self.shape().0, self.shape().1)?;
        writeln!(out, "side {}", self.side().as_str())?;
        writeln!(out, "step {}", self.step_count())?;
        writeln!(out, "vhat_max {:e}", self.vhat_max())?;
        writeln!(out, "prev_vhat_max {:e}", self.prev_vhat_max())?;
        match self.basis() {
            Some(p) => write_matrix(out, "basis", p.matrix())?,
            None => writeln!(out, "matrix,basis,0,0")?,
        }
        write_matrix(out, "first_moment", self.first_moment())?;
        write_matrix(out, "second_moment", self.second_moment())?;
        write_matrix(out, "accumulator", self.accumulator())
    }

    pub fn load(input: impl BufRead, config: OptimizerConfig) -> Result<Self, OptimError> {
        let mut lines = input
            .lines()
            .map(|l| l.map_err(|e| OptimError::Checkpoint(e.to_string())));
        let mut next = move || -> Result<String, OptimError> {
            lines
                .next()
                .unwrap_or_else(|| Err(OptimError::Checkpoint("unexpected end of input".into())))
        };
        if next()?.trim() != MAGIC {
            return Err(OptimError::Checkpoint("missing header".into()));
        }
        let layer: usize = parse(&field(&next()?, "layer")?)?;
        let shape_line = field(&next()?, "shape")?;
        let dims: Vec<usize> = shape_line
            .split_whitespace()
            .map(parse)
            .collect::<Result<_, _>>()?;
        let [n, m] = dims[..] else {
            return Err(OptimError::Checkpoint("shape needs two dimensions".into()));
        };
        let side = field(&next()?, "side")?;
        let expected = Side::for_shape(n, m).as_str();
        if side != expected {
            return Err(OptimError::Checkpoint(format!(
                "side {side} does not match shape {n}x{m}"
            )));
        }
        let step: u64 = parse(&field(&next()?, "step")?)?;
        let vhat_max: f64 = parse(&field(&next()?, "vhat_max")?)?;
        let prev_vhat_max: f64 = parse(&field(&next()?, "prev_vhat_max")?)?;
        let basis = read_matrix(&mut next, "basis")?;
        let first = read_matrix(&mut next, "first_moment")?
            .ok_or_else(|| OptimError::Checkpoint("empty first moment".into()))?;
        let second = read_matrix(&mut next, "second_moment")?
            .ok_or_else(|| OptimError::Checkpoint("empty second moment".into()))?;
        let acc = read_matrix(&mut next, "accumulator")?
            .ok_or_else(|| OptimError::Checkpoint("empty accumulator".into()))?;
        let basis = basis.map(OrthonormalBasis::new).transpose()?;
        LdAdamState::restore(
            config,
            layer,
            (n, m),
            step,
            basis,
            (first, second),
            (vhat_max, prev_vhat_max),
            acc,
        )
    }
}

fn write_matrix(out: &mut impl Write, name: &str, x: &Matrix) -> std::io::Result<()> {
    writeln!(out, "matrix,{name},{},{}", x.rows(), x.cols())?;
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn read_matrix(
    next: &mut impl FnMut() -> Result<String, OptimError>,
    name: &str,
) -> Result<Option<Matrix>, OptimError> {
    let header = next()?;
    let parts: Vec<&str> = header.trim().split(',').collect();
    if parts.len() != 4 || parts[0] != "matrix" || parts[1] != name {
        return Err(OptimError::Checkpoint(format!(
            "expected matrix {name}, got {header:?}"
        )));
    }
    let rows: usize = parse(parts[2])?;
    let cols: usize = parse(parts[3])?;
    if rows == 0 || cols == 0 {
        return Ok(None);
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let line = next()?;
        let before = data.len();
        for v in line.trim().split(',') {
            data.push(parse::<f64>(v)?);
        }
        if data.len() - before != cols {
            return Err(OptimError::Checkpoint(format!(
                "row of {name} has the wrong length"
            )));
        }
    }
    Ok(Some(Matrix::from_vec(rows, cols, data)?))
}

fn field(line: &str, key: &str) -> Result<String, OptimError> {
    line.trim()
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_owned)
        .ok_or_else(|| OptimError::Checkpoint(format!("expected `{key} ...`, got {line:?}")))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, OptimError> {
    s.trim()
        .parse()
        .map_err(|_| OptimError::Checkpoint(format!("cannot parse {s:?}")))
}
