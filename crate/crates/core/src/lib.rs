pub mod accounting;
pub mod checks;
pub mod experiment;
pub mod linalg;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod theory;
