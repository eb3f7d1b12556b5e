pub mod check;
pub mod enhance;
pub mod eval;
pub mod gen;
pub mod tensors;
