pub mod algebra;
pub mod expr;
pub mod oracles;
pub mod metric;
pub mod linalg;
pub mod grid;
pub mod cell;
pub mod distance;
pub mod ball;
pub mod subriemannian;
pub mod volume;
pub mod config;
pub mod report;
pub mod acceptance;
pub mod study;
