pub mod basic;
pub mod conv;
pub mod norm;
pub mod shape;
