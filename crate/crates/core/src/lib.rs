pub mod activation;
pub mod backward;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod forward;
pub mod gradcheck;
pub mod matrix;
pub mod nn;
pub mod parallel;
pub mod tree;
