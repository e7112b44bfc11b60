//! Fully implicit three-phase black-oil reservoir simulation.

pub mod autodiff;
pub mod grid;
pub mod pvt;
pub mod satfunc;
pub mod table;
pub mod units;
pub mod linalg;
pub mod model;
pub mod wells;
pub mod equil;
pub mod nonlinear;
pub mod deck;
pub mod output;
pub mod cli;
