//! Incentive allocation for passive parties in vertical federated learning.
//!
//! The gain of the federated model over the active party's local model is
//! treated as the estate of a bankruptcy problem, and each passive party's
//! standalone gain is its claim. This crate holds the allocation machinery and
//! the training simulator; it only needs `alloc`.
//!
//! - [`bankruptcy`]: claims problems and the proportional, CEA, CEL and Talmud
//!   division rules on top of one exact water-filling solver.
//! - [`coalitional`]: dense coalitional games, exact Shapley values, the
//!   bankruptcy game, excess vectors and nucleolus checks.
//! - [`party`]: row-aligned per-party feature blocks.
//! - [`vflsim`]: an in-process simulation of vertical federated logistic
//!   regression with a recorded message log, plus F1 evaluation.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bankruptcy;
pub mod coalitional;
mod error;
pub mod party;
pub mod vflsim;

pub use bankruptcy::{
    allocate, divide, normalize_problem, solve_level, BankruptcyProblem, NormalizationLog,
    PayoutVector, Rule,
};
pub use coalitional::{CoalitionalGame, ExcessVector, NucleolusReport};
pub use error::{Error, Result};
pub use party::{FeatureColumn, Matrix, PartyDataset, Role};
pub use vflsim::{FederatedModel, RoundTrace, TrainingConfig};
