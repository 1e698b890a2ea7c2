pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod output;
pub mod predstore;
pub mod referral;
pub mod rng;
pub mod simlab;
pub mod uncertainty;
