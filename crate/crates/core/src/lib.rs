//! Backtesting of predictive factor models on monthly equity panels.
//!
//! Two model families are compared: a predictive APT that regresses each
//! stock's excess return on lagged factor realizations, and a
//! characteristic-based model (CBM) that regresses the cross-section of
//! returns on lagged, standardized firm characteristics. Predictions are
//! evaluated by sorting stocks into quantile portfolios each month.

pub mod backtest;
pub mod error;
pub mod factors;
pub mod ingest;
pub mod models;
pub mod panel;
pub mod pipeline;
pub mod preprocess;
pub mod regress;
pub mod report;
pub mod synth;
pub mod universe;

pub use error::{Error, Result};
