//! Per-month cross-sectional winsorization and z-scoring of characteristics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CharacteristicSet, Panel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZScorePolicy {
    /// Clip at mean ± this many sample standard deviations.
    pub winsor_sigma: f64,
    /// Rows with fewer valid cells are dropped entirely.
    pub min_count: usize,
}

impl Default for ZScorePolicy {
    fn default() -> Self {
        Self {
            winsor_sigma: 3.0,
            min_count: 10,
        }
    }
}

impl ZScorePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.winsor_sigma > 0.0) {
            return Err(Error::InvalidArgument("winsor_sigma must be positive".into()));
        }
        if self.min_count < 3 {
            return Err(Error::InvalidArgument("min_count must be at least 3".into()));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation of the present cells.
fn row_moments(row: &[Option<f64>]) -> Option<(usize, f64, f64)> {
    let n = row.iter().flatten().count();
    if n == 0 {
        return None;
    }
    let mean = row.iter().flatten().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (row.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((n, mean, sd))
}

/// Clips each row to `μ ± kσ` computed once from the original row.
pub fn winsorize_cross_section(p: &Panel, policy: &ZScorePolicy) -> Panel {
    let bounds: Vec<Option<(f64, f64)>> = (0..p.n_dates())
        .map(|t| {
            let (n, mean, sd) = row_moments(p.row(t))?;
            (n >= policy.min_count).then(|| {
                let half = policy.winsor_sigma * sd;
                (mean - half, mean + half)
            })
        })
        .collect();
    p.derive(|t, i| {
        let (lo, hi) = bounds[t]?;
        p.get(t, i).map(|x| x.clamp(lo, hi))
    })
}

/// `(x − μ) / σ` per row; a row with zero spread maps to zeros.
pub fn zscore_cross_section(p: &Panel, _policy: &ZScorePolicy) -> Panel {
    let moments: Vec<Option<(usize, f64, f64)>> = (0..p.n_dates()).map(|t| row_moments(p.row(t))).collect();
    p.derive(|t, i| {
        let (_, mean, sd) = moments[t]?;
        let x = p.get(t, i)?;
        Some(if sd > 0.0 { (x - mean) / sd } else { 0.0 })
    })
}

/// Winsorize then z-score every characteristic.
pub fn standardize(cs: &CharacteristicSet, policy: &ZScorePolicy) -> CharacteristicSet {
    cs.map_panels(|_, p| zscore_cross_section(&winsorize_cross_section(p, policy), policy))
}
