//! Monthly top-N universe by market value and the synthetic cap-weighted index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{MonthStamp, Panel, Series, StockId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    pub top_n: usize,
}

impl Default for UniverseSpec {
    fn default() -> Self {
        Self { top_n: 250 }
    }
}

/// Dates × stocks membership grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UniverseMask {
    start: MonthStamp,
    n_dates: usize,
    stocks: Vec<StockId>,
    members: Vec<bool>,
}

impl UniverseMask {
    /// Every stock is a member on every date.
    pub fn full(axes: &Panel) -> Self {
        Self {
            start: axes.start(),
            n_dates: axes.n_dates(),
            stocks: axes.stocks().to_vec(),
            members: vec![true; axes.n_cells()],
        }
    }

    pub fn is_member(&self, t: usize, i: usize) -> bool {
        self.members[t * self.stocks.len() + i]
    }

    pub fn n_dates(&self) -> usize {
        self.n_dates
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn start(&self) -> MonthStamp {
        self.start
    }

    pub fn stocks(&self) -> &[StockId] {
        &self.stocks
    }

    pub fn count(&self, t: usize) -> usize {
        (0..self.stocks.len()).filter(|&i| self.is_member(t, i)).count()
    }

    pub fn matches_axes(&self, p: &Panel) -> bool {
        self.start == p.start() && self.n_dates == p.n_dates() && self.stocks == p.stocks()
    }

    /// Sets non-member cells of `p` to missing.
    pub fn apply(&self, p: &Panel) -> Panel {
        p.derive(|t, i| if self.is_member(t, i) { p.get(t, i) } else { None })
    }
}

/// Per month, the `top_n` stocks by (lagged) market value; ties go to the
/// lexicographically smaller ticker.
pub fn select_universe(mv: &Panel, spec: &UniverseSpec) -> Result<UniverseMask> {
    if spec.top_n < 2 {
        return Err(Error::InvalidArgument("top_n must be at least 2".into()));
    }
    let n = mv.n_stocks();
    let mut members = vec![false; mv.n_cells()];
    let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(n);
    for t in 0..mv.n_dates() {
        ranked.clear();
        ranked.extend(mv.row(t).iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))));
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| mv.stocks()[a.0].cmp(&mv.stocks()[b.0]))
        });
        for &(i, _) in ranked.iter().take(spec.top_n) {
            members[t * n + i] = true;
        }
    }
    Ok(UniverseMask {
        start: mv.start(),
        n_dates: mv.n_dates(),
        stocks: mv.stocks().to_vec(),
        members,
    })
}

/// Cap-weighted index log returns over universe members.
///
/// Weights are proportional to the previous month's market value; the
/// portfolio simple return is converted back to a log return.
pub fn market_index(returns: &Panel, mv: &Panel, mask: &UniverseMask) -> Result<Series> {
    if !returns.same_axes(mv) || !mask.matches_axes(returns) {
        return Err(Error::Dimension("returns, market value and mask must share axes".into()));
    }
    let values = (0..returns.n_dates())
        .map(|t| {
            if t == 0 {
                return None;
            }
            let mut wsum = 0.0;
            let mut acc = 0.0;
            for i in 0..returns.n_stocks() {
                if !mask.is_member(t, i) {
                    continue;
                }
                if let (Some(r), Some(w)) = (returns.get(t, i), mv.get(t - 1, i)) {
                    if w > 0.0 {
                        wsum += w;
                        acc += w * r.exp_m1();
                    }
                }
            }
            (wsum > 0.0).then(|| (acc / wsum).ln_1p())
        })
        .collect();
    Ok(Series::new(returns.start(), values))
}
