//! Quantile portfolio backtest of expected-return panels.
//!
//! Each month, stocks in the universe are ranked on their expected return for
//! that month and split into `Q` bins whose sizes are symmetric about the
//! middle bin (odd `Q`) or the middle pair (even `Q`). Bin 1 holds the highest
//! expectations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::Weighting;
use crate::panel::{MonthStamp, Panel, Series, StockId};
use crate::universe::UniverseMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSpec {
    pub quantiles: usize,
    pub weighting: Weighting,
}

impl Default for BacktestSpec {
    fn default() -> Self {
        Self {
            quantiles: 5,
            weighting: Weighting::Equal,
        }
    }
}

/// Order in which remainder slots are handed out, as 1-based bins.
///
/// Odd `q`: the middle bin, then pairs moving outward. Even `q`: the middle
/// pair, then pairs moving outward.
fn remainder_order(q: usize) -> Vec<Vec<usize>> {
    let mut order = Vec::new();
    if q % 2 == 1 {
        let m = q / 2 + 1;
        order.push(vec![m]);
        for d in 1..m {
            order.push(vec![m - d, m + d]);
        }
    } else {
        let m = q / 2;
        for d in 0..m {
            order.push(vec![m - d, m + 1 + d]);
        }
    }
    order
}

/// Bin sizes for `n` valid stocks in `q` bins (index 0 is bin 1).
pub fn bin_sizes(n: usize, q: usize) -> Vec<usize> {
    let mut sizes = vec![n / q; q];
    let mut r = n % q;
    let order = remainder_order(q);
    if q % 2 == 1 {
        // an even remainder skips the middle so the profile stays symmetric
        let groups = if r % 2 == 1 { &order[..] } else { &order[1..] };
        for g in groups {
            if r < g.len() {
                break;
            }
            for b in g {
                sizes[b - 1] += 1;
            }
            r -= g.len();
        }
    } else {
        let mut groups = order.iter();
        while r >= 2 {
            for b in groups.next().expect("remainder below q") {
                sizes[b - 1] += 1;
            }
            r -= 2;
        }
        if r == 1 {
            // an odd remainder cannot be placed symmetrically for even q;
            // the slot goes to the inner bin of the next pair
            let next = groups.next().expect("remainder below q");
            sizes[next[0] - 1] += 1;
        }
    }
    sizes
}

/// Assigns each valid value a bin in `1..=q`; missing values stay unassigned.
/// Ties are broken by ticker, ascending.
pub fn symmetric_quantile(values: &[Option<f64>], stocks: &[StockId], q: usize) -> Result<Vec<Option<usize>>> {
    if q < 2 {
        return Err(Error::InvalidArgument("at least two quantiles are required".into()));
    }
    if values.len() != stocks.len() {
        return Err(Error::Dimension("values and stocks differ in length".into()));
    }
    let mut ranked: Vec<(usize, f64)> = values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| stocks[a.0].cmp(&stocks[b.0])));
    let mut out = vec![None; values.len()];
    let mut pos = 0;
    for (b, size) in bin_sizes(ranked.len(), q).into_iter().enumerate() {
        for &(i, _) in &ranked[pos..pos + size] {
            out[i] = Some(b + 1);
        }
        pos += size;
    }
    Ok(out)
}

/// Monthly bin memberships.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileAssignment {
    pub start: MonthStamp,
    pub stocks: Vec<StockId>,
    pub quantiles: usize,
    /// Per date, per stock: bin in `1..=quantiles`.
    pub bins: Vec<Vec<Option<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinStats {
    pub bin: usize,
    /// `12 · mean(log return) · 100`.
    pub ann_return_pct: Option<f64>,
    /// `√12 · sd(log return) · 100`.
    pub ann_vol_pct: Option<f64>,
    pub n_months: usize,
    /// Monthly log returns; missing where the bin was empty.
    pub log_returns: Series,
}

/// Least-squares line through `(bin, statistic)` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: Option<f64>,
}

pub fn line_fit(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = (n > 2).then(|| {
        let ssr: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    });
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuintileStats {
    pub model: String,
    pub bins: Vec<BinStats>,
    pub return_fit: Option<LineFit>,
    pub vol_fit: Option<LineFit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestResult {
    pub stats: QuintileStats,
    pub assignment: QuantileAssignment,
}

fn annualize(series: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = series.len();
    if n == 0 {
        return (None, None);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let vol = (n > 1).then(|| {
        let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        12f64.sqrt() * var.sqrt() * 100.0
    });
    (Some(12.0 * mean * 100.0), vol)
}

/// Forms bins on `expected[t]` within `mask[t]` and records realized bin returns.
///
/// `market_value` supplies cap weights (previous month's value) and is
/// required only for cap weighting.
pub fn run_backtest(
    model: &str,
    expected: &Panel,
    realized: &Panel,
    mask: &UniverseMask,
    market_value: Option<&Panel>,
    spec: &BacktestSpec,
) -> Result<BacktestResult> {
    if !expected.same_axes(realized) || !mask.matches_axes(expected) {
        return Err(Error::Dimension("expected, realized and mask must share axes".into()));
    }
    let weights = match spec.weighting {
        Weighting::Equal => None,
        Weighting::Cap => {
            let mv = market_value
                .ok_or_else(|| Error::InvalidArgument("cap weighting needs market values".into()))?;
            if !mv.same_axes(realized) {
                return Err(Error::Dimension("market value axes differ from returns".into()));
            }
            Some(mv)
        }
    };
    let q = spec.quantiles;
    let (n_dates, n_stocks) = (expected.n_dates(), expected.n_stocks());

    let mut bins = Vec::with_capacity(n_dates);
    let mut series = vec![vec![None; n_dates]; q];
    let mut any_valid = false;
    for t in 0..n_dates {
        let values: Vec<Option<f64>> = (0..n_stocks)
            .map(|i| if mask.is_member(t, i) { expected.get(t, i) } else { None })
            .collect();
        let assigned = symmetric_quantile(&values, expected.stocks(), q)?;
        any_valid |= assigned.iter().any(Option::is_some);
        let mut acc = vec![(0.0, 0.0); q];
        for (i, b) in assigned.iter().enumerate() {
            let (Some(b), Some(r)) = (b, realized.get(t, i)) else {
                continue;
            };
            let w = match weights {
                None => 1.0,
                Some(mv) => match (t > 0).then(|| mv.get(t - 1, i)).flatten() {
                    Some(w) if w > 0.0 => w,
                    _ => continue,
                },
            };
            acc[b - 1].0 += w * r.exp_m1();
            acc[b - 1].1 += w;
        }
        for (b, (sum, wsum)) in acc.into_iter().enumerate() {
            if wsum > 0.0 {
                let simple = sum / wsum;
                if simple > -1.0 {
                    series[b][t] = Some(simple.ln_1p());
                }
            }
        }
        bins.push(assigned);
    }
    if !any_valid {
        return Err(Error::NoValidPredictions(model.to_string()));
    }

    let bin_stats: Vec<BinStats> = series
        .into_iter()
        .enumerate()
        .map(|(b, s)| {
            let present: Vec<f64> = s.iter().flatten().copied().collect();
            let (ann_return_pct, ann_vol_pct) = annualize(&present);
            BinStats {
                bin: b + 1,
                ann_return_pct,
                ann_vol_pct,
                n_months: present.len(),
                log_returns: Series::new(expected.start(), s),
            }
        })
        .collect();
    let points = |f: fn(&BinStats) -> Option<f64>| -> Vec<(f64, f64)> {
        bin_stats.iter().filter_map(|b| Some((b.bin as f64, f(b)?))).collect()
    };
    let return_fit = line_fit(&points(|b| b.ann_return_pct));
    let vol_fit = line_fit(&points(|b| b.ann_vol_pct));

    Ok(BacktestResult {
        stats: QuintileStats {
            model: model.to_string(),
            bins: bin_stats,
            return_fit,
            vol_fit,
        },
        assignment: QuantileAssignment {
            start: expected.start(),
            stocks: expected.stocks().to_vec(),
            quantiles: q,
            bins,
        },
    })
}
