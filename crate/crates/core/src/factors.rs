//! Size × value intersection portfolios and the SMB/HML spreads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::panel::{Characteristic, MonthStamp, Panel, Series};
use crate::universe::{market_index, UniverseMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Cap,
    Equal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SortSpec {
    /// Percentile of market value splitting small from big.
    pub size_breakpoint: f64,
    /// Percentiles of book-to-price splitting low/medium/high.
    pub value_breakpoints: [f64; 2],
    pub weighting: Weighting,
}

impl Default for SortSpec {
    fn default() -> Self {
        Self {
            size_breakpoint: 50.0,
            value_breakpoints: [30.0, 70.0],
            weighting: Weighting::Cap,
        }
    }
}

impl SortSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.value_breakpoints;
        if !(0.0 < lo && lo < hi && hi < 100.0) {
            return Err(Error::InvalidArgument(format!(
                "value breakpoints must satisfy 0 < low < high < 100, got {lo}/{hi}"
            )));
        }
        if !(0.0 < self.size_breakpoint && self.size_breakpoint < 100.0) {
            return Err(Error::InvalidArgument("size breakpoint must lie in (0, 100)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Size {
    Small,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Low,
    Medium,
    High,
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Size and value bucket for each eligible stock of one cross-section.
///
/// Stocks strictly below the size breakpoint are small; strictly below the low
/// value breakpoint low and strictly above the high one high.
pub fn bucket_assignment(
    btp: &[Option<f64>],
    mv: &[Option<f64>],
    eligible: &[bool],
    spec: &SortSpec,
) -> Vec<Option<(Size, Value)>> {
    let pick = |xs: &[Option<f64>]| -> Vec<f64> {
        let mut v: Vec<f64> = xs
            .iter()
            .zip(eligible)
            .filter_map(|(x, e)| if *e { *x } else { None })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let sizes = pick(mv);
    let values = pick(btp);
    if sizes.is_empty() || values.is_empty() {
        return vec![None; btp.len()];
    }
    let size_bp = percentile(&sizes, spec.size_breakpoint);
    let lo_bp = percentile(&values, spec.value_breakpoints[0]);
    let hi_bp = percentile(&values, spec.value_breakpoints[1]);
    (0..btp.len())
        .map(|i| {
            if !eligible[i] {
                return None;
            }
            let (b, m) = (btp[i]?, mv[i]?);
            let size = if m < size_bp { Size::Small } else { Size::Big };
            let value = if b < lo_bp {
                Value::Low
            } else if b > hi_bp {
                Value::High
            } else {
                Value::Medium
            };
            Some((size, value))
        })
        .collect()
}

/// Monthly simple returns of the six intersection portfolios.
#[derive(Clone, Debug, PartialEq)]
pub struct SixPortfolios {
    pub hs: Series,
    pub ms: Series,
    pub ls: Series,
    pub hb: Series,
    pub mb: Series,
    pub lb: Series,
}

impl SixPortfolios {
    fn parts(&self) -> [&Series; 6] {
        [&self.hs, &self.ms, &self.ls, &self.hb, &self.mb, &self.lb]
    }

    fn combine(&self, f: impl Fn([f64; 6]) -> f64) -> Series {
        let parts = self.parts();
        let values = (0..self.hs.len())
            .map(|t| {
                let mut x = [0.0; 6];
                for (k, p) in parts.iter().enumerate() {
                    x[k] = p.get(t)?;
                }
                Some(f(x))
            })
            .collect();
        Series::new(self.hs.start(), values)
    }
}

/// Forms the six size × value portfolios each month from universe members
/// with valid BTP, market value and return.
///
/// `btp` and `mv` are the quarter-lagged levels; cap weights use the previous
/// month's market value.
pub fn six_portfolios(
    returns: &Panel,
    btp: &Panel,
    mv: &Panel,
    mask: &UniverseMask,
    spec: &SortSpec,
) -> Result<SixPortfolios> {
    spec.validate()?;
    if !returns.same_axes(btp) || !returns.same_axes(mv) || !mask.matches_axes(returns) {
        return Err(Error::Dimension("six_portfolios inputs must share axes".into()));
    }
    let n = returns.n_stocks();
    let mut out: [Vec<Option<f64>>; 6] = Default::default();
    for t in 0..returns.n_dates() {
        let eligible: Vec<bool> = (0..n)
            .map(|i| {
                mask.is_member(t, i)
                    && btp.get(t, i).is_some()
                    && mv.get(t, i).is_some()
                    && returns.get(t, i).is_some()
            })
            .collect();
        let buckets = bucket_assignment(btp.row(t), mv.row(t), &eligible, spec);
        // accumulators: (weighted simple return, weight)
        let mut acc = [(0.0f64, 0.0f64); 6];
        for (i, b) in buckets.iter().enumerate() {
            let Some((size, value)) = b else { continue };
            let w = match spec.weighting {
                Weighting::Equal => 1.0,
                Weighting::Cap => match (t > 0).then(|| mv.get(t - 1, i)).flatten() {
                    Some(w) if w > 0.0 => w,
                    _ => continue,
                },
            };
            let slot = match (value, size) {
                (Value::High, Size::Small) => 0,
                (Value::Medium, Size::Small) => 1,
                (Value::Low, Size::Small) => 2,
                (Value::High, Size::Big) => 3,
                (Value::Medium, Size::Big) => 4,
                (Value::Low, Size::Big) => 5,
            };
            let r = returns.get(t, i).expect("eligible implies a return");
            acc[slot].0 += w * r.exp_m1();
            acc[slot].1 += w;
        }
        for (k, (sum, w)) in acc.iter().enumerate() {
            out[k].push((*w > 0.0).then(|| sum / w));
        }
    }
    let [hs, ms, ls, hb, mb, lb] = out.map(|v| Series::new(returns.start(), v));
    Ok(SixPortfolios { hs, ms, ls, hb, mb, lb })
}

/// Small minus big: `((HS+MS+LS) − (HB+MB+LB)) / 3`.
pub fn smb(six: &SixPortfolios) -> Series {
    six.combine(|[hs, ms, ls, hb, mb, lb]| ((hs + ms + ls) - (hb + mb + lb)) / 3.0)
}

/// High minus low: `((HB+HS) − (LB+LS)) / 2`.
pub fn hml(six: &SixPortfolios) -> Series {
    six.combine(|[hs, _ms, ls, hb, _mb, lb]| ((hb + hs) - (lb + ls)) / 2.0)
}

/// Monthly factor realizations.
///
/// `mkt` and `rfr` are log returns; `smb` and `hml` are simple spread returns.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSeries {
    pub mkt: Series,
    pub rfr: Series,
    pub smb: Series,
    pub hml: Series,
}

/// Cumulative factor levels starting from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeFactors {
    pub mkt: Series,
    pub smb: Series,
    pub hml: Series,
}

impl FactorSeries {
    pub fn new(mkt: Series, rfr: Series, smb: Series, hml: Series) -> Result<Self> {
        let (start, len) = (mkt.start(), mkt.len());
        for s in [&rfr, &smb, &hml] {
            if s.start() != start || s.len() != len {
                return Err(Error::Dimension("factor series must share a calendar".into()));
            }
        }
        Ok(Self { mkt, rfr, smb, hml })
    }

    pub fn start(&self) -> MonthStamp {
        self.mkt.start()
    }

    pub fn len(&self) -> usize {
        self.mkt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mkt.is_empty()
    }

    /// Market log return in excess of the cash rate.
    pub fn mkt_excess(&self, t: usize) -> Option<f64> {
        Some(self.mkt.get(t)? - self.rfr.get(t)?)
    }

    /// Compounded levels; a spread is treated as a self-financing overlay, so
    /// its level is the product of `(1 + spread)`. Missing months stay flat.
    pub fn cumulative(&self) -> CumulativeFactors {
        let compound = |s: &Series, gross: &dyn Fn(f64) -> f64| {
            let mut level = 1.0;
            let values = s
                .values()
                .iter()
                .map(|v| {
                    if let Some(x) = v {
                        level *= gross(*x);
                    }
                    Some(level)
                })
                .collect();
            Series::new(s.start(), values)
        };
        CumulativeFactors {
            mkt: compound(&self.mkt, &|r| r.exp()),
            smb: compound(&self.smb, &|r| 1.0 + r),
            hml: compound(&self.hml, &|r| 1.0 + r),
        }
    }
}

/// Builds market, cash, SMB and HML series for a dataset and universe.
pub fn build_factor_series(dataset: &Dataset, mask: &UniverseMask, spec: &SortSpec) -> Result<FactorSeries> {
    let btp = dataset.characteristics.require(Characteristic::Btp)?;
    let six = six_portfolios(&dataset.returns, btp, &dataset.market_value, mask, spec)?;
    let mkt = market_index(&dataset.returns, &dataset.market_value, mask)?;
    FactorSeries::new(mkt, dataset.cash.returns.clone(), smb(&six), hml(&six))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::stock_ids;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(tickers: &[&str], rows: Vec<Vec<Option<f64>>>) -> Panel {
        Panel::new(MonthStamp::from_index(0), stock_ids(tickers).unwrap(), rows).unwrap()
    }

    fn six_const(vals: [f64; 6]) -> SixPortfolios {
        let s = |v: f64| Series::new(MonthStamp::from_index(0), vec![Some(v)]);
        SixPortfolios {
            hs: s(vals[0]),
            ms: s(vals[1]),
            ls: s(vals[2]),
            hb: s(vals[3]),
            mb: s(vals[4]),
            lb: s(vals[5]),
        }
    }

    #[test]
    fn smb_hml_scalars() {
        assert_abs_diff_eq!(smb(&six_const([0.05; 6])).get(0).unwrap(), 0.0);
        assert_abs_diff_eq!(hml(&six_const([0.05; 6])).get(0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            smb(&six_const([0.02, 0.02, 0.02, 0.01, 0.01, 0.01])).get(0).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            hml(&six_const([0.03, 0.0, 0.01, 0.03, 0.0, 0.01])).get(0).unwrap(),
            0.02,
            epsilon = 1e-15
        );
        // swapping small and big flips the sign
        let a = smb(&six_const([0.04, 0.01, 0.02, 0.00, 0.03, -0.01])).get(0).unwrap();
        let b = smb(&six_const([0.00, 0.03, -0.01, 0.04, 0.01, 0.02])).get(0).unwrap();
        assert_abs_diff_eq!(a, -b, epsilon = 1e-15);
        // medium buckets do not enter HML
        let c = hml(&six_const([0.04, 0.5, 0.02, 0.00, -0.7, -0.01])).get(0).unwrap();
        let d = hml(&six_const([0.04, 0.0, 0.02, 0.00, 0.0, -0.01])).get(0).unwrap();
        assert_eq!(c, d);
        let mut missing = six_const([0.0; 6]);
        missing.mb = Series::new(MonthStamp::from_index(0), vec![None]);
        assert_eq!(smb(&missing).get(0), None);
        assert_eq!(hml(&missing).get(0), None);
    }

    #[test]
    fn six_distinct_buckets() {
        // small: A,B,C; big: D,E,F. BTP order: L={A,D}, M={B,E}, H={C,F}
        let tickers = ["A", "B", "C", "D", "E", "F"];
        let btp = panel(&tickers, vec![vec![Some(0.1), Some(0.5), Some(0.9), Some(0.2), Some(0.6), Some(1.0)]; 2]);
        let mv = panel(&tickers, vec![vec![Some(1.0), Some(2.0), Some(3.0), Some(10.0), Some(20.0), Some(30.0)]; 2]);
        let rets = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06];
        let r = panel(&tickers, vec![rets.iter().map(|x| Some(*x)).collect(); 2]);
        for weighting in [Weighting::Cap, Weighting::Equal] {
            let spec = SortSpec { weighting, ..SortSpec::default() };
            let six = six_portfolios(&r, &btp, &mv, &UniverseMask::full(&r), &spec).unwrap();
            let g = |x: f64| x.exp_m1();
            assert_abs_diff_eq!(six.ls.get(1).unwrap(), g(0.01), epsilon = 1e-15);
            assert_abs_diff_eq!(six.ms.get(1).unwrap(), g(0.02), epsilon = 1e-15);
            assert_abs_diff_eq!(six.hs.get(1).unwrap(), g(0.03), epsilon = 1e-15);
            assert_abs_diff_eq!(six.lb.get(1).unwrap(), g(0.04), epsilon = 1e-15);
            assert_abs_diff_eq!(six.mb.get(1).unwrap(), g(0.05), epsilon = 1e-15);
            assert_abs_diff_eq!(six.hb.get(1).unwrap(), g(0.06), epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_btp_lands_in_medium() {
        let tickers = ["A", "B", "C", "D"];
        let btp = panel(&tickers, vec![vec![Some(0.5); 4]; 2]);
        let mv = panel(&tickers, vec![vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]; 2]);
        let r = panel(&tickers, vec![vec![Some(0.01); 4]; 2]);
        let six = six_portfolios(&r, &btp, &mv, &UniverseMask::full(&r), &SortSpec::default()).unwrap();
        assert!(six.ms.get(1).is_some() && six.mb.get(1).is_some());
        for s in [&six.hs, &six.ls, &six.hb, &six.lb] {
            assert_eq!(s.get(1), None);
        }
    }

    /// Independent double sort: classify by counting how many eligible values
    /// lie strictly below / above each stock.
    fn oracle_buckets(btp: &[f64], mv: &[f64]) -> Vec<(Size, Value)> {
        let n = btp.len();
        let bp = |xs: &[f64], p: f64| {
            let mut s = xs.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = p * (n as f64 - 1.0);
            let k = pos as usize;
            let frac = pos - k as f64;
            if k + 1 < n {
                s[k] * (1.0 - frac) + s[k + 1] * frac
            } else {
                s[k]
            }
        };
        let sb = bp(mv, 0.5);
        let lo = bp(btp, 0.3);
        let hi = bp(btp, 0.7);
        (0..n)
            .map(|i| {
                let size = if mv[i] < sb { Size::Small } else { Size::Big };
                let value = if btp[i] < lo {
                    Value::Low
                } else if btp[i] > hi {
                    Value::High
                } else {
                    Value::Medium
                };
                (size, value)
            })
            .collect()
    }

    #[test]
    fn double_sort_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..20 {
            let btp: Vec<f64> = (0..60).map(|_| rng.random::<f64>() * 2.0).collect();
            let mv: Vec<f64> = (0..60).map(|_| (rng.random::<f64>() * 8.0).exp()).collect();
            let got = bucket_assignment(
                &btp.iter().map(|x| Some(*x)).collect::<Vec<_>>(),
                &mv.iter().map(|x| Some(*x)).collect::<Vec<_>>(),
                &[true; 60],
                &SortSpec::default(),
            );
            let expected = oracle_buckets(&btp, &mv);
            for (g, e) in got.iter().zip(&expected) {
                assert_eq!(g.unwrap(), *e);
            }
            let small = expected.iter().filter(|(s, _)| *s == Size::Small).count();
            assert_eq!(small, 30);
            let low = expected.iter().filter(|(_, v)| *v == Value::Low).count();
            assert_eq!(low, 18);
        }
    }

    #[test]
    fn buckets_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let btp: Vec<Option<f64>> = (0..50).map(|_| Some(rng.random::<f64>())).collect();
        let mv: Vec<Option<f64>> = (0..50).map(|_| Some(rng.random::<f64>() * 100.0 + 1.0)).collect();
        let eligible: Vec<bool> = (0..50).map(|i| i % 9 != 0).collect();
        let spec = SortSpec::default();
        let a = bucket_assignment(&btp, &mv, &eligible, &spec);
        let btp2: Vec<Option<f64>> = btp.iter().map(|x| x.map(|v| (3.0 * v).exp() - 7.0)).collect();
        let mv2: Vec<Option<f64>> = mv.iter().map(|x| x.map(f64::ln)).collect();
        assert_eq!(a, bucket_assignment(&btp2, &mv2, &eligible, &spec));
    }

    #[test]
    fn spreads_invariant_to_common_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tickers: Vec<String> = (0..40).map(|i| format!("S{i}")).collect();
        let ids = stock_ids(&tickers).unwrap();
        let mk = |rng: &mut ChaCha8Rng, lo: f64, w: f64| {
            Panel::from_fn(MonthStamp::from_index(0), 6, ids.clone(), |_, _| Some(lo + w * rng.random::<f64>())).unwrap()
        };
        let r = mk(&mut rng, -0.1, 0.2);
        let btp = mk(&mut rng, 0.1, 1.0);
        let mv = mk(&mut rng, 1.0, 100.0);
        let c = 0.013;
        let shifted = r.map(|x| (x.exp() + c).ln());
        let mask = UniverseMask::full(&r);
        let spec = SortSpec::default();
        let a = six_portfolios(&r, &btp, &mv, &mask, &spec).unwrap();
        let b = six_portfolios(&shifted, &btp, &mv, &mask, &spec).unwrap();
        for t in 1..6 {
            assert_abs_diff_eq!(smb(&a).get(t).unwrap(), smb(&b).get(t).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(hml(&a).get(t).unwrap(), hml(&b).get(t).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_levels_compound() {
        let start = MonthStamp::from_index(0);
        let smb_vals = vec![Some(0.01), None, Some(-0.02), Some(0.03)];
        let f = FactorSeries::new(
            Series::new(start, vec![Some(0.1), Some(-0.05), None, Some(0.02)]),
            Series::new(start, vec![Some(0.0); 4]),
            Series::new(start, smb_vals.clone()),
            Series::new(start, vec![Some(0.0); 4]),
        )
        .unwrap();
        let cum = f.cumulative();
        let expected: f64 = smb_vals.iter().flatten().map(|x| 1.0 + x).product();
        assert_abs_diff_eq!(cum.smb.get(3).unwrap(), expected, epsilon = 1e-15);
        assert_eq!(cum.smb.get(1), cum.smb.get(0));
        assert_abs_diff_eq!(cum.mkt.get(3).unwrap(), (0.1f64 - 0.05 + 0.02).exp(), epsilon = 1e-14);
        assert!(FactorSeries::new(
            Series::new(start, vec![None; 3]),
            Series::new(start, vec![None; 4]),
            Series::new(start, vec![None; 4]),
            Series::new(start, vec![None; 4]),
        )
        .is_err());
    }

    #[test]
    fn sort_spec_validation() {
        assert!(SortSpec::default().validate().is_ok());
        let bad = SortSpec { value_breakpoints: [70.0, 30.0], ..SortSpec::default() };
        assert!(bad.validate().is_err());
    }
}
