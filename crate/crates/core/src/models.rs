//! Predictive APT and characteristic-based models.
//!
//! APT: per stock, a trailing-window time-series regression of (excess)
//! returns on factor realizations; the expectation for month `t` combines the
//! latest loadings with factor values at `t−1`.
//!
//! CBM: per month, a cross-sectional regression of returns on the previous
//! month's standardized characteristics; payoffs are smoothed by a trailing
//! mean and combined with characteristics at `t−1`.
//!
//! Parameters are kept in decimal return units; reports convert to percent.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorSeries;
use crate::panel::{Characteristic, CharacteristicSet, MonthStamp, Panel, Series};
use crate::regress::{ols, rolling_ols, OlsOptions, RollingOptions};

pub const DEFAULT_APT_WINDOW: usize = 72;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 12;
pub const DEFAULT_MKT_LOADING_WINDOW: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AptFactor {
    /// Market log return minus the cash rate.
    MktExcess,
    Smb,
    Hml,
}

impl AptFactor {
    pub fn key(self) -> &'static str {
        match self {
            AptFactor::MktExcess => "mkt_excess",
            AptFactor::Smb => "smb",
            AptFactor::Hml => "hml",
        }
    }

    /// Realization at month `t`.
    pub fn value(self, factors: &FactorSeries, t: usize) -> Option<f64> {
        match self {
            AptFactor::MktExcess => factors.mkt_excess(t),
            AptFactor::Smb => factors.smb.get(t),
            AptFactor::Hml => factors.hml.get(t),
        }
    }
}

impl fmt::Display for AptFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AptFactor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mkt_excess" | "mkt" => Ok(AptFactor::MktExcess),
            "smb" => Ok(AptFactor::Smb),
            "hml" => Ok(AptFactor::Hml),
            _ => Err(Error::UnknownKey(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AptSpec {
    pub name: String,
    pub factors: Vec<AptFactor>,
    pub window: usize,
    /// Regress returns in excess of the cash rate and add it back on prediction.
    pub excess_returns: bool,
}

impl AptSpec {
    pub fn capm() -> Self {
        Self {
            name: "CAPM".into(),
            factors: vec![AptFactor::MktExcess],
            window: DEFAULT_APT_WINDOW,
            excess_returns: true,
        }
    }

    pub fn ff3() -> Self {
        Self {
            name: "FF3".into(),
            factors: vec![AptFactor::MktExcess, AptFactor::Smb, AptFactor::Hml],
            window: DEFAULT_APT_WINDOW,
            excess_returns: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::InvalidArgument(format!("APT model `{}` has no factors", self.name)));
        }
        let mut seen = self.factors.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.factors.len() {
            return Err(Error::InvalidArgument(format!("APT model `{}` repeats a factor", self.name)));
        }
        Ok(())
    }
}

/// Trailing-window APT estimates; cells are present only where the fit is ok.
#[derive(Clone, Debug, PartialEq)]
pub struct RollingFit {
    pub factors: Vec<AptFactor>,
    pub excess_returns: bool,
    pub alpha: Panel,
    /// One panel per factor, in `factors` order.
    pub betas: Vec<Panel>,
}

fn check_calendar(p: &Panel, factors: &FactorSeries) -> Result<()> {
    if p.start() != factors.start() || p.n_dates() != factors.len() {
        return Err(Error::Dimension("panel and factor series calendars differ".into()));
    }
    Ok(())
}

/// Rolling regression of each stock's (excess) returns on the chosen factors.
pub fn fit_apt(returns: &Panel, factors: &FactorSeries, spec: &AptSpec) -> Result<RollingFit> {
    spec.validate()?;
    check_calendar(returns, factors)?;
    let n_dates = returns.n_dates();
    let columns: Vec<Vec<Option<f64>>> = spec
        .factors
        .iter()
        .map(|f| (0..n_dates).map(|t| f.value(factors, t)).collect())
        .collect();
    let cols: Vec<&[Option<f64>]> = columns.iter().map(|c| c.as_slice()).collect();
    let opts = RollingOptions::new(spec.window);

    let per_stock: Vec<Vec<Option<Vec<f64>>>> = (0..returns.n_stocks())
        .into_par_iter()
        .map(|i| {
            let y: Vec<Option<f64>> = (0..n_dates)
                .map(|t| {
                    let r = returns.get(t, i)?;
                    if spec.excess_returns {
                        Some(r - factors.rfr.get(t)?)
                    } else {
                        Some(r)
                    }
                })
                .collect();
            let fits = rolling_ols(&y, &cols, &opts)?;
            Ok(fits.into_iter().map(|f| f.ok.then_some(f.coefficients)).collect())
        })
        .collect::<Result<_>>()?;

    let coef = |k: usize| returns.derive(|t, i| per_stock[i][t].as_ref().map(|c| c[k]));
    Ok(RollingFit {
        factors: spec.factors.clone(),
        excess_returns: spec.excess_returns,
        alpha: coef(0),
        betas: (1..=spec.factors.len()).map(coef).collect(),
    })
}

/// `E_{t−1}[R_{i,t}] = α̂ + Σ β̂_j f_{j,t−1} (+ rfr_{t−1})` for every stock.
pub fn predict_apt(fit: &RollingFit, factors: &FactorSeries, t: usize) -> Vec<Option<f64>> {
    let n = fit.alpha.n_stocks();
    if t == 0 || t >= fit.alpha.n_dates() {
        return vec![None; n];
    }
    let lagged: Option<Vec<f64>> = fit.factors.iter().map(|f| f.value(factors, t - 1)).collect();
    let cash = if fit.excess_returns { factors.rfr.get(t - 1) } else { Some(0.0) };
    let (Some(f), Some(cash)) = (lagged, cash) else {
        return vec![None; n];
    };
    (0..n)
        .map(|i| {
            let mut e = fit.alpha.get(t, i)?;
            for (beta, fj) in fit.betas.iter().zip(&f) {
                e += beta.get(t, i)? * fj;
            }
            Some(e + cash)
        })
        .collect()
}

/// Expected-return panel for every date.
pub fn apt_expected_returns(fit: &RollingFit, factors: &FactorSeries) -> Result<Panel> {
    check_calendar(&fit.alpha, factors)?;
    let rows: Vec<Vec<Option<f64>>> = (0..fit.alpha.n_dates()).map(|t| predict_apt(fit, factors, t)).collect();
    Panel::new(fit.alpha.start(), fit.alpha.stocks().to_vec(), rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbmSpec {
    pub name: String,
    pub characteristics: Vec<Characteristic>,
    pub smoothing_window: usize,
}

impl CbmSpec {
    pub fn new(name: impl Into<String>, characteristics: &[Characteristic]) -> Self {
        Self {
            name: name.into(),
            characteristics: characteristics.to_vec(),
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.characteristics.is_empty() {
            return Err(Error::InvalidArgument(format!("CBM model `{}` has no characteristics", self.name)));
        }
        let mut seen = self.characteristics.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.characteristics.len() {
            return Err(Error::InvalidArgument(format!("CBM model `{}` repeats a characteristic", self.name)));
        }
        if self.smoothing_window == 0 {
            return Err(Error::InvalidArgument("smoothing window must be at least 1".into()));
        }
        Ok(())
    }
}

/// The fourteen characteristic combinations of the median-payoff table, in row order.
pub fn table1_models() -> Vec<CbmSpec> {
    use Characteristic::*;
    let rows: [&[Characteristic]; 14] = [
        &[Btp, Mv],
        &[Btp, Mv, MktLoading],
        &[Btp, Mv, Moml],
        &[Btp, Mv, Moml, Moms],
        &[Btp, Mv, MktLoading, Moml],
        &[Btp, Mv, MktLoading, Moml, Moms],
        &[Btp, Mv, MktLoading, Moml, Moms, Vol],
        &[Btp, Mv, MktLoading, Vol],
        &[Btp, Mv, MktLoading, Moml, Moms, Ey],
        &[Btp, Mv, Ey],
        &[Btp, Mv, Moml, Moms, Ey, Dy],
        &[Btp, Mv, Dy],
        &[Btp, Mv, MktLoading, Moml, Moms, Dy],
        &[Btp, Mv, MktLoading, Moml, Moms, Ey, Dy],
    ];
    rows.iter()
        .enumerate()
        .map(|(k, chars)| CbmSpec::new(format!("CBM{}", k + 1), chars))
        .collect()
}

/// One month's cross-sectional estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct MonthFit {
    pub alpha: f64,
    /// In `CrossSectionFit::characteristics` order.
    pub deltas: Vec<f64>,
    pub n_used: usize,
}

/// Per-month CBM estimates; `None` where the regression was not ok.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSectionFit {
    pub start: MonthStamp,
    pub characteristics: Vec<Characteristic>,
    pub months: Vec<Option<MonthFit>>,
}

impl CrossSectionFit {
    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn alpha_series(&self) -> Series {
        Series::new(self.start, self.months.iter().map(|m| m.as_ref().map(|m| m.alpha)).collect())
    }

    pub fn delta_series(&self, k: usize) -> Series {
        Series::new(self.start, self.months.iter().map(|m| m.as_ref().map(|m| m.deltas[k])).collect())
    }
}

fn selected<'a>(cs: &'a CharacteristicSet, keys: &[Characteristic]) -> Result<Vec<&'a Panel>> {
    keys.iter().map(|k| cs.require(*k)).collect()
}

/// Month-by-month regression of `R_{·,t}` on `θ_{·,k,t−1}` with an intercept.
pub fn fit_cbm(returns: &Panel, cs: &CharacteristicSet, spec: &CbmSpec) -> Result<CrossSectionFit> {
    spec.validate()?;
    let panels = selected(cs, &spec.characteristics)?;
    if panels.iter().any(|p| !p.same_axes(returns)) {
        return Err(Error::Dimension("characteristics and returns must share axes".into()));
    }
    let opts = OlsOptions::default();
    let months = (0..returns.n_dates())
        .into_par_iter()
        .map(|t| {
            if t == 0 {
                return Ok(None);
            }
            let cols: Vec<&[Option<f64>]> = panels.iter().map(|p| p.row(t - 1)).collect();
            let fit = ols(returns.row(t), &cols, &opts)?;
            Ok(fit.ok.then(|| MonthFit {
                alpha: fit.coefficients[0],
                deltas: fit.coefficients[1..].to_vec(),
                n_used: fit.n_used,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossSectionFit {
        start: returns.start(),
        characteristics: spec.characteristics.clone(),
        months,
    })
}

/// Smoothed payoff expectations; entry `t` is the forecast for month `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedPayoffs {
    pub start: MonthStamp,
    pub characteristics: Vec<Characteristic>,
    /// `(E[α], E[δ])` per date.
    pub params: Vec<Option<(f64, Vec<f64>)>>,
}

/// Trailing mean of ok estimates over months `t−window ..= t−1`; at least half
/// the window must be ok.
pub fn smooth_expectation(fit: &CrossSectionFit, window: usize) -> Result<ExpectedPayoffs> {
    if window == 0 {
        return Err(Error::InvalidArgument("smoothing window must be at least 1".into()));
    }
    let k = fit.characteristics.len();
    let params = (0..fit.len())
        .map(|t| {
            let lo = t.saturating_sub(window);
            let valid: Vec<&MonthFit> = fit.months[lo..t].iter().flatten().collect();
            if valid.is_empty() || 2 * valid.len() < window {
                return None;
            }
            let n = valid.len() as f64;
            let alpha = valid.iter().map(|m| m.alpha).sum::<f64>() / n;
            let deltas = (0..k).map(|j| valid.iter().map(|m| m.deltas[j]).sum::<f64>() / n).collect();
            Some((alpha, deltas))
        })
        .collect();
    Ok(ExpectedPayoffs {
        start: fit.start,
        characteristics: fit.characteristics.clone(),
        params,
    })
}

/// `E_{t−1}[R_{i,t}] = E[α] + Σ_k E[δ_k] θ_{i,k,t−1}` for every stock.
pub fn predict_cbm(expected: &ExpectedPayoffs, cs: &CharacteristicSet, t: usize) -> Result<Vec<Option<f64>>> {
    let panels = selected(cs, &expected.characteristics)?;
    let n = panels.first().map_or(0, |p| p.n_stocks());
    let params = if t == 0 { None } else { expected.params.get(t).and_then(|p| p.as_ref()) };
    let Some((alpha, deltas)) = params else {
        return Ok(vec![None; n]);
    };
    Ok((0..n)
        .map(|i| {
            let mut e = *alpha;
            for (p, d) in panels.iter().zip(deltas) {
                e += d * p.get(t - 1, i)?;
            }
            Some(e)
        })
        .collect())
}

/// Expected-return panel for every date, on the axes of `cs`.
pub fn cbm_expected_returns(expected: &ExpectedPayoffs, cs: &CharacteristicSet) -> Result<Panel> {
    let axes = selected(cs, &expected.characteristics)?[0];
    let rows = (0..axes.n_dates())
        .map(|t| predict_cbm(expected, cs, t))
        .collect::<Result<Vec<_>>>()?;
    Panel::new(axes.start(), axes.stocks().to_vec(), rows)
}

/// Trailing CAPM beta per stock, estimated through `t−1`, usable as a characteristic.
pub fn mkt_loading(returns: &Panel, factors: &FactorSeries, window: usize) -> Result<Panel> {
    let spec = AptSpec {
        name: "mkt_loading".into(),
        factors: vec![AptFactor::MktExcess],
        window,
        excess_returns: true,
    };
    Ok(fit_apt(returns, factors, &spec)?.betas.remove(0))
}

/// Median intercept and payoffs over ok months, in percent per month.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayoffSummary {
    pub model: String,
    pub alpha: f64,
    pub deltas: BTreeMap<Characteristic, f64>,
    pub n_months: usize,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

pub fn median_payoffs(model: &str, fit: &CrossSectionFit) -> Option<PayoffSummary> {
    let ok: Vec<&MonthFit> = fit.months.iter().flatten().collect();
    let mut alphas: Vec<f64> = ok.iter().map(|m| m.alpha).collect();
    let alpha = median(&mut alphas)? * 100.0;
    let deltas = fit
        .characteristics
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut v: Vec<f64> = ok.iter().map(|m| m.deltas[k]).collect();
            (*c, median(&mut v).unwrap_or(f64::NAN) * 100.0)
        })
        .collect();
    Some(PayoffSummary {
        model: model.to_string(),
        alpha,
        deltas,
        n_months: ok.len(),
    })
}

/// Fits every spec and summarizes median payoffs. Models with no ok month are
/// reported with `None`.
pub fn table1_suite(
    returns: &Panel,
    cs: &CharacteristicSet,
    specs: &[CbmSpec],
) -> Result<Vec<(CrossSectionFit, Option<PayoffSummary>)>> {
    specs
        .iter()
        .map(|spec| {
            let fit = fit_cbm(returns, cs, spec)?;
            let summary = median_payoffs(&spec.name, &fit);
            Ok((fit, summary))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::stock_ids;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn start() -> MonthStamp {
        MonthStamp::from_index(60)
    }

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    }

    fn series(values: Vec<f64>) -> Series {
        Series::new(start(), values.into_iter().map(Some).collect())
    }

    fn random_factors(rng: &mut ChaCha8Rng, n: usize) -> FactorSeries {
        let mut draw = |mu: f64, sd: f64| series((0..n).map(|_| mu + sd * normal(rng)).collect());
        let rfr = draw(0.006, 0.0005);
        let mkt = draw(0.01, 0.05);
        let smb = draw(0.0, 0.04);
        let hml = draw(0.0, 0.04);
        FactorSeries::new(mkt, rfr, smb, hml).unwrap()
    }

    fn tickers(n: usize) -> Vec<crate::panel::StockId> {
        stock_ids(&(0..n).map(|i| format!("S{i:03}")).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn apt_recovers_planted_betas() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 120;
        let f = random_factors(&mut rng, n);
        let returns = Panel::from_fn(start(), n, tickers(1), |t, _| {
            Some(f.rfr.get(t).unwrap() + 1.0 * f.mkt_excess(t).unwrap() + 0.5 * f.hml.get(t).unwrap()
                - 0.3 * f.smb.get(t).unwrap()
                + 0.01 * normal(&mut rng))
        })
        .unwrap();
        let fit = fit_apt(&returns, &f, &AptSpec::ff3()).unwrap();
        // sampling error of each beta is about 0.01 / (σ_f √72) ≈ 0.03
        let planted = [1.0, -0.3, 0.5];
        for (k, b) in planted.iter().enumerate() {
            let mut est: Vec<f64> = (72..n).map(|t| fit.betas[k].get(t, 0).unwrap()).collect();
            assert_abs_diff_eq!(median(&mut est).unwrap(), *b, epsilon = 0.05);
            assert!(est.iter().all(|e| (e - b).abs() < 0.12), "{est:?}");
        }
        assert_eq!(fit.alpha.get(53, 0), None);
        assert!(fit.alpha.get(54, 0).is_some());
    }

    #[test]
    fn riskless_stock_and_market_stock() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 90;
        let f = random_factors(&mut rng, n);
        let returns = Panel::from_fn(start(), n, tickers(2), |t, i| {
            Some(if i == 0 { f.rfr.get(t).unwrap() } else { f.mkt.get(t).unwrap() })
        })
        .unwrap();
        let fit = fit_apt(&returns, &f, &AptSpec::capm()).unwrap();
        assert_abs_diff_eq!(fit.alpha.get(80, 0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.betas[0].get(80, 0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.betas[0].get(80, 1).unwrap(), 1.0, epsilon = 1e-12);
    }

    fn one_factor_fit(alpha: f64, beta: f64, excess: bool) -> RollingFit {
        let p = |v: f64| Panel::from_fn(start(), 3, tickers(1), |_, _| Some(v)).unwrap();
        RollingFit {
            factors: vec![AptFactor::MktExcess],
            excess_returns: excess,
            alpha: p(alpha),
            betas: vec![p(beta)],
        }
    }

    #[test]
    fn predict_apt_scalars() {
        let zero = || series(vec![0.0; 3]);
        let f = FactorSeries::new(series(vec![0.02; 3]), zero(), zero(), zero()).unwrap();
        assert_abs_diff_eq!(predict_apt(&one_factor_fit(0.0, 1.0, true), &f, 1)[0].unwrap(), 0.02);
        let g = FactorSeries::new(series(vec![0.004; 3]), series(vec![0.004; 3]), zero(), zero()).unwrap();
        assert_abs_diff_eq!(predict_apt(&one_factor_fit(0.003, 1.7, true), &g, 2)[0].unwrap(), 0.007, epsilon = 1e-15);
        assert_eq!(predict_apt(&one_factor_fit(0.0, 1.0, true), &f, 0)[0], None);
    }

    #[test]
    fn predict_apt_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_factors(&mut rng, 4);
        let ids = tickers(6);
        let mut p = || Panel::from_fn(start(), 4, ids.clone(), |_, _| Some(normal(&mut rng))).unwrap();
        let fit = RollingFit {
            factors: vec![AptFactor::MktExcess, AptFactor::Smb, AptFactor::Hml],
            excess_returns: true,
            alpha: p(),
            betas: vec![p(), p(), p()],
        };
        let e = predict_apt(&fit, &f, 3);
        for i in 0..6 {
            let fv = [f.mkt.get(2).unwrap() - f.rfr.get(2).unwrap(), f.smb.get(2).unwrap(), f.hml.get(2).unwrap()];
            let mut want = fit.alpha.get(3, i).unwrap() + f.rfr.get(2).unwrap();
            for j in 0..3 {
                want += fit.betas[j].get(3, i).unwrap() * fv[j];
            }
            assert_abs_diff_eq!(e[i].unwrap(), want, epsilon = 1e-15);
        }
    }

    fn planted_cross_section(noise: f64, seed: u64) -> (Panel, CharacteristicSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (60, 40);
        let ids = tickers(m);
        let btp = Panel::from_fn(start(), n, ids.clone(), |_, _| Some(normal(&mut rng))).unwrap();
        let mv = Panel::from_fn(start(), n, ids.clone(), |_, _| Some(normal(&mut rng))).unwrap();
        let returns = Panel::from_fn(start(), n, ids, |t, i| {
            if t == 0 {
                return None;
            }
            Some(0.01 + 0.004 * btp.get(t - 1, i)? - 0.0015 * mv.get(t - 1, i)? + noise * normal(&mut rng))
        })
        .unwrap();
        let mut cs = CharacteristicSet::new();
        cs.insert(Characteristic::Btp, btp).unwrap();
        cs.insert(Characteristic::Mv, mv).unwrap();
        (returns, cs)
    }

    #[test]
    fn cbm_noiseless_exact() {
        let (returns, cs) = planted_cross_section(0.0, 1);
        let fit = fit_cbm(&returns, &cs, &table1_models()[0]).unwrap();
        assert!(fit.months[0].is_none());
        for m in fit.months.iter().skip(1) {
            let m = m.as_ref().unwrap();
            assert_abs_diff_eq!(m.alpha, 0.01, epsilon = 1e-8);
            assert_abs_diff_eq!(m.deltas[0], 0.004, epsilon = 1e-8);
            assert_abs_diff_eq!(m.deltas[1], -0.0015, epsilon = 1e-8);
            assert_eq!(m.n_used, 40);
        }
        let summary = median_payoffs("CBM1", &fit).unwrap();
        assert_abs_diff_eq!(summary.deltas[&Characteristic::Btp], 0.4, epsilon = 1e-6);
        assert_abs_diff_eq!(summary.alpha, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cbm_missing_characteristic_errors() {
        let (returns, cs) = planted_cross_section(0.0, 1);
        assert!(fit_cbm(&returns, &cs, &table1_models()[9]).is_err());
    }

    fn fit_from(values: &[Option<f64>]) -> CrossSectionFit {
        CrossSectionFit {
            start: start(),
            characteristics: vec![Characteristic::Btp],
            months: values
                .iter()
                .map(|v| {
                    v.map(|d| MonthFit {
                        alpha: 2.0 * d,
                        deltas: vec![d],
                        n_used: 10,
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn smoothing_constant_and_unit_window() {
        let fit = fit_from(&[Some(0.3); 20]);
        let e = smooth_expectation(&fit, 12).unwrap();
        assert_eq!(e.params[5], None);
        assert_abs_diff_eq!(e.params[6].as_ref().unwrap().1[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(e.params[19].as_ref().unwrap().1[0], 0.3, epsilon = 1e-15);
        let trend: Vec<Option<f64>> = (0..20).map(|k| Some(k as f64)).collect();
        let e1 = smooth_expectation(&fit_from(&trend), 1).unwrap();
        assert_eq!(e1.params[0], None);
        for t in 1..20 {
            assert_eq!(e1.params[t].as_ref().unwrap().1[0], (t - 1) as f64);
        }
    }

    #[test]
    fn smoothing_trend_lags_by_half_window() {
        let trend: Vec<Option<f64>> = (0..40).map(|k| Some(0.5 * k as f64)).collect();
        let e = smooth_expectation(&fit_from(&trend), 12).unwrap();
        for t in 12..40 {
            let want = (t - 12..t).map(|s| 0.5 * s as f64).sum::<f64>() / 12.0;
            let got = e.params[t].as_ref().unwrap().1[0];
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            assert_abs_diff_eq!(got, 0.5 * (t as f64 - 1.0 - 5.5), epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_requires_half_window() {
        let mut v: Vec<Option<f64>> = vec![None; 12];
        for k in [0, 2, 4, 6] {
            v[k] = Some(1.0);
        }
        let e = smooth_expectation(&fit_from(&v), 10).unwrap();
        assert_eq!(e.params[10], None);
        v[9] = Some(1.0);
        let e = smooth_expectation(&fit_from(&v), 10).unwrap();
        assert!(e.params[10].is_some());
    }

    fn single_char_set(values: Vec<Vec<Option<f64>>>) -> CharacteristicSet {
        let n = values[0].len();
        let mut cs = CharacteristicSet::new();
        cs.insert(Characteristic::Btp, Panel::new(start(), tickers(n), values).unwrap()).unwrap();
        cs
    }

    fn payoffs(alpha: f64, delta: f64, n: usize) -> ExpectedPayoffs {
        ExpectedPayoffs {
            start: start(),
            characteristics: vec![Characteristic::Btp],
            params: vec![Some((alpha, vec![delta])); n],
        }
    }

    #[test]
    fn predict_cbm_scalars() {
        let cs = single_char_set(vec![vec![Some(2.0), Some(-1.0), None], vec![Some(0.0); 3]]);
        let e = predict_cbm(&payoffs(0.005, 0.01, 2), &cs, 1).unwrap();
        assert_abs_diff_eq!(e[0].unwrap(), 0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1].unwrap(), -0.005, epsilon = 1e-15);
        assert_eq!(e[2], None);
        let flat = predict_cbm(&payoffs(0.007, 0.0, 2), &cs, 1).unwrap();
        assert_eq!(flat[0], Some(0.007));
        assert_eq!(flat[1], Some(0.007));
    }

    #[test]
    fn table1_rows() {
        use Characteristic::*;
        let models = table1_models();
        assert_eq!(models.len(), 14);
        assert_eq!(models[0].characteristics, vec![Btp, Mv]);
        assert_eq!(models[5].characteristics, vec![Btp, Mv, MktLoading, Moml, Moms]);
        for m in &models {
            assert!(m.validate().is_ok());
            assert_eq!(&m.characteristics[..2], &[Btp, Mv]);
        }
    }

    #[test]
    fn mkt_loading_of_index_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_factors(&mut rng, 50);
        let returns = Panel::from_fn(start(), 50, tickers(1), |t, _| f.mkt.get(t)).unwrap();
        let beta = mkt_loading(&returns, &f, 36).unwrap();
        assert_eq!(beta.get(26, 0), None);
        assert_abs_diff_eq!(beta.get(40, 0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    proptest! {
        #[test]
        fn predictions_linear_in_parameters(a in -0.05f64..0.05, d in -0.05f64..0.05, th in proptest::collection::vec(-3.0f64..3.0, 5)) {
            let cs = single_char_set(vec![th.iter().map(|v| Some(*v)).collect(), vec![Some(0.0); 5]]);
            let e1 = predict_cbm(&payoffs(a, d, 2), &cs, 1).unwrap();
            let e2 = predict_cbm(&payoffs(2.0 * a, 2.0 * d, 2), &cs, 1).unwrap();
            for (x, y) in e1.iter().zip(&e2) {
                prop_assert!((2.0 * x.unwrap() - y.unwrap()).abs() < 1e-14);
            }
        }

        #[test]
        fn intercept_shift_preserves_order(a in -0.05f64..0.05, shift in -0.1f64..0.1, d in 0.001f64..0.05, th in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let cs = single_char_set(vec![th.iter().map(|v| Some(*v)).collect(), vec![Some(0.0); 6]]);
            let e1 = predict_cbm(&payoffs(a, d, 2), &cs, 1).unwrap();
            let e2 = predict_cbm(&payoffs(a + shift, d, 2), &cs, 1).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let d1 = e1[i].unwrap() - e1[j].unwrap();
                    let d2 = e2[i].unwrap() - e2[j].unwrap();
                    if d1.abs() > 1e-9 {
                        prop_assert_eq!(d1.signum(), d2.signum());
                    }
                }
            }
        }
    }
}
