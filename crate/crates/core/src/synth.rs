//! Synthetic monthly equity panels with planted ground truth.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with the spec seed;
//! normal draws use `rand_distr::StandardNormal`. Missing cells are drawn from
//! a second ChaCha8 stream of the same seed, so the missing pattern does not
//! perturb the values.
//!
//! Each raw characteristic is driven by a cross-sectionally standardized AR(1)
//! score `θ`. Raw panels are affine in `θ` (log-affine for market value), so
//! after the pipeline's lagging, logging and standardization the regressors of
//! the cross-sectional model are affine images of the planted scores.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorSeries;
use crate::ingest::{assemble, ncd_index, Dataset, RawDataset, FUNDAMENTAL_LAG};
use crate::panel::{stock_ids, Characteristic, MonthStamp, Panel, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthMode {
    /// Returns load on lagged characteristics.
    #[serde(rename = "cbm-planted", alias = "cbm")]
    CbmPlanted,
    /// Returns load on generated factor paths.
    #[serde(rename = "apt-planted", alias = "apt")]
    AptPlanted,
    /// Returns are a constant plus noise.
    #[serde(rename = "null")]
    Null,
}

/// `δ(t) = constant + amplitude · sin(2π t / period)` with `t` the month index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedPayoff {
    pub characteristic: Characteristic,
    pub constant: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
}

fn default_period() -> f64 {
    24.0
}

impl PlantedPayoff {
    pub fn value(&self, t: usize) -> f64 {
        self.constant + self.amplitude * (2.0 * PI * t as f64 / self.period).sin()
    }
}

/// Common market shock `b_i · m_t` with `m_t ~ N(mean, sigma)` and `b_i`
/// uniform on `beta_range`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketShock {
    pub mean: f64,
    pub sigma: f64,
    pub beta_range: [f64; 2],
}

/// Factor structure for apt-planted mode. Factor order: mkt_excess, smb, hml.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AptPlant {
    pub beta_range: [f64; 2],
    pub factor_mean: [f64; 3],
    pub factor_sigma: [f64; 3],
    /// Standard deviation of the per-stock intercepts.
    pub alpha_sigma: f64,
}

impl Default for AptPlant {
    fn default() -> Self {
        Self {
            beta_range: [-0.5, 1.5],
            factor_mean: [0.006, 0.002, 0.003],
            factor_sigma: [0.065, 0.06, 0.06],
            alpha_sigma: 0.002,
        }
    }
}

pub const APT_FACTOR_KEYS: [&str; 3] = ["mkt_excess", "smb", "hml"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_stocks: usize,
    pub n_months: usize,
    pub seed: u64,
    pub mode: SynthMode,
    pub start: MonthStamp,
    /// Common intercept for cbm-planted and null modes.
    pub alpha: f64,
    pub payoffs: Vec<PlantedPayoff>,
    pub noise_sigma: f64,
    /// AR(1) persistence of characteristic scores.
    pub rho: f64,
    pub missing_rate: f64,
    /// Constant NCD yield (NACQ).
    pub ncd_yield: f64,
    pub market: Option<MarketShock>,
    /// Added to stocks whose lagged market value is below the monthly median.
    pub size_premium: f64,
    pub apt: AptPlant,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_stocks: 250,
            n_months: 160,
            seed: 0,
            mode: SynthMode::CbmPlanted,
            start: MonthStamp::from_ym(1995, 1).expect("valid month"),
            alpha: 0.01,
            payoffs: vec![
                PlantedPayoff {
                    characteristic: Characteristic::Btp,
                    constant: 0.004,
                    amplitude: 0.002,
                    period: 24.0,
                },
                PlantedPayoff {
                    characteristic: Characteristic::Mv,
                    constant: -0.0015,
                    amplitude: 0.0,
                    period: 24.0,
                },
            ],
            noise_sigma: 0.02,
            rho: 0.9,
            missing_rate: 0.0,
            ncd_yield: 0.08,
            market: None,
            size_premium: 0.0,
            apt: AptPlant::default(),
        }
    }
}

/// Raw characteristics driven by planted scores, in generation order.
const RAW: [Characteristic; 5] = [
    Characteristic::Btp,
    Characteristic::Mv,
    Characteristic::Dy,
    Characteristic::Ey,
    Characteristic::Vol,
];

/// Months between a raw cell and the characteristic row where it appears.
fn view_lag(c: Characteristic) -> usize {
    match c {
        Characteristic::Vol => 0,
        _ => FUNDAMENTAL_LAG,
    }
}

/// Raw value for a standardized score.
fn raw_value(c: Characteristic, theta: f64) -> f64 {
    match c {
        Characteristic::Btp => 0.6 + 0.25 * theta,
        Characteristic::Mv => (1000f64.ln() + 1.5 * theta).exp(),
        Characteristic::Dy => 0.03 + 0.01 * theta,
        Characteristic::Ey => 0.08 + 0.03 * theta,
        _ => 5.0 + theta,
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_stocks < 2 || self.n_months < 2 {
            return bad("synthetic panels need at least 2 stocks and 2 months".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)".into());
        }
        if !(0.0..0.5).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 0.5)".into());
        }
        for p in &self.payoffs {
            if !RAW.contains(&p.characteristic) {
                return bad(format!("cannot plant a payoff on {}", p.characteristic));
            }
            if !(p.period > 0.0) {
                return bad("payoff period must be positive".into());
            }
        }
        if let Some(m) = &self.market {
            if !(m.sigma >= 0.0) || m.beta_range[0] > m.beta_range[1] {
                return bad("invalid market shock".into());
            }
        }
        if self.apt.beta_range[0] > self.apt.beta_range[1] || self.apt.factor_sigma.iter().any(|s| !(*s >= 0.0)) {
            return bad("invalid apt plant".into());
        }
        Ok(())
    }
}

/// Everything planted by the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub dates: Vec<MonthStamp>,
    pub tickers: Vec<String>,
    /// Planted payoff per month, keyed by characteristic (cbm-planted only).
    pub payoffs: BTreeMap<Characteristic, Vec<f64>>,
    /// Per-stock intercept.
    pub alpha: Vec<f64>,
    /// Per-stock loadings keyed by factor (`mkt_excess`, `smb`, `hml`, `market`).
    pub betas: BTreeMap<String, Vec<f64>>,
    /// Per-month factor realizations keyed like `betas`; missing in month 0.
    pub factors: BTreeMap<String, Vec<Option<f64>>>,
    /// Monthly cash log return.
    pub rfr: Vec<Option<f64>>,
}

impl GroundTruth {
    /// Planted factor paths as a factor series (apt-planted only).
    pub fn factor_series(&self) -> Option<FactorSeries> {
        let start = *self.dates.first()?;
        let path = |k: &str| self.factors.get(k).cloned();
        let mkt_excess = path("mkt_excess")?;
        let mkt = mkt_excess
            .iter()
            .zip(&self.rfr)
            .map(|(m, r)| Some((*m)? + (*r)?))
            .collect();
        FactorSeries::new(
            Series::new(start, mkt),
            Series::new(start, self.rfr.clone()),
            Series::new(start, path("smb")?),
            Series::new(start, path("hml")?),
        )
        .ok()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn standardize_row(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let sd = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for x in row.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Generates raw inputs and the planted parameters.
pub fn generate_raw(spec: &SynthSpec) -> Result<(RawDataset, GroundTruth)> {
    spec.validate()?;
    let (n, m) = (spec.n_stocks, spec.n_months);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut miss_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    miss_rng.set_stream(1);

    // Scores start `prefix` months early so lagged views exist from month 0.
    let prefix = FUNDAMENTAL_LAG + 1;
    let total = m + prefix;
    let innovation = (1.0 - spec.rho * spec.rho).sqrt();
    let mut theta: BTreeMap<Characteristic, Vec<Vec<f64>>> = BTreeMap::new();
    for c in RAW {
        let mut state: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mut rows = Vec::with_capacity(total);
        for s in 0..total {
            if s > 0 {
                for x in state.iter_mut() {
                    *x = spec.rho * *x + innovation * normal(&mut rng);
                }
            }
            let mut row = state.clone();
            standardize_row(&mut row);
            rows.push(row);
        }
        theta.insert(c, rows);
    }
    // Score of characteristic `c` as seen in characteristic row `t`.
    let view = |c: Characteristic, t: usize, i: usize| theta[&c][t + prefix - view_lag(c)][i];

    let ncd = Series::new(spec.start, vec![Some(spec.ncd_yield); m]);
    let rfr = ncd_index(&ncd).returns;

    let mut gt_betas = BTreeMap::new();
    let mut gt_factors: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();

    let market_beta: Option<Vec<f64>> = spec
        .market
        .map(|mk| (0..n).map(|_| uniform(&mut rng, mk.beta_range)).collect());
    let alpha: Vec<f64> = match spec.mode {
        SynthMode::AptPlanted => (0..n).map(|_| spec.apt.alpha_sigma * normal(&mut rng)).collect(),
        _ => vec![spec.alpha; n],
    };
    let apt_betas: Vec<Vec<f64>> = if spec.mode == SynthMode::AptPlanted {
        (0..3)
            .map(|_| (0..n).map(|_| uniform(&mut rng, spec.apt.beta_range)).collect())
            .collect()
    } else {
        Vec::new()
    };

    let mut returns = vec![vec![0.0; n]; m];
    let mut market_path = vec![None; m];
    let mut factor_paths = vec![vec![None; m]; 3];
    for t in 1..m {
        let shock = spec.market.map(|mk| mk.mean + mk.sigma * normal(&mut rng));
        market_path[t] = shock;
        let f: Vec<f64> = if spec.mode == SynthMode::AptPlanted {
            (0..3)
                .map(|j| spec.apt.factor_mean[j] + spec.apt.factor_sigma[j] * normal(&mut rng))
                .collect()
        } else {
            Vec::new()
        };
        for (j, v) in f.iter().enumerate() {
            factor_paths[j][t] = Some(*v);
        }
        let size_cut = (spec.size_premium != 0.0).then(|| {
            let mut sizes: Vec<f64> = (0..n).map(|i| view(Characteristic::Mv, t, i)).collect();
            crate::models::median(&mut sizes).unwrap_or(0.0)
        });
        for i in 0..n {
            let mut r = alpha[i];
            match spec.mode {
                SynthMode::CbmPlanted => {
                    for p in &spec.payoffs {
                        r += p.value(t) * view(p.characteristic, t - 1, i);
                    }
                }
                SynthMode::AptPlanted => {
                    r += rfr.get(t).unwrap_or(0.0);
                    for j in 0..3 {
                        r += apt_betas[j][i] * f[j];
                    }
                }
                SynthMode::Null => {}
            }
            if let (Some(b), Some(s)) = (&market_beta, shock) {
                r += b[i] * s;
            }
            if let Some(cut) = size_cut {
                if view(Characteristic::Mv, t, i) < cut {
                    r += spec.size_premium;
                }
            }
            r += spec.noise_sigma * normal(&mut rng);
            returns[t][i] = r;
        }
    }

    let tickers: Vec<String> = (0..n).map(|i| format!("S{:04}", i + 1)).collect();
    let ids = stock_ids(&tickers)?;
    let mut missing = |v: f64| -> Option<f64> {
        let drop = miss_rng.random::<f64>() < spec.missing_rate;
        (!drop).then_some(v)
    };
    let mut tri_level = vec![100.0; n];
    let mut tri_rows = Vec::with_capacity(m);
    for (t, row) in returns.iter().enumerate() {
        if t > 0 {
            for i in 0..n {
                tri_level[i] *= row[i].exp();
            }
        }
        tri_rows.push(tri_level.iter().map(|v| missing(*v)).collect::<Vec<_>>());
    }
    let tri = Panel::new(spec.start, ids.clone(), tri_rows)?;
    let mut raw_panel = |c: Characteristic| -> Result<Panel> {
        let rows = (0..m)
            .map(|t| (0..n).map(|i| missing(raw_value(c, theta[&c][t + prefix][i]))).collect())
            .collect();
        Panel::new(spec.start, ids.clone(), rows)
    };
    let raw = RawDataset {
        tri,
        btp: raw_panel(Characteristic::Btp)?,
        mv: raw_panel(Characteristic::Mv)?,
        dy: raw_panel(Characteristic::Dy)?,
        ey: raw_panel(Characteristic::Ey)?,
        vol: raw_panel(Characteristic::Vol)?,
        ncd_yield: ncd,
    };

    let payoffs = if spec.mode == SynthMode::CbmPlanted {
        spec.payoffs
            .iter()
            .map(|p| (p.characteristic, (0..m).map(|t| p.value(t)).collect()))
            .collect()
    } else {
        BTreeMap::new()
    };
    if let Some(b) = market_beta {
        gt_betas.insert("market".to_string(), b);
        gt_factors.insert("market".to_string(), market_path);
    }
    for (j, key) in APT_FACTOR_KEYS.iter().enumerate() {
        if spec.mode == SynthMode::AptPlanted {
            gt_betas.insert(key.to_string(), apt_betas[j].clone());
            gt_factors.insert(key.to_string(), factor_paths[j].clone());
        }
    }
    let truth = GroundTruth {
        spec: spec.clone(),
        dates: (0..m).map(|t| spec.start.offset(t as i32)).collect(),
        tickers,
        payoffs,
        alpha,
        betas: gt_betas,
        factors: gt_factors,
        rfr: rfr.values().to_vec(),
    };
    Ok((raw, truth))
}

/// Generates a dataset exactly as ingestion would assemble it from CSV.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    let (raw, truth) = generate_raw(spec)?;
    Ok((assemble(raw, None)?, truth))
}
