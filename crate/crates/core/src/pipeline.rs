//! Config-driven end-to-end runs: ingest, universe, factors, preprocessing,
//! model estimation, prediction and backtest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{run_backtest, BacktestResult, BacktestSpec};
use crate::error::{Error, Result};
use crate::factors::{build_factor_series, FactorSeries, SortSpec};
use crate::ingest::{load_dataset, read_overrides, Dataset, DATASET_FILES, TRI_FILE};
use crate::models::{
    apt_expected_returns, cbm_expected_returns, fit_apt, fit_cbm, median_payoffs, mkt_loading, smooth_expectation,
    table1_models, AptFactor, AptSpec, CbmSpec, CrossSectionFit, PayoffSummary, DEFAULT_APT_WINDOW,
    DEFAULT_MKT_LOADING_WINDOW, DEFAULT_SMOOTHING_WINDOW,
};
use crate::panel::{Characteristic, CharacteristicSet, Panel};
use crate::preprocess::{standardize, ZScorePolicy};
use crate::synth::{generate, GroundTruth, SynthSpec};
use crate::universe::{select_universe, UniverseMask, UniverseSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub overrides: Option<PathBuf>,
}

/// APT model entry with factor keys kept as text until validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AptEntry {
    pub name: String,
    pub factors: Vec<String>,
    pub window: Option<usize>,
    pub excess_returns: Option<bool>,
}

/// CBM entry with characteristic keys kept as text until validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbmEntry {
    pub name: String,
    pub characteristics: Vec<String>,
    pub smoothing_window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Output directory, relative to the config file.
    pub out: Option<PathBuf>,
    pub data: Option<DataConfig>,
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub universe: UniverseSpec,
    #[serde(default)]
    pub sort: SortSpec,
    #[serde(default)]
    pub zscore: ZScorePolicy,
    #[serde(default)]
    pub backtest: BacktestSpec,
    /// Default smoothing window for CBM entries that omit one.
    pub smoothing_window: Option<usize>,
    /// Trailing window of the market-loading characteristic.
    pub mkt_loading_window: Option<usize>,
    /// `None` selects CAPM and FF3.
    pub apt: Option<Vec<AptEntry>>,
    /// `None` selects the fourteen-model suite.
    pub cbm: Option<Vec<CbmEntry>>,
    /// Directory against which relative paths resolve.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        self.data.as_ref().map(|d| self.resolve(&d.dir))
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.out.as_ref().map(|p| self.resolve(p))
    }

    /// Effective seed: the top-level seed, else the synth seed, else 0.
    pub fn effective_seed(&self) -> u64 {
        self.seed.or(self.synth.as_ref().map(|s| s.seed)).unwrap_or(0)
    }

    pub fn smoothing(&self) -> usize {
        self.smoothing_window.unwrap_or(DEFAULT_SMOOTHING_WINDOW)
    }

    pub fn mkt_window(&self) -> usize {
        self.mkt_loading_window.unwrap_or(DEFAULT_MKT_LOADING_WINDOW)
    }

    /// Parses model entries, applying defaults for absent lists.
    pub fn models(&self) -> Result<(Vec<AptSpec>, Vec<CbmSpec>)> {
        let apt = match &self.apt {
            None => vec![AptSpec::capm(), AptSpec::ff3()],
            Some(entries) => entries
                .iter()
                .map(|e| {
                    Ok(AptSpec {
                        name: e.name.clone(),
                        factors: e.factors.iter().map(|f| f.parse::<AptFactor>()).collect::<Result<_>>()?,
                        window: e.window.unwrap_or(DEFAULT_APT_WINDOW),
                        excess_returns: e.excess_returns.unwrap_or(true),
                    })
                })
                .collect::<Result<_>>()?,
        };
        let cbm = match &self.cbm {
            None => table1_models()
                .into_iter()
                .map(|mut m| {
                    m.smoothing_window = self.smoothing();
                    m
                })
                .collect(),
            Some(entries) => entries
                .iter()
                .map(|e| {
                    Ok(CbmSpec {
                        name: e.name.clone(),
                        characteristics: e
                            .characteristics
                            .iter()
                            .map(|c| c.parse::<Characteristic>())
                            .collect::<Result<_>>()?,
                        smoothing_window: e.smoothing_window.unwrap_or(self.smoothing()),
                    })
                })
                .collect::<Result<_>>()?,
        };
        Ok((apt, cbm))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

fn valid_model_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Number of data rows in a CSV, used to compare windows with history.
fn count_months(path: &Path) -> Option<usize> {
    let text = fs::read_to_string(path).ok()?;
    Some(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

/// Static checks; never reads beyond file headers and row counts.
pub fn validate(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut d = Vec::new();

    let history = match (&cfg.data, &cfg.synth) {
        (Some(_), Some(_)) => {
            d.push(Diagnostic::error("configure either [data] or [synth], not both"));
            None
        }
        (None, None) => {
            d.push(Diagnostic::error("no input: configure [data] or [synth]"));
            None
        }
        (Some(data), None) => {
            let dir = cfg.resolve(&data.dir);
            let mut all_present = true;
            for f in DATASET_FILES {
                if !dir.join(f).is_file() {
                    d.push(Diagnostic::error(format!("missing input file {}", dir.join(f).display())));
                    all_present = false;
                }
            }
            if let Some(o) = &data.overrides {
                let p = cfg.resolve(o);
                if !p.is_file() {
                    d.push(Diagnostic::error(format!("missing overrides file {}", p.display())));
                }
            }
            if all_present {
                count_months(&dir.join(TRI_FILE))
            } else {
                None
            }
        }
        (None, Some(s)) => {
            if let Err(e) = s.validate() {
                d.push(Diagnostic::error(format!("synth: {e}")));
            }
            Some(s.n_months)
        }
    };

    for check in [
        (cfg.universe.top_n < 2).then(|| "universe.top_n must be at least 2".to_string()),
        cfg.sort.validate().err().map(|e| e.to_string()),
        cfg.zscore.validate().err().map(|e| e.to_string()),
        (cfg.backtest.quantiles < 2).then(|| "backtest.quantiles must be at least 2".to_string()),
        (cfg.smoothing() == 0).then(|| "smoothing_window must be at least 1".to_string()),
    ]
    .into_iter()
    .flatten()
    {
        d.push(Diagnostic::error(check));
    }

    if matches!(&cfg.apt, Some(a) if a.is_empty()) && matches!(&cfg.cbm, Some(c) if c.is_empty()) {
        d.push(Diagnostic::error("no models configured"));
    }

    let mut names = BTreeSet::new();
    let mut uses_mkt = false;
    let mut windows: Vec<(String, usize)> = Vec::new();
    for e in cfg.apt.clone().unwrap_or_else(|| {
        [AptSpec::capm(), AptSpec::ff3()]
            .iter()
            .map(|s| AptEntry {
                name: s.name.clone(),
                factors: s.factors.iter().map(|f| f.key().to_string()).collect(),
                window: Some(s.window),
                excess_returns: Some(s.excess_returns),
            })
            .collect()
    }) {
        if !valid_model_name(&e.name) {
            d.push(Diagnostic::error(format!("invalid model name `{}`", e.name)));
        } else if !names.insert(e.name.clone()) {
            d.push(Diagnostic::error(format!("duplicate model name `{}`", e.name)));
        }
        if e.factors.is_empty() {
            d.push(Diagnostic::error(format!("APT model `{}` has no factors", e.name)));
        }
        for f in &e.factors {
            if f.parse::<AptFactor>().is_err() {
                d.push(Diagnostic::error(format!("APT model `{}`: unknown factor key `{f}`", e.name)));
            }
        }
        let w = e.window.unwrap_or(DEFAULT_APT_WINDOW);
        if w < e.factors.len() + 1 + crate::regress::DEFAULT_MIN_DOF {
            d.push(Diagnostic::error(format!("APT model `{}`: window {w} is too short", e.name)));
        }
        windows.push((e.name.clone(), w));
    }
    let cbm_entries: Vec<(String, Vec<String>, usize)> = match &cfg.cbm {
        None => table1_models()
            .into_iter()
            .map(|m| (m.name, m.characteristics.iter().map(|c| c.key().to_string()).collect(), cfg.smoothing()))
            .collect(),
        Some(entries) => entries
            .iter()
            .map(|e| (e.name.clone(), e.characteristics.clone(), e.smoothing_window.unwrap_or(cfg.smoothing())))
            .collect(),
    };
    for (name, chars, smoothing) in cbm_entries {
        if !valid_model_name(&name) {
            d.push(Diagnostic::error(format!("invalid model name `{name}`")));
        } else if !names.insert(name.clone()) {
            d.push(Diagnostic::error(format!("duplicate model name `{name}`")));
        }
        if chars.is_empty() {
            d.push(Diagnostic::error(format!("CBM model `{name}` has no characteristics")));
        }
        let mut seen = BTreeSet::new();
        for c in &chars {
            match c.parse::<Characteristic>() {
                Ok(k) => {
                    uses_mkt |= k == Characteristic::MktLoading;
                    if !seen.insert(k) {
                        d.push(Diagnostic::error(format!("CBM model `{name}` repeats `{c}`")));
                    }
                }
                Err(_) => d.push(Diagnostic::error(format!("CBM model `{name}`: unknown characteristic key `{c}`"))),
            }
        }
        if smoothing == 0 {
            d.push(Diagnostic::error(format!("CBM model `{name}`: smoothing window must be at least 1")));
        }
        windows.push((name, smoothing));
    }
    if uses_mkt {
        windows.push(("mkt_loading".into(), cfg.mkt_window()));
        if cfg.mkt_window() < 2 + crate::regress::DEFAULT_MIN_DOF {
            d.push(Diagnostic::error("mkt_loading_window is too short"));
        }
    }

    if let Some(n) = history {
        for (name, w) in windows {
            if w >= n {
                d.push(Diagnostic::warning(format!(
                    "insufficient history: `{name}` needs a {w}-month window but the data has {n} months"
                )));
            }
        }
    }
    d
}

/// One fitted and backtested model.
#[derive(Clone, Debug)]
pub struct ModelRun {
    pub name: String,
    pub expected: Panel,
    pub backtest: BacktestResult,
    /// CBM only.
    pub payoffs: Option<CrossSectionFit>,
    pub summary: Option<PayoffSummary>,
}

/// In-memory results of a run.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub dataset: Dataset,
    pub truth: Option<GroundTruth>,
    pub mask: UniverseMask,
    pub factors: FactorSeries,
    pub characteristics: CharacteristicSet,
    pub apt: Vec<ModelRun>,
    pub cbm: Vec<ModelRun>,
}

/// Universe-masked, standardized characteristics, with the market loading
/// added when requested.
pub fn prepare_characteristics(
    dataset: &Dataset,
    mask: &UniverseMask,
    factors: &FactorSeries,
    policy: &ZScorePolicy,
    mkt_window: Option<usize>,
) -> Result<CharacteristicSet> {
    let mut cs = dataset.characteristics.clone();
    if let Some(w) = mkt_window {
        cs.insert(Characteristic::MktLoading, mkt_loading(&dataset.returns, factors, w)?)?;
    }
    Ok(standardize(&cs.map_panels(|_, p| mask.apply(p)), policy))
}

/// Runs every stage on an assembled dataset.
pub fn evaluate_dataset(cfg: &RunConfig, dataset: Dataset, truth: Option<GroundTruth>) -> Result<Evaluation> {
    let (apt_specs, cbm_specs) = cfg.models()?;
    let mask = select_universe(&dataset.market_value, &cfg.universe).map_err(Error::in_stage("universe"))?;
    let factors = build_factor_series(&dataset, &mask, &cfg.sort).map_err(Error::in_stage("factors"))?;
    let needs_mkt = cbm_specs
        .iter()
        .any(|s| s.characteristics.contains(&Characteristic::MktLoading));
    let characteristics = prepare_characteristics(
        &dataset,
        &mask,
        &factors,
        &cfg.zscore,
        needs_mkt.then(|| cfg.mkt_window()),
    )
    .map_err(Error::in_stage("preprocess"))?;

    let backtest = |name: &str, expected: &Panel| {
        run_backtest(
            name,
            expected,
            &dataset.returns,
            &mask,
            Some(&dataset.market_value),
            &cfg.backtest,
        )
        .map_err(Error::in_stage("backtest"))
    };

    let mut apt = Vec::with_capacity(apt_specs.len());
    for spec in &apt_specs {
        let fit = fit_apt(&dataset.returns, &factors, spec).map_err(Error::in_stage("models"))?;
        let expected = apt_expected_returns(&fit, &factors).map_err(Error::in_stage("models"))?;
        let result = backtest(&spec.name, &expected)?;
        apt.push(ModelRun {
            name: spec.name.clone(),
            expected,
            backtest: result,
            payoffs: None,
            summary: None,
        });
    }
    let mut cbm = Vec::with_capacity(cbm_specs.len());
    for spec in &cbm_specs {
        let fit = fit_cbm(&dataset.returns, &characteristics, spec).map_err(Error::in_stage("models"))?;
        let smoothed = smooth_expectation(&fit, spec.smoothing_window).map_err(Error::in_stage("models"))?;
        let expected = cbm_expected_returns(&smoothed, &characteristics).map_err(Error::in_stage("models"))?;
        let result = backtest(&spec.name, &expected)?;
        let summary = median_payoffs(&spec.name, &fit);
        cbm.push(ModelRun {
            name: spec.name.clone(),
            expected,
            backtest: result,
            payoffs: Some(fit),
            summary,
        });
    }

    Ok(Evaluation {
        dataset,
        truth,
        mask,
        factors,
        characteristics,
        apt,
        cbm,
    })
}

/// Loads or generates the input data and runs every stage in memory.
pub fn evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let diags = validate(cfg);
    if let Some(e) = diags.iter().find(|d| d.severity == Severity::Error) {
        return Err(Error::Config(e.message.clone()));
    }
    let (dataset, truth) = if let Some(spec) = &cfg.synth {
        let mut spec = spec.clone();
        spec.seed = cfg.effective_seed();
        let (d, t) = generate(&spec).map_err(Error::in_stage("synth"))?;
        (d, Some(t))
    } else {
        let data = cfg.data.as_ref().expect("validated input");
        let overrides = data
            .overrides
            .as_ref()
            .map(|p| read_overrides(&cfg.resolve(p)))
            .transpose()
            .map_err(Error::in_stage("ingest"))?;
        let d = load_dataset(&cfg.resolve(&data.dir), overrides.as_ref()).map_err(Error::in_stage("ingest"))?;
        (d, None)
    };
    evaluate_dataset(cfg, dataset, truth)
}

/// Evaluates the config and writes the report bundle into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let eval = evaluate(cfg)?;
    crate::report::write_bundle(cfg, &eval, out).map_err(Error::in_stage("report"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::from_toml(text, Path::new(".")).unwrap()
    }

    #[test]
    fn defaults_select_full_suite() {
        let c = cfg("[synth]\nn_stocks = 30\n");
        let (apt, cbm) = c.models().unwrap();
        assert_eq!(apt.len(), 2);
        assert_eq!(cbm.len(), 14);
        assert!(validate(&c).is_empty(), "{:?}", validate(&c));
    }

    #[test]
    fn no_models_is_an_error() {
        let c = cfg("apt = []\ncbm = []\n[synth]\n");
        assert!(validate(&c).iter().any(|d| d.severity == Severity::Error && d.message.contains("no models")));
        assert!(matches!(evaluate(&c), Err(Error::Config(_))));
    }

    #[test]
    fn short_history_warns() {
        let c = cfg("cbm = []\n[synth]\nn_months = 60\n[[apt]]\nname = \"FF3\"\nfactors = [\"mkt_excess\", \"smb\", \"hml\"]\nwindow = 72\n");
        let d = validate(&c);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].severity, Severity::Warning);
        assert!(d[0].message.contains("insufficient history"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let c = cfg("apt = []\n[synth]\n[[cbm]]\nname = \"X\"\ncharacteristics = [\"BTP\", \"PEG\"]\n");
        let d = validate(&c);
        assert!(has_errors(&d));
        assert!(d[0].message.contains("PEG"));
        let c = cfg("cbm = []\n[synth]\n[[apt]]\nname = \"X\"\nfactors = [\"umd\"]\n");
        assert!(has_errors(&validate(&c)));
    }

    #[test]
    fn missing_files_and_duplicates() {
        let c = cfg("[data]\ndir = \"/nonexistent/dir\"\n");
        assert!(validate(&c).iter().filter(|d| d.message.contains("missing input file")).count() == DATASET_FILES.len());
        let c = cfg(
            "apt = []\n[synth]\n[[cbm]]\nname = \"A\"\ncharacteristics = [\"BTP\"]\n[[cbm]]\nname = \"A\"\ncharacteristics = [\"MV\"]\n",
        );
        assert!(validate(&c).iter().any(|d| d.message.contains("duplicate")));
    }

    #[test]
    fn rejects_unknown_config_fields() {
        assert!(RunConfig::from_toml("sed = 3\n", Path::new(".")).is_err());
    }
}
