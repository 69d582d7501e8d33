//! Report bundle: plot-ready CSV series, the median-payoff table, quantile
//! statistics and a run manifest.
//!
//! Every file is rendered in memory first; if writing any of them fails, the
//! files already written are removed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backtest::LineFit;
use crate::error::{Error, Result};
use crate::models::{CrossSectionFit, PayoffSummary};
use crate::panel::{Characteristic, Series};
use crate::pipeline::{Evaluation, ModelRun, RunConfig};

pub const FACTORS_FILE: &str = "factors.csv";
pub const FACTORS_CUMULATIVE_FILE: &str = "factors_cumulative.csv";
pub const TABLE1_FILE: &str = "table1.csv";
pub const QUINTILES_FILE: &str = "quintiles.csv";
pub const QUINTILES_SERIES_FILE: &str = "quintiles_series.csv";
pub const QUINTILES_FIT_FILE: &str = "quintiles_fit.json";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Column order of the median-payoff table.
pub const TABLE1_COLUMNS: [(Characteristic, &str); 8] = [
    (Characteristic::Btp, "BTP"),
    (Characteristic::Mv, "MV"),
    (Characteristic::MktLoading, "Mkt"),
    (Characteristic::Moml, "MOML"),
    (Characteristic::Moms, "MOMS"),
    (Characteristic::Ey, "EY"),
    (Characteristic::Dy, "DY"),
    (Characteristic::Vol, "VOL"),
];

pub fn payoffs_file(model: &str) -> String {
    format!("payoffs_{model}.csv")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| Error::InvalidArgument(format!("csv encoding: {e}"));
    w.write_record(header).map_err(enc)?;
    for r in rows {
        w.write_record(&r).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn factors_csv(eval: &Evaluation) -> Result<String> {
    let f = &eval.factors;
    csv_text(
        &["date", "mkt", "rfr", "smb", "hml"],
        (0..f.len()).map(|t| {
            vec![
                f.mkt.date(t).to_string(),
                cell(f.mkt.get(t)),
                cell(f.rfr.get(t)),
                cell(f.smb.get(t)),
                cell(f.hml.get(t)),
            ]
        }),
    )
}

fn factors_cumulative_csv(eval: &Evaluation) -> Result<String> {
    let c = eval.factors.cumulative();
    let cash: &Series = &eval.dataset.cash.index;
    csv_text(
        &["date", "mkt", "smb", "hml", "cash"],
        (0..c.mkt.len()).map(|t| {
            vec![
                c.mkt.date(t).to_string(),
                cell(c.mkt.get(t)),
                cell(c.smb.get(t)),
                cell(c.hml.get(t)),
                cell(cash.get(t)),
            ]
        }),
    )
}

/// Monthly estimates in percent; empty cells where the fit was not ok.
pub fn payoffs_csv(fit: &CrossSectionFit) -> Result<String> {
    let mut header = vec!["date", "alpha"];
    header.extend(fit.characteristics.iter().map(|c| c.key()));
    header.push("n_used");
    csv_text(
        &header,
        fit.months.iter().enumerate().map(|(t, m)| {
            let mut row = vec![fit.start.offset(t as i32).to_string()];
            match m {
                Some(m) => {
                    row.push((m.alpha * 100.0).to_string());
                    row.extend(m.deltas.iter().map(|d| (d * 100.0).to_string()));
                    row.push(m.n_used.to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), fit.characteristics.len() + 2)),
            }
            row
        }),
    )
}

/// One table row: intercept and payoffs to two decimals, blank where the
/// characteristic is not in the model.
pub fn table1_row(model: &str, summary: &PayoffSummary) -> Vec<String> {
    let mut row = vec![model.to_string(), format!("{:.2}", summary.alpha)];
    row.extend(
        TABLE1_COLUMNS
            .iter()
            .map(|(c, _)| summary.deltas.get(c).map(|v| format!("{v:.2}")).unwrap_or_default()),
    );
    row
}

pub fn table1_csv<'a>(rows: impl IntoIterator<Item = (&'a str, Option<&'a PayoffSummary>)>) -> Result<String> {
    let mut header = vec!["model", "alpha"];
    header.extend(TABLE1_COLUMNS.iter().map(|(_, h)| *h));
    csv_text(
        &header,
        rows.into_iter().map(|(name, s)| match s {
            Some(s) => table1_row(name, s),
            None => {
                let mut r = vec![name.to_string()];
                r.extend(std::iter::repeat_n(String::new(), TABLE1_COLUMNS.len() + 1));
                r
            }
        }),
    )
}

fn all_models(eval: &Evaluation) -> impl Iterator<Item = &ModelRun> {
    eval.apt.iter().chain(eval.cbm.iter())
}

fn quintiles_csv(eval: &Evaluation) -> Result<String> {
    let mut rows = Vec::new();
    for m in all_models(eval) {
        for b in &m.backtest.stats.bins {
            rows.push(vec![
                m.name.clone(),
                b.bin.to_string(),
                cell(b.ann_return_pct),
                cell(b.ann_vol_pct),
            ]);
        }
    }
    csv_text(&["model", "bin", "ann_return_pct", "ann_vol_pct"], rows)
}

fn quintiles_series_csv(eval: &Evaluation) -> Result<String> {
    let mut rows = Vec::new();
    for m in all_models(eval) {
        for b in &m.backtest.stats.bins {
            for (t, v) in b.log_returns.values().iter().enumerate() {
                if let Some(v) = v {
                    rows.push(vec![
                        m.name.clone(),
                        b.bin.to_string(),
                        b.log_returns.date(t).to_string(),
                        v.to_string(),
                    ]);
                }
            }
        }
    }
    csv_text(&["model", "bin", "date", "log_return"], rows)
}

#[derive(Serialize)]
struct FitEntry {
    #[serde(rename = "return")]
    ret: Option<LineFit>,
    vol: Option<LineFit>,
}

fn quintiles_fit_json(eval: &Evaluation) -> Result<String> {
    let map: BTreeMap<&str, FitEntry> = all_models(eval)
        .map(|m| {
            (
                m.name.as_str(),
                FitEntry {
                    ret: m.backtest.stats.return_fit,
                    vol: m.backtest.stats.vol_fit,
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&map).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    seed: u64,
    start: String,
    end: String,
    n_stocks: usize,
    apt_models: Vec<&'a str>,
    cbm_models: Vec<&'a str>,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Renders every output file, keyed by file name.
pub fn render_bundle(cfg: &RunConfig, eval: &Evaluation) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    files.insert(FACTORS_FILE.to_string(), factors_csv(eval)?);
    files.insert(FACTORS_CUMULATIVE_FILE.to_string(), factors_cumulative_csv(eval)?);
    for m in &eval.cbm {
        if let Some(fit) = &m.payoffs {
            files.insert(payoffs_file(&m.name), payoffs_csv(fit)?);
        }
    }
    files.insert(
        TABLE1_FILE.to_string(),
        table1_csv(eval.cbm.iter().map(|m| (m.name.as_str(), m.summary.as_ref())))?,
    );
    files.insert(QUINTILES_FILE.to_string(), quintiles_csv(eval)?);
    files.insert(QUINTILES_SERIES_FILE.to_string(), quintiles_series_csv(eval)?);
    files.insert(QUINTILES_FIT_FILE.to_string(), quintiles_fit_json(eval)?);

    let returns = &eval.dataset.returns;
    // the output location is not part of what determines the results
    let echo = RunConfig { out: None, ..cfg.clone() };
    let mut outputs: Vec<String> = files.keys().cloned().collect();
    outputs.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.effective_seed(),
        start: returns.start().to_string(),
        end: returns.end().to_string(),
        n_stocks: returns.n_stocks(),
        apt_models: eval.apt.iter().map(|m| m.name.as_str()).collect(),
        cbm_models: eval.cbm.iter().map(|m| m.name.as_str()).collect(),
        outputs,
        config: &echo,
    };
    files.insert(
        MANIFEST_FILE.to_string(),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?,
    );
    Ok(files)
}

/// Writes the bundle into `out`, removing anything it wrote if a write fails.
pub fn write_bundle(cfg: &RunConfig, eval: &Evaluation, out: &Path) -> Result<Vec<PathBuf>> {
    let files = render_bundle(cfg, eval)?;
    let created_dir = !out.exists();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in &files {
        let path = out.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created_dir {
                let _ = fs::remove_dir(out);
            }
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(written)
}
