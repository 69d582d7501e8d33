//! CSV ingestion and derived input series.
//!
//! Raw inputs are wide CSV files (`date` column followed by one column per
//! ticker) plus a long-form NCD yield file. Assembly computes log returns from
//! the total return index, the momentum characteristics and the cash index,
//! and shifts fundamentals back one quarter to reflect reporting delay.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{align, lag, Characteristic, CharacteristicSet, MonthStamp, Panel, Series, StockId};

/// Months by which fundamental panels (BTP, MV, DY, EY) are shifted.
pub const FUNDAMENTAL_LAG: usize = 3;

pub const TRI_FILE: &str = "tri.csv";
pub const BTP_FILE: &str = "btp.csv";
pub const MV_FILE: &str = "mv.csv";
pub const DY_FILE: &str = "dy.csv";
pub const EY_FILE: &str = "ey.csv";
pub const VOL_FILE: &str = "vol.csv";
pub const NCD_FILE: &str = "ncd.csv";

/// Every file a dataset directory must contain.
pub const DATASET_FILES: [&str; 7] = [TRI_FILE, BTP_FILE, MV_FILE, DY_FILE, EY_FILE, VOL_FILE, NCD_FILE];

/// Raw vendor-style inputs before lagging.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    /// Total return index levels.
    pub tri: Panel,
    pub btp: Panel,
    pub mv: Panel,
    pub dy: Panel,
    pub ey: Panel,
    pub vol: Panel,
    /// Quoted 3-month NCD yields, nominal annual compounded quarterly, as fractions.
    pub ncd_yield: Series,
}

/// Raw fields that can be replaced from an override file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawField {
    Btp,
    Mv,
    Dy,
    Ey,
    Vol,
}

impl FromStr for RawField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "btp" => RawField::Btp,
            "mv" => RawField::Mv,
            "dy" => RawField::Dy,
            "ey" => RawField::Ey,
            "vol" => RawField::Vol,
            _ => return Err(Error::UnknownKey(s.to_string())),
        })
    }
}

impl fmt::Display for RawField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RawField::Btp => "btp",
            RawField::Mv => "mv",
            RawField::Dy => "dy",
            RawField::Ey => "ey",
            RawField::Vol => "vol",
        })
    }
}

/// A single substituted raw cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub stock: StockId,
    pub field: RawField,
    pub date: MonthStamp,
    pub value: Option<f64>,
}

/// Characteristic substitutions, e.g. primary-listing ratios for dual-listed stocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OverrideFile {
    pub entries: Vec<Override>,
}

/// Monthly cash index built from NCD yields.
#[derive(Clone, Debug, PartialEq)]
pub struct CashIndex {
    pub index: Series,
    /// Monthly log returns.
    pub returns: Series,
}

/// Fully assembled model inputs on common axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Raw inputs after alignment and overrides.
    pub raw: RawDataset,
    /// BTP, MV (log), DY, EY quarter-lagged; VOL as reported; MOML and MOMS from returns.
    pub characteristics: CharacteristicSet,
    /// Monthly log returns.
    pub returns: Panel,
    /// Quarter-lagged market value levels, used for selection and weighting.
    pub market_value: Panel,
    pub cash: CashIndex,
}

/// Log returns from a total return index. Zero or missing levels give missing returns.
pub fn log_returns(tri: &Panel) -> Panel {
    tri.derive(|t, i| {
        if t == 0 {
            return None;
        }
        match (tri.get(t - 1, i), tri.get(t, i)) {
            (Some(prev), Some(cur)) if prev > 0.0 && cur > 0.0 => Some((cur / prev).ln()),
            _ => None,
        }
    })
}

/// Sum of returns over `t−skip−window ..= t−skip−1`; missing if any summand is.
pub fn momentum(returns: &Panel, window: usize, skip: usize) -> Result<Panel> {
    if window == 0 {
        return Err(Error::InvalidArgument("momentum window must be at least 1".into()));
    }
    Ok(returns.derive(|t, i| {
        let mut sum = 0.0;
        for k in (skip + 1)..=(skip + window) {
            if k > t {
                return None;
            }
            sum += returns.get(t - k, i)?;
        }
        Some(sum)
    }))
}

/// Cash index from quoted NACQ yields.
///
/// The month-`t` log return is one third of the quarterly log yield quoted at
/// `t−1`, i.e. `ln(1 + y/4) / 3`. The level starts at 1 and stays flat over
/// months without a return.
pub fn ncd_index(yields: &Series) -> CashIndex {
    let n = yields.len();
    let mut rets = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut level = 1.0;
    for t in 0..n {
        let r = if t == 0 {
            None
        } else {
            yields.get(t - 1).map(|y| (1.0 + y / 4.0).ln() / 3.0).filter(|r| r.is_finite())
        };
        if let Some(r) = r {
            level *= r.exp();
        }
        rets.push(r);
        levels.push(Some(level));
    }
    CashIndex {
        index: Series::new(yields.start(), levels),
        returns: Series::new(yields.start(), rets),
    }
}

fn parse_cell(raw: &str, path: &Path, row: usize) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(path, row, format!("invalid number `{s}`")))?;
    Ok(v.is_finite().then_some(v))
}

/// Checks the date column is strictly increasing without gaps.
fn check_calendar(dates: &[MonthStamp], path: &Path) -> Result<()> {
    for (k, pair) in dates.windows(2).enumerate() {
        let row = k + 3; // header is line 1, first data row line 2
        if pair[1] <= pair[0] {
            return Err(Error::parse(
                path,
                row,
                format!("non-monotone date {} after {}", pair[1], pair[0]),
            ));
        }
        if pair[1] != pair[0].next() {
            return Err(Error::parse(
                path,
                row,
                format!("gap in monthly calendar: {} missing before {}", pair[0].next(), pair[1]),
            ));
        }
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(path, row, e.to_string())
}

/// Reads a wide CSV (`date,<ticker>,<ticker>,...`).
pub fn read_wide_csv(path: &Path) -> Result<Panel> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0).map(str::trim) != Some("date") {
        return Err(Error::parse(path, 1, "first column must be `date`"));
    }
    let mut stocks = Vec::with_capacity(headers.len().saturating_sub(1));
    let mut seen = HashSet::new();
    for h in headers.iter().skip(1) {
        let id = StockId::new(h).map_err(|_| Error::parse(path, 1, "empty ticker in header"))?;
        if !seen.insert(id.clone()) {
            return Err(Error::parse(path, 1, format!("duplicate ticker `{id}`")));
        }
        stocks.push(id);
    }

    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let date: MonthStamp = rec[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid date `{}`", &rec[0])))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|c| parse_cell(c, path, line))
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        rows.push(row);
    }
    if dates.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    check_calendar(&dates, path)?;
    Panel::new(dates[0], stocks, rows)
}

/// Reads the `date,yield` NCD file.
pub fn read_ncd_csv(path: &Path) -> Result<Series> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols != ["date", "yield"] {
        return Err(Error::parse(path, 1, "expected header `date,yield`"));
    }
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let date: MonthStamp = rec[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid date `{}`", &rec[0])))?;
        dates.push(date);
        values.push(parse_cell(&rec[1], path, line)?);
    }
    if dates.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    check_calendar(&dates, path)?;
    Ok(Series::new(dates[0], values))
}

/// Reads a long-form `ticker,field,date,value` override file.
pub fn read_overrides(path: &Path) -> Result<OverrideFile> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols != ["ticker", "field", "date", "value"] {
        return Err(Error::parse(path, 1, "expected header `ticker,field,date,value`"));
    }
    let mut entries = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let stock = StockId::new(&rec[0]).map_err(|_| Error::parse(path, line, "empty ticker"))?;
        let field: RawField = rec[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("unknown field `{}`", &rec[1])))?;
        let date: MonthStamp = rec[2]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid date `{}`", &rec[2])))?;
        let value = parse_cell(&rec[3], path, line)?;
        entries.push(Override {
            stock,
            field,
            date,
            value,
        });
    }
    Ok(OverrideFile { entries })
}

fn format_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    }
}

/// Writes a panel in the wide CSV layout.
pub fn write_wide_csv(panel: &Panel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(write_err(path))?;
    let mut header = vec!["date".to_string()];
    header.extend(panel.stocks().iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(write_err(path))?;
    for t in 0..panel.n_dates() {
        let mut rec = vec![panel.date(t).to_string()];
        rec.extend(panel.row(t).iter().map(|v| format_cell(*v)));
        w.write_record(&rec).map_err(write_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ncd_csv(series: &Series, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(write_err(path))?;
    w.write_record(["date", "yield"]).map_err(write_err(path))?;
    for (t, v) in series.values().iter().enumerate() {
        w.write_record([series.date(t).to_string(), format_cell(*v)])
            .map_err(write_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes all raw inputs into `dir` using the standard file names.
pub fn write_dataset(raw: &RawDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wide_csv(&raw.tri, &dir.join(TRI_FILE))?;
    write_wide_csv(&raw.btp, &dir.join(BTP_FILE))?;
    write_wide_csv(&raw.mv, &dir.join(MV_FILE))?;
    write_wide_csv(&raw.dy, &dir.join(DY_FILE))?;
    write_wide_csv(&raw.ey, &dir.join(EY_FILE))?;
    write_wide_csv(&raw.vol, &dir.join(VOL_FILE))?;
    write_ncd_csv(&raw.ncd_yield, &dir.join(NCD_FILE))
}

/// Reads the raw files of a dataset directory.
pub fn read_raw(dir: &Path) -> Result<RawDataset> {
    let p = |f: &str| -> PathBuf { dir.join(f) };
    Ok(RawDataset {
        tri: read_wide_csv(&p(TRI_FILE))?,
        btp: read_wide_csv(&p(BTP_FILE))?,
        mv: read_wide_csv(&p(MV_FILE))?,
        dy: read_wide_csv(&p(DY_FILE))?,
        ey: read_wide_csv(&p(EY_FILE))?,
        vol: read_wide_csv(&p(VOL_FILE))?,
        ncd_yield: read_ncd_csv(&p(NCD_FILE))?,
    })
}

/// Reads a dataset directory and assembles model inputs.
pub fn load_dataset(dir: &Path, overrides: Option<&OverrideFile>) -> Result<Dataset> {
    assemble(read_raw(dir)?, overrides)
}

fn apply_overrides(raw: &mut RawDataset, overrides: &OverrideFile) -> Result<()> {
    let mut by_field: BTreeMap<RawField, Vec<&Override>> = BTreeMap::new();
    for o in &overrides.entries {
        if raw.btp.stock_index(o.stock.as_str()).is_none() {
            return Err(Error::InvalidArgument(format!(
                "override references unknown ticker `{}`",
                o.stock
            )));
        }
        by_field.entry(o.field).or_default().push(o);
    }
    for (field, entries) in by_field {
        let panel = match field {
            RawField::Btp => &mut raw.btp,
            RawField::Mv => &mut raw.mv,
            RawField::Dy => &mut raw.dy,
            RawField::Ey => &mut raw.ey,
            RawField::Vol => &mut raw.vol,
        };
        let mut cells: BTreeMap<(usize, usize), Option<f64>> = BTreeMap::new();
        for o in entries {
            // Fragments may extend beyond the sample; only covered months apply.
            if let (Some(t), Some(i)) = (panel.date_index(o.date), panel.stock_index(o.stock.as_str())) {
                cells.insert((t, i), o.value);
            }
        }
        let src = panel.clone();
        *panel = src.derive(|t, i| cells.get(&(t, i)).copied().unwrap_or_else(|| src.get(t, i)));
    }
    Ok(())
}

/// Aligns raw inputs, applies overrides and derives returns, characteristics
/// and the cash index.
pub fn assemble(raw: RawDataset, overrides: Option<&OverrideFile>) -> Result<Dataset> {
    let ncd_panel = Panel::new(
        raw.ncd_yield.start(),
        vec![StockId::new("__ncd__")?],
        raw.ncd_yield.values().iter().map(|v| vec![*v]).collect(),
    )?;
    let stock_panels = align(&[
        raw.tri.clone(),
        raw.btp.clone(),
        raw.mv.clone(),
        raw.dy.clone(),
        raw.ey.clone(),
        raw.vol.clone(),
    ])?;
    // Intersect the calendar with the NCD series without adding its column.
    let dated = align(&[stock_panels[0].clone(), ncd_panel.clone()])?;
    let (start, n) = (dated[0].start(), dated[0].n_dates());
    let stocks = stock_panels[0].stocks().to_vec();
    let fit = |p: &Panel| p.reindex(start, n, &stocks);

    let mut raw = RawDataset {
        tri: fit(&stock_panels[0]),
        btp: fit(&stock_panels[1]),
        mv: fit(&stock_panels[2]),
        dy: fit(&stock_panels[3]),
        ey: fit(&stock_panels[4]),
        vol: fit(&stock_panels[5]),
        ncd_yield: raw.ncd_yield.reindex(start, n),
    };
    if let Some(o) = overrides {
        apply_overrides(&mut raw, o)?;
    }

    let returns = log_returns(&raw.tri);
    let market_value = lag(&raw.mv, FUNDAMENTAL_LAG);
    let mut cs = CharacteristicSet::new();
    cs.insert(Characteristic::Btp, lag(&raw.btp, FUNDAMENTAL_LAG))?;
    cs.insert(
        Characteristic::Mv,
        market_value.derive(|t, i| market_value.get(t, i).filter(|v| *v > 0.0).map(f64::ln)),
    )?;
    cs.insert(Characteristic::Dy, lag(&raw.dy, FUNDAMENTAL_LAG))?;
    cs.insert(Characteristic::Ey, lag(&raw.ey, FUNDAMENTAL_LAG))?;
    cs.insert(Characteristic::Vol, raw.vol.clone())?;
    cs.insert(Characteristic::Moml, momentum(&returns, 12, 1)?)?;
    cs.insert(Characteristic::Moms, momentum(&returns, 3, 1)?)?;
    let cash = ncd_index(&raw.ncd_yield);

    Ok(Dataset {
        raw,
        characteristics: cs,
        returns,
        market_value,
        cash,
    })
}
