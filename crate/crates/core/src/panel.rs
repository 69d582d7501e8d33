//! Calendar, identifiers and missing-aware date × stock panels.
//!
//! Every container here stores `Option<f64>`: `None` is the missing marker and
//! non-finite inputs are converted to `None` on construction, so a panel never
//! holds NaN or ±∞.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Keeps only finite values.
#[inline]
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// A calendar month, stored as the number of months since 1990-01.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthStamp(i32);

impl MonthStamp {
    pub const EPOCH_YEAR: i32 = 1990;

    pub const fn from_index(index: i32) -> Self {
        Self(index)
    }

    pub fn from_ym(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidMonth(format!("{year:04}-{month:02}")));
        }
        Ok(Self((year - Self::EPOCH_YEAR) * 12 + month as i32 - 1))
    }

    pub const fn index(self) -> i32 {
        self.0
    }

    pub fn year(self) -> i32 {
        Self::EPOCH_YEAR + self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub const fn next(self) -> Self {
        Self(self.0 + 1)
    }

    pub const fn offset(self, months: i32) -> Self {
        Self(self.0 + months)
    }

    /// Signed number of months from `self` to `other`.
    pub const fn months_until(self, other: MonthStamp) -> i32 {
        other.0 - self.0
    }
}

impl fmt::Display for MonthStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for MonthStamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidMonth(s.to_string());
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        // Accept a trailing day component (YYYY-MM-DD) but key on the month.
        let m = m.split('-').next().ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        Self::from_ym(year, month).map_err(|_| bad())
    }
}

impl Serialize for MonthStamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthStamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A ticker.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StockId(String);

impl StockId {
    pub fn new(ticker: impl Into<String>) -> Result<Self> {
        let ticker = ticker.into();
        let trimmed = ticker.trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidArgument("empty ticker".into()));
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for StockId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<StockId> for String {
    fn from(id: StockId) -> String {
        id.0
    }
}

impl fmt::Display for StockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Builds stock ids from string literals, mostly for tests and generators.
pub fn stock_ids<S: AsRef<str>>(tickers: &[S]) -> Result<Vec<StockId>> {
    tickers.iter().map(|t| StockId::new(t.as_ref())).collect()
}

/// A contiguous monthly time series with missing values.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    start: MonthStamp,
    values: Vec<Option<f64>>,
}

impl Series {
    pub fn new(start: MonthStamp, values: Vec<Option<f64>>) -> Self {
        let values = values.into_iter().map(|v| v.and_then(finite)).collect();
        Self { start, values }
    }

    pub fn missing(start: MonthStamp, len: usize) -> Self {
        Self {
            start,
            values: vec![None; len],
        }
    }

    pub fn start(&self) -> MonthStamp {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        self.values.get(t).copied().flatten()
    }

    pub fn date(&self, t: usize) -> MonthStamp {
        self.start.offset(t as i32)
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn index_of(&self, date: MonthStamp) -> Option<usize> {
        let k = self.start.months_until(date);
        (k >= 0 && (k as usize) < self.values.len()).then_some(k as usize)
    }

    /// Re-indexes onto `len` months starting at `start`; months outside the
    /// original range are missing.
    pub fn reindex(&self, start: MonthStamp, len: usize) -> Series {
        let values = (0..len)
            .map(|t| {
                self.index_of(start.offset(t as i32))
                    .and_then(|k| self.values[k])
            })
            .collect();
        Series { start, values }
    }

    /// Mean and standard error of the mean over present values.
    pub fn mean_and_stderr(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.values.iter().flatten().copied().collect();
        if xs.len() < 2 {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Some((mean, (var / n).sqrt()))
    }
}

/// Dates × stocks grid of optional values on a contiguous monthly calendar.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    start: MonthStamp,
    n_dates: usize,
    stocks: Vec<StockId>,
    values: Vec<Option<f64>>,
}

fn check_unique(stocks: &[StockId]) -> Result<()> {
    let mut seen = HashSet::with_capacity(stocks.len());
    for s in stocks {
        if !seen.insert(s) {
            return Err(Error::InvalidArgument(format!("duplicate ticker `{s}`")));
        }
    }
    Ok(())
}

impl Panel {
    /// Builds a panel from rows (one `Vec` per month).
    pub fn new(start: MonthStamp, stocks: Vec<StockId>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        check_unique(&stocks)?;
        let n_stocks = stocks.len();
        let n_dates = rows.len();
        let mut values = Vec::with_capacity(n_dates * n_stocks);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != n_stocks {
                return Err(Error::Dimension(format!(
                    "row {t} has {} cells, expected {n_stocks}",
                    row.len()
                )));
            }
            values.extend(row.into_iter().map(|v| v.and_then(finite)));
        }
        Ok(Self {
            start,
            n_dates,
            stocks,
            values,
        })
    }

    pub fn from_fn(
        start: MonthStamp,
        n_dates: usize,
        stocks: Vec<StockId>,
        f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self> {
        check_unique(&stocks)?;
        Ok(Self::build(start, n_dates, stocks, f))
    }

    pub fn missing(start: MonthStamp, n_dates: usize, stocks: Vec<StockId>) -> Result<Self> {
        Self::from_fn(start, n_dates, stocks, |_, _| None)
    }

    fn build(
        start: MonthStamp,
        n_dates: usize,
        stocks: Vec<StockId>,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Self {
        let n_stocks = stocks.len();
        let mut values = Vec::with_capacity(n_dates * n_stocks);
        for t in 0..n_dates {
            for i in 0..n_stocks {
                values.push(f(t, i).and_then(finite));
            }
        }
        Self {
            start,
            n_dates,
            stocks,
            values,
        }
    }

    /// A new panel on the same axes as `self`.
    pub fn derive(&self, f: impl FnMut(usize, usize) -> Option<f64>) -> Panel {
        Self::build(self.start, self.n_dates, self.stocks.clone(), f)
    }

    /// Applies `f` to every present value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Panel {
        self.derive(|t, i| self.get(t, i).map(&f))
    }

    pub fn start(&self) -> MonthStamp {
        self.start
    }

    /// Last date (inclusive). Undefined for an empty calendar.
    pub fn end(&self) -> MonthStamp {
        self.start.offset(self.n_dates as i32 - 1)
    }

    pub fn n_dates(&self) -> usize {
        self.n_dates
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn stocks(&self) -> &[StockId] {
        &self.stocks
    }

    pub fn date(&self, t: usize) -> MonthStamp {
        self.start.offset(t as i32)
    }

    pub fn dates(&self) -> impl Iterator<Item = MonthStamp> + '_ {
        (0..self.n_dates).map(|t| self.date(t))
    }

    pub fn date_index(&self, date: MonthStamp) -> Option<usize> {
        let k = self.start.months_until(date);
        (k >= 0 && (k as usize) < self.n_dates).then_some(k as usize)
    }

    pub fn stock_index(&self, ticker: &str) -> Option<usize> {
        self.stocks.iter().position(|s| s.as_str() == ticker)
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.values[t * self.stocks.len() + i]
    }

    pub fn row(&self, t: usize) -> &[Option<f64>] {
        let n = self.stocks.len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn column(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.n_dates).map(|t| self.get(t, i)).collect()
    }

    pub fn same_axes(&self, other: &Panel) -> bool {
        self.start == other.start && self.n_dates == other.n_dates && self.stocks == other.stocks
    }

    pub fn count_present(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    /// Returns a copy with `value` written at `(t, i)`; non-finite values become missing.
    pub fn with_value(&self, t: usize, i: usize, value: Option<f64>) -> Panel {
        let mut out = self.clone();
        let n = out.stocks.len();
        out.values[t * n + i] = value.and_then(finite);
        out
    }

    /// Restricts to `n` dates starting at `start` and to the columns in
    /// `stocks`; stocks absent from `self` become all-missing columns.
    pub fn reindex(&self, start: MonthStamp, n: usize, stocks: &[StockId]) -> Panel {
        let cols: Vec<Option<usize>> = stocks.iter().map(|s| self.stock_index(s.as_str())).collect();
        let offset = self.start.months_until(start);
        Self::build(start, n, stocks.to_vec(), |t, j| {
            let src_t = t as i64 + offset as i64;
            if src_t < 0 || src_t as usize >= self.n_dates {
                return None;
            }
            cols[j].and_then(|i| self.get(src_t as usize, i))
        })
    }
}

/// Restricts panels to the intersection of their date ranges and the union of
/// their stocks (first-seen order); absent stocks are filled with missing.
pub fn align(panels: &[Panel]) -> Result<Vec<Panel>> {
    if panels.is_empty() {
        return Ok(Vec::new());
    }
    let mut start = panels[0].start();
    let mut end = panels[0].start().offset(panels[0].n_dates() as i32);
    for p in panels {
        start = start.max(p.start());
        end = end.min(p.start().offset(p.n_dates() as i32));
    }
    if start >= end {
        return Err(Error::NoOverlappingDates);
    }
    let n = start.months_until(end) as usize;

    let mut seen = HashSet::new();
    let mut stocks = Vec::new();
    for p in panels {
        for s in p.stocks() {
            if seen.insert(s.clone()) {
                stocks.push(s.clone());
            }
        }
    }
    Ok(panels.iter().map(|p| p.reindex(start, n, &stocks)).collect())
}

/// Shifts values forward in time: output `(t, i)` is input `(t − k, i)`.
pub fn lag(p: &Panel, k: usize) -> Panel {
    p.derive(|t, i| if t >= k { p.get(t - k, i) } else { None })
}

/// Stock characteristics keyed as in the model suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Characteristic {
    /// Book-to-price.
    Btp,
    /// Size; stored as log market value.
    Mv,
    /// Dividend yield.
    Dy,
    /// Earnings yield.
    Ey,
    /// Volume traded.
    Vol,
    /// 12-month momentum skipping the latest month.
    Moml,
    /// 3-month momentum skipping the latest month.
    Moms,
    /// Trailing CAPM beta against the universe index.
    MktLoading,
}

impl Characteristic {
    pub const ALL: [Characteristic; 8] = [
        Characteristic::Btp,
        Characteristic::Mv,
        Characteristic::MktLoading,
        Characteristic::Moml,
        Characteristic::Moms,
        Characteristic::Ey,
        Characteristic::Dy,
        Characteristic::Vol,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Characteristic::Btp => "BTP",
            Characteristic::Mv => "MV",
            Characteristic::Dy => "DY",
            Characteristic::Ey => "EY",
            Characteristic::Vol => "VOL",
            Characteristic::Moml => "MOML",
            Characteristic::Moms => "MOMS",
            Characteristic::MktLoading => "MKT",
        }
    }
}

impl fmt::Display for Characteristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Characteristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "BTP" | "BVTP" => Characteristic::Btp,
            "MV" => Characteristic::Mv,
            "DY" => Characteristic::Dy,
            "EY" => Characteristic::Ey,
            "VOL" => Characteristic::Vol,
            "MOML" => Characteristic::Moml,
            "MOMS" => Characteristic::Moms,
            "MKT" | "MKT_LOADING" => Characteristic::MktLoading,
            _ => return Err(Error::UnknownKey(s.to_string())),
        })
    }
}

impl Serialize for Characteristic {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Characteristic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Characteristic panels sharing one set of axes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CharacteristicSet {
    panels: BTreeMap<Characteristic, Panel>,
}

impl CharacteristicSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Characteristic, panel: Panel) -> Result<()> {
        if let Some(existing) = self.panels.values().next() {
            if !existing.same_axes(&panel) {
                return Err(Error::Dimension(format!(
                    "characteristic {key} does not share the set's axes"
                )));
            }
        }
        self.panels.insert(key, panel);
        Ok(())
    }

    pub fn get(&self, key: Characteristic) -> Option<&Panel> {
        self.panels.get(&key)
    }

    pub fn require(&self, key: Characteristic) -> Result<&Panel> {
        self.get(key)
            .ok_or_else(|| Error::UnknownKey(format!("characteristic {key} not in set")))
    }

    pub fn contains(&self, key: Characteristic) -> bool {
        self.panels.contains_key(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = Characteristic> + '_ {
        self.panels.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Characteristic, &Panel)> {
        self.panels.iter().map(|(k, p)| (*k, p))
    }

    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    /// Applies `f` to every member panel, keeping keys.
    pub fn map_panels(&self, mut f: impl FnMut(Characteristic, &Panel) -> Panel) -> CharacteristicSet {
        CharacteristicSet {
            panels: self.panels.iter().map(|(k, p)| (*k, f(*k, p))).collect(),
        }
    }
}
