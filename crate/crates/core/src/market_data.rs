//! Daily price, macro-financial and tweet-count series, aligned on the crypto
//! trading calendar.
//!
//! Crypto trades every day while traditional markets close on weekends and
//! holidays, so exogenous series are forward-filled onto the crypto calendar
//! (leading gaps are back-filled from the first available observation).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CrnError, Result};

/// Fraction of rows assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.67;

pub const OHLCV_COLUMNS: [&str; 5] = ["open", "high", "low", "close", "volume"];

/// One daily OHLCV record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let fields = [self.open, self.high, self.low, self.close, self.volume];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.volume < 0.0 {
            return Err(format!("negative volume {}", self.volume));
        }
        if self.low > self.high {
            return Err(format!("low {} above high {}", self.low, self.high));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!("low {} above min(open, close)", self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!("high {} below max(open, close)", self.high));
        }
        Ok(())
    }
}

/// Exogenous series the calendar alignment knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExoField {
    Gold,
    Msci,
    Sp500,
    Usdx,
    Wti,
    TweetCount,
}

impl ExoField {
    pub const MACRO: [ExoField; 5] = [
        ExoField::Gold,
        ExoField::Msci,
        ExoField::Sp500,
        ExoField::Usdx,
        ExoField::Wti,
    ];
    pub const ALL: [ExoField; 6] = [
        ExoField::Gold,
        ExoField::Msci,
        ExoField::Sp500,
        ExoField::Usdx,
        ExoField::Wti,
        ExoField::TweetCount,
    ];

    pub fn column_name(self) -> &'static str {
        match self {
            ExoField::Gold => "gold",
            ExoField::Msci => "msci",
            ExoField::Sp500 => "sp500",
            ExoField::Usdx => "usdx",
            ExoField::Wti => "wti",
            ExoField::TweetCount => "tweet_count",
        }
    }
}

/// One day of exogenous observations. Fields are optional because macro and
/// tweet data usually arrive from separate files.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExogenousRecord {
    pub date: NaiveDate,
    pub gold: Option<f64>,
    pub msci: Option<f64>,
    pub sp500: Option<f64>,
    pub usdx: Option<f64>,
    pub wti: Option<f64>,
    pub tweet_count: Option<u64>,
}

impl ExogenousRecord {
    pub fn get(&self, field: ExoField) -> Option<f64> {
        match field {
            ExoField::Gold => self.gold,
            ExoField::Msci => self.msci,
            ExoField::Sp500 => self.sp500,
            ExoField::Usdx => self.usdx,
            ExoField::Wti => self.wti,
            ExoField::TweetCount => self.tweet_count.map(|c| c as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Calendar-indexed table of named columns for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub asset: String,
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Dataset {
    pub fn new(asset: impl Into<String>, dates: Vec<NaiveDate>, columns: Vec<Column>) -> Result<Self> {
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(CrnError::Ordering {
                    previous: w[0].to_string(),
                    next: w[1].to_string(),
                });
            }
        }
        for c in &columns {
            if c.values.len() != dates.len() {
                return Err(CrnError::Shape(format!(
                    "column `{}` has {} values for {} dates",
                    c.name,
                    c.values.len(),
                    dates.len()
                )));
            }
        }
        Ok(Dataset {
            asset: asset.into(),
            dates,
            columns,
        })
    }

    /// Builds an OHLCV-only dataset from bars.
    pub fn from_bars(asset: impl Into<String>, bars: &[Bar]) -> Result<Self> {
        let dates = bars.iter().map(|b| b.date).collect();
        let columns = ohlcv_columns(bars);
        Dataset::new(asset, dates, columns)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Index of the first test row: floor(0.67 · n).
    pub fn split_index(&self) -> usize {
        split_point(self.len())
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| CrnError::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn closes(&self) -> Result<&[f64]> {
        self.column("close")
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            asset: self.asset.clone(),
            dates: self.dates[start..end].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: c.values[start..end].to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        for (i, d) in self.dates.iter().enumerate() {
            out.push_str(&d.to_string());
            for c in &self.columns {
                out.push(',');
                out.push_str(&c.values[i].to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| CrnError::io(path, e))
    }

    pub fn from_csv_reader<R: Read>(asset: &str, source: &str, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("date") {
            return Err(parse_err(source, 1, "first column must be `date`"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            if rec.len() != names.len() + 1 {
                return Err(parse_err(source, line, "wrong number of fields"));
            }
            dates.push(parse_date(source, line, &rec[0])?);
            for (j, col) in values.iter_mut().enumerate() {
                col.push(parse_f64(source, line, &names[j], &rec[j + 1])?);
            }
        }
        let columns = names
            .into_iter()
            .zip(values)
            .map(|(name, values)| Column { name, values })
            .collect();
        Dataset::new(asset, dates, columns)
    }

    pub fn read_csv(asset: &str, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CrnError::io(path, e))?;
        Dataset::from_csv_reader(asset, &path.display().to_string(), file)
    }
}

pub fn split_point(n: usize) -> usize {
    (TRAIN_FRACTION * n as f64).floor() as usize
}

fn ohlcv_columns(bars: &[Bar]) -> Vec<Column> {
    let pick = |f: fn(&Bar) -> f64| bars.iter().map(f).collect::<Vec<_>>();
    vec![
        Column { name: "open".into(), values: pick(|b| b.open) },
        Column { name: "high".into(), values: pick(|b| b.high) },
        Column { name: "low".into(), values: pick(|b| b.low) },
        Column { name: "close".into(), values: pick(|b| b.close) },
        Column { name: "volume".into(), values: pick(|b| b.volume) },
    ]
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> CrnError {
    CrnError::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_date(source: &str, line: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| parse_err(source, line, format!("bad date `{s}`: {e}")))
}

fn parse_f64(source: &str, line: usize, field: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(source, line, format!("bad number `{s}` in `{field}`")))
}

fn parse_opt_f64(source: &str, line: usize, field: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("null") {
        return Ok(None);
    }
    let v = parse_f64(source, line, field, s)?;
    if !(v > 0.0) {
        return Err(parse_err(source, line, format!("`{field}` must be positive, got {v}")));
    }
    Ok(Some(v))
}

fn header_index(headers: &csv::StringRecord, source: &str, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| parse_err(source, 1, format!("missing `{name}` column")))
}

fn check_order(dates: &[NaiveDate]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] <= w[0] {
            return Err(CrnError::Ordering {
                previous: w[0].to_string(),
                next: w[1].to_string(),
            });
        }
    }
    Ok(())
}

/// Parses `date,open,high,low,close,volume` rows. Rows must be in strictly
/// increasing date order; duplicates and reversals are rejected.
pub fn read_ohlcv<R: Read>(source: &str, reader: R) -> Result<Vec<Bar>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = ["date", "open", "high", "low", "close", "volume"]
        .iter()
        .map(|n| header_index(&headers, source, n))
        .collect::<Result<_>>()?;
    let mut bars = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let bar = Bar {
            date: parse_date(source, line, field(0))?,
            open: parse_f64(source, line, "open", field(1))?,
            high: parse_f64(source, line, "high", field(2))?,
            low: parse_f64(source, line, "low", field(3))?,
            close: parse_f64(source, line, "close", field(4))?,
            volume: parse_f64(source, line, "volume", field(5))?,
        };
        bar.validate().map_err(|m| parse_err(source, line, m))?;
        bars.push(bar);
    }
    check_order(&bars.iter().map(|b| b.date).collect::<Vec<_>>())?;
    Ok(bars)
}

pub fn load_ohlcv_csv(path: &Path) -> Result<Vec<Bar>> {
    let file = std::fs::File::open(path).map_err(|e| CrnError::io(path, e))?;
    read_ohlcv(&path.display().to_string(), file)
}

/// Parses a `date,gold,msci,sp500,usdx,wti` file. Empty cells are gaps.
pub fn read_macro<R: Read>(source: &str, reader: R) -> Result<Vec<ExogenousRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_idx = header_index(&headers, source, "date")?;
    let field_idx: Vec<(ExoField, usize)> = ExoField::MACRO
        .iter()
        .map(|f| header_index(&headers, source, f.column_name()).map(|i| (*f, i)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let mut r = ExogenousRecord {
            date: parse_date(source, line, rec.get(date_idx).unwrap_or(""))?,
            ..Default::default()
        };
        for (f, i) in &field_idx {
            let v = parse_opt_f64(source, line, f.column_name(), rec.get(*i).unwrap_or(""))?;
            match f {
                ExoField::Gold => r.gold = v,
                ExoField::Msci => r.msci = v,
                ExoField::Sp500 => r.sp500 = v,
                ExoField::Usdx => r.usdx = v,
                ExoField::Wti => r.wti = v,
                ExoField::TweetCount => unreachable!(),
            }
        }
        out.push(r);
    }
    check_order(&out.iter().map(|r| r.date).collect::<Vec<_>>())?;
    Ok(out)
}

pub fn load_macro_csv(path: &Path) -> Result<Vec<ExogenousRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CrnError::io(path, e))?;
    read_macro(&path.display().to_string(), file)
}

/// Parses a `date,tweet_count` file.
pub fn read_tweets<R: Read>(source: &str, reader: R) -> Result<Vec<ExogenousRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_idx = header_index(&headers, source, "date")?;
    let count_idx = header_index(&headers, source, "tweet_count")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let raw = rec.get(count_idx).unwrap_or("");
        let tweet_count = if raw.is_empty() {
            None
        } else {
            Some(raw.parse::<u64>().map_err(|_| {
                parse_err(source, line, format!("tweet_count must be a nonnegative integer, got `{raw}`"))
            })?)
        };
        out.push(ExogenousRecord {
            date: parse_date(source, line, rec.get(date_idx).unwrap_or(""))?,
            tweet_count,
            ..Default::default()
        });
    }
    check_order(&out.iter().map(|r| r.date).collect::<Vec<_>>())?;
    Ok(out)
}

pub fn load_tweets_csv(path: &Path) -> Result<Vec<ExogenousRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CrnError::io(path, e))?;
    read_tweets(&path.display().to_string(), file)
}

/// Joins exogenous records onto the bar calendar.
///
/// Every field with at least one observation becomes a column. Fields listed in
/// `required` must have at least one observation.
pub fn align_calendar(
    asset: &str,
    bars: &[Bar],
    exo: &[ExogenousRecord],
    required: &[ExoField],
) -> Result<Dataset> {
    if bars.is_empty() {
        return Err(CrnError::MissingData("no price bars".into()));
    }
    let dates: Vec<NaiveDate> = bars.iter().map(|b| b.date).collect();
    check_order(&dates)?;
    let mut columns = ohlcv_columns(bars);

    for field in ExoField::ALL {
        // Several records may share a date (one per source file); later ones win.
        let mut series: BTreeMap<NaiveDate, f64> = BTreeMap::new();
        for r in exo {
            if let Some(v) = r.get(field) {
                series.insert(r.date, v);
            }
        }
        if series.is_empty() {
            if required.contains(&field) {
                return Err(CrnError::MissingData(format!(
                    "no observations for required column `{}`",
                    field.column_name()
                )));
            }
            continue;
        }
        let first = *series.values().next().expect("nonempty");
        let values = dates
            .iter()
            .map(|d| series.range(..=*d).next_back().map(|(_, v)| *v).unwrap_or(first))
            .collect();
        columns.push(Column {
            name: field.column_name().to_string(),
            values,
        });
    }
    Dataset::new(asset, dates, columns)
}

/// Chronological split: the first floor(0.67·n) rows train, the rest test.
pub fn split_train_test(ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n < 3 {
        return Err(CrnError::TooSmall(format!("{n} rows; at least 3 are needed to split")));
    }
    let k = ds.split_index();
    Ok((ds.slice(0, k), ds.slice(k, n)))
}

/// Mean, population standard deviation, min, median and max of a column.
pub fn summary_stats(ds: &Dataset, column: &str) -> Result<SummaryStats> {
    let values = ds.column(column)?;
    describe(values).ok_or_else(|| CrnError::MissingData(format!("column `{column}` is empty")))
}

pub fn describe(values: &[f64]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    Some(SummaryStats {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        median,
        max: sorted[m - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + chrono::Duration::days(i)
    }

    fn bar(i: i64, close: f64) -> Bar {
        Bar {
            date: day(i),
            open: close,
            high: close * 1.01,
            low: close * 0.99,
            close,
            volume: 100.0,
        }
    }

    #[test]
    fn empty_file_with_header_is_empty() {
        let bars = read_ohlcv("t", "date,open,high,low,close,volume\n".as_bytes()).unwrap();
        assert!(bars.is_empty());
    }

    #[test]
    fn rows_out_of_order_are_rejected() {
        let src = "date,open,high,low,close,volume\n\
                   2018-01-02,1,1,1,1,1\n\
                   2018-01-01,1,1,1,1,1\n";
        assert!(matches!(read_ohlcv("t", src.as_bytes()), Err(CrnError::Ordering { .. })));
    }

    #[test]
    fn duplicate_dates_are_rejected() {
        let src = "date,open,high,low,close,volume\n\
                   2018-01-01,1,1,1,1,1\n\
                   2018-01-01,1,1,1,1,1\n";
        assert!(matches!(read_ohlcv("t", src.as_bytes()), Err(CrnError::Ordering { .. })));
    }

    #[test]
    fn malformed_row_reports_line() {
        let src = "date,open,high,low,close,volume\n\
                   2018-01-01,1,1,1,1,1\n\
                   2018-01-02,1,abc,1,1,1\n";
        match read_ohlcv("t", src.as_bytes()) {
            Err(CrnError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn weekend_gold_is_forward_filled() {
        // 2018-01-05 is a Friday.
        let bars: Vec<Bar> = (4..8).map(|i| bar(i, 10.0)).collect();
        let exo = vec![
            ExogenousRecord { date: day(3), gold: Some(1300.0), ..Default::default() },
            ExogenousRecord { date: day(4), gold: Some(1310.0), ..Default::default() },
        ];
        let ds = align_calendar("x", &bars, &exo, &[ExoField::Gold]).unwrap();
        assert_eq!(ds.column("gold").unwrap(), &[1310.0, 1310.0, 1310.0, 1310.0]);
    }

    #[test]
    fn leading_gap_is_back_filled() {
        let bars: Vec<Bar> = (0..3).map(|i| bar(i, 10.0)).collect();
        let exo = vec![ExogenousRecord { date: day(2), tweet_count: Some(7), ..Default::default() }];
        let ds = align_calendar("x", &bars, &exo, &[]).unwrap();
        assert_eq!(ds.column("tweet_count").unwrap(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn fully_covered_exo_is_unchanged() {
        let bars: Vec<Bar> = (0..4).map(|i| bar(i, 10.0)).collect();
        let exo: Vec<_> = (0..4)
            .map(|i| ExogenousRecord { date: day(i), wti: Some(50.0 + i as f64), ..Default::default() })
            .collect();
        let ds = align_calendar("x", &bars, &exo, &[ExoField::Wti]).unwrap();
        assert_eq!(ds.column("wti").unwrap(), &[50.0, 51.0, 52.0, 53.0]);
    }

    #[test]
    fn missing_required_column_is_an_error() {
        let bars: Vec<Bar> = (0..4).map(|i| bar(i, 10.0)).collect();
        let exo = vec![ExogenousRecord { date: day(0), msci: Some(1.0), ..Default::default() }];
        let err = align_calendar("x", &bars, &exo, &ExoField::MACRO).unwrap_err();
        assert!(matches!(err, CrnError::MissingData(_)));
    }

    #[test]
    fn split_sizes() {
        for (n, train, test) in [(1945, 1303, 642), (3, 2, 1), (100, 67, 33)] {
            let bars: Vec<Bar> = (0..n).map(|i| bar(i as i64, 1.0)).collect();
            let ds = Dataset::from_bars("x", &bars).unwrap();
            let (a, b) = split_train_test(&ds).unwrap();
            assert_eq!((a.len(), b.len()), (train, test), "n = {n}");
        }
    }

    #[test]
    fn split_rejects_tiny_dataset() {
        let ds = Dataset::from_bars("x", &[bar(0, 1.0), bar(1, 1.0)]).unwrap();
        assert!(matches!(split_train_test(&ds), Err(CrnError::TooSmall(_))));
    }

    #[test]
    fn constant_column_stats() {
        let ds = Dataset::new(
            "x",
            vec![day(0), day(1), day(2)],
            vec![Column { name: "c".into(), values: vec![5.0, 5.0, 5.0] }],
        )
        .unwrap();
        let s = summary_stats(&ds, "c").unwrap();
        assert_eq!((s.mean, s.std, s.median, s.min, s.max), (5.0, 0.0, 5.0, 5.0, 5.0));
        assert!(matches!(summary_stats(&ds, "nope"), Err(CrnError::UnknownColumn(_))));
    }

    proptest! {
        #[test]
        fn csv_round_trip(closes in prop::collection::vec(0.001f64..1e6, 0..40), extra in prop::collection::vec(-1e9f64..1e9, 40)) {
            let bars: Vec<Bar> = closes.iter().enumerate().map(|(i, c)| bar(i as i64 * 2, *c)).collect();
            let mut ds = Dataset::from_bars("coin", &bars).unwrap();
            ds.columns.push(Column { name: "gold".into(), values: extra[..bars.len()].to_vec() });
            let text = ds.to_csv_string();
            let back = Dataset::from_csv_reader("coin", "mem", text.as_bytes()).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn split_is_chronological_partition(n in 3usize..400) {
            let bars: Vec<Bar> = (0..n).map(|i| bar(i as i64, 1.0)).collect();
            let ds = Dataset::from_bars("x", &bars).unwrap();
            let (a, b) = split_train_test(&ds).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            prop_assert!(a.dates.last().unwrap() < b.dates.first().unwrap());
        }
    }
}
