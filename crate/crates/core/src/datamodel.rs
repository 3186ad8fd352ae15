//! Events, users and lookback-windowed count vectors.
//!
//! Time is an integer day offset from the start of collection. A user's
//! touchpoints are aggregated per code over a closed window `[end - T, end]`
//! where `end` is the purchase day for buyers and a randomly placed window
//! end for everyone else.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const NUM_TOUCHPOINTS: usize = 31;

/// 40 months at 30.4 days per month.
pub const DEFAULT_HORIZON_DAYS: u32 = 1216;

pub const DAYS_PER_MONTH: f64 = 30.4;

/// Touchpoint type names indexed by `code - 1`.
pub const TOUCHPOINT_NAMES: [&str; NUM_TOUCHPOINTS] = [
    "Earned social click none",
    "Owned social click none",
    "Paid affiliate click none",
    "Paid display click awareness",
    "Paid display click nonstock consideration",
    "Paid display click nonstock ROI",
    "Paid display click stock consideration",
    "Paid display click stock ROI",
    "Paid display impression awareness",
    "Paid display impression nonstock consideration",
    "Paid display impression nonstock ROI",
    "Paid display impression stock consideration",
    "Paid display impression stock ROI",
    "Paid email click awareness",
    "Paid email click promo",
    "Paid email click ROI",
    "Paid email click stock",
    "Paid email open awareness",
    "Paid email open promo",
    "Paid email open ROI",
    "Paid email open stock",
    "Paid email sent awareness",
    "Paid email sent promo",
    "Paid email sent ROI",
    "Paid email sent stock",
    "Paid search click nonstock brand",
    "Paid search click nonstock nonbrand",
    "Paid search click stock brand",
    "Paid search click stock nonbrand",
    "Paid social click paid FB",
    "Paid social impression paid FB",
];

/// Overall 40-month touchpoint volumes of the reference population, by code.
pub const REFERENCE_COUNTS: [u64; NUM_TOUCHPOINTS] = [
    12495, 5167, 2178, 1700, 161, 1287, 240, 84, 3278563, 194759, 6995656, 160837, 355639, 123190,
    2137, 53556, 8810, 1907397, 65680, 814296, 180003, 2324088, 126088, 864342, 251481, 36123,
    11781, 19139, 3240, 78, 30402,
];

/// Size of the reference population.
pub const REFERENCE_USERS: usize = 20556;

pub fn touchpoint_name(code: u8) -> Option<&'static str> {
    (1..=NUM_TOUCHPOINTS as u8)
        .contains(&code)
        .then(|| TOUCHPOINT_NAMES[code as usize - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TouchpointEvent {
    pub t_day: u32,
    pub code: u8,
}

impl TouchpointEvent {
    pub fn new(t_day: i64, code: i64) -> Result<Self> {
        if !(1..=NUM_TOUCHPOINTS as i64).contains(&code) {
            return Err(Error::Validation(format!("code out of range: {code}")));
        }
        let t_day = u32::try_from(t_day)
            .map_err(|_| Error::Validation(format!("day out of range: {t_day}")))?;
        Ok(Self {
            t_day,
            code: code as u8,
        })
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.code as usize - 1
    }
}

/// One user's touchpoint stream, truncated at the first purchase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub events: Vec<TouchpointEvent>,
    pub purchase_day: Option<u32>,
}

impl UserRecord {
    /// Sorts events by day and drops everything after `purchase_day`.
    pub fn new(
        user_id: impl Into<String>,
        mut events: Vec<TouchpointEvent>,
        purchase_day: Option<u32>,
    ) -> Self {
        events.sort();
        if let Some(day) = purchase_day {
            events.retain(|e| e.t_day <= day);
        }
        Self {
            user_id: user_id.into(),
            events,
            purchase_day,
        }
    }

    pub fn label(&self) -> u8 {
        u8::from(self.purchase_day.is_some())
    }

    /// Counts events with `start <= t_day <= end`. Events must be sorted.
    pub fn counts_in(&self, start: u32, end: u32) -> TouchpointVector {
        let lo = self.events.partition_point(|e| e.t_day < start);
        let hi = self.events.partition_point(|e| e.t_day <= end);
        let mut counts = [0u32; NUM_TOUCHPOINTS];
        for e in &self.events[lo..hi] {
            counts[e.index()] += 1;
        }
        TouchpointVector(counts)
    }
}

/// Per-code touchpoint counts, index `code - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TouchpointVector(pub [u32; NUM_TOUCHPOINTS]);

impl TouchpointVector {
    pub fn counts(&self) -> &[u32; NUM_TOUCHPOINTS] {
        &self.0
    }

    pub fn count(&self, code: u8) -> u32 {
        self.0[code as usize - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn to_f64(&self) -> [f64; NUM_TOUCHPOINTS] {
        self.0.map(f64::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub user_id: String,
    pub x: TouchpointVector,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub lookback_days: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.y).collect()
    }

    pub fn features(&self) -> Vec<[f64; NUM_TOUCHPOINTS]> {
        self.examples.iter().map(|e| e.x.to_f64()).collect()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            lookback_days: self.lookback_days,
        }
    }

    /// Errors unless both labels are present.
    pub fn require_both_classes(&self) -> Result<()> {
        let summary = class_summary(self)?;
        match (summary.n_pos, summary.n_neg) {
            (0, _) => Err(Error::SingleClass(0)),
            (_, 0) => Err(Error::SingleClass(1)),
            _ => Ok(()),
        }
    }
}

/// Named lookback lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookback {
    OneMonth,
    ThreeMonths,
    TwelveMonths,
    Full,
    Days(u32),
}

impl Lookback {
    pub fn days(self, horizon_days: u32) -> u32 {
        match self {
            Lookback::OneMonth => 30,
            Lookback::ThreeMonths => 91,
            Lookback::TwelveMonths => 365,
            Lookback::Full => horizon_days,
            Lookback::Days(d) => d,
        }
    }
}

impl std::str::FromStr for Lookback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1m" => Ok(Lookback::OneMonth),
            "3m" => Ok(Lookback::ThreeMonths),
            "12m" => Ok(Lookback::TwelveMonths),
            "full" => Ok(Lookback::Full),
            other => other
                .strip_suffix('d')
                .and_then(|d| d.parse().ok())
                .map(Lookback::Days)
                .ok_or_else(|| {
                    Error::Argument(format!(
                        "unknown lookback {other:?} (expected 1m, 3m, 12m, full or <n>d)"
                    ))
                }),
        }
    }
}

/// Builds the `(x, y)` pairs for a lookback of `lookback_days`.
///
/// Buyers use the window ending on their purchase day. Non-buyers use a
/// window whose start is uniform over `[0, horizon - T]`, drawn from a stream
/// keyed by `(seed, user_id)`. Users with no events in their window are
/// dropped.
pub fn build_pairs(
    records: &[UserRecord],
    lookback_days: i64,
    horizon_days: u32,
    seed: u64,
) -> Result<Dataset> {
    if lookback_days <= 0 {
        return Err(Error::Argument(format!(
            "lookback must be positive, got {lookback_days}"
        )));
    }
    if lookback_days > i64::from(horizon_days) {
        return Err(Error::Argument(format!(
            "lookback {lookback_days} exceeds the {horizon_days}-day horizon"
        )));
    }
    let t = lookback_days as u32;

    let examples = records
        .iter()
        .filter_map(|rec| {
            let (start, end) = match rec.purchase_day {
                Some(day) => (day.saturating_sub(t), day),
                None => {
                    let mut rng = seeding::rng(seeding::derive_str(seed, &rec.user_id));
                    let start = rng.random_range(0..=horizon_days - t);
                    (start, start + t)
                }
            };
            let x = rec.counts_in(start, end);
            (!x.is_zero()).then(|| Example {
                user_id: rec.user_id.clone(),
                x,
                y: rec.label(),
            })
        })
        .collect();

    Ok(Dataset {
        examples,
        lookback_days: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Argument(format!(
                "split fractions out of [0,1]: {fracs:?}"
            )));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "split fractions must sum to 1: {fracs:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn floor_share(frac: f64, n: usize) -> usize {
    (frac * n as f64 + 1e-9).floor() as usize
}

/// Random partition; validation and test sizes are floored, the remainder
/// goes to training.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let n_val = floor_share(spec.val_frac, n);
    let n_test = floor_share(spec.test_frac, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::rng(spec.seed));

    let (val, rest) = order.split_at(n_val);
    let (test, train) = rest.split_at(n_test);
    Ok(Split {
        train: dataset.subset(train),
        val: dataset.subset(val),
        test: dataset.subset(test),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub n_pos: usize,
    pub n_neg: usize,
    pub positive_rate: f64,
}

impl ClassSummary {
    pub fn from_counts(n_pos: usize, n_neg: usize) -> Result<Self> {
        let n = n_pos + n_neg;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            n_pos,
            n_neg,
            positive_rate: n_pos as f64 / n as f64,
        })
    }
}

pub fn class_summary(dataset: &Dataset) -> Result<ClassSummary> {
    let n_pos = dataset.examples.iter().filter(|e| e.y == 1).count();
    ClassSummary::from_counts(n_pos, dataset.len() - n_pos)
}

// ---------------------------------------------------------------------------
// CSV I/O

pub const EVENTS_FILE: &str = "events.csv";
pub const PURCHASES_FILE: &str = "purchases.csv";

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_path(path)?)
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                header
            ),
        });
    }
    Ok(())
}

fn parse_int(path: &Path, line: u64, field: &str, what: &str) -> Result<i64> {
    field.parse().map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line,
        message: format!("invalid {what}: {field:?}"),
    })
}

/// Reads `events.csv` and `purchases.csv`. Records come back ordered by
/// user id, events sorted by day, with post-purchase events removed.
pub fn load_events(events_path: &Path, purchases_path: &Path) -> Result<Vec<UserRecord>> {
    let mut purchases: BTreeMap<String, u32> = BTreeMap::new();
    let mut reader = csv_reader(purchases_path)?;
    check_header(purchases_path, &mut reader, &["user_id", "t_day"])?;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            file: purchases_path.to_path_buf(),
            line,
            message,
        };
        if row.len() != 2 {
            return Err(parse_err(format!("expected 2 fields, found {}", row.len())));
        }
        let day = parse_int(purchases_path, line, row[1].trim(), "day")?;
        let day = u32::try_from(day).map_err(|_| parse_err(format!("negative day {day}")))?;
        let user = row[0].trim();
        if purchases.insert(user.to_string(), day).is_some() {
            return Err(Error::Validation(format!(
                "duplicate purchase rows for user {user:?} ({}:{line})",
                purchases_path.display()
            )));
        }
    }

    let mut events: BTreeMap<String, Vec<TouchpointEvent>> = BTreeMap::new();
    let mut reader = csv_reader(events_path)?;
    check_header(events_path, &mut reader, &["user_id", "t_day", "code"])?;
    // Rows are usually grouped by user, so events accumulate for the current
    // user and only touch the map when the id changes.
    let mut current: Option<(String, Vec<TouchpointEvent>)> = None;
    let mut row = csv::ByteRecord::new();
    while reader.read_byte_record(&mut row)? {
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            file: events_path.to_path_buf(),
            line,
            message,
        };
        if row.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", row.len())));
        }
        let field = |i: usize| {
            std::str::from_utf8(&row[i])
                .map(str::trim)
                .map_err(|_| parse_err("invalid UTF-8".into()))
        };
        let day = parse_int(events_path, line, field(1)?, "day")?;
        let code = parse_int(events_path, line, field(2)?, "code")?;
        if day < 0 {
            return Err(parse_err(format!("negative day {day}")));
        }
        if !(1..=NUM_TOUCHPOINTS as i64).contains(&code) {
            return Err(parse_err(format!("code out of range: {code}")));
        }
        let event = TouchpointEvent::new(day, code).map_err(|e| parse_err(e.to_string()))?;
        let user = field(0)?;
        match &mut current {
            Some((id, evs)) if id.as_str() == user => evs.push(event),
            _ => {
                if let Some((id, evs)) = current.take() {
                    events.entry(id).or_default().extend(evs);
                }
                current = Some((user.to_string(), vec![event]));
            }
        }
    }
    if let Some((user, evs)) = current {
        events.entry(user).or_default().extend(evs);
    }

    for user in purchases.keys() {
        events.entry(user.clone()).or_default();
    }
    Ok(events
        .into_iter()
        .map(|(user_id, evs)| {
            let purchase = purchases.get(&user_id).copied();
            UserRecord::new(user_id, evs, purchase)
        })
        .collect())
}

pub fn load_dir(dir: &Path) -> Result<Vec<UserRecord>> {
    load_events(&dir.join(EVENTS_FILE), &dir.join(PURCHASES_FILE))
}

/// Writes `events.csv` and `purchases.csv` into `dir`.
pub fn write_dir(dir: &Path, records: &[UserRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut events = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
    writeln!(events, "user_id,t_day,code")?;
    for rec in records {
        for e in &rec.events {
            writeln!(events, "{},{},{}", rec.user_id, e.t_day, e.code)?;
        }
    }
    events.flush()?;

    let mut purchases = BufWriter::new(File::create(dir.join(PURCHASES_FILE))?);
    writeln!(purchases, "user_id,t_day")?;
    for rec in records {
        if let Some(day) = rec.purchase_day {
            writeln!(purchases, "{},{day}", rec.user_id)?;
        }
    }
    purchases.flush()?;
    Ok(())
}

/// Aggregated export: `user_id,y,x1,...,x31`.
pub fn write_dataset_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "user_id,y")?;
    for code in 1..=NUM_TOUCHPOINTS {
        write!(out, ",x{code}")?;
    }
    writeln!(out)?;
    for ex in &dataset.examples {
        write!(out, "{},{}", ex.user_id, ex.y)?;
        for c in ex.x.counts() {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
