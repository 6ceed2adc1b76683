//! Device-local contact records (`my_ctc`) and location log (`my_loc`).
//!
//! Observations arrive once per 30-second tick. A day has 2880 ticks and 720
//! two-minute buckets of four ticks each.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ident::{Day, DistanceClass, Rdi};

pub type Tick = u16;

pub const TICKS_PER_DAY: u16 = 2880;
pub const TICKS_PER_BUCKET: u16 = 4;
pub const BUCKETS_PER_DAY: u16 = TICKS_PER_DAY / TICKS_PER_BUCKET;
pub const DEFAULT_RETENTION_DAYS: u32 = 21;
pub const DEFAULT_THRESHOLD_MINUTES: f64 = 15.0;

pub const HISTORY_CSV_HEADER: &str = "date,rdi_hex,near_ticks,mid_ticks,far_ticks,first_tick,last_tick,bucket_count";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("empty range: from {from} is after to {to}")]
    EmptyRange { from: Day, to: Day },
    #[error("tick {0} outside 0..2880")]
    TickOutOfRange(u32),
    #[error("history csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Category1,
    Category2,
    Uncritical,
}

impl Category {
    /// Strictly more than `threshold_minutes` of face-to-face time is
    /// Category 1; exactly the threshold is Category 2.
    pub fn from_face_ticks(face_ticks: u32, threshold_minutes: f64) -> Category {
        if face_ticks == 0 {
            Category::Uncritical
        } else if f64::from(face_ticks) * 0.5 > threshold_minutes {
            Category::Category1
        } else {
            Category::Category2
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Category1 => "category1",
            Category::Category2 => "category2",
            Category::Uncritical => "uncritical",
        }
    }
}

/// Per-class tick counts of one contact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TickCounts {
    pub near: u32,
    pub mid: u32,
    pub far: u32,
}

impl TickCounts {
    pub fn total(&self) -> u32 {
        self.near + self.mid + self.far
    }

    /// Near and Mid count as face-to-face; Far never does.
    pub fn face_ticks(&self) -> u32 {
        self.near + self.mid
    }

    pub fn face_minutes(&self) -> f64 {
        f64::from(self.face_ticks()) * 0.5
    }

    pub fn category(&self, threshold_minutes: f64) -> Category {
        Category::from_face_ticks(self.face_ticks(), threshold_minutes)
    }

    fn slot(&mut self, class: DistanceClass) -> &mut u32 {
        match class {
            DistanceClass::Near => &mut self.near,
            DistanceClass::Mid => &mut self.mid,
            DistanceClass::Far => &mut self.far,
        }
    }
}

// Two bits per tick in a bucket mask; 0 means not seen, higher is closer.
fn class_code(class: DistanceClass) -> u8 {
    match class {
        DistanceClass::Far => 1,
        DistanceClass::Mid => 2,
        DistanceClass::Near => 3,
    }
}

fn class_of_code(code: u8) -> DistanceClass {
    match code {
        1 => DistanceClass::Far,
        2 => DistanceClass::Mid,
        _ => DistanceClass::Near,
    }
}

/// Anything the matcher can look up by `(date, rdi)`.
pub trait Contact {
    fn date(&self) -> Day;
    fn foreign_rdi(&self) -> Rdi;
    fn first_tick(&self) -> Tick;
    fn counts(&self) -> TickCounts;
}

/// Observations of one foreign identifier on one date.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContactRecord {
    pub foreign_rdi: Rdi,
    pub date: Day,
    pub counts: TickCounts,
    pub first_tick: Tick,
    pub last_tick: Tick,
    // Sorted by bucket index; the mask holds a 2-bit class code per tick,
    // lowest tick in the low bits.
    buckets: Vec<(u16, u8)>,
}

impl ContactRecord {
    fn new(foreign_rdi: Rdi, date: Day, tick: Tick) -> Self {
        ContactRecord {
            foreign_rdi,
            date,
            counts: TickCounts::default(),
            first_tick: tick,
            last_tick: tick,
            buckets: Vec::new(),
        }
    }

    /// Rebuilds a record from its parts; used by wire decoders.
    pub fn from_parts(
        foreign_rdi: Rdi,
        date: Day,
        counts: TickCounts,
        first_tick: Tick,
        last_tick: Tick,
        buckets: Vec<(u16, u8)>,
    ) -> Self {
        ContactRecord {
            foreign_rdi,
            date,
            counts,
            first_tick,
            last_tick,
            buckets,
        }
    }

    /// A tick seen more than once counts once, at the closest class seen.
    /// Returns false if the tick was already counted at this class or closer.
    fn mark(&mut self, tick: Tick, class: DistanceClass) -> bool {
        let bucket = tick / TICKS_PER_BUCKET;
        let shift = 2 * (tick % TICKS_PER_BUCKET);
        let code = class_code(class);
        match self.buckets.binary_search_by_key(&bucket, |&(b, _)| b) {
            Ok(i) => {
                let old = (self.buckets[i].1 >> shift) & 0b11;
                if old >= code {
                    return false;
                }
                if old != 0 {
                    *self.counts.slot(class_of_code(old)) -= 1;
                }
                self.buckets[i].1 = (self.buckets[i].1 & !(0b11 << shift)) | (code << shift);
            }
            Err(i) => self.buckets.insert(i, (bucket, code << shift)),
        }
        *self.counts.slot(class) += 1;
        self.first_tick = self.first_tick.min(tick);
        self.last_tick = self.last_tick.max(tick);
        true
    }

    pub fn buckets(&self) -> impl Iterator<Item = u16> + '_ {
        self.buckets.iter().map(|&(b, _)| b)
    }

    pub fn bucket_masks(&self) -> &[(u16, u8)] {
        &self.buckets
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn face_minutes(&self) -> f64 {
        self.counts.face_minutes()
    }

    pub fn classify(&self, threshold_minutes: f64) -> Category {
        self.counts.category(threshold_minutes)
    }

    pub fn to_row(&self) -> HistoryRow {
        HistoryRow {
            date: self.date,
            rdi: self.foreign_rdi,
            counts: self.counts,
            first_tick: self.first_tick,
            last_tick: self.last_tick,
            bucket_count: self.buckets.len() as u32,
        }
    }
}

impl Contact for ContactRecord {
    fn date(&self) -> Day {
        self.date
    }
    fn foreign_rdi(&self) -> Rdi {
        self.foreign_rdi
    }
    fn first_tick(&self) -> Tick {
        self.first_tick
    }
    fn counts(&self) -> TickCounts {
        self.counts
    }
}

/// [`classify`] with the default 15-minute threshold.
pub fn classify(record: &ContactRecord) -> Category {
    record.classify(DEFAULT_THRESHOLD_MINUTES)
}

/// One line of the exported history CSV.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryRow {
    pub date: Day,
    pub rdi: Rdi,
    pub counts: TickCounts,
    pub first_tick: Tick,
    pub last_tick: Tick,
    pub bucket_count: u32,
}

impl Contact for HistoryRow {
    fn date(&self) -> Day {
        self.date
    }
    fn foreign_rdi(&self) -> Rdi {
        self.rdi
    }
    fn first_tick(&self) -> Tick {
        self.first_tick
    }
    fn counts(&self) -> TickCounts {
        self.counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactLog {
    records: BTreeMap<(Day, Rdi), ContactRecord>,
    pub retention_days: u32,
}

impl Default for ContactLog {
    fn default() -> Self {
        ContactLog::new(DEFAULT_RETENTION_DAYS)
    }
}

impl ContactLog {
    pub fn new(retention_days: u32) -> Self {
        ContactLog {
            records: BTreeMap::new(),
            retention_days,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, date: Day, rdi: Rdi) -> Option<&ContactRecord> {
        self.records.get(&(date, rdi))
    }

    /// Records in `(date, rdi)` order.
    pub fn records(&self) -> impl Iterator<Item = &ContactRecord> {
        self.records.values()
    }

    /// Counts each sighted identifier at most once for this tick. When one
    /// identifier shows up more than once, the nearest class wins.
    pub fn observe(&mut self, sightings: &[(Rdi, DistanceClass)], date: Day, tick: Tick) -> Result<(), LogError> {
        if tick >= TICKS_PER_DAY {
            return Err(LogError::TickOutOfRange(u32::from(tick)));
        }
        let mut batch: Vec<(Rdi, DistanceClass)> = sightings.to_vec();
        // Sort by rdi, nearest class first, then keep the first of each rdi.
        batch.sort_unstable();
        batch.dedup_by_key(|(rdi, _)| *rdi);
        for (rdi, class) in batch {
            self.records
                .entry((date, rdi))
                .or_insert_with(|| ContactRecord::new(rdi, date, tick))
                .mark(tick, class);
        }
        Ok(())
    }

    /// Hot-path variant of [`ContactLog::observe`] for a single sighting.
    pub fn observe_one(&mut self, rdi: Rdi, class: DistanceClass, date: Day, tick: Tick) {
        debug_assert!(tick < TICKS_PER_DAY);
        self.records
            .entry((date, rdi))
            .or_insert_with(|| ContactRecord::new(rdi, date, tick))
            .mark(tick, class);
    }

    /// Drops every record dated before `today - retention_days`.
    pub fn prune(&mut self, today: Day) {
        let cutoff = today.saturating_sub(self.retention_days);
        self.records = self.records.split_off(&(cutoff, Rdi(0)));
    }

    /// Records with `from <= date <= to`, ordered by `(date, first_tick)`.
    pub fn export_history(&self, from: Day, to: Day) -> Result<Vec<ContactRecord>, LogError> {
        if from > to {
            return Err(LogError::EmptyRange { from, to });
        }
        let mut out: Vec<ContactRecord> = self
            .records
            .range((from, Rdi(0))..=(to, Rdi(u128::MAX)))
            .map(|(_, r)| r.clone())
            .collect();
        out.sort_by_key(|r| (r.date, r.first_tick, r.foreign_rdi));
        Ok(out)
    }

    /// Rebuilds a log from previously exported records.
    pub fn from_records(records: impl IntoIterator<Item = ContactRecord>, retention_days: u32) -> Self {
        ContactLog {
            records: records.into_iter().map(|r| ((r.date, r.foreign_rdi), r)).collect(),
            retention_days,
        }
    }
}

pub fn history_to_csv<'a>(records: impl IntoIterator<Item = &'a ContactRecord>) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for r in records {
        let row = r.to_row();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.date,
            row.rdi,
            row.counts.near,
            row.counts.mid,
            row.counts.far,
            row.first_tick,
            row.last_tick,
            row.bucket_count
        );
    }
    out
}

pub fn history_from_csv(text: &str) -> Result<Vec<HistoryRow>, LogError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HISTORY_CSV_HEADER => {}
        _ => {
            return Err(LogError::Csv {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| LogError::Csv {
            line: i + 1,
            reason: reason.to_owned(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(err("expected 8 fields"));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| err("bad integer"));
        let tick = |s: &str| -> Result<Tick, LogError> {
            let t = num(s)?;
            if t >= u32::from(TICKS_PER_DAY) {
                return Err(err("tick out of range"));
            }
            Ok(t as Tick)
        };
        let row = HistoryRow {
            date: num(fields[0])?,
            rdi: Rdi::from_hex(fields[1]).map_err(|_| err("bad rdi"))?,
            counts: TickCounts {
                near: num(fields[2])?,
                mid: num(fields[3])?,
                far: num(fields[4])?,
            },
            first_tick: tick(fields[5])?,
            last_tick: tick(fields[6])?,
            bucket_count: num(fields[7])?,
        };
        if row.first_tick > row.last_tick {
            return Err(err("first_tick after last_tick"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One `my_loc` entry. Tokens are opaque and never interpreted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LocationEntry {
    pub tick: Tick,
    pub location: Vec<u8>,
    pub orientation: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocationLog {
    days: BTreeMap<Day, Vec<LocationEntry>>,
}

impl LocationLog {
    pub fn append(&mut self, date: Day, entry: LocationEntry) {
        self.days.entry(date).or_default().push(entry);
    }

    pub fn day(&self, date: Day) -> &[LocationEntry] {
        self.days.get(&date).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.days.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prune(&mut self, today: Day, retention_days: u32) {
        let cutoff = today.saturating_sub(retention_days);
        self.days = self.days.split_off(&cutoff);
    }

    /// Entries of `date` within `[from_tick, to_tick]`.
    pub fn excerpt(&self, date: Day, from_tick: Tick, to_tick: Tick) -> Vec<LocationEntry> {
        self.day(date)
            .iter()
            .filter(|e| e.tick >= from_tick && e.tick <= to_tick)
            .cloned()
            .collect()
    }
}
