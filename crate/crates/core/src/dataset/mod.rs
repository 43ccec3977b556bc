//! Bid logs: ingestion, auction construction and monthly horizons.
//!
//! The input CSV has the exact header `day,period,seq,keyword_id,advertiser_id,bid`
//! with `day` as `YYYY-MM-DD`, `period` the 15-minute slot of the day (0-95),
//! and `seq` the order of bids within a period (larger is more recent).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::alloc::ValueVector;
use crate::error::{Error, Result};

mod synth;

pub use synth::{gen_synthetic, planted_flip_rate, SimilarityProfile, SyntheticConfig};

pub const CSV_HEADER: [&str; 6] = ["day", "period", "seq", "keyword_id", "advertiser_id", "bid"];

pub const PERIODS_PER_DAY: u8 = 96;

#[derive(Debug, Clone, PartialEq)]
pub struct BidRecord {
    pub day: NaiveDate,
    pub period: u8,
    pub seq: u64,
    pub keyword_id: String,
    pub advertiser_id: String,
    pub bid: f64,
}

/// All bids on one keyword within one 15-minute period, one per advertiser.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionInstance {
    pub keyword_id: String,
    pub day: NaiveDate,
    pub period: u8,
    pub bids: BTreeMap<String, f64>,
}

impl AuctionInstance {
    /// Bids in advertiser-id order.
    pub fn values(&self) -> ValueVector {
        ValueVector::new(self.bids.values().copied().collect())
            .expect("auction bids are positive and finite")
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    /// Calendar month, `YYYY-MM`.
    pub label: String,
    pub auctions: Vec<AuctionInstance>,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<BidRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|err| match err.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::from(err),
    })?;
    read_csv(file)
}

/// Parses bid records from any reader; see [`ingest_csv`].
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<BidRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = reader.headers().map_err(|err| csv_error(err, 1))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::SchemaMismatch(format!(
            "expected header `{}`, found `{}`",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|err| csv_error(err, 0))?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_row(&row, line)?);
    }
    Ok(records)
}

fn csv_error(err: csv::Error, fallback_line: u64) -> Error {
    let line = err.position().map_or(fallback_line, |p| p.line());
    match err.kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        _ => Error::MalformedRow {
            line,
            reason: err.to_string(),
        },
    }
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<BidRecord> {
    let bad = |reason: String| Error::MalformedRow { line, reason };
    let day = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
        .map_err(|e| bad(format!("day `{}`: {e}", &row[0])))?;
    let period: u8 = row[1]
        .parse()
        .map_err(|_| bad(format!("period `{}`", &row[1])))?;
    if period >= PERIODS_PER_DAY {
        return Err(bad(format!("period {period} outside 0..=95")));
    }
    let seq: u64 = row[2]
        .parse()
        .map_err(|_| bad(format!("seq `{}`", &row[2])))?;
    let keyword_id = row[3].to_string();
    let advertiser_id = row[4].to_string();
    if keyword_id.is_empty() || advertiser_id.is_empty() {
        return Err(bad("empty keyword or advertiser id".into()));
    }
    let bid: f64 = row[5]
        .parse()
        .map_err(|_| bad(format!("bid `{}`", &row[5])))?;
    if !(bid.is_finite() && bid > 0.0) {
        return Err(bad(format!("bid {bid} must be positive")));
    }
    Ok(BidRecord {
        day,
        period,
        seq,
        keyword_id,
        advertiser_id,
        bid,
    })
}

/// Writes records in the ingestion schema. Bids use the shortest decimal
/// form that parses back to the same float.
pub fn write_csv<W: Write>(records: &[BidRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        out.write_record([
            r.day.format("%Y-%m-%d").to_string(),
            r.period.to_string(),
            r.seq.to_string(),
            r.keyword_id.clone(),
            r.advertiser_id.clone(),
            r.bid.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Groups records into auctions keyed by `(keyword, day, period)`, keeping
/// each advertiser's most recent bid (largest `seq`, later input row on
/// ties). Auctions with fewer than two advertisers are dropped. Output is
/// sorted by key.
pub fn build_auctions(records: &[BidRecord]) -> Vec<AuctionInstance> {
    type Key<'a> = (&'a str, NaiveDate, u8);
    let mut groups: BTreeMap<Key<'_>, BTreeMap<&str, (u64, f64)>> = BTreeMap::new();
    for r in records {
        let group = groups.entry((&r.keyword_id, r.day, r.period)).or_default();
        match group.get(r.advertiser_id.as_str()) {
            Some(&(seq, _)) if seq > r.seq => {}
            _ => {
                group.insert(&r.advertiser_id, (r.seq, r.bid));
            }
        }
    }
    groups
        .into_iter()
        .filter(|(_, bids)| bids.len() >= 2)
        .map(|((keyword, day, period), bids)| AuctionInstance {
            keyword_id: keyword.to_string(),
            day,
            period,
            bids: bids
                .into_iter()
                .map(|(a, (_, bid))| (a.to_string(), bid))
                .collect(),
        })
        .collect()
}

/// Flattens auctions back into records, one per bid.
pub fn to_records(auctions: &[AuctionInstance]) -> Vec<BidRecord> {
    auctions
        .iter()
        .flat_map(|a| {
            a.bids
                .iter()
                .enumerate()
                .map(|(seq, (advertiser, &bid))| BidRecord {
                    day: a.day,
                    period: a.period,
                    seq: seq as u64,
                    keyword_id: a.keyword_id.clone(),
                    advertiser_id: advertiser.clone(),
                    bid,
                })
        })
        .collect()
}

/// One horizon per calendar month, in chronological order.
pub fn partition_horizons(auctions: Vec<AuctionInstance>) -> Vec<Horizon> {
    let mut months: BTreeMap<(i32, u32), Vec<AuctionInstance>> = BTreeMap::new();
    for a in auctions {
        months
            .entry((a.day.year(), a.day.month()))
            .or_default()
            .push(a);
    }
    months
        .into_iter()
        .map(|((year, month), auctions)| Horizon {
            label: format!("{year:04}-{month:02}"),
            auctions,
        })
        .collect()
}
