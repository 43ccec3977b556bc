//! Bid-stability profiles and welfare reports over auction logs.
//!
//! Two auctions are compared only when their bidder sets overlap enough
//! (Jaccard similarity at or above a threshold), and then only over the
//! shared bidders: `lambda~` is the largest bid ratio among them and `d~` the
//! largest change in their allocation. A profile buckets pairs by `lambda~`
//! and reports a high percentile of `d~` per bucket.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{AllocRule, AllocationRule};
use crate::dataset::{AuctionInstance, Horizon};
use crate::error::{Error, Result};

/// `d~` at or above `1 - ONE_TOL` counts as a full flip.
pub const ONE_TOL: f64 = 1e-9;

/// `|a & b| / |a | b|`; 0 when both are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let shared = a.intersection(b).count();
    let union = a.len() + b.len() - shared;
    if union == 0 {
        0.0
    } else {
        shared as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    pub u_keyword: String,
    pub v_keyword: String,
    pub lambda_tilde: f64,
    pub d_tilde: f64,
    pub jaccard: f64,
    pub shared: Vec<String>,
}

/// Compares two auctions over their shared bidders. Each allocation is
/// computed on its auction's full bid vector.
pub fn pair_stats<R: AllocationRule + ?Sized>(
    u: &AuctionInstance,
    v: &AuctionInstance,
    rule: &R,
) -> Result<PairStats> {
    let shared: Vec<String> = u
        .bids
        .keys()
        .filter(|a| v.bids.contains_key(*a))
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let xu = allocation_map(u, rule)?;
    let xv = allocation_map(v, rule)?;
    let mut lambda_tilde = 1.0f64;
    let mut d_tilde = 0.0f64;
    for a in &shared {
        let (bu, bv) = (u.bids[a], v.bids[a]);
        lambda_tilde = lambda_tilde.max((bu / bv).max(bv / bu));
        d_tilde = d_tilde.max((xu[a.as_str()] - xv[a.as_str()]).abs());
    }
    let union = u.len() + v.len() - shared.len();
    Ok(PairStats {
        u_keyword: u.keyword_id.clone(),
        v_keyword: v.keyword_id.clone(),
        lambda_tilde,
        d_tilde: d_tilde.min(1.0),
        jaccard: shared.len() as f64 / union as f64,
        shared,
    })
}

fn allocation_map<'a, R: AllocationRule + ?Sized>(
    auction: &'a AuctionInstance,
    rule: &R,
) -> Result<HashMap<&'a str, f64>> {
    let x = rule.allocate(&auction.values())?;
    Ok(auction
        .bids
        .keys()
        .map(String::as_str)
        .zip(x.into_vec())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub jaccard_min: f64,
    pub bucket_width: f64,
    pub range: (f64, f64),
    pub percentile: f64,
    pub max_samples_per_bucket: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            jaccard_min: 0.67,
            bucket_width: 0.1,
            range: (1.0, 2.0),
            percentile: 90.0,
            max_samples_per_bucket: 10_000,
            seed: 0,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.jaccard_min) {
            return bad(format!(
                "jaccard_min must lie in [0, 1], got {}",
                self.jaccard_min
            ));
        }
        let (lo, hi) = self.range;
        if !(lo >= 1.0 && hi > lo && hi.is_finite()) {
            return bad(format!("range must satisfy 1 <= lo < hi, got [{lo}, {hi}]"));
        }
        if !(self.bucket_width > 0.0 && self.bucket_width <= hi - lo) {
            return bad(format!(
                "bucket_width must lie in (0, hi - lo], got {}",
                self.bucket_width
            ));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return bad(format!(
                "percentile must lie in (0, 100], got {}",
                self.percentile
            ));
        }
        if self.max_samples_per_bucket == 0 {
            return bad("max_samples_per_bucket must be positive".into());
        }
        Ok(())
    }

    pub fn bucket_count(&self) -> usize {
        (((self.range.1 - self.range.0) / self.bucket_width).round() as usize).max(1)
    }

    fn edge(&self, b: usize) -> f64 {
        let (lo, hi) = self.range;
        lo + b as f64 * (hi - lo) / self.bucket_count() as f64
    }

    /// Left-closed buckets; the last one also holds the upper end.
    fn bucket_of(&self, lambda: f64) -> Option<usize> {
        let (lo, hi) = self.range;
        if lambda < lo || lambda > hi {
            return None;
        }
        let n = self.bucket_count();
        let mut b = (((lambda - lo) / (hi - lo)) * n as f64).floor() as usize;
        b = b.min(n - 1);
        while b + 1 < n && lambda >= self.edge(b + 1) {
            b += 1;
        }
        while b > 0 && lambda < self.edge(b) {
            b -= 1;
        }
        Some(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketSummary {
    pub lo: f64,
    pub hi: f64,
    pub pair_count: usize,
    pub sampled_count: usize,
    /// `None` when the bucket is empty.
    pub p90_diff: Option<f64>,
    pub frac_diff_one: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityProfile {
    /// Rule name as in [`AllocRule::name`].
    pub algorithm: String,
    /// The rule's shape parameter, if it has one.
    pub ell: Option<f64>,
    pub buckets: Vec<BucketSummary>,
    /// Qualifying pairs whose `lambda~` fell outside the range.
    pub discarded_pairs: usize,
}

/// Nearest-rank percentile: the `ceil(p n / 100)`-th smallest value.
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile * n as f64) / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Every unordered pair of auctions in the horizon whose bidder sets reach
/// the Jaccard threshold, as `(i, j, lambda~, d~)` sorted by `(i, j)`.
fn qualifying_pairs(
    h: &Horizon,
    rule: &AllocRule,
    jaccard_min: f64,
) -> Result<Vec<(usize, usize, f64, f64)>> {
    let auctions = &h.auctions;
    let allocations: Vec<Vec<f64>> = auctions
        .par_iter()
        .map(|a| rule.allocate(&a.values()).map(|x| x.into_vec()))
        .collect::<Result<_>>()?;

    let mut postings: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, a) in auctions.iter().enumerate() {
        for adv in a.bids.keys() {
            postings.entry(adv.as_str()).or_default().push(i);
        }
    }

    let per_auction: Vec<Vec<(usize, usize, f64, f64)>> = (0..auctions.len())
        .into_par_iter()
        .map(|i| {
            let u = &auctions[i];
            let mut shared_counts: BTreeMap<usize, usize> = BTreeMap::new();
            for adv in u.bids.keys() {
                for &j in &postings[adv.as_str()] {
                    if j > i {
                        *shared_counts.entry(j).or_default() += 1;
                    }
                }
            }
            shared_counts
                .into_iter()
                .filter_map(|(j, shared)| {
                    let v = &auctions[j];
                    let union = u.len() + v.len() - shared;
                    if (shared as f64 / union as f64) < jaccard_min {
                        return None;
                    }
                    Some(compare(u, &allocations[i], v, &allocations[j])).map(|(l, d)| (i, j, l, d))
                })
                .collect()
        })
        .collect();
    Ok(per_auction.into_iter().flatten().collect())
}

/// `(lambda~, d~)` from precomputed allocations in advertiser-id order.
fn compare(u: &AuctionInstance, xu: &[f64], v: &AuctionInstance, xv: &[f64]) -> (f64, f64) {
    let mut lambda = 1.0f64;
    let mut diff = 0.0f64;
    let mut left = u.bids.iter().zip(xu).peekable();
    let mut right = v.bids.iter().zip(xv).peekable();
    while let (Some(((a, &bu), &pu)), Some(((b, &bv), &pv))) = (left.peek(), right.peek()) {
        match a.cmp(b) {
            std::cmp::Ordering::Less => {
                left.next();
            }
            std::cmp::Ordering::Greater => {
                right.next();
            }
            std::cmp::Ordering::Equal => {
                lambda = lambda.max((bu / bv).max(bv / bu));
                diff = diff.max((pu - pv).abs());
                left.next();
                right.next();
            }
        }
    }
    (lambda, diff.min(1.0))
}

/// Builds the bid-stability profile of `rule` on one horizon.
///
/// Each bucket keeps a seeded reservoir of at most `max_samples_per_bucket`
/// pairs, fed in a fixed pair order, so the result does not depend on the
/// number of worker threads.
pub fn build_profile(
    h: &Horizon,
    rule: &AllocRule,
    cfg: &ProfileConfig,
) -> Result<StabilityProfile> {
    cfg.validate()?;
    rule.validate()?;
    if h.auctions.is_empty() {
        return Err(Error::EmptyHorizon);
    }
    let pairs = qualifying_pairs(h, rule, cfg.jaccard_min)?;
    let n = cfg.bucket_count();
    let mut reservoirs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut seen = vec![0usize; n];
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            rng
        })
        .collect();
    let mut discarded = 0;
    for &(_, _, lambda, diff) in &pairs {
        let Some(b) = cfg.bucket_of(lambda) else {
            discarded += 1;
            continue;
        };
        seen[b] += 1;
        if reservoirs[b].len() < cfg.max_samples_per_bucket {
            reservoirs[b].push(diff);
        } else {
            let slot = rngs[b].gen_range(0..seen[b]);
            if slot < cfg.max_samples_per_bucket {
                reservoirs[b][slot] = diff;
            }
        }
    }
    let buckets = (0..n)
        .map(|b| {
            let sample = &reservoirs[b];
            let ones = sample.iter().filter(|&&d| d >= 1.0 - ONE_TOL).count();
            BucketSummary {
                lo: cfg.edge(b),
                hi: cfg.edge(b + 1),
                pair_count: seen[b],
                sampled_count: sample.len(),
                p90_diff: nearest_rank_percentile(sample, cfg.percentile),
                frac_diff_one: (!sample.is_empty()).then(|| ones as f64 / sample.len() as f64),
            }
        })
        .collect();
    Ok(StabilityProfile {
        algorithm: rule.name().to_string(),
        ell: rule.parameter(),
        buckets,
        discarded_pairs: discarded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelfareTotals {
    pub total_welfare: f64,
    pub total_optimal: f64,
    pub ratio: f64,
}

impl WelfareTotals {
    fn from_sums(total_welfare: f64, total_optimal: f64) -> Self {
        Self {
            total_welfare,
            total_optimal,
            ratio: total_welfare / total_optimal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareEntry {
    pub algorithm: String,
    pub ell: Option<f64>,
    pub overall: WelfareTotals,
    /// Keyed by the number of bidders in the auction.
    pub by_k: BTreeMap<usize, WelfareTotals>,
    /// `x . b / max b` for each auction, in horizon order.
    pub per_auction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareReport {
    pub entries: Vec<WelfareEntry>,
}

/// Welfare of each rule summed over the horizon, against the sum of the
/// highest bids.
pub fn welfare_report(h: &Horizon, rules: &[AllocRule]) -> Result<WelfareReport> {
    if h.auctions.is_empty() {
        return Err(Error::EmptyHorizon);
    }
    let entries = rules
        .iter()
        .map(|rule| {
            rule.validate()?;
            let per: Vec<(usize, f64, f64)> = h
                .auctions
                .par_iter()
                .map(|a| {
                    let values = a.values();
                    let x = rule.allocate(&values)?;
                    Ok((a.len(), x.welfare(&values), values.max()))
                })
                .collect::<Result<_>>()?;
            let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            let (mut welfare, mut optimal) = (0.0, 0.0);
            for &(k, w, o) in &per {
                let slot = sums.entry(k).or_default();
                slot.0 += w;
                slot.1 += o;
                welfare += w;
                optimal += o;
            }
            Ok(WelfareEntry {
                algorithm: rule.name().to_string(),
                ell: rule.parameter(),
                overall: WelfareTotals::from_sums(welfare, optimal),
                by_k: sums
                    .into_iter()
                    .map(|(k, (w, o))| (k, WelfareTotals::from_sums(w, o)))
                    .collect(),
                per_auction: per.iter().map(|&(_, w, o)| w / o).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(WelfareReport { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamMatch {
    pub ell: f64,
    pub best_ell_prime: f64,
    pub spread: f64,
}

/// For each `(ell, profile)` in `a`, the candidate in `b` whose per-bucket
/// percentile ratio is most nearly constant: `spread = max_j |ln(p_a / p_b)|`
/// over buckets nonempty in both with `p_b > 0`. Ties go to the smaller
/// `ell'`. Candidates with no comparable bucket are skipped.
pub fn match_parameters(
    a: &[(f64, StabilityProfile)],
    b: &[(f64, StabilityProfile)],
) -> Result<Vec<ParamMatch>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig(
            "both profile sets must be nonempty".into(),
        ));
    }
    let mut candidates: Vec<&(f64, StabilityProfile)> = b.iter().collect();
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    a.iter()
        .map(|(ell, pa)| {
            let mut best: Option<(f64, f64)> = None;
            for (ell_prime, pb) in &candidates {
                if pa.buckets.len() != pb.buckets.len() {
                    return Err(Error::InvalidConfig(
                        "profiles have different bucket counts".into(),
                    ));
                }
                let ratios: Vec<f64> = pa
                    .buckets
                    .iter()
                    .zip(&pb.buckets)
                    .filter_map(|(x, y)| match (x.p90_diff, y.p90_diff) {
                        (Some(p), Some(q)) if q > 0.0 => Some((p / q).ln().abs()),
                        _ => None,
                    })
                    .collect();
                if ratios.is_empty() {
                    continue;
                }
                let spread = ratios.into_iter().fold(0.0, f64::max);
                if best.is_none_or(|(_, s)| spread < s) {
                    best = Some((*ell_prime, spread));
                }
            }
            let (best_ell_prime, spread) = best.ok_or(Error::NoComparableBuckets { ell: *ell })?;
            Ok(ParamMatch {
                ell: *ell,
                best_ell_prime,
                spread,
            })
        })
        .collect()
}

pub const PROFILE_CSV_HEADER: [&str; 8] = [
    "algorithm",
    "ell",
    "bucket_lo",
    "bucket_hi",
    "pair_count",
    "sampled_count",
    "p90_alloc_diff",
    "frac_diff_one",
];

pub const WELFARE_CSV_HEADER: [&str; 6] = [
    "algorithm",
    "ell",
    "k_slice",
    "total_welfare",
    "total_optimal",
    "ratio",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One row per bucket. Empty buckets leave the percentile and fraction
/// columns blank.
pub fn write_profile_csv<W: Write>(profiles: &[StabilityProfile], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(PROFILE_CSV_HEADER).map_err(csv_io)?;
    for p in profiles {
        for b in &p.buckets {
            out.write_record([
                p.algorithm.clone(),
                opt(p.ell),
                b.lo.to_string(),
                b.hi.to_string(),
                b.pair_count.to_string(),
                b.sampled_count.to_string(),
                opt(b.p90_diff),
                opt(b.frac_diff_one),
            ])
            .map_err(csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads profiles written by [`write_profile_csv`]. Consecutive rows with the
/// same `(algorithm, ell)` form one profile.
pub fn read_profile_csv<R: Read>(reader: R) -> Result<Vec<StabilityProfile>> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers().map_err(csv_io)?.clone();
    if header.iter().ne(PROFILE_CSV_HEADER) {
        return Err(Error::SchemaMismatch(format!(
            "expected header `{}`",
            PROFILE_CSV_HEADER.join(",")
        )));
    }
    let mut profiles: Vec<StabilityProfile> = Vec::new();
    for row in input.records() {
        let row = row.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::MalformedRow {
            line,
            reason: format!("bad {what}"),
        };
        let num = |i: usize, what: &str| row[i].parse::<f64>().map_err(|_| bad(what));
        let opt_num = |i: usize, what: &str| {
            if row[i].is_empty() {
                Ok(None)
            } else {
                num(i, what).map(Some)
            }
        };
        let count = |i: usize, what: &str| row[i].parse::<usize>().map_err(|_| bad(what));
        let algorithm = row[0].to_string();
        let ell = opt_num(1, "ell")?;
        let bucket = BucketSummary {
            lo: num(2, "bucket_lo")?,
            hi: num(3, "bucket_hi")?,
            pair_count: count(4, "pair_count")?,
            sampled_count: count(5, "sampled_count")?,
            p90_diff: opt_num(6, "p90_alloc_diff")?,
            frac_diff_one: opt_num(7, "frac_diff_one")?,
        };
        match profiles.last_mut() {
            Some(p) if p.algorithm == algorithm && p.ell == ell => p.buckets.push(bucket),
            _ => profiles.push(StabilityProfile {
                algorithm,
                ell,
                buckets: vec![bucket],
                discarded_pairs: 0,
            }),
        }
    }
    Ok(profiles)
}

/// One `all` row per rule followed by one row per bidder count.
pub fn write_welfare_csv<W: Write>(report: &WelfareReport, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(WELFARE_CSV_HEADER).map_err(csv_io)?;
    for e in &report.entries {
        let slices = std::iter::once(("all".to_string(), e.overall))
            .chain(e.by_k.iter().map(|(k, t)| (k.to_string(), *t)));
        for (slice, t) in slices {
            out.write_record([
                e.algorithm.clone(),
                opt(e.ell),
                slice,
                t.total_welfare.to_string(),
                t.total_optimal.to_string(),
                t.ratio.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}
