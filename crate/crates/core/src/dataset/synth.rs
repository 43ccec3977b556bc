use std::collections::HashSet;

use chrono::{Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{BidRecord, PERIODS_PER_DAY};
use crate::error::{Error, Result};

/// How far apart (multiplicatively) auctions of one keyword cluster are.
///
/// `[lambda_min, lambda_max]` is cut into `levels` equal bands; each ordinary
/// cluster is assigned one band and every pair of its auctions has a
/// similarity inside that band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityProfile {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub levels: usize,
}

impl Default for SimilarityProfile {
    fn default() -> Self {
        Self {
            lambda_min: 1.0,
            lambda_max: 2.0,
            levels: 10,
        }
    }
}

impl SimilarityProfile {
    fn band(&self, level: usize) -> (f64, f64) {
        let width = (self.lambda_max - self.lambda_min) / self.levels as f64;
        let lo = self.lambda_min + width * level as f64;
        (lo, lo + width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub keywords: usize,
    /// Size of the advertiser pool.
    pub advertisers: usize,
    pub months: usize,
    /// Auctions per keyword per month.
    pub auctions_per_keyword: usize,
    /// Keywords sharing one base bid vector and bidder set.
    pub cluster_size: usize,
    /// Bidders present in every auction of a cluster.
    pub bidders_per_cluster: usize,
    /// Share of clusters whose top two bids differ by under 2%, with the
    /// winner alternating between auctions.
    pub near_tie_fraction: f64,
    pub pair_similarity_profile: SimilarityProfile,
    /// Log-normal sigma of the base bids.
    pub bid_sigma: f64,
    /// Chance that an auction also gets one low outside bidder.
    pub extra_bidder_probability: f64,
    /// Chance that a bid is preceded by an older, superseded bid.
    pub stale_bid_probability: f64,
    pub start_year: i32,
    pub start_month: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            keywords: 200,
            advertisers: 400,
            months: 3,
            auctions_per_keyword: 5,
            cluster_size: 4,
            bidders_per_cluster: 6,
            near_tie_fraction: 0.2,
            pair_similarity_profile: SimilarityProfile::default(),
            bid_sigma: 2.0,
            extra_bidder_probability: 0.3,
            stale_bid_probability: 0.1,
            start_year: 2002,
            start_month: 10,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        let counts = [
            ("keywords", self.keywords),
            ("advertisers", self.advertisers),
            ("months", self.months),
            ("auctions_per_keyword", self.auctions_per_keyword),
            ("cluster_size", self.cluster_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.bidders_per_cluster < 2 {
            return bad("bidders_per_cluster must be at least 2");
        }
        if self.advertisers < self.clusters() * self.bidders_per_cluster {
            return Err(Error::InvalidConfig(format!(
                "{} clusters of {} bidders need at least {} advertisers",
                self.clusters(),
                self.bidders_per_cluster,
                self.clusters() * self.bidders_per_cluster
            )));
        }
        let per_cluster = self.cluster_size * self.auctions_per_keyword;
        if self.bidders_per_cluster < 63 && per_cluster > 1 << self.bidders_per_cluster {
            return bad(
                "cluster_size * auctions_per_keyword must not exceed 2^bidders_per_cluster",
            );
        }
        if self.auctions_per_keyword > 28 * PERIODS_PER_DAY as usize {
            return bad("auctions_per_keyword exceeds the periods in a month");
        }
        for (name, p) in [
            ("near_tie_fraction", self.near_tie_fraction),
            ("extra_bidder_probability", self.extra_bidder_probability),
            ("stale_bid_probability", self.stale_bid_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.bid_sigma.is_finite() && self.bid_sigma >= 0.0) {
            return bad("bid_sigma must be finite and nonnegative");
        }
        let profile = &self.pair_similarity_profile;
        if !(profile.lambda_min >= 1.0
            && profile.lambda_max > profile.lambda_min
            && profile.lambda_max.is_finite())
        {
            return bad("similarity profile needs 1 <= lambda_min < lambda_max < inf");
        }
        if profile.levels == 0 {
            return bad("similarity profile needs at least one level");
        }
        if !(1..=12).contains(&self.start_month) {
            return bad("start_month must lie in 1..=12");
        }
        Ok(())
    }

    fn clusters(&self) -> usize {
        self.keywords.div_ceil(self.cluster_size)
    }

    fn cluster_keywords(&self, cluster: usize) -> std::ops::Range<usize> {
        let start = cluster * self.cluster_size;
        start..(start + self.cluster_size).min(self.keywords)
    }

    /// Near-tie clusters are spread evenly over the cluster index range.
    fn is_near_tie(&self, cluster: usize) -> bool {
        let f = self.near_tie_fraction;
        ((cluster + 1) as f64 * f).floor() > (cluster as f64 * f).floor()
    }

    /// Similarity level of each cluster; `None` for near-tie clusters.
    fn levels(&self) -> Vec<Option<usize>> {
        let mut ordinary = 0;
        (0..self.clusters())
            .map(|c| {
                if self.is_near_tie(c) {
                    None
                } else {
                    ordinary += 1;
                    Some((ordinary - 1) % self.pair_similarity_profile.levels)
                }
            })
            .collect()
    }
}

/// Expected fraction of winner flips under highest-bid among the pairs of a
/// horizon whose similarity lies below the first level's upper edge.
///
/// Those pairs are the pairs inside near-tie clusters and inside ordinary
/// first-level clusters. In a near-tie cluster the winner alternates, so
/// `ceil(n/2) floor(n/2)` of its `n (n-1) / 2` pairs flip.
pub fn planted_flip_rate(config: &SyntheticConfig) -> Result<f64> {
    config.validate()?;
    let (mut flips, mut pairs) = (0usize, 0usize);
    for (c, level) in config.levels().into_iter().enumerate() {
        let n = config.cluster_keywords(c).len() * config.auctions_per_keyword;
        match level {
            None => {
                flips += n.div_ceil(2) * (n / 2);
                pairs += n * n.saturating_sub(1) / 2;
            }
            Some(0) => pairs += n * n.saturating_sub(1) / 2,
            Some(_) => {}
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        flips as f64 / pairs as f64
    })
}

/// Per-coordinate log-noise of one auction.
enum Noise {
    /// Independent uniform noise in `[-half, half]`.
    Jitter { half: f64 },
    /// `+-shift` by the bits of the auction's index within the cluster, plus
    /// uniform noise in `[-half, half]`. Two auctions then differ by about
    /// `2 shift` on some coordinate and by at most `2 (shift + half)` on all.
    Coded { shift: f64, half: f64 },
}

/// Generates a bid log of clustered keywords. Deterministic in
/// `(seed, config)`.
///
/// Each cluster has a fixed set of base bidders and a log-normal base bid
/// vector. Every auction of the cluster perturbs the base bids so that any
/// two auctions of an ordinary cluster are similar within the cluster's band.
/// Ordinary clusters keep the same highest bidder throughout. Near-tie
/// clusters have their top two bids within 2% and swap the winner between
/// consecutive auctions.
pub fn gen_synthetic(seed: u64, config: &SyntheticConfig) -> Result<Vec<BidRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lognormal = LogNormal::new(0.0, config.bid_sigma)
        .map_err(|e| Error::InvalidConfig(format!("bid_sigma: {e}")))?;
    let profile = &config.pair_similarity_profile;
    let bidders = config.bidders_per_cluster;
    let clusters = config.clusters();
    let start = NaiveDate::from_ymd_opt(config.start_year, config.start_month, 1)
        .ok_or_else(|| Error::InvalidConfig("invalid start month".into()))?;

    let (_, first_hi) = profile.band(0);
    // Near-tie auctions: the flipped top pair may differ by up to 1.5% on
    // top of the noise, and must still stay in the first band.
    let tie_half = 0.45 * (first_hi / 1.02).ln().max(0.0);

    let mut records = Vec::new();
    let levels = config.levels();
    let bases: Vec<Vec<f64>> = levels
        .iter()
        .map(|level| {
            let mut base: Vec<f64> = (0..bidders).map(|_| lognormal.sample(&mut rng)).collect();
            base.sort_by(|a, b| b.total_cmp(a));
            match level {
                Some(level) => {
                    let (_, hi) = profile.band(*level);
                    base[0] = base[0].max(base[1] * hi * 1.05);
                }
                None => {
                    let cap = base[0] / (first_hi * 1.1);
                    for b in &mut base[2..] {
                        *b = b.min(cap);
                    }
                }
            }
            base
        })
        .collect();

    for month in 0..config.months {
        let first_day = start
            .checked_add_months(Months::new(month as u32))
            .ok_or_else(|| Error::InvalidConfig("month range overflows the calendar".into()))?;
        let days = days_in_month(first_day);
        for (c, level) in levels.iter().enumerate() {
            let noise = match level {
                None => Noise::Jitter { half: tie_half },
                Some(level) => {
                    let (lo, hi) = profile.band(*level);
                    if lo <= 1.0 {
                        Noise::Jitter {
                            half: 0.45 * hi.ln(),
                        }
                    } else {
                        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
                        Noise::Coded {
                            shift: (ln_lo + ln_hi) / 4.0,
                            half: 0.2 * (ln_hi - ln_lo),
                        }
                    }
                }
            };
            let block: Vec<usize> = (0..bidders).map(|j| c * bidders + j).collect();
            for (r, keyword) in config.cluster_keywords(c).enumerate() {
                let mut slots = HashSet::new();
                for a in 0..config.auctions_per_keyword {
                    let id = r * config.auctions_per_keyword + a;
                    let (day, period) = loop {
                        let slot = (rng.gen_range(0..days), rng.gen_range(0..PERIODS_PER_DAY));
                        if slots.insert(slot) {
                            break slot;
                        }
                    };
                    let day = first_day + chrono::Days::new(day as u64);

                    let mut bids: Vec<(usize, f64)> = block
                        .iter()
                        .enumerate()
                        .map(|(j, &adv)| {
                            let n = match noise {
                                Noise::Jitter { half } => rng.gen_range(-half..=half),
                                Noise::Coded { shift, half } => {
                                    let sign = if id >> j & 1 == 1 { 1.0 } else { -1.0 };
                                    sign * shift + rng.gen_range(-half..=half)
                                }
                            };
                            (adv, bases[c][j] * n.exp())
                        })
                        .collect();
                    if level.is_none() {
                        let top = bases[c][0] * rng.gen_range(-tie_half..=tie_half).exp();
                        let delta = rng.gen_range(0.002..0.015);
                        let winner = id % 2;
                        bids[winner].1 = top * (1.0 + delta);
                        bids[1 - winner].1 = top;
                    }
                    if clusters > 1 && rng.gen_bool(config.extra_bidder_probability) {
                        let outside = rng.gen_range(0..config.advertisers - bidders);
                        let adv = if outside >= c * bidders {
                            outside + bidders
                        } else {
                            outside
                        };
                        let low = bids.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
                        bids.push((adv, low * rng.gen_range(0.3..0.9)));
                    }
                    bids.shuffle(&mut rng);

                    let mut seq = 0u64;
                    for (adv, bid) in bids {
                        let record = |seq: u64, bid: f64| BidRecord {
                            day,
                            period,
                            seq,
                            keyword_id: format!("kw{keyword:04}"),
                            advertiser_id: format!("adv{adv:04}"),
                            bid,
                        };
                        if rng.gen_bool(config.stale_bid_probability) {
                            let stale = bid * rng.gen_range(0.5..2.0);
                            records.push(record(seq + 1, bid));
                            records.push(record(seq, stale));
                            seq += 2;
                        } else {
                            records.push(record(seq, bid));
                            seq += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(records)
}

fn days_in_month(first: NaiveDate) -> u32 {
    ((first + Months::new(1)) - first).num_days() as u32
}
