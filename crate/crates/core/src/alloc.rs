//! Single-slot allocation rules.
//!
//! Every rule maps a vector of nonnegative advertiser values to a probability
//! distribution over the advertisers. The inverse proportional family starts
//! from a full (infeasible) allocation of 1 per advertiser and removes mass in
//! proportion to `g(v) = v^-ell` until exactly one unit remains, dropping
//! advertisers whose allocation would turn negative.
//!
//! All rules here are anonymous, scale-free and weakly monotone in each
//! advertiser's own value.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex constraint for allocations built by this crate.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Default bisection tolerance of [`ipa_allocate_threshold`] (relative, on `t`).
pub const DEFAULT_THRESHOLD_TOL: f64 = 1e-12;

/// Iteration cap of the threshold bisection.
pub const BISECTION_MAX_ITER: usize = 200;

/// Nonnegative, finite advertiser values for one auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ValueVector(Vec<f64>);

impl ValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
            if value < 0.0 {
                return Err(Error::NegativeValue { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Copy of `self` with coordinate `index` replaced by `value`.
    pub fn with_value(&self, index: usize, value: f64) -> Result<Self> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let mut values = self.0.clone();
        values[index] = value;
        Self::new(values)
    }

    /// Every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for ValueVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ValueVector> for Vec<f64> {
    fn from(values: ValueVector) -> Self {
        values.0
    }
}

/// A probability distribution over the advertisers of one auction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    probs: Vec<f64>,
}

impl Allocation {
    /// Validates that `probs` lies on the simplex (entries in [0, 1], sum 1
    /// within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(p) = probs.iter().find(|p| !(-1e-12..=1.0 + 1e-12).contains(*p)) {
            return Err(Error::InvalidAllocation(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidAllocation(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(!probs.is_empty());
        Self { probs }
    }

    pub fn uniform(k: usize) -> Self {
        Self::from_raw(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Indices with strictly positive probability, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Expected value `x . v` delivered by this allocation.
    pub fn welfare(&self, values: &ValueVector) -> f64 {
        self.probs
            .iter()
            .zip(values.as_slice())
            .map(|(x, v)| x * v)
            .sum()
    }

    /// Largest coordinatewise absolute difference.
    pub fn max_abs_diff(&self, other: &Allocation) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Anything that maps a value vector to an allocation.
pub trait AllocationRule {
    fn allocate(&self, values: &ValueVector) -> Result<Allocation>;
}

impl<R: AllocationRule + ?Sized> AllocationRule for &R {
    fn allocate(&self, values: &ValueVector) -> Result<Allocation> {
        (**self).allocate(values)
    }
}

/// Descriptor of one of the built-in allocation rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AllocRule {
    Ipa { ell: f64 },
    CappedIpa { ell: f64, beta: f64 },
    Proportional { exponent: f64 },
    HighestBid,
    Uniform,
}

impl AllocRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AllocRule::Ipa { ell } => check_ell(ell),
            AllocRule::CappedIpa { ell, beta } => {
                check_ell(ell)?;
                check_beta(beta)
            }
            AllocRule::Proportional { exponent } => check_exponent(exponent),
            AllocRule::HighestBid | AllocRule::Uniform => Ok(()),
        }
    }

    /// Short machine name, as used in CSV outputs.
    pub fn name(&self) -> &'static str {
        match self {
            AllocRule::Ipa { .. } => "ipa",
            AllocRule::CappedIpa { .. } => "capped-ipa",
            AllocRule::Proportional { .. } => "pa",
            AllocRule::HighestBid => "highest-bid",
            AllocRule::Uniform => "uniform",
        }
    }

    /// The rule's shape parameter: `ell` for the IPA variants, the exponent
    /// for proportional allocation.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            AllocRule::Ipa { ell } | AllocRule::CappedIpa { ell, .. } => Some(ell),
            AllocRule::Proportional { exponent } => Some(exponent),
            AllocRule::HighestBid | AllocRule::Uniform => None,
        }
    }
}

impl fmt::Display for AllocRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AllocRule::Ipa { ell } => write!(f, "ipa(ell={ell})"),
            AllocRule::CappedIpa { ell, beta } => write!(f, "capped-ipa(ell={ell}, beta={beta})"),
            AllocRule::Proportional { exponent } => write!(f, "pa(exponent={exponent})"),
            AllocRule::HighestBid => f.write_str("highest-bid"),
            AllocRule::Uniform => f.write_str("uniform"),
        }
    }
}

impl AllocationRule for AllocRule {
    fn allocate(&self, values: &ValueVector) -> Result<Allocation> {
        allocate(self, values)
    }
}

/// Dispatches to the rule described by `rule`.
pub fn allocate(rule: &AllocRule, values: &ValueVector) -> Result<Allocation> {
    match *rule {
        AllocRule::Ipa { ell } => ipa_allocate(values, ell),
        AllocRule::CappedIpa { ell, beta } => capped_ipa_allocate(values, ell, beta),
        AllocRule::Proportional { exponent } => proportional_allocate(values, exponent),
        AllocRule::HighestBid => Ok(highest_bid_allocate(values)),
        AllocRule::Uniform => Ok(Allocation::uniform(values.len())),
    }
}

pub(crate) fn check_ell(ell: f64) -> Result<()> {
    if ell.is_finite() && ell > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEll(ell))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

fn check_exponent(exponent: f64) -> Result<()> {
    if exponent.is_finite() && exponent > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(exponent))
    }
}

/// `ln(a / b)` for positive finite `a`, `b`, without overflowing the ratio.
fn ln_ratio(a: f64, b: f64) -> f64 {
    let r = a / b;
    if r.is_finite() && r > 0.0 {
        r.ln()
    } else {
        a.ln() - b.ln()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Inverse proportional allocation with `g(v) = v^-ell`.
///
/// Positive values are visited in ascending order; the lowest remaining
/// advertiser is dropped while `(m - 1) g(v_low) >= sum g` over the `m`
/// remaining advertisers. Survivors receive `1 - (m - 1) g(v_i) / sum g`.
/// Zero values never survive unless every value is zero, in which case the
/// allocation is uniform. Output is in the caller's index order.
pub fn ipa_allocate(values: &ValueVector, ell: f64) -> Result<Allocation> {
    check_ell(ell)?;
    let v = values.as_slice();
    let k = v.len();
    let top = values.max();
    if top == 0.0 {
        return Ok(Allocation::uniform(k));
    }

    let mut order: Vec<usize> = (0..k).filter(|&i| v[i] > 0.0).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let n = order.len();

    // ln g(v_j) - ln g(top): nonnegative and non-increasing along `order`.
    let log_g: Vec<f64> = order.iter().map(|&i| ell * ln_ratio(top, v[i])).collect();
    let mut suffix = vec![0.0; n];
    suffix[n - 1] = log_g[n - 1];
    for s in (0..n - 1).rev() {
        suffix[s] = log_add_exp(log_g[s], suffix[s + 1]);
    }

    // (m - 1) g_s >= sum_{j >= s} g_j, rearranged to (m - 2) g_s >= sum_{j > s} g_j
    // so the two sides do not share the g_s term.
    let mut s = 0;
    while s + 1 < n && ((n - s - 2) as f64).ln() + log_g[s] >= suffix[s + 1] {
        s += 1;
    }

    let m = n - s;
    // Weights relative to the lowest survivor, all in (0, 1].
    let rel: Vec<f64> = log_g[s..].iter().map(|a| (a - log_g[s]).exp()).collect();
    let total: f64 = rel.iter().sum();
    // 1 - (m-1) r_i / total, written as (sum_{j != i} r_j - (m-2) r_i) / total
    // so that a tiny share is not lost to cancellation against 1.
    let mut after = vec![0.0; m + 1];
    for j in (0..m).rev() {
        after[j] = after[j + 1] + rel[j];
    }
    let mut before = 0.0;
    let mut probs = vec![0.0; k];
    for (j, (&i, &r)) in order[s..].iter().zip(&rel).enumerate() {
        let others = before + after[j + 1];
        probs[i] = ((others - (m as f64 - 2.0) * r) / total).max(0.0);
        before += r;
    }
    Ok(Allocation::from_raw(probs))
}

/// Threshold formulation of IPA, solved by bisection.
///
/// Finds `t*` with `sum_i max(0, 1 - t g(v_i)) = 1` and returns the clipped
/// coordinates at `t*`. Bisection stops once the bracket is narrower than
/// `tol` relative to its upper end. This is a deliberately separate code path
/// from [`ipa_allocate`] and is used to cross-check it.
pub fn ipa_allocate_threshold(values: &ValueVector, ell: f64, tol: f64) -> Result<Allocation> {
    check_ell(ell)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidTolerance(tol));
    }
    let v = values.as_slice();
    let k = v.len();
    let top = values.max();
    if top == 0.0 {
        return Ok(Allocation::uniform(k));
    }
    let positive = v.iter().filter(|&&x| x > 0.0).count();
    if positive == 1 {
        return Ok(Allocation::from_raw(
            v.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
        ));
    }

    // g normalised so that g(top) = 1; zero values have g = inf.
    let g: Vec<f64> = v
        .iter()
        .map(|&x| {
            if x > 0.0 {
                (x / top).powf(-ell)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let clipped = |t: f64, gi: f64| (1.0 - t * gi).max(0.0);
    let mass = |t: f64| g.iter().map(|&gi| clipped(t, gi)).sum::<f64>();

    // mass(0+) >= 2 > 1 and mass(k) = 0 since every g >= 1.
    let (mut lo, mut hi) = (0.0_f64, k as f64);
    let mut converged = false;
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * hi {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::BisectionNotConverged {
            iterations: BISECTION_MAX_ITER,
        });
    }
    let t = 0.5 * (lo + hi);
    Ok(Allocation::from_raw(
        g.iter().map(|&gi| clipped(t, gi)).collect(),
    ))
}

/// Unclipped IPA weights over a fixed serve set.
///
/// For `i` in `serve_set` returns `1 - (|S| - 1) g(v_i) / sum_{j in S} g(v_j)`
/// (possibly negative); other entries are 0. Indices are 0-based.
pub fn restricted_alloc(values: &ValueVector, serve_set: &[usize], ell: f64) -> Result<Vec<f64>> {
    check_ell(ell)?;
    let v = values.as_slice();
    let mut set: Vec<usize> = serve_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() {
        return Err(Error::EmptyServeSet);
    }
    for &i in &set {
        if i >= v.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: v.len(),
            });
        }
        if v[i] == 0.0 {
            return Err(Error::ZeroValueInServeSet { index: i });
        }
    }
    let low = set.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
    // g(v_i) / g(low) = (low / v_i)^ell, in (0, 1].
    let rel: Vec<f64> = set
        .iter()
        .map(|&i| (ell * ln_ratio(low, v[i])).exp())
        .collect();
    let total: f64 = rel.iter().sum();
    let deduct = (set.len() - 1) as f64;
    let mut out = vec![0.0; v.len()];
    for (&i, r) in set.iter().zip(&rel) {
        out[i] = 1.0 - deduct * r / total;
    }
    Ok(out)
}

/// IPA with probability `beta`, uniform with probability `1 - beta`.
pub fn capped_ipa_allocate(values: &ValueVector, ell: f64, beta: f64) -> Result<Allocation> {
    check_beta(beta)?;
    let ipa = ipa_allocate(values, ell)?;
    let floor = (1.0 - beta) / values.len() as f64;
    Ok(Allocation::from_raw(
        ipa.probs.iter().map(|x| beta * x + floor).collect(),
    ))
}

/// Proportional allocation: `x_i = v_i^p / sum_j v_j^p`.
pub fn proportional_allocate(values: &ValueVector, exponent: f64) -> Result<Allocation> {
    check_exponent(exponent)?;
    let v = values.as_slice();
    let top = values.max();
    if top == 0.0 {
        return Ok(Allocation::uniform(v.len()));
    }
    // (v_i / top)^p in log space; tiny ratios underflow to 0 harmlessly.
    let weights: Vec<f64> = v
        .iter()
        .map(|&x| {
            if x > 0.0 {
                (exponent * ln_ratio(x, top)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(Allocation::from_raw(
        weights.iter().map(|w| w / total).collect(),
    ))
}

/// Highest value wins; ties split equally among all maximisers.
pub fn highest_bid_allocate(values: &ValueVector) -> Allocation {
    let v = values.as_slice();
    let top = values.max();
    let winners = v.iter().filter(|&&x| x == top).count();
    let share = 1.0 / winners as f64;
    Allocation::from_raw(
        v.iter()
            .map(|&x| if x == top { share } else { 0.0 })
            .collect(),
    )
}
