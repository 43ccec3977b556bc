//! Truthful payments through the payment identity.
//!
//! For a rule whose allocation `x_i(z, v_-i)` is non-decreasing in the
//! advertiser's own report `z`, the truthful payment normalised at zero is
//!
//! ```text
//! p_i(v) = v_i x_i(v) - integral_0^{v_i} x_i(z, v_-i) dz
//! ```
//!
//! The integrand is piecewise smooth: it has kinks (IPA) or jumps (highest
//! bid) where the support of the allocation changes. The integral is split at
//! every such point before adaptive Simpson runs on the smooth pieces.

use serde::Serialize;

use crate::alloc::{AllocationRule, ValueVector};
use crate::error::{Error, Result};

/// Slack allowed when checking that a sampled allocation curve is monotone.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Absolute error target for one integral.
    pub tol: f64,
    /// Maximum recursion depth of adaptive Simpson on one piece.
    pub max_depth: u32,
    /// Uniform scan points used to detect support changes.
    pub scan_points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_depth: 50,
            scan_points: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaymentResult {
    pub payment: f64,
    pub allocation_at_truth: f64,
    pub quadrature_error_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcReport {
    /// Best utility gain from any misreport on the grid (>= 0).
    pub regret: f64,
    /// Accumulated quadrature error estimate behind the utilities.
    pub quadrature_error_estimate: f64,
}

/// `x_i` as a function of advertiser `i`'s own report, others held fixed.
struct OwnAllocation<'a, R: ?Sized> {
    rule: &'a R,
    values: Vec<f64>,
    index: usize,
}

impl<'a, R: AllocationRule + ?Sized> OwnAllocation<'a, R> {
    fn new(rule: &'a R, values: &ValueVector, index: usize) -> Result<Self> {
        if index >= values.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: values.len(),
            });
        }
        Ok(Self {
            rule,
            values: values.as_slice().to_vec(),
            index,
        })
    }

    fn allocation(&self, z: f64) -> Result<Vec<f64>> {
        let mut values = self.values.clone();
        values[self.index] = z;
        Ok(self.rule.allocate(&ValueVector::new(values)?)?.into_vec())
    }

    fn eval(&self, z: f64) -> Result<f64> {
        Ok(self.allocation(z)?[self.index])
    }

    fn support(&self, z: f64) -> Result<Vec<bool>> {
        Ok(self.allocation(z)?.iter().map(|&p| p > 0.0).collect())
    }

    /// `integral_0^z x_i` at every `z` in `points` (sorted, nonnegative),
    /// from one pass over `[0, max z]`, with the total error estimate.
    fn integrate_at(&self, points: &[f64], quad: &QuadratureConfig) -> Result<(Vec<f64>, f64)> {
        let hi = points.last().copied().unwrap_or(0.0);
        if hi <= 0.0 {
            return Ok((vec![0.0; points.len()], 0.0));
        }
        let breaks = self.breakpoints(0.0, hi, points, quad)?;
        let mut cumulative = Vec::with_capacity(points.len());
        let mut pending = points.iter().peekable();
        while pending.next_if(|&&z| z <= 0.0).is_some() {
            cumulative.push(0.0);
        }
        let mut total = 0.0;
        let mut error = 0.0;
        let mut converged = true;
        for w in breaks.windows(2) {
            let piece_tol = quad.tol * (w[1] - w[0]) / hi;
            let (value, err, ok) = self.simpson_piece(w[0], w[1], piece_tol, quad.max_depth)?;
            total += value;
            error += err;
            converged &= ok;
            while pending.next_if(|&&z| z <= w[1]).is_some() {
                cumulative.push(total);
            }
        }
        if !converged && error > quad.tol {
            return Err(Error::QuadratureNotConverged {
                tol: quad.tol,
                estimate: error,
            });
        }
        Ok((cumulative, error))
    }

    /// Sorted piece boundaries: the interval ends, `extra`, the other
    /// advertisers' values (where orderings change), a uniform scan, and
    /// every located change of the allocation's support.
    fn breakpoints(
        &self,
        lo: f64,
        hi: f64,
        extra: &[f64],
        quad: &QuadratureConfig,
    ) -> Result<Vec<f64>> {
        let mut grid: Vec<f64> = vec![lo, hi];
        grid.extend(extra.iter().copied().filter(|&z| z > lo && z < hi));
        grid.extend(
            self.values
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != self.index && v > lo && v < hi)
                .map(|(_, &v)| v),
        );
        let n = quad.scan_points.max(1);
        grid.extend((1..n).map(|s| lo + (hi - lo) * s as f64 / n as f64));
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        let mut samples = Vec::with_capacity(grid.len());
        for &z in &grid {
            let alloc = self.allocation(z)?;
            samples.push((
                alloc[self.index],
                alloc.iter().map(|&p| p > 0.0).collect::<Vec<_>>(),
            ));
        }
        for (w, z) in samples.windows(2).zip(grid.windows(2)) {
            if w[1].0 < w[0].0 - MONOTONE_SLACK {
                return Err(Error::NonMonotoneRule {
                    index: self.index,
                    at: z[1],
                });
            }
        }

        let mut breaks = grid.clone();
        for (w, z) in samples.windows(2).zip(grid.windows(2)) {
            if w[0].1 != w[1].1 {
                self.locate_changes(z[0], &w[0].1, z[1], &w[1].1, 8, &mut breaks)?;
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        Ok(breaks)
    }

    /// Bisects for the point where the support switches away from
    /// `support_a`, recursing when more than one switch lies in `(a, b)`.
    fn locate_changes(
        &self,
        mut a: f64,
        support_a: &[bool],
        b: f64,
        support_b: &[bool],
        depth: u32,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let mut hi = b;
        let mut support_hi = support_b.to_vec();
        for _ in 0..80 {
            if hi - a <= 1e-15 * hi.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            let mid = 0.5 * (a + hi);
            if mid <= a || mid >= hi {
                break;
            }
            let s = self.support(mid)?;
            if s == support_a {
                a = mid;
            } else {
                hi = mid;
                support_hi = s;
            }
        }
        out.push(hi);
        if depth > 0 && support_hi != support_b && hi < b {
            self.locate_changes(hi, &support_hi, b, support_b, depth - 1, out)?;
        }
        Ok(())
    }

    /// Adaptive Simpson on a piece whose interior is smooth. The end samples
    /// are taken just inside the piece so that jumps located exactly at the
    /// boundary do not leak into it.
    fn simpson_piece(&self, a: f64, b: f64, tol: f64, depth: u32) -> Result<(f64, f64, bool)> {
        let nudge = (b - a) * 1e-12;
        let fa = self.eval(a + nudge)?;
        let fb = self.eval(b - nudge)?;
        let m = 0.5 * (a + b);
        let fm = self.eval(m)?;
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        self.simpson_step(a, b, fa, fm, fb, whole, tol, depth)
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson_step(
        &self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<(f64, f64, bool)> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.eval(lm)?;
        let frm = self.eval(rm)?;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok((left + right + delta / 15.0, delta.abs() / 15.0, true));
        }
        if depth == 0 || m <= a || m >= b {
            return Ok((left + right + delta / 15.0, delta.abs() / 15.0, false));
        }
        let (lv, le, lok) = self.simpson_step(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let (rv, re, rok) = self.simpson_step(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Ok((lv + rv, le + re, lok && rok))
    }
}

/// Truthful payment of advertiser `index` (0-based) under `rule`.
pub fn payment_identity<R: AllocationRule + ?Sized>(
    rule: &R,
    values: &ValueVector,
    index: usize,
    quad: &QuadratureConfig,
) -> Result<PaymentResult> {
    let own = OwnAllocation::new(rule, values, index)?;
    let vi = values.as_slice()[index];
    let at_truth = own.eval(vi)?;
    if vi == 0.0 {
        return Ok(PaymentResult {
            payment: 0.0,
            allocation_at_truth: at_truth,
            quadrature_error_estimate: 0.0,
        });
    }
    let (integral, error) = own.integrate_at(&[vi], quad)?;
    let integral = integral[0];
    let revenue_cap = vi * at_truth;
    let mut payment = revenue_cap - integral;
    // Rounding can push the payment a hair outside [0, v_i x_i].
    let slack = error + 1e-12 * revenue_cap.abs().max(vi);
    if payment < 0.0 && payment >= -slack {
        payment = 0.0;
    } else if payment > revenue_cap && payment <= revenue_cap + slack {
        payment = revenue_cap;
    }
    Ok(PaymentResult {
        payment,
        allocation_at_truth: at_truth,
        quadrature_error_estimate: error,
    })
}

/// Samples `x_i` on `{0}` plus a geometric grid of `grid` points over
/// `[v_i / 100, 100 v_i]` and reports whether it never decreases (within
/// 1e-12). For a zero value the grid is centred on the largest value instead.
pub fn check_monotone<R: AllocationRule + ?Sized>(
    rule: &R,
    values: &ValueVector,
    index: usize,
    grid: usize,
) -> Result<bool> {
    if grid < 2 {
        return Err(Error::InvalidGrid { min: 2, got: grid });
    }
    let own = OwnAllocation::new(rule, values, index)?;
    let centre = grid_centre(values, index);
    let mut points = vec![0.0];
    points.extend(geometric_grid(centre / 100.0, centre * 100.0, grid));
    let mut previous = f64::NEG_INFINITY;
    for z in points {
        let x = own.eval(z)?;
        if x < previous - 1e-12 {
            return Ok(false);
        }
        previous = x;
    }
    Ok(true)
}

/// Largest utility gain advertiser `index` can get by misreporting, with
/// payments from the payment identity. See [`ic_regret_report`].
pub fn ic_regret<R: AllocationRule + ?Sized>(
    rule: &R,
    values: &ValueVector,
    index: usize,
    deviations: usize,
    quad: &QuadratureConfig,
) -> Result<f64> {
    Ok(ic_regret_report(rule, values, index, deviations, quad)?.regret)
}

/// Misreports range over `{0}` and a geometric grid of `deviations` points on
/// `[v_i / 1000, 1000 v_i]`. Utilities are `v_i x_i(z) - p_i(z)`; the integral
/// inside `p_i` is accumulated in one pass over the sorted grid.
pub fn ic_regret_report<R: AllocationRule + ?Sized>(
    rule: &R,
    values: &ValueVector,
    index: usize,
    deviations: usize,
    quad: &QuadratureConfig,
) -> Result<IcReport> {
    if deviations < 1 {
        return Err(Error::InvalidGrid {
            min: 1,
            got: deviations,
        });
    }
    let own = OwnAllocation::new(rule, values, index)?;
    let vi = values.as_slice()[index];
    let centre = grid_centre(values, index);
    let mut reports = vec![0.0, vi];
    reports.extend(geometric_grid(
        centre / 1e3,
        centre * 1e3,
        deviations.max(2),
    ));
    if deviations == 1 {
        reports.truncate(2);
        reports.push(centre);
    }
    reports.sort_by(f64::total_cmp);
    reports.dedup();

    let (integrals, error) = own.integrate_at(&reports, quad)?;
    let mut truthful = None;
    let mut best = f64::NEG_INFINITY;
    for (&z, integral) in reports.iter().zip(integrals) {
        let x = own.eval(z)?;
        // v_i x(z) - p(z) with p(z) = z x(z) - integral_0^z x.
        let utility = vi * x - (z * x - integral);
        if z == vi {
            truthful = Some(utility);
        }
        best = best.max(utility);
    }
    let truthful = truthful.expect("truthful report is on the grid");
    Ok(IcReport {
        regret: (best - truthful).max(0.0),
        quadrature_error_estimate: error,
    })
}

fn grid_centre(values: &ValueVector, index: usize) -> f64 {
    let vi = values.as_slice()[index];
    if vi > 0.0 {
        vi
    } else if values.max() > 0.0 {
        values.max()
    } else {
        1.0
    }
}

fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|s| (ln_lo + (ln_hi - ln_lo) * s as f64 / (n - 1) as f64).exp())
        .collect()
}
