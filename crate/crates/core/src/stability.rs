//! Value stability, welfare ratios and closed-form bound calculators.
//!
//! Two value vectors are `lambda`-similar when every coordinate differs by at
//! most a factor `lambda`. A rule is stable with respect to `f` when
//! `lambda`-similar inputs move no advertiser's allocation by more than
//! `f(lambda)`. IPA(ell) meets `f_ell(lambda) = 1 - lambda^(-2 ell)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alloc::{check_ell, ipa_allocate, Allocation, AllocationRule, ValueVector};
use crate::error::{Error, Result};

/// Largest per-coordinate multiplicative gap between `v` and `w`.
///
/// Coordinates that are zero in both vectors contribute 1; a coordinate that
/// is zero in exactly one of them makes the result infinite.
pub fn stability_param(v: &ValueVector, w: &ValueVector) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: w.len(),
        });
    }
    let mut lambda = 1.0f64;
    for (&a, &b) in v.as_slice().iter().zip(w.as_slice()) {
        let ratio = match (a == 0.0, b == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => f64::INFINITY,
            (false, false) => (a / b).max(b / a),
        };
        lambda = lambda.max(ratio);
    }
    Ok(lambda)
}

/// `f_ell(lambda) = 1 - lambda^(-2 ell)`, with `f_ell(inf) = 1`.
pub fn f_ell(lambda: f64, ell: f64) -> Result<f64> {
    check_ell(ell)?;
    check_lambda(lambda)?;
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    // 1 - exp(-2 ell ln lambda), accurate for lambda near 1.
    Ok(-(-2.0 * ell * lambda.ln()).exp_m1())
}

/// Worst-case welfare ratio of IPA(ell):
/// `1 - (1 / (ell + 1)) (ell / (ell + 1))^ell`.
pub fn alpha_ell(ell: f64) -> Result<f64> {
    check_ell(ell)?;
    let power = (-ell * (1.0 / ell).ln_1p()).exp();
    Ok(1.0 - power / (ell + 1.0))
}

/// `(x . v) / max_i v_i`.
pub fn welfare_ratio(x: &Allocation, v: &ValueVector) -> Result<f64> {
    if x.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: v.len(),
        });
    }
    let best = v.max();
    if best <= 0.0 {
        return Err(Error::AllZeroValues);
    }
    Ok((x.welfare(v) / best).clamp(0.0, 1.0))
}

/// `v` with coordinate `i` divided by `lambda^2`.
pub fn directed_worst_case(v: &ValueVector, i: usize, lambda: f64) -> Result<ValueVector> {
    check_lambda(lambda)?;
    if i >= v.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: v.len(),
        });
    }
    v.with_value(i, v.as_slice()[i] / (lambda * lambda))
}

/// Largest per-advertiser allocation change found among `lambda`-similar
/// neighbours of `v`.
///
/// Candidates are, for every advertiser `i`, the two extreme points of the
/// band that push `i` against everyone else (`v_i / lambda` with the others
/// times `lambda`, and the mirror image), plus `samples` neighbours drawn
/// log-uniformly from the band. For scale-free rules the first extreme point
/// is [`directed_worst_case`] up to a common factor. The search is exact for
/// IPA and a heuristic for other rules.
pub fn stability_violation_search<R: AllocationRule + ?Sized>(
    rule: &R,
    v: &ValueVector,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda.is_infinite() {
        return Err(Error::InvalidLambda(lambda));
    }
    if samples == 0 {
        return Err(Error::InvalidGrid { min: 1, got: 0 });
    }
    let base = rule.allocate(v)?;
    let values = v.as_slice();
    let mut worst = 0.0f64;
    let mut candidate = vec![0.0; values.len()];

    for i in 0..values.len() {
        for (down, up) in [(1.0 / lambda, lambda), (lambda, 1.0 / lambda)] {
            for (j, (&vj, c)) in values.iter().zip(candidate.iter_mut()).enumerate() {
                *c = if j == i { vj * down } else { vj * up };
            }
            let other = rule.allocate(&ValueVector::new(candidate.clone())?)?;
            worst = worst.max(base.max_abs_diff(&other));
        }
    }

    let ln_lambda = lambda.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        for (&vj, c) in values.iter().zip(candidate.iter_mut()) {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            *c = vj * (u * ln_lambda).exp();
        }
        let other = rule.allocate(&ValueVector::new(candidate.clone())?)?;
        worst = worst.max(base.max_abs_diff(&other));
    }
    Ok(worst)
}

/// Upper bound on the welfare ratio of any prior-free rule that is stable
/// with respect to `f`, evaluated at one `lambda`:
/// `1/k + f(lambda) + lambda^-2 (1 - 1/k - f(lambda))`.
pub fn prior_free_upper_bound<F: Fn(f64) -> f64>(f: F, lambda: f64, k: usize) -> Result<f64> {
    if lambda.is_nan() || lambda <= 1.0 {
        return Err(Error::InvalidLambda(lambda));
    }
    if k == 0 {
        return Err(Error::InvalidK(k));
    }
    let inv_k = 1.0 / k as f64;
    let fl = f(lambda);
    let inv_sq = if lambda.is_infinite() {
        0.0
    } else {
        lambda.powi(-2)
    };
    Ok(inv_k + fl + inv_sq * (1.0 - inv_k - fl))
}

/// Minimum of [`prior_free_upper_bound`] over `lambda` in `(1, 1e4]`, as
/// `(argmin lambda, bound)`: a log grid followed by golden-section refinement
/// around the best grid point.
pub fn prior_free_upper_bound_min<F: Fn(f64) -> f64>(f: F, k: usize) -> Result<(f64, f64)> {
    const POINTS: usize = 20_000;
    const LN_MAX: f64 = 4.0 * std::f64::consts::LN_10;
    let at = |s: usize| (LN_MAX * s as f64 / POINTS as f64).exp();
    let mut best = (0, f64::INFINITY);
    for s in 1..=POINTS {
        let value = prior_free_upper_bound(&f, at(s), k)?;
        if value < best.1 {
            best = (s, value);
        }
    }
    let lo = if best.0 == 1 {
        1.0 + 1e-12
    } else {
        at(best.0 - 1)
    };
    let hi = at((best.0 + 1).min(POINTS));
    let (lambda, value) = golden_section(|l| prior_free_upper_bound(&f, l, k), lo, hi, 1e-14)?;
    Ok(if value < best.1 {
        (lambda, value)
    } else {
        (at(best.0), best.1)
    })
}

fn golden_section<F: Fn(f64) -> Result<f64>>(
    f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if (b - a).abs() <= tol * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Capped-IPA parameters that come within a log factor of any target ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NearOptimalParams {
    pub ell: f64,
    pub beta: f64,
    pub guarantee: f64,
}

/// For a target `alpha` in (0, 1): `beta = alpha / (1 + alpha)`,
/// `ell = 1 / (2 ln(1/alpha))`, guarantee `beta / (2 ln(1/alpha) + 1)`.
pub fn near_optimal_params(alpha: f64) -> Result<NearOptimalParams> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let ln_inv = -alpha.ln();
    let beta = alpha / (1.0 + alpha);
    Ok(NearOptimalParams {
        ell: 1.0 / (2.0 * ln_inv),
        beta,
        guarantee: beta / (2.0 * ln_inv + 1.0),
    })
}

/// Checks `min(beta, ln(x) beta / ln(1/alpha)) >= beta (1 - x^(-1/ln(1/alpha)))`
/// at every `x` in `xs` (all `>= 1`), with slack 1e-12.
pub fn bounding_logs_check(beta: f64, alpha: f64, xs: &[f64]) -> bool {
    let ln_inv = -alpha.ln();
    xs.iter().all(|&x| {
        let lhs = beta.min(x.ln() * beta / ln_inv);
        let rhs = -beta * (-x.ln() / ln_inv).exp_m1();
        lhs >= rhs - 1e-12
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapConstruction {
    pub v: ValueVector,
    pub v_prime: ValueVector,
    pub delta_x1: f64,
}

/// `v = [x; k]` against `v' = [x^2, 1, ..., 1]` under IPA(ell). The first
/// advertiser's gain tends to `1 - x^(-2 ell)` as `k` grows, so no member of
/// the family with a smaller `ell` bounds IPA(ell).
pub fn optimality_gap_construction(x: f64, k: usize, ell: f64) -> Result<GapConstruction> {
    if !(x > 1.0 && x.is_finite()) {
        return Err(Error::InvalidX(x));
    }
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    let v = ValueVector::new(vec![x; k])?;
    let mut prime = vec![1.0; k];
    prime[0] = x * x;
    let v_prime = ValueVector::new(prime)?;
    let delta_x1 = ipa_allocate(&v_prime, ell)?.get(0) - ipa_allocate(&v, ell)?.get(0);
    Ok(GapConstruction {
        v,
        v_prime,
        delta_x1,
    })
}

/// `(2 ell / (2 ell + 1), ratio_lb)` where
/// `ratio_lb = (2 ell + 1)/(ell + 1) (1/2 + (1/(2 ell)) (1 - ell^ell / (ell + 1)^ell))`.
pub fn gap_bounds(ell: f64) -> Result<(f64, f64)> {
    check_ell(ell)?;
    let ub = 2.0 * ell / (2.0 * ell + 1.0);
    // 1 - (ell / (ell + 1))^ell
    let one_minus_power = -(-ell * (1.0 / ell).ln_1p()).exp_m1();
    let ratio = (2.0 * ell + 1.0) / (ell + 1.0) * (0.5 + one_minus_power / (2.0 * ell));
    Ok((ub, ratio))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub alpha_ell: f64,
    pub upper_bound: f64,
    pub params: BTreeMap<String, f64>,
}

/// IPA(ell)'s welfare guarantee next to the best ratio any `f_ell`-stable
/// prior-free rule could reach with `k` advertisers.
///
/// The upper bound is `prior_free_upper_bound` minimised over `lambda`; it
/// exceeds `alpha_ell` by at most `1/k`.
pub fn bound_report(ell: f64, k: usize) -> Result<BoundReport> {
    let alpha = alpha_ell(ell)?;
    let (lambda, upper) = prior_free_upper_bound_min(|l| f_ell(l, ell).unwrap_or(1.0), k)?;
    let params = BTreeMap::from([
        ("ell".to_string(), ell),
        ("k".to_string(), k as f64),
        ("lambda".to_string(), lambda),
    ]);
    Ok(BoundReport {
        alpha_ell: alpha,
        upper_bound: upper,
        params,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::alloc::{ipa_allocate, proportional_allocate, AllocRule};

    fn vv(values: &[f64]) -> ValueVector {
        ValueVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn stability_param_examples() {
        assert_eq!(
            stability_param(&vv(&[1.0, 2.0]), &vv(&[2.0, 1.0])).unwrap(),
            2.0
        );
        assert_eq!(
            stability_param(&vv(&[1.0, 1.0]), &vv(&[1.0, 1.0])).unwrap(),
            1.0
        );
        assert_eq!(
            stability_param(&vv(&[1.0, 4.0]), &vv(&[2.0, 2.0])).unwrap(),
            2.0
        );
        assert_eq!(
            stability_param(&vv(&[0.0, 1.0]), &vv(&[0.0, 3.0])).unwrap(),
            3.0
        );
        assert_eq!(
            stability_param(&vv(&[0.0, 1.0]), &vv(&[1.0, 1.0])).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            stability_param(&vv(&[1.0]), &vv(&[1.0, 1.0])),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn f_ell_examples() {
        assert_eq!(f_ell(1.0, 0.7).unwrap(), 0.0);
        assert_eq!(f_ell(2.0, 1.0).unwrap(), 0.75);
        assert_eq!(f_ell(f64::INFINITY, 0.3).unwrap(), 1.0);
        assert_eq!(f_ell(0.5, 1.0), Err(Error::InvalidLambda(0.5)));
        assert_eq!(f_ell(2.0, 0.0), Err(Error::InvalidEll(0.0)));
    }

    #[test]
    fn alpha_ell_examples() {
        assert_eq!(alpha_ell(1.0).unwrap(), 0.75);
        assert_abs_diff_eq!(alpha_ell(2.0).unwrap(), 23.0 / 27.0, epsilon = 1e-12);
        assert!((alpha_ell(1e6).unwrap() - 1.0).abs() < 1e-5);
        assert!(alpha_ell(-1.0).is_err());
    }

    #[test]
    fn alpha_ell_matches_numeric_minimum() {
        for ell in [0.1, 0.5, 1.0, 2.0, 7.5] {
            let objective = |x: f64| Ok(1.0 - x.powf(ell) + x.powf(ell + 1.0));
            let (_, min) = golden_section(objective, 1e-9, 1.0 - 1e-9, 1e-15).unwrap();
            assert_abs_diff_eq!(alpha_ell(ell).unwrap(), min, epsilon = 1e-10);
        }
    }

    #[test]
    fn welfare_ratio_examples() {
        let v = vv(&[1.0, 2.0]);
        let hb = AllocRule::HighestBid.allocate(&v).unwrap();
        assert_eq!(welfare_ratio(&hb, &v).unwrap(), 1.0);

        let v = vv(&[1.0, 0.5, 0.5]);
        let x = ipa_allocate(&v, 1.0).unwrap();
        assert_abs_diff_eq!(welfare_ratio(&x, &v).unwrap(), 0.8, epsilon = 1e-12);

        let mut values = vec![0.1; 101];
        values[0] = 1.0;
        let v = ValueVector::new(values).unwrap();
        let x = proportional_allocate(&v, 1.0).unwrap();
        assert_abs_diff_eq!(welfare_ratio(&x, &v).unwrap(), 2.0 / 11.0, epsilon = 1e-12);

        assert_eq!(
            welfare_ratio(&Allocation::uniform(2), &vv(&[0.0, 0.0])),
            Err(Error::AllZeroValues)
        );
    }

    #[test]
    fn directed_worst_case_examples() {
        assert_eq!(
            directed_worst_case(&vv(&[2.0, 1.0]), 0, 2.0).unwrap(),
            vv(&[0.5, 1.0])
        );
        assert_eq!(
            directed_worst_case(&vv(&[1.0, 1.0, 1.0]), 2, 1.0).unwrap(),
            vv(&[1.0; 3])
        );
        let w = directed_worst_case(&vv(&[4.0, 2.0]), 1, 2f64.sqrt()).unwrap();
        assert_abs_diff_eq!(w.as_slice()[1], 1.0, epsilon = 1e-15);
        assert!(matches!(
            directed_worst_case(&vv(&[1.0]), 1, 2.0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn violation_search_examples() {
        let ipa = AllocRule::Ipa { ell: 1.0 };
        // Extreme in-band neighbour of [1, 1] at lambda 2 is [0.5, 2]: x_1
        // moves from 1/2 to 1/5.
        let d = stability_violation_search(&ipa, &vv(&[1.0, 1.0]), 2.0, 1000, 7).unwrap();
        assert_abs_diff_eq!(d, 0.3, epsilon = 1e-12);
        assert!(d <= 0.75);

        let d = stability_violation_search(&ipa, &vv(&[5.0, 5.0]), 1.0, 10, 7).unwrap();
        assert_eq!(d, 0.0);

        let d =
            stability_violation_search(&AllocRule::HighestBid, &vv(&[1.0, 1.01]), 1.02, 1000, 7)
                .unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn violation_search_is_seeded() {
        let rule = AllocRule::Proportional { exponent: 1.5 };
        let v = vv(&[1.0, 2.0, 3.5]);
        let a = stability_violation_search(&rule, &v, 1.7, 50, 11).unwrap();
        let b = stability_violation_search(&rule, &v, 1.7, 50, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn upper_bound_examples() {
        let f1 = |l: f64| f_ell(l, 1.0).unwrap();
        assert_abs_diff_eq!(
            prior_free_upper_bound(f1, 2.0, 10).unwrap(),
            0.8875,
            epsilon = 1e-15
        );
        assert_eq!(
            prior_free_upper_bound(|_| 0.0, f64::INFINITY, 1).unwrap(),
            1.0
        );
        let (lambda, min) = prior_free_upper_bound_min(f1, 1_000_000).unwrap();
        assert!((min - 0.750001).abs() <= 2e-6, "{min}");
        assert_abs_diff_eq!(lambda, 2f64.sqrt(), epsilon = 1e-4);
        assert!(prior_free_upper_bound(f1, 1.0, 2).is_err());
        assert!(prior_free_upper_bound(f1, 2.0, 0).is_err());
    }

    #[test]
    fn near_optimal_examples() {
        let p = near_optimal_params(0.5).unwrap();
        assert_abs_diff_eq!(p.beta, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.ell, 0.72135, epsilon = 1e-5);
        // (1/3) / (2 ln 2 + 1) = 0.139687 ...
        assert_abs_diff_eq!(
            p.guarantee,
            (1.0 / 3.0) / (2.0 * 2f64.ln() + 1.0),
            epsilon = 1e-15
        );
        assert!((p.guarantee - 0.13970).abs() < 2e-5);

        let p = near_optimal_params(1.0 / std::f64::consts::E).unwrap();
        assert_abs_diff_eq!(p.ell, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.beta, 0.26894, epsilon = 1e-5);
        assert_abs_diff_eq!(p.guarantee, 0.08965, epsilon = 1e-5);

        let p = near_optimal_params(0.999).unwrap();
        assert_abs_diff_eq!(p.ell, 499.75, epsilon = 0.01);
        let ln_inv = -(0.999f64).ln();
        assert_abs_diff_eq!(
            p.guarantee,
            (0.999 / 1.999) / (2.0 * ln_inv + 1.0),
            epsilon = 1e-15
        );
        assert!((p.guarantee - 0.49875).abs() < 1e-5);

        for alpha in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(near_optimal_params(alpha).is_err());
        }
    }

    #[test]
    fn near_optimal_guarantee_floor() {
        for s in 1..1000 {
            let alpha = s as f64 / 1000.0;
            let p = near_optimal_params(alpha).unwrap();
            assert!(p.guarantee >= (alpha / 2.0) / (2.0 * p.ell.recip() + 1.0) - 1e-15);
        }
    }

    #[test]
    fn bounding_logs_examples() {
        assert!(bounding_logs_check(1.0 / 3.0, 0.5, &[1.0, 2.0, 10.0, 1e6]));
        assert!(bounding_logs_check(0.7, 0.2, &[1.0]));
        let xs: Vec<f64> = (0..1000)
            .map(|s| 10f64.powf(6.0 * s as f64 / 999.0))
            .collect();
        assert!(bounding_logs_check(1.0, 0.9, &xs));
    }

    #[test]
    fn gap_construction_examples() {
        let g = optimality_gap_construction(2.0, 100, 1.0).unwrap();
        assert_abs_diff_eq!(
            g.delta_x1,
            (1.0 - 99.0 * 0.25 / 99.25) - 0.01,
            epsilon = 1e-12
        );
        let g = optimality_gap_construction(2.0, 100_000, 1.0).unwrap();
        assert!((g.delta_x1 - 0.75).abs() < 1e-4);
        let g = optimality_gap_construction(1.0 + 1e-9, 10, 3.0).unwrap();
        assert!(g.delta_x1.abs() < 1e-6);
        assert_eq!(
            optimality_gap_construction(1.0, 10, 1.0),
            Err(Error::InvalidX(1.0))
        );
        assert_eq!(
            optimality_gap_construction(2.0, 1, 1.0),
            Err(Error::InvalidK(1))
        );
    }

    #[test]
    fn gap_bounds_examples() {
        let (ub, ratio) = gap_bounds(1.0).unwrap();
        assert_abs_diff_eq!(ub, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio, 1.125, epsilon = 1e-12);
        let (ub, _) = gap_bounds(1e4).unwrap();
        assert!((ub - 1.0).abs() < 1e-4);
        assert!(gap_bounds(0.0).is_err());
    }

    #[test]
    fn gap_ratio_grows_as_ell_shrinks() {
        let mut previous = 0.0;
        for e in 0..=9 {
            let ell = 10f64.powi(-e);
            let (_, ratio) = gap_bounds(ell).unwrap();
            assert!(ratio > previous, "ell {ell}: {ratio} <= {previous}");
            previous = ratio;
        }
        assert!(gap_bounds(1e-9).unwrap().1 > 10.0);
    }

    #[test]
    fn bound_report_fields() {
        let report = bound_report(1.0, 10).unwrap();
        assert_eq!(report.alpha_ell, 0.75);
        assert!(report.upper_bound >= 0.75 && report.upper_bound <= 0.75 + 0.1);
        assert_eq!(report.params["k"], 10.0);
    }
}
