//! Transfer moduli: how much target excess risk is compatible with a given
//! level of source excess risk.
//!
//! For a finite task with excess risks `E_P`, `E_Q` over a common class,
//! the weak modulus at level `eps` is
//!
//! ```text
//! delta(eps) = max{ E_Q(h) : E_P(h) <= eps },
//! ```
//!
//! a nondecreasing step function of `eps`; [`weak_modulus_curve`] returns
//! its full graph. The strong (two-level) modulus constrains first by
//! target excess and then by source risk measured *within* the constrained
//! set:
//!
//! ```text
//! delta(eps1, eps2) = max{ E_Q(h) : h in H_Q(eps1),
//!                          R_P(h) - min_{H_Q(eps1)} R_P <= eps2 }.
//! ```
//!
//! The pivotal value is the smallest target excess achieved by any exact
//! source optimum; below it, source optimality alone cannot pin the target
//! excess, and above it the strong modulus coincides with the
//! intersection form `max{E_Q : h in H_Q(eps1) ∩ H_P(eps2)}`.
//!
//! For well-specified linear regression the weak modulus has a quadratic
//! closed form: maximize the target excess quadratic over a source-excess
//! ellipsoid, which [`weak_modulus_linear`] solves exactly via the secular
//! equation. When both sides share a population minimizer the value is
//! `lambda_max(Sigma_P^{-1} Sigma_Q) * eps` exactly.

use crate::instances::{FiniteInstance, InstanceError, LinearInstance, Side};
use crate::quadratic;

/// Graph of the weak modulus: one `(level, value)` pair per distinct
/// source excess level, in increasing order. The modulus is the step
/// function that equals `value` on `[level, next_level)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulusCurve {
    breakpoints: Vec<(f64, f64)>,
}

impl ModulusCurve {
    /// Breakpoints `(source level, modulus value)` in increasing level
    /// order; the first level is always 0.
    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Modulus value at `eps` (the step function is right-continuous).
    pub fn eval(&self, eps: f64) -> Result<f64, InstanceError> {
        check_level("eps", eps)?;
        let pos = self.breakpoints.partition_point(|(l, _)| *l <= eps);
        Ok(self.breakpoints[pos - 1].1)
    }

    /// Largest value the modulus ever attains.
    pub fn max_value(&self) -> f64 {
        self.breakpoints.last().expect("curve is never empty").1
    }
}

/// Value and feasible set of a two-level modulus computation.
#[derive(Clone, Debug)]
pub struct StrongModulus {
    /// Largest feasible target excess; `NaN` when nothing is feasible.
    pub value: f64,
    /// Indices of the hypotheses satisfying both constraints.
    pub feasible: Vec<usize>,
}

impl StrongModulus {
    pub fn feasible_empty(&self) -> bool {
        self.feasible.is_empty()
    }
}

fn check_level(name: &str, eps: f64) -> Result<(), InstanceError> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(InstanceError::Invalid {
            path: name.into(),
            message: format!("level {eps} must be finite and nonnegative"),
        });
    }
    Ok(())
}

/// Hypotheses whose excess risk under `side` is at most `eps`.
pub fn constraint_set(
    inst: &FiniteInstance,
    side: Side,
    eps: f64,
) -> Result<Vec<usize>, InstanceError> {
    check_level("eps", eps)?;
    let excess = inst.excess_risks(side);
    Ok((0..excess.len()).filter(|&h| excess[h] <= eps).collect())
}

/// Weak modulus at a single level.
pub fn weak_modulus(inst: &FiniteInstance, eps: f64) -> Result<f64, InstanceError> {
    check_level("eps", eps)?;
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    Ok(ep
        .iter()
        .zip(&eq)
        .filter(|(e, _)| **e <= eps)
        .map(|(_, q)| *q)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Complete graph of the weak modulus.
pub fn weak_modulus_curve(inst: &FiniteInstance) -> ModulusCurve {
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    let mut order: Vec<usize> = (0..ep.len()).collect();
    order.sort_by(|&a, &b| ep[a].partial_cmp(&ep[b]).unwrap());
    let mut breakpoints: Vec<(f64, f64)> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let level = ep[order[i]];
        while i < order.len() && ep[order[i]] == level {
            best = best.max(eq[order[i]]);
            i += 1;
        }
        breakpoints.push((level, best));
    }
    ModulusCurve { breakpoints }
}

/// Strong modulus: target constraint first, then source risk relative to
/// the best source risk inside the target-constrained set. `eps1` must be
/// positive; `eps2` may be zero (exact within-set source optimality).
pub fn strong_modulus(
    inst: &FiniteInstance,
    eps1: f64,
    eps2: f64,
) -> Result<StrongModulus, InstanceError> {
    if !eps1.is_finite() || eps1 <= 0.0 {
        return Err(InstanceError::Invalid {
            path: "eps1".into(),
            message: format!("level {eps1} must be finite and positive"),
        });
    }
    check_level("eps2", eps2)?;
    let eq = inst.excess_risks(Side::Q);
    let rp = inst.risks(Side::P);
    let candidates: Vec<usize> = (0..eq.len()).filter(|&h| eq[h] <= eps1).collect();
    let base = candidates
        .iter()
        .map(|&h| rp[h])
        .fold(f64::INFINITY, f64::min);
    let feasible: Vec<usize> = candidates
        .into_iter()
        .filter(|&h| rp[h] - base <= eps2)
        .collect();
    let value = feasible
        .iter()
        .map(|&h| eq[h])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StrongModulus {
        value: if feasible.is_empty() { f64::NAN } else { value },
        feasible,
    })
}

/// Largest target excess over `H_Q(eps_q) ∩ H_P(eps_p)`, both measured
/// against the full-class optima. The intersection may be empty, in which
/// case `value` is `NaN` and the feasible list is empty.
pub fn intersection_modulus(
    inst: &FiniteInstance,
    eps_q: f64,
    eps_p: f64,
) -> Result<StrongModulus, InstanceError> {
    check_level("eps_q", eps_q)?;
    check_level("eps_p", eps_p)?;
    let eq = inst.excess_risks(Side::Q);
    let ep = inst.excess_risks(Side::P);
    let feasible: Vec<usize> = (0..eq.len())
        .filter(|&h| eq[h] <= eps_q && ep[h] <= eps_p)
        .collect();
    let value = feasible
        .iter()
        .map(|&h| eq[h])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StrongModulus {
        value: if feasible.is_empty() { f64::NAN } else { value },
        feasible,
    })
}

/// Smallest target excess among exact source optima. Transfer from exact
/// source optimality can achieve this but nothing below it.
pub fn pivotal_value(inst: &FiniteInstance) -> f64 {
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    ep.iter()
        .zip(&eq)
        .filter(|(e, _)| **e <= 0.0)
        .map(|(_, q)| *q)
        .fold(f64::INFINITY, f64::min)
}

/// Largest target excess among exact source optima: the worst case over
/// ties of source-only selection.
pub fn pivotal_sharp(inst: &FiniteInstance) -> f64 {
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    ep.iter()
        .zip(&eq)
        .filter(|(e, _)| **e <= 0.0)
        .map(|(_, q)| *q)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Weak modulus of a linear task: the exact maximum of the target excess
/// quadratic `(w - w_Q)' Sigma_Q (w - w_Q)` over the source-excess
/// ellipsoid `(w - w_P)' Sigma_P (w - w_P) <= eps`.
pub fn weak_modulus_linear(inst: &LinearInstance, eps: f64) -> Result<f64, InstanceError> {
    check_level("eps", eps)?;
    let sq = inst.sigma(Side::Q);
    let sp = inst.sigma(Side::P);
    let wq = inst.w_star(Side::Q);
    let wp = inst.w_star(Side::P);
    let b = -(sq * wq);
    let c = (sq * wq).dot(wq);
    let sol = quadratic::max_quadratic_over_ellipsoid(sq, &b, c, sp, wp, eps);
    Ok(sol.value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{
        random_finite_instance, random_linear_instance, two_atom_gap, uninformative_source,
    };
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_atom_gap_weak_values() {
        let inst = two_atom_gap();
        assert_abs_diff_eq!(weak_modulus(&inst, 0.0).unwrap(), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(weak_modulus(&inst, 0.3).unwrap(), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(weak_modulus(&inst, 0.45).unwrap(), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(weak_modulus(&inst, 0.6).unwrap(), 0.90, epsilon = 1e-12);
        assert!(weak_modulus(&inst, -0.1).is_err());
    }

    #[test]
    fn two_atom_gap_curve_breakpoints() {
        let curve = weak_modulus_curve(&two_atom_gap());
        let expected = [(0.0, 0.40), (0.40, 0.40), (0.50, 0.90)];
        assert_eq!(curve.breakpoints().len(), expected.len());
        for ((l, v), (el, ev)) in curve.breakpoints().iter().zip(expected) {
            assert_abs_diff_eq!(*l, el, epsilon = 1e-12);
            assert_abs_diff_eq!(*v, ev, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(curve.eval(0.39).unwrap(), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.eval(0.40).unwrap(), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.eval(0.49).unwrap(), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.eval(0.55).unwrap(), 0.90, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.eval(10.0).unwrap(), 0.90, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.max_value(), 0.90, epsilon = 1e-12);
        assert!(curve.eval(-1.0).is_err());
        assert!(curve.eval(f64::NAN).is_err());
    }

    #[test]
    fn two_atom_gap_pivots() {
        let inst = two_atom_gap();
        assert_abs_diff_eq!(pivotal_value(&inst), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(pivotal_sharp(&inst), 0.40, epsilon = 1e-12);
    }

    #[test]
    fn two_atom_gap_strong_values() {
        let inst = two_atom_gap();
        let low = strong_modulus(&inst, 0.2, 0.01).unwrap();
        assert_abs_diff_eq!(low.value, 0.0, epsilon = 1e-12);
        assert_eq!(low.feasible, vec![1]);
        let high = strong_modulus(&inst, 0.5, 0.1).unwrap();
        assert_abs_diff_eq!(high.value, 0.40, epsilon = 1e-12);
        assert_eq!(high.feasible, vec![0]);
        assert!(strong_modulus(&inst, 0.0, 0.1).is_err());
        assert!(strong_modulus(&inst, -0.5, 0.1).is_err());
        assert!(strong_modulus(&inst, 0.5, -0.1).is_err());
        // exact within-set optimality is allowed
        let tight = strong_modulus(&inst, 0.2, 0.0).unwrap();
        assert_eq!(tight.feasible, vec![1]);
    }

    #[test]
    fn uninformative_source_curve_is_flat() {
        let inst = uninformative_source();
        let curve = weak_modulus_curve(&inst);
        assert_eq!(curve.breakpoints().len(), 1);
        assert_abs_diff_eq!(curve.breakpoints()[0].0, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(curve.breakpoints()[0].1, 0.90, epsilon = 1e-12);
        assert_abs_diff_eq!(pivotal_value(&inst), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pivotal_sharp(&inst), 0.90, epsilon = 1e-12);
    }

    /// Pivotal value recomputed by direct enumeration: the smallest
    /// candidate target level whose constraint set still meets every
    /// source constraint set with positive level.
    fn pivot_by_enumeration(inst: &FiniteInstance) -> f64 {
        let ep = inst.excess_risks(Side::P);
        let eq = inst.excess_risks(Side::Q);
        let mut candidates = eq.clone();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let smallest_positive = ep
            .iter()
            .copied()
            .filter(|e| *e > 0.0)
            .fold(f64::INFINITY, f64::min);
        let probe = if smallest_positive.is_finite() {
            smallest_positive / 2.0
        } else {
            0.0
        };
        for c in candidates {
            let hit = intersection_modulus(inst, c, probe).unwrap();
            if !hit.feasible_empty() {
                return c;
            }
        }
        unreachable!("the largest target level always intersects");
    }

    #[test]
    fn pivot_matches_enumeration_form() {
        assert_abs_diff_eq!(
            pivot_by_enumeration(&two_atom_gap()),
            pivotal_value(&two_atom_gap()),
            epsilon = 0.0
        );
        for seed in 0..200u64 {
            let inst = random_finite_instance(1000 + seed, 6, 12);
            let direct = pivotal_value(&inst);
            let enumerated = pivot_by_enumeration(&inst);
            assert_eq!(direct, enumerated, "seed {seed}");
        }
    }

    #[test]
    fn randomized_modulus_invariants() {
        for seed in 0..200u64 {
            let inst = random_finite_instance(5000 + seed, 6, 12);
            let mut rng = ChaCha8Rng::seed_from_u64(90_000 + seed);
            let curve = weak_modulus_curve(&inst);
            // monotone and consistent with the pointwise definition
            let mut last = f64::NEG_INFINITY;
            for &(level, value) in curve.breakpoints() {
                assert!(value >= last - 1e-15);
                last = value;
                assert_abs_diff_eq!(weak_modulus(&inst, level).unwrap(), value, epsilon = 1e-15);
            }
            let pivot = pivotal_value(&inst);
            assert!(pivot <= pivotal_sharp(&inst) + 1e-15);
            for _ in 0..20 {
                let eps1 = rng.gen::<f64>().max(1e-6);
                let eps2 = rng.gen::<f64>();
                let strong = strong_modulus(&inst, eps1, eps2).unwrap();
                assert!(!strong.feasible_empty());
                let weak_at_eps2 = weak_modulus(&inst, eps2).unwrap();
                // two-level value never beats either single constraint
                assert!(
                    strong.value <= eps1.min(weak_at_eps2) + 1e-12,
                    "seed {seed}: {} > min({eps1}, {weak_at_eps2})",
                    strong.value
                );
                // source optimality can never do better than the pivot
                assert!(pivot <= weak_at_eps2 + 1e-15);
                // above the pivot the two-level and intersection forms agree
                if eps1 >= pivot {
                    let inter = intersection_modulus(&inst, eps1, eps2).unwrap();
                    assert_eq!(strong.feasible, inter.feasible, "seed {seed}");
                    assert_eq!(strong.value.to_bits(), inter.value.to_bits(), "seed {seed}");
                }
                // monotone in the second level
                let wider = strong_modulus(&inst, eps1, eps2 + 0.3).unwrap();
                assert!(wider.value >= strong.value - 1e-15);
            }
        }
    }

    #[test]
    fn shared_minimizer_linear_modulus_is_eigenvalue_rate() {
        for seed in 0..40u64 {
            let inst = random_linear_instance(300 + seed, 6, true);
            let rate =
                quadratic::generalized_max_eigenvalue(inst.sigma(Side::P), inst.sigma(Side::Q));
            for eps in [1e-4, 1e-2, 0.3] {
                let value = weak_modulus_linear(&inst, eps).unwrap();
                let expected = rate * eps;
                assert!(
                    (value - expected).abs() <= 1e-8 * expected.max(1e-12),
                    "seed {seed}, eps {eps}: {value} vs {expected}"
                );
            }
            assert_abs_diff_eq!(
                weak_modulus_linear(&inst, 0.0).unwrap(),
                0.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn general_linear_modulus_is_enveloped() {
        for seed in 0..25u64 {
            let inst = random_linear_instance(700 + seed, 4, false);
            let mut rng = ChaCha8Rng::seed_from_u64(42_000 + seed);
            let rate =
                quadratic::generalized_max_eigenvalue(inst.sigma(Side::P), inst.sigma(Side::Q));
            let excess_q_of_wp = inst.excess_risk(Side::Q, inst.w_star(Side::P)).unwrap();
            let d = inst.dim();
            let (_, sp_inv_half) = quadratic::spd_sqrt_pair(inst.sigma(Side::P));
            let mut prev = 0.0;
            for eps in [1e-3, 0.05, 0.4] {
                let value = weak_modulus_linear(&inst, eps).unwrap();
                // upper envelope from the triangle inequality
                let cap = 2.0 * rate * eps + 2.0 * excess_q_of_wp;
                assert!(value <= cap + 1e-10, "seed {seed}: {value} > {cap}");
                // random boundary probes never beat the reported maximum
                for _ in 0..300 {
                    let u = DVector::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                    let u = &u / u.norm().max(1e-12) * eps.sqrt();
                    let w = inst.w_star(Side::P) + &sp_inv_half * u;
                    let probe = inst.excess_risk(Side::Q, &w).unwrap();
                    assert!(
                        probe <= value + 1e-9,
                        "seed {seed}: probe {probe} > {value}"
                    );
                }
                assert!(value >= prev - 1e-12, "monotone in eps");
                prev = value;
            }
        }
    }
}
