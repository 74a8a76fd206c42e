//! Confidence ellipsoids for square-loss linear tasks.
//!
//! The construction is the regression analog of the finite-class sets:
//! fit ordinary least squares, center an ellipsoid in the empirical
//! second-moment norm at the fit, and size it by
//! `eps = c0 * sigma_y^2 * (d + c_mu + ln(1/tau)) / n`. On the event
//! that the empirical second moment is sandwiched between half and
//! three-halves of the population one (checkable via
//! [`sandwich_check`]) and the OLS error concentrates, every weight
//! vector in the ellipsoid has population excess risk at most
//! `26 * scale * eps`, and the population sublevel set at `scale * eps`
//! is contained in it — a two-sided guarantee with ratio 26 at failure
//! budget `2 * tau`.
//!
//! The geometric primitives (pairwise intersection, risk minimization
//! over an ellipsoid, containment) are exact up to the trust-region
//! solver's tolerance; none of them fall back to sampling.

use crate::instances::{InstanceError, LinearInstance, LinearSample, Side};
use crate::quadratic::{self, QuadOpt};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Constants of the ellipsoid construction.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionParams {
    /// Leading constant of the base level `eps`.
    pub c0: f64,
    /// Covariate-model constant added to the dimension term.
    pub c_mu: f64,
}

impl Default for RegressionParams {
    fn default() -> Self {
        RegressionParams { c0: 4.0, c_mu: 1.0 }
    }
}

impl RegressionParams {
    pub fn validate(&self) -> Result<(), InstanceError> {
        for (name, v) in [("c0", self.c0), ("c_mu", self.c_mu)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(InstanceError::invalid(
                    name,
                    format!("constant {v} must be finite and positive"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct EllipsoidRepr {
    dim: usize,
    /// Row-major entries of the shape matrix.
    shape: Vec<f64>,
    center: Vec<f64>,
    radius2: f64,
}

/// The set `{w : (w - center)' shape (w - center) <= radius2}` with an
/// SPD shape matrix. Serializes to JSON with the shape flattened
/// row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "EllipsoidRepr", try_from = "EllipsoidRepr")]
pub struct Ellipsoid {
    pub shape: DMatrix<f64>,
    pub center: DVector<f64>,
    pub radius2: f64,
}

impl From<Ellipsoid> for EllipsoidRepr {
    fn from(e: Ellipsoid) -> Self {
        let dim = e.center.len();
        let mut shape = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                shape.push(e.shape[(i, j)]);
            }
        }
        EllipsoidRepr {
            dim,
            shape,
            center: e.center.iter().copied().collect(),
            radius2: e.radius2,
        }
    }
}

impl TryFrom<EllipsoidRepr> for Ellipsoid {
    type Error = String;

    fn try_from(r: EllipsoidRepr) -> Result<Self, String> {
        if r.center.len() != r.dim || r.shape.len() != r.dim * r.dim {
            return Err(format!(
                "ellipsoid with dim {} needs {} shape entries and {} center entries, got {} and {}",
                r.dim,
                r.dim * r.dim,
                r.dim,
                r.shape.len(),
                r.center.len()
            ));
        }
        let shape = DMatrix::from_row_slice(r.dim, r.dim, &r.shape);
        let center = DVector::from_vec(r.center);
        Ellipsoid::new(shape, center, r.radius2).map_err(|e| e.to_string())
    }
}

impl Ellipsoid {
    pub fn new(
        shape: DMatrix<f64>,
        center: DVector<f64>,
        radius2: f64,
    ) -> Result<Self, InstanceError> {
        let dim = center.len();
        if dim == 0 {
            return Err(InstanceError::invalid(
                "center",
                "dimension must be positive",
            ));
        }
        if shape.nrows() != dim || shape.ncols() != dim {
            return Err(InstanceError::invalid(
                "shape",
                format!(
                    "expected a {dim}x{dim} matrix, got {}x{}",
                    shape.nrows(),
                    shape.ncols()
                ),
            ));
        }
        if center.iter().any(|x| !x.is_finite()) {
            return Err(InstanceError::invalid("center", "entries must be finite"));
        }
        if !radius2.is_finite() || radius2 <= 0.0 {
            return Err(InstanceError::invalid(
                "radius2",
                format!("level {radius2} must be finite and positive"),
            ));
        }
        for i in 0..dim {
            for j in 0..dim {
                let (a, b) = (shape[(i, j)], shape[(j, i)]);
                if !a.is_finite() {
                    return Err(InstanceError::invalid("shape", "entries must be finite"));
                }
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(InstanceError::invalid(
                        "shape",
                        format!("matrix is not symmetric at ({i}, {j})"),
                    ));
                }
            }
        }
        let eig = shape.clone().symmetric_eigen();
        let min_eig = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 0.0 {
            return Err(InstanceError::invalid(
                "shape",
                format!("matrix is not positive definite (min eigenvalue {min_eig:.3e})"),
            ));
        }
        Ok(Ellipsoid {
            shape,
            center,
            radius2,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Value of the defining quadratic form at `w`.
    pub fn form_at(&self, w: &DVector<f64>) -> f64 {
        let d = w - &self.center;
        (&self.shape * &d).dot(&d)
    }

    pub fn contains(&self, w: &DVector<f64>, slack: f64) -> bool {
        self.form_at(w) <= self.radius2 + slack
    }
}

/// OLS estimate together with the empirical second moment it solves
/// against. Fails when the design is rank-deficient.
pub fn ols_fit(sample: &LinearSample) -> Result<(DVector<f64>, DMatrix<f64>), InstanceError> {
    if sample.is_empty() {
        return Err(InstanceError::invalid(
            "sample",
            "least squares needs at least one observation",
        ));
    }
    let sigma_hat = sample.second_moment();
    let xy = sample.xy_moment();
    let chol = Cholesky::new(sigma_hat.clone()).ok_or_else(|| {
        InstanceError::invalid(
            "sample",
            "empirical second moment is singular; not enough spread in the covariates",
        )
    })?;
    Ok((chol.solve(&xy), sigma_hat))
}

/// Outcome of comparing an empirical second moment to the population one.
#[derive(Clone, Copy, Debug)]
pub struct SandwichReport {
    pub ok: bool,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Check that every eigenvalue of `Sigma^{-1/2} Sigma_hat Sigma^{-1/2}`
/// lies in `[1/2, 3/2]` — the norm-equivalence event the ellipsoid
/// guarantee is conditioned on.
pub fn sandwich_check(sigma: &DMatrix<f64>, sigma_hat: &DMatrix<f64>) -> SandwichReport {
    let (_, inv_half) = quadratic::spd_sqrt_pair(sigma);
    let m = &inv_half * sigma_hat * &inv_half;
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    SandwichReport {
        ok: min_eig >= 0.5 && max_eig <= 1.5,
        min_eig,
        max_eig,
    }
}

/// Confidence ellipsoid with its guarantee metadata: with probability at
/// least `1 - tau` (already doubled for the two conditioning events),
/// the population sublevel set at `eps / strength` is inside the
/// ellipsoid and every member has population excess at most `eps`.
#[derive(Clone, Debug)]
pub struct RegressionConfidenceSet {
    pub ellipsoid: Ellipsoid,
    pub w_hat: DVector<f64>,
    pub eps: f64,
    pub tau: f64,
    pub strength: f64,
    /// The base level `eps = c0 sigma_y^2 (d + c_mu + ln(1/tau)) / n`.
    pub base_level: f64,
    pub scale: f64,
}

/// Build the confidence ellipsoid
/// `{w : ||w - w_hat||^2_{Sigma_hat} <= 6 * scale * eps}`.
pub fn regression_confidence_set(
    sample: &LinearSample,
    sigma_y: f64,
    tau: f64,
    scale: f64,
    params: &RegressionParams,
) -> Result<RegressionConfidenceSet, InstanceError> {
    params.validate()?;
    if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
        return Err(InstanceError::invalid(
            "tau",
            format!("confidence level {tau} must lie strictly inside (0, 1)"),
        ));
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(InstanceError::invalid(
            "scale",
            format!("scale {scale} must be finite and positive"),
        ));
    }
    if !sigma_y.is_finite() || sigma_y <= 0.0 {
        return Err(InstanceError::invalid(
            "sigma_y",
            format!("noise level {sigma_y} must be finite and positive"),
        ));
    }
    let (w_hat, sigma_hat) = ols_fit(sample)?;
    let n = sample.len() as f64;
    let d = sample.dim() as f64;
    let base = params.c0 * sigma_y * sigma_y * (d + params.c_mu + (1.0 / tau).ln()) / n;
    let ellipsoid = Ellipsoid::new(sigma_hat, w_hat.clone(), 6.0 * scale * base)?;
    Ok(RegressionConfidenceSet {
        ellipsoid,
        w_hat,
        eps: 26.0 * scale * base,
        tau: 2.0 * tau,
        strength: 26.0,
        base_level: base,
        scale,
    })
}

/// Outcome of a pairwise ellipsoid feasibility query.
#[derive(Clone, Debug)]
pub enum Feasibility {
    /// The ellipsoids are disjoint; `min_value` is the smallest value of
    /// the second form over the first ellipsoid.
    Empty { min_value: f64 },
    /// A point in both ellipsoids.
    Witness(DVector<f64>),
}

/// Decide whether two ellipsoids intersect by minimizing the second
/// form over the first set. Exact up to the trust-region tolerance; a
/// returned witness satisfies both quadratics to `1e-9`.
pub fn ellipsoid_intersect(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<Feasibility, InstanceError> {
    if e1.dim() != e2.dim() {
        return Err(InstanceError::invalid(
            "ellipsoids",
            format!("dimension mismatch: {} vs {}", e1.dim(), e2.dim()),
        ));
    }
    let b = -(&e2.shape * &e2.center);
    let c = (&e2.shape * &e2.center).dot(&e2.center);
    let sol = quadratic::min_quadratic_over_ellipsoid(
        &e2.shape, &b, c, &e1.shape, &e1.center, e1.radius2,
    );
    if sol.value <= e2.radius2 + quadratic::FEASIBILITY_TOL {
        // pull the minimizer infinitesimally toward the first center so
        // roundoff cannot strand it outside the boundary
        let w = &sol.arg + (&e1.center - &sol.arg) * 1e-12;
        Ok(Feasibility::Witness(w))
    } else {
        Ok(Feasibility::Empty {
            min_value: sol.value,
        })
    }
}

/// Minimize the empirical square loss over an ellipsoid.
pub fn min_empirical_risk_over_ellipsoid(
    sample: &LinearSample,
    e: &Ellipsoid,
) -> Result<QuadOpt, InstanceError> {
    if sample.is_empty() {
        return Err(InstanceError::invalid(
            "sample",
            "empirical risk undefined on an empty sample",
        ));
    }
    if sample.dim() != e.dim() {
        return Err(InstanceError::invalid(
            "sample",
            format!("dimension mismatch: {} vs {}", sample.dim(), e.dim()),
        ));
    }
    let m = sample.second_moment();
    let b = -sample.xy_moment();
    let c = sample.ys.norm_squared() / sample.len() as f64;
    Ok(quadratic::min_quadratic_over_ellipsoid(
        &m, &b, c, &e.shape, &e.center, e.radius2,
    ))
}

/// Whether `inner` is contained in `outer`, up to relative slack `tol`.
pub fn ellipsoid_contained(inner: &Ellipsoid, outer: &Ellipsoid, tol: f64) -> bool {
    quadratic::ellipsoid_contains(
        &inner.shape,
        &inner.center,
        inner.radius2,
        &outer.shape,
        &outer.center,
        outer.radius2,
        tol,
    )
}

/// Population audit of a regression set on a known instance.
#[derive(Clone, Copy, Debug)]
pub struct RegressionContractReport {
    /// The optimum lies in the ellipsoid.
    pub covers_optimum: bool,
    /// Population sublevel set at `eps / strength` is inside the ellipsoid.
    pub inner_ok: bool,
    /// Largest population excess over the ellipsoid stays below `eps`.
    pub outer_ok: bool,
    pub worst_excess: f64,
}

impl RegressionContractReport {
    pub fn ok(&self) -> bool {
        self.covers_optimum && self.inner_ok && self.outer_ok
    }
}

pub fn regression_contract_check(
    inst: &LinearInstance,
    side: Side,
    set: &RegressionConfidenceSet,
) -> Result<RegressionContractReport, InstanceError> {
    let w_star = inst.w_star(side);
    let sigma = inst.sigma(side);
    let covers = set.ellipsoid.contains(w_star, quadratic::FEASIBILITY_TOL);
    let inner_level = set.eps / set.strength;
    let inner_ok = quadratic::ellipsoid_contains(
        sigma,
        w_star,
        inner_level,
        &set.ellipsoid.shape,
        &set.ellipsoid.center,
        set.ellipsoid.radius2,
        1e-9,
    );
    let b = -(sigma * w_star);
    let c = (sigma * w_star).dot(w_star);
    let worst = quadratic::max_quadratic_over_ellipsoid(
        sigma,
        &b,
        c,
        &set.ellipsoid.shape,
        &set.ellipsoid.center,
        set.ellipsoid.radius2,
    );
    Ok(RegressionContractReport {
        covers_optimum: covers,
        inner_ok,
        outer_ok: worst.value <= set.eps + 1e-9,
        worst_excess: worst.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::CovariateModel;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_sample() -> LinearSample {
        LinearSample {
            side: Side::P,
            xs: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            ys: DVector::from_vec(vec![2.0, 4.2]),
            seed: 0,
        }
    }

    fn gaussian_fixture() -> LinearInstance {
        LinearInstance::new(
            DMatrix::identity(3, 3) * 0.005,
            DMatrix::identity(3, 3) * 0.005,
            DVector::from_vec(vec![0.3, -0.2, 0.1]),
            DVector::from_vec(vec![0.3, -0.2, 0.1]),
            1.0,
            CovariateModel::RescaledGaussian,
        )
        .unwrap()
    }

    #[test]
    fn ols_matches_hand_computation() {
        let sample = tiny_sample();
        let (w, sigma_hat) = ols_fit(&sample).unwrap();
        assert_abs_diff_eq!(sigma_hat[(0, 0)], 2.5, epsilon = 0.0);
        assert_abs_diff_eq!(w[0], 2.08, epsilon = 1e-14);
        let empty = LinearSample {
            side: Side::P,
            xs: DMatrix::zeros(0, 1),
            ys: DVector::zeros(0),
            seed: 0,
        };
        assert!(ols_fit(&empty).is_err());
        // a repeated covariate direction in 2d is singular
        let degenerate = LinearSample {
            side: Side::P,
            xs: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
            ys: DVector::from_vec(vec![1.0, 2.0]),
            seed: 0,
        };
        assert!(ols_fit(&degenerate).is_err());
    }

    #[test]
    fn sandwich_detects_misscaled_moments() {
        let inst = gaussian_fixture();
        let sample = inst.sample(Side::P, 4000, 7).unwrap();
        let sigma_hat = sample.second_moment();
        let report = sandwich_check(inst.sigma(Side::P), &sigma_hat);
        assert!(report.ok, "{report:?}");
        let off = sandwich_check(inst.sigma(Side::P), &(sigma_hat * 2.0));
        assert!(!off.ok);
        assert!(off.max_eig > 1.5);
    }

    #[test]
    fn radius_halves_exactly_when_sample_doubles() {
        let inst = gaussian_fixture();
        let params = RegressionParams::default();
        let small = inst.sample(Side::P, 1000, 3).unwrap();
        let big = inst.sample(Side::P, 2000, 4).unwrap();
        let set_small = regression_confidence_set(&small, 1.0, 0.05, 1.0, &params).unwrap();
        let set_big = regression_confidence_set(&big, 1.0, 0.05, 1.0, &params).unwrap();
        assert_eq!(
            set_small.ellipsoid.radius2,
            2.0 * set_big.ellipsoid.radius2,
            "dividing the same numerator by n then 2n must halve exactly"
        );
        assert_eq!(set_small.base_level, 2.0 * set_big.base_level);
    }

    #[test]
    fn fixture_sets_satisfy_their_contract() {
        let inst = gaussian_fixture();
        let params = RegressionParams::default();
        for seed in 0..15u64 {
            let sample = inst.sample(Side::P, 2000, 100 + seed).unwrap();
            let set = regression_confidence_set(&sample, 1.0, 0.05, 1.0, &params).unwrap();
            assert_abs_diff_eq!(set.eps, 26.0 * set.base_level, epsilon = 1e-15);
            assert_abs_diff_eq!(set.tau, 0.1, epsilon = 1e-15);
            let report = regression_contract_check(&inst, Side::P, &set).unwrap();
            assert!(report.ok(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn intersection_finds_witness_or_proves_emptiness() {
        let shape = DMatrix::identity(2, 2);
        let e1 = Ellipsoid::new(shape.clone(), DVector::from_vec(vec![0.0, 0.0]), 1.0).unwrap();
        let overlapping =
            Ellipsoid::new(shape.clone(), DVector::from_vec(vec![1.5, 0.0]), 1.0).unwrap();
        match ellipsoid_intersect(&e1, &overlapping).unwrap() {
            Feasibility::Witness(w) => {
                assert!(e1.contains(&w, 1e-9));
                assert!(overlapping.contains(&w, 1e-9));
            }
            other => panic!("expected witness, got {other:?}"),
        }
        let disjoint = Ellipsoid::new(shape, DVector::from_vec(vec![3.0, 0.0]), 1.0).unwrap();
        match ellipsoid_intersect(&e1, &disjoint).unwrap() {
            Feasibility::Empty { min_value } => {
                // the closest point of the unit disc is distance 2 away
                assert_abs_diff_eq!(min_value, 4.0, epsilon = 1e-8);
            }
            other => panic!("expected empty, got {other:?}"),
        }
    }

    #[test]
    fn constrained_risk_minimizer_is_stationary() {
        let inst = gaussian_fixture();
        let sample = inst.sample(Side::P, 500, 11).unwrap();
        // small off-center ellipsoid so the constraint binds
        let e = Ellipsoid::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            0.25,
        )
        .unwrap();
        let sol = min_empirical_risk_over_ellipsoid(&sample, &e).unwrap();
        assert!(sol.kkt_residual <= 1e-8, "kkt {:.3e}", sol.kkt_residual);
        assert!(e.contains(&sol.arg, 1e-9));
        // no feasible probe beats the reported value
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let dir = DVector::from_fn(3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let dir = if dir.norm() > 0.0 {
                dir.normalize()
            } else {
                dir
            };
            let w = &e.center + dir * 0.5 * rng.gen::<f64>();
            if e.contains(&w, 0.0) {
                assert!(sample.empirical_risk(&w) >= sol.value - 1e-9);
            }
        }
    }

    #[test]
    fn ellipsoid_json_is_row_major_and_validated() {
        let e = Ellipsoid::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            DVector::from_vec(vec![0.1, -0.2]),
            0.7,
        )
        .unwrap();
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["dim"], 2);
        assert_eq!(
            json["shape"].as_array().unwrap().len(),
            4,
            "shape flattens to dim^2 entries"
        );
        assert_eq!(json["shape"][1], 0.5);
        let back: Ellipsoid = serde_json::from_value(json).unwrap();
        assert_eq!(back.shape, e.shape);
        assert_eq!(back.center, e.center);
        assert_eq!(back.radius2, e.radius2);
        let bad = serde_json::json!({
            "dim": 2,
            "shape": [1.0, 0.0, 0.0, -1.0],
            "center": [0.0, 0.0],
            "radius2": 1.0
        });
        assert!(serde_json::from_value::<Ellipsoid>(bad).is_err());
        assert!(Ellipsoid::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.0, 0.0]),
            0.0
        )
        .is_err());
    }

    #[test]
    fn scaled_sets_nest() {
        let inst = gaussian_fixture();
        let params = RegressionParams::default();
        let sample = inst.sample(Side::Q, 2000, 21).unwrap();
        let half = regression_confidence_set(&sample, 1.0, 0.05, 0.5, &params).unwrap();
        let full = regression_confidence_set(&sample, 1.0, 0.05, 1.0, &params).unwrap();
        assert!(ellipsoid_contained(&half.ellipsoid, &full.ellipsoid, 1e-9));
        assert!(!ellipsoid_contained(&full.ellipsoid, &half.ellipsoid, 1e-9));
        assert_abs_diff_eq!(half.eps, 0.5 * full.eps, epsilon = 1e-15);
    }
}
