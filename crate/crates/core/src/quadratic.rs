//! Exact optimization of quadratic functions over balls and ellipsoids.
//!
//! Everything here reduces to the classical trust-region subproblem: after
//! whitening the constraint to a Euclidean ball and diagonalizing the
//! quadratic, the stationarity conditions collapse to a one-dimensional
//! secular equation
//!
//! ```text
//! phi(nu) = sum_i btilde_i^2 / (nu - lambda_i)^2 = r^2
//! ```
//!
//! in the Lagrange multiplier `nu`, which is strictly decreasing on the
//! admissible interval. The solver runs safeguarded Newton steps on the
//! standard reciprocal transform of `phi` inside a shrinking bracket and
//! falls back to plain bisection if Newton has not converged after 200
//! steps. The degenerate branch (`btilde` vanishing on the top eigenspace)
//! is handled explicitly, since the shared-minimizer problems used in the
//! linear modulus land there exactly.
//!
//! Ellipsoid-in-ellipsoid containment is decided by the one-multiplier
//! S-procedure condition, which is exact for two quadratics: containment
//! holds iff some `lam >= 0` makes an augmented `(d+1) x (d+1)` matrix
//! positive semidefinite. The smallest eigenvalue of that affine family is
//! concave in `lam`, so a derivative-free search on the multiplier decides
//! the condition.

use nalgebra::{DMatrix, DVector};

/// Absolute tolerance on the secular-equation multiplier.
pub const MULTIPLIER_TOL: f64 = 1e-12;

/// Newton steps allowed before the solver falls back to bisection.
pub const MAX_NEWTON_STEPS: usize = 200;

/// Default feasibility slack for ellipsoid membership tests.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Result of optimizing a quadratic over a ball or ellipsoid.
#[derive(Clone, Debug)]
pub struct QuadOpt {
    /// Optimal objective value.
    pub value: f64,
    /// An optimizer (in the original coordinates for ellipsoid problems).
    pub arg: DVector<f64>,
    /// KKT multiplier of the norm constraint.
    pub multiplier: f64,
    /// Whether the optimum lies strictly inside the constraint.
    pub interior: bool,
    /// Norm of the stationarity residual at the reported optimizer.
    pub kkt_residual: f64,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of the symmetrized input.
fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Symmetric square root and inverse square root of an SPD matrix.
/// Panics if the matrix is not positive definite; shapes are validated by
/// the callers at construction time.
pub fn spd_sqrt_pair(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (vals, vecs) = sym_eigen(a);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(
        min > 0.0,
        "shape matrix must be positive definite (min eigenvalue {min:.3e})"
    );
    let mut half = vecs.clone();
    let mut inv_half = vecs.clone();
    for (j, l) in vals.iter().enumerate() {
        half.column_mut(j).scale_mut(l.sqrt());
        inv_half.column_mut(j).scale_mut(1.0 / l.sqrt());
    }
    (half * vecs.transpose(), inv_half * vecs.transpose())
}

/// Largest eigenvalue of `A^{-1/2} B A^{-1/2}` for SPD `A`, symmetric `B`.
pub fn generalized_max_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (_, a_inv_half) = spd_sqrt_pair(a);
    let m = symmetrize(&(&a_inv_half * b * &a_inv_half));
    let (vals, _) = sym_eigen(&m);
    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn quad_value(m: &DMatrix<f64>, b: &DVector<f64>, c: f64, z: &DVector<f64>) -> f64 {
    (m * z).dot(z) + 2.0 * b.dot(z) + c
}

/// phi(nu) and phi'(nu) for the secular equation.
fn phi_and_deriv(lambdas: &DVector<f64>, btilde: &DVector<f64>, nu: f64) -> (f64, f64) {
    let mut phi = 0.0;
    let mut dphi = 0.0;
    for (l, bi) in lambdas.iter().zip(btilde.iter()) {
        if *bi == 0.0 {
            continue;
        }
        let gap = nu - l;
        let t = bi / gap;
        phi += t * t;
        dphi += -2.0 * t * t / gap;
    }
    (phi, dphi)
}

/// Maximize `z' M z + 2 b' z + c` over the ball `|z|^2 <= r2`.
pub fn max_quadratic_over_ball(m: &DMatrix<f64>, b: &DVector<f64>, c: f64, r2: f64) -> QuadOpt {
    let d = m.nrows();
    assert_eq!(m.ncols(), d, "quadratic matrix must be square");
    assert_eq!(b.len(), d, "linear term dimension mismatch");
    assert!(
        r2.is_finite() && r2 >= 0.0,
        "radius^2 must be finite and nonnegative"
    );
    if r2 == 0.0 {
        let z = DVector::zeros(d);
        return QuadOpt {
            value: c,
            arg: z,
            multiplier: 0.0,
            interior: false,
            kkt_residual: 0.0,
        };
    }
    let (lambdas, vecs) = sym_eigen(m);
    let btilde = vecs.transpose() * b;
    let lmax = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let finish = |ztilde: DVector<f64>, nu: f64, interior: bool| -> QuadOpt {
        let mut z = &vecs * ztilde;
        let norm2 = z.norm_squared();
        if norm2 > r2 {
            z.scale_mut((r2 / norm2).sqrt());
        }
        let value = quad_value(m, b, c, &z);
        let grad = m * &z + b;
        let residual = (&grad - &z * nu).norm();
        let scale = 1.0 + grad.norm() + nu * z.norm();
        QuadOpt {
            value,
            arg: z,
            multiplier: nu,
            interior,
            kkt_residual: residual / scale,
        }
    };

    // concave objective: the unconstrained stationary point may win
    if lmax < 0.0 {
        let ztilde = DVector::from_fn(d, |i, _| {
            let bi = btilde[i];
            if bi == 0.0 {
                0.0
            } else {
                -bi / lambdas[i]
            }
        });
        if ztilde.norm_squared() <= r2 {
            return finish(ztilde, 0.0, true);
        }
    }

    let lower = lmax.max(0.0);
    let bnorm = btilde.norm();

    // degenerate branch: no component of b on the top eigenspace
    if lmax >= 0.0 {
        let tol_l = 1e-12 * lmax.abs().max(1.0);
        let top: Vec<usize> = (0..d).filter(|&i| lambdas[i] >= lmax - tol_l).collect();
        let b_top: f64 = top
            .iter()
            .map(|&i| btilde[i] * btilde[i])
            .sum::<f64>()
            .sqrt();
        if b_top <= 1e-13 * bnorm.max(1e-30) || bnorm == 0.0 {
            let mut p2 = 0.0;
            let mut ztilde = DVector::zeros(d);
            for i in 0..d {
                if top.contains(&i) || btilde[i] == 0.0 {
                    continue;
                }
                let zi = btilde[i] / (lmax - lambdas[i]);
                ztilde[i] = zi;
                p2 += zi * zi;
            }
            if p2 <= r2 {
                ztilde[top[0]] = (r2 - p2).sqrt();
                return finish(ztilde, lmax, false);
            }
        }
    }

    // secular equation on (lower, upper]
    let upper = lmax + bnorm / r2.sqrt();
    let mut lo = lower;
    let mut hi = upper.max(lower) + MULTIPLIER_TOL;
    let (mut phi_hi, _) = phi_and_deriv(&lambdas, &btilde, hi);
    let mut guard = 0;
    while phi_hi > r2 && guard < 128 {
        hi = lower + (hi - lower) * 2.0 + 1.0;
        phi_hi = phi_and_deriv(&lambdas, &btilde, hi).0;
        guard += 1;
    }
    let mut nu = 0.5 * (lo + hi);
    let mut last_eval: Option<(f64, f64)> = None;
    for step in 0..(MAX_NEWTON_STEPS + 128) {
        let (phi, dphi) = phi_and_deriv(&lambdas, &btilde, nu);
        // dual sanity: phi is decreasing in nu on the admissible interval
        if let Some((prev_nu, prev_phi)) = last_eval {
            if nu > prev_nu {
                debug_assert!(
                    phi <= prev_phi * (1.0 + 1e-9) + 1e-300,
                    "secular value must decrease in the multiplier"
                );
            } else if nu < prev_nu {
                debug_assert!(
                    phi >= prev_phi * (1.0 - 1e-9) - 1e-300,
                    "secular value must increase toward the pole"
                );
            }
        }
        last_eval = Some((nu, phi));
        if phi > r2 {
            lo = lo.max(nu);
        } else {
            hi = hi.min(nu);
        }
        if hi - lo <= MULTIPLIER_TOL * (1.0 + nu.abs()) {
            break;
        }
        let next = if step < MAX_NEWTON_STEPS && phi > 0.0 && dphi != 0.0 {
            // Newton on 1/sqrt(phi) - 1/sqrt(r2), the near-linear transform
            let g = 1.0 / phi.sqrt() - 1.0 / r2.sqrt();
            let dg = -dphi / (2.0 * phi * phi.sqrt());
            nu - g / dg
        } else {
            f64::NAN
        };
        nu = if next.is_finite() && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    nu = nu.max(lo);
    let ztilde = DVector::from_fn(d, |i, _| {
        let bi = btilde[i];
        if bi == 0.0 {
            0.0
        } else {
            bi / (nu - lambdas[i])
        }
    });
    finish(ztilde, nu, false)
}

/// Minimize `z' M z + 2 b' z + c` over the ball `|z|^2 <= r2`.
pub fn min_quadratic_over_ball(m: &DMatrix<f64>, b: &DVector<f64>, c: f64, r2: f64) -> QuadOpt {
    let neg = max_quadratic_over_ball(&(-m), &(-b), -c, r2);
    QuadOpt {
        value: -neg.value,
        ..neg
    }
}

fn to_ball_coordinates(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    shape: &DMatrix<f64>,
    center: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>, f64, DMatrix<f64>) {
    let (_, inv_half) = spd_sqrt_pair(shape);
    let m_u = symmetrize(&(&inv_half * m * &inv_half));
    let b_u = &inv_half * (m * center + b);
    let c_u = (m * center).dot(center) + 2.0 * b.dot(center) + c;
    (m_u, b_u, c_u, inv_half)
}

#[allow(clippy::too_many_arguments)]
fn from_ball(
    sol: QuadOpt,
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    shape: &DMatrix<f64>,
    center: &DVector<f64>,
    inv_half: &DMatrix<f64>,
    maximize: bool,
) -> QuadOpt {
    let w = center + inv_half * &sol.arg;
    let value = quad_value(m, b, c, &w);
    let sign = if maximize { -1.0 } else { 1.0 };
    let grad = m * &w + b;
    let con = shape * (&w - center);
    let residual = (&grad + &con * (sign * sol.multiplier)).norm();
    let scale = 1.0 + grad.norm() + sol.multiplier * con.norm();
    QuadOpt {
        value,
        arg: w,
        multiplier: sol.multiplier,
        interior: sol.interior,
        kkt_residual: residual / scale,
    }
}

/// Maximize `w' M w + 2 b' w + c` over `(w - center)' shape (w - center) <= radius`.
pub fn max_quadratic_over_ellipsoid(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    shape: &DMatrix<f64>,
    center: &DVector<f64>,
    radius: f64,
) -> QuadOpt {
    let (m_u, b_u, c_u, inv_half) = to_ball_coordinates(m, b, c, shape, center);
    let sol = max_quadratic_over_ball(&m_u, &b_u, c_u, radius);
    from_ball(sol, m, b, c, shape, center, &inv_half, true)
}

/// Minimize `w' M w + 2 b' w + c` over `(w - center)' shape (w - center) <= radius`.
pub fn min_quadratic_over_ellipsoid(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    shape: &DMatrix<f64>,
    center: &DVector<f64>,
    radius: f64,
) -> QuadOpt {
    let (m_u, b_u, c_u, inv_half) = to_ball_coordinates(m, b, c, shape, center);
    let sol = min_quadratic_over_ball(&m_u, &b_u, c_u, radius);
    from_ball(sol, m, b, c, shape, center, &inv_half, false)
}

/// S-procedure matrix `M(lam)` for the containment test.
fn s_matrix(
    lam: f64,
    a1: &DMatrix<f64>,
    c1: &DVector<f64>,
    r1: f64,
    a2: &DMatrix<f64>,
    c2: &DVector<f64>,
    r2: f64,
) -> DMatrix<f64> {
    let d = a1.nrows();
    let block = a1 * lam - a2;
    let v = a2 * c2 - a1 * c1 * lam;
    let s00 = lam * ((a1 * c1).dot(c1) - r1) - ((a2 * c2).dot(c2) - r2);
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m.view_mut((0, 0), (d, d)).copy_from(&block);
    for i in 0..d {
        m[(i, d)] = v[i];
        m[(d, i)] = v[i];
    }
    m[(d, d)] = s00;
    m
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Decide whether the ellipsoid `(a1, c1, r1)` is contained in
/// `(a2, c2, r2)` via the one-multiplier S-procedure condition, searching
/// the multiplier by derivative-free bisection of the concave margin.
pub fn ellipsoid_contains(
    a1: &DMatrix<f64>,
    c1: &DVector<f64>,
    r1: f64,
    a2: &DMatrix<f64>,
    c2: &DVector<f64>,
    r2: f64,
    tol: f64,
) -> bool {
    assert!(r1 > 0.0 && r2 > 0.0, "ellipsoid levels must be positive");
    let margin = |lam: f64| -> f64 { min_eigenvalue(&s_matrix(lam, a1, c1, r1, a2, c2, r2)) };
    // the top generalized eigenvalue is where the leading block turns PSD
    let lam_bar = generalized_max_eigenvalue(a1, a2).max(0.0);
    let mut hi = 2.0 * lam_bar + 1.0;
    let mut guard = 0;
    while margin(hi) > margin(hi * 0.98) && guard < 90 {
        hi *= 2.0;
        guard += 1;
    }
    // golden-section the concave margin over [0, hi]
    let gr = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, hi);
    let mut x1 = hi - gr * (hi - lo);
    let mut x2 = lo + gr * (hi - lo);
    let mut f1 = margin(x1);
    let mut f2 = margin(x2);
    for _ in 0..200 {
        if hi - lo <= MULTIPLIER_TOL * (1.0 + hi.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = margin(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = margin(x1);
        }
    }
    let best_lam = if f1 > f2 { x1 } else { x2 };
    let best = margin(best_lam).max(margin(0.0)).max(margin(lam_bar));
    let scale = 1.0
        + s_matrix(best_lam, a1, c1, r1, a2, c2, r2)
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
    best >= -tol * scale
}
