//! Problem instances: finite classification tasks and well-specified linear
//! regression tasks, each carrying a source distribution P and a target
//! distribution Q over the same covariate space and hypothesis class.
//!
//! Finite instances are fully enumerable: risks, excess risks, and
//! disagreement masses are computed exactly by weighted sums with
//! compensated accumulation. Linear instances describe squared-loss
//! regression with bounded covariates (`‖X‖ ≤ 1`), per-side second-moment
//! matrices, and per-side population minimizers; the population excess risk
//! of a weight vector has the closed form `(w − w_*)ᵀ Σ (w − w_*)`.
//!
//! Instances load from JSON (`{"kind": "finite", ...}` or
//! `{"kind": "linear", ...}`). Validation reports the first violated
//! invariant together with the JSON path that caused it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Which marginal of the instance a computation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Source distribution P.
    #[serde(rename = "p")]
    P,
    /// Target distribution Q.
    #[serde(rename = "q")]
    Q,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::P => "p",
            Side::Q => "q",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    /// An invariant failed; `path` points at the offending field.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("covariate sampler: {0}")]
    Sampler(String),
    #[error("instance parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl InstanceError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        InstanceError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Sum with Neumaier compensation; keeps exact-risk arithmetic stable enough
/// that independent oracles agree to 1e-12.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_simplex(path: &str, weights: &[f64]) -> Result<(), InstanceError> {
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() || *w < 0.0 {
            return Err(InstanceError::invalid(
                format!("{path}[{i}]"),
                format!("weight {w} is not a finite nonnegative number"),
            ));
        }
    }
    let total = compensated_sum(weights.iter().copied());
    if (total - 1.0).abs() > 1e-12 {
        return Err(InstanceError::invalid(
            path,
            format!("weights sum to {total}, expected 1 within 1e-12"),
        ));
    }
    Ok(())
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum = Vec::with_capacity(weights.len());
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    if let Some(last) = cum.last_mut() {
        *last = f64::INFINITY;
    }
    cum
}

fn draw_index(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1)
}

// ---------------------------------------------------------------------------
// Finite instances
// ---------------------------------------------------------------------------

/// A finite task: `m` atoms, per-side atom weights and positive-label
/// probabilities, and `k` hypotheses given as sign patterns over the atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteInstance {
    atoms: Vec<String>,
    p_weights: Vec<f64>,
    q_weights: Vec<f64>,
    p_eta: Vec<f64>,
    q_eta: Vec<f64>,
    hypotheses: Vec<Vec<i8>>,
    names: Vec<String>,
    metric: Option<DMatrix<f64>>,
}

/// Labeled sample from one side of a finite instance.
#[derive(Clone, Debug)]
pub struct FiniteSample {
    pub side: Side,
    /// Atom index of each draw.
    pub atoms: Vec<usize>,
    /// Label of each draw, `+1` or `-1`.
    pub labels: Vec<i8>,
    pub seed: u64,
}

impl FiniteSample {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Per-atom counts of positive and negative labels, indexed `[atom][0]`
    /// for `+1` and `[atom][1]` for `-1`.
    pub fn atom_label_counts(&self, num_atoms: usize) -> Vec<[u64; 2]> {
        let mut counts = vec![[0u64; 2]; num_atoms];
        for (&a, &y) in self.atoms.iter().zip(&self.labels) {
            if y > 0 {
                counts[a][0] += 1;
            } else {
                counts[a][1] += 1;
            }
        }
        counts
    }
}

impl FiniteInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        atoms: Vec<String>,
        p_weights: Vec<f64>,
        q_weights: Vec<f64>,
        p_eta: Vec<f64>,
        q_eta: Vec<f64>,
        hypotheses: Vec<Vec<i8>>,
        names: Option<Vec<String>>,
        metric: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, InstanceError> {
        let m = atoms.len();
        if m == 0 {
            return Err(InstanceError::invalid(
                "atoms",
                "at least one atom required",
            ));
        }
        for (field, v) in [
            ("p_weights", &p_weights),
            ("q_weights", &q_weights),
            ("p_eta", &p_eta),
            ("q_eta", &q_eta),
        ] {
            if v.len() != m {
                return Err(InstanceError::invalid(
                    field,
                    format!("expected {m} entries, got {}", v.len()),
                ));
            }
        }
        check_simplex("p_weights", &p_weights)?;
        check_simplex("q_weights", &q_weights)?;
        for (field, v) in [("p_eta", &p_eta), ("q_eta", &q_eta)] {
            for (i, e) in v.iter().enumerate() {
                if !e.is_finite() || *e < 0.0 || *e > 1.0 {
                    return Err(InstanceError::invalid(
                        format!("{field}[{i}]"),
                        format!("label probability {e} outside [0, 1]"),
                    ));
                }
            }
        }
        if hypotheses.is_empty() {
            return Err(InstanceError::invalid(
                "hypotheses",
                "at least one hypothesis required",
            ));
        }
        for (j, row) in hypotheses.iter().enumerate() {
            if row.len() != m {
                return Err(InstanceError::invalid(
                    format!("hypotheses[{j}]"),
                    format!("expected {m} entries, got {}", row.len()),
                ));
            }
            for (i, s) in row.iter().enumerate() {
                if *s != 1 && *s != -1 {
                    return Err(InstanceError::invalid(
                        format!("hypotheses[{j}][{i}]"),
                        format!("label {s} must be +1 or -1"),
                    ));
                }
            }
        }
        let names = match names {
            Some(n) => {
                if n.len() != hypotheses.len() {
                    return Err(InstanceError::invalid(
                        "names",
                        format!("expected {} entries, got {}", hypotheses.len(), n.len()),
                    ));
                }
                n
            }
            None => (0..hypotheses.len()).map(|j| format!("h{j}")).collect(),
        };
        let metric = match metric {
            Some(rows) => {
                if rows.len() != m {
                    return Err(InstanceError::invalid(
                        "metric",
                        format!("expected {m} rows, got {}", rows.len()),
                    ));
                }
                let mut mat = DMatrix::zeros(m, m);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != m {
                        return Err(InstanceError::invalid(
                            format!("metric[{i}]"),
                            format!("expected {m} entries, got {}", row.len()),
                        ));
                    }
                    for (j, c) in row.iter().enumerate() {
                        if !c.is_finite() || *c < 0.0 {
                            return Err(InstanceError::invalid(
                                format!("metric[{i}][{j}]"),
                                format!("cost {c} is not a finite nonnegative number"),
                            ));
                        }
                        mat[(i, j)] = *c;
                    }
                }
                Some(mat)
            }
            None => None,
        };
        Ok(FiniteInstance {
            atoms,
            p_weights,
            q_weights,
            p_eta,
            q_eta,
            hypotheses,
            names,
            metric,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn atom_names(&self) -> &[String] {
        &self.atoms
    }

    pub fn hypothesis_names(&self) -> &[String] {
        &self.names
    }

    pub fn hypothesis(&self, h: usize) -> &[i8] {
        &self.hypotheses[h]
    }

    pub fn hypotheses(&self) -> &[Vec<i8>] {
        &self.hypotheses
    }

    pub fn weights(&self, side: Side) -> &[f64] {
        match side {
            Side::P => &self.p_weights,
            Side::Q => &self.q_weights,
        }
    }

    pub fn eta(&self, side: Side) -> &[f64] {
        match side {
            Side::P => &self.p_eta,
            Side::Q => &self.q_eta,
        }
    }

    /// Optional atom-to-atom ground cost, used by transport-based
    /// discrepancy measures.
    pub fn metric(&self) -> Option<&DMatrix<f64>> {
        self.metric.as_ref()
    }

    fn check_hypothesis(&self, h: usize) -> Result<(), InstanceError> {
        if h >= self.hypotheses.len() {
            return Err(InstanceError::invalid(
                "hypothesis",
                format!(
                    "index {h} out of range for class of size {}",
                    self.hypotheses.len()
                ),
            ));
        }
        Ok(())
    }

    /// Exact 0-1 risk of hypothesis `h` under the chosen side.
    pub fn risk(&self, side: Side, h: usize) -> Result<f64, InstanceError> {
        self.check_hypothesis(h)?;
        let w = self.weights(side);
        let eta = self.eta(side);
        let row = &self.hypotheses[h];
        Ok(compensated_sum((0..w.len()).map(|i| {
            let err_prob = if row[i] > 0 { 1.0 - eta[i] } else { eta[i] };
            w[i] * err_prob
        })))
    }

    /// Exact risks of every hypothesis under the chosen side.
    pub fn risks(&self, side: Side) -> Vec<f64> {
        (0..self.hypotheses.len())
            .map(|h| self.risk(side, h).expect("index in range"))
            .collect()
    }

    /// Smallest risk over `subset` (entire class when `None`).
    pub fn min_risk(&self, side: Side, subset: Option<&[usize]>) -> Result<f64, InstanceError> {
        let risks = self.risks(side);
        match subset {
            None => Ok(risks.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(idx) => {
                if idx.is_empty() {
                    return Err(InstanceError::invalid(
                        "subset",
                        "excess risk is undefined against an empty reference set",
                    ));
                }
                let mut best = f64::INFINITY;
                for &h in idx {
                    self.check_hypothesis(h)?;
                    best = best.min(risks[h]);
                }
                Ok(best)
            }
        }
    }

    /// Excess risk of `h` relative to the best hypothesis in `subset`
    /// (entire class when `None`). May be negative when `h` beats the
    /// reference set.
    pub fn excess_risk(
        &self,
        side: Side,
        h: usize,
        subset: Option<&[usize]>,
    ) -> Result<f64, InstanceError> {
        let base = self.min_risk(side, subset)?;
        Ok(self.risk(side, h)? - base)
    }

    /// Excess risks of every hypothesis relative to the class optimum.
    pub fn excess_risks(&self, side: Side) -> Vec<f64> {
        let risks = self.risks(side);
        let best = risks.iter().copied().fold(f64::INFINITY, f64::min);
        risks.iter().map(|r| r - best).collect()
    }

    /// Probability mass, under the chosen side's marginal, of the set where
    /// two hypotheses disagree.
    pub fn disagreement(&self, side: Side, h1: usize, h2: usize) -> Result<f64, InstanceError> {
        self.check_hypothesis(h1)?;
        self.check_hypothesis(h2)?;
        let w = self.weights(side);
        let (r1, r2) = (&self.hypotheses[h1], &self.hypotheses[h2]);
        Ok(compensated_sum(
            (0..w.len()).filter(|&i| r1[i] != r2[i]).map(|i| w[i]),
        ))
    }

    /// Draw `n` labeled points i.i.d. from the chosen side. Deterministic
    /// for a fixed seed.
    pub fn sample(&self, side: Side, n: usize, seed: u64) -> FiniteSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cum = cumulative(self.weights(side));
        let eta = self.eta(side);
        let mut atoms = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let a = draw_index(&cum, rng.gen::<f64>());
            let y: i8 = if rng.gen::<f64>() < eta[a] { 1 } else { -1 };
            atoms.push(a);
            labels.push(y);
        }
        FiniteSample {
            side,
            atoms,
            labels,
            seed,
        }
    }

    /// Empirical 0-1 risk of hypothesis `h` on a sample.
    pub fn empirical_risk(&self, sample: &FiniteSample, h: usize) -> Result<f64, InstanceError> {
        self.check_hypothesis(h)?;
        if sample.is_empty() {
            return Err(InstanceError::invalid(
                "sample",
                "empirical risk undefined on an empty sample",
            ));
        }
        let row = &self.hypotheses[h];
        let errors = sample
            .atoms
            .iter()
            .zip(&sample.labels)
            .filter(|(&a, &y)| row[a] != y)
            .count();
        Ok(errors as f64 / sample.len() as f64)
    }

    /// Empirical risks of every hypothesis, computed from per-atom label
    /// counts in `O(n + k·m)`.
    pub fn empirical_risks(&self, sample: &FiniteSample) -> Result<Vec<f64>, InstanceError> {
        if sample.is_empty() {
            return Err(InstanceError::invalid(
                "sample",
                "empirical risk undefined on an empty sample",
            ));
        }
        let counts = sample.atom_label_counts(self.num_atoms());
        let n = sample.len() as f64;
        Ok(self
            .hypotheses
            .iter()
            .map(|row| {
                let mut errors = 0u64;
                for (i, cell) in counts.iter().enumerate() {
                    // predicted +1 misses the negative draws and vice versa
                    errors += if row[i] > 0 { cell[1] } else { cell[0] };
                }
                errors as f64 / n
            })
            .collect())
    }

    /// Fraction of sample points on which two hypotheses disagree.
    pub fn empirical_disagreement(
        &self,
        sample: &FiniteSample,
        h1: usize,
        h2: usize,
    ) -> Result<f64, InstanceError> {
        self.check_hypothesis(h1)?;
        self.check_hypothesis(h2)?;
        if sample.is_empty() {
            return Err(InstanceError::invalid(
                "sample",
                "empirical disagreement undefined on an empty sample",
            ));
        }
        let (r1, r2) = (&self.hypotheses[h1], &self.hypotheses[h2]);
        let differ = sample.atoms.iter().filter(|&&a| r1[a] != r2[a]).count();
        Ok(differ as f64 / sample.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Linear instances
// ---------------------------------------------------------------------------

/// How covariates are drawn for a linear instance. Both models keep
/// `‖X‖ ≤ 1` almost surely while matching the instance's per-side second
/// moment matrices.
#[derive(Clone, Debug, PartialEq)]
pub enum CovariateModel {
    /// Zero-mean Gaussian with the side's second moment, resampled on the
    /// (negligibly rare) event that a draw leaves the unit ball. Requires
    /// the second moment to be small enough that the Gaussian stays inside
    /// the ball up to probability ~1e-17; see
    /// [`LinearInstance::gaussian_ball_margin`].
    RescaledGaussian,
    /// Discrete mixture over fixed unit-ball points with per-side weights
    /// whose mixture second moments equal `sigma_p` and `sigma_q` exactly.
    AtomMixture {
        atoms: Vec<DVector<f64>>,
        p_weights: Vec<f64>,
        q_weights: Vec<f64>,
    },
}

/// Squared-loss regression task with bounded covariates: labels follow
/// `Y = w_*(side)·X + noise_scale·ξ` with standard Gaussian `ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInstance {
    dim: usize,
    sigma_p: DMatrix<f64>,
    sigma_q: DMatrix<f64>,
    w_star_p: DVector<f64>,
    w_star_q: DVector<f64>,
    noise_scale: f64,
    covariate_model: CovariateModel,
    lipschitz_radius: Option<f64>,
    output_bound: Option<f64>,
}

/// Labeled sample from one side of a linear instance; `xs` holds one
/// covariate row per draw.
#[derive(Clone, Debug)]
pub struct LinearSample {
    pub side: Side,
    pub xs: DMatrix<f64>,
    pub ys: DVector<f64>,
    pub seed: u64,
}

impl LinearSample {
    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    /// Empirical second moment `XᵀX / n`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let n = self.len() as f64;
        self.xs.transpose() * &self.xs / n
    }

    /// Empirical mean of `y·x`.
    pub fn xy_moment(&self) -> DVector<f64> {
        let n = self.len() as f64;
        self.xs.transpose() * &self.ys / n
    }

    /// Mean squared prediction error of weight vector `w`.
    pub fn empirical_risk(&self, w: &DVector<f64>) -> f64 {
        let resid = &self.xs * w - &self.ys;
        resid.norm_squared() / self.len() as f64
    }
}

fn check_spd(path: &str, m: &DMatrix<f64>, dim: usize) -> Result<(), InstanceError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(InstanceError::invalid(
            path,
            format!(
                "expected a {dim}x{dim} matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            ),
        ));
    }
    for i in 0..dim {
        for j in 0..dim {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() {
                return Err(InstanceError::invalid(
                    format!("{path}[{i}][{j}]"),
                    "entry is not finite",
                ));
            }
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return Err(InstanceError::invalid(
                    path,
                    format!("matrix is not symmetric at ({i}, {j})"),
                ));
            }
        }
    }
    let eig = m.clone().symmetric_eigen();
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig <= 0.0 {
        return Err(InstanceError::invalid(
            path,
            format!("matrix is not positive definite (min eigenvalue {min_eig:.3e})"),
        ));
    }
    Ok(())
}

impl LinearInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sigma_p: DMatrix<f64>,
        sigma_q: DMatrix<f64>,
        w_star_p: DVector<f64>,
        w_star_q: DVector<f64>,
        noise_scale: f64,
        covariate_model: CovariateModel,
    ) -> Result<Self, InstanceError> {
        let dim = sigma_p.nrows();
        if dim == 0 {
            return Err(InstanceError::invalid("dim", "dimension must be positive"));
        }
        check_spd("sigma_p", &sigma_p, dim)?;
        check_spd("sigma_q", &sigma_q, dim)?;
        for (field, v) in [("w_star_p", &w_star_p), ("w_star_q", &w_star_q)] {
            if v.len() != dim {
                return Err(InstanceError::invalid(
                    field,
                    format!("expected {dim} entries, got {}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(InstanceError::invalid(field, "entries must be finite"));
            }
        }
        if !noise_scale.is_finite() || noise_scale < 0.0 {
            return Err(InstanceError::invalid(
                "noise_scale",
                format!("noise scale {noise_scale} must be finite and nonnegative"),
            ));
        }
        if let CovariateModel::AtomMixture {
            atoms,
            p_weights,
            q_weights,
        } = &covariate_model
        {
            if atoms.is_empty() {
                return Err(InstanceError::invalid(
                    "covariate_model.atoms",
                    "at least one atom required",
                ));
            }
            for (i, a) in atoms.iter().enumerate() {
                if a.len() != dim {
                    return Err(InstanceError::invalid(
                        format!("covariate_model.atoms[{i}]"),
                        format!("expected {dim} entries, got {}", a.len()),
                    ));
                }
                if a.norm() > 1.0 + 1e-12 {
                    return Err(InstanceError::invalid(
                        format!("covariate_model.atoms[{i}]"),
                        format!("atom norm {} exceeds the unit ball", a.norm()),
                    ));
                }
            }
            for (field, wts, target) in [
                ("covariate_model.p_weights", p_weights, &sigma_p),
                ("covariate_model.q_weights", q_weights, &sigma_q),
            ] {
                if wts.len() != atoms.len() {
                    return Err(InstanceError::invalid(
                        field,
                        format!("expected {} entries, got {}", atoms.len(), wts.len()),
                    ));
                }
                check_simplex(field, wts)?;
                let mut moment = DMatrix::zeros(dim, dim);
                for (a, w) in atoms.iter().zip(wts) {
                    moment += a * a.transpose() * *w;
                }
                let err = (&moment - target).norm();
                if err > 1e-8 * (1.0 + target.norm()) {
                    return Err(InstanceError::invalid(
                        field,
                        format!("mixture second moment misses the declared one by {err:.3e}"),
                    ));
                }
            }
        }
        Ok(LinearInstance {
            dim,
            sigma_p,
            sigma_q,
            w_star_p,
            w_star_q,
            noise_scale,
            covariate_model,
            lipschitz_radius: None,
            output_bound: None,
        })
    }

    /// Attach the hypothesis-envelope constants used by the transport-based
    /// modulus bound: functions considered lie in the `lambda`-Lipschitz
    /// ball with outputs in `[-m_bound, m_bound]` over the covariate
    /// support.
    pub fn with_envelope(mut self, lambda: f64, m_bound: f64) -> Result<Self, InstanceError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(InstanceError::invalid(
                "lipschitz_radius",
                "must be finite and positive",
            ));
        }
        if !m_bound.is_finite() || m_bound <= 0.0 {
            return Err(InstanceError::invalid(
                "output_bound",
                "must be finite and positive",
            ));
        }
        self.lipschitz_radius = Some(lambda);
        self.output_bound = Some(m_bound);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::P => &self.sigma_p,
            Side::Q => &self.sigma_q,
        }
    }

    pub fn w_star(&self, side: Side) -> &DVector<f64> {
        match side {
            Side::P => &self.w_star_p,
            Side::Q => &self.w_star_q,
        }
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn covariate_model(&self) -> &CovariateModel {
        &self.covariate_model
    }

    pub fn lipschitz_radius(&self) -> Option<f64> {
        self.lipschitz_radius
    }

    pub fn output_bound(&self) -> Option<f64> {
        self.output_bound
    }

    /// Exact population excess risk `(w − w_*)ᵀ Σ (w − w_*)` of a weight
    /// vector under the chosen side.
    pub fn excess_risk(&self, side: Side, w: &DVector<f64>) -> Result<f64, InstanceError> {
        if w.len() != self.dim {
            return Err(InstanceError::invalid(
                "w",
                format!("expected {} entries, got {}", self.dim, w.len()),
            ));
        }
        let d = w - self.w_star(side);
        Ok((self.sigma(side) * &d).dot(&d))
    }

    /// Gaussian-in-the-ball margin for the rescaled-Gaussian model: the
    /// quadratic-form tail bound `tr(Σ) + 2√(40·tr(Σ²)) + 80·λ_max(Σ)`.
    /// Values at most 1 keep a draw outside the unit ball rarer than ~4e-18,
    /// so resampling never distorts the second moment measurably.
    pub fn gaussian_ball_margin(&self, side: Side) -> f64 {
        let sigma = self.sigma(side);
        let eig = sigma.clone().symmetric_eigen();
        let tr: f64 = eig.eigenvalues.iter().sum();
        let tr2: f64 = eig.eigenvalues.iter().map(|l| l * l).sum();
        let lmax = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        tr + 2.0 * (40.0 * tr2).sqrt() + 80.0 * lmax
    }

    /// Draw `n` labeled points i.i.d. from the chosen side. Deterministic
    /// for a fixed seed. Fails if the rescaled-Gaussian model cannot keep
    /// covariates inside the unit ball for this side's second moment.
    pub fn sample(&self, side: Side, n: usize, seed: u64) -> Result<LinearSample, InstanceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = DMatrix::zeros(n, self.dim);
        let mut ys = DVector::zeros(n);
        let w_star = self.w_star(side);
        match &self.covariate_model {
            CovariateModel::RescaledGaussian => {
                let margin = self.gaussian_ball_margin(side);
                if margin > 1.0 {
                    return Err(InstanceError::Sampler(format!(
                        "second moment too large for the unit-ball Gaussian model \
                         (margin {margin:.3} > 1); shrink sigma_{side} or use an atom mixture"
                    )));
                }
                let eig = self.sigma(side).clone().symmetric_eigen();
                let mut half = eig.eigenvectors.clone();
                for (j, l) in eig.eigenvalues.iter().enumerate() {
                    let s = l.max(0.0).sqrt();
                    half.column_mut(j).scale_mut(s);
                }
                let half = half * eig.eigenvectors.transpose();
                let mut z = DVector::zeros(self.dim);
                for r in 0..n {
                    let mut attempts = 0;
                    loop {
                        for zi in z.iter_mut() {
                            *zi = standard_normal(&mut rng);
                        }
                        let x = &half * &z;
                        if x.norm() <= 1.0 {
                            xs.row_mut(r).copy_from(&x.transpose());
                            break;
                        }
                        attempts += 1;
                        if attempts > 1000 {
                            return Err(InstanceError::Sampler(
                                "unit-ball resampling failed to terminate".into(),
                            ));
                        }
                    }
                }
            }
            CovariateModel::AtomMixture {
                atoms,
                p_weights,
                q_weights,
            } => {
                let weights = match side {
                    Side::P => p_weights,
                    Side::Q => q_weights,
                };
                let cum = cumulative(weights);
                for r in 0..n {
                    let a = draw_index(&cum, rng.gen::<f64>());
                    xs.row_mut(r).copy_from(&atoms[a].transpose());
                }
            }
        }
        for r in 0..n {
            let mean = xs.row(r).transpose().dot(w_star);
            ys[r] = mean + self.noise_scale * standard_normal(&mut rng);
        }
        Ok(LinearSample { side, xs, ys, seed })
    }
}

/// Standard normal draw via Box-Muller on two uniform deviates; avoids a
/// distribution-crate dependency and keeps the byte stream reproducible.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>();
        if u <= f64::MIN_POSITIVE {
            continue;
        }
        let v: f64 = rng.gen::<f64>();
        return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
    }
}

// ---------------------------------------------------------------------------
// JSON loading
// ---------------------------------------------------------------------------

/// Any supported instance kind.
#[derive(Clone, Debug)]
pub enum Instance {
    Finite(FiniteInstance),
    Linear(LinearInstance),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FiniteRaw {
    kind: String,
    atoms: Vec<String>,
    p_weights: Vec<f64>,
    q_weights: Vec<f64>,
    p_eta: Vec<f64>,
    q_eta: Vec<f64>,
    hypotheses: Vec<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metric: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum CovariateModelRaw {
    RescaledGaussian,
    AtomMixture {
        atoms: Vec<Vec<f64>>,
        p_weights: Vec<f64>,
        q_weights: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearRaw {
    kind: String,
    dim: usize,
    sigma_p: Vec<Vec<f64>>,
    sigma_q: Vec<Vec<f64>>,
    w_star_p: Vec<f64>,
    w_star_q: Vec<f64>,
    noise_scale: f64,
    covariate_model: CovariateModelRaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lipschitz_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_bound: Option<f64>,
}

fn matrix_from_rows(
    path: &str,
    rows: &[Vec<f64>],
    dim: usize,
) -> Result<DMatrix<f64>, InstanceError> {
    if rows.len() != dim {
        return Err(InstanceError::invalid(
            path,
            format!("expected {dim} rows, got {}", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(InstanceError::invalid(
                format!("{path}[{i}]"),
                format!("expected {dim} entries, got {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

impl Instance {
    pub fn from_json_str(text: &str) -> Result<Self, InstanceError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| InstanceError::invalid("kind", "missing or non-string"))?;
        match kind {
            "finite" => {
                let raw: FiniteRaw = serde_json::from_value(value.clone())?;
                let inst = FiniteInstance::new(
                    raw.atoms,
                    raw.p_weights,
                    raw.q_weights,
                    raw.p_eta,
                    raw.q_eta,
                    raw.hypotheses,
                    raw.names,
                    raw.metric,
                )?;
                Ok(Instance::Finite(inst))
            }
            "linear" => {
                let raw: LinearRaw = serde_json::from_value(value.clone())?;
                if raw.dim == 0 {
                    return Err(InstanceError::invalid("dim", "dimension must be positive"));
                }
                let sigma_p = matrix_from_rows("sigma_p", &raw.sigma_p, raw.dim)?;
                let sigma_q = matrix_from_rows("sigma_q", &raw.sigma_q, raw.dim)?;
                let model = match raw.covariate_model {
                    CovariateModelRaw::RescaledGaussian => CovariateModel::RescaledGaussian,
                    CovariateModelRaw::AtomMixture {
                        atoms,
                        p_weights,
                        q_weights,
                    } => CovariateModel::AtomMixture {
                        atoms: atoms.into_iter().map(DVector::from_vec).collect(),
                        p_weights,
                        q_weights,
                    },
                };
                let mut inst = LinearInstance::new(
                    sigma_p,
                    sigma_q,
                    DVector::from_vec(raw.w_star_p),
                    DVector::from_vec(raw.w_star_q),
                    raw.noise_scale,
                    model,
                )?;
                match (raw.lipschitz_radius, raw.output_bound) {
                    (Some(l), Some(m)) => inst = inst.with_envelope(l, m)?,
                    (None, None) => {}
                    _ => {
                        return Err(InstanceError::invalid(
                            "lipschitz_radius",
                            "lipschitz_radius and output_bound must be given together",
                        ))
                    }
                }
                Ok(Instance::Linear(inst))
            }
            other => Err(InstanceError::invalid(
                "kind",
                format!("unsupported instance kind {other:?}"),
            )),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String, InstanceError> {
        let value = match self {
            Instance::Finite(inst) => serde_json::to_value(FiniteRaw {
                kind: "finite".into(),
                atoms: inst.atoms.clone(),
                p_weights: inst.p_weights.clone(),
                q_weights: inst.q_weights.clone(),
                p_eta: inst.p_eta.clone(),
                q_eta: inst.q_eta.clone(),
                hypotheses: inst.hypotheses.clone(),
                names: Some(inst.names.clone()),
                metric: inst.metric.as_ref().map(|m| {
                    (0..m.nrows())
                        .map(|i| m.row(i).iter().copied().collect())
                        .collect()
                }),
            })?,
            Instance::Linear(inst) => {
                let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
                    (0..m.nrows())
                        .map(|i| m.row(i).iter().copied().collect())
                        .collect()
                };
                serde_json::to_value(LinearRaw {
                    kind: "linear".into(),
                    dim: inst.dim,
                    sigma_p: rows(&inst.sigma_p),
                    sigma_q: rows(&inst.sigma_q),
                    w_star_p: inst.w_star_p.iter().copied().collect(),
                    w_star_q: inst.w_star_q.iter().copied().collect(),
                    noise_scale: inst.noise_scale,
                    covariate_model: match &inst.covariate_model {
                        CovariateModel::RescaledGaussian => CovariateModelRaw::RescaledGaussian,
                        CovariateModel::AtomMixture {
                            atoms,
                            p_weights,
                            q_weights,
                        } => CovariateModelRaw::AtomMixture {
                            atoms: atoms.iter().map(|a| a.iter().copied().collect()).collect(),
                            p_weights: p_weights.clone(),
                            q_weights: q_weights.clone(),
                        },
                    },
                    lipschitz_radius: inst.lipschitz_radius,
                    output_bound: inst.output_bound,
                })?
            }
        };
        Ok(serde_json::to_string_pretty(&value)?)
    }
}

// ---------------------------------------------------------------------------
// Built-in instances
// ---------------------------------------------------------------------------

/// Two-atom, three-hypothesis task where source and target rank the
/// non-optimal hypotheses in opposite order. The class optimum under P
/// carries target excess risk 0.40, so source data alone cannot push the
/// target excess below that plateau. Used as the canonical fixture
/// throughout the test suite.
pub fn two_atom_gap() -> FiniteInstance {
    FiniteInstance::new(
        vec!["x0".into(), "x1".into()],
        vec![0.5, 0.5],
        vec![0.5, 0.5],
        vec![1.0, 0.9],
        vec![1.0, 0.1],
        vec![vec![1, 1], vec![1, -1], vec![-1, 1]],
        Some(vec!["h_a".into(), "h_b".into(), "h_c".into()]),
        Some(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
    )
    .expect("fixture is valid")
}

/// Source puts all its mass on one atom where both hypotheses tie, so the
/// source distribution carries no information about the target ranking and
/// the weak modulus is flat at the worst excess risk. Exercises
/// negative-transfer behavior: the good hypothesis is listed first.
pub fn uninformative_source() -> FiniteInstance {
    FiniteInstance::new(
        vec!["x0".into(), "x1".into()],
        vec![1.0, 0.0],
        vec![0.5, 0.5],
        vec![0.5, 0.5],
        vec![1.0, 0.1],
        vec![vec![1, -1], vec![-1, 1]],
        Some(vec!["h_good".into(), "h_bad".into()]),
        None,
    )
    .expect("fixture is valid")
}

// ---------------------------------------------------------------------------
// Random instance generators for property sweeps
// ---------------------------------------------------------------------------

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| -(rng.gen::<f64>().max(1e-12)).ln())
        .collect();
    let total: f64 = compensated_sum(w.iter().copied());
    for x in &mut w {
        *x /= total;
    }
    // push rounding residue onto the heaviest coordinate so the sum is exact
    let residue = 1.0 - compensated_sum(w.iter().copied());
    let imax = (0..k)
        .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap())
        .unwrap();
    w[imax] += residue;
    w
}

/// Deterministic random classification task: between 2 and `max_atoms`
/// atoms, between 2 and `max_hypotheses` sign patterns, smooth random
/// marginals and label probabilities.
pub fn random_finite_instance(
    seed: u64,
    max_atoms: usize,
    max_hypotheses: usize,
) -> FiniteInstance {
    assert!(max_atoms >= 2 && max_hypotheses >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=max_atoms);
    let m = rng.gen_range(2..=max_hypotheses);
    let atoms = (0..k).map(|i| format!("x{i}")).collect();
    let p_weights = random_simplex(&mut rng, k);
    let q_weights = random_simplex(&mut rng, k);
    let p_eta: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
    let q_eta: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
    let hypotheses: Vec<Vec<i8>> = (0..m)
        .map(|_| {
            (0..k)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect()
        })
        .collect();
    FiniteInstance::new(
        atoms, p_weights, q_weights, p_eta, q_eta, hypotheses, None, None,
    )
    .expect("generated instance is valid")
}

fn random_small_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() - 0.5);
    let q = g.qr().q();
    let vals = DVector::from_fn(d, |_, _| (2e-4 + 1.8e-3 * rng.gen::<f64>()) / d as f64);
    let m = &q * DMatrix::from_diagonal(&vals) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Deterministic random regression task with Gaussian covariates whose
/// second moments are small enough that unit-ball sampling is exact. Set
/// `shared_minimizer` to make both sides share one population minimizer.
pub fn random_linear_instance(seed: u64, max_dim: usize, shared_minimizer: bool) -> LinearInstance {
    assert!(max_dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..=max_dim);
    let sigma_p = random_small_spd(&mut rng, d);
    let sigma_q = random_small_spd(&mut rng, d);
    let w_star_p = DVector::from_fn(d, |_, _| (rng.gen::<f64>() - 0.5) * 0.6);
    let w_star_q = if shared_minimizer {
        w_star_p.clone()
    } else {
        DVector::from_fn(d, |_, _| (rng.gen::<f64>() - 0.5) * 0.6)
    };
    let noise = 0.05 + 0.1 * rng.gen::<f64>();
    LinearInstance::new(
        sigma_p,
        sigma_q,
        w_star_p,
        w_star_q,
        noise,
        CovariateModel::RescaledGaussian,
    )
    .expect("generated instance is valid")
}

/// Deterministic random regression task over explicit unit-ball atoms with
/// a shared population minimizer and a transport-friendly envelope, for
/// checking marginal-transport bounds. `num_atoms` must be at least `dim`
/// so the mixture second moments stay positive definite.
pub fn random_atom_mixture_instance(seed: u64, dim: usize, num_atoms: usize) -> LinearInstance {
    assert!(num_atoms >= dim && dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms: Vec<DVector<f64>> = (0..num_atoms)
        .map(|_| {
            let v = DVector::from_fn(dim, |_, _| standard_normal(&mut rng));
            let scale = (0.3 + 0.7 * rng.gen::<f64>()) / v.norm().max(1e-9);
            v * scale
        })
        .collect();
    let p_weights = random_simplex(&mut rng, num_atoms);
    let q_weights = random_simplex(&mut rng, num_atoms);
    let moment = |wts: &[f64]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        for (a, w) in atoms.iter().zip(wts) {
            m += a * a.transpose() * *w;
        }
        m
    };
    let sigma_p = moment(&p_weights);
    let sigma_q = moment(&q_weights);
    let w_star = DVector::from_fn(dim, |_, _| (rng.gen::<f64>() - 0.5) * 0.8);
    let min_eig_p = sigma_p
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    // envelope wide enough to cover every constraint level probed in tests
    let envelope = w_star.norm() + (1.0 / min_eig_p.max(1e-12)).sqrt() + 0.5;
    LinearInstance::new(
        sigma_p,
        sigma_q,
        w_star.clone(),
        w_star,
        0.1,
        CovariateModel::AtomMixture {
            atoms,
            p_weights,
            q_weights,
        },
    )
    .and_then(|inst| inst.with_envelope(envelope, envelope))
    .expect("generated instance is valid")
}
