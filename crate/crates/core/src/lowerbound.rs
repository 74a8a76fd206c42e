//! Hard-family construction for minimax lower bounds.
//!
//! The construction places `d + 1` atoms: an anchor `x0` whose label is
//! deterministically `+1`, and `d` signal atoms whose regression
//! functions sit a calibrated step above or below `1/2`. A family
//! member is indexed by a sign pattern `sigma` drawn from a
//! well-separated code ([`vg_code`]); member `sigma` tilts atom `i`
//! toward `sigma_i` on both the source and the target, with step sizes
//! chosen so that every hypothesis `h_sigma'` has source excess
//! `(ham / d) * eps_p` and target excess `(ham / (d * kappa0)) * eps`,
//! where `ham` is the Hamming distance between the patterns.
//!
//! [`verify_membership`] re-derives those identities numerically from
//! the built instances, checks that each member's transfer modulus
//! stays below the admissible envelope `f`, and confirms the
//! sublevel-set geometry (radius within `level^beta`, diameter within
//! twice that — the factor two is load-bearing: antipodal patterns
//! inside one sublevel set realize it). [`kl_budget`] computes the
//! exact pairwise sample KL divergences and compares them against the
//! `ln(M) / 8` identification budget, and [`minimax_simulate`] plays
//! concrete learners against the family to exhibit the unavoidable
//! worst-member excess.

use crate::conf_class::ComplexityParams;
use crate::instances::{FiniteInstance, FiniteSample, InstanceError, Side};
use crate::moduli::weak_modulus_curve;
use crate::seeding::{sub_seed, trial_seed};
use crate::transfer::algorithm_weak;

/// Largest dimension [`vg_code`] accepts (patterns are scanned as `u64`
/// bitmasks).
pub const MAX_CODE_DIM: usize = 32;

fn popcount_distance(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

fn mask_to_pattern(mask: u64, d: usize) -> Vec<i8> {
    (0..d)
        .map(|j| if (mask >> j) & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// Greedy binary code over `{-1, +1}^d` with pairwise Hamming distance
/// at least `d / 8`. The scan starts from the all-ones pattern and then
/// walks the integers `0, 1, 2, ...` interpreted bitwise, keeping each
/// candidate that is far from everything kept so far; it stops as soon
/// as `max(2, ceil(2^(d/8)))` codewords are collected, which a volume
/// argument guarantees it reaches.
pub fn vg_code(d: usize) -> Result<Vec<Vec<i8>>, InstanceError> {
    if d == 0 || d > MAX_CODE_DIM {
        return Err(InstanceError::invalid(
            "d",
            format!("code dimension {d} must lie in 1..={MAX_CODE_DIM}"),
        ));
    }
    let min_dist = (d as f64) / 8.0;
    let target = 2usize.max((2f64.powf(d as f64 / 8.0)).ceil() as usize);
    let all_ones: u64 = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
    let mut kept: Vec<u64> = vec![all_ones];
    let mut candidate: u64 = 0;
    let limit: u64 = if d >= 63 { u64::MAX } else { 1u64 << d };
    while kept.len() < target && candidate < limit {
        let ok = kept
            .iter()
            .all(|&k| popcount_distance(k, candidate) as f64 >= min_dist);
        if ok {
            kept.push(candidate);
        }
        candidate += 1;
    }
    if kept.len() < target {
        return Err(InstanceError::invalid(
            "d",
            format!("code scan exhausted before reaching {target} words"),
        ));
    }
    Ok(kept.into_iter().map(|m| mask_to_pattern(m, d)).collect())
}

// ---------------------------------------------------------------------------
// Admissible envelopes
// ---------------------------------------------------------------------------

/// A tabulated nondecreasing envelope `f` with `f(0) = 0`, evaluated by
/// linear interpolation between knots (and extended with the final
/// segment's slope beyond the last knot). `kappa` is the advertised
/// sub-homogeneity constant: `alpha * f(x) <= kappa * f(alpha * x)`.
#[derive(Clone, Debug)]
pub struct FSpec {
    knots: Vec<(f64, f64)>,
    kappa: f64,
}

impl FSpec {
    /// The identity envelope `f(x) = x` with `kappa = 1`.
    pub fn identity() -> Self {
        FSpec {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
            kappa: 1.0,
        }
    }

    /// Build an envelope from `(x, f(x))` knots. The knots must start at
    /// `(0, 0)`, be strictly increasing in `x`, nondecreasing in value,
    /// and finite; `kappa` must be at least 1.
    pub fn from_knots(knots: Vec<(f64, f64)>, kappa: f64) -> Result<Self, InstanceError> {
        if knots.len() < 2 {
            return Err(InstanceError::invalid("knots", "need at least two knots"));
        }
        if knots[0] != (0.0, 0.0) {
            return Err(InstanceError::invalid(
                "knots",
                "the first knot must be (0, 0)",
            ));
        }
        for pair in knots.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            if !(x1.is_finite() && y1.is_finite()) {
                return Err(InstanceError::invalid("knots", "knots must be finite"));
            }
            if x1 <= x0 {
                return Err(InstanceError::invalid(
                    "knots",
                    "knot abscissas must be strictly increasing",
                ));
            }
            if y1 < y0 {
                return Err(InstanceError::invalid(
                    "knots",
                    "knot values must be nondecreasing",
                ));
            }
        }
        if !kappa.is_finite() || kappa < 1.0 {
            return Err(InstanceError::invalid(
                "kappa",
                format!("sub-homogeneity constant {kappa} must be >= 1"),
            ));
        }
        Ok(FSpec { knots, kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Piecewise-linear evaluation; negative arguments are rejected.
    pub fn eval(&self, x: f64) -> Result<f64, InstanceError> {
        if !x.is_finite() || x < 0.0 {
            return Err(InstanceError::invalid(
                "x",
                format!("envelope argument {x} must be finite and nonnegative"),
            ));
        }
        let last = self.knots.len() - 1;
        let seg = if x >= self.knots[last].0 {
            last - 1
        } else {
            // first segment whose right endpoint exceeds x
            self.knots.partition_point(|(k, _)| *k <= x).min(last) - 1
        };
        let (x0, y0) = self.knots[seg];
        let (x1, y1) = self.knots[seg + 1];
        Ok(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    }

    /// Check `alpha * f(x) <= kappa * f(alpha * x)` over a grid of about
    /// 1024 `(alpha, x)` pairs spanning the knot range. Returns the
    /// first violating pair, if any.
    pub fn check_kappa(&self) -> Result<Option<(f64, f64)>, InstanceError> {
        let x_max = self.knots[self.knots.len() - 1].0;
        for i in 1..=32usize {
            let alpha = i as f64 / 32.0;
            for j in 1..=32usize {
                let x = x_max * j as f64 / 32.0;
                let lhs = alpha * self.eval(x)?;
                let rhs = self.kappa * self.eval(alpha * x)?;
                if lhs > rhs * (1.0 + 1e-12) + 1e-15 {
                    return Ok(Some((alpha, x)));
                }
            }
        }
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Family construction
// ---------------------------------------------------------------------------

/// Parameters of the hard family.
#[derive(Clone, Debug)]
pub struct HardFamilyConfig {
    /// Number of signal atoms (and code dimension).
    pub d: usize,
    /// Source sample size the rates are calibrated to.
    pub n_p: usize,
    /// Target sample size the rates are calibrated to.
    pub n_q: usize,
    /// Source noise exponent in `[0, 1]`.
    pub beta_p: f64,
    /// Target noise exponent in `[0, 1]`.
    pub beta_q: f64,
    /// Source rate multiplier in `(0, 1]`.
    pub c0: f64,
    /// Target rate multiplier in `(0, 1]`.
    pub c1: f64,
    /// Admissible transfer envelope.
    pub f: FSpec,
    /// Use the full `2^d` sign-pattern class (requires `d <= 16`);
    /// otherwise the class is the code itself.
    pub full_class: bool,
}

impl HardFamilyConfig {
    /// Conservative defaults: flat exponents, multipliers `0.01`, the
    /// identity envelope, and the full pattern class when it fits.
    pub fn new(d: usize, n_p: usize, n_q: usize) -> Self {
        HardFamilyConfig {
            d,
            n_p,
            n_q,
            beta_p: 0.0,
            beta_q: 0.0,
            c0: 0.01,
            c1: 0.01,
            f: FSpec::identity(),
            full_class: d <= 16,
        }
    }
}

/// A built hard family: one instance per codeword, sharing atoms and
/// hypothesis class, differing only in the regression functions.
#[derive(Clone, Debug)]
pub struct HardFamily {
    pub members: Vec<FiniteInstance>,
    pub codewords: Vec<Vec<i8>>,
    /// Index of member `j`'s own pattern inside the hypothesis class.
    pub bayes_index: Vec<usize>,
    /// Target excess scale: `c1 * rate`.
    pub eps: f64,
    /// Source excess scale.
    pub eps_p: f64,
    /// Target base rate `(d / n_q)^(1 / (2 - beta_q))`.
    pub eps_q: f64,
    /// `min(eps_q, f(eps_p / 8))` — the scale lower bounds are stated
    /// against.
    pub rate: f64,
    pub kappa0: f64,
    pub config: HardFamilyConfig,
}

fn pattern_index_full(sigma: &[i8]) -> usize {
    sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 1)
        .map(|(j, _)| 1usize << j)
        .sum()
}

/// Build the family. Rates follow the calibration
/// `eps_p = c0 * (d / n_p)^(1/(2-beta_p))`,
/// `eps_q = (d / n_q)^(1/(2-beta_q))`,
/// `eps = c1 * min(eps_q, f(eps_p / 8))`, with `kappa0 = 1`. Atom
/// masses are `eps_p^beta_p / d` (source) and `eps^beta_q / (d kappa0)`
/// (target) on each signal atom, the remainder on the anchor.
pub fn build_hard_family(cfg: &HardFamilyConfig) -> Result<HardFamily, InstanceError> {
    if cfg.d == 0 || cfg.d > MAX_CODE_DIM {
        return Err(InstanceError::invalid(
            "d",
            format!("dimension {} out of range", cfg.d),
        ));
    }
    if cfg.full_class && cfg.d > 16 {
        return Err(InstanceError::invalid(
            "full_class",
            "the full pattern class is limited to d <= 16",
        ));
    }
    if cfg.n_p == 0 || cfg.n_q == 0 {
        return Err(InstanceError::invalid(
            "n",
            "calibration sample sizes must be positive",
        ));
    }
    for (name, beta) in [("beta_p", cfg.beta_p), ("beta_q", cfg.beta_q)] {
        if !beta.is_finite() || !(0.0..=1.0).contains(&beta) {
            return Err(InstanceError::invalid(
                name,
                format!("exponent {beta} must lie in [0, 1]"),
            ));
        }
    }
    for (name, c) in [("c0", cfg.c0), ("c1", cfg.c1)] {
        if !c.is_finite() || c <= 0.0 || c > 1.0 {
            return Err(InstanceError::invalid(
                name,
                format!("multiplier {c} must lie in (0, 1]"),
            ));
        }
    }
    if let Some((alpha, x)) = cfg.f.check_kappa()? {
        return Err(InstanceError::invalid(
            "f",
            format!("envelope fails the scaling condition at alpha={alpha}, x={x}"),
        ));
    }
    let d = cfg.d;
    let df = d as f64;
    let kappa0 = 1.0;
    let eps_p = cfg.c0 * (df / cfg.n_p as f64).powf(1.0 / (2.0 - cfg.beta_p));
    let eps_q = (df / cfg.n_q as f64).powf(1.0 / (2.0 - cfg.beta_q));
    let rate = eps_q.min(cfg.f.eval(eps_p / 8.0)?);
    let eps = cfg.c1 * rate;
    if eps_p <= 0.0 || eps_p >= 1.0 || eps <= 0.0 || eps >= 1.0 {
        return Err(InstanceError::invalid(
            "rates",
            format!("calibrated scales eps_p={eps_p}, eps={eps} must lie in (0, 1)"),
        ));
    }
    let p_atom = eps_p.powf(cfg.beta_p) / df;
    let q_atom = eps.powf(cfg.beta_q) / (df * kappa0);
    let p_anchor = 1.0 - df * p_atom;
    let q_anchor = 1.0 - df * q_atom;
    if p_anchor < -1e-12 || q_anchor < -1e-12 {
        return Err(InstanceError::invalid(
            "rates",
            "signal atoms would carry more than unit mass",
        ));
    }
    let step_p = eps_p.powf(1.0 - cfg.beta_p);
    let step_q = eps.powf(1.0 - cfg.beta_q);
    debug_assert!(step_p <= 1.0 && step_q <= 1.0);

    let codewords = vg_code(d)?;
    let class: Vec<Vec<i8>> = if cfg.full_class {
        (0..1usize << d)
            .map(|i| mask_to_pattern(i as u64, d))
            .collect()
    } else {
        codewords.clone()
    };
    let hypotheses: Vec<Vec<i8>> = class
        .iter()
        .map(|pattern| {
            let mut h = Vec::with_capacity(d + 1);
            h.push(1i8);
            h.extend_from_slice(pattern);
            h
        })
        .collect();
    let bayes_index: Vec<usize> = codewords
        .iter()
        .enumerate()
        .map(|(j, sigma)| {
            if cfg.full_class {
                pattern_index_full(sigma)
            } else {
                j
            }
        })
        .collect();

    let atom_names: Vec<String> = (0..=d).map(|i| format!("x{i}")).collect();
    let mut p_weights = vec![p_anchor.max(0.0)];
    p_weights.extend(std::iter::repeat_n(p_atom, d));
    let mut q_weights = vec![q_anchor.max(0.0)];
    q_weights.extend(std::iter::repeat_n(q_atom, d));

    let mut members = Vec::with_capacity(codewords.len());
    for sigma in &codewords {
        let mut eta_p = vec![1.0];
        let mut eta_q = vec![1.0];
        for &s in sigma {
            eta_p.push(0.5 + s as f64 * step_p / 2.0);
            eta_q.push(0.5 + s as f64 * step_q / 2.0);
        }
        members.push(FiniteInstance::new(
            atom_names.clone(),
            p_weights.clone(),
            q_weights.clone(),
            eta_p,
            eta_q,
            hypotheses.clone(),
            None,
            None,
        )?);
    }
    Ok(HardFamily {
        members,
        codewords,
        bayes_index,
        eps,
        eps_p,
        eps_q,
        rate,
        kappa0,
        config: cfg.clone(),
    })
}

// ---------------------------------------------------------------------------
// Membership verification
// ---------------------------------------------------------------------------

/// Numerical audit of a built family. All quantities are recomputed
/// from the instances themselves, not from the construction formulas.
#[derive(Clone, Debug)]
pub struct MembershipReport {
    /// Worst relative error of the Hamming excess-risk identities.
    pub identity_err: f64,
    /// Worst signed gap `modulus(t) - f(t)` over curve breakpoints.
    pub modulus_excess: f64,
    /// All modulus values stay within the small-excess regime `<= 1/4`.
    pub small_regime: bool,
    /// Worst signed gap `radius(level) - level^beta_q`.
    pub radius_slack: f64,
    /// Worst signed gap `diam(level) - 2 * level^beta_q`.
    pub diam_slack: f64,
    pub ok: bool,
}

fn ham(a: &[i8], b: &[i8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Check the excess-risk identities, the modulus envelope, and the
/// sublevel geometry of every member. The diameter audit is exact when
/// the class is small enough to enumerate pairs and otherwise falls
/// back to the triangle inequality through the verified radius.
pub fn verify_membership(family: &HardFamily) -> Result<MembershipReport, InstanceError> {
    let d = family.config.d;
    let df = d as f64;
    let kappa0 = family.kappa0;
    let mut identity_err: f64 = 0.0;
    let mut modulus_excess = f64::NEG_INFINITY;
    let mut small_regime = true;
    let mut radius_slack = f64::NEG_INFINITY;
    let mut diam_slack = f64::NEG_INFINITY;
    let rel = |err: f64, scale: f64| err / scale.max(1e-12);

    for (j, inst) in family.members.iter().enumerate() {
        let sigma = &family.codewords[j];
        let ep = inst.excess_risks(Side::P);
        let eq = inst.excess_risks(Side::Q);
        // identities against the Hamming formulas
        for (h_idx, h) in inst.hypotheses().iter().enumerate() {
            let ham_h = ham(&h[1..], sigma);
            let want_p = ham_h as f64 / df * family.eps_p;
            let want_q = ham_h as f64 / (df * kappa0) * family.eps;
            identity_err = identity_err
                .max(rel((ep[h_idx] - want_p).abs(), want_p))
                .max(rel((eq[h_idx] - want_q).abs(), want_q));
        }
        // transfer modulus under the envelope, in the small regime
        let curve = weak_modulus_curve(inst);
        for &(level, value) in curve.breakpoints() {
            let envelope = family.config.f.eval(level)?;
            modulus_excess = modulus_excess.max(value - envelope);
            if value > 0.25 + 1e-12 {
                small_regime = false;
            }
        }
        // sublevel geometry on the target side, audited at every
        // distinct excess level
        let bayes = family.bayes_index[j];
        let mut levels: Vec<f64> = eq.clone();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        let k = eq.len();
        let enumerate_pairs = k <= 1 << 12;
        for &level in &levels {
            if level <= 0.0 {
                continue;
            }
            let cap = level.powf(family.config.beta_q);
            let members: Vec<usize> = (0..k).filter(|&h| eq[h] <= level + 1e-15).collect();
            let mut radius: f64 = 0.0;
            for &h in &members {
                radius = radius.max(inst.disagreement(Side::Q, h, bayes)?);
            }
            radius_slack = radius_slack.max(radius - cap);
            let diam = if enumerate_pairs {
                let mut worst: f64 = 0.0;
                for (a, &h1) in members.iter().enumerate() {
                    for &h2 in &members[a + 1..] {
                        worst = worst.max(inst.disagreement(Side::Q, h1, h2)?);
                    }
                }
                worst
            } else {
                2.0 * radius
            };
            diam_slack = diam_slack.max(diam - 2.0 * cap);
        }
    }
    let tol = 1e-9;
    let ok = identity_err <= 1e-6
        && modulus_excess <= tol
        && small_regime
        && radius_slack <= tol
        && diam_slack <= tol;
    Ok(MembershipReport {
        identity_err,
        modulus_excess,
        small_regime,
        radius_slack,
        diam_slack,
        ok,
    })
}

// ---------------------------------------------------------------------------
// Information budget
// ---------------------------------------------------------------------------

/// KL divergence between Bernoulli means, both strictly inside `(0, 1)`.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64, InstanceError> {
    for (name, v) in [("p", p), ("q", q)] {
        if !v.is_finite() || v <= 0.0 || v >= 1.0 {
            return Err(InstanceError::invalid(
                name,
                format!("Bernoulli mean {v} must lie strictly inside (0, 1)"),
            ));
        }
    }
    Ok(p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln())
}

/// Pairwise sample KL divergences against the `ln(M) / 8`
/// identification budget.
#[derive(Clone, Debug)]
pub struct KlBudget {
    /// Largest `n_p * KL_P + n_q * KL_Q` over member pairs.
    pub max_pair: f64,
    /// `ln(M) / 8` for `M` family members.
    pub budget: f64,
    pub ok: bool,
}

/// Exact pairwise KL computation: atoms whose conditionals agree are
/// skipped (in particular the deterministic anchor), the rest
/// contribute `mass * KL(Bern(eta), Bern(eta'))`.
pub fn kl_budget(family: &HardFamily) -> Result<KlBudget, InstanceError> {
    let m = family.members.len();
    if m < 2 {
        return Err(InstanceError::invalid(
            "family",
            "the budget needs at least two members",
        ));
    }
    let d = family.config.d;
    let df = d as f64;
    let step_p = family.eps_p.powf(1.0 - family.config.beta_p);
    let step_q = family.eps.powf(1.0 - family.config.beta_q);
    let p_atom = family.eps_p.powf(family.config.beta_p) / df;
    let q_atom = family.eps.powf(family.config.beta_q) / (df * family.kappa0);
    let kl_p = kl_bernoulli(0.5 + step_p / 2.0, 0.5 - step_p / 2.0)?;
    let kl_q = kl_bernoulli(0.5 + step_q / 2.0, 0.5 - step_q / 2.0)?;
    let mut max_pair: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let ham_ij = ham(&family.codewords[i], &family.codewords[j]) as f64;
            let pair = family.config.n_p as f64 * ham_ij * p_atom * kl_p
                + family.config.n_q as f64 * ham_ij * q_atom * kl_q;
            max_pair = max_pair.max(pair);
        }
    }
    let budget = (m as f64).ln() / 8.0;
    Ok(KlBudget {
        max_pair,
        budget,
        ok: max_pair <= budget,
    })
}

// ---------------------------------------------------------------------------
// Simulation against concrete learners
// ---------------------------------------------------------------------------

/// Learners the family is played against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Learner {
    /// Knows the member and returns its own pattern: zero excess, a
    /// sanity check on the excess accounting.
    Oracle,
    /// The weak transfer routine with default complexity parameters.
    WeakTransfer,
    /// Per-atom majority vote, then the nearest class pattern.
    AtomMajority,
}

impl Learner {
    pub fn label(&self) -> &'static str {
        match self {
            Learner::Oracle => "oracle",
            Learner::WeakTransfer => "weak",
            Learner::AtomMajority => "majority",
        }
    }
}

/// Worst-member mean excess of a learner against the family.
#[derive(Clone, Debug)]
pub struct MinimaxReport {
    pub per_member_mean: Vec<f64>,
    pub worst_mean: f64,
    /// The calibrated scale lower bounds are stated against.
    pub rate: f64,
}

fn majority_pattern(d: usize, s_q: &FiniteSample, s_p: &FiniteSample) -> Vec<i8> {
    // net[i] counts +1 labels minus -1 labels on signal atom i
    let tally = |sample: &FiniteSample| {
        let mut net = vec![0i64; d];
        for (&atom, &label) in sample.atoms.iter().zip(&sample.labels) {
            if atom >= 1 && atom <= d {
                net[atom - 1] += label as i64;
            }
        }
        net
    };
    let net_q = tally(s_q);
    let net_p = tally(s_p);
    (0..d)
        .map(|i| {
            if net_q[i] != 0 {
                if net_q[i] > 0 {
                    1
                } else {
                    -1
                }
            } else if net_p[i] != 0 {
                if net_p[i] > 0 {
                    1
                } else {
                    -1
                }
            } else {
                1
            }
        })
        .collect()
}

fn nearest_class_index(inst: &FiniteInstance, pattern: &[i8]) -> usize {
    let mut best = 0usize;
    let mut best_dist = usize::MAX;
    for (idx, h) in inst.hypotheses().iter().enumerate() {
        let dist = ham(&h[1..], pattern);
        if dist < best_dist {
            best_dist = dist;
            best = idx;
        }
    }
    best
}

/// Play `learner` against every member for `trials` rounds each,
/// sampling `n_p`/`n_q` draws per round from the member's distributions,
/// and report the per-member mean target excess.
pub fn minimax_simulate(
    family: &HardFamily,
    learner: Learner,
    tau: f64,
    trials: usize,
    seed: u64,
) -> Result<MinimaxReport, InstanceError> {
    if trials == 0 {
        return Err(InstanceError::invalid("trials", "need at least one trial"));
    }
    let params = ComplexityParams::default();
    let d_vc = Some(family.config.d);
    let mut per_member_mean = Vec::with_capacity(family.members.len());
    for (j, inst) in family.members.iter().enumerate() {
        let mut total = 0.0;
        for t in 0..trials {
            let s = trial_seed(seed, j as u64, t as u64);
            let s_q = inst.sample(Side::Q, family.config.n_q, sub_seed(s, 0));
            let s_p = inst.sample(Side::P, family.config.n_p, sub_seed(s, 1));
            let chosen = match learner {
                Learner::Oracle => family.bayes_index[j],
                Learner::WeakTransfer => {
                    algorithm_weak(inst, &s_q, &s_p, tau, &params, d_vc)?.chosen
                }
                Learner::AtomMajority => {
                    let pattern = majority_pattern(family.config.d, &s_q, &s_p);
                    nearest_class_index(inst, &pattern)
                }
            };
            total += inst.excess_risk(Side::Q, chosen, None)?;
        }
        per_member_mean.push(total / trials as f64);
    }
    let worst_mean = per_member_mean.iter().copied().fold(0.0, f64::max);
    Ok(MinimaxReport {
        per_member_mean,
        worst_mean,
        rate: family.rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn code_sizes_and_separation_are_pinned() {
        for (d, want) in [(8usize, 2usize), (16, 4), (32, 16)] {
            let code = vg_code(d).unwrap();
            assert_eq!(code.len(), want, "d = {d}");
            assert!(code.iter().all(|c| c.len() == d));
            assert_eq!(code[0], vec![1i8; d], "first word is all ones");
            assert_eq!(code[1], vec![-1i8; d], "second word is all minus ones");
            let min_dist = (d as f64 / 8.0).ceil() as usize;
            for i in 0..code.len() {
                for j in i + 1..code.len() {
                    assert!(
                        ham(&code[i], &code[j]) >= min_dist,
                        "d={d}: words {i},{j} too close"
                    );
                }
            }
            // deterministic
            assert_eq!(vg_code(d).unwrap(), code);
        }
        assert!(vg_code(0).is_err());
        assert!(vg_code(33).is_err());
    }

    #[test]
    fn envelope_evaluation_and_kappa_grid() {
        let id = FSpec::identity();
        assert_abs_diff_eq!(id.eval(0.3).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(id.eval(2.0).unwrap(), 2.0, epsilon = 1e-15);
        assert!(id.eval(-0.1).is_err());
        assert!(id.check_kappa().unwrap().is_none());
        // concave envelopes are 1-sub-homogeneous
        let sqrt_like = FSpec::from_knots(
            (0..=32)
                .map(|i| {
                    let x = i as f64 / 32.0;
                    (x, x.sqrt())
                })
                .collect(),
            1.0,
        )
        .unwrap();
        assert!(sqrt_like.check_kappa().unwrap().is_none());
        assert_abs_diff_eq!(sqrt_like.eval(0.25).unwrap(), 0.5, epsilon = 1e-12);
        // convex envelopes are not
        let square = FSpec::from_knots(
            (0..=32)
                .map(|i| {
                    let x = i as f64 / 32.0;
                    (x, x * x)
                })
                .collect(),
            1.0,
        )
        .unwrap();
        assert!(square.check_kappa().unwrap().is_some());
        // validation
        assert!(FSpec::from_knots(vec![(0.0, 0.0)], 1.0).is_err());
        assert!(FSpec::from_knots(vec![(0.1, 0.0), (1.0, 1.0)], 1.0).is_err());
        assert!(FSpec::from_knots(vec![(0.0, 0.0), (1.0, -0.5)], 1.0).is_err());
        assert!(FSpec::from_knots(vec![(0.0, 0.0), (0.0, 1.0)], 1.0).is_err());
        assert!(FSpec::from_knots(vec![(0.0, 0.0), (1.0, 1.0)], 0.5).is_err());
    }

    #[test]
    fn family_identities_hold_exactly_enough() {
        let mut cfg = HardFamilyConfig::new(8, 4000, 4000);
        cfg.beta_p = 0.5;
        cfg.beta_q = 0.5;
        let family = build_hard_family(&cfg).unwrap();
        assert_eq!(family.members.len(), 2);
        assert_eq!(family.members[0].num_hypotheses(), 256);
        assert_eq!(family.members[0].num_atoms(), 9);
        // anchors keep the leftover mass
        let report = verify_membership(&family).unwrap();
        assert!(report.ok, "{report:?}");
        assert!(report.identity_err < 1e-8, "{}", report.identity_err);
        // the member's own pattern is its Bayes rule
        for (j, inst) in family.members.iter().enumerate() {
            let eq = inst.excess_risks(Side::Q);
            assert_eq!(eq[family.bayes_index[j]], 0.0);
        }
    }

    #[test]
    fn membership_sweep_over_shapes() {
        let sqrt_like = FSpec::from_knots(
            (0..=64)
                .map(|i| {
                    let x = 0.5 * i as f64 / 64.0;
                    (x, x.sqrt())
                })
                .collect(),
            1.0,
        )
        .unwrap();
        for d in [4usize, 8, 16] {
            for &(bp, bq) in &[(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.3, 0.7)] {
                for full in [true, false] {
                    let mut cfg = HardFamilyConfig::new(d, 2000, 5000);
                    cfg.beta_p = bp;
                    cfg.beta_q = bq;
                    cfg.full_class = full && d <= 16;
                    cfg.f = if d % 8 == 0 {
                        sqrt_like.clone()
                    } else {
                        FSpec::identity()
                    };
                    let family = build_hard_family(&cfg).unwrap();
                    let report = verify_membership(&family).unwrap();
                    assert!(report.ok, "d={d} bp={bp} bq={bq} full={full}: {report:?}");
                }
            }
        }
        // the code class keeps d = 32 tractable
        let mut cfg = HardFamilyConfig::new(32, 4000, 4000);
        cfg.full_class = false;
        let family = build_hard_family(&cfg).unwrap();
        assert_eq!(family.members.len(), 16);
        assert_eq!(family.members[0].num_hypotheses(), 16);
        assert!(verify_membership(&family).unwrap().ok);
    }

    #[test]
    fn bernoulli_kl_matches_closed_form() {
        assert!(kl_bernoulli(0.0, 0.5).is_err());
        assert!(kl_bernoulli(0.5, 1.0).is_err());
        for i in 1..=45 {
            let eps = i as f64 / 100.0;
            let kl = kl_bernoulli(0.5 + eps / 2.0, 0.5 - eps / 2.0).unwrap();
            let closed = eps * ((1.0 + eps) / (1.0 - eps)).ln();
            assert_abs_diff_eq!(kl, closed, epsilon = 1e-12);
            assert!(kl <= 2.1543 * eps * eps, "eps = {eps}: {kl}");
        }
    }

    #[test]
    fn identification_budget_behaves() {
        let cfg = HardFamilyConfig::new(16, 4000, 4000);
        let family = build_hard_family(&cfg).unwrap();
        let budget = kl_budget(&family).unwrap();
        assert!(budget.ok, "{budget:?}");
        assert_abs_diff_eq!(budget.budget, 4f64.ln() / 8.0, epsilon = 1e-15);
        // pushing the source multiplier to the top of its range floods
        // the sample with signal and blows the budget
        let mut loud = HardFamilyConfig::new(16, 4000, 4000);
        loud.c0 = 0.8;
        let family = build_hard_family(&loud).unwrap();
        let budget = kl_budget(&family).unwrap();
        assert!(!budget.ok, "{budget:?}");
    }

    #[test]
    fn simulated_learners_cannot_beat_the_rate() {
        let mut cfg = HardFamilyConfig::new(16, 4000, 4000);
        cfg.c1 = 0.2;
        cfg.full_class = false;
        let family = build_hard_family(&cfg).unwrap();
        let oracle = minimax_simulate(&family, Learner::Oracle, 0.05, 50, 11).unwrap();
        assert_eq!(oracle.worst_mean, 0.0);
        let floor = 0.05 * family.rate;
        let weak = minimax_simulate(&family, Learner::WeakTransfer, 0.05, 200, 11).unwrap();
        assert!(
            weak.worst_mean >= floor,
            "weak worst {} < floor {floor}",
            weak.worst_mean
        );
        let majority = minimax_simulate(&family, Learner::AtomMajority, 0.05, 200, 11).unwrap();
        assert!(
            majority.worst_mean >= floor,
            "majority worst {} < floor {floor}",
            majority.worst_mean
        );
    }
}
