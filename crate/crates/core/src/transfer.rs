//! Source-to-target transfer routines built on confidence sets.
//!
//! Two procedures are implemented, for finite classes and (in reduced
//! form) for linear tasks:
//!
//! * the **weak routine** intersects a target confidence set with a
//!   source confidence set and picks the lowest-index hypothesis in the
//!   intersection, falling back to the target ERM when the sets are
//!   disjoint. Its excess-risk bound is `min{eps_Q, delta(eps_P)}`,
//!   where `delta` is the weak transfer modulus and both levels come
//!   from the sets' own metadata — never from oracle risks;
//! * the **strong routine** builds nested root-n target sets (a flat
//!   one and a sharp one at twice the level) plus a weak source set.
//!   When the sharp set meets the source set, the pick is their
//!   lowest-index common member and the bound is the strong modulus at
//!   the two metadata levels. When the source data rules the whole
//!   sharp set out, the routine minimizes the empirical source risk
//!   over the flat set and bounds the result through the strong modulus
//!   at the flat level and a Monte Carlo `(1 - tau)`-quantile of how
//!   much source excess that restricted minimization can leave on the
//!   table ([`estimate_eps_tilde`]).
//!
//! Every runner reports the realized target excess next to its bound so
//! experiments can audit the guarantee trial by trial
//! (`bound_ok = excess <= bound + 1e-12`).

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;

use crate::conf_class::{
    strong_confidence_set_rootn, weak_confidence_set, ComplexityParams, FiniteConfidenceSet,
};
use crate::conf_reg::{
    ellipsoid_intersect, min_empirical_risk_over_ellipsoid, regression_confidence_set, Feasibility,
    RegressionConfidenceSet, RegressionParams,
};
use crate::instances::{
    FiniteInstance, FiniteSample, InstanceError, LinearInstance, LinearSample, Side,
};
use crate::moduli::{strong_modulus, weak_modulus, weak_modulus_linear};
use crate::seeding::{splitmix64, sub_seed};

/// Slack allowed when auditing a bound against the realized excess.
pub const BOUND_SLOP: f64 = 1e-12;

/// Which branch a transfer routine took.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferCase {
    /// Weak routine: picked from the intersection of the two sets.
    Intersection,
    /// Weak routine: sets disjoint, fell back to the target ERM.
    TargetErm,
    /// Strong routine: sharp target set met the source set.
    SharpIntersection,
    /// Strong routine: source ruled the sharp set out; restricted source
    /// minimization over the flat set, bounded via the quantile.
    FallbackQuantile,
    /// No source data at all; pure target decision.
    TargetOnly,
}

impl TransferCase {
    pub fn label(&self) -> &'static str {
        match self {
            TransferCase::Intersection => "intersection",
            TransferCase::TargetErm => "target_erm",
            TransferCase::SharpIntersection => "case1",
            TransferCase::FallbackQuantile => "case2",
            TransferCase::TargetOnly => "target_only",
        }
    }
}

/// Which routine produced a report row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Weak,
    Strong,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Weak => "weak",
            Algorithm::Strong => "strong",
        }
    }
}

/// The pick of one trial, in whichever hypothesis space applies.
#[derive(Clone, Debug)]
pub enum HypothesisId {
    Index(usize),
    Weights(Vec<f64>),
}

/// One trial's outcome: the pick, its realized target excess, the
/// data-driven bound, and the audit verdict. Wall time is informational
/// and deliberately left out of persisted reports.
#[derive(Clone, Debug)]
pub struct TrialReport {
    pub trial: u64,
    pub algorithm: Algorithm,
    pub n_p: usize,
    pub n_q: usize,
    pub case: TransferCase,
    pub chosen: HypothesisId,
    pub excess_q: f64,
    pub bound: f64,
    pub bound_ok: bool,
    pub wall_ms: f64,
}

fn first_common(a: &[usize], b: &[usize]) -> Option<usize> {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return Some(a[i]),
        }
    }
    None
}

fn restricted_argmin(values: &[f64], members: &[usize]) -> usize {
    let mut best = members[0];
    for &h in &members[1..] {
        if values[h] < values[best] {
            best = h;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Weak routine, finite classes
// ---------------------------------------------------------------------------

/// Outcome of the weak routine on a finite class.
#[derive(Clone, Debug)]
pub struct WeakTransferOutcome {
    pub chosen: usize,
    pub case: TransferCase,
    pub bound: f64,
    pub set_q: FiniteConfidenceSet,
    pub set_p: FiniteConfidenceSet,
}

/// Weak transfer: intersect the two weak confidence sets. Either sample
/// may be empty (that side degenerates to the full class); both empty is
/// an error.
pub fn algorithm_weak(
    inst: &FiniteInstance,
    s_q: &FiniteSample,
    s_p: &FiniteSample,
    tau: f64,
    params: &ComplexityParams,
    d_vc: Option<usize>,
) -> Result<WeakTransferOutcome, InstanceError> {
    if s_q.is_empty() && s_p.is_empty() {
        return Err(InstanceError::invalid(
            "samples",
            "transfer needs data on at least one side",
        ));
    }
    let set_q = weak_confidence_set(inst, s_q, tau, params, d_vc)?;
    let set_p = weak_confidence_set(inst, s_p, tau, params, d_vc)?;
    if s_p.is_empty() {
        let chosen = set_q.erm_index.expect("target sample is nonempty here");
        return Ok(WeakTransferOutcome {
            chosen,
            case: TransferCase::TargetOnly,
            bound: set_q.eps,
            set_q,
            set_p,
        });
    }
    match first_common(&set_q.members, &set_p.members) {
        Some(h) => {
            let via_source = weak_modulus(inst, set_p.eps)?;
            Ok(WeakTransferOutcome {
                chosen: h,
                case: TransferCase::Intersection,
                bound: set_q.eps.min(via_source),
                set_q,
                set_p,
            })
        }
        None => {
            // a full-class side cannot produce an empty intersection, so
            // the target sample is nonempty on this branch
            let chosen = set_q.erm_index.expect("target sample is nonempty here");
            Ok(WeakTransferOutcome {
                chosen,
                case: TransferCase::TargetErm,
                bound: set_q.eps,
                set_q,
                set_p,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Quantile of restricted source minimization
// ---------------------------------------------------------------------------

/// Monte Carlo `(1 - tau)`-quantile of the population source excess,
/// within `members`, of the rule "draw a fresh source sample of size
/// `n_p` and keep the empirical minimizer over `members`". The quantile
/// is the order statistic at rank `ceil((1 - tau) * trials)`. Fewer
/// than 100 trials are refused: the upper tail would be guesswork.
pub fn estimate_eps_tilde(
    inst: &FiniteInstance,
    members: &[usize],
    n_p: usize,
    tau: f64,
    trials: usize,
    seed: u64,
) -> Result<f64, InstanceError> {
    if trials < 100 {
        return Err(InstanceError::invalid(
            "trials",
            format!("{trials} Monte Carlo trials cannot pin a (1-tau) quantile; need at least 100"),
        ));
    }
    if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
        return Err(InstanceError::invalid(
            "tau",
            format!("quantile level {tau} must lie strictly inside (0, 1)"),
        ));
    }
    if members.is_empty() {
        return Err(InstanceError::invalid(
            "members",
            "restriction set is empty",
        ));
    }
    if n_p == 0 {
        return Err(InstanceError::invalid(
            "n_p",
            "quantile estimation needs source draws",
        ));
    }
    if members.len() == 1 {
        // only one possible pick: the excess within the set is exactly zero
        return Ok(0.0);
    }
    let risks_p = inst.risks(Side::P);
    let base = members
        .iter()
        .map(|&h| risks_p[h])
        .fold(f64::INFINITY, f64::min);
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let sample = inst.sample(Side::P, n_p, sub_seed(seed, t as u64));
        let emp = inst.empirical_risks(&sample)?;
        let pick = restricted_argmin(&emp, members);
        values.push(risks_p[pick] - base);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (((1.0 - tau) * trials as f64).ceil() as usize).clamp(1, trials);
    Ok(values[rank - 1])
}

/// Memo table for [`estimate_eps_tilde`], keyed by the restriction set
/// and the source sample size. The Monte Carlo seed is derived from the
/// key itself, so a cached value is a pure function of
/// `(base_seed, members, n_p)` — identical no matter which trial asks
/// first, which keeps parallel experiments reproducible.
#[derive(Debug)]
pub struct EpsTildeCache {
    base_seed: u64,
    tau: f64,
    trials: usize,
    map: HashMap<(Vec<usize>, usize), f64>,
}

impl EpsTildeCache {
    pub fn new(base_seed: u64, tau: f64, trials: usize) -> Self {
        EpsTildeCache {
            base_seed,
            tau,
            trials,
            map: HashMap::new(),
        }
    }

    pub fn quantile(
        &mut self,
        inst: &FiniteInstance,
        members: &[usize],
        n_p: usize,
    ) -> Result<f64, InstanceError> {
        let key = (members.to_vec(), n_p);
        if let Some(v) = self.map.get(&key) {
            return Ok(*v);
        }
        let mut s = self.base_seed;
        for &h in members {
            s = splitmix64(s ^ (h as u64).wrapping_add(1));
        }
        s = splitmix64(s ^ (n_p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let v = estimate_eps_tilde(inst, members, n_p, self.tau, self.trials, s)?;
        self.map.insert(key, v);
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// Strong routine, finite classes
// ---------------------------------------------------------------------------

/// Outcome of the strong routine on a finite class.
#[derive(Clone, Debug)]
pub struct StrongTransferOutcome {
    pub chosen: usize,
    pub case: TransferCase,
    pub bound: f64,
    pub eps_tilde: Option<f64>,
    pub flat: FiniteConfidenceSet,
    pub sharp: FiniteConfidenceSet,
    pub source: FiniteConfidenceSet,
}

/// Strong transfer. Target data is required; an empty source sample
/// falls back to the flat set's own guarantee.
pub fn algorithm_strong(
    inst: &FiniteInstance,
    s_q: &FiniteSample,
    s_p: &FiniteSample,
    tau: f64,
    params: &ComplexityParams,
    d_vc: Option<usize>,
    cache: &Mutex<EpsTildeCache>,
) -> Result<StrongTransferOutcome, InstanceError> {
    if s_q.is_empty() {
        return Err(InstanceError::invalid(
            "s_q",
            "the strong routine needs target data",
        ));
    }
    let flat = strong_confidence_set_rootn(inst, s_q, tau, 1.0, params, d_vc)?;
    let sharp = strong_confidence_set_rootn(inst, s_q, tau, 2.0, params, d_vc)?;
    debug_assert!(
        flat.members.iter().all(|&h| sharp.contains(h)),
        "flat set must nest inside the sharp one"
    );
    let source = weak_confidence_set(inst, s_p, tau, params, d_vc)?;
    if s_p.is_empty() {
        let chosen = flat.erm_index.expect("target sample is nonempty");
        return Ok(StrongTransferOutcome {
            chosen,
            case: TransferCase::TargetOnly,
            bound: flat.eps,
            eps_tilde: None,
            flat,
            sharp,
            source,
        });
    }
    if let Some(h) = first_common(&sharp.members, &source.members) {
        let bound = strong_modulus(inst, sharp.eps, source.eps)?.value;
        return Ok(StrongTransferOutcome {
            chosen: h,
            case: TransferCase::SharpIntersection,
            bound,
            eps_tilde: None,
            flat,
            sharp,
            source,
        });
    }
    let eps_tilde = {
        let mut guard = cache.lock().expect("quantile cache poisoned");
        guard.quantile(inst, &flat.members, s_p.len())?
    };
    let risks_p = inst.empirical_risks(s_p)?;
    let chosen = restricted_argmin(&risks_p, &flat.members);
    // the sharp level over its strength is exactly the flat level
    let inner_level = sharp.eps / sharp.strength;
    let bound = flat.strength * strong_modulus(inst, inner_level, eps_tilde)?.value;
    Ok(StrongTransferOutcome {
        chosen,
        case: TransferCase::FallbackQuantile,
        bound,
        eps_tilde: Some(eps_tilde),
        flat,
        sharp,
        source,
    })
}

// ---------------------------------------------------------------------------
// Linear analogs
// ---------------------------------------------------------------------------

/// Outcome of the weak routine on a linear task.
#[derive(Clone, Debug)]
pub struct LinearWeakOutcome {
    pub chosen: DVector<f64>,
    pub case: TransferCase,
    pub bound: f64,
    pub set_q: RegressionConfidenceSet,
    pub set_p: Option<RegressionConfidenceSet>,
}

/// Weak transfer with confidence ellipsoids. Needs enough target data
/// for least squares; an empty source sample falls back to the target
/// fit.
pub fn algorithm_weak_linear(
    inst: &LinearInstance,
    s_q: &LinearSample,
    s_p: &LinearSample,
    tau: f64,
    sigma_y: f64,
    params: &RegressionParams,
) -> Result<LinearWeakOutcome, InstanceError> {
    let set_q = regression_confidence_set(s_q, sigma_y, tau, 1.0, params)?;
    if s_p.is_empty() {
        return Ok(LinearWeakOutcome {
            chosen: set_q.w_hat.clone(),
            case: TransferCase::TargetOnly,
            bound: set_q.eps,
            set_q,
            set_p: None,
        });
    }
    let set_p = regression_confidence_set(s_p, sigma_y, tau, 1.0, params)?;
    let outcome = match ellipsoid_intersect(&set_q.ellipsoid, &set_p.ellipsoid)? {
        Feasibility::Witness(w) => {
            let via_source = weak_modulus_linear(inst, set_p.eps)?;
            LinearWeakOutcome {
                chosen: w,
                case: TransferCase::Intersection,
                bound: set_q.eps.min(via_source),
                set_q,
                set_p: Some(set_p),
            }
        }
        Feasibility::Empty { .. } => LinearWeakOutcome {
            chosen: set_q.w_hat.clone(),
            case: TransferCase::TargetErm,
            bound: set_q.eps,
            set_q,
            set_p: Some(set_p),
        },
    };
    Ok(outcome)
}

/// Outcome of the strong routine on a linear task.
#[derive(Clone, Debug)]
pub struct LinearStrongOutcome {
    pub chosen: DVector<f64>,
    pub case: TransferCase,
    pub bound: f64,
    pub flat: RegressionConfidenceSet,
    pub sharp: RegressionConfidenceSet,
    pub source: Option<RegressionConfidenceSet>,
}

/// Strong transfer with confidence ellipsoids: a sharp set at full scale
/// and a flat set at half scale. When the source ellipsoid misses the
/// sharp set entirely, the pick is the empirical source minimizer over
/// the flat set and the bound falls back to the flat set's own level —
/// the two-constraint modulus has no exact solver here, so the linear
/// fallback does not sharpen through the quantile the way the finite
/// one does.
pub fn algorithm_strong_linear(
    inst: &LinearInstance,
    s_q: &LinearSample,
    s_p: &LinearSample,
    tau: f64,
    sigma_y: f64,
    params: &RegressionParams,
) -> Result<LinearStrongOutcome, InstanceError> {
    let sharp = regression_confidence_set(s_q, sigma_y, tau, 1.0, params)?;
    let flat = regression_confidence_set(s_q, sigma_y, tau, 0.5, params)?;
    if s_p.is_empty() {
        return Ok(LinearStrongOutcome {
            chosen: flat.w_hat.clone(),
            case: TransferCase::TargetOnly,
            bound: flat.eps,
            flat,
            sharp,
            source: None,
        });
    }
    let source = regression_confidence_set(s_p, sigma_y, tau, 1.0, params)?;
    let outcome = match ellipsoid_intersect(&sharp.ellipsoid, &source.ellipsoid)? {
        Feasibility::Witness(w) => {
            let via_source = weak_modulus_linear(inst, source.eps)?;
            LinearStrongOutcome {
                chosen: w,
                case: TransferCase::SharpIntersection,
                bound: sharp.eps.min(via_source),
                flat,
                sharp,
                source: Some(source),
            }
        }
        Feasibility::Empty { .. } => {
            let sol = min_empirical_risk_over_ellipsoid(s_p, &flat.ellipsoid)?;
            LinearStrongOutcome {
                chosen: sol.arg,
                case: TransferCase::FallbackQuantile,
                bound: flat.eps,
                flat,
                sharp,
                source: Some(source),
            }
        }
    };
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Per-trial runners
// ---------------------------------------------------------------------------

fn audit(excess: f64, bound: f64) -> bool {
    excess <= bound + BOUND_SLOP
}

/// Draw both samples, run the weak routine, and audit the bound.
#[allow(clippy::too_many_arguments)]
pub fn run_weak_transfer(
    inst: &FiniteInstance,
    n_q: usize,
    n_p: usize,
    tau: f64,
    params: &ComplexityParams,
    d_vc: Option<usize>,
    trial: u64,
    seed: u64,
) -> Result<(TrialReport, WeakTransferOutcome), InstanceError> {
    let t0 = Instant::now();
    let s_q = inst.sample(Side::Q, n_q, sub_seed(seed, 0));
    let s_p = inst.sample(Side::P, n_p, sub_seed(seed, 1));
    let out = algorithm_weak(inst, &s_q, &s_p, tau, params, d_vc)?;
    let excess = inst.excess_risk(Side::Q, out.chosen, None)?;
    let report = TrialReport {
        trial,
        algorithm: Algorithm::Weak,
        n_p,
        n_q,
        case: out.case,
        chosen: HypothesisId::Index(out.chosen),
        excess_q: excess,
        bound: out.bound,
        bound_ok: audit(excess, out.bound),
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, out))
}

/// Draw both samples, run the strong routine, and audit the bound.
#[allow(clippy::too_many_arguments)]
pub fn run_strong_transfer(
    inst: &FiniteInstance,
    n_q: usize,
    n_p: usize,
    tau: f64,
    params: &ComplexityParams,
    d_vc: Option<usize>,
    cache: &Mutex<EpsTildeCache>,
    trial: u64,
    seed: u64,
) -> Result<(TrialReport, StrongTransferOutcome), InstanceError> {
    let t0 = Instant::now();
    let s_q = inst.sample(Side::Q, n_q, sub_seed(seed, 0));
    let s_p = inst.sample(Side::P, n_p, sub_seed(seed, 1));
    let out = algorithm_strong(inst, &s_q, &s_p, tau, params, d_vc, cache)?;
    let excess = inst.excess_risk(Side::Q, out.chosen, None)?;
    let report = TrialReport {
        trial,
        algorithm: Algorithm::Strong,
        n_p,
        n_q,
        case: out.case,
        chosen: HypothesisId::Index(out.chosen),
        excess_q: excess,
        bound: out.bound,
        bound_ok: audit(excess, out.bound),
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, out))
}

/// Draw both samples, run the weak linear routine, and audit the bound.
#[allow(clippy::too_many_arguments)]
pub fn run_weak_transfer_linear(
    inst: &LinearInstance,
    n_q: usize,
    n_p: usize,
    tau: f64,
    params: &RegressionParams,
    trial: u64,
    seed: u64,
) -> Result<(TrialReport, LinearWeakOutcome), InstanceError> {
    let t0 = Instant::now();
    let s_q = inst.sample(Side::Q, n_q, sub_seed(seed, 0))?;
    let s_p = inst.sample(Side::P, n_p, sub_seed(seed, 1))?;
    let out = algorithm_weak_linear(inst, &s_q, &s_p, tau, inst.noise_scale(), params)?;
    let excess = inst.excess_risk(Side::Q, &out.chosen)?;
    let report = TrialReport {
        trial,
        algorithm: Algorithm::Weak,
        n_p,
        n_q,
        case: out.case,
        chosen: HypothesisId::Weights(out.chosen.iter().copied().collect()),
        excess_q: excess,
        bound: out.bound,
        bound_ok: audit(excess, out.bound),
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, out))
}

/// Draw both samples, run the strong linear routine, and audit the bound.
#[allow(clippy::too_many_arguments)]
pub fn run_strong_transfer_linear(
    inst: &LinearInstance,
    n_q: usize,
    n_p: usize,
    tau: f64,
    params: &RegressionParams,
    trial: u64,
    seed: u64,
) -> Result<(TrialReport, LinearStrongOutcome), InstanceError> {
    let t0 = Instant::now();
    let s_q = inst.sample(Side::Q, n_q, sub_seed(seed, 0))?;
    let s_p = inst.sample(Side::P, n_p, sub_seed(seed, 1))?;
    let out = algorithm_strong_linear(inst, &s_q, &s_p, tau, inst.noise_scale(), params)?;
    let excess = inst.excess_risk(Side::Q, &out.chosen)?;
    let report = TrialReport {
        trial,
        algorithm: Algorithm::Strong,
        n_p,
        n_q,
        case: out.case,
        chosen: HypothesisId::Weights(out.chosen.iter().copied().collect()),
        excess_q: excess,
        bound: out.bound,
        bound_ok: audit(excess, out.bound),
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, out))
}
