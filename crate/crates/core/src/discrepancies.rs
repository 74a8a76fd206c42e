//! Distribution-discrepancy measures and the modulus bounds they imply.
//!
//! Each measure comes with an upper bound on the weak modulus
//! `delta(eps)`; [`verify_modulus_bounds_finite`] and
//! [`verify_modulus_bounds_linear`] evaluate both sides on a grid of
//! levels and report the slack, so experiments can audit every claimed
//! inequality numerically.
//!
//! Finite-task measures:
//! * label discrepancy `sup_h |R_P(h) - R_Q(h)|`, giving
//!   `delta(eps) <= eps + 2 * disc`;
//! * its excess-risk variant `sup_h |E_P(h) - E_Q(h)|`, giving
//!   `delta(eps) <= eps + disc`;
//! * disagreement discrepancy `sup_{h,h'} |P(h != h') - Q(h != h')|`, whose
//!   bound pays an additive term involving the joint-best hypothesis;
//! * the fitted linear-rate constant `C1 = max{(E_Q - sharp)/E_P}`, giving
//!   `delta(eps) <= C1 * eps + sharp` with `sharp` the worst target excess
//!   over exact source optima.
//!
//! Linear-task measures compare second-moment matrices through the
//! generalized eigenvalue ratio, and atom-mixture tasks additionally get a
//! marginal-transport bound `delta(eps) <= eps + 8 M lambda W1` whenever
//! the hypothesis envelope stays within the declared Lipschitz and output
//! budgets. The transport distance itself is computed exactly by
//! successive shortest augmenting paths on the bipartite flow network.

use crate::instances::{CovariateModel, FiniteInstance, InstanceError, LinearInstance, Side};
use crate::moduli;
use crate::quadratic;
use nalgebra::DMatrix;

/// Largest absolute risk gap between the two sides over the class.
pub fn y_discrepancy(inst: &FiniteInstance) -> f64 {
    let rp = inst.risks(Side::P);
    let rq = inst.risks(Side::Q);
    rp.iter()
        .zip(&rq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest absolute excess-risk gap between the two sides over the class.
pub fn y_discrepancy_excess(inst: &FiniteInstance) -> f64 {
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    ep.iter()
        .zip(&eq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest gap in disagreement mass between the two sides over hypothesis
/// pairs.
pub fn a_discrepancy(inst: &FiniteInstance) -> f64 {
    let m = inst.num_hypotheses();
    let mut worst = 0.0f64;
    for h1 in 0..m {
        for h2 in (h1 + 1)..m {
            let dp = inst.disagreement(Side::P, h1, h2).expect("index in range");
            let dq = inst.disagreement(Side::Q, h1, h2).expect("index in range");
            worst = worst.max((dp - dq).abs());
        }
    }
    worst
}

fn check_rate_params(rho: f64, c: Option<f64>) -> Result<(), InstanceError> {
    if !rho.is_finite() || rho < 1.0 {
        return Err(InstanceError::Invalid {
            path: "rho".into(),
            message: format!("rate exponent {rho} must be finite and at least 1"),
        });
    }
    if let Some(c) = c {
        if !c.is_finite() || c < 0.0 {
            return Err(InstanceError::Invalid {
                path: "c".into(),
                message: format!("rate constant {c} must be finite and nonnegative"),
            });
        }
    }
    Ok(())
}

/// Outcome of checking the pointwise rate condition
/// `E_Q(h) <= c * E_P(h)^(1/rho) + sharp` over the class.
#[derive(Clone, Debug)]
pub struct ExponentCheck {
    pub holds: bool,
    /// Hypothesis with the largest violation (or smallest margin).
    pub worst_hypothesis: usize,
    /// `E_Q - c * E_P^(1/rho) - sharp` at that hypothesis; positive means
    /// the condition fails there.
    pub worst_gap: f64,
}

/// Check the rate condition with exponent `rho` and constant `c`.
pub fn transfer_exponent_check(
    inst: &FiniteInstance,
    rho: f64,
    c: f64,
) -> Result<ExponentCheck, InstanceError> {
    check_rate_params(rho, Some(c))?;
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    let sharp = moduli::pivotal_sharp(inst);
    let mut worst_hypothesis = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for h in 0..ep.len() {
        let gap = eq[h] - c * ep[h].powf(1.0 / rho) - sharp;
        if gap > worst_gap {
            worst_gap = gap;
            worst_hypothesis = h;
        }
    }
    Ok(ExponentCheck {
        holds: worst_gap <= 1e-12,
        worst_hypothesis,
        worst_gap,
    })
}

/// Smallest constant making the rate condition hold at exponent `rho`,
/// clamped to be nonnegative.
pub fn fitted_transfer_constant(inst: &FiniteInstance, rho: f64) -> Result<f64, InstanceError> {
    check_rate_params(rho, None)?;
    let ep = inst.excess_risks(Side::P);
    let eq = inst.excess_risks(Side::Q);
    let sharp = moduli::pivotal_sharp(inst);
    let fitted = ep
        .iter()
        .zip(&eq)
        .filter(|(e, _)| **e > 0.0)
        .map(|(e, q)| (q - sharp) / e.powf(1.0 / rho))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(fitted.max(0.0))
}

/// Generalized top eigenvalue `lambda_max(A^{-1/2} B A^{-1/2})`: how much
/// faster quadratic forms can grow under `B` than under `A`.
pub fn covariance_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    quadratic::generalized_max_eigenvalue(a, b)
}

// ---------------------------------------------------------------------------
// Discrete transport
// ---------------------------------------------------------------------------

struct FlowEdge {
    to: usize,
    rev: usize,
    cap: f64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<FlowEdge>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            adj: (0..n).map(|_| Vec::new()).collect(),
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        let fwd = self.adj[from].len();
        let bwd = self.adj[to].len();
        self.adj[from].push(FlowEdge {
            to,
            rev: bwd,
            cap,
            cost,
        });
        self.adj[to].push(FlowEdge {
            to: from,
            rev: fwd,
            cap: 0.0,
            cost: -cost,
        });
    }
}

const FLOW_EPS: f64 = 1e-15;

/// Exact first-order transport distance between two discrete measures with
/// a shared support enumeration and a ground-cost matrix
/// (`cost[i][j]` moves one unit of mass from support point `i` of `supply`
/// to support point `j` of `demand`). Total masses must agree to 1e-9 and
/// costs must be finite and nonnegative. Solved by successive shortest
/// augmenting paths with Bellman-Ford path search, which handles the
/// negative reduced costs on residual edges directly.
pub fn wasserstein1_discrete(
    supply: &[f64],
    demand: &[f64],
    cost: &DMatrix<f64>,
) -> Result<f64, InstanceError> {
    let (k, l) = (supply.len(), demand.len());
    if cost.nrows() != k || cost.ncols() != l {
        return Err(InstanceError::Invalid {
            path: "cost".into(),
            message: format!(
                "expected a {k}x{l} cost matrix, got {}x{}",
                cost.nrows(),
                cost.ncols()
            ),
        });
    }
    for (name, side) in [("supply", supply), ("demand", demand)] {
        for (i, w) in side.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(InstanceError::Invalid {
                    path: format!("{name}[{i}]"),
                    message: format!("mass {w} is not a finite nonnegative number"),
                });
            }
        }
    }
    for i in 0..k {
        for j in 0..l {
            let c = cost[(i, j)];
            if !c.is_finite() || c < 0.0 {
                return Err(InstanceError::Invalid {
                    path: format!("cost[{i}][{j}]"),
                    message: format!("cost {c} is not a finite nonnegative number"),
                });
            }
        }
    }
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    if (total_supply - total_demand).abs() > 1e-9 * total_supply.max(total_demand).max(1.0) {
        return Err(InstanceError::Invalid {
            path: "demand".into(),
            message: format!("total masses differ: supply {total_supply} vs demand {total_demand}"),
        });
    }

    // node layout: source, k supply nodes, l demand nodes, sink
    let source = 0;
    let sink = k + l + 1;
    let mut g = FlowGraph::new(k + l + 2);
    for (i, w) in supply.iter().enumerate() {
        g.add(source, 1 + i, *w, 0.0);
    }
    for i in 0..k {
        for j in 0..l {
            g.add(1 + i, 1 + k + j, f64::INFINITY, cost[(i, j)]);
        }
    }
    for (j, w) in demand.iter().enumerate() {
        g.add(1 + k + j, sink, *w, 0.0);
    }

    let n = g.adj.len();
    let mut remaining = total_supply.min(total_demand);
    let stop = 1e-12 * total_supply.max(1.0);
    let mut total_cost = 0.0f64;
    let max_rounds = 10 * (k + 2) * (l + 2) + 100;
    let mut rounds = 0;
    while remaining > stop {
        rounds += 1;
        if rounds > max_rounds {
            return Err(InstanceError::Invalid {
                path: "cost".into(),
                message: "transport solver failed to converge".into(),
            });
        }
        // Bellman-Ford from the source over residual edges
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for (ei, e) in g.adj[u].iter().enumerate() {
                    if e.cap <= FLOW_EPS {
                        continue;
                    }
                    let nd = dist[u] + e.cost;
                    if nd < dist[e.to] - 1e-15 {
                        dist[e.to] = nd;
                        prev[e.to] = Some((u, ei));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            return Err(InstanceError::Invalid {
                path: "demand".into(),
                message: "transport network has no augmenting path left".into(),
            });
        }
        // bottleneck along the path
        let mut bottleneck = remaining;
        let mut node = sink;
        while let Some((u, ei)) = prev[node] {
            bottleneck = bottleneck.min(g.adj[u][ei].cap);
            node = u;
        }
        // push
        let mut node = sink;
        while let Some((u, ei)) = prev[node] {
            let rev = g.adj[u][ei].rev;
            g.adj[u][ei].cap -= bottleneck;
            g.adj[node][rev].cap += bottleneck;
            node = u;
        }
        total_cost += bottleneck * dist[sink];
        remaining -= bottleneck;
    }
    Ok(total_cost)
}

// ---------------------------------------------------------------------------
// Bound audits
// ---------------------------------------------------------------------------

/// One audited inequality: at source level `eps` the weak modulus equals
/// `delta` and the measure-based bound evaluates to `bound`;
/// `slack = bound - delta` must be nonnegative up to numerical noise.
#[derive(Clone, Debug)]
pub struct BoundRow {
    pub measure: &'static str,
    pub eps: f64,
    pub delta: f64,
    pub bound: f64,
    pub slack: f64,
}

impl BoundRow {
    fn new(measure: &'static str, eps: f64, delta: f64, bound: f64) -> Self {
        BoundRow {
            measure,
            eps,
            delta,
            bound,
            slack: bound - delta,
        }
    }
}

/// Audit every finite-task modulus bound on a grid of levels.
pub fn verify_modulus_bounds_finite(
    inst: &FiniteInstance,
    eps_grid: &[f64],
) -> Result<Vec<BoundRow>, InstanceError> {
    let curve = moduli::weak_modulus_curve(inst);
    let disc_y = y_discrepancy(inst);
    let disc_y_excess = y_discrepancy_excess(inst);
    let disc_a = a_discrepancy(inst);
    let sharp = moduli::pivotal_sharp(inst);
    let c1 = fitted_transfer_constant(inst, 1.0)?;
    let rp = inst.risks(Side::P);
    let rq = inst.risks(Side::Q);
    let best_p = rp.iter().copied().fold(f64::INFINITY, f64::min);
    let best_q = rq.iter().copied().fold(f64::INFINITY, f64::min);
    // lowest-index minimizer of the summed risks
    let joint = (0..rp.len())
        .min_by(|&a, &b| (rp[a] + rq[a]).partial_cmp(&(rp[b] + rq[b])).unwrap())
        .expect("class is nonempty");
    let joint_term = (best_p - best_q) + rq[joint] + rp[joint];
    let mut rows = Vec::new();
    for &eps in eps_grid {
        let delta = curve.eval(eps)?;
        rows.push(BoundRow::new("y_disc", eps, delta, eps + 2.0 * disc_y));
        rows.push(BoundRow::new(
            "y_disc_excess",
            eps,
            delta,
            eps + disc_y_excess,
        ));
        rows.push(BoundRow::new(
            "a_disc",
            eps,
            delta,
            eps + disc_a + joint_term,
        ));
        rows.push(BoundRow::new("rate_fit", eps, delta, c1 * eps + sharp));
    }
    Ok(rows)
}

/// Audit the linear-task modulus bounds on a grid of levels. The
/// eigenvalue-rate bound is exact (and reported) only when both sides
/// share a population minimizer; the general two-term bound is always
/// reported; the marginal-transport bound is reported when the task is an
/// atom mixture with a shared minimizer and a declared envelope wide
/// enough for every requested level.
pub fn verify_modulus_bounds_linear(
    inst: &LinearInstance,
    eps_grid: &[f64],
) -> Result<Vec<BoundRow>, InstanceError> {
    let rate = covariance_ratio(inst.sigma(Side::P), inst.sigma(Side::Q));
    let shared = inst.w_star(Side::P) == inst.w_star(Side::Q);
    let excess_q_of_wp = inst.excess_risk(Side::Q, inst.w_star(Side::P))?;
    let min_eig_p = inst
        .sigma(Side::P)
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    // marginal-transport data, when available
    let transport = match (
        inst.covariate_model(),
        inst.lipschitz_radius(),
        inst.output_bound(),
    ) {
        (
            CovariateModel::AtomMixture {
                atoms,
                p_weights,
                q_weights,
            },
            Some(lambda),
            Some(m_bound),
        ) if shared => {
            let k = atoms.len();
            let cost = DMatrix::from_fn(k, k, |i, j| (&atoms[i] - &atoms[j]).norm());
            let w1 = wasserstein1_discrete(p_weights, q_weights, &cost)?;
            Some((lambda, m_bound, w1))
        }
        _ => None,
    };
    let mut rows = Vec::new();
    for &eps in eps_grid {
        let delta = moduli::weak_modulus_linear(inst, eps)?;
        if shared {
            rows.push(BoundRow::new("eigen_rate", eps, delta, rate * eps));
        }
        rows.push(BoundRow::new(
            "eigen_rate_general",
            eps,
            delta,
            2.0 * rate * eps + 2.0 * excess_q_of_wp,
        ));
        if let Some((lambda, m_bound, w1)) = transport {
            // hypothesis envelope at this level must fit the declared budgets
            let envelope = inst.w_star(Side::P).norm() + (eps / min_eig_p).sqrt();
            if envelope <= lambda.min(m_bound) {
                rows.push(BoundRow::new(
                    "w1_transport",
                    eps,
                    delta,
                    eps + 8.0 * m_bound * lambda * w1,
                ));
            }
        }
    }
    Ok(rows)
}

/// Named discrepancy summaries of a finite task.
pub fn summaries_finite(inst: &FiniteInstance) -> Result<Vec<(&'static str, f64)>, InstanceError> {
    let mut out = vec![
        ("y_disc", y_discrepancy(inst)),
        ("y_disc_excess", y_discrepancy_excess(inst)),
        ("a_disc", a_discrepancy(inst)),
        ("rate_fit_c1", fitted_transfer_constant(inst, 1.0)?),
        ("pivot", moduli::pivotal_value(inst)),
        ("pivot_sharp", moduli::pivotal_sharp(inst)),
    ];
    if let Some(metric) = inst.metric() {
        out.push((
            "w1_marginals",
            wasserstein1_discrete(inst.weights(Side::P), inst.weights(Side::Q), metric)?,
        ));
    }
    Ok(out)
}

/// Named discrepancy summaries of a linear task.
pub fn summaries_linear(inst: &LinearInstance) -> Result<Vec<(&'static str, f64)>, InstanceError> {
    let mut out = vec![
        (
            "covariance_ratio_pq",
            covariance_ratio(inst.sigma(Side::P), inst.sigma(Side::Q)),
        ),
        (
            "covariance_ratio_qp",
            covariance_ratio(inst.sigma(Side::Q), inst.sigma(Side::P)),
        ),
        (
            "target_excess_of_source_optimum",
            inst.excess_risk(Side::Q, inst.w_star(Side::P))?,
        ),
    ];
    if let CovariateModel::AtomMixture {
        atoms,
        p_weights,
        q_weights,
    } = inst.covariate_model()
    {
        let k = atoms.len();
        let cost = DMatrix::from_fn(k, k, |i, j| (&atoms[i] - &atoms[j]).norm());
        out.push((
            "w1_marginals",
            wasserstein1_discrete(p_weights, q_weights, &cost)?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{
        random_atom_mixture_instance, random_finite_instance, random_linear_instance, two_atom_gap,
    };
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_atom_gap_measure_values() {
        let inst = two_atom_gap();
        assert_abs_diff_eq!(y_discrepancy(&inst), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(y_discrepancy_excess(&inst), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(a_discrepancy(&inst), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            fitted_transfer_constant(&inst, 1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn two_atom_gap_rate_condition() {
        let inst = two_atom_gap();
        let ok = transfer_exponent_check(&inst, 1.0, 1.0).unwrap();
        assert!(ok.holds, "gap {}", ok.worst_gap);
        let bad = transfer_exponent_check(&inst, 1.0, 0.5).unwrap();
        assert!(!bad.holds);
        assert_eq!(bad.worst_hypothesis, 2);
        assert_abs_diff_eq!(bad.worst_gap, 0.25, epsilon = 1e-12);
        assert!(transfer_exponent_check(&inst, 0.5, 1.0).is_err());
        assert!(transfer_exponent_check(&inst, 1.0, -1.0).is_err());
    }

    #[test]
    fn transport_two_point_exact() {
        let cost = DMatrix::from_fn(2, 2, |i, j| if i == j { 0.0 } else { 3.0 });
        let w1 = wasserstein1_discrete(&[1.0, 0.0], &[0.0, 1.0], &cost).unwrap();
        assert_abs_diff_eq!(w1, 3.0, epsilon = 1e-12);
        let zero = wasserstein1_discrete(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        assert_abs_diff_eq!(zero, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transport_rejects_bad_inputs() {
        let cost = DMatrix::zeros(2, 2);
        assert!(wasserstein1_discrete(&[1.0, 0.0], &[0.3, 0.3], &cost).is_err());
        let neg = DMatrix::from_fn(2, 2, |_, _| -1.0);
        assert!(wasserstein1_discrete(&[0.5, 0.5], &[0.5, 0.5], &neg).is_err());
        assert!(wasserstein1_discrete(&[0.5, -0.5], &[0.5, 0.5], &cost).is_err());
        let skew = DMatrix::zeros(3, 2);
        assert!(wasserstein1_discrete(&[0.5, 0.5], &[0.5, 0.5], &skew).is_err());
    }

    /// Closed form on the line: integrate |F_supply - F_demand|.
    fn line_w1_oracle(positions: &[f64], supply: &[f64], demand: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut cdf_gap = 0.0;
        for i in 0..positions.len() - 1 {
            cdf_gap += supply[i] - demand[i];
            acc += cdf_gap.abs() * (positions[i + 1] - positions[i]);
        }
        acc
    }

    #[test]
    fn transport_matches_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(411);
        for trial in 0..50 {
            let k = rng.gen_range(2..=6usize);
            let mut positions: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 4.0).collect();
            positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rand_simplex = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            };
            let supply = rand_simplex(&mut rng);
            let demand = rand_simplex(&mut rng);
            let cost = DMatrix::from_fn(k, k, |i, j| (positions[i] - positions[j]).abs());
            let got = wasserstein1_discrete(&supply, &demand, &cost).unwrap();
            let want = line_w1_oracle(&positions, &supply, &demand);
            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
            assert!(got >= -1e-15, "trial {trial}");
        }
    }

    #[test]
    fn covariance_ratio_reciprocal_product() {
        assert_abs_diff_eq!(
            covariance_ratio(&DMatrix::identity(3, 3), &(DMatrix::identity(3, 3) * 2.0)),
            2.0,
            epsilon = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..30 {
            let d = rng.gen_range(1..=4usize);
            let spd = |rng: &mut ChaCha8Rng| {
                let g = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() - 0.5);
                let q = g.qr().q();
                let vals = nalgebra::DVector::from_fn(d, |_, _| 0.1 + rng.gen::<f64>());
                let m = &q * DMatrix::from_diagonal(&vals) * q.transpose();
                (&m + m.transpose()) * 0.5
            };
            let a = spd(&mut rng);
            let b = spd(&mut rng);
            let fwd = covariance_ratio(&a, &b);
            let bwd = covariance_ratio(&b, &a);
            assert!(fwd * bwd >= 1.0 - 1e-10, "{fwd} * {bwd}");
        }
    }

    #[test]
    fn finite_bounds_hold_on_fixture_and_random_tasks() {
        let grid: Vec<f64> = (0..=14).map(|i| i as f64 * 0.05).collect();
        let rows = verify_modulus_bounds_finite(&two_atom_gap(), &grid).unwrap();
        assert_eq!(rows.len(), grid.len() * 4);
        for row in &rows {
            assert!(
                row.slack >= -1e-10,
                "{} at eps {}: slack {}",
                row.measure,
                row.eps,
                row.slack
            );
        }
        for seed in 0..60u64 {
            let inst = random_finite_instance(7000 + seed, 6, 12);
            for row in verify_modulus_bounds_finite(&inst, &grid).unwrap() {
                assert!(
                    row.slack >= -1e-10,
                    "seed {seed}, {} at eps {}: slack {}",
                    row.measure,
                    row.eps,
                    row.slack
                );
            }
        }
    }

    #[test]
    fn linear_bounds_hold_and_shared_rate_is_tight() {
        let grid = [1e-4, 1e-3, 1e-2, 0.1, 0.3];
        for seed in 0..25u64 {
            let shared = random_linear_instance(1300 + seed, 5, true);
            for row in verify_modulus_bounds_linear(&shared, &grid).unwrap() {
                assert!(row.slack >= -1e-10, "{}: {}", row.measure, row.slack);
                if row.measure == "eigen_rate" {
                    assert!(
                        (row.bound - row.delta).abs() <= 1e-8 * row.bound.max(1e-12),
                        "seed {seed}: rate bound not tight ({} vs {})",
                        row.bound,
                        row.delta
                    );
                }
            }
            let general = random_linear_instance(1400 + seed, 5, false);
            let rows = verify_modulus_bounds_linear(&general, &grid).unwrap();
            assert!(rows.iter().all(|r| r.measure != "eigen_rate"));
            for row in rows {
                assert!(row.slack >= -1e-10, "{}: {}", row.measure, row.slack);
            }
        }
    }

    #[test]
    fn transport_bound_rows_appear_for_atom_mixtures() {
        let grid = [1e-3, 1e-2, 0.1];
        for seed in 0..10u64 {
            let inst = random_atom_mixture_instance(500 + seed, 2, 5);
            let rows = verify_modulus_bounds_linear(&inst, &grid).unwrap();
            let transport: Vec<_> = rows
                .iter()
                .filter(|r| r.measure == "w1_transport")
                .collect();
            assert_eq!(transport.len(), grid.len(), "seed {seed}");
            for row in rows {
                assert!(
                    row.slack >= -1e-10,
                    "seed {seed}, {}: {}",
                    row.measure,
                    row.slack
                );
            }
        }
    }

    #[test]
    fn summaries_cover_expected_measures() {
        let fin = summaries_finite(&two_atom_gap()).unwrap();
        let names: Vec<&str> = fin.iter().map(|(n, _)| *n).collect();
        assert!(names.contains(&"y_disc"));
        assert!(names.contains(&"w1_marginals"));
        let w1 = fin.iter().find(|(n, _)| *n == "w1_marginals").unwrap().1;
        assert_abs_diff_eq!(w1, 0.0, epsilon = 1e-12); // identical marginals
        let lin = summaries_linear(&random_atom_mixture_instance(9, 2, 5)).unwrap();
        let names: Vec<&str> = lin.iter().map(|(n, _)| *n).collect();
        assert!(names.contains(&"covariance_ratio_pq"));
        assert!(names.contains(&"w1_marginals"));
    }
}
