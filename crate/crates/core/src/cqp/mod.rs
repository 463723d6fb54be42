//! Convex QP over multicommodity flow conservation with per-link bounds on
//! the aggregate flow.
//!
//! Variables are the commodity link flows `x_a^k >= 0` plus an explicit
//! aggregate `x_a` tied to them by `sum_k x_a^k = x_a`. The objective is
//! separable in the aggregate: `sum_a quad_a / 2 * x_a^2 + linear_a * x_a + constant`,
//! and bounds `lower_a <= x_a <= upper_a` apply to the aggregate only.

mod dense;
pub mod kernel;

use serde::{Deserialize, Serialize};

pub use kernel::{IpmSettings, KernelSolution, KktResidual, QpStatus, SeparableQp, SparseCols};

use crate::error::{Error, Result};
use crate::network::{Commodity, FlowPattern, Network, NodeIdx};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T> {
    num_nodes: usize,
    tails: Vec<usize>,
    heads: Vec<usize>,
    commodities: Vec<Commodity<T>>,
    /// Per link: coefficient of `x_a^2 / 2`.
    pub quad: Vec<T>,
    /// Per link: coefficient of `x_a`.
    pub linear: Vec<T>,
    pub constant: T,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> QpProblem<T> {
    /// Zero objective, bounds `[0, inf)` on every aggregate flow.
    pub fn new(network: &Network<T>, commodities: Vec<Commodity<T>>) -> Self {
        let l = network.num_links();
        Self {
            num_nodes: network.num_nodes(),
            tails: network.links().iter().map(|k| k.tail.0).collect(),
            heads: network.links().iter().map(|k| k.head.0).collect(),
            commodities,
            quad: vec![T::zero(); l],
            linear: vec![T::zero(); l],
            constant: T::zero(),
            lower: vec![T::zero(); l],
            upper: vec![T::infinity(); l],
        }
    }

    pub fn num_links(&self) -> usize {
        self.tails.len()
    }

    pub fn commodities(&self) -> &[Commodity<T>] {
        &self.commodities
    }

    pub fn total_demand(&self) -> T {
        self.commodities.iter().map(|c| c.total()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_links();
        let lens = [self.quad.len(), self.linear.len(), self.lower.len(), self.upper.len()];
        if lens.iter().any(|&n| n != l) {
            return Err(Error::Structure(format!(
                "per-link vectors {lens:?} do not match {l} links"
            )));
        }
        for a in 0..l {
            if !(self.quad[a] >= T::zero()) {
                return Err(Error::Structure(format!("negative curvature on link {a}")));
            }
            if !(self.lower[a] <= self.upper[a]) || !self.lower[a].is_finite() {
                return Err(Error::Structure(format!(
                    "link {a} bounds [{}, {}] are invalid",
                    self.lower[a], self.upper[a]
                )));
            }
        }
        for c in &self.commodities {
            let bad = std::iter::once(c.origin)
                .chain(c.sinks.keys().copied())
                .any(|NodeIdx(n)| n >= self.num_nodes);
            if bad {
                return Err(Error::Structure("commodity references a missing node".into()));
            }
        }
        Ok(())
    }

    fn offset_aggregate(&self) -> usize {
        self.commodities.len() * self.num_links()
    }

    /// Kernel form: commodity flows first (commodity-major), then aggregates.
    /// Conservation rows skip each commodity's origin, which is implied.
    pub fn to_kernel(&self) -> Result<SeparableQp<T>> {
        self.validate()?;
        let l = self.num_links();
        let k = self.commodities.len();
        let nn = self.num_nodes;
        let rows_per = nn.saturating_sub(1);
        let m = k * rows_per + l;
        let mut cols: Vec<Vec<(usize, T)>> = Vec::with_capacity(k * l + l);
        let mut rhs = vec![T::zero(); m];
        let row_of = |origin: usize, node: usize| -> Option<usize> {
            match node.cmp(&origin) {
                std::cmp::Ordering::Less => Some(node),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(node - 1),
            }
        };
        for (ci, c) in self.commodities.iter().enumerate() {
            let base = ci * rows_per;
            let o = c.origin.0;
            for a in 0..l {
                let mut col = Vec::with_capacity(3);
                if let Some(r) = row_of(o, self.heads[a]) {
                    col.push((base + r, T::one()));
                }
                if let Some(r) = row_of(o, self.tails[a]) {
                    col.push((base + r, -T::one()));
                }
                col.push((k * rows_per + a, T::one()));
                cols.push(col);
            }
            for n in 0..nn {
                if let Some(r) = row_of(o, n) {
                    rhs[base + r] = -c.injection(NodeIdx(n));
                }
            }
        }
        for a in 0..l {
            cols.push(vec![(k * rows_per + a, -T::one())]);
        }
        let nvar = k * l + l;
        let mut hess = vec![T::zero(); nvar];
        let mut cost = vec![T::zero(); nvar];
        let mut lower = vec![T::zero(); nvar];
        let mut upper = vec![T::infinity(); nvar];
        let off = self.offset_aggregate();
        for a in 0..l {
            hess[off + a] = self.quad[a];
            cost[off + a] = self.linear[a];
            lower[off + a] = self.lower[a];
            upper[off + a] = self.upper[a];
        }
        Ok(SeparableQp {
            hess,
            cost,
            constant: self.constant,
            a: SparseCols::from_columns(m, &cols)?,
            rhs,
            lower,
            upper,
        })
    }

    fn to_vector(&self, flows: &FlowPattern<T>) -> Result<Vec<T>> {
        let l = self.num_links();
        if flows.commodity_flows.len() != self.commodities.len()
            || flows.aggregate.len() != l
            || flows.commodity_flows.iter().any(|r| r.len() != l)
        {
            return Err(Error::Structure("candidate flows do not match problem dimensions".into()));
        }
        Ok(flows
            .commodity_flows
            .iter()
            .flatten()
            .chain(&flows.aggregate)
            .copied()
            .collect())
    }

    fn to_flows(&self, v: &[T]) -> FlowPattern<T> {
        let l = self.num_links();
        let off = self.offset_aggregate();
        FlowPattern {
            commodity_flows: v[..off].chunks(l.max(1)).take(self.commodities.len()).map(<[T]>::to_vec).collect(),
            aggregate: v[off..].to_vec(),
        }
    }

    /// Kernel-layout upper bounds: commodity flows never exceed their aggregate.
    fn implied_upper(&self) -> Vec<T> {
        let mut u: Vec<T> = Vec::with_capacity(self.offset_aggregate() + self.num_links());
        for _ in &self.commodities {
            u.extend(&self.upper);
        }
        u.extend(&self.upper);
        u
    }

    pub fn objective_at(&self, aggregate: &[T]) -> T {
        let half = T::lit(0.5);
        self.constant
            + aggregate
                .iter()
                .enumerate()
                .map(|(a, &x)| half * self.quad[a] * x * x + self.linear[a] * x)
                .sum::<T>()
    }
}

/// Multipliers returned with a solve, in kernel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDuals<T> {
    pub equality: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub flows: FlowPattern<T>,
    pub objective: T,
    pub status: QpStatus,
    pub kkt: KktResidual<T>,
    pub iterations: usize,
    /// Phase-one violation, when feasibility was checked.
    pub infeasibility: Option<T>,
    pub duals: QpDuals<T>,
    /// Lagrangian lower bound from the returned multipliers; valid even when
    /// the solver stopped early.
    pub dual_bound: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqpTolerances<T> {
    pub ipm: IpmSettings<T>,
}

impl<T: Scalar> Default for CqpTolerances<T> {
    fn default() -> Self {
        Self {
            ipm: IpmSettings::default(),
        }
    }
}

pub fn solve_cqp<T: Scalar>(problem: &QpProblem<T>, tol: &CqpTolerances<T>) -> Result<QpSolution<T>> {
    solve_cqp_with(problem, tol, false)
}

/// `known_feasible` skips the phase-one check; pass it only when a feasible
/// point of exactly this problem is already at hand.
pub fn solve_cqp_with<T: Scalar>(
    problem: &QpProblem<T>,
    tol: &CqpTolerances<T>,
    known_feasible: bool,
) -> Result<QpSolution<T>> {
    let kernel = problem.to_kernel()?;
    let sol = kernel.solve_with(&tol.ipm, known_feasible)?;
    let dual_bound = match sol.status {
        QpStatus::Infeasible => T::neg_infinity(),
        _ => kernel.lagrangian_bound(&sol.y, &problem.implied_upper()),
    };
    Ok(QpSolution {
        dual_bound,
        flows: problem.to_flows(&sol.x),
        objective: sol.objective,
        status: sol.status,
        kkt: sol.kkt,
        iterations: sol.iterations,
        infeasibility: sol.infeasibility,
        duals: QpDuals {
            equality: sol.y,
            lower: sol.z_lower,
            upper: sol.z_upper,
        },
    })
}

/// KKT residuals of `candidate` with best-fit multipliers. Variables within
/// `1e-9 * (1 + |bound|)` of a bound are treated as active.
pub fn kkt_residual<T: Scalar>(problem: &QpProblem<T>, candidate: &FlowPattern<T>) -> Result<KktResidual<T>> {
    let kernel = problem.to_kernel()?;
    let v = problem.to_vector(candidate)?;
    let scale = T::one() + kernel.rhs.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    Ok(kernel.kkt_primal(&v, T::lit(1e-9) * scale))
}

/// KKT residuals of `candidate` with the supplied multipliers.
pub fn kkt_residual_with_duals<T: Scalar>(
    problem: &QpProblem<T>,
    candidate: &FlowPattern<T>,
    duals: &QpDuals<T>,
) -> Result<KktResidual<T>> {
    let kernel = problem.to_kernel()?;
    let v = problem.to_vector(candidate)?;
    if duals.equality.len() != kernel.num_rows() || duals.lower.len() != v.len() || duals.upper.len() != v.len() {
        return Err(Error::Structure("multiplier dimensions do not match".into()));
    }
    Ok(kernel.kkt(&v, &duals.equality, &duals.lower, &duals.upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::spec;
    use crate::network::{aggregate_by_origin, build_network, DemandTable};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parallel(n: usize) -> Network<f64> {
        let links = (0..n).map(|i| spec(&format!("l{i}"), "o", "d")).collect();
        build_network(["o", "d"], links).unwrap()
    }

    fn od(net: &Network<f64>, q: f64) -> Vec<Commodity<f64>> {
        aggregate_by_origin(&DemandTable::new(net, [("o", "d", q)]).unwrap())
    }

    #[test]
    fn two_route_quadratic() {
        let net = parallel(2);
        let mut p = QpProblem::new(&net, od(&net, 1.0));
        p.quad = vec![2.0, 4.0];
        let s = solve_cqp(&p, &Default::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.flows.aggregate[0], 2.0 / 3.0, epsilon = 1e-7);
        assert_relative_eq!(s.objective, 2.0 / 3.0, epsilon = 1e-7);
        let r = kkt_residual_with_duals(&p, &s.flows, &s.duals).unwrap();
        assert!(r.max_relative() <= 1e-8);

        let exact = FlowPattern::from_commodity_flows(vec![vec![2.0 / 3.0, 1.0 / 3.0]], 2);
        assert!(kkt_residual(&p, &exact).unwrap().max_relative() < 1e-10);
        let off = FlowPattern::from_commodity_flows(vec![vec![0.75, 0.75]], 2);
        assert_relative_eq!(kkt_residual(&p, &off).unwrap().primal_abs, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dual_bound_is_tight_at_optimum_and_valid_elsewhere() {
        let net = parallel(2);
        let mut p = QpProblem::new(&net, od(&net, 10.0));
        p.quad = vec![2.0, 1.0];
        p.linear = vec![1.0, 3.0];
        p.upper = vec![8.0, 8.0];
        let s = solve_cqp(&p, &CqpTolerances::default()).unwrap();
        assert_relative_eq!(s.dual_bound, s.objective, max_relative = 1e-7);
        let k = p.to_kernel().unwrap();
        let u = p.implied_upper();
        for y0 in [-5.0, 0.0, 2.5, 40.0] {
            let y: Vec<f64> = (0..k.num_rows()).map(|r| y0 + r as f64).collect();
            assert!(k.lagrangian_bound(&y, &u) <= s.objective + 1e-9);
        }
    }

    #[test]
    fn circulation_meets_lower_bound() {
        // minimize x^2 subject to x >= 1 on a two-node cycle with no demand
        let net = build_network(["a", "b"], vec![spec("ab", "a", "b"), spec("ba", "b", "a")]).unwrap();
        let commodities = vec![Commodity {
            origin: NodeIdx(0),
            sinks: Default::default(),
        }];
        let mut p = QpProblem::new(&net, commodities);
        p.quad = vec![2.0, 0.0];
        p.lower[0] = 1.0;
        let s = solve_cqp(&p, &Default::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.flows.aggregate[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn overload_is_infeasible() {
        let net = parallel(1);
        let mut p = QpProblem::new(&net, od(&net, 100.0));
        p.upper[0] = 80.0;
        assert_eq!(solve_cqp(&p, &Default::default()).unwrap().status, QpStatus::Infeasible);
        p.upper[0] = 100.0;
        assert_eq!(solve_cqp(&p, &Default::default()).unwrap().status, QpStatus::Optimal);
    }

    #[test]
    fn mismatched_vectors_are_structural() {
        let net = parallel(2);
        let mut p = QpProblem::new(&net, od(&net, 1.0));
        p.quad.pop();
        assert!(matches!(solve_cqp(&p, &Default::default()), Err(Error::Structure(_))));
    }

    fn waterfill(costs: &[(f64, f64, f64)], demand: f64) -> f64 {
        // costs: (quad, linear, upper); returns optimal value by bisection on the multiplier
        let flow_at = |lam: f64| -> Vec<f64> {
            costs
                .iter()
                .map(|&(q, c, u)| if q > 0.0 { ((lam - c) / q).clamp(0.0, u) } else if lam > c { u } else { 0.0 })
                .collect()
        };
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if flow_at(mid).iter().sum::<f64>() < demand {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        flow_at(hi)
            .iter()
            .zip(costs)
            .map(|(&x, &(q, c, _))| 0.5 * q * x * x + c * x)
            .sum()
    }

    #[test]
    fn matches_brute_force_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..=3);
            let net = parallel(n);
            let demand = rng.gen_range(1.0..10.0);
            let mut p = QpProblem::new(&net, od(&net, demand));
            for a in 0..n {
                p.quad[a] = rng.gen_range(0.1..2.0);
                p.linear[a] = rng.gen_range(0.0..3.0);
                p.upper[a] = rng.gen_range(0.5 * demand..demand * 1.2);
            }
            let s = solve_cqp(&p, &Default::default()).unwrap();
            if p.upper.iter().sum::<f64>() < demand {
                assert_eq!(s.status, QpStatus::Infeasible);
                continue;
            }
            assert_eq!(s.status, QpStatus::Optimal);
            // grid over the first n-1 flows with step 1e-3 of the interval
            let steps = 1000;
            let mut best = f64::INFINITY;
            let eval = |x: &[f64]| -> f64 { (0..n).map(|a| 0.5 * p.quad[a] * x[a] * x[a] + p.linear[a] * x[a]).sum() };
            if n == 2 {
                for i in 0..=steps {
                    let x0 = p.upper[0] * i as f64 / steps as f64;
                    let x1 = demand - x0;
                    if (0.0..=p.upper[1]).contains(&x1) {
                        best = best.min(eval(&[x0, x1]));
                    }
                }
            } else {
                for i in 0..=steps {
                    let x0 = p.upper[0] * i as f64 / steps as f64;
                    // remaining two links solved exactly by water filling
                    let rest = demand - x0;
                    if rest < 0.0 || rest > p.upper[1] + p.upper[2] {
                        continue;
                    }
                    let tail = waterfill(&[(p.quad[1], p.linear[1], p.upper[1]), (p.quad[2], p.linear[2], p.upper[2])], rest);
                    best = best.min(eval(&[x0, 0.0, 0.0]) + tail);
                }
            }
            assert!((s.objective - best).abs() <= 1e-4 * best.abs().max(1.0) + 1e-3 * demand, "{} vs {}", s.objective, best);
            assert!(s.objective <= best + 1e-7 * (1.0 + best.abs()), "{} above grid {}", s.objective, best);
        }
    }

    fn max_flow(n: usize, arcs: &[(usize, usize, f64)], s: usize, t: usize) -> f64 {
        let mut cap = vec![vec![0.0; n]; n];
        for &(u, v, c) in arcs {
            cap[u][v] += c;
        }
        let mut total = 0.0;
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if prev[v] == usize::MAX && cap[u][v] > 1e-12 {
                        prev[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return total;
            }
            let mut f = f64::INFINITY;
            let mut v = t;
            while v != s {
                f = f.min(cap[prev[v]][v]);
                v = prev[v];
            }
            let mut v = t;
            while v != s {
                cap[prev[v]][v] -= f;
                cap[v][prev[v]] += f;
                v = prev[v];
            }
            total += f;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn shrinking_bounds_never_lowers_optimum(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = parallel(3);
            let demand = rng.gen_range(1.0..10.0);
            let mut p = QpProblem::new(&net, od(&net, demand));
            for a in 0..3 {
                p.quad[a] = rng.gen_range(0.0..2.0);
                p.linear[a] = rng.gen_range(-1.0..3.0);
                p.upper[a] = demand;
            }
            let wide = solve_cqp(&p, &Default::default()).unwrap();
            let a = rng.gen_range(0..3);
            p.upper[a] = rng.gen_range(0.0..demand);
            p.lower[(a + 1) % 3] = rng.gen_range(0.0..demand * 0.3);
            let narrow = solve_cqp(&p, &Default::default()).unwrap();
            prop_assert_eq!(wide.status, QpStatus::Optimal);
            if narrow.status == QpStatus::Optimal {
                prop_assert!(narrow.objective >= wide.objective - 1e-6 * (1.0 + wide.objective.abs()));
            }
        }

        #[test]
        fn infeasibility_matches_min_cut(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nodes: Vec<String> = (0..5).map(|i| i.to_string()).collect();
            let mut links = Vec::new();
            let mut arcs = Vec::new();
            for u in 0..5 {
                for v in 0..5 {
                    if u != v && rng.gen_bool(0.4) {
                        links.push(spec(&format!("{u}-{v}"), &nodes[u], &nodes[v]));
                        arcs.push((u, v, rng.gen_range(0.0..10.0f64).round()));
                    }
                }
            }
            let net = build_network(nodes.clone(), links).unwrap();
            let demand = rng.gen_range(1.0..20.0f64).round() + 0.5;
            let commodities = aggregate_by_origin(&DemandTable::new(&net, [("0", "4", demand)]).unwrap());
            let mut p = QpProblem::new(&net, commodities);
            for (a, &(_, _, c)) in arcs.iter().enumerate() {
                p.upper[a] = c;
                p.linear[a] = 1.0;
            }
            let s = solve_cqp(&p, &Default::default()).unwrap();
            let cut = max_flow(5, &arcs, 0, 4);
            prop_assert_eq!(s.status == QpStatus::Infeasible, demand > cut, "demand {} cut {}", demand, cut);
        }
    }
}
