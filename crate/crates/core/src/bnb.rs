//! Global user-equilibrium solver for mixed link states.
//!
//! Congested links contribute the concave term `beta ln x`. Over a box of
//! congested-link flows it is replaced by its chord, which turns the problem
//! into a convex QP whose value bounds the true optimum from below. Boxes are
//! refined best-first until the incumbent is within `epsilon` of the bound.

use serde::{Deserialize, Serialize};

use crate::cost::{ue_objective, ue_potential, CostConfig};
use crate::cqp::{solve_cqp_with, CqpTolerances, KktResidual, QpProblem, QpSolution, QpStatus};
use crate::error::{Error, Result};
use crate::network::{commodities, CommodityMode, DemandTable, FlowPattern, LinkIdx, LinkState, Network, StateVector};
use crate::scalar::Scalar;

/// Flow box over the congested links, in link index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> SubBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Structure(format!(
                "box bounds have {} and {} entries",
                lower.len(),
                upper.len()
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `[delta, q_max]` on every congested link.
    pub fn root(network: &Network<T>, state: &StateVector, cfg: &CostConfig<T>) -> Self {
        let c = state.congested();
        Self {
            lower: vec![cfg.delta; c.len()],
            upper: c.iter().map(|&l| network.link(l).params.q_max).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, j: usize) -> T {
        self.upper[j] - self.lower[j]
    }

    /// Index of the longest edge, lowest index on ties.
    pub fn longest_edge(&self) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for j in 0..self.dim() {
            let w = self.width(j);
            if best.is_none_or(|(_, b)| w > b) {
                best = Some((j, w));
            }
        }
        best.map(|(j, _)| j)
    }

    pub fn contains(&self, point: &[T]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .enumerate()
                .all(|(j, &x)| x >= self.lower[j] && x <= self.upper[j])
    }
}

/// Chord of `beta ln x` on `[lower, upper]`:
/// `bar_y(x) = beta ln(lower) + slope (x - lower)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecantHull<T> {
    pub beta: T,
    pub lower: T,
    pub upper: T,
    pub slope: T,
    pub intercept: T,
}

impl<T: Scalar> SecantHull<T> {
    pub fn eval(&self, x: T) -> T {
        self.intercept + self.slope * (x - self.lower)
    }

    /// Upper bound on `beta ln x - bar_y(x)` over the interval.
    pub fn gap_bound(&self) -> T {
        self.beta * (self.upper.ln() - self.lower.ln())
    }
}

pub fn secant_hull<T: Scalar>(beta: T, lower: T, upper: T) -> Result<SecantHull<T>> {
    if !(lower > T::zero() && lower < upper) {
        return Err(Error::DegenerateBox(format!("interval [{lower}, {upper}]")));
    }
    Ok(SecantHull {
        beta,
        lower,
        upper,
        slope: beta * (upper.ln() - lower.ln()) / (upper - lower),
        intercept: beta * lower.ln(),
    })
}

/// Splits the longest edge at its midpoint.
pub fn branch<T: Scalar>(b: &SubBox<T>) -> Result<(SubBox<T>, SubBox<T>)> {
    let j = match b.longest_edge() {
        Some(j) if b.width(j) > T::zero() => j,
        _ => return Err(Error::DegenerateBox("no edge with positive width".into())),
    };
    let mid = b.lower[j] + b.width(j) * T::lit(0.5);
    let mut left = b.clone();
    let mut right = b.clone();
    left.upper[j] = mid;
    right.lower[j] = mid;
    Ok((left, right))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig<T> {
    pub epsilon: T,
    pub cost: CostConfig<T>,
    pub tolerances: CqpTolerances<T>,
    pub max_cqp_solves: usize,
    /// Boxes narrower than this fraction of `q_max - delta` in every
    /// coordinate are not split further.
    pub min_width_rel: T,
    pub commodity_mode: CommodityMode,
    /// Solve sibling nodes on two threads.
    pub parallel: bool,
}

impl<T: Scalar> Default for BnbConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(1e-3),
            cost: CostConfig::default(),
            tolerances: CqpTolerances::default(),
            max_cqp_solves: 10_000,
            min_width_rel: T::lit(1e-6),
            commodity_mode: CommodityMode::ByOrigin,
            parallel: true,
        }
    }
}

fn template<T: Scalar>(
    network: &Network<T>,
    demands: &DemandTable<T>,
    state: &StateVector,
    cfg: &CostConfig<T>,
    mode: CommodityMode,
) -> Result<QpProblem<T>> {
    state.check_len(network)?;
    cfg.validate(network)?;
    let mut p = QpProblem::new(network, commodities(demands, mode));
    for (l, s) in state.iter() {
        let k = network.link(l).params;
        let a = l.0;
        match s {
            LinkState::Uncongested => {
                p.quad[a] = k.alpha;
                p.linear[a] = k.t_free;
                p.upper[a] = k.q_cr;
            }
            LinkState::Congested => {
                p.linear[a] = k.gamma;
                p.lower[a] = cfg.delta;
                p.upper[a] = k.q_max;
            }
        }
    }
    Ok(p)
}

fn apply_box<T: Scalar>(
    p: &mut QpProblem<T>,
    network: &Network<T>,
    congested: &[LinkIdx],
    b: &SubBox<T>,
    cfg: &CostConfig<T>,
) -> Result<()> {
    if b.dim() != congested.len() {
        return Err(Error::Structure(format!(
            "box has {} coordinates for {} congested links",
            b.dim(),
            congested.len()
        )));
    }
    p.constant = T::zero();
    for (j, &l) in congested.iter().enumerate() {
        let k = network.link(l).params;
        let (lo, hi) = (b.lower[j], b.upper[j]);
        p.lower[l.0] = lo;
        p.upper[l.0] = hi;
        // gamma (x - delta) - beta ln(delta) + bar_y(x)
        let (slope, at_lo) = if hi > lo {
            let h = secant_hull(k.beta, lo, hi)?;
            (h.slope, h.intercept)
        } else {
            (T::zero(), k.beta * lo.ln())
        };
        p.linear[l.0] = k.gamma + slope;
        p.constant += at_lo - slope * lo - k.gamma * cfg.delta - k.beta * cfg.delta.ln();
    }
    Ok(())
}

/// Convex relaxation of the user-equilibrium problem over `b`; exact when
/// there are no congested links.
pub fn build_node_cqp<T: Scalar>(
    network: &Network<T>,
    demands: &DemandTable<T>,
    state: &StateVector,
    b: &SubBox<T>,
    config: &BnbConfig<T>,
) -> Result<QpProblem<T>> {
    let mut p = template(network, demands, state, &config.cost, config.commodity_mode)?;
    apply_box(&mut p, network, &state.congested(), b, &config.cost)?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFate {
    Live,
    Branched,
    Pruned,
    Infeasible,
    /// Too narrow to split; its relaxation value stays in the bound.
    Leaf,
    /// The QP solver stopped without converging.
    Unsolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord<T> {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Relaxation value.
    pub bound: Option<T>,
    /// Exact objective at the relaxation's minimizer.
    pub value: Option<T>,
    pub fate: NodeFate,
}

/// Bounds after iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub lower_bound: T,
    pub upper_bound: T,
    pub live: usize,
    pub cqp_solves: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent<T> {
    pub flows: FlowPattern<T>,
    /// Beckmann objective with integration from `delta` on congested links.
    pub objective: T,
    /// Same flows, zero integration constants.
    pub potential: T,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbRun<T> {
    pub status: BnbStatus,
    pub congested: Vec<LinkIdx>,
    pub incumbent: Option<Incumbent<T>>,
    pub upper_bound: T,
    pub lower_bound: T,
    pub iterations: usize,
    pub cqp_solves: usize,
    pub history: Vec<IterationRecord<T>>,
    pub nodes: Vec<NodeRecord<T>>,
    /// Boxes still open when the run stopped, with their bounds.
    pub live_set: Vec<(SubBox<T>, T)>,
    /// Node solves whose relaxation value exceeded the exact objective at the
    /// same point by more than solver tolerance.
    pub relaxation_violations: usize,
    pub worst_kkt: KktResidual<T>,
}

impl<T: Scalar> BnbRun<T> {
    pub fn gap(&self) -> T {
        self.upper_bound - self.lower_bound
    }

    pub fn objective(&self) -> Option<T> {
        self.incumbent.as_ref().map(|i| i.objective)
    }
}

struct Solved<T> {
    sol: QpSolution<T>,
    value: Option<(T, T)>,
}

struct Search<'a, T: Scalar> {
    network: &'a Network<T>,
    state: &'a StateVector,
    congested: Vec<LinkIdx>,
    base: QpProblem<T>,
    config: &'a BnbConfig<T>,
}

impl<T: Scalar> Search<'_, T> {
    fn solve(&self, b: &SubBox<T>, known_feasible: bool) -> Result<Solved<T>> {
        let mut p = self.base.clone();
        apply_box(&mut p, self.network, &self.congested, b, &self.config.cost)?;
        let sol = solve_cqp_with(&p, &self.config.tolerances, known_feasible)?;
        let value = if sol.status == QpStatus::Optimal {
            Some(self.evaluate(&p, &sol.flows)?)
        } else {
            None
        };
        Ok(Solved { sol, value })
    }

    /// Exact objective and potential, after snapping flows onto their bounds.
    fn evaluate(&self, p: &QpProblem<T>, flows: &FlowPattern<T>) -> Result<(T, T)> {
        let x: Vec<T> = flows
            .aggregate
            .iter()
            .enumerate()
            .map(|(a, &v)| v.max(p.lower[a]).min(p.upper[a]))
            .collect();
        Ok((
            ue_objective(self.network, self.state, &x, &self.config.cost)?,
            ue_potential(self.network, self.state, &x, &self.config.cost)?,
        ))
    }

    fn point(&self, flows: &FlowPattern<T>) -> Vec<T> {
        self.congested.iter().map(|l| flows.aggregate[l.0]).collect()
    }
}

fn kkt_max<T: Scalar>(a: KktResidual<T>, b: &KktResidual<T>) -> KktResidual<T> {
    KktResidual {
        primal_abs: a.primal_abs.max(b.primal_abs),
        stationarity_abs: a.stationarity_abs.max(b.stationarity_abs),
        complementarity_abs: a.complementarity_abs.max(b.complementarity_abs),
        primal: a.primal.max(b.primal),
        stationarity: a.stationarity.max(b.stationarity),
        complementarity: a.complementarity.max(b.complementarity),
    }
}

struct Open<T> {
    b: SubBox<T>,
    bound: T,
    node: usize,
    seq: usize,
    flows: FlowPattern<T>,
    /// The flows solve the node problem, so a child containing them may skip phase one.
    feasible: bool,
}

impl<T: Scalar> Solved<T> {
    /// Lower bound on the node problem, if the solve proved one.
    fn bound(&self) -> Option<T> {
        match self.sol.status {
            QpStatus::Optimal => Some(self.sol.objective),
            QpStatus::IterationLimit if self.sol.dual_bound.is_finite() => Some(self.sol.dual_bound),
            _ => None,
        }
    }
}

pub fn solve_uem_bnb<T: Scalar>(
    network: &Network<T>,
    demands: &DemandTable<T>,
    state: &StateVector,
    config: &BnbConfig<T>,
) -> Result<BnbRun<T>> {
    if !(config.epsilon > T::zero()) {
        return Err(Error::Input(format!("epsilon must be positive, got {}", config.epsilon)));
    }
    let search = Search {
        network,
        state,
        congested: state.congested(),
        base: template(network, demands, state, &config.cost, config.commodity_mode)?,
        config,
    };
    let root_box = SubBox::root(network, state, &config.cost);
    let min_width: Vec<T> = root_box
        .lower
        .iter()
        .zip(&root_box.upper)
        .map(|(&l, &u)| config.min_width_rel * (u - l))
        .collect();
    let slack = |v: T| T::lit(1e-6) * (T::one() + v.abs());

    let mut run = BnbRun {
        status: BnbStatus::Optimal,
        congested: search.congested.clone(),
        incumbent: None,
        upper_bound: T::infinity(),
        lower_bound: T::neg_infinity(),
        iterations: 0,
        cqp_solves: 0,
        history: Vec::new(),
        nodes: Vec::new(),
        live_set: Vec::new(),
        relaxation_violations: 0,
        worst_kkt: KktResidual::default(),
    };

    // Bookkeeping shared by every solve: node log, incumbent, counters.
    let record = |run: &mut BnbRun<T>, b: &SubBox<T>, parent: Option<usize>, depth: usize, s: &Solved<T>| -> usize {
        run.cqp_solves += 1;
        let id = run.nodes.len();
        let mut rec = NodeRecord {
            id,
            parent,
            depth,
            lower: b.lower.clone(),
            upper: b.upper.clone(),
            bound: None,
            value: None,
            fate: match s.sol.status {
                QpStatus::Infeasible => NodeFate::Infeasible,
                _ if s.bound().is_some() => NodeFate::Live,
                _ => NodeFate::Unsolved,
            },
        };
        rec.bound = s.bound();
        if let Some((value, potential)) = s.value {
            run.worst_kkt = kkt_max(run.worst_kkt, &s.sol.kkt);
            rec.value = Some(value);
            if s.sol.objective > value + slack(value) {
                run.relaxation_violations += 1;
            }
            if value < run.upper_bound {
                run.upper_bound = value;
                run.incumbent = Some(Incumbent {
                    flows: s.sol.flows.clone(),
                    objective: value,
                    potential,
                    node: id,
                });
            }
        }
        run.nodes.push(rec);
        id
    };

    let root = search.solve(&root_box, false)?;
    let root_id = record(&mut run, &root_box, None, 0, &root);
    let root_bound = match (root.sol.status, root.bound()) {
        (QpStatus::Infeasible, _) => {
            run.status = BnbStatus::Infeasible;
            return Ok(run);
        }
        (_, None) => {
            run.status = BnbStatus::IterationLimit;
            return Ok(run);
        }
        (_, Some(b)) => b,
    };

    let mut seq = 0;
    let mut open = vec![Open {
        b: root_box,
        bound: root_bound,
        node: root_id,
        seq,
        feasible: root.sol.status == QpStatus::Optimal,
        flows: root.sol.flows,
    }];
    // bounds of boxes already closed as leaves or pruned
    let mut closed_bound = T::infinity();
    let mut bound_floor = T::neg_infinity();
    let mut history_bound = |open: &[Open<T>], closed: T, ub: T| -> T {
        let live = open.iter().map(|o| o.bound).fold(T::infinity(), T::min);
        let lb = live.min(closed).min(ub);
        // never report a weaker bound than already proven
        bound_floor = bound_floor.max(lb.min(ub));
        bound_floor
    };
    run.history.push(IterationRecord {
        iteration: 0,
        lower_bound: history_bound(&open, closed_bound, run.upper_bound),
        upper_bound: run.upper_bound,
        live: open.len(),
        cqp_solves: run.cqp_solves,
    });

    while !open.is_empty() {
        // best first, FIFO among equal bounds
        let pick = (0..open.len())
            .min_by(|&i, &j| {
                open[i]
                    .bound
                    .partial_cmp(&open[j].bound)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(open[i].seq.cmp(&open[j].seq))
            })
            .expect("open set is non-empty");
        if open[pick].bound > run.upper_bound - config.epsilon {
            for o in open.drain(..) {
                run.nodes[o.node].fate = NodeFate::Pruned;
                closed_bound = closed_bound.min(o.bound);
            }
            break;
        }
        if run.cqp_solves + 2 > config.max_cqp_solves {
            run.status = BnbStatus::IterationLimit;
            break;
        }
        let cur = open.swap_remove(pick);
        run.iterations += 1;
        let splittable = (0..cur.b.dim()).any(|j| cur.b.width(j) > min_width[j]);
        if !splittable {
            run.nodes[cur.node].fate = NodeFate::Leaf;
            closed_bound = closed_bound.min(cur.bound);
        } else {
            run.nodes[cur.node].fate = NodeFate::Branched;
            let (left, right) = branch(&cur.b)?;
            let at = search.point(&cur.flows);
            let (lf, rf) = (cur.feasible && left.contains(&at), cur.feasible && right.contains(&at));
            let depth = run.nodes[cur.node].depth + 1;
            let (ls, rs) = if config.parallel {
                rayon::join(|| search.solve(&left, lf), || search.solve(&right, rf && !lf))
            } else {
                (search.solve(&left, lf), search.solve(&right, rf && !lf))
            };
            for (child, solved) in [(left, ls?), (right, rs?)] {
                let id = record(&mut run, &child, Some(cur.node), depth, &solved);
                let Some(own) = solved.bound() else {
                    if solved.sol.status == QpStatus::IterationLimit {
                        // not a proof of anything: keep the parent's bound
                        closed_bound = closed_bound.min(cur.bound);
                    }
                    continue;
                };
                let bound = own.max(cur.bound);
                run.nodes[id].bound = Some(bound);
                seq += 1;
                open.push(Open {
                    b: child,
                    bound,
                    node: id,
                    seq,
                    feasible: solved.sol.status == QpStatus::Optimal,
                    flows: solved.sol.flows,
                });
            }
            // prune against the possibly improved incumbent
            let ub = run.upper_bound;
            open.retain(|o| {
                let keep = o.bound <= ub - config.epsilon;
                if !keep {
                    run.nodes[o.node].fate = NodeFate::Pruned;
                    closed_bound = closed_bound.min(o.bound);
                }
                keep
            });
        }
        run.history.push(IterationRecord {
            iteration: run.iterations,
            lower_bound: history_bound(&open, closed_bound, run.upper_bound),
            upper_bound: run.upper_bound,
            live: open.len(),
            cqp_solves: run.cqp_solves,
        });
    }

    run.lower_bound = run.history.last().map_or(T::neg_infinity(), |h| h.lower_bound);
    run.live_set = open.into_iter().map(|o| (o.b, o.bound)).collect();
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomResult<T> {
    pub status: QpStatus,
    pub flows: FlowPattern<T>,
    /// Total travel time.
    pub objective: T,
    pub kkt: KktResidual<T>,
    pub iterations: usize,
}

/// System optimum: a single convex QP for any state vector.
pub fn solve_som<T: Scalar>(
    network: &Network<T>,
    demands: &DemandTable<T>,
    state: &StateVector,
    config: &BnbConfig<T>,
) -> Result<SomResult<T>> {
    let mut p = template(network, demands, state, &config.cost, config.commodity_mode)?;
    for (l, s) in state.iter() {
        let k = network.link(l).params;
        match s {
            LinkState::Uncongested => p.quad[l.0] = T::lit(2.0) * k.alpha,
            LinkState::Congested => p.constant += k.beta,
        }
    }
    let sol = solve_cqp_with(&p, &config.tolerances, false)?;
    Ok(SomResult {
        status: sol.status,
        flows: sol.flows,
        objective: sol.objective,
        kkt: sol.kkt,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fdgen::LinkParams;
    use crate::network::{build_network, LinkSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn link(id: &str, tail: &str, head: &str, params: LinkParams<f64>) -> LinkSpec<f64> {
        LinkSpec {
            id: id.into(),
            tail: tail.into(),
            head: head.into(),
            length: 1.0,
            params,
        }
    }

    pub(crate) fn free_link() -> LinkParams<f64> {
        LinkParams {
            alpha: 1e-5,
            beta: 240.0,
            gamma: -0.1,
            t_free: 0.025,
            q_max: 1600.0,
            q_cr: 1680.0,
        }
    }

    /// Two parallel links o -> d, the second congested.
    pub(crate) fn two_link() -> (Network<f64>, DemandTable<f64>, StateVector) {
        let net = build_network(
            ["o", "d"],
            vec![link("1", "o", "d", free_link()), link("2", "o", "d", free_link())],
        )
        .unwrap();
        let dem = DemandTable::new(&net, [("o", "d", 1000.0)]).unwrap();
        let state = StateVector::with_congested(&net, &[LinkIdx(1)]);
        (net, dem, state)
    }

    #[test]
    fn chord_arithmetic() {
        let h = secant_hull(240.0, 60.0, 1600.0).unwrap();
        assert_relative_eq!(h.slope, 0.51170, epsilon = 1e-5);
        assert_relative_eq!(h.eval(60.0), 240.0 * 60f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(h.eval(60.0), 982.64, epsilon = 5e-3);
        assert_relative_eq!(h.eval(1600.0), 1770.66, epsilon = 5e-3);
        let z = secant_hull(0.0, 60.0, 1600.0).unwrap();
        assert_eq!((z.slope, z.intercept), (0.0, 0.0));
        assert!(matches!(secant_hull(240.0, 5.0, 5.0), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn splits_longest_edge() {
        let (l, r) = branch(&SubBox::new(vec![60.0], vec![1600.0]).unwrap()).unwrap();
        assert_eq!((l.upper[0], r.lower[0]), (830.0, 830.0));
        let (l, _) = branch(&SubBox::new(vec![60.0, 60.0], vec![1600.0, 200.0]).unwrap()).unwrap();
        assert_eq!(l.upper, vec![830.0, 200.0]);
        let (l, _) = branch(&SubBox::new(vec![60.0, 60.0], vec![1000.0, 1000.0]).unwrap()).unwrap();
        assert_eq!(l.upper, vec![530.0, 1000.0]);
        assert!(branch(&SubBox::new(vec![5.0], vec![5.0]).unwrap()).is_err());
    }

    #[test]
    fn node_cqp_dimension_mismatch() {
        let (net, dem, state) = two_link();
        let b = SubBox::new(vec![], vec![]).unwrap();
        assert!(matches!(
            build_node_cqp(&net, &dem, &state, &b, &BnbConfig::default()),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn relaxation_underestimates_on_root_box() {
        let (net, dem, state) = two_link();
        let cfg = BnbConfig::default();
        let root = SubBox::root(&net, &state, &cfg.cost);
        let p = build_node_cqp(&net, &dem, &state, &root, &cfg).unwrap();
        for i in 0..=940 {
            let x = [1000.0 - 60.0 - i as f64, 60.0 + i as f64];
            let exact = ue_objective(&net, &state, &x, &cfg.cost).unwrap();
            assert!(p.objective_at(&x) <= exact + 1e-9);
        }
    }

    #[test]
    fn two_link_boundary_optimum() {
        let (net, dem, state) = two_link();
        let run = solve_uem_bnb(&net, &dem, &state, &BnbConfig::default()).unwrap();
        assert_eq!(run.status, BnbStatus::Optimal);
        let inc = run.incumbent.as_ref().unwrap();
        assert_relative_eq!(inc.flows.aggregate[0], 940.0, epsilon = 1e-3);
        assert_relative_eq!(inc.objective, 27.918, epsilon = 1e-3);
        assert!(run.gap() <= 1e-3);
        assert_eq!(run.relaxation_violations, 0);
    }

    #[test]
    fn convex_case_is_one_solve() {
        let (net, dem, _) = two_link();
        let state = StateVector::all_uncongested(2);
        let run = solve_uem_bnb(&net, &dem, &state, &BnbConfig::default()).unwrap();
        assert_eq!((run.status, run.cqp_solves, run.iterations), (BnbStatus::Optimal, 1, 0));
        assert!(run.gap().abs() <= 1e-9);
    }

    #[test]
    fn overload_is_infeasible() {
        let net = build_network(["o", "d"], vec![link("1", "o", "d", free_link())]).unwrap();
        let dem = DemandTable::new(&net, [("o", "d", 1700.0)]).unwrap();
        let state = StateVector::with_congested(&net, &[LinkIdx(0)]);
        let run = solve_uem_bnb(&net, &dem, &state, &BnbConfig::default()).unwrap();
        assert_eq!(run.status, BnbStatus::Infeasible);
        assert!(run.incumbent.is_none());
    }

    #[test]
    fn non_positive_epsilon_rejected() {
        let (net, dem, state) = two_link();
        let cfg = BnbConfig { epsilon: 0.0, ..Default::default() };
        assert!(matches!(solve_uem_bnb(&net, &dem, &state, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn budget_is_reported() {
        let (net, dem, _) = two_link();
        let state = StateVector::with_congested(&net, &[LinkIdx(0), LinkIdx(1)]);
        let cfg = BnbConfig { max_cqp_solves: 2, ..Default::default() };
        let run = solve_uem_bnb(&net, &dem, &state, &cfg).unwrap();
        assert_eq!(run.status, BnbStatus::IterationLimit);
        assert!(run.incumbent.is_some());
        assert!(!run.live_set.is_empty());
    }

    #[test]
    fn som_marginal_costs_equalize() {
        let mut p2 = free_link();
        p2.t_free = 0.03;
        p2.alpha = 2e-5;
        let net = build_network(["o", "d"], vec![link("1", "o", "d", free_link()), link("2", "o", "d", p2)]).unwrap();
        let dem = DemandTable::new(&net, [("o", "d", 600.0)]).unwrap();
        let s = solve_som(&net, &dem, &StateVector::all_uncongested(2), &BnbConfig::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.flows.aggregate[0], 483.333333, epsilon = 1e-4);
        assert_relative_eq!(s.flows.aggregate[1], 116.666667, epsilon = 1e-4);

        let zero = DemandTable::new(&net, [("o", "d", 0.0)]).unwrap();
        let s = solve_som(&net, &zero, &StateVector::all_uncongested(2), &BnbConfig::default()).unwrap();
        assert!(s.objective.abs() < 1e-8 && s.flows.aggregate.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn som_forced_congested_flow() {
        let net = build_network(["o", "d"], vec![link("1", "o", "d", free_link())]).unwrap();
        let dem = DemandTable::new(&net, [("o", "d", 900.0)]).unwrap();
        let s = solve_som(&net, &dem, &StateVector::with_congested(&net, &[LinkIdx(0)]), &BnbConfig::default()).unwrap();
        assert_relative_eq!(s.objective, -0.1 * 900.0 + 240.0, epsilon = 1e-6);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (net, dem, _) = two_link();
        let state = StateVector::with_congested(&net, &[LinkIdx(0), LinkIdx(1)]);
        let a = solve_uem_bnb(&net, &dem, &state, &BnbConfig::default()).unwrap();
        let b = solve_uem_bnb(&net, &dem, &state, &BnbConfig { parallel: false, ..Default::default() }).unwrap();
        assert_eq!(a.objective(), b.objective());
        assert_eq!(a.cqp_solves, b.cqp_solves);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hull_dominance(beta in 0.0..500.0f64, lo in 1.0..1000.0f64, w in 1e-3..2000.0f64, t in 0.0..=1.0f64) {
            let hi = lo + w;
            let h = secant_hull(beta, lo, hi).unwrap();
            let x = lo + t * w;
            let d = beta * x.ln() - h.eval(x);
            let scale = 1e-12 * (1.0 + beta * hi.ln());
            prop_assert!(d >= -scale);
            prop_assert!(d <= h.gap_bound() + scale);
        }
    }
}
