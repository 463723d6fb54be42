//! Machine-readable run reports.

use serde::{Deserialize, Serialize};

use super::SCHEMA_VERSION;
use crate::bnb::{BnbConfig, BnbRun, BnbStatus, IterationRecord, NodeRecord};
use crate::cost::{travel_time, CostConfig};
use crate::evolution::{EvolutionConfig, EvolutionLevel, EvolutionReport, Model, Scenario, ScenarioStatus, Verdict};
use crate::network::{FlowPattern, Network, StateVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub model: Model,
    pub epsilon: f64,
    pub delta_veh_hr: f64,
    pub bottleneck_tol: f64,
    pub max_cqp_solves: usize,
    pub seed: Option<u64>,
}

impl ResolvedConfig {
    pub fn new<T: Scalar>(model: Model, bnb: &BnbConfig<T>, bottleneck_tol: T) -> Self {
        Self {
            model,
            epsilon: bnb.epsilon.to_f64_lossy(),
            delta_veh_hr: bnb.cost.delta.to_f64_lossy(),
            bottleneck_tol: bottleneck_tol.to_f64_lossy(),
            max_cqp_solves: bnb.max_cqp_solves,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkReport {
    pub id: String,
    pub tail: String,
    pub head: String,
    pub state: u8,
    pub flow_veh_hr: f64,
    pub travel_time_hr: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t_free_hr: f64,
    pub q_max_veh_hr: f64,
    pub q_cr_veh_hr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnbSummary {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub cqp_solves: usize,
    pub relaxation_violations: usize,
    pub max_kkt_relative: f64,
    pub history: Vec<IterationRecord<f64>>,
    pub nodes: Vec<NodeRecord<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelReport {
    pub index: usize,
    pub status: ScenarioStatus,
    pub objective: Option<f64>,
    pub potential: Option<f64>,
    pub gap: Option<f64>,
    pub cqp_solves: usize,
    pub bottleneck: Vec<String>,
    pub zone: Vec<String>,
    pub links: Vec<LinkReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub version: String,
    pub generated_unix_s: u64,
}

impl Meta {
    pub fn now() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            generated_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub network: Option<String>,
    pub config: ResolvedConfig,
    /// `optimal`, `infeasible` or `iteration_limit`; for evolution runs the verdict.
    pub status: String,
    /// Model objective: Beckmann integral from `delta` (UE) or total travel time (SO).
    pub objective: Option<f64>,
    /// Beckmann potential with zero integration constants.
    pub potential: Option<f64>,
    pub links: Vec<LinkReport>,
    pub bnb: Option<BnbSummary>,
    pub verdict: Option<Verdict>,
    pub levels: Vec<LevelReport>,
    pub meta: Option<Meta>,
}

fn f<T: Scalar>(v: T) -> f64 {
    v.to_f64_lossy()
}

fn link_reports<T: Scalar>(
    network: &Network<T>,
    state: &StateVector,
    flows: Option<&FlowPattern<T>>,
    cost: &CostConfig<T>,
) -> Vec<LinkReport> {
    network
        .links()
        .iter()
        .zip(state.iter())
        .map(|(l, (idx, s))| {
            let x = flows.map_or(T::zero(), |fl| fl.aggregate[idx.0]);
            let p = &l.params;
            LinkReport {
                id: l.id.clone(),
                tail: network.node_id(l.tail).to_string(),
                head: network.node_id(l.head).to_string(),
                state: s.indicator(),
                flow_veh_hr: f(x),
                travel_time_hr: flows.and_then(|_| travel_time(l, s, x, cost).ok()).map(f),
                alpha: f(p.alpha),
                beta: f(p.beta),
                gamma: f(p.gamma),
                t_free_hr: f(p.t_free),
                q_max_veh_hr: f(p.q_max),
                q_cr_veh_hr: f(p.q_cr),
            }
        })
        .collect()
}

fn ids<T: Scalar>(network: &Network<T>, links: &[crate::network::LinkIdx]) -> Vec<String> {
    links.iter().map(|&l| network.link(l).id.clone()).collect()
}

fn bnb_status(s: BnbStatus) -> &'static str {
    match s {
        BnbStatus::Optimal => "optimal",
        BnbStatus::Infeasible => "infeasible",
        BnbStatus::IterationLimit => "iteration_limit",
    }
}

fn convert_record<T: Scalar>(r: &IterationRecord<T>) -> IterationRecord<f64> {
    IterationRecord {
        iteration: r.iteration,
        lower_bound: f(r.lower_bound),
        upper_bound: f(r.upper_bound),
        live: r.live,
        cqp_solves: r.cqp_solves,
    }
}

fn convert_node<T: Scalar>(n: &NodeRecord<T>) -> NodeRecord<f64> {
    NodeRecord {
        id: n.id,
        parent: n.parent,
        depth: n.depth,
        lower: n.lower.iter().map(|&v| f(v)).collect(),
        upper: n.upper.iter().map(|&v| f(v)).collect(),
        bound: n.bound.map(f),
        value: n.value.map(f),
        fate: n.fate,
    }
}

impl RunReport {
    fn empty(command: &str, network: Option<String>, config: ResolvedConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            network,
            config,
            status: String::new(),
            objective: None,
            potential: None,
            links: Vec::new(),
            bnb: None,
            verdict: None,
            levels: Vec::new(),
            meta: None,
        }
    }

    pub fn from_bnb<T: Scalar>(
        network: &Network<T>,
        name: Option<String>,
        state: &StateVector,
        run: &BnbRun<T>,
        config: ResolvedConfig,
        cost: &CostConfig<T>,
    ) -> Self {
        let mut r = Self::empty("assign", name, config);
        r.status = bnb_status(run.status).into();
        r.objective = run.incumbent.as_ref().map(|i| f(i.objective));
        r.potential = run.incumbent.as_ref().map(|i| f(i.potential));
        r.links = link_reports(network, state, run.incumbent.as_ref().map(|i| &i.flows), cost);
        if run.status != BnbStatus::Infeasible {
            r.bnb = Some(BnbSummary {
                lower_bound: f(run.lower_bound),
                upper_bound: f(run.upper_bound),
                gap: f(run.gap()),
                iterations: run.iterations,
                cqp_solves: run.cqp_solves,
                relaxation_violations: run.relaxation_violations,
                max_kkt_relative: f(run.worst_kkt.max_relative()),
                history: run.history.iter().map(convert_record).collect(),
                nodes: run.nodes.iter().map(convert_node).collect(),
            });
        }
        r
    }

    /// Report of one scenario solved without a search tree (system optimum).
    pub fn from_scenario<T: Scalar>(
        network: &Network<T>,
        name: Option<String>,
        state: &StateVector,
        scenario: &Scenario<T>,
        config: ResolvedConfig,
        cost: &CostConfig<T>,
    ) -> Self {
        let mut r = Self::empty("assign", name, config);
        r.status = match scenario.status {
            ScenarioStatus::Solved => "optimal",
            ScenarioStatus::Infeasible => "infeasible",
            ScenarioStatus::BudgetExhausted => "iteration_limit",
        }
        .into();
        r.objective = scenario.objective.map(f);
        r.potential = scenario.potential.map(f);
        r.links = link_reports(network, state, scenario.flows.as_ref(), cost);
        r
    }

    pub fn from_evolution<T: Scalar>(
        network: &Network<T>,
        name: Option<String>,
        report: &EvolutionReport<T>,
        config: &EvolutionConfig<T>,
    ) -> Self {
        let cfg = ResolvedConfig::new(config.model, &config.bnb, config.bottleneck_tol);
        let mut r = Self::empty("evolve", name, cfg);
        r.status = report.verdict.to_string();
        r.verdict = Some(report.verdict);
        r.levels = report
            .levels
            .iter()
            .map(|l: &EvolutionLevel<T>| LevelReport {
                index: l.index,
                status: l.status,
                objective: l.objective.map(f),
                potential: l.potential.map(f),
                gap: l.gap.map(f),
                cqp_solves: l.cqp_solves,
                bottleneck: ids(network, &l.bottleneck),
                zone: ids(network, &l.zone),
                links: link_reports(network, &l.state, l.flows.as_ref(), &config.bnb.cost),
            })
            .collect();
        if let Some(last) = report.levels.iter().rev().find(|l| l.flows.is_some()) {
            r.objective = last.objective.map(f);
            r.potential = last.potential.map(f);
            r.links = link_reports(network, &last.state, last.flows.as_ref(), &config.bnb.cost);
        }
        r
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Input(format!("run report: {e}")))
    }
}
