//! Congestion evolution: assign, find links that reached critical flow, move
//! them to the congested branch and assign again until nothing changes or
//! the demand can no longer be carried.

use serde::{Deserialize, Serialize};

use crate::bnb::{solve_som, solve_uem_bnb, BnbConfig, BnbStatus};
use crate::cost::{so_objective, ue_potential};
use crate::cqp::QpStatus;
use crate::error::Result;
use crate::network::{DemandTable, FlowPattern, LinkIdx, LinkState, Network, StateVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// User equilibrium.
    #[default]
    Ue,
    /// System optimum.
    So,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Ue => "ue",
            Model::So => "so",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig<T> {
    pub model: Model,
    pub bnb: BnbConfig<T>,
    /// Relative distance to `q_cr` at which an uncongested link is a bottleneck.
    pub bottleneck_tol: T,
}

impl<T: Scalar> Default for EvolutionConfig<T> {
    fn default() -> Self {
        Self {
            model: Model::Ue,
            bnb: BnbConfig::default(),
            bottleneck_tol: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Solved,
    Infeasible,
    BudgetExhausted,
}

/// One assignment under a fixed state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionLevel<T> {
    /// 1-based scenario number.
    pub index: usize,
    pub state: StateVector,
    pub status: ScenarioStatus,
    pub flows: Option<FlowPattern<T>>,
    /// Model objective of the flows (Beckmann from `delta`, or total travel time).
    pub objective: Option<T>,
    /// User-equilibrium potential with zero integration constants.
    pub potential: Option<T>,
    /// Links newly at critical flow.
    pub bottleneck: Vec<LinkIdx>,
    /// Congested zone after this level: every bottleneck so far.
    pub zone: Vec<LinkIdx>,
    pub cqp_solves: usize,
    pub gap: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Verdict {
    /// No link reached critical flow in the first scenario.
    TotallyUncongested,
    /// Scenario `n + 1` produced no new bottleneck.
    FinalCongestion(usize),
    /// Scenario `i` is infeasible.
    Disabled(usize),
    /// The solver budget ran out in scenario `i`; the report is partial.
    BudgetExhausted(usize),
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::TotallyUncongested => write!(f, "totally_uncongested"),
            Verdict::FinalCongestion(n) => write!(f, "final_congestion({n})"),
            Verdict::Disabled(i) => write!(f, "disabled({i})"),
            Verdict::BudgetExhausted(i) => write!(f, "budget_exhausted({i})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionReport<T> {
    pub levels: Vec<EvolutionLevel<T>>,
    pub verdict: Verdict,
}

/// Uncongested links within `tolerance * q_cr` of critical flow.
pub fn detect_bottleneck<T: Scalar>(
    network: &Network<T>,
    state: &StateVector,
    flows: &[T],
    tolerance: T,
) -> Vec<LinkIdx> {
    state
        .iter()
        .filter(|&(l, s)| {
            let q_cr = network.link(l).params.q_cr;
            s == LinkState::Uncongested && (flows[l.0] - q_cr).abs() <= tolerance * q_cr
        })
        .map(|(l, _)| l)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub status: ScenarioStatus,
    pub flows: Option<FlowPattern<T>>,
    pub objective: Option<T>,
    pub potential: Option<T>,
    pub cqp_solves: usize,
    pub gap: Option<T>,
}

/// Solves one scenario with the chosen model.
pub fn assign_scenario<T: Scalar>(
    network: &Network<T>,
    demands: &DemandTable<T>,
    state: &StateVector,
    config: &EvolutionConfig<T>,
) -> Result<Scenario<T>> {
    let cost = &config.bnb.cost;
    match config.model {
        Model::Ue => {
            let run = solve_uem_bnb(network, demands, state, &config.bnb)?;
            let status = match run.status {
                BnbStatus::Optimal => ScenarioStatus::Solved,
                BnbStatus::Infeasible => ScenarioStatus::Infeasible,
                BnbStatus::IterationLimit => ScenarioStatus::BudgetExhausted,
            };
            let gap = run.incumbent.as_ref().map(|_| run.gap());
            let inc = run.incumbent;
            Ok(Scenario {
                status,
                objective: inc.as_ref().map(|i| i.objective),
                potential: inc.as_ref().map(|i| i.potential),
                flows: inc.map(|i| i.flows),
                cqp_solves: run.cqp_solves,
                gap,
            })
        }
        Model::So => {
            let s = solve_som(network, demands, state, &config.bnb)?;
            let status = match s.status {
                QpStatus::Optimal => ScenarioStatus::Solved,
                QpStatus::Infeasible => ScenarioStatus::Infeasible,
                QpStatus::IterationLimit => ScenarioStatus::BudgetExhausted,
            };
            if status == ScenarioStatus::Infeasible {
                return Ok(Scenario {
                    status,
                    flows: None,
                    objective: None,
                    potential: None,
                    cqp_solves: 1,
                    gap: None,
                });
            }
            let x: Vec<T> = clamp_to_state(network, state, &s.flows.aggregate, cost.delta);
            let obj = so_objective(network, state, &x, cost)?;
            let pot = ue_potential(network, state, &x, cost)?;
            Ok(Scenario {
                status,
                flows: Some(s.flows),
                objective: Some(obj),
                potential: Some(pot),
                cqp_solves: 1,
                gap: Some(T::zero()),
            })
        }
    }
}

fn clamp_to_state<T: Scalar>(network: &Network<T>, state: &StateVector, x: &[T], delta: T) -> Vec<T> {
    state
        .iter()
        .map(|(l, s)| {
            let p = network.link(l).params;
            match s {
                LinkState::Uncongested => x[l.0].max(T::zero()).min(p.q_cr),
                LinkState::Congested => x[l.0].max(delta).min(p.q_max),
            }
        })
        .collect()
}

pub fn evolve<T: Scalar>(
    network: &Network<T>,
    demands: &DemandTable<T>,
    config: &EvolutionConfig<T>,
) -> Result<EvolutionReport<T>> {
    let mut state = StateVector::all_uncongested(network.num_links());
    let mut zone: Vec<LinkIdx> = Vec::new();
    let mut levels = Vec::new();
    // the zone grows by at least one link per level
    for index in 1..=network.num_links() + 1 {
        let Scenario {
            status,
            flows,
            objective,
            potential,
            cqp_solves,
            gap,
        } = assign_scenario(network, demands, &state, config)?;
        let bottleneck = match (&flows, status) {
            (Some(f), ScenarioStatus::Solved) => detect_bottleneck(network, &state, &f.aggregate, config.bottleneck_tol),
            _ => Vec::new(),
        };
        let mut next_zone = zone.clone();
        next_zone.extend(&bottleneck);
        next_zone.sort();
        levels.push(EvolutionLevel {
            index,
            state: state.clone(),
            status,
            flows,
            objective,
            potential,
            bottleneck: bottleneck.clone(),
            zone: next_zone.clone(),
            cqp_solves,
            gap,
        });
        let verdict = match status {
            ScenarioStatus::Infeasible => Some(Verdict::Disabled(index)),
            ScenarioStatus::BudgetExhausted => Some(Verdict::BudgetExhausted(index)),
            ScenarioStatus::Solved if bottleneck.is_empty() => Some(if index == 1 {
                Verdict::TotallyUncongested
            } else {
                Verdict::FinalCongestion(index - 1)
            }),
            ScenarioStatus::Solved => None,
        };
        if let Some(verdict) = verdict {
            return Ok(EvolutionReport { levels, verdict });
        }
        for &l in &bottleneck {
            state.set(l, LinkState::Congested);
        }
        zone = next_zone;
    }
    unreachable!("every level adds a link to the congested zone")
}
