//! Two-branch travel-time functions and the system-optimum / user-equilibrium
//! objectives over a fixed state vector.
//!
//! Time is in hours and flow in veh/hr. Closed-form antiderivatives are used
//! everywhere; branch endpoints are legal and never switch branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Link, LinkState, Network, StateVector};
use crate::scalar::Scalar;

/// Lower flow bound `delta` for congested links, veh/hr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig<T> {
    pub delta: T,
}

impl<T: Scalar> Default for CostConfig<T> {
    fn default() -> Self {
        Self { delta: T::lit(60.0) }
    }
}

impl<T: Scalar> CostConfig<T> {
    pub fn new(delta: T) -> Self {
        Self { delta }
    }

    /// `0 < delta < min q_max`.
    pub fn validate(&self, network: &Network<T>) -> Result<()> {
        let ok = self.delta > T::zero() && network.min_q_max().is_none_or(|q| self.delta < q);
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "congested lower bound {} must lie in (0, min q_max)",
                self.delta
            )))
        }
    }
}

fn domain<T: Scalar>(link: &Link<T>, x: T, lower: T, upper: T) -> Error {
    Error::Domain {
        link: link.id.clone(),
        flow: x.to_f64_lossy(),
        lower: lower.to_f64_lossy(),
        upper: upper.to_f64_lossy(),
    }
}

/// `t_free + alpha * x` on `[0, q_cr]`.
pub fn tt_uncongested<T: Scalar>(link: &Link<T>, x: T) -> Result<T> {
    let p = &link.params;
    if !(x >= T::zero() && x <= p.q_cr) {
        return Err(domain(link, x, T::zero(), p.q_cr));
    }
    Ok(p.t_free + p.alpha * x)
}

/// `gamma + beta / x` on `[delta, q_max]`.
pub fn tt_congested<T: Scalar>(link: &Link<T>, x: T, cfg: &CostConfig<T>) -> Result<T> {
    let p = &link.params;
    if !(x >= cfg.delta && x <= p.q_max) {
        return Err(domain(link, x, cfg.delta, p.q_max));
    }
    Ok(p.gamma + p.beta / x)
}

/// Travel time of the branch selected by `state`.
pub fn travel_time<T: Scalar>(link: &Link<T>, state: LinkState, x: T, cfg: &CostConfig<T>) -> Result<T> {
    match state {
        LinkState::Uncongested => tt_uncongested(link, x),
        LinkState::Congested => tt_congested(link, x, cfg),
    }
}

fn check_dims<T: Scalar>(network: &Network<T>, state: &StateVector, flows: &[T]) -> Result<()> {
    state.check_len(network)?;
    if flows.len() != network.num_links() {
        return Err(Error::Structure(format!(
            "{} flows for {} links",
            flows.len(),
            network.num_links()
        )));
    }
    Ok(())
}

/// Total travel time `sum_a x_a t_a(x_a)`. Congested terms reduce to `gamma x + beta`.
pub fn so_objective<T: Scalar>(
    network: &Network<T>,
    state: &StateVector,
    flows: &[T],
    cfg: &CostConfig<T>,
) -> Result<T> {
    check_dims(network, state, flows)?;
    let mut total = T::zero();
    for ((_, s), (link, &x)) in state.iter().zip(network.links().iter().zip(flows)) {
        let p = &link.params;
        total += match s {
            LinkState::Uncongested => x * tt_uncongested(link, x)?,
            LinkState::Congested => {
                tt_congested(link, x, cfg)?;
                p.gamma * x + p.beta
            }
        };
    }
    Ok(total)
}

/// Beckmann objective: each link integrates its active branch from
/// `(1 - delta_a) * delta` to `x_a`.
///
/// Uncongested: `t_free x + alpha x^2 / 2`.
/// Congested: `gamma (x - delta) + beta ln(x / delta)`.
pub fn ue_objective<T: Scalar>(
    network: &Network<T>,
    state: &StateVector,
    flows: &[T],
    cfg: &CostConfig<T>,
) -> Result<T> {
    check_dims(network, state, flows)?;
    let half = T::lit(0.5);
    let mut total = T::zero();
    for ((_, s), (link, &x)) in state.iter().zip(network.links().iter().zip(flows)) {
        let p = &link.params;
        total += match s {
            LinkState::Uncongested => {
                tt_uncongested(link, x)?;
                p.t_free * x + half * p.alpha * x * x
            }
            LinkState::Congested => {
                tt_congested(link, x, cfg)?;
                p.gamma * (x - cfg.delta) + p.beta * (x / cfg.delta).ln()
            }
        };
    }
    Ok(total)
}

/// Constant `sum over congested links of gamma delta + beta ln(delta)`.
pub fn ue_anchor_offset<T: Scalar>(network: &Network<T>, state: &StateVector, cfg: &CostConfig<T>) -> T {
    state
        .congested()
        .into_iter()
        .map(|l| {
            let p = &network.link(l).params;
            p.gamma * cfg.delta + p.beta * cfg.delta.ln()
        })
        .sum()
}

/// Beckmann potential with zero integration constants: congested terms are
/// `gamma x + beta ln x`. Equals [`ue_objective`] plus [`ue_anchor_offset`];
/// this is the convention in which published objective tables report values.
pub fn ue_potential<T: Scalar>(
    network: &Network<T>,
    state: &StateVector,
    flows: &[T],
    cfg: &CostConfig<T>,
) -> Result<T> {
    Ok(ue_objective(network, state, flows, cfg)? + ue_anchor_offset(network, state, cfg))
}
