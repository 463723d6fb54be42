//! Directed network, demand table and flow containers.
//!
//! Node and link identifiers are opaque strings at the boundary and dense
//! indices inside. The index of a node or link is its position in declaration
//! order, so the mapping is stable across runs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgen::LinkParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkIdx(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Link<T> {
    pub id: String,
    pub tail: NodeIdx,
    pub head: NodeIdx,
    /// Length in km.
    pub length: T,
    pub params: LinkParams<T>,
}

/// Link description in terms of external node identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec<T> {
    pub id: String,
    pub tail: String,
    pub head: String,
    pub length: T,
    pub params: LinkParams<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    node_ids: Vec<String>,
    node_index: HashMap<String, NodeIdx>,
    links: Vec<Link<T>>,
    link_index: HashMap<String, LinkIdx>,
    inbound: Vec<Vec<LinkIdx>>,
    outbound: Vec<Vec<LinkIdx>>,
}

/// Validates topology and builds the incidence lists.
pub fn build_network<T, I, S>(nodes: I, links: Vec<LinkSpec<T>>) -> Result<Network<T>>
where
    T: Scalar,
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut node_ids = Vec::new();
    let mut node_index = HashMap::new();
    for id in nodes {
        let id = id.into();
        if node_index.insert(id.clone(), NodeIdx(node_ids.len())).is_some() {
            return Err(Error::Structure(format!("duplicate node id `{id}`")));
        }
        node_ids.push(id);
    }

    let mut built = Vec::with_capacity(links.len());
    let mut link_index = HashMap::new();
    let mut inbound = vec![Vec::new(); node_ids.len()];
    let mut outbound = vec![Vec::new(); node_ids.len()];
    for spec in links {
        let endpoint = |n: &str| {
            node_index.get(n).copied().ok_or_else(|| {
                Error::Structure(format!(
                    "link `{}` references undeclared node `{n}`",
                    spec.id
                ))
            })
        };
        let tail = endpoint(&spec.tail)?;
        let head = endpoint(&spec.head)?;
        if tail == head {
            return Err(Error::Structure(format!("link `{}` is a self-loop", spec.id)));
        }
        if !(spec.length > T::zero()) {
            return Err(Error::Structure(format!(
                "link `{}` has non-positive length {}",
                spec.id, spec.length
            )));
        }
        let idx = LinkIdx(built.len());
        if link_index.insert(spec.id.clone(), idx).is_some() {
            return Err(Error::Structure(format!("duplicate link id `{}`", spec.id)));
        }
        outbound[tail.0].push(idx);
        inbound[head.0].push(idx);
        built.push(Link {
            id: spec.id,
            tail,
            head,
            length: spec.length,
            params: spec.params,
        });
    }

    Ok(Network {
        node_ids,
        node_index,
        links: built,
        link_index,
        inbound,
        outbound,
    })
}

impl<T: Scalar> Network<T> {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link<T>] {
        &self.links
    }

    pub fn link(&self, idx: LinkIdx) -> &Link<T> {
        &self.links[idx.0]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, idx: NodeIdx) -> &str {
        &self.node_ids[idx.0]
    }

    pub fn node(&self, id: &str) -> Option<NodeIdx> {
        self.node_index.get(id).copied()
    }

    pub fn link_by_id(&self, id: &str) -> Option<LinkIdx> {
        self.link_index.get(id).copied()
    }

    /// First link running from `tail` to `head`, by external node ids.
    pub fn link_between(&self, tail: &str, head: &str) -> Option<LinkIdx> {
        let (t, h) = (self.node(tail)?, self.node(head)?);
        self.outbound[t.0]
            .iter()
            .copied()
            .find(|&l| self.links[l.0].head == h)
    }

    /// Links ending at `n`.
    pub fn inbound(&self, n: NodeIdx) -> &[LinkIdx] {
        &self.inbound[n.0]
    }

    /// Links leaving `n`.
    pub fn outbound(&self, n: NodeIdx) -> &[LinkIdx] {
        &self.outbound[n.0]
    }

    /// Smallest congested-branch maximum flow over all links.
    pub fn min_q_max(&self) -> Option<T> {
        self.links
            .iter()
            .map(|l| l.params.q_max)
            .reduce(|a, b| a.min(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdDemand<T> {
    pub origin: NodeIdx,
    pub destination: NodeIdx,
    /// veh/hr.
    pub demand: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandTable<T> {
    entries: Vec<OdDemand<T>>,
}

impl<T: Scalar> DemandTable<T> {
    /// Resolves external node ids. Diagonal entries are dropped; unknown
    /// nodes and negative or non-finite demands are rejected.
    pub fn new<'a, I>(network: &Network<T>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, T)>,
    {
        let mut out = Vec::new();
        for (o, d, q) in entries {
            let resolve = |n: &str| {
                network
                    .node(n)
                    .ok_or_else(|| Error::Input(format!("demand references unknown node `{n}`")))
            };
            let (origin, destination) = (resolve(o)?, resolve(d)?);
            if !q.is_finite() || q < T::zero() {
                return Err(Error::Input(format!("demand {o} -> {d} is negative or not finite: {q}")));
            }
            if origin != destination {
                out.push(OdDemand {
                    origin,
                    destination,
                    demand: q,
                });
            }
        }
        Ok(Self { entries: out })
    }

    pub fn from_entries(entries: Vec<OdDemand<T>>) -> Result<Self> {
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            if !e.demand.is_finite() || e.demand < T::zero() {
                return Err(Error::Input(format!("negative or non-finite demand {}", e.demand)));
            }
            if e.origin != e.destination {
                out.push(e);
            }
        }
        Ok(Self { entries: out })
    }

    pub fn entries(&self) -> &[OdDemand<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> T {
        self.entries.iter().map(|e| e.demand).sum()
    }
}

/// All demand leaving one origin, keyed by destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Commodity<T> {
    pub origin: NodeIdx,
    pub sinks: BTreeMap<NodeIdx, T>,
}

impl<T: Scalar> Commodity<T> {
    pub fn total(&self) -> T {
        self.sinks.values().copied().sum()
    }

    /// Net injection at node `n`: `+total` at the origin, `-demand` at each sink.
    pub fn injection(&self, n: NodeIdx) -> T {
        let mut v = T::zero();
        if n == self.origin {
            v += self.total();
        }
        if let Some(&q) = self.sinks.get(&n) {
            v -= q;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommodityMode {
    /// One commodity per origin. Objectives only see aggregate link flows, so
    /// this leaves the aggregate feasible set unchanged.
    #[default]
    ByOrigin,
    /// One commodity per OD pair, for disaggregate reporting.
    ByOdPair,
}

/// Merges OD pairs sharing an origin. Origins appear in first-seen order.
pub fn aggregate_by_origin<T: Scalar>(demands: &DemandTable<T>) -> Vec<Commodity<T>> {
    let mut out: Vec<Commodity<T>> = Vec::new();
    let mut slot: HashMap<NodeIdx, usize> = HashMap::new();
    for e in demands.entries() {
        let i = *slot.entry(e.origin).or_insert_with(|| {
            out.push(Commodity {
                origin: e.origin,
                sinks: BTreeMap::new(),
            });
            out.len() - 1
        });
        *out[i].sinks.entry(e.destination).or_insert_with(T::zero) += e.demand;
    }
    out
}

pub fn per_od_pair<T: Scalar>(demands: &DemandTable<T>) -> Vec<Commodity<T>> {
    demands
        .entries()
        .iter()
        .map(|e| Commodity {
            origin: e.origin,
            sinks: BTreeMap::from([(e.destination, e.demand)]),
        })
        .collect()
}

pub fn commodities<T: Scalar>(demands: &DemandTable<T>, mode: CommodityMode) -> Vec<Commodity<T>> {
    match mode {
        CommodityMode::ByOrigin => aggregate_by_origin(demands),
        CommodityMode::ByOdPair => per_od_pair(demands),
    }
}

/// Per-node balance `inflow - outflow + injection` of one commodity.
/// A conserving flow gives zero everywhere.
pub fn conservation_residual<T: Scalar>(
    network: &Network<T>,
    commodity: &Commodity<T>,
    flows: &[T],
) -> Vec<T> {
    assert_eq!(flows.len(), network.num_links(), "one flow per link");
    (0..network.num_nodes())
        .map(|n| {
            let n = NodeIdx(n);
            let inflow: T = network.inbound(n).iter().map(|l| flows[l.0]).sum();
            let outflow: T = network.outbound(n).iter().map(|l| flows[l.0]).sum();
            inflow - outflow + commodity.injection(n)
        })
        .collect()
}

/// Link flows split by commodity, plus their per-link totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPattern<T> {
    /// `commodity_flows[k][a]`: flow of commodity `k` on link `a`, veh/hr.
    pub commodity_flows: Vec<Vec<T>>,
    /// `aggregate[a]`: total flow on link `a`, veh/hr.
    pub aggregate: Vec<T>,
}

impl<T: Scalar> FlowPattern<T> {
    pub fn zeros(num_commodities: usize, num_links: usize) -> Self {
        Self {
            commodity_flows: vec![vec![T::zero(); num_links]; num_commodities],
            aggregate: vec![T::zero(); num_links],
        }
    }

    /// Builds the aggregate as the commodity sum.
    pub fn from_commodity_flows(commodity_flows: Vec<Vec<T>>, num_links: usize) -> Self {
        let mut aggregate = vec![T::zero(); num_links];
        for row in &commodity_flows {
            for (x, &y) in aggregate.iter_mut().zip(row) {
                *x += y;
            }
        }
        Self {
            commodity_flows,
            aggregate,
        }
    }

    /// Largest `|sum_k x_a^k - x_a|` over links.
    pub fn aggregation_residual(&self) -> T {
        (0..self.aggregate.len())
            .map(|a| {
                let s: T = self.commodity_flows.iter().map(|row| row[a]).sum();
                (s - self.aggregate[a]).abs()
            })
            .fold(T::zero(), T::max)
    }

    pub fn min_flow(&self) -> T {
        self.commodity_flows
            .iter()
            .flatten()
            .chain(&self.aggregate)
            .copied()
            .fold(T::infinity(), T::min)
    }

    /// Largest absolute conservation residual over all commodities and nodes.
    pub fn max_conservation_residual(&self, network: &Network<T>, commodities: &[Commodity<T>]) -> T {
        commodities
            .iter()
            .zip(&self.commodity_flows)
            .flat_map(|(c, f)| conservation_residual(network, c, f))
            .fold(T::zero(), |m, r| m.max(r.abs()))
    }
}

/// Flow state of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkState {
    /// `delta = 1`: travel time rises with flow up to `q_cr`.
    Uncongested,
    /// `delta = 0`: travel time falls with flow, `delta_min <= x <= q_max`.
    Congested,
}

impl LinkState {
    /// The 0/1 indicator.
    pub fn indicator(self) -> u8 {
        match self {
            LinkState::Uncongested => 1,
            LinkState::Congested => 0,
        }
    }

    pub fn from_indicator(v: u8) -> Option<Self> {
        match v {
            1 => Some(LinkState::Uncongested),
            0 => Some(LinkState::Congested),
            _ => None,
        }
    }
}

/// One state per link, indexed like the network's links.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateVector {
    states: Vec<LinkState>,
}

impl StateVector {
    pub fn all_uncongested(num_links: usize) -> Self {
        Self {
            states: vec![LinkState::Uncongested; num_links],
        }
    }

    pub fn new(states: Vec<LinkState>) -> Self {
        Self { states }
    }

    /// All uncongested except the listed links.
    pub fn with_congested<T: Scalar>(network: &Network<T>, congested: &[LinkIdx]) -> Self {
        let mut s = Self::all_uncongested(network.num_links());
        for &l in congested {
            s.set(l, LinkState::Congested);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, l: LinkIdx) -> LinkState {
        self.states[l.0]
    }

    pub fn set(&mut self, l: LinkIdx, s: LinkState) {
        self.states[l.0] = s;
    }

    pub fn is_congested(&self, l: LinkIdx) -> bool {
        self.states[l.0] == LinkState::Congested
    }

    pub fn iter(&self) -> impl Iterator<Item = (LinkIdx, LinkState)> + '_ {
        self.states.iter().enumerate().map(|(i, &s)| (LinkIdx(i), s))
    }

    /// Congested links in index order.
    pub fn congested(&self) -> Vec<LinkIdx> {
        self.iter()
            .filter(|&(_, s)| s == LinkState::Congested)
            .map(|(l, _)| l)
            .collect()
    }

    pub fn check_len<T: Scalar>(&self, network: &Network<T>) -> Result<()> {
        if self.states.len() == network.num_links() {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "state vector has {} entries for {} links",
                self.states.len(),
                network.num_links()
            )))
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn unit_params() -> LinkParams<f64> {
        LinkParams {
            alpha: 1e-5,
            beta: 240.0,
            gamma: -0.1,
            t_free: 0.025,
            q_max: 1600.0,
            q_cr: 1680.0,
        }
    }

    pub(crate) fn spec(id: &str, t: &str, h: &str) -> LinkSpec<f64> {
        LinkSpec {
            id: id.into(),
            tail: t.into(),
            head: h.into(),
            length: 1.0,
            params: unit_params(),
        }
    }

    #[test]
    fn single_link_incidence() {
        let net = build_network(["1", "2"], vec![spec("1-2", "1", "2")]).unwrap();
        let (n1, n2) = (net.node("1").unwrap(), net.node("2").unwrap());
        assert_eq!(net.outbound(n1), &[LinkIdx(0)]);
        assert_eq!(net.inbound(n2), &[LinkIdx(0)]);
        assert!(net.inbound(n1).is_empty());
        assert!(net.outbound(n2).is_empty());
    }

    #[test]
    fn structural_errors() {
        let err = build_network(["1", "2"], vec![spec("1-3", "1", "3")]).unwrap_err();
        assert!(matches!(&err, Error::Structure(m) if m.contains("1-3")), "{err}");
        let err = build_network(["1", "2"], vec![spec("a", "1", "2"), spec("a", "2", "1")]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        assert!(build_network(["1"], vec![spec("a", "1", "1")]).is_err());
        let mut zero = spec("z", "1", "2");
        zero.length = 0.0;
        assert!(build_network(["1", "2"], vec![zero]).is_err());
    }

    #[test]
    fn parallel_links_allowed_with_distinct_ids() {
        let net = build_network(["1", "2"], vec![spec("a", "1", "2"), spec("b", "1", "2")]).unwrap();
        assert_eq!(net.outbound(NodeIdx(0)).len(), 2);
        assert_eq!(net.link_between("1", "2"), Some(LinkIdx(0)));
    }

    #[test]
    fn demand_validation() {
        let net = build_network(["1", "2"], vec![spec("1-2", "1", "2")]).unwrap();
        assert!(DemandTable::new(&net, [("1", "2", -1.0)]).is_err());
        assert!(DemandTable::new(&net, [("1", "9", 1.0)]).is_err());
        let t = DemandTable::new(&net, [("1", "1", 5.0), ("1", "2", 3.0)]).unwrap();
        assert_eq!(t.len(), 1);
        assert!(aggregate_by_origin(&DemandTable::<f64>::default()).is_empty());
    }

    #[test]
    fn aggregation_merges_by_origin() {
        let names: Vec<String> = (1..=4).map(|i| i.to_string()).collect();
        let net = build_network(names.clone(), vec![spec("1-2", "1", "2")]).unwrap();
        let t = DemandTable::new(
            &net,
            [("1", "2", 1.0), ("3", "2", 4.0), ("1", "4", 2.0), ("1", "2", 0.5)],
        )
        .unwrap();
        let c = aggregate_by_origin(&t);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].origin, NodeIdx(0));
        assert_eq!(c[0].sinks[&NodeIdx(1)], 1.5);
        assert_relative_eq!(c.iter().map(|c| c.total()).sum::<f64>(), t.total());
        assert_eq!(per_od_pair(&t).len(), 4);
    }

    #[test]
    fn residual_follows_balance_equations() {
        let net = build_network(["1", "2"], vec![spec("1-2", "1", "2")]).unwrap();
        let t = DemandTable::new(&net, [("1", "2", 100.0)]).unwrap();
        let c = &aggregate_by_origin(&t)[0];
        // inflow - outflow + demand at the origin, inflow - outflow - demand at the destination
        assert_eq!(conservation_residual(&net, c, &[90.0]), vec![10.0, -10.0]);
        assert_eq!(conservation_residual(&net, c, &[100.0]), vec![0.0, 0.0]);
        let empty = Commodity {
            origin: NodeIdx(0),
            sinks: Default::default(),
        };
        assert_eq!(conservation_residual(&net, &empty, &[0.0]), vec![0.0, 0.0]);
    }
}
