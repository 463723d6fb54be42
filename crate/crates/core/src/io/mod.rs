//! File formats: networks, demands, link states and run reports.
//!
//! All files are JSON with units in the field names. Demand files may also be
//! a whitespace-separated matrix with destination ids on the first line and
//! one row per origin.

mod render;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgen::{derive_link_params, verify_consistency, BasicParams, ConsistencyReport, LinkParams, ParamRanges};
use crate::network::{build_network, DemandTable, LinkSpec, LinkState, Network, StateVector};
use crate::scalar::Scalar;

pub use render::{flow_table, level_table, network_svg, time_flow_svg};
pub use report::{BnbSummary, LevelReport, LinkReport, Meta, ResolvedConfig, RunReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicFile {
    pub v_free_km_hr: f64,
    pub v_cr_km_hr: f64,
    pub w_km_hr: f64,
    pub d_jam_veh_km: f64,
    pub r_mc: f64,
}

impl BasicFile {
    pub fn to_params<T: Scalar>(&self) -> BasicParams<T> {
        BasicParams {
            v_free: T::lit(self.v_free_km_hr),
            v_cr: T::lit(self.v_cr_km_hr),
            w: T::lit(self.w_km_hr),
            d_jam: T::lit(self.d_jam_veh_km),
            r_mc: T::lit(self.r_mc),
        }
    }

    pub fn from_params<T: Scalar>(p: &BasicParams<T>) -> Self {
        Self {
            v_free_km_hr: p.v_free.to_f64_lossy(),
            v_cr_km_hr: p.v_cr.to_f64_lossy(),
            w_km_hr: p.w.to_f64_lossy(),
            d_jam_veh_km: p.d_jam.to_f64_lossy(),
            r_mc: p.r_mc.to_f64_lossy(),
        }
    }
}

/// A link either carries the six cost coefficients or a `basic` block from
/// which they are derived. Topology files for `gen` carry neither.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tail: String,
    pub head: String,
    pub length_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_free_hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_veh_hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_cr_veh_hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basic: Option<BasicFile>,
}

impl LinkEntry {
    pub fn link_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| format!("{}-{}", self.tail, self.head))
    }

    fn coefficients(&self) -> [Option<f64>; 6] {
        [
            self.alpha,
            self.beta,
            self.gamma,
            self.t_free_hr,
            self.q_max_veh_hr,
            self.q_cr_veh_hr,
        ]
    }

    pub fn has_params(&self) -> bool {
        self.basic.is_some() || self.coefficients().iter().any(Option::is_some)
    }

    pub fn params<T: Scalar>(&self) -> Result<LinkParams<T>> {
        let c = self.coefficients();
        let given = c.iter().filter(|v| v.is_some()).count();
        match (&self.basic, given) {
            (Some(b), 0) => Ok(derive_link_params(&b.to_params(), T::lit(self.length_km))),
            (None, 6) => {
                let v = |i: usize| T::lit(c[i].expect("counted"));
                Ok(LinkParams {
                    alpha: v(0),
                    beta: v(1),
                    gamma: v(2),
                    t_free: v(3),
                    q_max: v(4),
                    q_cr: v(5),
                })
            }
            (Some(_), _) => Err(Error::Input(format!(
                "link {}: give either the coefficients or a basic block, not both",
                self.link_id()
            ))),
            (None, _) => Err(Error::Input(format!(
                "link {}: needs alpha, beta, gamma, t_free_hr, q_max_veh_hr and q_cr_veh_hr, or a basic block",
                self.link_id()
            ))),
        }
    }

    pub fn from_link<T: Scalar>(id: &str, tail: &str, head: &str, length: T, p: &LinkParams<T>) -> Self {
        Self {
            id: Some(id.to_string()),
            tail: tail.to_string(),
            head: head.to_string(),
            length_km: length.to_f64_lossy(),
            alpha: Some(p.alpha.to_f64_lossy()),
            beta: Some(p.beta.to_f64_lossy()),
            gamma: Some(p.gamma.to_f64_lossy()),
            t_free_hr: Some(p.t_free.to_f64_lossy()),
            q_max_veh_hr: Some(p.q_max.to_f64_lossy()),
            q_cr_veh_hr: Some(p.q_cr.to_f64_lossy()),
            basic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerInfo {
    pub algorithm: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub nodes: Vec<String>,
    pub links: Vec<LinkEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerInfo>,
}

impl NetworkFile {
    pub fn from_network<T: Scalar>(network: &Network<T>, name: Option<String>) -> Self {
        let links = network
            .links()
            .iter()
            .map(|l| {
                LinkEntry::from_link(
                    &l.id,
                    network.node_id(l.tail),
                    network.node_id(l.head),
                    l.length,
                    &l.params,
                )
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            name,
            nodes: network.node_ids().to_vec(),
            links,
            sampler: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandEntry {
    pub origin: String,
    pub destination: String,
    pub demand_veh_hr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandFile {
    pub schema_version: u32,
    pub demands: Vec<DemandEntry>,
}

/// Link id to state indicator; absent links are uncongested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub schema_version: u32,
    pub states: BTreeMap<String, u8>,
}

impl StateFile {
    pub fn from_state<T: Scalar>(network: &Network<T>, state: &StateVector) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            states: state
                .iter()
                .map(|(l, s)| (network.link(l).id.clone(), s.indicator()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions<T> {
    pub ranges: ParamRanges<T>,
    /// Allowed branch mismatch at capacity, hours.
    pub continuity_tol: T,
}

impl<T: Scalar> Default for LoadOptions<T> {
    fn default() -> Self {
        Self {
            ranges: ParamRanges::default(),
            continuity_tol: T::lit(1e-3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedNetwork<T> {
    pub network: Network<T>,
    pub name: Option<String>,
    /// Consistency report per link, in link order.
    pub reports: Vec<(String, ConsistencyReport)>,
}

impl<T> LoadedNetwork<T> {
    pub fn failures(&self) -> Vec<String> {
        self.reports
            .iter()
            .flat_map(|(id, r)| r.failures().map(move |c| format!("link {id}: {} (value {})", c.name, c.value)))
            .collect()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.reports
            .iter()
            .flat_map(|(id, r)| {
                r.warnings()
                    .map(move |c| format!("link {id}: {} = {} outside range by {}", c.name, c.value, c.residual))
            })
            .collect()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn json<'a, D: Deserialize<'a>>(text: &'a str, what: &str) -> Result<D> {
    serde_json::from_str(text).map_err(|e| Error::Input(format!("{what}: {e}")))
}

fn with_path<R>(path: &Path, r: Result<R>) -> Result<R> {
    r.map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses a network file and checks every link, without rejecting failures.
pub fn parse_network<T: Scalar>(text: &str, opts: &LoadOptions<T>) -> Result<LoadedNetwork<T>> {
    let file: NetworkFile = json(text, "network file")?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Input(format!("unsupported schema_version {}", file.schema_version)));
    }
    let mut specs = Vec::with_capacity(file.links.len());
    let mut reports = Vec::with_capacity(file.links.len());
    for entry in &file.links {
        let params = entry.params::<T>()?;
        let length = T::lit(entry.length_km);
        let id = entry.link_id();
        reports.push((
            id.clone(),
            verify_consistency(length, &params, &opts.ranges, opts.continuity_tol),
        ));
        specs.push(LinkSpec {
            id,
            tail: entry.tail.clone(),
            head: entry.head.clone(),
            length,
            params,
        });
    }
    Ok(LoadedNetwork {
        network: build_network(file.nodes, specs)?,
        name: file.name,
        reports,
    })
}

/// Reads a network file; consistency failures are reported, not rejected.
pub fn read_network<T: Scalar>(path: &Path, opts: &LoadOptions<T>) -> Result<LoadedNetwork<T>> {
    with_path(path, parse_network(&read(path)?, opts))
}

/// Reads a network file and rejects it if any link fails its consistency checks.
pub fn load_network<T: Scalar>(path: &Path) -> Result<LoadedNetwork<T>> {
    let loaded = read_network(path, &LoadOptions::default())?;
    let failures = loaded.failures();
    if failures.is_empty() {
        Ok(loaded)
    } else {
        Err(Error::Input(format!(
            "{}: inconsistent link parameters: {}",
            path.display(),
            failures.join("; ")
        )))
    }
}

/// Link ids and lengths of a topology file; link coefficients are ignored.
pub fn parse_topology(text: &str) -> Result<NetworkFile> {
    let file: NetworkFile = json(text, "topology file")?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Input(format!("unsupported schema_version {}", file.schema_version)));
    }
    Ok(file)
}

pub fn parse_demands<T: Scalar>(text: &str, network: &Network<T>) -> Result<DemandTable<T>> {
    if text.trim_start().starts_with('{') {
        let file: DemandFile = json(text, "demand file")?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Input(format!("unsupported schema_version {}", file.schema_version)));
        }
        let entries: Vec<(&str, &str, T)> = file
            .demands
            .iter()
            .map(|d| (d.origin.as_str(), d.destination.as_str(), T::lit(d.demand_veh_hr)))
            .collect();
        return DemandTable::new(network, entries.iter().copied());
    }
    parse_demand_matrix(text, network)
}

fn parse_demand_matrix<T: Scalar>(text: &str, network: &Network<T>) -> Result<DemandTable<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Input("demand matrix is empty".into()))?;
    let columns: Vec<&str> = header.split_whitespace().collect();
    let mut entries = Vec::new();
    for (line, row) in lines {
        let mut tokens = row.split_whitespace();
        let origin = tokens.next().expect("line is non-empty");
        let values: Vec<&str> = tokens.collect();
        if values.len() != columns.len() {
            return Err(Error::Input(format!(
                "demand matrix line {line}: {} values for {} destinations",
                values.len(),
                columns.len()
            )));
        }
        for (dest, v) in columns.iter().zip(values) {
            let q: f64 = v
                .parse()
                .map_err(|_| Error::Input(format!("demand matrix line {line}: '{v}' is not a number")))?;
            entries.push((origin, *dest, T::lit(q)));
        }
    }
    DemandTable::new(network, entries.iter().copied()).map_err(|e| match e {
        Error::Input(m) | Error::Structure(m) => Error::Input(format!("demand matrix: {m}")),
        other => other,
    })
}

pub fn load_demands<T: Scalar>(path: &Path, network: &Network<T>) -> Result<DemandTable<T>> {
    with_path(path, parse_demands(&read(path)?, network))
}

pub fn parse_state<T: Scalar>(text: &str, network: &Network<T>) -> Result<StateVector> {
    let file: StateFile = json(text, "state file")?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Input(format!("unsupported schema_version {}", file.schema_version)));
    }
    let mut state = StateVector::all_uncongested(network.num_links());
    for (id, &v) in &file.states {
        let l = network
            .link_by_id(id)
            .ok_or_else(|| Error::Input(format!("state file: unknown link id '{id}'")))?;
        let s = LinkState::from_indicator(v)
            .ok_or_else(|| Error::Input(format!("state file: link '{id}' has state {v}, expected 0 or 1")))?;
        state.set(l, s);
    }
    Ok(state)
}

/// All links uncongested when no file is given.
pub fn load_state<T: Scalar>(path: Option<&Path>, network: &Network<T>) -> Result<StateVector> {
    match path {
        None => Ok(StateVector::all_uncongested(network.num_links())),
        Some(p) => with_path(p, parse_state(&read(p)?, network)),
    }
}

/// Directory of the fixtures shipped with this crate.
pub fn fixture_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LinkIdx;

    fn fixture(name: &str) -> std::path::PathBuf {
        fixture_dir().join(name)
    }

    #[test]
    fn fig4_fixture() {
        let net = load_network::<f64>(&fixture("fig4.network.json")).unwrap().network;
        assert_eq!((net.num_nodes(), net.num_links()), (10, 30));
        let dem = load_demands(&fixture("fig4.demands.txt"), &net).unwrap();
        assert_eq!(dem.len(), 90);
        assert_eq!(dem.total(), 16860.0);
        let state = load_state(Some(&fixture("fig4.state.json")), &net).unwrap();
        let jammed: Vec<&str> = state.congested().iter().map(|&l| net.link(l).id.as_str()).collect();
        assert_eq!(
            jammed,
            ["1-4", "2-5", "4-5", "4-8", "5-2", "5-6", "5-8", "6-5", "6-7", "7-6", "8-4", "8-5"]
        );
    }

    #[test]
    fn fig5_fixture() {
        let net = load_network::<f64>(&fixture("fig5.network.json")).unwrap().network;
        assert_eq!((net.num_nodes(), net.num_links()), (7, 10));
        let l = net.link(net.link_by_id("3-4").unwrap());
        assert_eq!(l.params.q_cr, 1734.094);
        assert_eq!(load_demands(&fixture("fig5.demands.json"), &net).unwrap().total(), 4100.0);
    }

    #[test]
    fn shipped_fixtures_have_no_failures() {
        for name in ["fig4.network.json", "fig5.network.json", "one-link.network.json"] {
            let loaded = read_network::<f64>(&fixture(name), &LoadOptions::default()).unwrap();
            assert!(loaded.failures().is_empty(), "{name}: {:?}", loaded.failures());
        }
    }

    #[test]
    fn basic_block_is_derived() {
        let net = load_network::<f64>(&fixture("one-link.network.json")).unwrap().network;
        let p = net.link(LinkIdx(0)).params;
        assert!((p.q_cr - 1680.0).abs() < 1e-9 && (p.q_max - 1600.0).abs() < 1e-9);
    }

    fn tiny() -> Network<f64> {
        let text = r#"{"schema_version":1,"nodes":["a","b"],"links":[{"tail":"a","head":"b","length_km":2,
            "basic":{"v_free_km_hr":80,"v_cr_km_hr":40,"w_km_hr":20,"d_jam_veh_km":120,"r_mc":0.05}}]}"#;
        parse_network(text, &LoadOptions::default()).unwrap().network
    }

    #[test]
    fn negative_demand_rejected() {
        let net = tiny();
        let text = r#"{"schema_version":1,"demands":[{"origin":"a","destination":"b","demand_veh_hr":-5}]}"#;
        assert!(parse_demands(text, &net).is_err());
        assert!(parse_demands("a b\na 0 -5\nb 0 0\n", &net).is_err());
    }

    #[test]
    fn matrix_errors_name_the_line() {
        let net = tiny();
        let e = parse_demands("# c\na b\na 0 1\nb 0 x\n", &net).unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
        let e = parse_demands("a b\na 0\n", &net).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn state_file_rules() {
        let net = tiny();
        assert_eq!(load_state(None, &net).unwrap(), StateVector::all_uncongested(1));
        let s = parse_state(r#"{"schema_version":1,"states":{"a-b":0}}"#, &net).unwrap();
        assert!(s.is_congested(LinkIdx(0)));
        assert!(parse_state(r#"{"schema_version":1,"states":{"b-a":0}}"#, &net).is_err());
        assert!(parse_state(r#"{"schema_version":1,"states":{"a-b":2}}"#, &net).is_err());
        let round = StateFile::from_state(&net, &s);
        assert_eq!(round.states["a-b"], 0);
    }

    #[test]
    fn link_needs_exactly_one_parameter_source() {
        let both = r#"{"schema_version":1,"nodes":["a","b"],"links":[{"tail":"a","head":"b","length_km":2,"alpha":1e-5,
            "basic":{"v_free_km_hr":80,"v_cr_km_hr":40,"w_km_hr":20,"d_jam_veh_km":120,"r_mc":0.05}}]}"#;
        assert!(parse_network::<f64>(both, &LoadOptions::default()).is_err());
        let partial = r#"{"schema_version":1,"nodes":["a","b"],"links":[{"tail":"a","head":"b","length_km":2,"alpha":1e-5}]}"#;
        let e = parse_network::<f64>(partial, &LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("a-b"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = parse_network::<f64>("{\"schema_version\": 1,\n \"nodes\": [1]}", &LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn network_file_round_trip() {
        let net = tiny();
        let file = NetworkFile::from_network(&net, Some("t".into()));
        let text = serde_json::to_string(&file).unwrap();
        let again = parse_network::<f64>(&text, &LoadOptions::default()).unwrap().network;
        assert_eq!(again.link(LinkIdx(0)).params, net.link(LinkIdx(0)).params);
    }
}
