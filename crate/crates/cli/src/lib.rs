//! Command-line front end: parameter generation, assignment, congestion
//! evolution, file validation and report rendering.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible or disabled network,
//! 3 solver budget exhausted.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use congestion_core::bnb::{solve_uem_bnb, BnbConfig, BnbStatus};
use congestion_core::cost::CostConfig;
use congestion_core::evolution::{assign_scenario, evolve, EvolutionConfig, Model, ScenarioStatus, Verdict};
use congestion_core::fdgen::{derive_link_params, ParamRanges, ParamSampler};
use congestion_core::io::{
    flow_table, level_table, load_demands, load_network, load_state, network_svg, parse_topology, read_network,
    time_flow_svg, LinkEntry, LoadOptions, LoadedNetwork, Meta, NetworkFile, ResolvedConfig, RunReport, SamplerInfo,
};
use congestion_core::network::StateVector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "congestion", version, about = "Traffic assignment with two-branch link travel times")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample basic parameters for every link of a topology and write a network file.
    Gen(GenArgs),
    /// Solve one assignment under a fixed state vector.
    Assign(AssignArgs),
    /// Run the congestion evolution from the all-uncongested state.
    Evolve(EvolveArgs),
    /// Check link coefficients (and optionally demand and state files).
    Validate(ValidateArgs),
    /// Render a run report to text tables and SVG plots.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Ue,
    So,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ue => Model::Ue,
            ModelArg::So => Model::So,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Network file giving nodes, link ends and length_km; coefficients are ignored.
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with `{lo, hi}` intervals for v_free, v_cr, w, d_jam, r_mc.
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    network: PathBuf,
    /// JSON demand list or origin-destination matrix text.
    #[arg(long)]
    demands: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Ue)]
    model: ModelArg,
    /// Branch-and-bound stopping tolerance on the objective gap.
    #[arg(long, default_value_t = 0.001)]
    epsilon: f64,
    /// Lowest flow on a congested link, veh/hr.
    #[arg(long, default_value_t = 60.0)]
    delta: f64,
    #[arg(long, default_value_t = 10_000)]
    max_solves: usize,
    /// Leave out the timestamp block so reruns are byte-identical.
    #[arg(long)]
    no_meta: bool,
    /// Report file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AssignArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// State file; every link uncongested when absent.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Relative distance to critical flow that counts as a bottleneck.
    #[arg(long, default_value_t = 1e-6)]
    bottleneck_tol: f64,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    demands: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
    /// Allowed mismatch of the two branches at capacity, hours.
    #[arg(long, default_value_t = 1e-3)]
    continuity_tol: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run report written by `assign` or `evolve`.
    input: PathBuf,
    /// Directory for SVG plots; tables only when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<congestion_core::Error> for Failure {
    fn from(e: congestion_core::Error) -> Self {
        Self::input(e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn emit(&mut self, path: Option<&Path>, text: &str) -> Result<(), Failure> {
        match path {
            Some(p) => std::fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
            None => self.out.write_all(text.as_bytes()).map_err(|e| Failure::input(e.to_string())),
        }
    }
}

/// Runs the command line with the process streams.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    run_cli_with(argv, &mut out, &mut err)
}

/// Runs the command line, writing reports to `out` and diagnostics to `err`.
pub fn run_cli_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // help and version go to the report stream with success
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_INPUT;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let mut io = Io { out, err };
    let result = match cli.command {
        Command::Gen(a) => gen(&a, &mut io),
        Command::Assign(a) => assign(&a, &mut io),
        Command::Evolve(a) => evolve_cmd(&a, &mut io),
        Command::Validate(a) => validate(&a, &mut io),
        Command::Report(a) => report(&a, &mut io),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(io.err, "error: {}", f.message);
            f.code
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn gen(a: &GenArgs, io: &mut Io) -> Outcome {
    let topo = parse_topology(&read_text(&a.topology)?).map_err(|e| Failure::input(format!("{}: {e}", a.topology.display())))?;
    let ranges: ParamRanges<f64> = match &a.ranges {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => ParamRanges::default(),
    };
    if !ranges.is_valid() {
        return Err(Failure::input("every range needs 0 < lo <= hi"));
    }
    let mut sampler = ParamSampler::new(a.seed);
    let mut links = Vec::with_capacity(topo.links.len());
    for l in &topo.links {
        if !(l.length_km > 0.0) {
            return Err(Failure::input(format!("link {}: length_km must be positive", l.link_id())));
        }
        let basic = sampler.sample(&ranges);
        let params = derive_link_params(&basic, l.length_km);
        links.push(LinkEntry::from_link(&l.link_id(), &l.tail, &l.head, l.length_km, &params));
    }
    let file = NetworkFile {
        links,
        sampler: Some(SamplerInfo {
            algorithm: sampler.algorithm().into(),
            seed: a.seed,
        }),
        ..topo
    };
    let mut text = serde_json::to_string_pretty(&file).expect("network file serializes");
    text.push('\n');
    io.emit(a.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn load(path: &Path) -> Result<LoadedNetwork<f64>, Failure> {
    let loaded = load_network::<f64>(path)?;
    Ok(loaded)
}

fn network_name(loaded: &LoadedNetwork<f64>, path: &Path) -> Option<String> {
    loaded
        .name
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
}

fn bnb_config(s: &SolveArgs) -> Result<BnbConfig<f64>, Failure> {
    if !(s.epsilon > 0.0) {
        return Err(Failure::input(format!("--epsilon must be positive, got {}", s.epsilon)));
    }
    if !(s.delta > 0.0) {
        return Err(Failure::input(format!("--delta must be positive, got {}", s.delta)));
    }
    Ok(BnbConfig {
        epsilon: s.epsilon,
        cost: CostConfig::new(s.delta),
        max_cqp_solves: s.max_solves.max(1),
        ..BnbConfig::default()
    })
}

fn finish(mut report: RunReport, s: &SolveArgs, io: &mut Io) -> Result<(), Failure> {
    if !s.no_meta {
        report.meta = Some(Meta::now());
    }
    io.emit(s.output.as_deref(), &report.to_json())
}

fn assign(a: &AssignArgs, io: &mut Io) -> Outcome {
    let s = &a.solve;
    let loaded = load(&s.network)?;
    let net = &loaded.network;
    let dem = load_demands(&s.demands, net)?;
    let state: StateVector = load_state(a.state.as_deref(), net)?;
    let cfg = EvolutionConfig {
        model: s.model.into(),
        bnb: bnb_config(s)?,
        ..EvolutionConfig::default()
    };
    let resolved = ResolvedConfig::new(cfg.model, &cfg.bnb, cfg.bottleneck_tol);
    let name = network_name(&loaded, &s.network);
    let (report, code) = match cfg.model {
        Model::Ue => {
            let run = solve_uem_bnb(net, &dem, &state, &cfg.bnb)?;
            let code = match run.status {
                BnbStatus::Optimal => EXIT_OK,
                BnbStatus::Infeasible => EXIT_INFEASIBLE,
                BnbStatus::IterationLimit => EXIT_BUDGET,
            };
            match run.incumbent.as_ref() {
                Some(inc) => {
                    let _ = writeln!(
                        io.err,
                        "{}: objective {:.4}, potential {:.4}, bound {:.4}, gap {:.3e}, {} iterations, {} solves",
                        status_word(code),
                        inc.objective,
                        inc.potential,
                        run.lower_bound,
                        run.gap(),
                        run.iterations,
                        run.cqp_solves
                    );
                }
                None => {
                    let _ = writeln!(io.err, "{}: no feasible flow", status_word(code));
                }
            }
            (RunReport::from_bnb(net, name, &state, &run, resolved, &cfg.bnb.cost), code)
        }
        Model::So => {
            let sc = assign_scenario(net, &dem, &state, &cfg)?;
            let code = scenario_code(sc.status);
            let _ = writeln!(
                io.err,
                "{}: total travel time {}",
                status_word(code),
                sc.objective.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
            );
            (RunReport::from_scenario(net, name, &state, &sc, resolved, &cfg.bnb.cost), code)
        }
    };
    finish(report, s, io)?;
    Ok(code)
}

fn scenario_code(s: ScenarioStatus) -> i32 {
    match s {
        ScenarioStatus::Solved => EXIT_OK,
        ScenarioStatus::Infeasible => EXIT_INFEASIBLE,
        ScenarioStatus::BudgetExhausted => EXIT_BUDGET,
    }
}

fn status_word(code: i32) -> &'static str {
    match code {
        EXIT_OK => "optimal",
        EXIT_INFEASIBLE => "infeasible",
        _ => "iteration limit",
    }
}

fn evolve_cmd(a: &EvolveArgs, io: &mut Io) -> Outcome {
    let s = &a.solve;
    let loaded = load(&s.network)?;
    let net = &loaded.network;
    let dem = load_demands(&s.demands, net)?;
    if !(a.bottleneck_tol >= 0.0) {
        return Err(Failure::input("--bottleneck-tol must be non-negative"));
    }
    let cfg = EvolutionConfig {
        model: s.model.into(),
        bnb: bnb_config(s)?,
        bottleneck_tol: a.bottleneck_tol,
    };
    let ev = evolve(net, &dem, &cfg)?;
    for l in &ev.levels {
        let ids: Vec<&str> = l.bottleneck.iter().map(|&k| net.link(k).id.as_str()).collect();
        let _ = writeln!(
            io.err,
            "level {}: {:?}, potential {}, bottleneck [{}]",
            l.index,
            l.status,
            l.potential.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
            ids.join(", ")
        );
    }
    let _ = writeln!(io.err, "verdict: {}", ev.verdict);
    let code = match ev.verdict {
        Verdict::TotallyUncongested | Verdict::FinalCongestion(_) => EXIT_OK,
        Verdict::Disabled(_) => EXIT_INFEASIBLE,
        Verdict::BudgetExhausted(_) => EXIT_BUDGET,
    };
    finish(RunReport::from_evolution(net, network_name(&loaded, &s.network), &ev, &cfg), s, io)?;
    Ok(code)
}

fn validate(a: &ValidateArgs, io: &mut Io) -> Outcome {
    let opts = LoadOptions {
        continuity_tol: a.continuity_tol,
        ..LoadOptions::default()
    };
    let loaded = read_network::<f64>(&a.network, &opts)?;
    let net = &loaded.network;
    let mut text = format!(
        "network {}: {} nodes, {} links\n",
        a.network.display(),
        net.num_nodes(),
        net.num_links()
    );
    let failures = loaded.failures();
    let warnings = loaded.warnings();
    for f in &failures {
        text.push_str(&format!("FAIL  {f}\n"));
    }
    for w in &warnings {
        text.push_str(&format!("WARN  {w}\n"));
    }
    if let Some(d) = &a.demands {
        let dem = load_demands(d, net)?;
        text.push_str(&format!("demands: {} OD pairs, total {} veh/hr\n", dem.len(), dem.total()));
    }
    if let Some(s) = &a.state {
        let st = load_state(Some(s), net)?;
        text.push_str(&format!("state: {} congested links\n", st.congested().len()));
    }
    text.push_str(&format!("{} failures, {} warnings\n", failures.len(), warnings.len()));
    io.emit(None, &text)?;
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_INPUT })
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn report(a: &ReportArgs, io: &mut Io) -> Outcome {
    let r = RunReport::from_json(&read_text(&a.input)?)?;
    let mut text = format!(
        "{} {}: status {}, objective {}, potential {}\n\n",
        r.command,
        r.network.as_deref().unwrap_or("-"),
        r.status,
        r.objective.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
        r.potential.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
    );
    text.push_str(&flow_table(&r.links));
    let levels = level_table(&r);
    if !levels.is_empty() {
        text.push('\n');
        text.push_str(&levels);
    }
    io.emit(None, &text)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
        let write = |name: String, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Failure::input(format!("{}: {e}", p.display())))
        };
        for l in &r.links {
            write(format!("link-{}.svg", file_safe(&l.id)), time_flow_svg(l, r.config.delta_veh_hr))?;
        }
        if r.levels.is_empty() {
            let zone: Vec<String> = r.links.iter().filter(|l| l.state == 0).map(|l| l.id.clone()).collect();
            write("network.svg".into(), network_svg(&r.links, &zone, &r.status))?;
        }
        for l in &r.levels {
            let title = format!("level {} ({})", l.index, r.status);
            write(format!("level-{}.svg", l.index), network_svg(&l.links, &l.zone, &title))?;
        }
    }
    Ok(EXIT_OK)
}
