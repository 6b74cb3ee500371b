//! `teamopt`: build, reduce, evaluate, optimize and certify team problems.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 failed or
//! inconclusive certificate, 4 certified non-membership (coercivity
//! witness), 64 usage error.

use std::fs;
use std::io::{self, IsTerminal, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use teamopt::benchmarks::{build_benchmark, Params};
use teamopt::certify::{
    check_condition_c1, check_ic_class, sequential_tail_mass, sequential_tightness, C1Kernel, C1Options, IcQuery, Rung,
    TailCheck,
};
use teamopt::config::{configure_threads, TeamFile};
use teamopt::cost::{CostExpr, Var};
use teamopt::counterexample::{default_catalog, weak_limit_report};
use teamopt::evaluation::{expected_cost_mc, expected_cost_mc_reduced, expected_cost_quadrature_with, QuadOptions};
use teamopt::explore::{default_grid, relay_search, verify_best};
use teamopt::linalg;
use teamopt::model::{Team, TeamSpec};
use teamopt::optimize::{best_linear, linear_coefficient_count, pbp_optimize, zero_profile, CoeffRange, PbpOptions};
use teamopt::reduction::{static_reduce, ReducedTeam};
use teamopt::space::SpaceSpec;
use teamopt::strategy::{
    as_behavioral, read_strategy_csv, write_strategy_csv, DeterministicGridStrategy, Grid, LinearStrategy, Profile,
    Strategy,
};
use teamopt::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_CERT_FAIL: u8 = 3;
const EXIT_WITNESS: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "teamopt", version, about = "Sequential stochastic team problems")]
struct Cli {
    /// Directory for artifacts; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SpecArg {
    /// Team file (TOML); read from standard input when omitted or `-`.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ProfileArgs {
    /// Scalar gains per decision maker in causal order (`u = g * y`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    linear: Option<Vec<f64>>,
    /// Directory with `strategy_<agent>_<time>.csv` files.
    #[arg(long, conflicts_with = "linear")]
    strategies: Option<PathBuf>,
}

#[derive(clap::Args)]
struct QuadArgs {
    /// Gauss-Hermite order per dimension.
    #[arg(long, default_value_t = 64)]
    order: usize,
    /// Gauss-Legendre nodes per segment of the cell-aligned rules.
    #[arg(long)]
    per_segment: Option<usize>,
    /// Longest cell-aligned segment, in noise standard deviations.
    #[arg(long)]
    width_sigmas: Option<f64>,
    /// Half-width of the truncated noise support, in standard deviations.
    #[arg(long)]
    tail_sigmas: Option<f64>,
    /// Largest primitive dimension for tensor quadrature.
    #[arg(long)]
    max_dims: Option<usize>,
}

impl QuadArgs {
    fn options(&self) -> QuadOptions {
        let mut q = QuadOptions::with_order(self.order);
        if let Some(v) = self.per_segment {
            q.per_segment = v;
        }
        if let Some(v) = self.width_sigmas {
            q.max_width_sigmas = v;
        }
        if let Some(v) = self.tail_sigmas {
            q.tail_sigmas = v;
        }
        if let Some(v) = self.max_dims {
            q.max_dims = v;
        }
        q
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EvalMethod {
    Mc,
    Quadrature,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OptMethod {
    Pbp,
    Linear,
    RelaySearch,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Condition {
    C1,
    Ic,
    Tightness,
    Sequential,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum IcExpr {
    /// Cost times every density factor.
    Reduced,
    /// Own cost terms of `--dm` times the density factors up to it.
    Slice,
}

#[derive(Subcommand)]
enum Command {
    /// Print a benchmark team file.
    Benchmark {
        name: String,
        /// Parameter assignment `key=value[,value..]`; repeatable.
        #[arg(short = 'p', long = "param")]
        params: Vec<String>,
    },
    /// Summarize the static reduction of a team.
    Reduce {
        #[command(flatten)]
        spec: SpecArg,
    },
    /// Expected cost of a strategy profile.
    Evaluate {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, value_enum, default_value = "quadrature")]
        method: EvalMethod,
        /// Sample under the reduced measure instead of simulating.
        #[arg(long)]
        reduced: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Person-by-person optimization, best linear profile or relay search.
    Optimize {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_enum, default_value = "pbp")]
        method: OptMethod,
        /// Observation cells per coordinate.
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Action points per coordinate (defaults to `--grid`).
        #[arg(long)]
        actions: Option<usize>,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Initial scalar gains per decision maker (zero when omitted).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init_gains: Option<Vec<f64>>,
        /// Linear search: coefficient range and points per coefficient.
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        coeff_lo: f64,
        #[arg(long, default_value_t = 2.0)]
        coeff_hi: f64,
        #[arg(long, default_value_t = 21)]
        coeff_steps: usize,
        /// Relay search: Monte Carlo check of the best point.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Structural certificates.
    Certify {
        #[arg(long, value_enum)]
        condition: Condition,
        /// C1 kernel: gaussian or step.
        #[arg(long, default_value = "gaussian")]
        kernel: String,
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Coercivity: function to test.
        #[arg(long, value_enum, default_value = "reduced")]
        expr: IcExpr,
        /// Coercivity: the `b` variables (e.g. `u1_1`).
        #[arg(long, value_delimiter = ',')]
        b: Vec<String>,
        /// Decision maker `agent,time` (defaults to the first one).
        #[arg(long, value_delimiter = ',')]
        dm: Option<Vec<usize>>,
        /// Coercivity: half-width of the box `K` over the `a` variables.
        #[arg(long, default_value_t = 1.0)]
        k_half: f64,
        /// Coercivity: level `M`.
        #[arg(long, default_value_t = 100.0)]
        m: f64,
        #[arg(long, default_value_t = 1e3)]
        search_box: f64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Tightness: bound on the expected cost.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Tightness: Monte Carlo tail check sample count (0 skips it).
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Exact dyadic counterexample with observation sharing.
    Counterexample {
        #[arg(long, default_value_t = 12)]
        nmax: u32,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Inconclusive(_) => EXIT_CERT_FAIL,
            Error::Io(_) | Error::NonFinite { .. } | Error::PhiOverflow { .. } => EXIT_RUNTIME,
            _ => EXIT_INVALID,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

type Outcome = Result<u8, Failure>;

/// Writes `name` under `--out`, or prints it.
struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    fn emit(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(name), bytes)
            }
            None => {
                let mut so = io::stdout().lock();
                so.write_all(bytes)?;
                so.flush()
            }
        }
    }

    fn emit_toml<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let text = toml::to_string(value).map_err(|e| Failure {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        })?;
        Ok(self.emit(name, text.as_bytes())?)
    }
}

fn read_spec(path: Option<&Path>) -> Result<TeamSpec, Failure> {
    let text = match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p)?,
        _ => {
            let mut stdin = io::stdin();
            if stdin.is_terminal() {
                return Err(Failure {
                    code: EXIT_USAGE,
                    message: "no --spec given and standard input is a terminal".into(),
                });
            }
            let mut s = String::new();
            stdin.read_to_string(&mut s)?;
            s
        }
    };
    Ok(TeamFile::parse(&text)?.spec()?)
}

fn gain_strategy(team: &Team, k: usize, g: f64) -> Result<LinearStrategy, Error> {
    let d = &team.dms[k];
    if d.ydim != d.udim {
        return Err(Error::DimensionMismatch(format!(
            "scalar gain for {} needs equal dimensions",
            d.label()
        )));
    }
    LinearStrategy::new(linalg::scaled_identity(d.udim, g), vec![0.0; d.udim])
}

fn strategy_file(agent: usize, time: usize) -> String {
    format!("strategy_{agent}_{time}.csv")
}

/// Counts of a uniform grid with `cells` cells in `dim` coordinates.
fn per_coordinate(cells: usize, dim: usize) -> usize {
    (cells as f64).powf(1.0 / dim as f64).round() as usize
}

fn load_profile(team: &Team, args: &ProfileArgs) -> Result<Profile, Failure> {
    if let Some(g) = &args.linear {
        if g.len() != team.dms.len() {
            return Err(invalid(format!(
                "{} gains for {} decision makers",
                g.len(),
                team.dms.len()
            )));
        }
        return Ok(g
            .iter()
            .enumerate()
            .map(|(k, &g)| gain_strategy(team, k, g).map(Strategy::Linear))
            .collect::<Result<_, _>>()?);
    }
    if let Some(dir) = &args.strategies {
        let mut out = Vec::new();
        for d in &team.dms {
            let path = dir.join(strategy_file(d.agent, d.time));
            let text = fs::read_to_string(&path)?;
            let mut rd = csv::Reader::from_reader(text.as_bytes());
            let cols = rd.headers().map_err(Error::from)?.len().saturating_sub(2);
            let rows = rd.records().count();
            let obs = Grid::uniform(&d.observation_space, per_coordinate(rows, d.ydim))?;
            let act = Grid::uniform(&d.action_space, per_coordinate(cols, d.udim))?;
            out.push(Strategy::Behavioral(read_strategy_csv(text.as_bytes(), &obs, &act)?));
        }
        return Ok(out);
    }
    Ok(team
        .dms
        .iter()
        .map(|d| Strategy::Linear(LinearStrategy::zero(d.ydim, d.udim)))
        .collect())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, Failure> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Failure::from(Error::from(e));
    wr.write_record(header).map_err(io_err)?;
    for r in rows {
        wr.write_record(r).map_err(io_err)?;
    }
    wr.into_inner().map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    })
}

fn benchmark(sink: &Sink, name: &str, assignments: &[String]) -> Outcome {
    let mut p = Params::new();
    for a in assignments {
        p = p.parse_assignment(a)?;
    }
    let spec = build_benchmark(name, &p)?;
    let text = TeamFile::from_spec(spec).to_toml()?;
    sink.emit(&format!("{name}.toml"), text.as_bytes())?;
    Ok(0)
}

fn reduce(sink: &Sink, spec: &SpecArg) -> Outcome {
    let rt = static_reduce(&read_spec(spec.spec.as_deref())?)?;
    sink.emit("reduced.toml", rt.summary().as_bytes())?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    sink: &Sink,
    spec: &SpecArg,
    profile: &ProfileArgs,
    method: EvalMethod,
    reduced: bool,
    seed: u64,
    n: usize,
    quad: &QuadArgs,
) -> Outcome {
    let rt = static_reduce(&read_spec(spec.spec.as_deref())?)?;
    let p = load_profile(&rt.team, profile)?;
    let row = match method {
        EvalMethod::Mc => {
            if n < 1000 {
                return Err(invalid("Monte Carlo needs n >= 1000"));
            }
            let e = if reduced {
                expected_cost_mc_reduced(&rt, &p, seed, n)?
            } else {
                expected_cost_mc(&rt.team, &p, seed, n)?
            };
            vec![
                e.estimate.to_string(),
                e.stderr.to_string(),
                "mc".into(),
                seed.to_string(),
                String::new(),
                n.to_string(),
            ]
        }
        EvalMethod::Quadrature => {
            let v = if reduced {
                teamopt::evaluation::expected_cost_quadrature_reduced_with(&rt, &p, &quad.options())?
            } else {
                expected_cost_quadrature_with(&rt.team, &p, &quad.options())?
            };
            vec![
                v.to_string(),
                String::new(),
                "quadrature".into(),
                String::new(),
                quad.order.to_string(),
                String::new(),
            ]
        }
    };
    let bytes = csv_bytes(&["estimate", "stderr", "method", "seed", "order", "n"], &[row])?;
    sink.emit("evaluate.csv", &bytes)?;
    Ok(0)
}

fn initial_profile(team: &Team, cells: usize, actions: usize, gains: Option<&[f64]>) -> Result<Profile, Failure> {
    let zero = zero_profile(team, cells, actions)?;
    let Some(g) = gains else { return Ok(zero) };
    if g.len() != team.dms.len() {
        return Err(invalid(format!(
            "{} initial gains for {} decision makers",
            g.len(),
            team.dms.len()
        )));
    }
    Ok(zero
        .into_iter()
        .zip(g)
        .map(|(s, &g)| match s {
            Strategy::Deterministic(d) => {
                Strategy::Deterministic(DeterministicGridStrategy::from_fn(d.obs.clone(), d.act.clone(), |y| {
                    y.iter().map(|v| g * v).collect()
                }))
            }
            s => s,
        })
        .collect())
}

fn write_profile(sink: &Sink, team: &Team, profile: &Profile) -> Result<(), Failure> {
    if sink.out.is_none() {
        return Ok(());
    }
    for (d, s) in team.dms.iter().zip(profile) {
        let beh = match s {
            Strategy::Deterministic(det) => as_behavioral(det),
            Strategy::Behavioral(b) => b.clone(),
            Strategy::Linear(_) => continue,
        };
        let mut buf = Vec::new();
        write_strategy_csv(&beh, &mut buf)?;
        sink.emit(&strategy_file(d.agent, d.time), &buf)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LinearSummary {
    cost: f64,
    coefficients: Vec<f64>,
}

fn optimize(sink: &Sink, rt: &ReducedTeam, cmd: &Command) -> Outcome {
    let Command::Optimize {
        method,
        grid,
        actions,
        iters,
        tol,
        init_gains,
        coeff_lo,
        coeff_hi,
        coeff_steps,
        seed,
        n,
        quad,
        ..
    } = cmd
    else {
        unreachable!("optimize arguments")
    };
    let team = &rt.team;
    match method {
        OptMethod::Pbp => {
            let init = initial_profile(team, *grid, actions.unwrap_or(*grid), init_gains.as_deref())?;
            let opts = PbpOptions {
                max_iters: *iters,
                tol: *tol,
                quad: quad.options(),
            };
            let r = pbp_optimize(rt, &init, &opts)?;
            let rows: Vec<Vec<String>> = r
                .trace
                .iter()
                .map(|t| {
                    vec![
                        t.iteration.to_string(),
                        t.agent.to_string(),
                        t.time.to_string(),
                        t.cost.to_string(),
                    ]
                })
                .collect();
            sink.emit("trace.csv", &csv_bytes(&["iteration", "agent", "time", "cost"], &rows)?)?;
            write_profile(sink, team, &r.profile)?;
            eprintln!(
                "final cost {} after {} sweeps (converged: {})",
                r.final_cost(),
                r.sweeps,
                r.converged
            );
        }
        OptMethod::Linear => {
            let m = linear_coefficient_count(team);
            let ranges = vec![CoeffRange::new(*coeff_lo, *coeff_hi, *coeff_steps); m];
            let r = best_linear(team, &ranges)?;
            sink.emit_toml(
                "best_linear.toml",
                &LinearSummary {
                    cost: r.cost,
                    coefficients: r.coefficients,
                },
            )?;
        }
        OptMethod::RelaySearch => {
            let findings = relay_search(&default_grid())?;
            let rows: Vec<Vec<String>> = findings
                .iter()
                .map(|f| {
                    vec![
                        f.point.n.to_string(),
                        f.point.lambda.to_string(),
                        f.point.sigma_1.to_string(),
                        f.linear_cost.to_string(),
                        f.quantizer_model_cost.to_string(),
                    ]
                })
                .collect();
            let header = ["n", "lambda", "sigma_1", "linear_cost", "quantizer_cost"];
            sink.emit("relay_search.csv", &csv_bytes(&header, &rows)?)?;
            match verify_best(&findings, *seed, *n)? {
                Some(v) => {
                    eprintln!(
                        "best point n={} lambda={} sigma_1={}: quantizer {} +- {} vs linear {} (nonlinear wins: {})",
                        v.finding.point.n,
                        v.finding.point.lambda,
                        v.finding.point.sigma_1,
                        v.quantizer_mc.estimate,
                        v.quantizer_mc.stderr,
                        v.finding.linear_cost,
                        v.nonlinear_wins
                    );
                    if !v.nonlinear_wins {
                        return Ok(EXIT_CERT_FAIL);
                    }
                }
                None => {
                    eprintln!("no grid point where the quantizer model beats the best linear profile");
                    return Ok(EXIT_CERT_FAIL);
                }
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct C1Out {
    pass: bool,
    eps: Vec<f64>,
    /// `nan` where no ladder value worked.
    delta: Vec<f64>,
    vc_integral: f64,
    checked_box: (f64, f64),
    note: String,
}

#[derive(Serialize)]
struct LadderOut<'a> {
    eps: f64,
    k: f64,
    rungs: &'a [Rung],
    #[serde(skip_serializing_if = "Vec::is_empty")]
    tail: Vec<TailCheck>,
}

fn dm_index(team: &Team, dm: Option<&[usize]>) -> Result<usize, Failure> {
    match dm {
        None => Ok(0),
        Some([a, t]) => team
            .dm_index(*a, *t)
            .ok_or_else(|| invalid(format!("no decision maker ({a}, {t})"))),
        Some(_) => Err(invalid("--dm takes `agent,time`")),
    }
}

fn certify(sink: &Sink, cmd: &Command) -> Outcome {
    let Command::Certify {
        condition,
        kernel,
        variance,
        spec,
        expr,
        b,
        dm,
        k_half,
        m,
        search_box,
        eps,
        k,
        samples,
        seed,
        profile,
    } = cmd
    else {
        unreachable!("certify arguments")
    };
    match condition {
        Condition::C1 => {
            let r = check_condition_c1(&C1Kernel::from_name(kernel, *variance)?, &C1Options::default())?;
            let out = C1Out {
                pass: r.pass,
                eps: r.eps.clone(),
                delta: r.delta.iter().map(|d| d.unwrap_or(f64::NAN)).collect(),
                vc_integral: r.vc_integral,
                checked_box: r.checked_box,
                note: r.note.clone(),
            };
            sink.emit_toml("c1.toml", &out)?;
            Ok(if r.pass { 0 } else { EXIT_CERT_FAIL })
        }
        Condition::Ic => {
            let rt = static_reduce(&read_spec(spec.as_deref())?)?;
            let team = &rt.team;
            let f = match expr {
                IcExpr::Reduced => CostExpr::product(vec![team.cost_expr.clone(), rt.phi_prefix_expr(team.dms.len())?]),
                IcExpr::Slice => {
                    let r = dm_index(team, dm.as_deref())?;
                    let form = team
                        .form
                        .as_ref()
                        .ok_or_else(|| Error::FormMismatch(team.report.notes.join("; ")))?;
                    CostExpr::product(vec![form.dm_term(r), rt.phi_prefix_expr(r + 1)?])
                }
            };
            let group_b: Vec<Var> = if b.is_empty() {
                vec![team.dms[dm_index(team, dm.as_deref())?].act_var()]
            } else {
                b.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
            };
            let group_a: Vec<Var> = f.vars().into_iter().filter(|v| !group_b.contains(v)).collect();
            let da: usize = group_a.iter().map(|v| team.layout.slot(v).map_or(1, |s| s.1)).sum();
            let mut q = IcQuery::new(f, group_a, group_b, SpaceSpec::symmetric(da.max(1), *k_half), *m);
            q.search_box = *search_box;
            q.seed = *seed;
            let r = check_ic_class(&q)?;
            sink.emit_toml("ic.toml", &r)?;
            Ok(if r.pass {
                0
            } else if r.witness.is_empty() {
                EXIT_CERT_FAIL
            } else {
                EXIT_WITNESS
            })
        }
        Condition::Tightness | Condition::Sequential => {
            let rt = static_reduce(&read_spec(spec.as_deref())?)?;
            let mut rungs = sequential_tightness(&rt, *k, *eps, *search_box, *seed)?;
            let mut tail = Vec::new();
            if *samples > 0 {
                let p = load_profile(&rt.team, profile)?;
                tail = sequential_tail_mass(&rt, &p, &rungs, seed.wrapping_add(1), *samples)?;
            }
            if *condition == Condition::Tightness {
                let r = dm_index(&rt.team, dm.as_deref())?;
                rungs = vec![rungs.swap_remove(r)];
                if !tail.is_empty() {
                    tail = vec![tail.swap_remove(r)];
                }
            }
            // Fails only when the excess over the bound is statistically clear.
            let ok = tail.iter().all(|t| t.mass < t.limit + 3.0 * t.stderr);
            sink.emit_toml(
                "tightness.toml",
                &LadderOut {
                    eps: *eps,
                    k: *k,
                    rungs: &rungs,
                    tail,
                },
            )?;
            Ok(if ok { 0 } else { EXIT_CERT_FAIL })
        }
    }
}

fn counterexample(sink: &Sink, nmax: u32) -> Outcome {
    let r = weak_limit_report(nmax, &default_catalog())?;
    let mut buf = Vec::new();
    r.write_csv(&mut buf)?;
    sink.emit("counterexample.csv", &buf)?;
    Ok(0)
}

fn run(cli: Cli) -> Outcome {
    configure_threads()?;
    let sink = Sink { out: cli.out };
    match &cli.command {
        Command::Benchmark { name, params } => benchmark(&sink, name, params),
        Command::Reduce { spec } => reduce(&sink, spec),
        Command::Evaluate {
            spec,
            profile,
            method,
            reduced,
            seed,
            n,
            quad,
        } => evaluate(&sink, spec, profile, *method, *reduced, *seed, *n, quad),
        cmd @ Command::Optimize { spec, .. } => {
            let rt = static_reduce(&read_spec(spec.spec.as_deref())?)?;
            optimize(&sink, &rt, cmd)
        }
        cmd @ Command::Certify { .. } => certify(&sink, cmd),
        Command::Counterexample { nmax } => counterexample(&sink, *nmax),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
