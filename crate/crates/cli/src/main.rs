mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use supermarket_core::fixedpoint::{solve_pi, tail_table, SolveOptions};
use supermarket_core::meanfield::{integrate, random_state, FractionVector, IntegrateOptions};
use supermarket_core::perf::{self, Grid, DEFAULT_EPS};
use supermarket_core::simulator::{self, Sampling, SimConfig};
use supermarket_core::validate::{self, Outcome};
use supermarket_core::{par::Exec, Error, ModelSpec};

use output::{num, sibling, write_csv, Provenance, Table};

#[derive(Parser)]
#[command(name = "supermarket", version, about = "Power-of-d load balancing with MAP arrivals and PH service")]
struct Cli {
    /// Directory for outputs written without an explicit --out.
    #[arg(long, global = true, env = "SUPERMARKET_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for the fixed point and write its levels.
    FixedPoint(FixedPointArgs),
    /// Integrate the mean-field ODE and write the trajectory.
    MeanField(MeanFieldArgs),
    /// Simulate N servers and write estimates and sample paths.
    Simulate(SimulateArgs),
    /// Run coupled systems that differ only in d.
    Couple(CoupleArgs),
    /// Closed-form performance measures.
    Perf(PerfArgs),
    /// Run the acceptance suite, or model checks with --model.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model JSON: {"map":{"C","D"},"ph":{"alpha","T"},"d"}
    #[arg(long)]
    model: PathBuf,
    /// Override the number of sampled servers.
    #[arg(long, value_parser = positive_usize)]
    d: Option<usize>,
}

#[derive(Args)]
struct FixedPointArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Initial truncation level.
    #[arg(long = "K", default_value_t = 40, value_parser = positive_usize)]
    k: usize,
    #[arg(long, default_value_t = 1e-8, value_parser = positive_f64)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeanFieldArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 50.0, value_parser = positive_f64)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-8, value_parser = positive_f64)]
    tol: f64,
    /// Number of equally spaced output times after t = 0.
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    samples: usize,
    /// empty, full:<depth> or random:<levels>
    #[arg(long, default_value = "empty")]
    init: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200.0, value_parser = positive_f64)]
    horizon: f64,
    #[arg(long, default_value_t = 0.0)]
    warmup: f64,
    #[arg(long, default_value_t = 10, value_parser = positive_usize)]
    replications: usize,
    /// Draw the d candidates without replacement.
    #[arg(long)]
    without_replacement: bool,
    /// Run replications on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Spacing of recorded snapshots; none when omitted.
    #[arg(long, value_parser = positive_f64)]
    sample_every: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoupleArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Strictly increasing choice counts starting at 1.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    d_list: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PerfArgs {
    /// Example table 1-4.
    #[arg(long, conflicts_with = "model", value_parser = clap::value_parser!(u8).range(1..=4))]
    example: Option<u8>,
    #[arg(long, required_unless_present = "example")]
    model: Option<PathBuf>,
    #[arg(long, value_parser = positive_usize)]
    d: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_parser = positive_usize)]
    d: Option<usize>,
    /// Also write the outcome table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s}")),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got {s}")),
    }
}

/// Failure carrying the exit code and, for numerical trouble, diagnostics.
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error, String),
    Checks,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn core(e: Error, what: &str) -> Failure {
    if e.is_input_error() {
        return Failure::Config(anyhow::Error::new(e).context(what.to_string()));
    }
    let mut diag = format!("command: {what}\nerror: {e}\n");
    if let Error::Integration { t, reason, last_state } = &e {
        diag.push_str(&format!("t: {t}\nreason: {reason}\nu0: {:?}\n", last_state.u0));
        for (k, l) in last_state.levels.iter().enumerate() {
            diag.push_str(&format!("level {}: {:?}\n", k + 1, l));
        }
    }
    Failure::Numerical(anyhow::Error::new(e).context(what.to_string()), diag)
}

fn load_model(args: &ModelArgs) -> Result<ModelSpec, Failure> {
    load_model_path(&args.model, args.d)
}

fn load_model_path(path: &Path, d: Option<usize>) -> Result<ModelSpec, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    let m = ModelSpec::from_json(&text).map_err(|e| core(e, "loading model"))?;
    match d {
        Some(d) => m.with_d(d).map_err(|e| core(e, "setting d")),
        None => Ok(m),
    }
}

struct Ctx {
    out_dir: PathBuf,
}

impl Ctx {
    fn target(&self, out: &Option<PathBuf>, default: &str) -> PathBuf {
        out.clone().unwrap_or_else(|| self.out_dir.join(default))
    }
}

fn fixed_point(ctx: &Ctx, a: &FixedPointArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let sol = solve_pi(&model, &SolveOptions { k: a.k, tol: a.tol })
        .map_err(|e| core(e, "fixed-point"))?;
    let prov = Provenance { model_hash: Some(model.hash()), seed: None };
    let mut t = Table::new(["level", "tail", "closed_form", "rel_dev", "zeta"]);
    t.push(vec!["0".into(), num(1.0), num(1.0), num(0.0), String::new()]);
    for ((k, tail, formula), z) in tail_table(&sol, model.d).into_iter().zip(&sol.zeta) {
        let dev = if formula > 0.0 { (tail - formula).abs() / formula } else { f64::NAN };
        t.push(vec![k.to_string(), num(tail), num(formula), num(dev), num(*z)]);
    }
    let path = ctx.target(&a.out, "pi.csv");
    write_csv(&path, &prov, &t)?;
    let mut c = Table::new(["level", "map_phase", "service_phase", "value"]);
    for (i, v) in sol.pi0.iter().enumerate() {
        c.push(vec!["0".into(), i.to_string(), String::new(), num(*v)]);
    }
    let m_b = model.m_b();
    for (k, level) in sol.pi.iter().enumerate() {
        for (idx, v) in level.iter().enumerate() {
            c.push(vec![(k + 1).to_string(), (idx / m_b).to_string(), (idx % m_b).to_string(), num(*v)]);
        }
    }
    write_csv(&sibling(&path, "components"), &prov, &c)?;
    println!(
        "rho={:.6} K={} residual={:.2e} convention={:?} sweeps={} max tail deviation from closed form={:.2e}",
        sol.rho,
        sol.k(),
        sol.residual,
        sol.convention,
        sol.sweeps,
        sol.tail_deviation
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn initial_state(model: &ModelSpec, init: &str, seed: u64) -> Result<FractionVector, Failure> {
    let bad = || Failure::Config(anyhow::anyhow!("--init must be empty, full:<depth> or random:<levels>, got {init}"));
    let (kind, arg) = init.split_once(':').unwrap_or((init, ""));
    let depth = || arg.parse::<usize>().ok().filter(|v| *v > 0).ok_or_else(bad);
    match kind {
        "empty" if arg.is_empty() => Ok(FractionVector::empty(model)),
        "full" => Ok(FractionVector::full(model, depth()?)),
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(random_state(model.m_a(), model.m_b(), depth()?, &mut rng))
        }
        _ => Err(bad()),
    }
}

fn mean_field(ctx: &Ctx, a: &MeanFieldArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let g = initial_state(&model, &a.init, a.seed)?;
    let times: Vec<f64> = (0..=a.samples).map(|i| a.t_end * i as f64 / a.samples as f64).collect();
    let opts = IntegrateOptions { tol: a.tol, samples: Some(times), ..Default::default() };
    let traj = integrate(&model, &g, a.t_end, &opts).map_err(|e| core(e, "mean-field"))?;
    let kmax = traj.states.iter().map(|s| s.k()).max().unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((0..model.m_a()).map(|i| format!("u0_{i}")));
    header.extend((1..=kmax).map(|k| format!("tail_{k}")));
    let mut t = Table::new(header);
    for (time, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![num(*time)];
        row.extend(s.u0.iter().map(|v| num(*v)));
        let tails = s.tails();
        row.extend((0..kmax).map(|k| num(tails.get(k).copied().unwrap_or(0.0))));
        t.push(row);
    }
    let path = ctx.target(&a.out, "trajectory.csv");
    write_csv(&path, &Provenance { model_hash: Some(model.hash()), seed: Some(a.seed) }, &t)?;
    let st = &traj.stats;
    println!(
        "accepted={} rejected={} clamped={} levels={} max u0 drift={:.1e} monotonicity violations={}",
        st.accepted, st.rejected, st.clamped, st.final_levels, st.max_u0_drift, st.monotone_violations
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn sim_config(a: &SimArgs) -> Result<(SimConfig, Exec), Failure> {
    let model = load_model(&a.model)?;
    let mut cfg = SimConfig::new(model, a.n, a.horizon, a.seed);
    cfg.warmup = a.warmup;
    cfg.replications = a.replications;
    if a.without_replacement {
        cfg.sampling = Sampling::WithoutReplacement;
    }
    let exec = if a.sequential { Exec::Sequential } else { Exec::default() };
    Ok((cfg, exec))
}

fn estimate_row(t: &mut Table, name: &str, k: &str, e: &simulator::Estimate) {
    t.push(vec![
        name.into(),
        k.into(),
        num(e.mean),
        e.half_width.map(num).unwrap_or_default(),
    ]);
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<(), Failure> {
    let (mut cfg, exec) = sim_config(&a.sim)?;
    if let Some(step) = a.sample_every {
        let n = (cfg.horizon / step).floor() as usize;
        cfg.sample_times = (0..=n).map(|i| i as f64 * step).collect();
    }
    let res = simulator::run_with(&cfg, exec).map_err(|e| core(e, "simulate"))?;
    let prov = Provenance { model_hash: Some(cfg.model.hash()), seed: Some(cfg.seed) };
    let mut t = Table::new(["quantity", "index", "mean", "half_width_95"]);
    for (k, e) in res.tails.iter().enumerate() {
        estimate_row(&mut t, "tail", &(k + 1).to_string(), e);
    }
    for (i, e) in res.u0.iter().enumerate() {
        estimate_row(&mut t, "map_phase", &i.to_string(), e);
    }
    estimate_row(&mut t, "total", "", &res.total);
    estimate_row(&mut t, "arrival_rate", "", &res.arrival_rate);
    let path = ctx.target(&a.out, "simulation.csv");
    write_csv(&path, &prov, &t)?;
    if !cfg.sample_times.is_empty() {
        let kmax = res
            .replications
            .iter()
            .flat_map(|r| r.samples.iter().map(|s| s.tails.len()))
            .max()
            .unwrap_or(0);
        let mut header: Vec<String> = ["replication", "t", "total", "map_phase"].map(String::from).to_vec();
        header.extend((1..=kmax).map(|k| format!("tail_{k}")));
        let mut s = Table::new(header);
        for r in &res.replications {
            for smp in &r.samples {
                let mut row = vec![r.replication.to_string(), num(smp.t), smp.total.to_string(), smp.map_phase.to_string()];
                row.extend((0..kmax).map(|k| num(smp.tails.get(k).copied().unwrap_or(0.0))));
                s.push(row);
            }
        }
        write_csv(&sibling(&path, "samples"), &prov, &s)?;
    }
    println!(
        "total={:.4} tail_1={:.4} arrival_rate={:.4} over {} replications",
        res.total.mean,
        res.tails.first().map_or(0.0, |e| e.mean),
        res.arrival_rate.mean,
        res.replications.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn couple(ctx: &Ctx, a: &CoupleArgs) -> Result<(), Failure> {
    let (cfg, exec) = sim_config(&a.sim)?;
    let rep = simulator::coupled_run_with(&cfg, &a.d_list, exec).map_err(|e| core(e, "couple"))?;
    let prov = Provenance { model_hash: Some(cfg.model.hash()), seed: Some(cfg.seed) };
    let mut t = Table::new(["d", "mean_total", "violations_to_next", "t_stat_to_next"]);
    for (i, d) in rep.d_list.iter().enumerate() {
        t.push(vec![
            d.to_string(),
            num(rep.mean[i]),
            rep.violations.get(i).map(|v| v.to_string()).unwrap_or_default(),
            rep.t_stat.get(i).map(|v| num(*v)).unwrap_or_default(),
        ]);
    }
    let path = ctx.target(&a.out, "coupling.csv");
    write_csv(&path, &prov, &t)?;
    let mut header = vec!["replication".to_string(), "stream_key".to_string()];
    header.extend(rep.d_list.iter().map(|d| format!("total_d{d}")));
    let mut r = Table::new(header);
    for (i, (key, totals)) in rep.keys.iter().zip(&rep.totals).enumerate() {
        let mut row = vec![i.to_string(), format!("{key:016x}")];
        row.extend(totals.iter().map(|v| num(*v)));
        r.push(row);
    }
    write_csv(&sibling(&path, "replications"), &prov, &r)?;
    println!(
        "monotone in every replication: {} (violations {:?})",
        rep.monotone_everywhere(),
        rep.violations
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn perf_cmd(ctx: &Ctx, a: &PerfArgs) -> Result<(), Failure> {
    let mut t = Table::new(["example", "series", "param", "value", "d", "rho", "eq", "et", "stable"]);
    let (hash, name) = if let Some(which) = a.example {
        let rows = perf::example_tables(which, &Grid::default()).map_err(|e| core(e, "perf"))?;
        for r in rows {
            t.push(vec![
                r.example.to_string(),
                r.series,
                r.param.into(),
                num(r.value),
                r.d.to_string(),
                num(r.rho),
                num(r.eq),
                num(r.et),
                r.stable.to_string(),
            ]);
        }
        (None, format!("example{which}.csv"))
    } else {
        let path = a.model.as_ref().expect("clap enforces --model or --example");
        let model = load_model_path(path, a.d)?;
        if model.m_a() != 1 {
            eprintln!("note: closed forms use ρ only; MAP correlation is not reflected");
        }
        let r = perf::perf_report(&model.ph, model.lambda(), model.d, DEFAULT_EPS)
            .map_err(|e| core(e, "perf"))?;
        t.push(vec![
            String::new(),
            "model".into(),
            "d".into(),
            num(r.d as f64),
            r.d.to_string(),
            num(r.rho),
            num(r.eq),
            num(r.et),
            "true".into(),
        ]);
        println!("rho={:.6} E[Q]={:.10} E[T]={:.10}", r.rho, r.eq, r.et);
        (Some(model.hash()), "perf.csv".to_string())
    };
    let path = ctx.target(&a.out, &name);
    write_csv(&path, &Provenance { model_hash: hash, seed: None }, &t)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn validate_cmd(ctx: &Ctx, a: &ValidateArgs) -> Result<(), Failure> {
    let (outcomes, hash): (Vec<Outcome>, Option<String>) = match &a.model {
        Some(p) => {
            let model = load_model_path(p, a.d)?;
            (validate::run_model_checks(&model, Exec::default()), Some(model.hash()))
        }
        None => (validate::run_suite(Exec::default()), None),
    };
    for o in &outcomes {
        println!("{}", o.line());
    }
    if let Some(out) = &a.out {
        let mut t = Table::new(["id", "name", "status", "seconds", "detail"]);
        for o in &outcomes {
            let status = match (o.gating, o.passed) {
                (false, _) => "INFO",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            t.push(vec![o.id.clone(), o.name.clone(), status.into(), num(o.elapsed.as_secs_f64()), o.detail.clone()]);
        }
        let path = ctx.target(&Some(out.clone()), "validate.csv");
        write_csv(&path, &Provenance { model_hash: hash, seed: None }, &t)?;
    }
    if validate::all_passed(&outcomes) {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { out_dir: cli.out_dir.clone() };
    let res = match &cli.cmd {
        Cmd::FixedPoint(a) => fixed_point(&ctx, a),
        Cmd::MeanField(a) => mean_field(&ctx, a),
        Cmd::Simulate(a) => simulate(&ctx, a),
        Cmd::Couple(a) => couple(&ctx, a),
        Cmd::Perf(a) => perf_cmd(&ctx, a),
        Cmd::Validate(a) => validate_cmd(&ctx, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e, diag)) => {
            eprintln!("error: {e:#}");
            let path = ctx.out_dir.join("diagnostics.txt");
            let written = fs::create_dir_all(&ctx.out_dir).and_then(|_| fs::write(&path, diag));
            match written {
                Ok(()) => eprintln!("diagnostics written to {}", path.display()),
                Err(w) => eprintln!("could not write diagnostics to {}: {w}", path.display()),
            }
            ExitCode::from(3)
        }
        Err(Failure::Checks) => ExitCode::from(1),
    }
}
