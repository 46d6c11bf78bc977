//! `fairdiv` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 budget exceeded
//! (brute-force enumeration too large, branch-and-bound node budget hit,
//! or repair stopped at its pass cap).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairdiv::exact::{
    optimal_nw_bnb_with_budget, optimal_nw_brute_with_budget, optimal_uw, DEFAULT_BRUTE_BUDGET, DEFAULT_NODE_BUDGET,
};
use fairdiv::fairformer::{load_checkpoint, save_checkpoint, train, ModelConfig, ModelParams, Sampler};
use fairdiv::gen::Distribution;
use fairdiv::harness::{
    bench, evaluate, read_records, write_records, write_report, write_timings, CohortManifest, EvalOptions, Format,
    Method, DEFAULT_MAX_PASSES,
};
use fairdiv::repair::ef1_quick_repair;
use fairdiv::{Allocation, Error, Instance};
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(
    name = "fairdiv",
    version,
    about = "Fair division of indivisible goods: allocators, exact optima, EF1 repair and evaluation"
)]
struct Cli {
    /// Base seed for generation and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output files. Single-result verbs print to stdout without it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Format of tabular outputs.
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate instances, or a cohort manifest with --as-manifest.
    Gen(GenArgs),
    /// Allocate one instance.
    Alloc(AllocArgs),
    /// Run EF1 repair on an allocation.
    Repair(RepairArgs),
    /// Exact welfare optimum of one instance.
    Exact(ExactArgs),
    /// Train a FairFormer checkpoint.
    Train(TrainArgs),
    /// Evaluate methods on a cohort and write per-instance records.
    Eval(EvalArgs),
    /// Time methods on a cohort.
    Bench(BenchArgs),
    /// Aggregate tables, plot data and paired comparisons from records.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CohortArgs {
    /// Cohort manifest JSON; overrides the flags below.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    /// Sizes as `NxM`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_size, default_value = "3x6")]
    sizes: Vec<(usize, usize)>,
    /// Instances per size; seeds run from --seed upward.
    #[arg(long, default_value_t = 100)]
    count: u64,
    /// Methods, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "rr,ece,maxutil+repair")]
    methods: Vec<Method>,
    /// Pareto shape.
    #[arg(long)]
    alpha: Option<f64>,
    /// Correlation weight.
    #[arg(long)]
    lambda: Option<f64>,
}

impl CohortArgs {
    fn manifest(&self, seed: u64) -> Result<CohortManifest, Error> {
        if let Some(p) = &self.manifest {
            return CohortManifest::load(p);
        }
        let mut c = CohortManifest::new(
            self.dist,
            &self.sizes,
            (seed..seed + self.count).collect(),
            self.methods.clone(),
        );
        if let Some(a) = self.alpha {
            c = c.with_param("alpha", a);
        }
        if let Some(l) = self.lambda {
            c = c.with_param("lambda", l);
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    /// Write `manifest.json` instead of instance files.
    #[arg(long = "as-manifest")]
    as_manifest: bool,
}

#[derive(Args, Debug)]
struct AllocArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "rr")]
    method: Method,
    /// Checkpoint for FairFormer methods.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_PASSES)]
    max_passes: usize,
}

#[derive(Args, Debug)]
struct RepairArgs {
    /// Allocation JSON (`owner` or `probs`).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_PASSES)]
    max_passes: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Objective {
    Nw,
    Uw,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExactMethodArg {
    Brute,
    Bnb,
}

#[derive(Args, Debug)]
struct ExactArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "nw")]
    objective: Objective,
    #[arg(long, value_enum, default_value = "bnb")]
    method: ExactMethodArg,
    /// Assignment budget (brute) or node budget (bnb).
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `tiny`, `small_10x20` or `medium_30x60`.
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    /// Training sizes as `NxM`, comma separated; one is drawn per instance.
    #[arg(long, value_delimiter = ',', value_parser = parse_size, default_value = "3x6")]
    sizes: Vec<(usize, usize)>,
    /// Training steps; defaults to the preset's.
    #[arg(long)]
    steps: Option<usize>,
    /// Instances per step; defaults to the preset's.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate; defaults to the preset's.
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint path; defaults to `model.ckpt` in --out-dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    /// Checkpoint for FairFormer methods.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Branch-and-bound node budget for the Nash optimum.
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    node_budget: u64,
    /// Repair pass limit.
    #[arg(long, default_value_t = DEFAULT_MAX_PASSES)]
    max_passes: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    /// Checkpoint for FairFormer methods.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Timed runs per instance and method.
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Records file (`.csv` or `.json`).
    #[arg(long)]
    records: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("size `{s}` is not of the form NxM"))?;
    let n = n.trim().parse().map_err(|e| format!("size `{s}`: {e}"))?;
    let m = m.trim().parse().map_err(|e| format!("size `{s}`: {e}"))?;
    Ok((n, m))
}

/// How a run ended, beyond plain success.
enum Outcome {
    Done,
    BudgetExceeded,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::BudgetExceeded { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::BudgetExceeded) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Alloc(a) => alloc(cli, a),
        Command::Repair(a) => repair(cli, a),
        Command::Exact(a) => exact(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Bench(a) => bench_cmd(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Error> {
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Prints `text` or writes it to `name` inside --out-dir.
fn emit_text(cli: &Cli, name: &str, text: &str) -> Result<(), Error> {
    match &cli.out_dir {
        Some(_) => {
            let path = out_dir(cli)?.join(name);
            fs::write(&path, format!("{text}\n"))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load_model(path: Option<&Path>) -> Result<Option<(ModelParams, String)>, Error> {
    path.map(|p| {
        let bytes = fs::read(p)?;
        let (params, _) = load_checkpoint(p)?;
        Ok((params, format!("{:x}", Sha256::digest(&bytes))))
    })
    .transpose()
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<Outcome, Error> {
    let manifest = a.cohort.manifest(cli.seed)?;
    if a.as_manifest {
        let path = out_dir(cli)?.join("manifest.json");
        manifest.save(&path)?;
        eprintln!("wrote {}", path.display());
        return Ok(Outcome::Done);
    }
    for (n, m, seed) in manifest.jobs() {
        let inst = manifest.gen_spec(n, m, seed).generate()?;
        emit_text(
            cli,
            &format!("{}.json", manifest.instance_id(n, m, seed)),
            &inst.to_json()?,
        )?;
    }
    Ok(Outcome::Done)
}

fn alloc(cli: &Cli, a: &AllocArgs) -> Result<Outcome, Error> {
    let inst = Instance::load(&a.instance)?;
    let model = load_model(a.ckpt.as_deref())?;
    let (alloc, repair) = a.method.run(&inst, model.as_ref().map(|m| &m.0), a.max_passes)?;
    emit_text(cli, "alloc.json", &Allocation::Discrete(alloc).to_json()?)?;
    Ok(match repair {
        Some(r) if !r.converged => Outcome::BudgetExceeded,
        _ => Outcome::Done,
    })
}

fn repair(cli: &Cli, a: &RepairArgs) -> Result<Outcome, Error> {
    let inst = Instance::load(&a.instance)?;
    let start = Allocation::from_json(&fs::read_to_string(&a.input)?)?.into_discrete();
    let r = ef1_quick_repair(&inst, &start, a.max_passes)?;
    let doc = json!({
        "owner": r.alloc.owner,
        "passes_executed": r.passes_executed,
        "passes_with_transfers": r.passes_with_transfers(),
        "transfers": r.transfers,
        "converged": r.converged,
    });
    emit_text(cli, "repaired.json", &doc.to_string())?;
    Ok(if r.converged {
        Outcome::Done
    } else {
        Outcome::BudgetExceeded
    })
}

fn exact(cli: &Cli, a: &ExactArgs) -> Result<Outcome, Error> {
    let inst = Instance::load(&a.instance)?;
    let (doc, proven) = match a.objective {
        Objective::Uw => {
            let alloc = fairdiv::baselines::max_util(&inst);
            (
                json!({"best_uw": optimal_uw(&inst), "owner": alloc.owner, "nodes": 0, "proven": true}),
                true,
            )
        }
        Objective::Nw => {
            let r = match a.method {
                ExactMethodArg::Brute => optimal_nw_brute_with_budget(&inst, a.budget.unwrap_or(DEFAULT_BRUTE_BUDGET))?,
                ExactMethodArg::Bnb => {
                    optimal_nw_bnb_with_budget(&inst, Some(a.budget.unwrap_or(DEFAULT_NODE_BUDGET)))?
                }
            };
            let best = if r.best_log_nash.is_finite() {
                json!(r.best_log_nash)
            } else {
                json!(null)
            };
            (
                json!({"best_log_nash": best, "owner": r.best_alloc.owner, "nodes": r.nodes_explored, "proven": r.proven}),
                r.proven,
            )
        }
    };
    emit_text(cli, "exact.json", &doc.to_string())?;
    Ok(if proven { Outcome::Done } else { Outcome::BudgetExceeded })
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<Outcome, Error> {
    let mut config = ModelConfig {
        seed: cli.seed,
        ..ModelConfig::preset(&a.preset)?
    };
    if let Some(s) = a.steps {
        config.train_steps = s;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if a.sizes.is_empty() {
        return Err(Error::InvalidArgument("no training sizes".into()));
    }
    let sampler = Sampler {
        dist: a.dist,
        sizes: a.sizes.clone(),
        ..Sampler::fixed(a.dist, 1, 1)
    };
    let outcome = train(&config, |rng| sampler.sample(rng))?;
    let dir = out_dir(cli)?;
    let path = a.out.clone().unwrap_or_else(|| dir.join("model.ckpt"));
    save_checkpoint(&outcome.params, &path)?;
    let losses = dir.join("losses.csv");
    let body: String = outcome
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}\n"))
        .collect();
    fs::write(&losses, format!("step,loss\n{body}"))?;
    eprintln!(
        "trained {} steps, final loss {:.6}; wrote {} and {}",
        config.train_steps,
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        path.display(),
        losses.display()
    );
    Ok(Outcome::Done)
}

/// Loads the model and checks it against the manifest's recorded hash.
fn cohort_model(manifest: &mut CohortManifest, ckpt: Option<&Path>) -> Result<Option<ModelParams>, Error> {
    let model = load_model(ckpt)?;
    if let Some((_, hash)) = &model {
        match &manifest.checkpoint_hash {
            Some(h) if h != hash => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint hash {hash} does not match manifest {h}"
                )));
            }
            _ => manifest.checkpoint_hash = Some(hash.clone()),
        }
    }
    Ok(model.map(|m| m.0))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<Outcome, Error> {
    let mut manifest = a.cohort.manifest(cli.seed)?;
    let model = cohort_model(&mut manifest, a.ckpt.as_deref())?;
    let opts = EvalOptions {
        node_budget: a.node_budget,
        max_passes: a.max_passes,
    };
    let records = evaluate(&manifest, model.as_ref(), &opts)?;
    let dir = out_dir(cli)?;
    let path = dir.join(format!("records.{}", cli.format.extension()));
    write_records(&path, &records, cli.format)?;
    manifest.save(dir.join("manifest.json"))?;
    let unproven = records.iter().filter(|r| r.nash_ratio.is_none()).count();
    eprintln!("wrote {} records to {}", records.len(), path.display());
    if unproven > 0 {
        eprintln!("{unproven} records have no Nash ratio (optimum not proven within the node budget)");
    }
    Ok(Outcome::Done)
}

fn bench_cmd(cli: &Cli, a: &BenchArgs) -> Result<Outcome, Error> {
    let mut manifest = a.cohort.manifest(cli.seed)?;
    let model = cohort_model(&mut manifest, a.ckpt.as_deref())?;
    let table = bench(&manifest, model.as_ref(), a.repetitions, a.warmup)?;
    let path = out_dir(cli)?.join(format!("timings.{}", cli.format.extension()));
    write_timings(&path, &table, cli.format)?;
    for r in &table.rows {
        eprintln!(
            "{:<18} {:>3}x{:<3} mean {:>10.2} us  median {:>10.2} us",
            r.method.to_string(),
            r.n,
            r.m,
            r.mean_us,
            r.median_us
        );
    }
    Ok(Outcome::Done)
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<Outcome, Error> {
    let records = read_records(&a.records)?;
    for p in write_report(out_dir(cli)?, &records, cli.format)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(Outcome::Done)
}
