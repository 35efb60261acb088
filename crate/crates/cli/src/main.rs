use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use polyalloc::debias::{self, DebiasTerms};
use polyalloc::envs::EnvSpec;
use polyalloc::nn::Checkpoint;
use polyalloc::polytope::{gen_hull_polytope, gen_random_halfspaces};
use polyalloc::ppo::{self, TrainConfig, Trainer, METRICS_HEADER};
use polyalloc::sampler::{self, ConstantShapes, EntityOrder};
use polyalloc::{rng_from_seed, Error, Polytope};

const SAMPLE_CSV_HELP: &str = "Output CSV: header `index,a1,...,an`, one row per allocation in entity order, \
then a summary row whose index column is `mean`. With --count 0 only the header is written.";

const TRAIN_HELP: &str = "Reads a JSON run config and writes into its output directory: `config.json` (resolved \
config), `terms.json` (de-bias terms), `metrics.csv` with header `steps,mean_reward,entropy,violations,wall_ms`, \
and `checkpoint.json` (plus `checkpoint-<steps>.json` every `checkpoint_every` iterations).";

#[derive(Parser)]
#[command(name = "polyalloc", version, about = "Constraint-satisfying allocation policies over convex polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-step de-biasing terms from uniform samples.
    Debias {
        #[command(flatten)]
        source: PolytopeSource,
        /// Uniform samples used for the fit.
        #[arg(long, default_value_t = debias::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "forward")]
        order: EntityOrder,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw allocations with fixed shapes.
    #[command(after_help = SAMPLE_CSV_HELP)]
    Sample {
        #[command(flatten)]
        source: PolytopeSource,
        /// De-bias terms to use as shapes.
        #[arg(long, conflicts_with = "flat")]
        terms: Option<PathBuf>,
        /// Use Beta(1, 1) at every step.
        #[arg(long)]
        flat: bool,
        #[arg(long, default_value_t = 2500)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "forward")]
        order: EntityOrder,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy with PPO.
    #[command(after_help = TRAIN_HELP)]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a trained policy and report episode returns.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Take the mean of every step's law instead of sampling.
        #[arg(long)]
        eval_deterministic: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a generated polytope as JSON.
    GenPolytope {
        #[command(flatten)]
        source: PolytopeSource,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Simplex,
    Random,
    Hull,
}

#[derive(Args)]
struct PolytopeSource {
    /// Polytope JSON file.
    #[arg(long, conflicts_with = "gen")]
    polytope: Option<PathBuf>,
    #[arg(long, value_enum)]
    gen: Option<Generator>,
    /// Number of entities for generated polytopes.
    #[arg(long)]
    n: Option<usize>,
    /// Constraint rows for `--gen random`.
    #[arg(long, default_value_t = 5)]
    rows: usize,
    /// Points for `--gen hull`.
    #[arg(long, default_value_t = 30)]
    points: usize,
    #[arg(long, default_value_t = 1)]
    gen_seed: u64,
}

impl PolytopeSource {
    fn resolve(&self) -> anyhow::Result<Polytope> {
        if let Some(path) = &self.polytope {
            return Polytope::load(path).with_context(|| format!("loading {}", path.display()));
        }
        let Some(generator) = self.gen else { bail!(config_error("give --polytope FILE or --gen")) };
        let Some(n) = self.n else { bail!(config_error("--gen needs --n")) };
        Ok(match generator {
            Generator::Simplex => Polytope::simplex(n)?,
            Generator::Random => gen_random_halfspaces(n, self.rows, self.gen_seed)?,
            Generator::Hull => gen_hull_polytope(n, self.points, self.gen_seed)?,
        })
    }
}

fn config_error(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct DebiasConfig {
    enabled: bool,
    k: usize,
    /// Existing terms file; must match the arranged polytope.
    reuse: Option<PathBuf>,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig { enabled: true, k: debias::DEFAULT_K, reuse: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    env: EnvSpec,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    debias: DebiasConfig,
    #[serde(default)]
    order: EntityOrder,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    /// Iterations between numbered checkpoints; 0 keeps only the latest.
    #[serde(default)]
    checkpoint_every: usize,
    /// Overrides `train.seed` when present.
    #[serde(default)]
    seed: Option<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_debias(source: &PolytopeSource, k: usize, seed: u64, order: EntityOrder, out: &Path) -> anyhow::Result<()> {
    let p = order.arrange(&source.resolve()?)?;
    let terms = debias::fit(&p, k, &mut rng_from_seed(seed))?;
    let rate = sampler::acceptance_rate(&p, 10_000, &mut rng_from_seed(seed ^ 0xACCE))?;
    println!("acceptance rate {rate:.4}");
    for (i, (a, b)) in terms.alphas.iter().zip(&terms.betas).enumerate() {
        println!("step {}: alpha {a:.4} beta {b:.4}", i + 1);
    }
    terms.save(out)?;
    Ok(())
}

fn cmd_sample(
    source: &PolytopeSource,
    terms: Option<&Path>,
    flat: bool,
    count: usize,
    seed: u64,
    order: EntityOrder,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let p = order.arrange(&source.resolve()?)?;
    let n = p.n();
    let shapes = match (terms, flat) {
        (Some(path), false) => DebiasTerms::load_for(path, &p)?.provider(),
        (None, true) => ConstantShapes::flat(n),
        _ => bail!(config_error("give exactly one of --terms FILE or --flat")),
    };
    let mut w: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let header: Vec<String> = (1..=n).map(|i| format!("a{i}")).collect();
    writeln!(w, "index,{}", header.join(","))?;
    let mut rng = rng_from_seed(seed);
    let mut sums = vec![0.0; n];
    for i in 0..count {
        let a = order.to_entities(&sampler::sample(&p, &shapes, &[], &mut rng)?.action);
        sums.iter_mut().zip(&a).for_each(|(s, v)| *s += v);
        writeln!(w, "{i},{}", join(&a))?;
    }
    if count > 0 {
        let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        writeln!(w, "mean,{}", join(&means))?;
    }
    w.flush()?;
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn cmd_train(config: &Path, out_dir: Option<&Path>) -> anyhow::Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("run config: {e}")))?;
    if let Some(dir) = out_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    if let Some(seed) = cfg.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), &cfg)?;

    let p = cfg.order.arrange(&cfg.env.polytope()?)?;
    let terms = match (&cfg.debias.reuse, cfg.debias.enabled) {
        (Some(path), _) => DebiasTerms::load_for(path, &p)?,
        (None, true) => debias::fit(&p, cfg.debias.k, &mut rng_from_seed(cfg.train.seed))?,
        (None, false) => DebiasTerms::flat(&p),
    };
    terms.save(dir.join("terms.json"))?;

    let meta = serde_json::json!({ "env": cfg.env, "order": cfg.order });
    let mut trainer = Trainer::new(&cfg.env, &terms, cfg.order, cfg.train.clone())?;
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;
    let mut iteration = 0usize;
    let result = trainer.train_with(|rec, t| {
        writeln!(metrics, "{}", rec.csv_row())?;
        metrics.flush()?;
        iteration += 1;
        let ck = t.checkpoint(meta.clone());
        if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 {
            ck.save(dir.join(format!("checkpoint-{}.json", rec.steps)))?;
        }
        ck.save(dir.join("checkpoint.json"))?;
        Ok(())
    });
    let records = result?;
    if records.is_empty() {
        trainer.checkpoint(meta).save(dir.join("checkpoint.json"))?;
    }
    if let Some(last) = records.last() {
        println!("steps {} mean reward {:.6} violations {}", last.steps, last.mean_reward, last.violations);
    }
    Ok(())
}

fn cmd_eval(path: &Path, episodes: usize, deterministic: bool, seed: u64) -> anyhow::Result<()> {
    let ck = Checkpoint::load(path)?;
    let spec: EnvSpec = serde_json::from_value(ck.meta["env"].clone())
        .map_err(|e| Error::InvalidArgument(format!("checkpoint has no usable env spec: {e}")))?;
    let order: EntityOrder = serde_json::from_value(ck.meta["order"].clone()).unwrap_or_default();
    let mut env = spec.build()?;
    let e = ppo::evaluate(env.as_mut(), &ck.policy, order, episodes, deterministic, seed)?;
    println!("episodes {episodes} mean reward {:.6} +- {:.6} violations {}", e.mean(), e.std(), e.violations);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Debias { source, k, seed, order, out } => cmd_debias(&source, k, seed, order, &out),
        Command::Sample { source, terms, flat, count, seed, order, out } => {
            cmd_sample(&source, terms.as_deref(), flat, count, seed, order, out.as_deref())
        }
        Command::Train { config, out_dir } => cmd_train(&config, out_dir.as_deref()),
        Command::Eval { checkpoint, episodes, eval_deterministic, seed } => {
            cmd_eval(&checkpoint, episodes, eval_deterministic, seed)
        }
        Command::GenPolytope { source, out } => {
            source.resolve()?.save(&out)?;
            Ok(())
        }
    }
}

/// 2 configuration, 3 numerical failure, 4 infeasible polytope.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InfeasibleSystem | Error::GenerationFailed { .. } | Error::DegenerateHull(_)) => 4,
        Some(
            Error::NumericalFailure(_)
            | Error::FitFailed(_)
            | Error::DimensionFitFailed { .. }
            | Error::AcceptanceTooLow { .. }
            | Error::NonFiniteLoss(_)
            | Error::OutOfSupport { .. }
            | Error::InfeasibleAction { .. },
        ) => 3,
        _ => 2,
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("POLYALLOC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
