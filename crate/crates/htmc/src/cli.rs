//! Command-line surface. Every numeric output is a function of the inputs and
//! `--seed`; when the seed is omitted one is drawn and reported on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use htmc_core::chains::{dag_chain, graph_chain, random_chain, random_mixture, GraphKind, MixtureModel, Mode};
use htmc_core::hitting::{censor_missing, chain_hitting_times, HittingTimeEstimate};
use htmc_core::learn::{learn_single, wsbt_init, Descent, Init};
use htmc_core::metrics::{frobenius_error, mixture_recovery_error};
use htmc_core::mixture::{random_initial_mixture, ultra_mc_with};
use htmc_core::simulate::{mixture_base_seed, TrailExtent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use crate::bench::{bench_gradients, to_csv};
use crate::error::{Failure, Result};
use crate::formats::{
    from_json, matrix_from_csv, matrix_to_csv, read_json, read_model, read_text, read_trails, to_json, trails_to_jsonl,
    write_text, ChainDoc, EstimateDoc, EvalReportDoc, HistoryDoc, LearnConfigDoc, LearnReportDoc, MixtureConfigDoc,
    MixtureDoc, Model,
};
use crate::parallel::{self, Rayon};

#[derive(Debug, Parser)]
#[command(name = "htmc", version, about = "Markov chain reconstruction from hitting times")]
pub struct Cli {
    /// Worker threads (0 or unset: one per core).
    #[arg(long, global = true, env = "HTMC_THREADS")]
    pub threads: Option<usize>,
    /// Seed for every random choice; drawn and printed when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Discrete,
    Continuous,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Discrete => Mode::Discrete,
            ModeArg::Continuous => Mode::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Complete,
    Star,
    Lollipop,
    Grid,
    Dag,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Wsbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DescentArg {
    Chain,
    Pseudoinverse,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark chain, a random chain or a random mixture.
    Generate(GenerateArgs),
    /// Sample trails from a chain or mixture as JSONL.
    Simulate(SimulateArgs),
    /// Estimate hitting times from JSONL trails.
    EstimateHt(EstimateArgs),
    /// Reconstruct one chain from (estimated) hitting times.
    Learn(LearnArgs),
    /// Unmix trails into C chains.
    LearnMixture(LearnMixtureArgs),
    /// Compare a learned chain or mixture with the truth.
    Evaluate(EvaluateArgs),
    /// Time analytical against finite-difference gradients.
    BenchGradients(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub n: usize,
    /// Number of chains; random mixtures only.
    #[arg(long = "chains", short = 'c')]
    pub chains: Option<usize>,
    /// Write the bare matrix as CSV instead of JSON.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Chain or mixture JSON.
    pub model: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Steps per trail (discrete).
    #[arg(long, conflicts_with = "horizon")]
    pub length: Option<usize>,
    /// Observation window per trail (continuous).
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// JSONL trails.
    pub trails: PathBuf,
    /// Number of states.
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Estimate JSON, or a complete hitting-time matrix as `.csv`.
    pub input: PathBuf,
    /// Learner config JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub descent: Option<DescentArg>,
    #[arg(long = "loss-tol")]
    pub loss_tol: Option<f64>,
    #[arg(long, value_enum, conflicts_with = "init_chain")]
    pub init: Option<InitArg>,
    /// Start from this chain JSON.
    #[arg(long = "init-chain")]
    pub init_chain: Option<PathBuf>,
    /// Replace unobserved hitting times by this value and treat them as observed.
    #[arg(long)]
    pub fill: Option<f64>,
    /// Output the linear-system initializer without descent.
    #[arg(long = "wsbt-only")]
    pub wsbt_only: bool,
    /// Ground-truth chain; the recovery error goes to stderr.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Learn report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnMixtureArgs {
    /// JSONL trails.
    pub trails: PathBuf,
    #[arg(long = "chains", short = 'c')]
    pub chains: usize,
    /// Number of states; defaults to the largest state seen plus one.
    #[arg(long)]
    pub n: Option<usize>,
    /// Mixture config JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "em-iterations")]
    pub em_iterations: Option<usize>,
    /// Descent iterations per chain and round.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "use-alpha")]
    pub use_alpha: bool,
    /// Start EM from this mixture JSON instead of a random one.
    #[arg(long = "init-mixture")]
    pub init_mixture: Option<PathBuf>,
    /// Ground-truth mixture; per-round errors are recorded and the final one
    /// goes to stderr.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Per-round history JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Learned chain or mixture JSON.
    pub learned: PathBuf,
    /// True chain or mixture JSON.
    pub truth: PathBuf,
    /// Estimate JSON; adds the Frobenius error against the true hitting times.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Learn report JSON for `--curves`.
    #[arg(long, conflicts_with = "history")]
    pub report: Option<PathBuf>,
    /// Mixture history JSON for `--curves`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// CSV of the loss curve (report) or the per-round statistics (history).
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated state counts.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    pub ns: Vec<usize>,
    /// Analytical gradients per size.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Numerical gradients per size.
    #[arg(long = "numerical-iters", default_value_t = 3)]
    pub numerical_iters: usize,
}

struct Globals {
    seed: Option<u64>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
}

impl Globals {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            s
        })
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write_text(p, text),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes()).map_err(|e| Failure::io(Path::new("<stdout>"), e))
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = Globals { seed: cli.seed, mode: cli.mode.map(Mode::from), out: cli.out };
    let pool = parallel::thread_pool(cli.threads)?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate(&g, a),
        Command::Simulate(a) => simulate(&g, a),
        Command::EstimateHt(a) => estimate(&g, a),
        Command::Learn(a) => learn(&g, a),
        Command::LearnMixture(a) => learn_mixture(&g, a),
        Command::Evaluate(a) => evaluate(&g, a),
        Command::BenchGradients(a) => bench(&g, a),
    })
}

fn generate(g: &Globals, a: GenerateArgs) -> Result<()> {
    let mode = g.mode.unwrap_or(Mode::Discrete);
    if a.chains.is_some() && a.kind != Kind::Random {
        return Err(Failure::param("--chains applies to random mixtures only"));
    }
    let graph = match a.kind {
        Kind::Complete => Some(GraphKind::Complete),
        Kind::Star => Some(GraphKind::Star),
        Kind::Lollipop => Some(GraphKind::Lollipop),
        Kind::Grid => Some(GraphKind::Grid),
        Kind::Dag | Kind::Random => None,
    };
    if a.kind != Kind::Random && mode != Mode::Discrete {
        return Err(Failure::param("benchmark graphs are discrete; use --mode discrete"));
    }
    let model = match (a.kind, graph) {
        (_, Some(kind)) => Model::Chain(graph_chain(kind, a.n)?),
        (Kind::Dag, _) => Model::Chain(dag_chain(a.n)?),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed());
            match a.chains {
                Some(c) => Model::Mixture(random_mixture(mode, c, a.n, &mut rng)?),
                None => Model::Chain(random_chain(mode, a.n, &mut rng)?),
            }
        }
    };
    if a.csv {
        match &model {
            Model::Chain(c) => g.emit(&matrix_to_csv(c.matrix())),
            Model::Mixture(_) => Err(Failure::param("--csv writes single chains only")),
        }
    } else {
        g.emit(&model.to_json())
    }
}

fn simulate(g: &Globals, a: SimulateArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let is_mixture = matches!(model, Model::Mixture(_));
    let mixture = model.into_mixture()?;
    let extent = match (mixture.mode(), a.length, a.horizon) {
        (Mode::Discrete, Some(len), None) => TrailExtent::Steps(len),
        (Mode::Continuous, None, Some(h)) => TrailExtent::Horizon(h),
        (Mode::Discrete, ..) => return Err(Failure::param("discrete models need --length")),
        (Mode::Continuous, ..) => return Err(Failure::param("continuous models need --horizon")),
    };
    let base = mixture_base_seed(&mut ChaCha8Rng::seed_from_u64(g.seed()));
    let mut trails = parallel::simulate(&mixture, a.count, extent, base)?;
    if !is_mixture {
        trails = trails.into_iter().map(|t| t.with_label(None)).collect();
    }
    g.emit(&trails_to_jsonl(&trails))
}

fn estimate(g: &Globals, a: EstimateArgs) -> Result<()> {
    let trails = read_trails(&a.trails)?;
    let est = parallel::estimate(&trails, a.n)?;
    g.emit(&to_json(&EstimateDoc::from_estimate(&est)))
}

/// Reads a config file; the flag reports whether it sets `seed` itself.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<(T, bool)> {
    let text = read_text(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::param(format!("{}: invalid JSON: {e}", path.display())))?;
    let has_seed = value.get("seed").is_some();
    let doc = from_json(&text).map_err(|e| Failure::param(format!("{}: {e}", path.display())))?;
    Ok((doc, has_seed))
}

fn read_target(path: &Path) -> Result<HittingTimeEstimate> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Ok(HittingTimeEstimate::complete(matrix_from_csv(&read_text(path)?)?)?)
    } else {
        read_json::<EstimateDoc>(path)?.to_estimate()
    }
}

fn learn(g: &Globals, a: LearnArgs) -> Result<()> {
    let mut est = read_target(&a.input)?;
    if let Some(fill) = a.fill {
        est = censor_missing(&est, fill)?;
    }
    let (mut doc, seeded) = match &a.config {
        Some(p) => read_config::<LearnConfigDoc>(p)?,
        None => (LearnConfigDoc::default(), false),
    };
    if let Some(m) = g.mode {
        doc.mode = m;
    }
    let mut config = doc.to_config()?;
    if let Some(p) = &a.init_chain {
        let chain = match read_model(p)? {
            Model::Chain(c) => c,
            Model::Mixture(_) => return Err(Failure::param("--init-chain needs a single chain")),
        };
        if g.mode.is_none() {
            config.mode = chain.mode();
        }
        config.init = Init::Given(chain);
    }
    match a.init {
        Some(InitArg::Random) => config.init = Init::Random,
        Some(InitArg::Wsbt) => config.init = Init::Wsbt,
        None => {}
    }
    if let Some(i) = a.iterations {
        config.iterations = i;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if let Some(t) = a.loss_tol {
        config.loss_tol = t;
    }
    match a.descent {
        Some(DescentArg::Chain) => config.descent = Descent::Chain,
        Some(DescentArg::Pseudoinverse) => config.descent = Descent::Pseudoinverse,
        None => {}
    }
    if g.seed.is_some() || !seeded {
        config.seed = g.seed();
    }
    config.validate()?;

    let truth = a.truth.as_deref().map(read_model).transpose()?;
    let chain = if a.wsbt_only {
        let (chain, warnings) = wsbt_init(est.h(), est.mask(), config.mode)?;
        warnings.iter().for_each(|w| eprintln!("warning: {w}"));
        chain
    } else {
        let report = learn_single(est.h(), est.mask(), &config)?;
        report.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
        if let Some(p) = &a.report {
            write_text(p, &to_json(&LearnReportDoc::from_report(&report)))?;
        }
        if !report.best_loss.is_finite() {
            return Err(Failure::Numeric("no iterate reached a finite loss".into()));
        }
        report.chain
    };
    if let Some(t) = truth {
        let t = t.into_mixture()?;
        let learned = MixtureModel::uniform(vec![chain.clone()])?;
        eprintln!("recovery_error: {}", mixture_recovery_error(&learned, &t)?.recovery_error);
    }
    g.emit(&to_json(&ChainDoc::from_chain(&chain)))
}

fn learn_mixture(g: &Globals, a: LearnMixtureArgs) -> Result<()> {
    let trails = read_trails(&a.trails)?;
    if trails.is_empty() {
        return Err(Failure::param(format!("{}: no trails", a.trails.display())));
    }
    let n = a.n.unwrap_or_else(|| trails.iter().flat_map(|t| t.states()).max().map_or(0, |&m| m + 1));
    let (mut doc, seeded) = match &a.config {
        Some(p) => read_config::<MixtureConfigDoc>(p)?,
        None => (MixtureConfigDoc::default(), false),
    };
    if let Some(e) = a.em_iterations {
        doc.em_iterations = e;
    }
    if let Some(i) = a.iterations {
        doc.inner.iterations = i;
    }
    if let Some(lr) = a.lr {
        doc.inner.lr = lr;
    }
    if a.use_alpha {
        doc.use_alpha = true;
    }
    if g.seed.is_some() || !seeded {
        doc.seed = g.seed();
    }
    let config = doc.to_config()?;
    let mode = trails[0].mode();
    if g.mode.is_some_and(|m| m != mode) {
        return Err(Failure::param(format!("--mode disagrees with the trails, which are {mode}")));
    }
    let initial = match &a.init_mixture {
        Some(p) => read_model(p)?.into_mixture()?,
        None => random_initial_mixture(mode, a.chains, n, config.seed)?,
    };
    if initial.num_chains() != a.chains {
        return Err(Failure::param(format!("initial mixture has {} chains, --chains is {}", initial.num_chains(), a.chains)));
    }
    let truth = a.truth.as_deref().map(read_model).transpose()?.map(Model::into_mixture).transpose()?;
    let fit = ultra_mc_with(&trails, initial, &config, truth.as_ref(), &Rayon)?;
    fit.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
    if let Some(p) = &a.history {
        write_text(p, &to_json(&HistoryDoc::from_fit(&fit)))?;
    }
    if let Some(t) = &truth {
        eprintln!("recovery_error: {}", mixture_recovery_error(&fit.model, t)?.recovery_error);
    }
    g.emit(&to_json(&MixtureDoc::from_mixture(&fit.model)))
}

fn evaluate(g: &Globals, a: EvaluateArgs) -> Result<()> {
    let learned = read_model(&a.learned)?.into_mixture()?;
    let truth = read_model(&a.truth)?.into_mixture()?;
    let mut report = mixture_recovery_error(&learned, &truth)?;
    if let Some(p) = &a.estimate {
        let est = read_json::<EstimateDoc>(p)?.to_estimate()?;
        let [chain] = truth.chains() else {
            return Err(Failure::param("--estimate needs a single true chain"));
        };
        let h = chain_hitting_times(chain)?.matrix;
        report.frobenius_ht_error = Some(frobenius_error(est.h(), &h, est.mask())?);
    }
    if let Some(path) = &a.curves {
        let mut w = csv::Writer::from_writer(Vec::new());
        let row_err = |e: csv::Error| Failure::param(format!("CSV: {e}"));
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        if let Some(p) = &a.report {
            let r: LearnReportDoc = read_json(p)?;
            w.write_record(["iteration", "loss"]).map_err(row_err)?;
            for (i, l) in r.loss_curve.iter().enumerate() {
                w.write_record([i.to_string(), l.to_string()]).map_err(row_err)?;
            }
        } else if let Some(p) = &a.history {
            let h: HistoryDoc = read_json(p)?;
            w.write_record(["round", "entropy", "change", "recovery_error"]).map_err(row_err)?;
            for r in &h.rounds {
                w.write_record([r.round.to_string(), r.entropy.to_string(), r.change.to_string(), opt(r.recovery_error)])
                    .map_err(row_err)?;
            }
        } else {
            return Err(Failure::param("--curves needs --report or --history"));
        }
        let bytes = w.into_inner().map_err(|e| Failure::param(format!("CSV: {e}")))?;
        write_text(path, &String::from_utf8(bytes).expect("ascii output"))?;
    }
    g.emit(&to_json(&EvalReportDoc::from_report(&report)))
}

fn bench(g: &Globals, a: BenchArgs) -> Result<()> {
    let rows = bench_gradients(&a.ns, a.iters, a.numerical_iters, g.seed())?;
    g.emit(&to_csv(&rows))
}
