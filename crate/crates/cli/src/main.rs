//! `specverify` command-line front end.

mod inputs;
mod surface;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use specverify::bounds::InputRegion;
use specverify::datasets::Targets;
use specverify::falsify::{pgd_falsify, DEFAULT_RESTARTS, DEFAULT_STEPS};
use specverify::network::Network;
use specverify::physics::{generate_dataset, write_csv, PendulumParams};
use specverify::relax::DEFAULT_TANGENTS;
use specverify::train::{init_network, train, write_log, LossConfig, LossKind, DEFAULT_ADV_STEPS, DEFAULT_MOMENTUM};
use specverify::verify::{build_relaxation, format_sig, sweep, Status, SweepConfig, VerifyOptions};
use specverify::Error;

use inputs::{load_data, parse_delta, parse_range, parse_triple, resolve_spec, Data, Split, SpecOverrides};

const SEED_ENV: &str = "SPECVERIFY_SEED";

#[derive(Parser, Debug)]
#[command(name = "specverify", version, about = "Certify and falsify nonlinear specifications of small ReLU networks")]
struct Cli {
    /// Seed for every random choice; falls back to $SPECVERIFY_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate pendulum (state, next state) pairs as CSV.
    Simulate(SimulateArgs),
    /// Train a network on a pendulum CSV or an MNIST directory.
    Train(TrainArgs),
    /// Certify one example; exits 1 when the specification is falsified.
    Verify(VerifyArgs),
    /// Search for a counterexample with projected gradient ascent.
    Falsify(FalsifyArgs),
    /// Verification and adversarial bounds over a list of radii.
    Sweep(SweepArgs),
    /// Decision labels on the plane through three images.
    Surface(SurfaceArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = PendulumParams::default().damping)]
    damping: f64,
    /// Sample interval in seconds.
    #[arg(long, default_value_t = PendulumParams::default().dt)]
    dt: f64,
    /// Integrator substep in seconds.
    #[arg(long, default_value_t = PendulumParams::default().dt_inner)]
    dt_inner: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LossArg {
    #[value(name = "l1")]
    L1,
    #[value(name = "l1+energy")]
    L1Energy,
    #[value(name = "ce")]
    Ce,
    #[value(name = "ce-adv")]
    CeAdv,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Pendulum CSV file or MNIST directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    loss: LossArg,
    /// Where to write the trained model (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Defaults to 60 for the pendulum and 15 for MNIST.
    #[arg(long)]
    epochs: Option<usize>,
    /// Defaults to 256 for the pendulum and 64 for MNIST.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Defaults depend on the loss.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MOMENTUM)]
    momentum: f64,
    /// Hidden width; defaults to 16 for the pendulum and 20 for MNIST.
    #[arg(long)]
    hidden: Option<usize>,
    /// Adversarial radius for ce-adv, in /255 units.
    #[arg(long, default_value_t = 8.0)]
    adv_delta: f64,
    #[arg(long, default_value_t = DEFAULT_ADV_STEPS)]
    adv_steps: usize,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON template or one of: semantic, digit-sum, energy, entropy.
    #[arg(long)]
    spec: String,
    /// Pendulum CSV file or MNIST directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Semantic ε, digit-sum ε or entropy floor of a built-in spec.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of digits of the built-in digit-sum spec.
    #[arg(long)]
    digits: Option<usize>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pgd_steps: usize,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pgd_restarts: usize,
}

#[derive(Args, Debug)]
struct RelaxArgs {
    /// Tangent cuts per exponential or entropy term.
    #[arg(long, default_value_t = DEFAULT_TANGENTS)]
    tangents: usize,
    /// Tighten pre-activation bounds with one LP per neuron.
    #[arg(long)]
    tighten_bounds: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// First example of the instance (digit sums use consecutive examples).
    #[arg(long)]
    input_index: usize,
    /// Radius in input units (/255 for images).
    #[arg(long, value_parser = parse_delta)]
    delta: f64,
    #[command(flatten)]
    relax: RelaxArgs,
    #[command(flatten)]
    attack: AttackArgs,
    /// Write the relaxation in LP text format.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FalsifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    input_index: usize,
    #[arg(long, value_parser = parse_delta)]
    delta: f64,
    #[command(flatten)]
    attack: AttackArgs,
    /// Write the counterexample inputs as CSV, one row per network copy.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated radii in input units (/255 for images).
    #[arg(long, value_parser = parse_delta, value_delimiter = ',', default_value = "0,0.02,0.04,0.06")]
    deltas: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write 0 in the wall_ms column so reports are reproducible.
    #[arg(long)]
    omit_timing: bool,
    /// Use only the first N examples.
    #[arg(long)]
    n_examples: Option<usize>,
    #[command(flatten)]
    relax: RelaxArgs,
    #[command(flatten)]
    attack: AttackArgs,
}

#[derive(Args, Debug)]
struct SurfaceArgs {
    #[arg(long)]
    model: PathBuf,
    /// MNIST directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Indices of the three images a,b,c.
    #[arg(long, value_parser = parse_triple)]
    images: [usize; 3],
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Interpolation range of both coordinates.
    #[arg(long, value_parser = parse_range, default_value = "-0.2,1.2")]
    range: (f64, f64),
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn resolve_seed(flag: Option<u64>) -> std::result::Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = resolve_seed(cli.seed).and_then(|seed| run(cli.command, seed));
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command, seed: u64) -> Outcome {
    match command {
        Command::Simulate(a) => simulate(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Verify(a) => verify_cmd(a, seed),
        Command::Falsify(a) => falsify_cmd(a, seed),
        Command::Sweep(a) => sweep_cmd(a, seed),
        Command::Surface(a) => surface_cmd(a),
    }
}

fn simulate(a: SimulateArgs, seed: u64) -> Outcome {
    let params = PendulumParams {
        damping: a.damping,
        dt: a.dt,
        dt_inner: a.dt_inner,
        ..PendulumParams::default()
    };
    params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let pairs = generate_dataset(a.n, seed, &params)?;
    write_csv(&pairs, &a.out)?;
    println!("pairs={}", pairs.len());
    println!("out={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs, seed: u64) -> Outcome {
    let train_data = load_data(&a.data, Split::Train)?;
    let test_data = load_data(&a.data, Split::Test)?;
    let images = train_data.images;
    let kind = match (a.loss, images) {
        (LossArg::L1, false) => LossKind::L1,
        (LossArg::L1Energy, false) => LossKind::L1PlusEnergy(PendulumParams::default().energy_params()),
        (LossArg::Ce, true) => LossKind::CrossEntropy,
        (LossArg::CeAdv, true) => {
            if !(a.adv_delta.is_finite() && a.adv_delta >= 0.0) {
                return Err(Failure::Usage("--adv-delta must be nonnegative".into()));
            }
            LossKind::CrossEntropyAdversarial {
                delta: train_data.radius(a.adv_delta),
                steps: a.adv_steps,
            }
        }
        (loss, _) => {
            return Err(Failure::Usage(format!(
                "loss {} does not fit a {} dataset",
                loss.to_possible_value().map_or("?".into(), |v| v.get_name().to_string()),
                if images { "classification" } else { "pendulum" }
            )))
        }
    };
    let cfg = LossConfig {
        kind,
        learning_rate: a.lr.unwrap_or_else(|| kind.default_learning_rate()),
        momentum: a.momentum,
        epochs: a.epochs.unwrap_or(if images { 15 } else { 60 }),
        batch_size: a.batch_size.unwrap_or(if images { 64 } else { 256 }),
        seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let outputs = match &train_data.set.targets {
        Targets::Classes(c) => c.iter().max().map_or(1, |m| m + 1).max(10),
        Targets::Vectors(v) => v[0].len(),
    };
    let hidden = a.hidden.unwrap_or(if images { 20 } else { 16 });
    if hidden == 0 {
        return Err(Failure::Usage("--hidden must be positive".into()));
    }
    let name = if images { "mnist" } else { "pendulum" };
    let init = init_network(name, &[train_data.set.dim(), hidden, outputs], seed)?;
    let (net, log) = train(&init, &train_data.set, Some(&test_data.set), &cfg)?;
    net.save(&a.out)?;
    if let Some(path) = &a.log {
        write_log(&log, path)?;
    }
    let metric = if images { "test_accuracy" } else { "test_l1" };
    println!("epochs={}", cfg.epochs);
    if let Some(last) = log.last() {
        println!("train_loss={}", format_sig(last.train_loss));
        println!("{metric}={}", format_sig(last.test_metric));
    }
    println!("out={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

struct Problem {
    net: Network,
    spec: specverify::specs::Specification,
    regions: Vec<InputRegion>,
}

fn template(p: &ProblemArgs) -> std::result::Result<specverify::specs::SpecTemplate, Failure> {
    let overrides = SpecOverrides {
        epsilon: p.epsilon,
        digits: p.digits,
    };
    resolve_spec(&p.spec, overrides).map_err(|e| match e {
        Error::Config(msg) => Failure::Usage(msg),
        other => Failure::Runtime(other),
    })
}

fn load_problem(p: &ProblemArgs, index: usize, delta: f64) -> std::result::Result<Problem, Failure> {
    let template = template(p)?;
    let net = Network::load(&p.model)?;
    let data: Data = load_data(&p.dataset, p.split)?;
    let arity = template.arity();
    if index + arity > data.set.len() {
        return Err(Failure::Usage(format!(
            "--input-index {index} needs {arity} example(s) but the split has {}",
            data.set.len()
        )));
    }
    let examples = &data.set.examples(index + arity)[index..];
    let labels: Option<Vec<usize>> = examples.iter().map(|e| e.label).collect();
    let spec = template.instantiate(labels.as_deref())?;
    let (lo, hi) = data.clip().map_or((None, None), |(a, b)| (Some(a), Some(b)));
    let regions = examples
        .iter()
        .map(|e| InputRegion::clipped(e.input.clone(), data.radius(delta), lo, hi))
        .collect::<specverify::Result<Vec<_>>>()?;
    Ok(Problem { net, spec, regions })
}

fn options(relax: &RelaxArgs, attack: &AttackArgs, seed: u64) -> VerifyOptions {
    VerifyOptions {
        n_tangents: relax.tangents,
        tighten_bounds: relax.tighten_bounds,
        attack_steps: attack.pgd_steps,
        attack_restarts: attack.pgd_restarts,
        seed,
        ..VerifyOptions::default()
    }
}

fn verify_cmd(a: VerifyArgs, seed: u64) -> Outcome {
    let pb = load_problem(&a.problem, a.input_index, a.delta)?;
    let opts = options(&a.relax, &a.attack, seed);
    let nets = vec![&pb.net; pb.regions.len()];
    if let Some(path) = &a.dump_lp {
        let relaxation = build_relaxation(&nets, &pb.spec, &pb.regions, &opts)?;
        std::fs::write(path, relaxation.lp.to_lp_format()).map_err(|e| Error::io(path, e))?;
    }
    let out = specverify::verify::verify_example(&nets, &pb.spec, &pb.regions, &opts)?;
    let word = match out.status {
        Status::Verified => "VERIFIED",
        Status::Falsified => "FALSIFIED",
        Status::Unknown => "UNKNOWN",
    };
    println!("{word}, lp_max={}", out.relaxation_optimum);
    println!("status={}", word.to_lowercase());
    println!("lp_max={}", out.relaxation_optimum);
    println!("shift={}", out.shift);
    println!("spec={}", pb.spec.kind_name());
    if let Some(w) = &out.witness {
        println!("witness_value={}", w.value);
    }
    Ok(if out.status == Status::Falsified {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn falsify_cmd(a: FalsifyArgs, seed: u64) -> Outcome {
    let pb = load_problem(&a.problem, a.input_index, a.delta)?;
    let opts = VerifyOptions {
        attack_steps: a.attack.pgd_steps,
        attack_restarts: a.attack.pgd_restarts,
        ..VerifyOptions::default()
    };
    let cfg = opts.attack_config(&pb.regions, seed);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let nets = vec![&pb.net; pb.regions.len()];
    let witness = pgd_falsify(&nets, &pb.spec, &pb.regions, &cfg)?;
    match &witness {
        Some(w) => {
            println!("FALSIFIED, value={}", w.value);
            println!("falsified=true");
            println!("value={}", w.value);
            if let Some(path) = &a.out {
                let mut text = String::new();
                for x in &w.inputs {
                    let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(text, "{}", row.join(","));
                }
                std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
            }
        }
        None => {
            println!("NOT FALSIFIED");
            println!("falsified=false");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(a: SweepArgs, seed: u64) -> Outcome {
    if a.jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be positive".into()));
    }
    let p = &a.problem;
    let template = template(p)?;
    let net = Network::load(&p.model)?;
    let data = load_data(&p.dataset, p.split)?;
    let examples = data.set.examples(a.n_examples.unwrap_or(usize::MAX));
    let cfg = SweepConfig {
        deltas: a.deltas.iter().map(|&d| data.radius(d)).collect(),
        clip: data.clip(),
        options: options(&a.relax, &a.attack, seed),
        jobs: a.jobs,
        omit_timing: a.omit_timing,
    };
    let report = sweep(&net, &template, &examples, &cfg)?;
    report.write_csv(&a.out)?;
    for r in &report.rows {
        println!(
            "delta={} verification_bound={} adversarial_bound={}",
            format_sig(r.delta),
            format_sig(r.verification_bound),
            format_sig(r.adversarial_bound)
        );
    }
    println!("out={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn surface_cmd(a: SurfaceArgs) -> Outcome {
    let net = Network::load(&a.model)?;
    let data = load_data(&a.dataset, a.split)?;
    if let Some(&bad) = a.images.iter().find(|&&i| i >= data.set.len()) {
        return Err(Failure::Usage(format!(
            "image index {bad} outside the split of {} examples",
            data.set.len()
        )));
    }
    let [i, j, k] = a.images;
    let imgs = [
        data.set.inputs[i].as_slice(),
        data.set.inputs[j].as_slice(),
        data.set.inputs[k].as_slice(),
    ];
    let points = surface::decision_surface(&net, imgs, a.grid, a.range)?;
    std::fs::write(&a.out, surface::to_csv(&points)).map_err(|e| Error::io(&a.out, e))?;
    println!("points={}", points.len());
    println!("out={}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
