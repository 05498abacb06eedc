use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use interval_attack::attacks::derive_seed;
use interval_attack::data::report::{read_csv, summarize, write_csv, write_json, AttackRecord};
use interval_attack::data::{load_mnist_idx, load_model, save_model, Dataset};
use interval_attack::nn::{TrainConfig, TrainMode};
use interval_attack::{AttackConfig, GradientMode, StepRule};
use interval_attack_cli::{
    attack_rows, parse_arch, parse_attacks, restart_rows, summarize_restarts, train_model,
    write_text,
};

#[derive(Parser)]
#[command(name = "iattack", version)]
#[command(about = "Train ReLU classifiers and compare PGD, CW and interval attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a fully connected network (clean or adversarial)
    Train(TrainArgs),
    /// Attack the first N images and write per-image rows plus a summary
    Attack(AttackArgs),
    /// Restart-distribution study on one image
    Restarts(RestartArgs),
    /// Recompute the JSON summary from an attack CSV
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// IDX image file
    #[arg(long)]
    data_images: PathBuf,
    /// IDX label file
    #[arg(long)]
    data_labels: PathBuf,
}

#[derive(Args, Clone)]
struct AttackOpts {
    /// L∞ budget in normalized pixels (0.3 ≈ 76/255)
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    /// Initial analysis radius of the interval attack
    #[arg(long, default_value_t = 0.01)]
    eps0: f64,
    /// Growth factor of the analysis radius
    #[arg(long, default_value_t = 2.0)]
    growth: f64,
    /// Interval step size
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 40)]
    pgd_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pgd_step_size: f64,
    /// Interval iterations before the PGD hand-off
    #[arg(long, default_value_t = 20)]
    interval_iters: usize,
    #[arg(long, value_enum, default_value_t = GMode::WorstClass)]
    g_mode: GMode,
    #[arg(long, value_enum, default_value_t = Step::Signed)]
    step_rule: Step,
    /// Start PGD and CW at x instead of a uniform point in the ball
    #[arg(long)]
    no_random_start: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum GMode {
    WorstClass,
    Averaged,
}

#[derive(Clone, Copy, ValueEnum)]
enum Step {
    Signed,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Clean,
    PgdAdv,
    IntervalAdv,
}

impl AttackOpts {
    fn config(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.eps,
            pgd_steps: self.pgd_steps,
            pgd_step_size: self.pgd_step_size,
            interval_iters: self.interval_iters,
            interval_step_size: self.alpha,
            eps0_init: self.eps0,
            region_growth: self.growth,
            random_start: !self.no_random_start,
            seed: self.seed,
            g_mode: match self.g_mode {
                GMode::WorstClass => GradientMode::WorstClass,
                GMode::Averaged => GradientMode::Averaged,
            },
            step_rule: match self.step_rule {
                Step::Signed => StepRule::Signed,
                Step::Raw => StepRule::Raw,
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Layer widths, input first
    #[arg(long, default_value = "784x100x100x10")]
    arch: String,
    #[arg(long, value_enum, default_value_t = Mode::Clean)]
    mode: Mode,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Epochs over which the training budget ramps up to --eps
    #[arg(long, default_value_t = 0)]
    eps_ramp: usize,
    /// Use only the first N training images
    #[arg(long)]
    n_images: Option<usize>,
    /// Evaluation images for the per-epoch log (defaults to the training set)
    #[arg(long, requires = "eval_labels")]
    eval_images: Option<PathBuf>,
    #[arg(long, requires = "eval_images")]
    eval_labels: Option<PathBuf>,
    /// Number of evaluation images for accuracy and PGD robust accuracy
    #[arg(long, default_value_t = 200)]
    n_eval: usize,
    #[command(flatten)]
    attack: AttackOpts,
    /// Output directory (model.json, train_log.csv, train_timing.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "pgd,cw,interval")]
    attacks: String,
    #[arg(long, default_value_t = 200)]
    n_images: usize,
    /// Give PGD and CW only --pgd-steps instead of the interval attack's total
    #[arg(long)]
    no_budget_parity: bool,
    /// Wall-clock seconds per image and attack, spent on random restarts.
    /// Results then depend on machine speed.
    #[arg(long)]
    time_budget: Option<f64>,
    #[command(flatten)]
    attack: AttackOpts,
    /// Output directory (attack.csv, summary.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RestartArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Index of the image in the data files
    #[arg(long)]
    image_id: usize,
    #[arg(long, default_value = "pgd,interval")]
    attacks: String,
    #[arg(long, default_value_t = 1000)]
    n_restarts: usize,
    #[arg(long)]
    no_budget_parity: bool,
    #[command(flatten)]
    attack: AttackOpts,
    /// Output directory (restarts.csv, restarts_summary.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Attack CSV written by `attack`
    #[arg(long)]
    input: PathBuf,
    /// Output directory (summary.json)
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Attack(args) => attack(args),
        Command::Restarts(args) => restarts(args),
        Command::Report(args) => report(args),
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    load_mnist_idx(&args.data_images, &args.data_labels)
        .with_context(|| format!("loading dataset {}", args.data_images.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    Ok(pool.install(f))
}

fn train(args: TrainArgs) -> Result<()> {
    let arch = parse_arch(&args.arch)?;
    let data = load_data(&args.data)?;
    let train_set = match args.n_images {
        Some(n) => data.head(n),
        None => &data.examples[..],
    };
    let eval_data = match (&args.eval_images, &args.eval_labels) {
        (Some(i), Some(l)) => Some(load_mnist_idx(i, l).context("loading evaluation set")?),
        _ => None,
    };
    let eval = eval_data.as_ref().unwrap_or(&data).head(args.n_eval);
    if let Some(bad) = train_set
        .iter()
        .chain(eval)
        .find(|ex| ex.label >= *arch.last().unwrap())
    {
        bail!(
            "label {} does not fit a {}-class output layer",
            bad.label,
            arch.last().unwrap()
        );
    }

    let attack = args.attack.config();
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        mode: match args.mode {
            Mode::Clean => TrainMode::Clean,
            Mode::PgdAdv => TrainMode::PgdAdv,
            Mode::IntervalAdv => TrainMode::IntervalAdv,
        },
        attack: attack.clone(),
        eps_ramp_epochs: args.eps_ramp,
        seed: derive_seed(args.attack.seed, 1),
    };
    let era_cfg = AttackConfig {
        seed: derive_seed(args.attack.seed, 2),
        ..attack
    };
    let run = with_workers(args.attack.workers, || {
        train_model(&arch, train_set, eval, &cfg, &era_cfg, args.attack.seed)
    })??;

    prepare_out(&args.out)?;
    save_model(&run.model, args.out.join("model.json"))?;
    write_text(&args.out.join("train_log.csv"), &run.log)?;
    write_text(&args.out.join("train_timing.csv"), &run.timing)?;
    eprint!("{}", run.log);
    Ok(())
}

fn attack(args: AttackArgs) -> Result<()> {
    let net = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let data = load_data(&args.data)?;
    ensure!(
        data.input_dim() == net.input_dim(),
        "model expects {} inputs, images have {}",
        net.input_dim(),
        data.input_dim()
    );
    ensure!(args.n_images > 0, "--n-images must be at least 1");
    let kinds = parse_attacks(&args.attacks)?;
    let cfg = args.attack.config();
    for &k in &kinds {
        cfg.validate(k)?;
    }
    let budget = match args.time_budget {
        Some(s) if s > 0.0 && s.is_finite() => Some(Duration::from_secs_f64(s)),
        Some(s) => bail!("--time-budget must be positive, got {s}"),
        None => None,
    };
    let images = data.head(args.n_images);
    let rows = with_workers(args.attack.workers, || {
        attack_rows(&net, images, &kinds, &cfg, !args.no_budget_parity, budget)
    })??;

    prepare_out(&args.out)?;
    write_csv(args.out.join("attack.csv"), &rows)?;
    let summary = summarize(&rows);
    write_json(args.out.join("summary.json"), &summary)?;
    for a in &summary.attacks {
        println!(
            "{:<9} {:>4}/{:<4} {:.1}%",
            a.attack, a.successes, a.images, a.success_rate
        );
    }
    if let Some(g) = &summary.interval_gain {
        println!("interval gain {}", g.display);
    }
    Ok(())
}

fn restarts(args: RestartArgs) -> Result<()> {
    let net = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let data = load_data(&args.data)?;
    let Some(example) = data.examples.get(args.image_id) else {
        bail!(
            "image id {} out of range: dataset has {} images",
            args.image_id,
            data.len()
        );
    };
    ensure!(args.n_restarts > 0, "--n-restarts must be at least 1");
    let kinds = parse_attacks(&args.attacks)?;
    let cfg = args.attack.config();
    for &k in &kinds {
        cfg.validate(k)?;
    }
    let rows = with_workers(args.attack.workers, || {
        restart_rows(
            &net,
            args.image_id,
            example,
            &kinds,
            &cfg,
            args.n_restarts,
            !args.no_budget_parity,
        )
    })??;

    prepare_out(&args.out)?;
    write_csv(args.out.join("restarts.csv"), &rows)?;
    let summary = summarize_restarts(&rows);
    write_json(args.out.join("restarts_summary.json"), &summary)?;
    for s in &summary {
        println!(
            "{:<9} {:>6}/{:<6} successes, max loss {:.4}",
            s.attack, s.successes, s.restarts, s.max_loss
        );
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let rows: Vec<AttackRecord> = read_csv(&args.input)?;
    ensure!(!rows.is_empty(), "{} has no rows", args.input.display());
    prepare_out(&args.out)?;
    let summary = summarize(&rows);
    write_json(args.out.join("summary.json"), &summary)?;
    if let Some(g) = &summary.interval_gain {
        println!("interval gain {}", g.display);
    }
    Ok(())
}
