use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use reynet::checkpoint::Checkpoint;
use reynet::data::{generate, load_dataset, save_dataset, TaskKind};
use reynet_cli::config::{test_data_seed, RunConfig};
use reynet_cli::table::{self, TableOptions, Which};
use reynet_cli::{metrics, runner, usage, verify, UsageError};

#[derive(Parser)]
#[command(name = "reynet", version, about = "Reynolds networks: data, training, evaluation and verification")]
struct Cli {
    /// Seed (data seed for gen, the single run seed for train, probe seed for verify).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML run configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a REYNDATA dataset.
    Gen {
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Train one model per seed; writes checkpoints and appends metrics.csv.
    Train(Box<TrainArgs>),
    /// Standard MSE of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Test MSE of a reduced checkpoint across input sizes.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_min: usize,
        #[arg(long, default_value_t = 20)]
        n_max: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Run property-verification suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
    },
    /// Run the grid behind table1 or table2 (resumable) and write its layout.
    Table {
        which: String,
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_test: Option<Vec<usize>>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    body_channels: Option<usize>,
    #[arg(long)]
    restrict: bool,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
}

macro_rules! set {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn gen(cli: &Cli, task: &str, n: usize, count: usize) -> Result<()> {
    let task = TaskKind::from_name(task).ok_or_else(|| usage(format!("unknown task '{task}'")))?;
    let out = cli.out.as_deref().ok_or_else(|| usage("gen needs --out"))?;
    let ds = generate(task, n, count, cli.seed.unwrap_or(0)).map_err(|e| usage(e.to_string()))?;
    save_dataset(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} {} samples at n={n} to {}", count, task.name(), out.display());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(cli)?;
    set!(cfg, a, model, task, n_train, n_test, loss, seeds, epochs, lr, wd, batch, widths, train_count, test_count, body_channels);
    if a.pooling.is_some() {
        cfg.pooling = a.pooling.clone();
    }
    if a.train_data.is_some() {
        cfg.train_data = a.train_data.clone();
    }
    if a.test_data.is_some() {
        cfg.test_data = a.test_data.clone();
    }
    cfg.restrict |= a.restrict;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    let outcomes = runner::run_all(&cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    let mpath = cfg.out.join("metrics.csv");
    for o in &outcomes {
        metrics::append(&mpath, &o.records)?;
        runner::save_checkpoint(o, &cfg, &runner::checkpoint_path(&cfg.out, &cfg, o.seed))?;
    }
    for n in cfg.test_sizes() {
        let values: Vec<f64> = outcomes.iter().filter_map(|o| o.test_mse_at(n)).collect();
        for (o, v) in outcomes.iter().zip(&values) {
            println!("{} {} n_train={} n_test={n} seed={}: test mse {v:.4e}", cfg.model, cfg.task, cfg.n_train, o.seed);
        }
        println!("mean test mse at n={n} over {} seeds: {:.4e}", values.len(), runner::mean(&values));
    }
    Ok(())
}

fn eval(cli: &Cli, checkpoint: &Path, data: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let ds = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    let row = runner::evaluate_checkpoint(&ck, &ds)?;
    match &cli.out {
        Some(p) => metrics::append(p, std::slice::from_ref(&row))?,
        None => metrics::write_stdout(std::slice::from_ref(&row))?,
    }
    Ok(())
}

fn sweep(cli: &Cli, checkpoint: &Path, n_min: usize, n_max: usize, count: usize) -> Result<()> {
    if n_min < 2 || n_min > n_max {
        return Err(usage(format!("need 2 <= n-min <= n-max, got {n_min}..{n_max}")));
    }
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let seed = cli.seed.unwrap_or_else(|| test_data_seed(ck.seed));
    let rows = runner::sweep(&ck, n_min..=n_max, count, seed)?;
    let sink: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("writing {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["n_test", "mse"])?;
    for (n, mse) in rows {
        w.write_record([n.to_string(), mse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Returns whether every check passed.
fn run_verify(cli: &Cli, suite: &str, max_n: usize) -> Result<bool> {
    let start = std::time::Instant::now();
    let checks = verify::run_suite(suite, max_n, cli.seed.unwrap_or(0))?;
    for c in &checks {
        println!(
            "{} {:<13} {:<32} gap {:.3e} tol {:.0e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.suite,
            c.case,
            c.gap,
            c.tolerance
        );
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!(
        "{} checks, {failed} failed, {:.1}s",
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if let Some(p) = &cli.out {
        let mut w = csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
        for c in &checks {
            w.serialize(c)?;
        }
        w.flush()?;
    }
    Ok(verify::all_pass(&checks))
}

#[allow(clippy::too_many_arguments)]
fn run_table(
    cli: &Cli,
    which: &str,
    ns: &Option<Vec<usize>>,
    tasks: &Option<Vec<String>>,
    seeds: &Option<Vec<u64>>,
    epochs: Option<usize>,
    widths: &Option<Vec<usize>>,
) -> Result<()> {
    let which = Which::from_name(which).ok_or_else(|| usage(format!("unknown table '{which}', expected table1 or table2")))?;
    let mut base = base_config(cli)?;
    if let Some(s) = seeds {
        base.seeds = s.clone();
    }
    if let Some(e) = epochs {
        base.epochs = e;
    }
    if let Some(w) = widths {
        base.widths = w.clone();
    }
    let tasks = tasks.clone().unwrap_or_else(|| table::TASKS.map(String::from).to_vec());
    if let Some(t) = tasks.iter().find(|t| !table::TASKS.contains(&t.as_str())) {
        return Err(usage(format!("unknown task '{t}'")));
    }
    let opts = TableOptions {
        which,
        ns: ns.clone().unwrap_or_else(|| table::DEFAULT_NS.to_vec()),
        tasks,
        base,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(which.name())),
    };
    let (ran, means) = table::run_table(&opts)?;
    println!("{ran} runs executed");
    for m in means {
        println!("{:<10} {:<9} {:<6} n={:<3} mean test mse {:.3e} ({} seeds)", m.model, m.task, m.loss, m.n, m.mse, m.seeds);
    }
    println!("layout written to {}", table::layout_path(&opts.out, which).display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Gen { task, n, count } => gen(cli, task, *n, *count)?,
        Command::Train(a) => train(cli, a)?,
        Command::Eval { checkpoint, data } => eval(cli, checkpoint, data)?,
        Command::Sweep {
            checkpoint,
            n_min,
            n_max,
            count,
        } => sweep(cli, checkpoint, *n_min, *n_max, *count)?,
        Command::Verify { suite, max_n } => return run_verify(cli, suite, *max_n),
        Command::Table {
            which,
            ns,
            tasks,
            seeds,
            epochs,
            widths,
        } => run_table(cli, which, ns, tasks, seeds, *epochs, widths)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
