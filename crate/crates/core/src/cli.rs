//! Command-line front end.
//!
//! Exit codes: 0 success, 1 numeric or acceptance failure, 2 usage or
//! configuration error. Every failure writes one `error: ...` line to
//! stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{self, BenchConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradReport};
use crate::message;
use crate::reference;
use crate::ses::{self, SeSConfig, SeSState};
use crate::softhg::{self, BlockConfig, NormMode, SoftHGParams};
use crate::tensor::Matrix;
use crate::train::{self, ModelKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "softhg",
    version,
    about = "Soft hypergraph block: gradient checks, benchmarks, training"
)]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Compare matrix-form message passing with an element-wise evaluation.
    Oracle(OracleArgs),
    /// Time the block, dense attention and k-NN hypergraph convolution.
    Bench(BenchArgs),
    /// Train a classifier on the synthetic co-occurrence task.
    Train(TrainArgs),
    /// Run sparse selection on random inputs and show load-balancing stats.
    SesDemo(SesDemoArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Only check this normalization mode (enorm, vnorm, none).
    #[arg(long)]
    pub norm: Option<NormMode>,
    /// Emit the reports as JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated subset of softhgnn, attention, hgnn.
    #[arg(long, default_value = "softhgnn,attention,hgnn")]
    pub ops: String,
    /// Token counts: `lo..hi` doubles from lo, or a comma list.
    #[arg(long, default_value = "256..8192")]
    pub n: String,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Hyperedges of the block.
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    /// Neighbours per k-NN hyperedge.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output path.
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    /// Skip the slope-band check.
    #[arg(long)]
    pub no_check: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// pool_baseline, softhgnn or softhgnn_ses.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub norm: Option<NormMode>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hyperedges: Option<usize>,
    /// Metrics CSV path (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write trained parameters as JSON.
    #[arg(long)]
    pub save_params: Option<PathBuf>,
    /// Start from parameters saved by --save-params.
    #[arg(long)]
    pub init_params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SesDemoArgs {
    #[arg(long, default_value_t = 128)]
    pub passes: usize,
    /// Tokens per random input.
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub fixed: usize,
    #[arg(long = "dyn", default_value_t = 32)]
    pub dynamic: usize,
    #[arg(long, default_value_t = 16)]
    pub topk: usize,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trajectory CSV path (`pass,l_lb,selected`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Final state as JSON.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

/// Outcome of a subcommand that ran to completion.
enum Status {
    Ok,
    /// Numbers were computed but a check did not hold.
    Failed(String),
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) | Error::Degenerate(_) => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Failed(reason)) => {
            eprintln!("error: {reason}");
            EXIT_FAILURE
        }
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Bench(a) => bench_cmd(a, cli.verbose > 0),
        Command::Train(a) => train_cmd(a, cli.verbose > 0),
        Command::SesDemo(a) => ses_demo_cmd(a),
    }
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::config(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(Error::config(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    if path.is_dir() {
        return Err(Error::config(format!(
            "output path {} is a directory",
            path.display()
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<Status> {
    let reports: Vec<GradReport> = gradcheck::standard_configs()
        .iter()
        .filter(|c| a.norm.is_none_or(|n| c.norm == n))
        .map(|c| gradcheck::check_block(c, a.seed))
        .collect::<Result<_>>()?;
    if a.json {
        writeln!(io::stdout(), "{}", serde_json::to_string_pretty(&reports)?)?;
    } else {
        for r in &reports {
            write!(io::stdout(), "{r}")?;
        }
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.label.as_str())
        .collect();
    if failed.is_empty() {
        Ok(Status::Ok)
    } else {
        Ok(Status::Failed(format!(
            "gradcheck failed for [{}]",
            failed.join("; ")
        )))
    }
}

fn oracle_cmd(a: &OracleArgs) -> Result<Status> {
    let r = reference::oracle_suite(a.instances, a.seed)?;
    writeln!(
        io::stdout(),
        "oracle instances={} seed={} worst_abs_deviation={:e} worst_shape(N,M,D,h)={:?}",
        r.instances,
        r.seed,
        r.worst_abs_deviation,
        r.worst_shape
    )?;
    if r.worst_abs_deviation < a.tolerance {
        Ok(Status::Ok)
    } else {
        Ok(Status::Failed(format!(
            "oracle deviation {:e} >= tolerance {:e}",
            r.worst_abs_deviation, a.tolerance
        )))
    }
}

fn bench_cmd(a: &BenchArgs, verbose: bool) -> Result<Status> {
    let cfg = BenchConfig {
        ops: bench::parse_ops(&a.ops)?,
        n_list: bench::parse_n_list(&a.n)?,
        d: a.d,
        m: a.m,
        heads: a.heads,
        knn_k: a.k,
        repeats: a.repeats,
        seed: a.seed,
    };
    cfg.validate()?;
    check_output(&a.out)?;
    let rows = bench::scaling_run_with(&cfg, |r| {
        if verbose {
            eprintln!("{} N={} {:.6}s", r.op.name(), r.n_tokens, r.median_seconds);
        }
    })?;
    let mut w = create(&a.out)?;
    bench::write_csv(&mut w, &rows)?;
    w.flush()?;
    write!(io::stdout(), "{}", bench::render_table(&rows))?;

    if a.no_check {
        return Ok(Status::Ok);
    }
    let checks = bench::slope_checks(&rows, 3)?;
    let mut bad = Vec::new();
    for c in &checks {
        writeln!(
            io::stdout(),
            "slope {} = {:.3} (band [{}, {}]) {}",
            c.op.name(),
            c.slope,
            c.band.0,
            c.band.1,
            if c.pass { "ok" } else { "OUT OF BAND" }
        )?;
        if !c.pass {
            bad.push(format!(
                "{} slope {:.3} outside [{}, {}]",
                c.op.name(),
                c.slope,
                c.band.0,
                c.band.1
            ));
        }
    }
    if bad.is_empty() {
        Ok(Status::Ok)
    } else {
        Ok(Status::Failed(bad.join("; ")))
    }
}

fn train_cmd(a: &TrainArgs, verbose: bool) -> Result<Status> {
    let mut cfg = match &a.config {
        Some(p) => {
            check_input(p)?;
            train::load_config(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.norm {
        cfg.block.norm = n;
    }
    if let Some(h) = a.heads {
        cfg.block.heads = h;
    }
    if let Some(m) = a.hyperedges {
        cfg.block.hyperedges = m;
    }
    for p in [&a.out, &a.save_params].into_iter().flatten() {
        check_output(p)?;
    }
    let init = match &a.init_params {
        Some(p) => {
            check_input(p)?;
            Some(softhg::load_tensor_map(p)?)
        }
        None => None,
    };

    let outcome = train::run_from(&cfg, init.as_ref())?;
    if verbose {
        for m in &outcome.metrics {
            eprintln!(
                "epoch {} train_loss={:.4} train_acc={:.3} test_acc={:.3} l_lb={:.5}",
                m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.l_lb
            );
        }
    }
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            train::write_metrics_csv(&mut w, &outcome.metrics)?;
            w.flush()?;
            writeln!(
                io::stdout(),
                "model={:?} epochs={} final_test_accuracy={:.4}",
                cfg.model,
                cfg.epochs,
                outcome.final_test_accuracy()
            )?;
        }
        None => train::write_metrics_csv(io::stdout().lock(), &outcome.metrics)?,
    }
    if let Some(p) = &a.save_params {
        softhg::save_tensor_map(p, &outcome.model.to_tensor_map())?;
    }
    Ok(Status::Ok)
}

fn ses_demo_cmd(a: &SesDemoArgs) -> Result<Status> {
    let sc = SeSConfig {
        m_fixed: a.fixed,
        m_dyn: a.dynamic,
        k: a.topk,
        window: a.window,
    };
    sc.validate()?;
    if a.n == 0 {
        return Err(Error::config("--n must be positive"));
    }
    for p in [&a.out, &a.state].into_iter().flatten() {
        check_output(p)?;
    }
    let bc = BlockConfig {
        hyperedges: sc.total(),
        heads: a.heads,
        ..BlockConfig::with_dim(a.dim)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let params = SoftHGParams::init(bc, &mut rng)?;
    let mut state = SeSState::new(&sc);

    let mut lines = vec!["pass,l_lb,selected".to_string()];
    for pass in 1..=a.passes {
        let x = Matrix::random_uniform(a.n, a.dim, -1.0, 1.0, &mut rng);
        let out = message::softhgnn_forward_ses(&x, &params, &sc)?;
        let sel = out.selection.unwrap_or_default();
        let lb = ses::record_and_balance(&mut state, &sel, &sc);
        let sel_s: Vec<String> = sel.iter().map(usize::to_string).collect();
        lines.push(format!("{pass},{lb:.10},{}", sel_s.join(" ")));
    }

    let trajectory = lines.join("\n") + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, &trajectory)?,
        None => write!(io::stdout(), "{trajectory}")?,
    }
    let p: Vec<String> = state
        .probabilities()
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect();
    writeln!(io::stdout(), "p_target={:.4}", sc.p_target())?;
    writeln!(io::stdout(), "p=[{}]", p.join(", "))?;
    writeln!(
        io::stdout(),
        "l_lb={:.10}",
        ses::load_balance_loss(state.probabilities(), sc.k)
    )?;
    if let Some(path) = &a.state {
        std::fs::write(path, serde_json::to_string_pretty(&state.dump())? + "\n")?;
    }
    Ok(Status::Ok)
}
