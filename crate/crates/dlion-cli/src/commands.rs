//! The four commands. Each returns a library error on failure; the binary
//! maps error kinds to exit codes (usage/config 2, divergence 3, violated
//! property 1).

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::exit;

use clap::Args;
use dlion::bandwidth::{bandwidth_of, table_formula_bits};
use dlion::checkpoint;
use dlion::checks::{self, Suite};
use dlion::metrics::{summarize, Summary};
use dlion::sim::{ExecOpts, Method, RoundLog, RunConfig, RunLog, Trainer};
use dlion::{Error, Result};

use crate::config::{self, ConfigFile};

const CSV_HEADER: &str = "round,loss,full_loss,kkt_score,dist_f,up_bits,down_bits";

/// Writes report text to stdout. Rust leaves SIGPIPE ignored, so a reader
/// that hangs up early (`dlion check | head`) surfaces as a BrokenPipe write
/// error; that is an orderly end of output, not a failure, so exit cleanly
/// instead of panicking or reporting an I/O error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => exit(0),
        other => Ok(other?),
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file (see `dlion config print-defaults`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from a checkpoint written by --checkpoint-at
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Save a checkpoint after this round completes
    #[arg(long, value_name = "ROUND")]
    pub checkpoint_at: Option<u64>,
    /// Override the config's worker count
    #[arg(long)]
    pub workers: Option<u32>,
    /// Override the config's round count
    #[arg(long)]
    pub rounds: Option<u64>,
    /// Override the config's master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results are thread-count independent)
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Output directory; beats DLION_OUT_DIR and the config's [output] dir
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// TOML config file giving the base run
    #[arg(long)]
    pub config: PathBuf,
    /// Axis to sweep: workers, method, or batch
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Worker threads per point
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Output directory; beats DLION_OUT_DIR and the config's [output] dir
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Suite to run: contraction, equivalence, unbiasedness, gradcheck,
    /// codecs, or all
    #[arg(default_value = "all")]
    pub suite: String,
    /// Also write the JSON report to this file
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    /// Parameter dimension d
    #[arg(long)]
    pub dim: usize,
    /// Worker count N
    #[arg(long)]
    pub workers: u32,
    /// Keep fraction for the sparse rows
    #[arg(long, default_value_t = 0.04)]
    pub keep: f64,
    /// Comma-separated method names (default: the five table rows)
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Also write the table as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

/// Flag beats env var beats config file beats the fixed fallback.
fn resolve_out_dir(flag: Option<PathBuf>, file_dir: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("DLION_OUT_DIR").map(PathBuf::from))
        .or(file_dir)
        .unwrap_or_else(|| PathBuf::from("dlion-out"))
}

fn csv_row(row: &RoundLog) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        row.round, row.loss, row.full_loss, row.kkt_score, row.dist_f, row.up_bits, row.down_bits
    )
}

/// Steps a trainer to completion, streaming rounds into `out_dir/run.csv`.
/// `append` continues an existing CSV (resume); a divergence mid-run still
/// leaves every completed round on disk.
fn drive(
    mut trainer: Trainer,
    out_dir: &Path,
    checkpoint_at: Option<u64>,
    append: bool,
) -> Result<Summary> {
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("run.csv");
    let fresh = !(append && csv_path.exists());
    let file = fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .truncate(fresh)
        .write(true)
        .open(&csv_path)?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{CSV_HEADER}")?;
    }

    let mut rounds = Vec::new();
    while !trainer.is_finished() {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(err) => {
                w.flush()?;
                return Err(err);
            }
        };
        writeln!(w, "{}", csv_row(&row))?;
        if checkpoint_at == Some(row.round) {
            w.flush()?;
            let path = out_dir.join(format!("checkpoint_{}.ckpt", row.round));
            checkpoint::save(&path, &trainer.snapshot())?;
        }
        rounds.push(row);
    }
    w.flush()?;

    let log = RunLog {
        config: trainer.config().clone(),
        final_x: trainer.x().to_vec(),
        final_accuracy: trainer.final_accuracy()?,
        ledger: trainer.ledger().clone(),
        stopped_early: trainer.stopped_early(),
        trajectory: None,
        rounds,
    };
    let summary = summarize(&log)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("cannot serialize summary: {e}")))?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

pub fn cmd_run(args: RunArgs) -> Result<()> {
    let opts = ExecOpts {
        threads: args.threads,
        keep_trajectory: false,
    };
    let (snapshot, mut cfg, file_dir) = match (&args.resume, &args.config) {
        (Some(ckpt), maybe_cfg) => {
            let snap = checkpoint::load(ckpt)?;
            let mut file_dir = None;
            if let Some(path) = maybe_cfg {
                let file = config::load(path)?;
                if file.run != snap.config {
                    return Err(Error::Config(
                        "config file disagrees with the checkpoint's stored config; \
                         omit --config when resuming or pass the original file"
                            .into(),
                    ));
                }
                file_dir = file.output.dir;
            }
            let cfg = snap.config.clone();
            (Some(snap), cfg, file_dir)
        }
        (None, Some(path)) => {
            let file = config::load(path)?;
            (None, file.run, file.output.dir)
        }
        (None, None) => {
            return Err(Error::Config("either --config or --resume is required".into()));
        }
    };

    if let Some(w) = args.workers {
        if snapshot.is_some() && w != cfg.workers {
            return Err(Error::Config(
                "cannot change the worker count when resuming a checkpoint".into(),
            ));
        }
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        if snapshot.is_some() && s != cfg.master_seed {
            return Err(Error::Config(
                "cannot change the master seed when resuming a checkpoint".into(),
            ));
        }
        cfg.master_seed = s;
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }

    let out_dir = resolve_out_dir(args.out_dir.clone(), file_dir);
    let trainer = match snapshot {
        Some(mut snap) => {
            snap.config.rounds = cfg.rounds;
            Trainer::from_snapshot(snap, opts)?
        }
        None => Trainer::new(cfg, opts)?,
    };
    let resuming = args.resume.is_some();
    drive(trainer, &out_dir, args.checkpoint_at, resuming)?;
    Ok(())
}

enum Axis {
    Workers,
    Method,
    Batch,
}

impl Axis {
    fn parse(s: &str) -> Result<Axis> {
        match s {
            "workers" => Ok(Axis::Workers),
            "method" => Ok(Axis::Method),
            "batch" => Ok(Axis::Batch),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}'; valid axes: workers, method, batch"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Axis::Workers => "workers",
            Axis::Method => "method",
            Axis::Batch => "batch",
        }
    }

    fn apply(&self, cfg: &mut RunConfig, value: &str) -> Result<()> {
        match self {
            Axis::Workers => {
                cfg.workers = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad worker count '{value}'")))?;
            }
            Axis::Method => cfg.method = Method::parse(value)?,
            Axis::Batch => {
                cfg.batch_size = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad batch size '{value}'")))?;
            }
        }
        Ok(())
    }
}

pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let axis = Axis::parse(&args.axis)?;
    if args.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let file = config::load(&args.config)?;
    let out_dir = resolve_out_dir(args.out_dir.clone(), file.output.dir.clone());
    fs::create_dir_all(&out_dir)?;
    let opts = ExecOpts {
        threads: args.threads,
        keep_trajectory: false,
    };

    let combined_path = out_dir.join("sweep.csv");
    let mut combined = BufWriter::new(fs::File::create(&combined_path)?);
    writeln!(
        combined,
        "{}",
        "axis,value,rounds,final_full_loss,best_full_loss,mean_kkt_score,kkt_noise_floor,\
         total_up_bits,total_down_bits,final_accuracy,stopped_early"
    )?;
    combined.flush()?;

    // Every point shares the base config's master seed, so points differ
    // only along the swept axis.
    for value in &args.values {
        let mut cfg = file.run.clone();
        axis.apply(&mut cfg, value)?;
        cfg.validate()?;
        let point_dir = out_dir.join(format!("{}_{}", axis.name(), value));
        let trainer = Trainer::new(cfg, opts)?;
        let summary = match drive(trainer, &point_dir, None, false) {
            Ok(summary) => summary,
            Err(err) => {
                // Finished points stay on disk; the combined CSV covers them.
                combined.flush()?;
                return Err(err);
            }
        };
        let accuracy = summary
            .final_accuracy
            .map(|a| a.to_string())
            .unwrap_or_default();
        writeln!(
            combined,
            "{},{},{},{},{},{},{},{},{},{},{}",
            axis.name(),
            value,
            summary.rounds,
            summary.final_full_loss,
            summary.best_full_loss,
            summary.mean_kkt_score,
            summary.kkt_noise_floor,
            summary.total_up_bits,
            summary.total_down_bits,
            accuracy,
            summary.stopped_early,
        )?;
        combined.flush()?;
    }
    Ok(())
}

/// Runs the named suite (or all five) and prints the JSON report. Returns
/// whether every case passed; the binary turns `false` into exit 1.
pub fn cmd_check(args: CheckArgs) -> Result<bool> {
    let reports = if args.suite == "all" {
        checks::run_all()?
    } else {
        vec![checks::run_suite(Suite::parse(&args.suite)?)?]
    };
    let json = serde_json::to_string_pretty(&reports)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    if let Some(path) = &args.report {
        fs::write(path, json.clone() + "\n")?;
    }
    emit(&(json + "\n"))?;
    let mut ok = true;
    for report in &reports {
        for case in report.cases.iter().filter(|c| !c.passed) {
            ok = false;
            eprintln!(
                "violated [{}] {}: {}",
                report.suite, case.name, case.detail
            );
        }
    }
    Ok(ok)
}

const TABLE_METHODS: [Method; 5] = [
    Method::DLionMavo,
    Method::DLionAvg,
    Method::Terngrad,
    Method::Graddrop,
    Method::GAdamw,
];

pub fn cmd_bandwidth(args: BandwidthArgs) -> Result<()> {
    let methods: Vec<Method> = match &args.methods {
        Some(names) => names
            .iter()
            .map(|n| Method::parse(n))
            .collect::<Result<_>>()?,
        None => TABLE_METHODS.to_vec(),
    };

    let mut rows = Vec::new();
    for method in methods {
        let (fu, fd) = table_formula_bits(method, args.dim, args.workers, args.keep)?;
        let (cu, cd) = bandwidth_of(method, args.dim, args.workers, args.keep)?;
        rows.push((method.name().to_string(), fu, fd, cu, cd));
    }

    let mut table = format!(
        "{:<14} {:>14} {:>14} {:>12} {:>12}\n",
        "method", "formula_up", "formula_down", "codec_up", "codec_down"
    );
    for (name, fu, fd, cu, cd) in &rows {
        table.push_str(&format!(
            "{name:<14} {fu:>14} {fd:>14} {cu:>12} {cd:>12}\n"
        ));
    }

    if let Some(path) = &args.csv {
        let mut text =
            String::from("method,formula_up_bits,formula_down_bits,codec_up_bits,codec_down_bits\n");
        for (name, fu, fd, cu, cd) in &rows {
            text.push_str(&format!("{name},{fu},{fd},{cu},{cd}\n"));
        }
        fs::write(path, text)?;
    }
    emit(&table)
}

pub fn cmd_print_defaults() -> Result<()> {
    emit(&config::to_toml(&ConfigFile::defaults())?)
}
