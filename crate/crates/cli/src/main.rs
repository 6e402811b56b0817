use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pointclu_core::gradcheck::{run_suite, FdConfig};
use pointclu_core::harness::data::{read_dataset, write_dataset};
use pointclu_core::harness::{
    derive_seed, generate_dataset, infer, linear_probe, point_labels, pretrain, write_matrix_csv,
    write_summary_csv, DatasetSpec, MetricsRecord, Model, ProbeConfig, StepTrace, TrainConfig,
};
use pointclu_core::nn::Bound;
use pointclu_core::pointcloud::{read_xyz, write_labeled_xyz, PointCloud};
use pointclu_core::Tape;

const CONFIG_FILE: &str = "config.json";
const CHECKPOINT_FILE: &str = "checkpoint.bin";
const METRICS_FILE: &str = "metrics.jsonl";
const SUMMARY_FILE: &str = "summary.csv";

#[derive(Parser)]
#[command(name = "pointclu", version, about = "Masked-clustering point-cloud pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a model and write config, checkpoint and metrics to a directory.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write affinity, score and transport-plan CSVs every N steps.
        #[arg(long, value_name = "N")]
        dump_every: Option<usize>,
    },
    /// Linear probe of a frozen checkpoint on a directory of labeled XYZ files.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Architecture config; defaults to config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Permute labels before probing (chance-level control).
        #[arg(long)]
        shuffle_labels: bool,
    },
    /// Cluster one cloud and write it back with a per-point cluster label.
    Cluster {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Expected cluster count; must match the checkpoint.
        #[arg(long)]
        k: usize,
        #[arg(long)]
        labels_out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the affinity matrix and scores as CSV into this directory.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Generate a synthetic labeled dataset from a JSON spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite; exits nonzero on failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        max_entries: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Pretrain {
            config,
            out,
            dump_every,
        } => cmd_pretrain(&config, &out, dump_every),
        Command::Probe {
            checkpoint,
            data,
            config,
            epochs,
            seed,
            shuffle_labels,
        } => cmd_probe(&checkpoint, &data, config, epochs, seed, shuffle_labels),
        Command::Cluster {
            checkpoint,
            input,
            k,
            labels_out,
            config,
            seed,
            dump_dir,
        } => cmd_cluster(&checkpoint, &input, k, &labels_out, config, seed, dump_dir),
        Command::GenData { spec, out } => cmd_gen_data(&spec, &out),
        Command::Gradcheck { seed, max_entries } => cmd_gradcheck(seed, max_entries),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e.downcast_ref::<GradcheckFailed>() {
        Some(_) => {
            eprintln!("{e}");
            Ok(ExitCode::FAILURE)
        }
        None => Err(e),
    })
}

fn training_data(cfg: &TrainConfig) -> Result<Vec<PointCloud>> {
    if let Some(dir) = &cfg.data_dir {
        return read_dataset(dir).with_context(|| format!("reading {}", dir.display()));
    }
    let spec = DatasetSpec::balanced(cfg.clouds_per_class, cfg.points_per_cloud, cfg.noise, cfg.seed);
    Ok(generate_dataset(&spec)?.into_iter().map(|s| s.cloud).collect())
}

fn dump_trace(dir: &Path, step: usize, trace: &StepTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (view, name) in trace.views.iter().zip(["a", "b"]) {
        write_matrix_csv(dir.join(format!("step{step:06}_affinity_{name}.csv")), &view.affinity)?;
        write_matrix_csv(dir.join(format!("step{step:06}_scores_{name}.csv")), &view.scores)?;
        write_matrix_csv(dir.join(format!("step{step:06}_plan_{name}.csv")), &view.plan)?;
    }
    Ok(())
}

fn cmd_pretrain(config: &Path, out: &Path, dump_every: Option<usize>) -> Result<()> {
    let cfg = TrainConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json())?;
    let data = training_data(&cfg)?;
    let total = cfg.total_steps(data.len());
    eprintln!("pretraining on {} clouds for {total} steps", data.len());

    let mut metrics = BufWriter::new(File::create(out.join(METRICS_FILE))?);
    let debug_dir = out.join("debug");
    let start = Instant::now();
    let mut observer = |r: &MetricsRecord, trace: &StepTrace| -> pointclu_core::Result<()> {
        serde_json::to_writer(&mut metrics, r)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        if let Some(n) = dump_every.filter(|&n| n > 0) {
            if r.step % n == 0 {
                dump_trace(&debug_dir, r.step, trace)
                    .map_err(|e| pointclu_core::Error::Format(e.to_string()))?;
            }
        }
        if r.step % 10 == 0 || r.step + 1 == total {
            eprintln!(
                "step {:>5}  total {:.5}  ass {:.5}  cts {:.5}  contras {:.5}  [{:.0}s]",
                r.step,
                r.l_total,
                r.l_ass,
                r.l_cts,
                r.l_contras,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    };
    let (model, records) = pretrain(Model::new(&cfg)?, &data, &mut observer)?;
    write_summary_csv(BufWriter::new(File::create(out.join(SUMMARY_FILE))?), &records)?;
    model.save(out.join(CHECKPOINT_FILE))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn load_model(checkpoint: &Path, config: Option<PathBuf>) -> Result<Model> {
    let config = config.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(CONFIG_FILE)
    });
    let cfg = TrainConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    Model::load(&cfg, checkpoint).with_context(|| format!("loading {}", checkpoint.display()))
}

fn cmd_probe(
    checkpoint: &Path,
    data: &Path,
    config: Option<PathBuf>,
    epochs: usize,
    seed: u64,
    shuffle_labels: bool,
) -> Result<()> {
    let model = load_model(checkpoint, config)?;
    let mut clouds = read_dataset(data).with_context(|| format!("reading {}", data.display()))?;
    if shuffle_labels {
        pointclu_core::harness::shuffle_labels(&mut clouds, derive_seed(seed, &[99]));
    }
    let cfg = ProbeConfig {
        epochs,
        seed,
        ..ProbeConfig::default()
    };
    let report = linear_probe(&model, &clouds, &cfg)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_cluster(
    checkpoint: &Path,
    input: &Path,
    k: usize,
    labels_out: &Path,
    config: Option<PathBuf>,
    seed: u64,
    dump_dir: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(checkpoint, config)?;
    if model.head.clusters != k {
        bail!(
            "checkpoint was trained with {} clusters, --k asked for {k}",
            model.head.clusters
        );
    }
    let cloud = read_xyz(input).with_context(|| format!("reading {}", input.display()))?;
    let tape = Tape::with_precision(model.config.precision);
    let p = Bound::frozen(&tape, &model.store);
    let out = infer(&model, &p, &cloud, seed)?;
    let scores = out.scores.value();
    let labels = point_labels(&out.patches, &scores, cloud.points())?;
    let labels: Vec<i64> = labels.into_iter().map(|l| l as i64).collect();
    write_labeled_xyz(labels_out, cloud.points(), &labels)?;
    if let Some(dir) = dump_dir {
        fs::create_dir_all(&dir)?;
        write_matrix_csv(dir.join("affinity.csv"), &out.affinity.value())?;
        write_matrix_csv(dir.join("scores.csv"), &scores)?;
    }
    Ok(())
}

fn cmd_gen_data(spec: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: DatasetSpec = serde_json::from_str(&text).context("parsing dataset spec")?;
    let shapes = generate_dataset(&spec)?;
    write_dataset(out, &shapes)?;
    eprintln!("wrote {} clouds to {}", shapes.len(), out.display());
    Ok(())
}

#[derive(Debug)]
struct GradcheckFailed(usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradcheck: {} case(s) failed", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

fn cmd_gradcheck(seed: u64, max_entries: usize) -> Result<()> {
    let cfg = FdConfig {
        seed,
        max_entries,
        ..FdConfig::default()
    };
    let start = Instant::now();
    let cases = run_suite(&cfg)?;
    let mut failed = 0;
    for case in &cases {
        let ok = case.passed(&cfg);
        failed += usize::from(!ok);
        let checked: usize = case.reports.iter().map(|r| r.checked).sum();
        let skipped: usize = case.reports.iter().map(|r| r.skipped).sum();
        println!(
            "{:<5} {:<18} max rel error {:.2e}  ({checked} entries, {skipped} at kinks)",
            if ok { "ok" } else { "FAIL" },
            case.case,
            case.max_rel_error()
        );
        if !ok {
            for r in case.reports.iter().filter(|r| !r.passed(&cfg)) {
                println!(
                    "      {}: entry {} analytic {:.6e} numeric {:.6e}",
                    r.name, r.worst_entry, r.analytic, r.numeric
                );
            }
        }
    }
    println!("{} cases in {:.1}s", cases.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(GradcheckFailed(failed).into());
    }
    Ok(())
}
