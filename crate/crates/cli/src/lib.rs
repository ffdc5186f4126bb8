//! The `gradflow` commands, callable in-process.
//!
//! Each command writes its report to the given writer; the binary only
//! parses flags and maps the outcome to an exit status.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gradflow::checkpoint::{self, TrainingState};
use gradflow::config::load_arch;
use gradflow::gradcheck::{render_table, run_suite, CheckConfig};
use gradflow::layers::DataShape;
use gradflow::mnist::{Dataset, Split};
use gradflow::network::{ArchSpec, Network};
use gradflow::optim::{evaluate, train_epoch, CsvSink, Evaluation, TrainConfig};

/// Where samples come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Dir(PathBuf),
    Synthetic,
}

impl DataSource {
    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self {
            DataSource::Dir(dir) => Dataset::load(dir, split).with_context(|| format!("loading {split} data from {}", dir.display())),
            DataSource::Synthetic => Ok(Dataset::synthetic(split)),
        }
    }
}

/// Architecture from `--config`, or the reference net.
pub fn resolve_arch(config: Option<&Path>) -> Result<ArchSpec> {
    match config {
        Some(p) => load_arch(p).with_context(|| format!("reading architecture {}", p.display())),
        None => Ok(ArchSpec::reference()),
    }
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub arch: ArchSpec,
    pub data: DataSource,
    pub train: TrainConfig,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Trains from a fresh initialization, saving after every epoch.
pub fn cmd_train(args: &TrainArgs, log: &mut dyn Write) -> Result<Network> {
    let mut net = Network::build(args.arch.clone(), args.train.seed)?;
    args.train.validate(&net)?;
    let data = args.data.load(Split::Train)?;
    let file = File::create(&args.metrics).with_context(|| format!("creating {}", args.metrics.display()))?;
    let mut sink = CsvSink::new(BufWriter::new(file))?;
    for epoch in 0..args.train.epochs {
        let records = train_epoch(&mut net, &data, &args.train, epoch, &mut sink)?;
        let mean = records.iter().map(|r| r.loss).sum::<f64>() / records.len().max(1) as f64;
        let acc = records.last().map_or(0.0, |r| r.accuracy);
        writeln!(log, "epoch {} loss={mean:.6} accuracy={acc:.4}", epoch + 1)?;
        save(&args.checkpoint, &net, epoch as u64 + 1, args.train.seed)?;
    }
    save(&args.checkpoint, &net, args.train.epochs as u64, args.train.seed)?;
    sink.into_inner().flush().with_context(|| format!("writing {}", args.metrics.display()))?;
    Ok(net)
}

fn save(path: &Path, net: &Network, epoch: u64, seed: u64) -> Result<()> {
    checkpoint::save(path, net, TrainingState { epoch, seed }).with_context(|| format!("saving {}", path.display()))
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub arch: ArchSpec,
    pub data: DataSource,
    pub checkpoint: PathBuf,
    pub batch_size: usize,
}

/// Prints `loss=<v> accuracy=<v> n=<count>`.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<Evaluation> {
    let (net, _) = checkpoint::load(&args.checkpoint, &args.arch)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let data = args.data.load(Split::Test)?;
    let ev = evaluate(&net, &data, args.batch_size)?;
    writeln!(out, "loss={} accuracy={} n={}", ev.loss, ev.accuracy, ev.samples)?;
    Ok(ev)
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckArgs {
    pub layer: Option<String>,
    pub tolerance: Option<f64>,
    pub report: Option<PathBuf>,
}

/// Returns whether every selected check passed.
pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let mut cfg = CheckConfig::default();
    if let Some(t) = args.tolerance {
        if t.is_nan() || t <= 0.0 {
            bail!("tolerance must be positive, got {t}");
        }
        cfg.tolerance = t;
    }
    let reports = run_suite(args.layer.as_deref(), &cfg)?;
    write!(out, "{}", render_table(&reports))?;
    if let Some(path) = &args.report {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &reports)?;
    }
    Ok(reports.iter().all(|r| r.passed))
}

/// One row of the `inspect` listing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRow {
    pub index: usize,
    pub kind: &'static str,
    pub output: DataShape,
    pub weights: usize,
    pub biases: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inspection {
    pub input: DataShape,
    pub rows: Vec<LayerRow>,
    pub total: usize,
}

pub fn inspect(net: &Network) -> Inspection {
    let rows = net
        .layers()
        .iter()
        .zip(net.output_shapes(1))
        .enumerate()
        .map(|(index, (layer, output))| {
            let params = layer.params();
            LayerRow {
                index,
                kind: layer.kind(),
                output,
                weights: params.first().map_or(0, |p| p.len()),
                biases: params.get(1).map_or(0, |p| p.len()),
            }
        })
        .collect();
    Inspection {
        input: net.arch().input_shape(1),
        rows,
        total: net.num_params(),
    }
}

/// Prints the shape trace, the per-tensor parameter ledger and the total.
pub fn cmd_inspect(arch: &ArchSpec, out: &mut dyn Write) -> Result<Inspection> {
    let net = Network::build(arch.clone(), 0)?;
    let report = inspect(&net);
    writeln!(out, "{:>5}  {:<10} {:<14} {:>8} {:>8}", "layer", "kind", "output", "weights", "biases")?;
    writeln!(out, "{:>5}  {:<10} {}", "", "input", report.input.symbolic())?;
    for r in &report.rows {
        writeln!(out, "{:>5}  {:<10} {:<14} {:>8} {:>8}", r.index, r.kind, r.output.symbolic(), r.weights, r.biases)?;
    }
    for e in &arch.shortcuts {
        writeln!(out, "shortcut A{} -> A{}", e.from, e.to)?;
    }
    writeln!(out)?;
    for p in net.layers().iter().flat_map(|l| l.params()) {
        let dims: Vec<String> = p.dims.iter().map(usize::to_string).collect();
        writeln!(out, "{:<10} {:<12} {:>8}", p.name, dims.join("×"), p.len())?;
    }
    writeln!(out, "total {}", report.total)?;
    Ok(report)
}
