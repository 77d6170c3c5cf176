//! Command-line front end: synthetic data generation, training (backbone,
//! dependency-network head, joint model, random field), inference, and
//! evaluation. Every run is reproducible from its option document alone.
//!
//! Options resolve in three layers: library defaults, then a JSON config
//! file (`--config`, same keys as the long flags in snake_case, unknown
//! keys rejected), then explicit flags. Commands that draw random numbers
//! refuse to run without a seed. Exit codes: 0 on success, 2 for usage and
//! validation problems (bad flags, missing files, mismatched shapes), 1
//! for runtime failures such as divergent training.

use crate::archive::{load_model, save_model, Model};
use crate::data::{format_float, write_atomic, Dataset, Predictions};
use crate::ddn::{
    infer_dataset, pretrain_backbone, train_joint, Backbone, DdnGibbsConfig,
    DeepDependencyNetwork, JointConfig,
};
use crate::dn::{train_pipeline, ConditionalDn, HeadTrainConfig};
use crate::error::{Error, Result};
use crate::metrics::full_report;
use crate::mrf::learning::{fit_weights, SgdConfig};
use crate::mrf::map::MapMode;
use crate::mrf::predict::{binarize_evidence, drf_predict, DrfConfig, DrfMethod};
use crate::mrf::structure::{learn_structure, mrf_from_structure, StructureConfig};
use crate::mrf::{exact, BinaryData, PairwiseMrf};
use crate::rng::{derive_seed, Rng};
use crate::synthetic;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Parses `std::env::args`, runs the requested command, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                2
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            error_code(&err)
        }
    }
}

fn error_code(err: &Error) -> i32 {
    match err {
        Error::Divergence(_) => 1,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    setup_jobs(resolve_jobs(cli.jobs)?);
    match cli.cmd {
        Cmd::Train(t) => match t.which {
            TrainWhich::Backbone(o) => cmd_train_backbone(with_config(o)?),
            TrainWhich::DnPipeline(o) => cmd_train_dn_pipeline(with_config(o)?),
            TrainWhich::DdnJoint(o) => cmd_train_ddn_joint(with_config(o)?),
            TrainWhich::Mrf(o) => cmd_train_mrf(with_config(o)?),
        },
        Cmd::Infer(o) => cmd_infer(with_config(o)?),
        Cmd::Eval(o) => cmd_eval(with_config(o)?),
        Cmd::Gen(o) => cmd_gen(with_config(o)?),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ddn",
    version,
    about = "train, run, and score multi-label models with explicit label dependencies"
)]
struct Cli {
    /// Worker threads for data-parallel sections (default: all cores; the
    /// DDN_JOBS environment variable supplies a default).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model; writes an archive plus a per-epoch loss log.
    Train(TrainCmd),
    /// Run a model archive over a dataset, writing per-example marginals.
    Infer(InferOpts),
    /// Score a predictions file against ground-truth labels.
    Eval(EvalOpts),
    /// Generate synthetic benchmark datasets.
    Gen(GenOpts),
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(subcommand)]
    which: TrainWhich,
}

#[derive(Subcommand, Debug)]
enum TrainWhich {
    /// Pretrain a feature-extractor backbone (one output per label).
    Backbone(BackboneOpts),
    /// Train per-label conditional classifiers on a frozen backbone.
    DnPipeline(DnPipelineOpts),
    /// Fine-tune an initialized backbone + head pair jointly.
    DdnJoint(DdnJointOpts),
    /// Learn a random field (structure, then weights) over labels and
    /// binarized evidence.
    Mrf(MrfTrainOpts),
}

/// Layered option resolution: `overlay` keeps a flag value wherever one was
/// given and falls back to the config-file value otherwise.
trait Configured: Sized + DeserializeOwned + Default {
    fn config_path(&self) -> Option<&PathBuf>;
    fn overlay(self, file: Self) -> Self;
}

fn with_config<T: Configured>(flags: T) -> Result<T> {
    let file: T = match flags.config_path() {
        None => T::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("config {}: {e}", p.display())))?
        }
    };
    Ok(flags.overlay(file))
}

macro_rules! configured {
    ($ty:ty { $($f:ident),+ $(,)? }) => {
        impl Configured for $ty {
            fn config_path(&self) -> Option<&PathBuf> {
                self.config.as_ref()
            }
            fn overlay(self, file: Self) -> Self {
                let mut merged = file;
                $( if self.$f.is_some() { merged.$f = self.$f; } )+
                merged.config = self.config;
                merged
            }
        }
    };
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| {
        Error::Validation(format!(
            "missing required option --{flag} (give it as a flag or a config-file key)"
        ))
    })
}

fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>> {
    let jobs = match flag {
        Some(j) => Some(j),
        None => match std::env::var("DDN_JOBS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| {
                Error::Validation(format!("DDN_JOBS must be a positive integer, got {s:?}"))
            })?),
            Err(std::env::VarError::NotPresent) => None,
            Err(e) => return Err(Error::Validation(format!("DDN_JOBS: {e}"))),
        },
    };
    if jobs == Some(0) {
        return Err(Error::Validation("--jobs must be >= 1".into()));
    }
    Ok(jobs)
}

fn setup_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // Best effort: the global pool can only be sized once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// `<out>.log` next to the archive unless the caller chose a path.
fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn default_report_path(pred: &Path) -> PathBuf {
    let mut s = pred.as_os_str().to_owned();
    s.push(".report");
    PathBuf::from(s)
}

/// One objective value per line, in the exact-round-trip float format.
fn write_loss_log(path: &Path, values: &[f64]) -> Result<()> {
    let mut text = String::new();
    for v in values {
        text.push_str(&format_float(*v));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn check_unit_interval(x: f64, flag: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Validation(format!("--{flag} {x} outside [0, 1]")))
    }
}

// ---------------------------------------------------------------------------
// train backbone

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BackboneOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output archive path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-log path (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Hidden widths, comma separated (default: one layer of 4*max(d, n)).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// L2 penalty strength.
    #[arg(long)]
    l2: Option<f64>,
    /// RNG seed (required: initialization and batch order are seeded).
    #[arg(long)]
    seed: Option<u64>,
}
configured!(BackboneOpts { data, out, log, hidden, epochs, batch_size, learning_rate, l2, seed });

fn cmd_train_backbone(o: BackboneOpts) -> Result<()> {
    let data = require(o.data, "data")?;
    let out = require(o.out, "out")?;
    let seed = require(o.seed, "seed")?;
    let log = o.log.unwrap_or_else(|| default_log_path(&out));
    let ds = Dataset::load(&data)?;
    let hidden = o
        .hidden
        .unwrap_or_else(|| Backbone::default_hidden(ds.feature_dim, ds.label_count));
    let mut cfg = SgdConfig { seed, ..SgdConfig::default() };
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.l2 {
        cfg.l2 = v;
    }
    let mut backbone = Backbone::new(
        ds.feature_dim,
        ds.label_count,
        &hidden,
        &mut Rng::stream(seed, "backbone-init"),
    );
    let report = pretrain_backbone(&mut backbone, &ds, &cfg)?;
    save_model(&Model::Backbone(backbone), &out)?;
    write_loss_log(&log, &report.epoch_values)?;
    eprintln!(
        "wrote backbone archive to {} ({} loss lines in {})",
        out.display(),
        report.epoch_values.len(),
        log.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train dn-pipeline

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DnPipelineOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Backbone archive whose (frozen) outputs feed the classifiers.
    #[arg(long)]
    init_backbone: Option<PathBuf>,
    /// Output archive path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-log path (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Classifier family for the per-label conditionals.
    #[arg(long, value_enum)]
    head: Option<HeadKindArg>,
    /// Hidden widths for mlp heads, comma separated (default: four layers
    /// of max(2*(m+n), 64)).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Regularization strength (L1 for lr heads, L2 decay for mlp heads).
    #[arg(long)]
    reg: Option<f64>,
    /// RNG seed (required).
    #[arg(long)]
    seed: Option<u64>,
}
configured!(DnPipelineOpts {
    data,
    init_backbone,
    out,
    log,
    head,
    hidden,
    epochs,
    batch_size,
    learning_rate,
    reg,
    seed,
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum HeadKindArg {
    Lr,
    Mlp,
}

fn load_backbone(path: &Path) -> Result<Backbone> {
    match load_model(path)? {
        Model::Backbone(b) => Ok(b),
        other => Err(Error::Validation(format!(
            "--init-backbone needs a backbone archive, found kind {:?}",
            other.kind()
        ))),
    }
}

fn cmd_train_dn_pipeline(o: DnPipelineOpts) -> Result<()> {
    let data = require(o.data, "data")?;
    let init_backbone = require(o.init_backbone, "init-backbone")?;
    let out = require(o.out, "out")?;
    let seed = require(o.seed, "seed")?;
    let log = o.log.unwrap_or_else(|| default_log_path(&out));
    let ds = Dataset::load(&data)?;
    let backbone = load_backbone(&init_backbone)?;
    if backbone.feature_dim() != ds.feature_dim {
        return Err(Error::Dimension(format!(
            "backbone reads {} features but the dataset carries {}",
            backbone.feature_dim(),
            ds.feature_dim
        )));
    }
    let m = backbone.embedding_dim();
    let n = ds.label_count;
    let kind = o.head.unwrap_or(HeadKindArg::Mlp);
    if kind == HeadKindArg::Lr && o.hidden.is_some() {
        return Err(Error::Validation("--hidden only applies to --head mlp".into()));
    }
    let mut head = match kind {
        HeadKindArg::Lr => ConditionalDn::new_lr(m, n)?,
        HeadKindArg::Mlp => {
            let hidden = o.hidden.unwrap_or_else(|| ConditionalDn::default_mlp_hidden(m, n));
            ConditionalDn::new_mlp(m, n, &hidden, seed)?
        }
    };
    let rows: Vec<(Vec<f64>, Vec<u8>)> = ds
        .examples
        .iter()
        .map(|ex| (backbone.embed(&ex.features), ex.labels.clone()))
        .collect();
    let mut cfg = HeadTrainConfig { seed, ..HeadTrainConfig::default() };
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.reg {
        cfg.reg = v;
    }
    let report = train_pipeline(&mut head, &rows, &cfg)?;
    save_model(&Model::Dn(head), &out)?;
    write_loss_log(&log, &report.epoch_values)?;
    eprintln!(
        "wrote head archive to {} ({} loss lines in {})",
        out.display(),
        report.epoch_values.len(),
        log.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train ddn-joint

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DdnJointOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained backbone archive (required: joint training fine-tunes,
    /// it does not start from scratch).
    #[arg(long)]
    init_backbone: Option<PathBuf>,
    /// Pipeline-trained head archive (required, same reason).
    #[arg(long)]
    init_head: Option<PathBuf>,
    /// Output archive path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-log path (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Start of the stepped learning-rate schedule.
    #[arg(long)]
    initial_lr: Option<f64>,
    /// Multiplier applied every decay-every epochs.
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    /// Decoupled L2 on weight matrices.
    #[arg(long)]
    l2: Option<f64>,
    /// RNG seed (required).
    #[arg(long)]
    seed: Option<u64>,
}
configured!(DdnJointOpts {
    data,
    init_backbone,
    init_head,
    out,
    log,
    epochs,
    batch_size,
    initial_lr,
    lr_decay,
    decay_every,
    l2,
    seed,
});

fn cmd_train_ddn_joint(o: DdnJointOpts) -> Result<()> {
    let data = require(o.data, "data")?;
    let init_backbone = require(o.init_backbone, "init-backbone")?;
    let init_head = require(o.init_head, "init-head")?;
    let out = require(o.out, "out")?;
    let seed = require(o.seed, "seed")?;
    let log = o.log.unwrap_or_else(|| default_log_path(&out));
    let ds = Dataset::load(&data)?;
    let backbone = load_backbone(&init_backbone)?;
    let head = match load_model(&init_head)? {
        Model::Dn(dn) => dn,
        other => {
            return Err(Error::Validation(format!(
                "--init-head needs a dependency-network head archive, found kind {:?}",
                other.kind()
            )))
        }
    };
    let mut ddn = DeepDependencyNetwork::new(backbone, head)?;
    let mut cfg = JointConfig { seed, ..JointConfig::default() };
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.initial_lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = o.lr_decay {
        cfg.lr_decay = v;
    }
    if let Some(v) = o.decay_every {
        cfg.decay_every = v;
    }
    if let Some(v) = o.l2 {
        cfg.l2 = v;
    }
    let report = train_joint(&mut ddn, &ds, &cfg)?;
    save_model(&Model::Ddn(ddn), &out)?;
    write_loss_log(&log, &report.epoch_values)?;
    eprintln!(
        "wrote joint archive to {} ({} loss lines in {})",
        out.display(),
        report.epoch_values.len(),
        log.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train mrf

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MrfTrainOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training dataset (features become evidence bits at --tau-e).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output archive path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log path for per-epoch objective values (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Neighbor cap per node, in [2, 10].
    #[arg(long)]
    cap: Option<usize>,
    /// Evidence binarization threshold (activation > tau-e reads as 1).
    #[arg(long)]
    tau_e: Option<f64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_factor: Option<f64>,
    /// Epochs per lambda step of the structure sweep.
    #[arg(long)]
    structure_epochs: Option<usize>,
    #[arg(long)]
    structure_learning_rate: Option<f64>,
    #[arg(long)]
    structure_batch_size: Option<usize>,
    /// Weight-fitting epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// L2 penalty strength for weight fitting.
    #[arg(long)]
    l2: Option<f64>,
    /// RNG seed (required).
    #[arg(long)]
    seed: Option<u64>,
}
configured!(MrfTrainOpts {
    data,
    out,
    log,
    cap,
    tau_e,
    lambda_min,
    lambda_max,
    lambda_factor,
    structure_epochs,
    structure_learning_rate,
    structure_batch_size,
    epochs,
    batch_size,
    learning_rate,
    l2,
    seed,
});

fn cmd_train_mrf(o: MrfTrainOpts) -> Result<()> {
    let data = require(o.data, "data")?;
    let out = require(o.out, "out")?;
    let seed = require(o.seed, "seed")?;
    let log = o.log.unwrap_or_else(|| default_log_path(&out));
    let tau_e = o.tau_e.unwrap_or(0.5);
    check_unit_interval(tau_e, "tau-e")?;
    let ds = Dataset::load(&data)?;
    let labels = ds.label_rows();
    let evidence: Vec<Vec<u8>> = ds
        .examples
        .iter()
        .map(|ex| binarize_evidence(&ex.features, tau_e))
        .collect();
    let bd = BinaryData::from_parts(&labels, &evidence);

    let mut scfg = StructureConfig { seed, ..StructureConfig::default() };
    if let Some(v) = o.cap {
        scfg.neighbor_cap = v;
    }
    if let Some(v) = o.lambda_min {
        scfg.lambda_min = v;
    }
    if let Some(v) = o.lambda_max {
        scfg.lambda_max = v;
    }
    if let Some(v) = o.lambda_factor {
        scfg.lambda_factor = v;
    }
    if let Some(v) = o.structure_epochs {
        scfg.epochs = v;
    }
    if let Some(v) = o.structure_learning_rate {
        scfg.learning_rate = v;
    }
    if let Some(v) = o.structure_batch_size {
        scfg.batch_size = v;
    }
    let learned = learn_structure(&bd, &scfg)?;
    for w in &learned.warnings {
        eprintln!("warning: {w}");
    }
    let mut mrf = mrf_from_structure(ds.label_count, ds.feature_dim, &learned.edges, scfg.neighbor_cap)?;

    let mut wcfg = SgdConfig { seed, ..SgdConfig::default() };
    if let Some(v) = o.epochs {
        wcfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        wcfg.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        wcfg.learning_rate = v;
    }
    if let Some(v) = o.l2 {
        wcfg.l2 = v;
    }
    let report = fit_weights(&mut mrf, &bd, &wcfg)?;
    save_model(&Model::Mrf(mrf), &out)?;
    write_loss_log(&log, &report.epoch_values)?;
    eprintln!(
        "wrote random-field archive ({} edges) to {} ({} objective lines in {})",
        learned.edges.len(),
        out.display(),
        report.epoch_values.len(),
        log.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Model archive.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset whose features drive the predictions (labels are ignored).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Predictions output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Query method for random-field archives (ddn archives always sample).
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Sampling sweeps kept for the estimate.
    #[arg(long)]
    n_samples: Option<usize>,
    /// Discarded leading sweeps.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Cluster-size bound for belief propagation.
    #[arg(long)]
    i_bound: Option<usize>,
    /// Message-passing iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Message damping in [0, 1).
    #[arg(long)]
    damping: Option<f64>,
    /// Message convergence threshold.
    #[arg(long)]
    tol: Option<f64>,
    /// Wall-clock budget per example, milliseconds.
    #[arg(long)]
    time_budget_ms: Option<u64>,
    /// MAP search mode.
    #[arg(long, value_enum)]
    map_mode: Option<MapModeArg>,
    /// Random restarts for ICM.
    #[arg(long)]
    restarts: Option<usize>,
    /// Evidence binarization threshold for random-field archives.
    #[arg(long)]
    tau_e: Option<f64>,
    /// RNG seed (required for sampling methods).
    #[arg(long)]
    seed: Option<u64>,
}
configured!(InferOpts {
    model,
    data,
    out,
    method,
    n_samples,
    burn_in,
    i_bound,
    max_iters,
    damping,
    tol,
    time_budget_ms,
    map_mode,
    restarts,
    tau_e,
    seed,
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Exact,
    Gibbs,
    Bp,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MapModeArg {
    Exact,
    Icm,
}

fn cmd_infer(o: InferOpts) -> Result<()> {
    let model_path = require(o.model.clone(), "model")?;
    let data = require(o.data.clone(), "data")?;
    let out = require(o.out.clone(), "out")?;
    let ds = Dataset::load(&data)?;
    if ds.is_empty() {
        return Err(Error::Validation("no examples to infer on".into()));
    }
    let budget = o.time_budget_ms.map(Duration::from_millis);
    let (n_out, probs): (usize, Vec<Vec<f64>>) = match load_model(&model_path)? {
        Model::Mrf(mrf) => infer_mrf(&mrf, &ds, &o, budget)?,
        Model::Ddn(ddn) => {
            if !matches!(o.method, None | Some(MethodArg::Gibbs)) {
                return Err(Error::Validation(
                    "a ddn archive only answers --method gibbs".into(),
                ));
            }
            let mut cfg = DdnGibbsConfig {
                seed: require(o.seed, "seed")?,
                time_budget: budget,
                ..DdnGibbsConfig::default()
            };
            if let Some(v) = o.n_samples {
                if v == 0 {
                    return Err(Error::Validation("--n-samples must be >= 1".into()));
                }
                cfg.n_samples = v;
            }
            if let Some(v) = o.burn_in {
                cfg.burn_in = v;
            }
            (ddn.label_count(), infer_dataset(&ddn, &ds, &cfg)?)
        }
        Model::Backbone(b) => {
            if o.method.is_some() {
                return Err(Error::Validation(
                    "a backbone archive is a deterministic feed-forward map; --method does not apply".into(),
                ));
            }
            if b.feature_dim() != ds.feature_dim {
                return Err(Error::Dimension(format!(
                    "backbone reads {} features but the dataset carries {}",
                    b.feature_dim(),
                    ds.feature_dim
                )));
            }
            (
                b.embedding_dim(),
                ds.examples.iter().map(|ex| b.embed(&ex.features)).collect(),
            )
        }
        Model::Dn(_) => {
            return Err(Error::Validation(
                "a bare head archive has no feature extractor; fine-tune it into a joint \
                 archive (train ddn-joint) and infer with that"
                    .into(),
            ))
        }
    };
    let mut preds = Predictions::new(n_out);
    for (ex, p) in ds.examples.iter().zip(probs) {
        preds.push(ex.id.clone(), p);
    }
    preds.save(&out)?;
    eprintln!("wrote predictions for {} examples to {}", preds.ids.len(), out.display());
    Ok(())
}

/// Random-field prediction over a dataset, one derived RNG stream per
/// example so results are independent of row order and thread count.
fn infer_mrf(
    mrf: &PairwiseMrf,
    ds: &Dataset,
    o: &InferOpts,
    budget: Option<Duration>,
) -> Result<(usize, Vec<Vec<f64>>)> {
    if mrf.n_evidence() != ds.feature_dim {
        return Err(Error::Dimension(format!(
            "model reads {} evidence bits but the dataset carries {} features",
            mrf.n_evidence(),
            ds.feature_dim
        )));
    }
    let method = match o.method.unwrap_or(MethodArg::Gibbs) {
        MethodArg::Exact => DrfMethod::Exact,
        MethodArg::Gibbs => DrfMethod::Gibbs,
        MethodArg::Bp => DrfMethod::Bp,
        MethodArg::Map => DrfMethod::Map,
    };
    if method == DrfMethod::Exact && mrf.n_labels() > exact::MAX_ENUM_NODES {
        return Err(Error::Validation(format!(
            "--method exact enumerates label states and is limited to {} labels, model has {}",
            exact::MAX_ENUM_NODES,
            mrf.n_labels()
        )));
    }
    let map_mode = match o.map_mode.unwrap_or(MapModeArg::Exact) {
        MapModeArg::Exact => MapMode::Exact,
        MapModeArg::Icm => MapMode::Icm,
    };
    let stochastic =
        method == DrfMethod::Gibbs || (method == DrfMethod::Map && map_mode == MapMode::Icm);
    let seed = if stochastic { require(o.seed, "seed")? } else { o.seed.unwrap_or(0) };

    let mut cfg = DrfConfig { method, ..DrfConfig::default() };
    if let Some(v) = o.tau_e {
        check_unit_interval(v, "tau-e")?;
        cfg.tau_e = v;
    }
    if let Some(v) = o.n_samples {
        if v == 0 {
            return Err(Error::Validation("--n-samples must be >= 1".into()));
        }
        cfg.gibbs.n_samples = v;
    }
    if let Some(v) = o.burn_in {
        cfg.gibbs.burn_in = v;
    }
    cfg.gibbs.time_budget = budget;
    if let Some(v) = o.i_bound {
        if v == 0 {
            return Err(Error::Validation("--i-bound must be >= 1".into()));
        }
        cfg.bp.i_bound = v;
    }
    if let Some(v) = o.max_iters {
        if v == 0 {
            return Err(Error::Validation("--max-iters must be >= 1".into()));
        }
        cfg.bp.max_iters = v;
    }
    if let Some(v) = o.damping {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Validation(format!("--damping {v} outside [0, 1)")));
        }
        cfg.bp.damping = v;
    }
    if let Some(v) = o.tol {
        if !(v > 0.0) {
            return Err(Error::Validation(format!("--tol must be positive, got {v}")));
        }
        cfg.bp.tol = v;
    }
    cfg.bp.time_budget = budget;
    cfg.map.mode = map_mode;
    if let Some(v) = o.restarts {
        cfg.map.restarts = v;
    }
    cfg.map.time_budget = budget;

    let rows: Result<Vec<Vec<f64>>> = ds
        .examples
        .par_iter()
        .map(|ex| {
            let mut cfg = cfg.clone();
            let s = derive_seed(seed, &format!("example-{}", ex.id));
            cfg.gibbs.seed = s;
            cfg.map.seed = s;
            Ok(drf_predict(mrf, &ex.features, &cfg)?.probabilities())
        })
        .collect();
    Ok((mrf.n_labels(), rows?))
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Predictions file to score.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth dataset (same ids, same order).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Decision threshold for SA, JI, and the threshold PRF block.
    #[arg(long)]
    threshold: Option<f64>,
    /// Add a top-k PRF block.
    #[arg(long)]
    top_k: Option<usize>,
    /// Report file path (default: <pred>.report).
    #[arg(long)]
    out: Option<PathBuf>,
}
configured!(EvalOpts { pred, truth, threshold, top_k, out });

fn cmd_eval(o: EvalOpts) -> Result<()> {
    let pred_path = require(o.pred, "pred")?;
    let truth_path = require(o.truth, "truth")?;
    let threshold = o.threshold.unwrap_or(0.5);
    check_unit_interval(threshold, "threshold")?;
    let preds = Predictions::load(&pred_path)?;
    let truth = Dataset::load(&truth_path)?;
    if preds.label_count != truth.label_count {
        return Err(Error::Dimension(format!(
            "predictions carry {} labels per row, truth carries {}",
            preds.label_count, truth.label_count
        )));
    }
    if preds.ids.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows vs {} truth examples",
            preds.ids.len(),
            truth.len()
        )));
    }
    if preds.ids.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    for (i, (pid, ex)) in preds.ids.iter().zip(&truth.examples).enumerate() {
        if pid != &ex.id {
            return Err(Error::Validation(format!(
                "row {}: prediction id {:?} but truth id {:?}; rows must align",
                i + 1,
                pid,
                ex.id
            )));
        }
    }
    if let Some(k) = o.top_k {
        if k == 0 || k > truth.label_count {
            return Err(Error::Validation(format!(
                "--top-k {k} outside [1, {}]",
                truth.label_count
            )));
        }
    }
    let report = full_report(&preds.probs, &truth.label_rows(), threshold, o.top_k);
    for j in &report.map_skipped_labels {
        eprintln!("warning: label {j} has no positive example; skipped in the mAP mean");
    }
    print!("{}", report.to_aligned());
    let out = o.out.unwrap_or_else(|| default_report_path(&pred_path));
    write_atomic(&out, report.to_key_values().as_bytes())?;
    eprintln!("wrote report to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gen

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenOpts {
    /// JSON config file supplying any of this subcommand's options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Which generator to run.
    #[arg(long, value_enum)]
    kind: Option<GenKindArg>,
    /// Number of examples.
    #[arg(long)]
    count: Option<usize>,
    /// Output dataset path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evidence noise (xor default 0.25; chain default: no evidence).
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Chain length in labels.
    #[arg(long)]
    labels: Option<usize>,
    /// Chain coupling magnitude; edges alternate +w, -w.
    #[arg(long)]
    pair_weight: Option<f64>,
    /// RNG seed (required).
    #[arg(long)]
    seed: Option<u64>,
}
configured!(GenOpts { kind, count, out, noise_sigma, labels, pair_weight, seed });

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum GenKindArg {
    /// Two informative evidence features, third label = first XOR second.
    Xor,
    /// Exact samples from a planted chain over the labels.
    Chain,
}

fn cmd_gen(o: GenOpts) -> Result<()> {
    let kind = require(o.kind, "kind")?;
    let count = require(o.count, "count")?;
    let out = require(o.out, "out")?;
    let seed = require(o.seed, "seed")?;
    let ds = match kind {
        GenKindArg::Xor => {
            if o.labels.is_some() || o.pair_weight.is_some() {
                return Err(Error::Validation(
                    "--labels and --pair-weight only apply to --kind chain".into(),
                ));
            }
            synthetic::xor_dataset(count, o.noise_sigma.unwrap_or(0.25), seed)?
        }
        GenKindArg::Chain => {
            let n = o.labels.unwrap_or(5);
            if !(2..=16).contains(&n) {
                return Err(Error::Validation(format!(
                    "--labels {n} outside [2, 16] (exact sampling enumerates the joint)"
                )));
            }
            let w = o.pair_weight.unwrap_or(2.0);
            let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            let pair_weights: Vec<f64> =
                (0..n - 1).map(|i| if i % 2 == 0 { w } else { -w }).collect();
            let model = synthetic::planted_model(n, &edges, &vec![0.0; n], &pair_weights)?;
            synthetic::planted_mrf_dataset(&model, count, o.noise_sigma, seed)?
        }
    };
    ds.save(&out)?;
    eprintln!(
        "wrote {} examples (d={}, n={}) to {}",
        ds.len(),
        ds.feature_dim,
        ds.label_count,
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_file_which_beats_defaults() {
        let flags = BackboneOpts {
            epochs: Some(3),
            seed: Some(9),
            ..BackboneOpts::default()
        };
        let file = BackboneOpts {
            epochs: Some(100),
            batch_size: Some(8),
            ..BackboneOpts::default()
        };
        let merged = flags.overlay(file);
        // Flag wins where both are set; file fills the gaps; untouched
        // fields stay None (library default applies later).
        assert_eq!(merged.epochs, Some(3));
        assert_eq!(merged.batch_size, Some(8));
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.learning_rate, None);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"epochs": 5, "warp_factor": 9}"#).unwrap();
        let flags = BackboneOpts { config: Some(path), ..BackboneOpts::default() };
        let err = with_config(flags).unwrap_err();
        assert!(err.to_string().contains("warp_factor"), "{err}");
    }

    #[test]
    fn config_file_fills_unset_options() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"epochs": 5, "hidden": [8, 8]}"#).unwrap();
        let flags = BackboneOpts {
            config: Some(path),
            epochs: Some(2),
            ..BackboneOpts::default()
        };
        let merged = with_config(flags).unwrap();
        assert_eq!(merged.epochs, Some(2));
        assert_eq!(merged.hidden, Some(vec![8, 8]));
    }

    #[test]
    fn missing_required_option_names_the_flag() {
        let err = require::<u64>(None, "seed").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("--seed"), "{err}");
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(error_code(&Error::Divergence("x".into())), 1);
        assert_eq!(error_code(&Error::Validation("x".into())), 2);
        assert_eq!(error_code(&Error::Dimension("x".into())), 2);
        assert_eq!(
            error_code(&Error::Io {
                path: "p".into(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
            }),
            2
        );
    }

    #[test]
    fn log_path_defaults_next_to_the_archive() {
        assert_eq!(default_log_path(Path::new("m/b.json")), PathBuf::from("m/b.json.log"));
        assert_eq!(default_report_path(Path::new("p.tsv")), PathBuf::from("p.tsv.report"));
    }

    #[test]
    fn jobs_zero_is_rejected() {
        assert!(resolve_jobs(Some(0)).is_err());
        assert_eq!(resolve_jobs(Some(3)).unwrap(), Some(3));
    }

    #[test]
    fn cli_parses_nested_train_subcommands() {
        let cli = Cli::try_parse_from([
            "ddn",
            "train",
            "ddn-joint",
            "--data",
            "d.tsv",
            "--init-backbone",
            "b.json",
            "--init-head",
            "h.json",
            "--out",
            "m.json",
            "--seed",
            "4",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Train(TrainCmd { which: TrainWhich::DdnJoint(o) }) => {
                assert_eq!(o.seed, Some(4));
                assert_eq!(o.init_head, Some(PathBuf::from("h.json")));
            }
            other => panic!("parsed into {other:?}"),
        }
    }

    #[test]
    fn joint_training_without_init_head_is_a_usage_error() {
        let o = DdnJointOpts {
            data: Some(PathBuf::from("d.tsv")),
            init_backbone: Some(PathBuf::from("b.json")),
            out: Some(PathBuf::from("m.json")),
            seed: Some(1),
            ..DdnJointOpts::default()
        };
        let err = cmd_train_ddn_joint(o).unwrap_err();
        assert_eq!(error_code(&err), 2);
        assert!(err.to_string().contains("--init-head"), "{err}");
    }

    #[test]
    fn infer_on_a_missing_model_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.tsv");
        let ds = synthetic::xor_dataset(3, 0.1, 1).unwrap();
        ds.save(&data).unwrap();
        let o = InferOpts {
            model: Some(dir.path().join("nope.json")),
            data: Some(data),
            out: Some(dir.path().join("p.tsv")),
            seed: Some(1),
            ..InferOpts::default()
        };
        let err = cmd_infer(o).unwrap_err();
        assert_eq!(error_code(&err), 2);
    }

    #[test]
    fn gen_writes_a_loadable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("xor.tsv");
        cmd_gen(GenOpts {
            kind: Some(GenKindArg::Xor),
            count: Some(20),
            out: Some(out.clone()),
            seed: Some(5),
            ..GenOpts::default()
        })
        .unwrap();
        let ds = Dataset::load(&out).unwrap();
        assert_eq!((ds.feature_dim, ds.label_count, ds.len()), (2, 3, 20));
        for ex in &ds.examples {
            assert_eq!(ex.labels[2], ex.labels[0] ^ ex.labels[1]);
        }
    }

    #[test]
    fn gen_chain_without_noise_is_label_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("chain.tsv");
        cmd_gen(GenOpts {
            kind: Some(GenKindArg::Chain),
            count: Some(10),
            out: Some(out.clone()),
            seed: Some(5),
            labels: Some(4),
            ..GenOpts::default()
        })
        .unwrap();
        let ds = Dataset::load(&out).unwrap();
        assert_eq!((ds.feature_dim, ds.label_count, ds.len()), (0, 4, 10));
    }

    #[test]
    fn eval_of_perfect_predictions_reports_ones() {
        let dir = tempfile::tempdir().unwrap();
        let truth_path = dir.path().join("truth.tsv");
        let pred_path = dir.path().join("pred.tsv");
        let ds = synthetic::xor_dataset(12, 0.1, 2).unwrap();
        ds.save(&truth_path).unwrap();
        let mut preds = Predictions::new(ds.label_count);
        for ex in &ds.examples {
            preds.push(ex.id.clone(), ex.labels.iter().map(|&l| l as f64).collect());
        }
        preds.save(&pred_path).unwrap();
        cmd_eval(EvalOpts {
            pred: Some(pred_path.clone()),
            truth: Some(truth_path),
            ..EvalOpts::default()
        })
        .unwrap();
        let report = std::fs::read_to_string(default_report_path(&pred_path)).unwrap();
        for key in ["map=", "lrap=", "sa=", "ji="] {
            let line = report.lines().find(|l| l.starts_with(key)).unwrap();
            assert!(line.ends_with("1.000000"), "{line}");
        }
    }

    #[test]
    fn eval_rejects_mismatched_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let truth_path = dir.path().join("truth.tsv");
        let pred_path = dir.path().join("pred.tsv");
        let ds = synthetic::xor_dataset(5, 0.1, 2).unwrap();
        ds.save(&truth_path).unwrap();
        // One label column too few.
        let mut preds = Predictions::new(2);
        for ex in &ds.examples {
            preds.push(ex.id.clone(), vec![0.5, 0.5]);
        }
        preds.save(&pred_path).unwrap();
        let err = cmd_eval(EvalOpts {
            pred: Some(pred_path),
            truth: Some(truth_path),
            ..EvalOpts::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert_eq!(error_code(&err), 2);
    }
}
