//! `ruinscore` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ruinscore::dataset_io::{
    load_manifest, read_detection_file, ClassMaps, DatasetManifest, Scene, SceneLabel,
};
use ruinscore::detector_backend::{Backend, CascadeOutput, ExternalBackend, FileBackend};
use ruinscore::evaluate::{render_report, ReportFormat};
use ruinscore::fusion::{rule_fusion, FusionVersion};
use ruinscore::meta::{require_label_variety, train_gbdt, train_logreg, MetaModel, TrainHyper};
use ruinscore::pipeline::{
    assess_manifest, build_training_set, score_records, AssessmentRecord, PipelineError,
};
use ruinscore::synth::{gen_synthetic, NoiseSpec, SynthSpec};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ruinscore",
    version,
    about = "Post-earthquake damage level assessment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assess every image in a manifest, one JSON line per image.
    Assess(AssessArgs),
    /// Score assessment records against manifest ground truth.
    Evaluate(EvaluateArgs),
    /// Train a meta-model on fused features of a labelled manifest.
    TrainMeta(TrainArgs),
    /// Apply the rules to a single detection file.
    Fuse(FuseArgs),
    /// Write a synthetic labelled dataset.
    GenSynthetic(SynthArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Config JSON; defaults are used when neither this nor the env var is set.
    #[arg(long, env = "RUINSCORE_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    File,
    External,
}

#[derive(Debug, Args)]
struct AssessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum, default_value = "file")]
    backend: BackendKind,
    #[arg(long)]
    meta_model: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
    /// Log failing images and skip them instead of stopping.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    assessments: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelKind {
    Logreg,
    Gbdt,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum, default_value = "file")]
    backend: BackendKind,
    #[arg(long, value_enum)]
    kind: ModelKind,
    #[arg(long)]
    out: PathBuf,
    /// Learning rate (step size for logreg, shrinkage for gbdt).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SceneArg {
    Inside,
    Outside,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VersionArg {
    V1,
    V2,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    components: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "outside")]
    scene: SceneArg,
    /// Overrides the config's rule version.
    #[arg(long, value_enum)]
    version: Option<VersionArg>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    fp_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
    /// Four comma-separated level priors, Zero to Heavy.
    #[arg(long, value_parser = parse_priors)]
    priors: Option<[f64; 4]>,
}

fn parse_priors(s: &str) -> Result<[f64; 4], String> {
    let vals = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    vals.try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 comma-separated values, got {}", v.len()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Assess(a) => cmd_assess(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::TrainMeta(a) => cmd_train_meta(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", chain_message(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins an error chain, dropping causes the previous message already ends with.
fn chain_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn pipeline_error_line(e: &PipelineError, skipped: bool) -> String {
    let kind = match e {
        PipelineError::Backend { .. } => "backend",
        PipelineError::Fusion { .. } => "fusion",
        PipelineError::Meta { .. } => "meta",
        PipelineError::NoGroundTruth => "no_ground_truth",
        PipelineError::Eval(_) => "evaluate",
    };
    let source = match e {
        PipelineError::Backend { source, .. } => source.to_string(),
        PipelineError::Fusion { source, .. } => source.to_string(),
        PipelineError::Meta { source, .. } => source.to_string(),
        other => other.to_string(),
    };
    json!({
        "error": kind,
        "image_id": e.image_id(),
        "message": source,
        "skipped": skipped,
    })
    .to_string()
}

type BackendFactoryBox<'a> = Box<
    dyn Fn() -> Result<Box<dyn Backend>, ruinscore::detector_backend::BackendError> + Sync + 'a,
>;

fn backend_factory<'a>(
    kind: BackendKind,
    manifest: &'a DatasetManifest,
    cfg: &'a RunConfig,
) -> Result<BackendFactoryBox<'a>> {
    Ok(match kind {
        BackendKind::File => {
            Box::new(move || Ok(Box::new(FileBackend::new(manifest)) as Box<dyn Backend>))
        }
        BackendKind::External => {
            let bc = cfg.backend.as_ref().ok_or_else(|| {
                anyhow!("--backend external needs a \"backend\" section in the config")
            })?;
            Box::new(move || {
                let b = ExternalBackend::spawn(bc)?.with_root(manifest.root.clone());
                Ok(Box::new(b) as Box<dyn Backend>)
            })
        }
    })
}

fn cmd_assess(a: AssessArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let manifest = load_manifest(&a.manifest)?;
    let meta = match &a.meta_model {
        Some(p) => Some(MetaModel::load(p)?),
        None => None,
    };
    if cfg.fusion.decision_mode.needs_meta() && meta.is_none() {
        bail!(
            "decision mode {} requires --meta-model",
            cfg.fusion.decision_mode
        );
    }
    let factory = backend_factory(a.backend, &manifest, &cfg)?;

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut failure: Option<anyhow::Error> = None;
    let mut skipped = 0usize;
    assess_manifest(
        &manifest,
        factory.as_ref(),
        &cfg.fusion,
        meta.as_ref(),
        a.jobs as usize,
        |_, res| match res {
            Ok(rec) => match out.write_all(rec.to_json_line().as_bytes()) {
                Ok(()) => true,
                Err(e) => {
                    failure = Some(anyhow!(e).context("cannot write assessment"));
                    false
                }
            },
            Err(e) => {
                eprintln!("{}", pipeline_error_line(&e, a.keep_going));
                if a.keep_going {
                    skipped += 1;
                    true
                } else {
                    failure = Some(e.into());
                    false
                }
            }
        },
    );
    out.flush().context("cannot write assessment")?;
    if let Some(e) = failure {
        return Err(e);
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} image(s)");
    }
    Ok(())
}

fn read_assessments(path: &Path) -> Result<Vec<AssessmentRecord>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AssessmentRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid assessment record", path.display(), i + 1))?;
        records.push(rec);
    }
    Ok(records)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let records = read_assessments(&a.assessments)?;
    let report = score_records(&records, &manifest)?;
    let format = if a.json {
        ReportFormat::Json
    } else {
        ReportFormat::Text
    };
    print!("{}", render_report(&report, format));
    Ok(())
}

fn cmd_train_meta(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let manifest = load_manifest(&a.manifest)?;
    let factory = backend_factory(a.backend, &manifest, &cfg)?;
    let mut backend = factory()?;
    let (x, y) = build_training_set(&manifest, backend.as_mut(), &cfg.fusion)?;
    require_label_variety(&y)?;

    let mut hyper = TrainHyper::default();
    if let Some(s) = a.seed {
        hyper.seed = s;
    }
    let (model, loss) = match a.kind {
        ModelKind::Logreg => {
            let h = &mut hyper.logreg;
            if let Some(v) = a.lr {
                h.learning_rate = v;
            }
            if let Some(v) = a.l2 {
                h.l2 = v;
            }
            if let Some(v) = a.iterations {
                h.iterations = v;
            }
            let t = train_logreg(&x, &y, &hyper)?;
            let loss = t.final_loss();
            (MetaModel::LogReg(t.model), loss)
        }
        ModelKind::Gbdt => {
            let h = &mut hyper.gbdt;
            if let Some(v) = a.lr {
                h.learning_rate = v;
            }
            if let Some(v) = a.rounds {
                h.rounds = v;
            }
            if let Some(v) = a.max_depth {
                h.max_depth = v;
            }
            if let Some(v) = a.min_leaf {
                h.min_leaf = v;
            }
            if let Some(v) = a.lambda {
                h.lambda = v;
            }
            let t = train_gbdt(&x, &y, &hyper)?;
            let loss = t.final_loss();
            (MetaModel::Gbdt(t.model), loss)
        }
    };

    let mut correct = 0usize;
    for (xi, yi) in x.iter().zip(&y) {
        if model.predict(xi)?.argmax() == *yi {
            correct += 1;
        }
    }
    model.save(&a.out)?;
    println!("model: {} ({} samples)", model.kind(), y.len());
    println!("training accuracy: {:.4}", correct as f64 / y.len() as f64);
    println!("final loss: {loss:.6}");
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?.fusion;
    if let Some(v) = a.version {
        cfg.version = match v {
            VersionArg::V1 => FusionVersion::V1,
            VersionArg::V2 => FusionVersion::V2,
        };
    }
    let maps = ClassMaps::default();
    let damages = read_detection_file(&a.detections, &maps.damage)
        .with_context(|| format!("cannot parse {}", a.detections.display()))?;
    let components = match &a.components {
        Some(p) => read_detection_file(p, &maps.component)
            .with_context(|| format!("cannot parse {}", p.display()))?,
        None => Vec::new(),
    };
    let scene = match a.scene {
        SceneArg::Inside => Scene::Inside,
        SceneArg::Outside => Scene::Outside,
    };
    let out = CascadeOutput {
        image_id: a.detections.display().to_string(),
        scene: SceneLabel::certain(scene),
        components,
        damages,
    };
    let d = rule_fusion(&out, &cfg);
    let head = if d.rebar_forced {
        format!("{} (rebar_forced) S={:.1}", d.level, d.score)
    } else {
        format!("{} (S={:.1})", d.level, d.score)
    };
    let filters: Vec<String> = d.applied_filters.iter().map(ToString::to_string).collect();
    println!(
        "{head} crack={} spall={} rebar={}/{} filters=[{}]",
        d.counts.n_crack,
        d.counts.n_spall,
        d.counts.n_rebar_valid,
        d.counts.n_rebar_raw,
        filters.join(",")
    );
    Ok(())
}

fn cmd_gen_synthetic(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec {
        seed: a.seed,
        n_images: a.n,
        noise: NoiseSpec {
            false_positive_rate: a.fp_rate,
            confidence_jitter_sd: a.jitter_sd,
            drop_rate: a.drop_rate,
        },
        ..SynthSpec::default()
    };
    if let Some(p) = a.priors {
        spec.level_priors = p;
    }
    let manifest = gen_synthetic(&spec, &a.out)?;
    println!(
        "wrote {} images to {}",
        manifest.images.len(),
        a.out.join("manifest.json").display()
    );
    Ok(())
}
