//! Subcommands of the `rff-bench` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rff_core::data::{make_synthetic, DatasetBundle};
use rff_core::embed::train_embed;
use rff_core::eval::{evaluate, Evaluation, Predictor};
use rff_core::gen::{finish_generation, synthesis_seed, synthesize_unseen, train_gen};
use rff_core::gradcheck::loss_suite;

use crate::checkpoint::Checkpoint;
use crate::config::{Ablation, RunConfig};
use crate::error::{BenchError, Result};
use crate::io::{format_real, load_dataset, matrix_to_csv, read_text, save_dataset, write_text};
use crate::report::{load_metrics, metrics_csv, predictions_csv, table, MetricsRow};

pub const MANIFEST: &str = "manifest.txt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const METRICS: &str = "metrics.csv";
pub const GRADCHECK_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "rff-bench", version, about = "Redundancy-free GZSL benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablate: Option<Ablation>,
    /// Start from the published network sizes instead of the desk-scale ones.
    #[arg(long)]
    paper_scale: bool,
    /// Dataset directory; a synthetic benchmark is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of a finished `train-embed` or `train-gen` run.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    SynthData(Common),
    /// Train the bounded semantic-embedding model.
    TrainEmbed(Common),
    /// Train the bounded feature-generation model and evaluate it.
    TrainGen(Common),
    /// Write synthetic unseen-class features from a trained generation run.
    SynthFeatures(Common),
    /// Evaluate a trained run; generation runs are scored at every `eval.counts` entry.
    Eval(Common),
    /// Finite-difference checks of every training loss.
    Gradcheck(Common),
    /// Collect metric files into one table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metric files, or run directories containing `metrics.csv`.
        inputs: Vec<PathBuf>,
    },
}

/// Runs one command line (program name first) and returns the exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthData(c) => synth_data(&c),
        Command::TrainEmbed(c) => train_embed_cmd(&c),
        Command::TrainGen(c) => train_gen_cmd(&c),
        Command::SynthFeatures(c) => synth_features(&c),
        Command::Eval(c) => eval_cmd(&c),
        Command::Gradcheck(c) => gradcheck(&c),
        Command::Report { common, inputs } => report_cmd(&common, &inputs),
    }
}

/// Defaults, preset, model manifest, config file, then flags.
fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = if c.paper_scale {
        RunConfig::paper_scale()
    } else {
        RunConfig::default()
    };
    if let Some(model) = &c.model {
        let manifest = model.join(MANIFEST);
        if manifest.is_file() {
            cfg.merge_text(&manifest.display().to_string(), &read_text(&manifest)?)?;
        }
    }
    if let Some(path) = &c.config {
        cfg.merge_text(&path.display().to_string(), &read_text(path)?)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(a) = c.ablate {
        cfg.apply_ablation(a);
    }
    if let Some(d) = &c.data {
        cfg.data = Some(d.clone());
    }
    if let Some(m) = &c.model {
        cfg.model = Some(m.clone());
    }
    if let Some(id) = &c.run_id {
        cfg.run_id = id.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    let out = c
        .out
        .as_deref()
        .ok_or_else(|| BenchError::Usage("--out DIR is required".into()))?;
    fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    Ok(out)
}

fn dataset(cfg: &RunConfig) -> Result<DatasetBundle> {
    match &cfg.data {
        Some(dir) => Ok(load_dataset(dir)?),
        None => Ok(make_synthetic(&cfg.resolved_synth())?.bundle),
    }
}

fn model_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.model
        .as_deref()
        .ok_or_else(|| BenchError::Usage("--model DIR is required".into()))
}

fn write_manifest(out: &Path, cfg: &RunConfig) -> Result<String> {
    let text = cfg.manifest();
    write_text(&out.join(MANIFEST), &text)?;
    Ok(text)
}

fn write_evaluation(out: &Path, bundle: &DatasetBundle, e: &Evaluation) -> Result<()> {
    write_text(
        &out.join("predictions.csv"),
        &predictions_csv(&bundle.test_index, &e.labels, &e.predictions),
    )
}

fn write_metrics(out: &Path, rows: &[MetricsRow]) -> Result<()> {
    for r in rows {
        println!("{}", r.csv_line());
    }
    write_text(&out.join(METRICS), &metrics_csv(rows))
}

fn csv(header: &str, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn synth_data(c: &Common) -> Result<()> {
    let out = out_dir(c)?;
    let cfg = resolve(c)?;
    let data = make_synthetic(&cfg.resolved_synth())?;
    save_dataset(out, &data.bundle)?;
    let clusters: String = data.clusters.iter().map(|k| format!("{k}\n")).collect();
    write_text(&out.join("clusters.csv"), &clusters)?;
    write_manifest(out, &cfg)?;
    Ok(())
}

fn train_embed_cmd(c: &Common) -> Result<()> {
    let out = out_dir(c)?;
    let cfg = resolve(c)?;
    let manifest = write_manifest(out, &cfg)?;
    let bundle = dataset(&cfg)?;
    let run = train_embed(&bundle, &cfg.resolved_embed())?;
    let log = csv(
        "epoch,hinge,kl,beta,seen_acc,unseen_acc,H",
        run.log.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                format_real(e.hinge),
                format_real(e.kl),
                format_real(e.beta),
                format_real(e.metrics.seen),
                format_real(e.metrics.unseen),
                format_real(e.metrics.harmonic),
            ]
        }),
    );
    write_text(&out.join("log.csv"), &log)?;
    let mut ck = Checkpoint::new("embed", cfg.seed, &manifest);
    ck.push_mapper(&run.params);
    ck.save(&out.join(CHECKPOINT))?;
    let evaluation = evaluate(&bundle, Predictor::Embedding { mapper: &run.params })?;
    write_evaluation(out, &bundle, &evaluation)?;
    write_metrics(
        out,
        &[MetricsRow::new(&cfg.run_id, "embedding", evaluation.metrics, cfg.seed)],
    )
}

fn train_gen_cmd(c: &Common) -> Result<()> {
    let out = out_dir(c)?;
    let cfg = resolve(c)?;
    let manifest = write_manifest(out, &cfg)?;
    let bundle = dataset(&cfg)?;
    let gen_cfg = cfg.resolved_gen();
    let run = train_gen(&bundle, &gen_cfg)?;
    let (final_classifier, evaluation) =
        finish_generation(&bundle, &run.models, &gen_cfg, gen_cfg.synth_per_class)?;

    let epochs = csv(
        "epoch,critic,adversarial,center,cls,kl_real,kl_fake,beta_real,beta_fake,penalty_real,penalty_fake,total",
        run.epochs.iter().map(|e| {
            let mut row = vec![e.epoch.to_string()];
            row.extend(
                [
                    e.critic,
                    e.adversarial,
                    e.center,
                    e.cls,
                    e.kl_real,
                    e.kl_fake,
                    e.beta_real,
                    e.beta_fake,
                    e.penalty_real,
                    e.penalty_fake,
                    e.total,
                ]
                .map(format_real),
            );
            row
        }),
    );
    write_text(&out.join("log.csv"), &epochs)?;
    let steps = csv(
        "step,epoch,critic,critic_max_abs,adversarial,center,cls,kl_real,kl_fake,beta_real,beta_fake,penalty_real,penalty_fake,lambda_r,lambda_c,total",
        run.steps.iter().map(|s| {
            let mut row = vec![s.step.to_string(), s.epoch.to_string()];
            row.extend(
                [
                    s.critic,
                    s.critic_max_abs,
                    s.adversarial,
                    s.center,
                    s.cls,
                    s.kl_real,
                    s.kl_fake,
                    s.beta_real,
                    s.beta_fake,
                    s.penalty_real,
                    s.penalty_fake,
                    s.lambda_r,
                    s.lambda_c,
                    s.total,
                ]
                .map(format_real),
            );
            row
        }),
    );
    write_text(&out.join("steps.csv"), &steps)?;

    let mut ck = Checkpoint::new("gen", cfg.seed, &manifest);
    ck.push_gen(&run.models, &final_classifier);
    ck.save(&out.join(CHECKPOINT))?;
    write_evaluation(out, &bundle, &evaluation)?;
    write_metrics(
        out,
        &[MetricsRow::new(&cfg.run_id, "generation", evaluation.metrics, cfg.seed)],
    )
}

fn synth_features(c: &Common) -> Result<()> {
    let out = out_dir(c)?;
    let cfg = resolve(c)?;
    let ck = Checkpoint::load(&model_dir(&cfg)?.join(CHECKPOINT))?;
    ck.expect_kind("gen")?;
    let (models, _) = ck.gen()?;
    let bundle = dataset(&cfg)?;
    let gen_cfg = cfg.resolved_gen();
    let set = synthesize_unseen(
        &models.generator,
        &models.mapper,
        &bundle.attributes,
        &bundle.unseen_classes,
        gen_cfg.synth_per_class,
        synthesis_seed(gen_cfg.seed),
        gen_cfg.sample_final,
    )?;
    write_text(&out.join("features.csv"), &matrix_to_csv(&set.features))?;
    let labels: String = set.labels.iter().map(|y| format!("{y}\n")).collect();
    write_text(&out.join("labels.csv"), &labels)?;
    write_manifest(out, &cfg)?;
    Ok(())
}

fn eval_cmd(c: &Common) -> Result<()> {
    let out = out_dir(c)?;
    let cfg = resolve(c)?;
    let ck = Checkpoint::load(&model_dir(&cfg)?.join(CHECKPOINT))?;
    let bundle = dataset(&cfg)?;
    write_manifest(out, &cfg)?;
    let rows = match ck.kind.as_str() {
        "embed" => {
            let mapper = ck.mapper()?;
            let e = evaluate(&bundle, Predictor::Embedding { mapper: &mapper })?;
            write_evaluation(out, &bundle, &e)?;
            vec![MetricsRow::new(&cfg.run_id, "embedding", e.metrics, cfg.seed)]
        }
        "gen" => {
            let (models, _) = ck.gen()?;
            let gen_cfg = cfg.resolved_gen();
            let mut rows = Vec::new();
            for &count in &cfg.eval_counts {
                let (_, e) = finish_generation(&bundle, &models, &gen_cfg, count)?;
                let id = format!("{}@{count}", cfg.run_id);
                rows.push(MetricsRow::new(&id, "generation", e.metrics, cfg.seed));
            }
            rows
        }
        other => return Err(BenchError::Failed(format!("unknown checkpoint kind {other:?}"))),
    };
    write_metrics(out, &rows)
}

fn gradcheck(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    let mut worst: BTreeMap<&'static str, (f64, usize, usize)> = BTreeMap::new();
    for seed in 0..cfg.gradcheck_seeds {
        for (loss, report) in loss_suite::<f32>(seed)? {
            let e = worst.entry(loss.name()).or_insert((0.0, 0, 0));
            e.0 = e.0.max(report.max_rel_error);
            e.1 += report.checked;
            e.2 += report.excluded;
        }
    }
    let mut text = String::from("loss,max_rel_error,checked,excluded\n");
    for (name, (err, checked, excluded)) in &worst {
        println!("{name:<22} {err:.3e}  ({checked} checked, {excluded} near kinks)");
        text.push_str(&format!("{name},{},{checked},{excluded}\n", format_real(*err)));
    }
    if let Some(out) = &c.out {
        fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
        write_text(&out.join("gradcheck.csv"), &text)?;
        write_manifest(out, &cfg)?;
    }
    let failing: Vec<&str> = worst
        .iter()
        .filter(|(_, v)| !(v.0 < GRADCHECK_THRESHOLD))
        .map(|(k, _)| *k)
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(BenchError::Failed(format!(
            "relative error at or above {GRADCHECK_THRESHOLD:e} for {}",
            failing.join(", ")
        )))
    }
}

fn report_cmd(c: &Common, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(BenchError::Usage("report needs at least one metrics file or run directory".into()));
    }
    let mut rows = Vec::new();
    for input in inputs {
        let path = if input.is_dir() {
            input.join(METRICS)
        } else {
            input.clone()
        };
        rows.extend(load_metrics(&path)?);
    }
    let t = table(&rows);
    print!("{t}");
    if let Some(out) = &c.out {
        fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
        write_text(&out.join("report.txt"), &t)?;
        write_text(&out.join(METRICS), &metrics_csv(&rows))?;
    }
    Ok(())
}
