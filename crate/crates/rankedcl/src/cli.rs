//! Command-line pipeline: `gradcheck`, `train`, `eval classify|detect|ood`,
//! `export-plots`.
//!
//! Exit codes: 0 success, 1 check/assertion failure, 2 usage/config error.
//! Every command is deterministic for a fixed seed; all outputs go under
//! the `--out` directory, inputs are never mutated.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::augment::{normalize, resize_bilinear, two_crop, RasterImage};
use crate::config::{load_config, DataConfig, RunConfig};
use crate::data::{
    holdout_split_vectors, load_dataset, synth_hierarchical_split, VectorDataset,
};
use crate::encoder::{
    duplicate_views, fit, load_checkpoint, noise_views, save_checkpoint, EncoderModel,
    EpochRecord,
};
use crate::error::{Error, Result};
use crate::loss::{ranked_loss_grad_raw, ranked_loss_raw, supcon_loss, EmbeddingMatrix};
use crate::metrics::{
    class_centroids, coco_ap, nearest_centroid_accuracy, ood_score, roc_auroc,
    Detection, MetricReport, RocCurve,
};
use crate::numkernel::{finite_diff_grad, max_rel_err, Matrix};
use crate::ranking::{linear_temperature_schedule, RankingSpec};
use crate::rng::Rng;


/// Test hook: when this env var is set, the analytic gradient is perturbed
/// before comparison, so `gradcheck` must fail (negative control).
pub const BREAK_GRAD_ENV: &str = "RANKEDCL_BREAK_GRAD";

#[derive(Parser, Debug)]
#[command(name = "rankedcl", version, about = "Ranked contrastive learning pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON config file with blocks {train, augment, data, ranking}.
    /// Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override the training seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Ranking file, overriding the config's ranking block.
    #[arg(long)]
    pub ranking: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    /// Comma-separated classes to withhold from training (OOD holdout).
    #[arg(long, value_delimiter = ',')]
    pub withhold: Vec<String>,

    /// Crop predicted boxes instead of ground-truth boxes.
    #[arg(long)]
    pub use_pred_boxes: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(flatten)]
    pub split: SplitArgs,

    /// Checkpoint to evaluate. Defaults to <out>/checkpoint.json.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Verify analytic loss and encoder gradients against central finite
    /// differences (tolerance 1e-4).
    Gradcheck(CommonArgs),

    /// Train the encoder; writes checkpoint.json and train_log.jsonl.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        split: SplitArgs,
    },

    /// Evaluate: nearest-centroid classification, detection AP, or OOD.
    Eval {
        #[command(subcommand)]
        mode: EvalMode,
    },

    /// Emit plot-ready CSVs from a training log and/or an OOD report.
    ExportPlots {
        /// train_log.jsonl from a `train` run.
        #[arg(long)]
        log: Option<PathBuf>,

        /// ood.json from an `eval ood` run.
        #[arg(long)]
        ood_report: Option<PathBuf>,

        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum EvalMode {
    /// Nearest-centroid accuracy of checkpoint embeddings.
    Classify(EvalArgs),
    /// COCO-style AP/AP50/AP75 from the dataset's pred vs gt boxes.
    Detect(EvalArgs),
    /// ROC/AUROC with `--withhold` classes as the OOD population.
    Ood(EvalArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gradcheck(common) => cmd_gradcheck(&common),
        Command::Train { common, split } => cmd_train(&common, &split),
        Command::Eval { mode } => match mode {
            EvalMode::Classify(args) => cmd_eval_classify(&args),
            EvalMode::Detect(args) => cmd_eval_detect(&args),
            EvalMode::Ood(args) => cmd_eval_ood(&args),
        },
        Command::ExportPlots { log, ood_report, out } => {
            cmd_export_plots(log.as_deref(), ood_report.as_deref(), &out)
        }
    }
}

fn load_run(common: &CommonArgs) -> Result<(RunConfig, Option<PathBuf>)> {
    let (mut cfg, base_dir) = match &common.config {
        Some(path) => (
            load_config(path)?,
            path.parent().map(|p| p.to_path_buf()),
        ),
        None => (RunConfig::default(), None),
    };
    if let Some(seed) = common.seed {
        cfg.train.base.seed = seed;
    }
    if let Some(path) = &common.ranking {
        let text = std::fs::read_to_string(path)?;
        let spec = crate::ranking::parse_ranking(&text)?;
        cfg.ranking = Some(crate::config::RankingSource::Inline(spec));
    }
    cfg.validate(base_dir.as_deref())?;
    Ok((cfg, base_dir))
}

fn write_artifact(out: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    std::fs::write(&path, bytes)?;
    Ok(path)
}

// ---------------------------------------------------------------- datasets

/// A config's dataset lowered to labeled vectors. For image data each
/// sample is a flattened out_size x out_size crop with raw [0,1] pixels;
/// augmentation/normalization happens per use.
struct Materialized {
    vectors: VectorDataset,
    image_side: Option<usize>,
}

fn materialize(
    cfg: &RunConfig,
    base_dir: Option<&Path>,
    use_pred_boxes: bool,
    test_split: bool,
) -> Result<Materialized> {
    match &cfg.data {
        DataConfig::Synthetic { tree, per_class, dim, noise, seed } => {
            // split 1 = independent samples around the same class means
            let split = if test_split { 1 } else { 0 };
            Ok(Materialized {
                vectors: synth_hierarchical_split(
                    tree, *per_class, *dim, *noise, *seed, split,
                )?,
                image_side: None,
            })
        }
        DataConfig::Detection { path } => {
            let resolved = match base_dir {
                Some(dir) => dir.join(path),
                None => PathBuf::from(path),
            };
            let ds = load_dataset(&resolved)?;
            let img_dir = resolved.parent().unwrap_or(Path::new("."));
            let side = cfg.augment.out_size;
            let mut samples = Vec::new();
            let mut labels = Vec::new();
            for item in &ds.items {
                let img = ds.load_image(item, img_dir)?;
                let boxes: Vec<_> = if use_pred_boxes {
                    item.pred.iter().map(|b| b.to_box()).collect::<Result<_>>()?
                } else {
                    item.gt.iter().map(|b| b.to_box()).collect::<Result<_>>()?
                };
                for (crop, b) in crate::data::crop_boxes(&img, &boxes)?.iter().zip(&boxes) {
                    samples.push(resize_bilinear(crop, side, side).to_vec());
                    labels.push(b.class.clone());
                }
            }
            Ok(Materialized {
                vectors: VectorDataset {
                    classes: ds.classes,
                    dim: side * side * 3,
                    samples,
                    labels,
                },
                image_side: Some(side),
            })
        }
    }
}

/// Deterministic model inputs for evaluation: normalized pixels for image
/// data, the vectors themselves otherwise.
fn eval_inputs(m: &Materialized, cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    match m.image_side {
        None => Ok(m.vectors.samples.clone()),
        Some(side) => m
            .vectors
            .samples
            .iter()
            .map(|s| {
                let img = RasterImage::new(side, side, s.clone())?;
                Ok(normalize(&img, &cfg.augment.mean, &cfg.augment.std)?.to_vec())
            })
            .collect(),
    }
}

fn apply_holdout(m: Materialized, withhold: &[String]) -> Result<(Materialized, Materialized)> {
    let (ind, ood) = holdout_split_vectors(&m.vectors, withhold)?;
    Ok((
        Materialized { vectors: ind, image_side: m.image_side },
        Materialized { vectors: ood, image_side: m.image_side },
    ))
}

// --------------------------------------------------------------- gradcheck

fn cmd_gradcheck(common: &CommonArgs) -> Result<()> {
    let (cfg, base_dir) = load_run(common)?;
    let spec = cfg.resolve_ranking(base_dir.as_deref(), &[])?;
    let taus = linear_temperature_schedule(
        cfg.train.base.tau_min,
        cfg.train.base.tau_max,
        spec.depth(),
    )?;
    let seed = cfg.train.base.seed;
    let broken = std::env::var(BREAK_GRAD_ENV).map(|v| !v.is_empty()).unwrap_or(false);
    let tol = 1e-4;

    // loss gradient: 10 random unit-row batches, n=16, d=8
    let (n, d, batches) = (16usize, 8usize, 10usize);
    let mut loss_err = 0.0f64;
    for b in 0..batches {
        let mut rng = Rng::new(seed).derive(&[0x6C05, b as u64]);
        let z = random_unit_matrix(n, d, &mut rng);
        let labels: Vec<String> = (0..n)
            .map(|_| spec.classes()[rng.range_usize(spec.classes().len())].clone())
            .collect();
        let mut analytic = ranked_loss_grad_raw(&z, &labels, &spec, &taus)?;
        if broken {
            analytic.set(0, 0, analytic.get(0, 0) + 1e-2);
        }
        let numeric = finite_diff_grad(
            |m| ranked_loss_raw(m, &labels, &spec, &taus).expect("valid batch").total,
            &z,
            1e-5,
        );
        let err = max_rel_err(&analytic, &numeric);
        if err > loss_err {
            loss_err = err;
        }
        if err >= tol {
            let case = json!({"batch": b, "labels": labels, "z": z, "rel_err": err});
            let path = write_artifact(
                &common.out,
                "gradcheck_failure.json",
                case.to_string().as_bytes(),
            )?;
            return Err(Error::Check(format!(
                "loss gradient rel err {err:.3e} >= {tol:.0e}; case saved to {}",
                path.display()
            )));
        }
    }

    // encoder gradient end-to-end on a small MLP
    let dims = vec![d, 16, 4];
    let model = EncoderModel::new(dims, seed)?;
    let mut rng = Rng::new(seed).derive(&[0xE2E]);
    let batch = Matrix::new(4, d, (0..4 * d).map(|_| rng.normal()).collect())?;
    let labels: Vec<String> = (0..4)
        .map(|_| spec.classes()[rng.range_usize(spec.classes().len())].clone())
        .collect();
    let encoder_err = encoder_gradcheck(&model, &batch, &labels, &spec, &taus, broken)?;
    if encoder_err >= tol {
        return Err(Error::Check(format!(
            "encoder gradient rel err {encoder_err:.3e} >= {tol:.0e}"
        )));
    }

    // r = 1 additionally reduces to plain supervised contrastive
    let supcon_checked = spec.depth() == 1;
    if supcon_checked {
        let mut rng = Rng::new(seed).derive(&[0x5C0]);
        let z = EmbeddingMatrix::new(random_unit_matrix(n, d, &mut rng))?;
        let labels: Vec<String> = (0..n)
            .map(|_| spec.classes()[rng.range_usize(spec.classes().len())].clone())
            .collect();
        let a = crate::loss::ranked_loss(&z, &labels, &spec, &taus)?.total;
        let b = supcon_loss(&z, &labels, taus.taus()[0])?.total;
        if (a - b).abs() >= 1e-10 {
            return Err(Error::Check(format!(
                "r=1 loss {a} differs from supervised contrastive loss {b}"
            )));
        }
    }

    let report = json!({
        "max_rel_err": loss_err.max(encoder_err),
        "loss_max_rel_err": loss_err,
        "encoder_max_rel_err": encoder_err,
        "tolerance": tol,
        "batches": batches,
        "supcon_checked": supcon_checked,
    });
    let text = serde_json::to_string_pretty(&report)?;
    write_artifact(&common.out, "gradcheck.json", text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn random_unit_matrix(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    let raw = Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).expect("sized");
    raw.l2_normalize_rows().expect("nonzero gaussian rows")
}

fn encoder_gradcheck(
    model: &EncoderModel,
    batch: &Matrix,
    labels: &[String],
    spec: &RankingSpec,
    taus: &crate::ranking::TemperatureSchedule,
    broken: bool,
) -> Result<f64> {
    let (tape, zvar, params) = model.forward_traced(batch)?;
    let dldz = ranked_loss_grad_raw(tape.value(zvar), labels, spec, taus)?;
    let grads = tape.backward(zvar, dldz)?;

    let loss_of = |m: &EncoderModel| -> f64 {
        let z = m.forward(batch).expect("forward");
        ranked_loss_raw(z.matrix(), labels, spec, taus).expect("loss").total
    };

    let mut worst = 0.0f64;
    for (layer, &(wv, bv)) in params.iter().enumerate() {
        for (is_weight, var) in [(true, wv), (false, bv)] {
            let mut analytic = grads.get(var).clone();
            if broken && layer == 0 && is_weight {
                analytic.set(0, 0, analytic.get(0, 0) + 1e-2);
            }
            let shape = if is_weight { &model.weights[layer] } else { &model.biases[layer] };
            let numeric = finite_diff_grad(
                |m| {
                    let mut probe = model.clone();
                    if is_weight {
                        probe.weights[layer] = m.clone();
                    } else {
                        probe.biases[layer] = m.clone();
                    }
                    loss_of(&probe)
                },
                shape,
                1e-5,
            );
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
    }
    Ok(worst)
}

// ------------------------------------------------------------------- train

fn cmd_train(common: &CommonArgs, split: &SplitArgs) -> Result<()> {
    let (cfg, base_dir) = load_run(common)?;
    let full = materialize(&cfg, base_dir.as_deref(), split.use_pred_boxes, false)?;
    let spec = cfg.resolve_ranking(base_dir.as_deref(), &full.vectors.classes)?;
    let (train_set, _) = apply_holdout(full, &split.withhold)?;
    if train_set.vectors.is_empty() {
        return Err(Error::Validation("no training samples after holdout".into()));
    }

    let mut model = EncoderModel::new(
        cfg.train.dims(train_set.vectors.dim),
        cfg.train.base.seed,
    )?;
    let aug = cfg.augment.clone();
    let side = train_set.image_side;
    let vector_views = noise_views(cfg.train.view_noise);
    let view_noise = cfg.train.view_noise;
    let view_fn = move |rng: &Rng, x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        match side {
            Some(s) => {
                let img = RasterImage::new(s, s, x.to_vec()).expect("stored crop");
                let (a, b) = two_crop(&img, &aug, rng);
                (a.to_vec(), b.to_vec())
            }
            None if view_noise > 0.0 => vector_views(rng, x),
            None => duplicate_views(rng, x),
        }
    };
    let log = fit(
        &mut model,
        &train_set.vectors.samples,
        &train_set.vectors.labels,
        &cfg.train.base,
        &spec,
        &view_fn,
    )?;

    std::fs::create_dir_all(&common.out)?;
    let ckpt = common.out.join("checkpoint.json");
    save_checkpoint(&model, &ckpt)?;
    let mut lines = String::new();
    for rec in &log {
        lines.push_str(&serde_json::to_string(rec)?);
        lines.push('\n');
    }
    let log_path = write_artifact(&common.out, "train_log.jsonl", lines.as_bytes())?;

    match log.last() {
        Some(rec) => println!(
            "trained {} epochs; final loss {:.6}; wrote {} and {}",
            log.len(),
            rec.loss.total,
            ckpt.display(),
            log_path.display()
        ),
        None => println!(
            "0 epochs requested; wrote initial weights to {}",
            ckpt.display()
        ),
    }
    Ok(())
}

// -------------------------------------------------------------------- eval

fn checkpoint_path(args: &EvalArgs) -> PathBuf {
    args.checkpoint
        .clone()
        .unwrap_or_else(|| args.common.out.join("checkpoint.json"))
}

fn cmd_eval_classify(args: &EvalArgs) -> Result<()> {
    let (cfg, base_dir) = load_run(&args.common)?;
    let model = load_checkpoint(&checkpoint_path(args))?;

    let full = materialize(&cfg, base_dir.as_deref(), args.split.use_pred_boxes, false)?;
    let (train_set, _) = apply_holdout(full, &args.split.withhold)?;
    let z_train = model.embed_dataset(&eval_inputs(&train_set, &cfg)?)?;
    let (centroids, classes) = class_centroids(&z_train, &train_set.vectors.labels)?;

    let test_full = materialize(&cfg, base_dir.as_deref(), args.split.use_pred_boxes, true)?;
    let (test_set, _) = apply_holdout(test_full, &args.split.withhold)?;
    let z_test = model.embed_dataset(&eval_inputs(&test_set, &cfg)?)?;
    let accuracy =
        nearest_centroid_accuracy(&z_test, &test_set.vectors.labels, &centroids, &classes)?;

    let report = MetricReport::Classification { accuracy };
    let text = serde_json::to_string(&report)?;
    write_artifact(&args.common.out, "classify.json", text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn cmd_eval_detect(args: &EvalArgs) -> Result<()> {
    let (cfg, base_dir) = load_run(&args.common)?;
    let DataConfig::Detection { path } = &cfg.data else {
        return Err(Error::Usage(
            "eval detect needs detection data with pred boxes, not synthetic vectors".into(),
        ));
    };
    let resolved = match base_dir.as_deref() {
        Some(dir) => dir.join(path),
        None => PathBuf::from(path),
    };
    let ds = load_dataset(&resolved)?;
    let mut preds: Vec<Detection> = Vec::new();
    let mut gts: Vec<Detection> = Vec::new();
    for (i, item) in ds.items.iter().enumerate() {
        for b in &item.gt {
            gts.push((i, b.to_box()?));
        }
        for b in &item.pred {
            preds.push((i, b.to_box()?));
        }
    }
    let (ap, ap50, ap75) = coco_ap(&preds, &gts)?;
    let report = MetricReport::Detection { ap, ap50, ap75 };
    let text = serde_json::to_string(&report)?;
    write_artifact(&args.common.out, "detect.json", text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn cmd_eval_ood(args: &EvalArgs) -> Result<()> {
    if args.split.withhold.is_empty() {
        return Err(Error::Usage(
            "eval ood requires --withhold with at least one class".into(),
        ));
    }
    let (cfg, base_dir) = load_run(&args.common)?;
    let model = load_checkpoint(&checkpoint_path(args))?;

    let full = materialize(&cfg, base_dir.as_deref(), args.split.use_pred_boxes, false)?;
    let (train_set, _) = apply_holdout(full, &args.split.withhold)?;
    let z_train = model.embed_dataset(&eval_inputs(&train_set, &cfg)?)?;
    let (centroids, _) = class_centroids(&z_train, &train_set.vectors.labels)?;

    let test_full = materialize(&cfg, base_dir.as_deref(), args.split.use_pred_boxes, true)?;
    let (ind_test, ood_test) = apply_holdout(test_full, &args.split.withhold)?;
    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for (set, flag) in [(&ind_test, false), (&ood_test, true)] {
        let z = model.embed_dataset(&eval_inputs(set, &cfg)?)?;
        for i in 0..z.rows() {
            scores.push(ood_score(z.row(i), &centroids));
            flags.push(flag);
        }
    }
    let curve = roc_auroc(&scores, &flags)?;

    let report = MetricReport::Ood { auroc: curve.auroc, roc: curve.roc.clone() };
    let text = serde_json::to_string(&report)?;
    write_artifact(&args.common.out, "ood.json", text.as_bytes())?;
    write_artifact(&args.common.out, "roc.csv", curve.to_csv().as_bytes())?;
    println!("{text}");
    Ok(())
}

// ------------------------------------------------------------ export-plots

fn cmd_export_plots(
    log: Option<&Path>,
    ood_report: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if log.is_none() && ood_report.is_none() {
        return Err(Error::Usage(
            "export-plots needs --log and/or --ood-report".into(),
        ));
    }

    if let Some(log_path) = log {
        let text = std::fs::read_to_string(log_path)?;
        let records: Vec<EpochRecord> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;

        let mut loss_csv = String::from("epoch,lr,total\n");
        for rec in &records {
            loss_csv.push_str(&format!("{},{},{}\n", rec.epoch, rec.lr, rec.loss.total));
        }
        let p = write_artifact(out, "loss_vs_epoch.csv", loss_csv.as_bytes())?;
        println!("wrote {}", p.display());

        let mut rank_csv = String::from("epoch");
        if let Some(first) = records.first() {
            for i in 1..=first.loss.per_rank.len() {
                rank_csv.push_str(&format!(",rank{i}"));
            }
        }
        rank_csv.push('\n');
        for rec in &records {
            rank_csv.push_str(&rec.epoch.to_string());
            for v in &rec.loss.per_rank {
                rank_csv.push_str(&format!(",{v}"));
            }
            rank_csv.push('\n');
        }
        let p = write_artifact(out, "per_rank_loss.csv", rank_csv.as_bytes())?;
        println!("wrote {}", p.display());
    }

    if let Some(report_path) = ood_report {
        let text = std::fs::read_to_string(report_path)?;
        let curve: RocCurve = serde_json::from_str(&text)?;
        let p = write_artifact(out, "roc.csv", curve.to_csv().as_bytes())?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
