//! The batch commands: train, eval, sweep-gamma, guided, morph and rank.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sae_core::active::{guided_experiment, rank_unlabeled, Arm, ReplayOracle, RoundMetrics};
use sae_core::checkpoint::Checkpoint;
use sae_core::data::{split_labeled, Dataset, FeatureKind};
use sae_core::morph::morph_track;
use sae_core::sae::{encode_ids, init_model, reconstruction_rmse, train, EpochMetrics, SaeModel};
use sae_core::svm::{calibration_curve, classification_error, fit_on_labeled, score_histogram, SvmModel};
use serde::Serialize;

use crate::config::{LoadedData, RunConfig};
use crate::error::{CliError, Result};

pub const CHECKPOINT_FILE: &str = "model.sae";
pub const CALIBRATION_BINS: usize = 10;

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Maps `m × n` latents to 2D: the first two axes when `m ≤ 2`, otherwise a
/// seeded random orthonormal projection.
pub fn project_2d(z: &Array2<f64>, seed: u64) -> Array2<f64> {
    let (m, n) = z.dim();
    match m {
        1 => ndarray::concatenate![Axis(0), z.view(), Array2::zeros((1, n))],
        2 => z.clone(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = Array2::<f64>::zeros((2, m));
            let mut row = 0;
            while row < 2 {
                let mut v: ndarray::Array1<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                if row == 1 {
                    let d = p.row(0).dot(&v);
                    v.scaled_add(-d, &p.row(0));
                }
                let norm = v.dot(&v).sqrt();
                if norm > 1e-6 {
                    p.row_mut(row).assign(&(v / norm));
                    row += 1;
                }
            }
            p.dot(z)
        }
    }
}

/// `(id, x, y, class)` rows of the 2D latent projection of every sample.
pub fn latent_rows(model: &SaeModel<f32>, ds: &Dataset, ids: &[usize], seed: u64) -> Result<Vec<(usize, f64, f64)>> {
    let p = project_2d(&encode_ids(model, ds, ids)?, seed);
    Ok(ids.iter().enumerate().map(|(j, &id)| (id, p[[0, j]], p[[1, j]])).collect())
}

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    write_rows(
        path,
        &["epoch", "recon_rmse", "structural", "combined"],
        history
            .iter()
            .map(|m| vec![m.epoch.to_string(), m.recon_rmse.to_string(), m.structural_loss.to_string(), m.combined_loss.to_string()]),
    )
}

/// Fits the SVM when at least one sample of every class is labeled.
fn try_fit_svm(model: &SaeModel<f32>, ds: &Dataset, cfg: &RunConfig) -> Option<SvmModel> {
    match fit_on_labeled(model, ds, &cfg.svm) {
        Ok(svm) => Some(svm),
        Err(e) => {
            log::warn!("no SVM fitted: {e}");
            None
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub latent: PathBuf,
    pub epochs: usize,
    pub labeled: usize,
    pub final_recon_rmse: Option<f64>,
    pub has_svm: bool,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let LoadedData { train: ds, .. } = cfg.load_data()?;
    let spec = cfg.distance_spec(ds.n_classes())?;
    let model = init_model(&cfg.model, cfg.train.seed)?;
    let (model, history) = train(model, &ds, &spec, &cfg.train, |m| {
        log::info!("epoch {}: rmse {:.5} structural {:.5}", m.epoch, m.recon_rmse, m.structural_loss);
    })?;
    let svm = try_fit_svm(&model, &ds, cfg);
    let dir = out_dir(cfg)?;

    let ck = Checkpoint { model, epoch: history.len(), seed: cfg.train.seed, config: serde_json::to_value(cfg)?, svm };
    let checkpoint = dir.join(CHECKPOINT_FILE);
    ck.save(&checkpoint)?;

    let metrics = dir.join("metrics.csv");
    write_metrics_csv(&metrics, &history)?;

    let latent = dir.join("latent.csv");
    let ids: Vec<usize> = (0..ds.len()).collect();
    let rows = latent_rows(&ck.model, &ds, &ids, cfg.train.seed)?;
    write_rows(
        &latent,
        &["id", "x", "y", "class"],
        rows.into_iter().map(|(id, x, y)| vec![id.to_string(), x.to_string(), y.to_string(), opt(ds.superclass(id))]),
    )?;
    Ok(TrainReport {
        checkpoint,
        metrics,
        latent,
        epochs: history.len(),
        labeled: ds.labeled_count(),
        final_recon_rmse: history.last().map(|m| m.recon_rmse),
        has_svm: ck.svm.is_some(),
    })
}

fn checkpoint_path(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE))
}

fn load_with_svm(path: &Path) -> Result<(Checkpoint, SvmModel)> {
    let ck = Checkpoint::load(path)?;
    let svm = ck.svm.clone().ok_or_else(|| CliError::MissingSvm(path.display().to_string()))?;
    Ok((ck, svm))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub classification_error: f64,
    pub recon_rmse: f64,
    pub calibration: PathBuf,
    pub histogram: PathBuf,
}

/// Winning-class score and whether the prediction is right, per sample with a class.
pub fn prediction_scores(svm: &SvmModel, model: &SaeModel<f32>, ds: &Dataset) -> Result<(Vec<f64>, Vec<bool>)> {
    let ids: Vec<usize> = (0..ds.len()).filter(|&i| ds.superclass(i).is_some()).collect();
    let z = encode_ids(model, ds, &ids)?;
    let mut scores = Vec::with_capacity(ids.len());
    let mut correct = Vec::with_capacity(ids.len());
    for (col, &id) in z.axis_iter(Axis(1)).zip(&ids) {
        let s = svm.class_scores(col)?;
        let pred = svm.predict(col)?;
        scores.push(s[pred]);
        correct.push(Some(pred) == ds.superclass(id));
    }
    Ok((scores, correct))
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let data = cfg.load_data()?;
    let test = data.test.ok_or(CliError::MissingTestSet)?;
    let (ck, svm) = load_with_svm(&checkpoint_path(cfg, checkpoint))?;
    let classification_error = classification_error(&svm, &ck.model, &test)?;
    let ids: Vec<usize> = (0..test.len()).collect();
    let recon_rmse = reconstruction_rmse(&ck.model, &test, &ids)?;
    let (scores, correct) = prediction_scores(&svm, &ck.model, &test)?;
    let dir = out_dir(cfg)?;

    let calibration = dir.join("calibration.csv");
    let bins = calibration_curve(&scores, &correct, CALIBRATION_BINS)?;
    write_rows(
        &calibration,
        &["bin_lo", "bin_hi", "count", "precision"],
        bins.iter().map(|b| vec![b.score_lo.to_string(), b.score_hi.to_string(), b.count.to_string(), opt(b.precision)]),
    )?;
    let histogram = dir.join("histogram.csv");
    let counts = score_histogram(&scores, CALIBRATION_BINS);
    let width = 1.0 / CALIBRATION_BINS as f64;
    write_rows(
        &histogram,
        &["bin_lo", "bin_hi", "count"],
        counts.iter().enumerate().map(|(b, c)| vec![(b as f64 * width).to_string(), ((b + 1) as f64 * width).to_string(), c.to_string()]),
    )?;
    let report = EvalReport { n_test: test.len(), classification_error, recon_rmse, calibration, histogram };
    fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub recon_rmse: f64,
    pub class_error: f64,
}

pub fn cmd_sweep_gamma(cfg: &RunConfig, gammas: &[f64]) -> Result<Vec<SweepRow>> {
    if gammas.len() < 2 {
        return Err(CliError::Usage("a sweep needs at least two gamma values".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(CliError::Usage(format!("gamma {g} is outside [0, 1]")));
    }
    let data = cfg.load_data()?;
    let test = data.test.ok_or(CliError::MissingTestSet)?;
    let spec = cfg.distance_spec(data.train.n_classes())?;
    let ids: Vec<usize> = (0..test.len()).collect();
    let mut rows = Vec::new();
    for &gamma in gammas {
        let tc = sae_core::sae::TrainConfig { gamma, ..cfg.train.clone() };
        let (model, _) = train(init_model(&cfg.model, cfg.train.seed)?, &data.train, &spec, &tc, |_| {})?;
        let svm = fit_on_labeled(&model, &data.train, &cfg.svm)?;
        rows.push(SweepRow {
            gamma,
            recon_rmse: reconstruction_rmse(&model, &test, &ids)?,
            class_error: classification_error(&svm, &model, &test)?,
        });
        log::info!("gamma {gamma}: {:?}", rows.last());
    }
    write_rows(
        &out_dir(cfg)?.join("sweep.csv"),
        &["gamma", "recon_rmse", "class_error"],
        rows.iter().map(|r| vec![r.gamma.to_string(), r.recon_rmse.to_string(), r.class_error.to_string()]),
    )?;
    Ok(rows)
}

pub fn cmd_guided(cfg: &RunConfig) -> Result<Vec<RoundMetrics>> {
    let oracle_path = cfg.oracle.as_ref().ok_or(CliError::MissingOracle)?;
    let mut oracle = ReplayOracle::from_csv(oracle_path)?;
    let data = cfg.load_data()?;
    let test = data.test.ok_or(CliError::MissingTestSet)?;
    let train_ds = split_labeled(&data.train, cfg.active.initial_labels, cfg.train.seed)?;
    let spec = cfg.distance_spec(train_ds.n_classes())?;
    let rows = guided_experiment(
        init_model(&cfg.model, cfg.train.seed)?,
        &train_ds,
        &test,
        &spec,
        &cfg.train,
        &cfg.active,
        &cfg.svm,
        &[Arm::Guided, Arm::Random],
        &mut oracle,
        cfg.train.seed,
    )?;
    write_rows(
        &out_dir(cfg)?.join("guided.csv"),
        &["arm", "round", "labeled_count", "test_error"],
        rows.iter().map(|r| vec![r.arm.name().into(), r.round.to_string(), r.labeled_count.to_string(), r.test_error.to_string()]),
    )?;
    Ok(rows)
}

/// Writes a grayscale 8-bit PNG of `values` in `[0, 1]`.
pub fn write_png(out: &mut impl std::io::Write, values: &[f32], rows: usize, cols: usize) -> Result<()> {
    let mut enc = png::Encoder::new(out, cols as u32, rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&to_gray(values))?;
    Ok(())
}

/// Writes a binary 8-bit PGM of `values` in `[0, 1]`.
pub fn write_pgm(out: &mut impl std::io::Write, values: &[f32], rows: usize, cols: usize) -> Result<()> {
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    out.write_all(&to_gray(values))?;
    Ok(())
}

fn to_gray(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MorphReport {
    pub track: PathBuf,
    /// One PGM (images) or one-row CSV (vectors) per step.
    pub steps: Vec<PathBuf>,
}

pub fn cmd_morph(cfg: &RunConfig, checkpoint: Option<&Path>, id: usize, pair: (usize, usize), steps: usize) -> Result<MorphReport> {
    let data = cfg.load_data()?;
    let (ck, svm) = load_with_svm(&checkpoint_path(cfg, checkpoint))?;
    if id >= data.train.len() {
        return Err(CliError::Usage(format!("sample {id} is out of range ({} samples)", data.train.len())));
    }
    let track = morph_track(&ck.model, &svm, data.train.sample(id).features, id, pair, steps)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("morph.csv");
    write_rows(
        &path,
        &["step", "alpha", "decision_value", "score"],
        (0..steps)
            .map(|s| vec![s.to_string(), track.alphas[s].to_string(), track.decision_values[s].to_string(), track.scores[s].to_string()]),
    )?;
    let image = match data.train.kind() {
        FeatureKind::Image => data.train.image_shape(),
        _ => None,
    };
    let header: Vec<String> = (0..data.train.dim()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut files = Vec::with_capacity(steps);
    for (s, out) in track.outputs.iter().enumerate() {
        let values = out.as_slice().expect("contiguous output");
        let p = match image {
            Some((r, c)) => {
                let p = dir.join(format!("morph_{s:03}.pgm"));
                let mut f = std::io::BufWriter::new(fs::File::create(&p)?);
                write_pgm(&mut f, values, r, c)?;
                std::io::Write::flush(&mut f)?;
                p
            }
            None => {
                let p = dir.join(format!("morph_{s:03}.csv"));
                write_rows(&p, &header, [values.iter().map(|v| v.to_string()).collect()])?;
                p
            }
        };
        files.push(p);
    }
    Ok(MorphReport { track: path, steps: files })
}

pub fn cmd_rank(cfg: &RunConfig, checkpoint: Option<&Path>, k: usize) -> Result<PathBuf> {
    let data = cfg.load_data()?;
    let (ck, svm) = load_with_svm(&checkpoint_path(cfg, checkpoint))?;
    let ranking = rank_unlabeled(&svm, &ck.model, &data.train, ck.epoch)?;
    let mut header = vec!["rank".to_string(), "id".into(), "margin".into()];
    header.extend(data.class_names.iter().map(|n| format!("score_{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let path = out_dir(cfg)?.join("rank.csv");
    write_rows(
        &path,
        &header,
        ranking.entries.iter().take(k).enumerate().map(|(r, e)| {
            let mut row = vec![r.to_string(), e.id.to_string(), e.margin.to_string()];
            row.extend(e.scores.iter().map(|s| s.to_string()));
            row
        }),
    )?;
    Ok(path)
}
