//! Margin-based uncertainty ranking and the guided labeling loop.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mds::DistanceSpec;
use crate::sae::{encode_ids, init_model, SaeModel, TrainConfig, Trainer};
use crate::svm::{classification_error, fit_on_labeled, SvmModel, SvmParams};

/// Difference between the two highest per-class scores of `z`.
pub fn margin(model: &SvmModel, z: ndarray::ArrayView1<'_, f64>) -> Result<f64> {
    Ok(margin_of(&model.class_scores(z)?))
}

fn margin_of(scores: &[f64]) -> f64 {
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &s in scores {
        if s > top1 {
            top2 = top1;
            top1 = s;
        } else if s > top2 {
            top2 = s;
        }
    }
    top1 - top2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: usize,
    pub margin: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRanking {
    /// Ascending margin, ties by ascending id.
    pub entries: Vec<RankEntry>,
    /// Training epoch of the model that produced the ranking.
    pub model_epoch: usize,
}

impl UncertaintyRanking {
    pub fn from_entries(mut entries: Vec<RankEntry>, model_epoch: usize) -> Self {
        entries.sort_by(|a, b| a.margin.total_cmp(&b.margin).then(a.id.cmp(&b.id)));
        UncertaintyRanking { entries, model_epoch }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ranks the given ids (typically the unlabeled ones) by margin.
pub fn rank_ids(svm: &SvmModel, sae: &SaeModel<f32>, ds: &Dataset, ids: &[usize], model_epoch: usize) -> Result<UncertaintyRanking> {
    let z = encode_ids(sae, ds, ids)?;
    let mut entries = Vec::with_capacity(ids.len());
    for (&id, col) in ids.iter().zip(z.axis_iter(Axis(1))) {
        let scores = svm.class_scores(col)?;
        entries.push(RankEntry { id, margin: margin_of(&scores), scores });
    }
    Ok(UncertaintyRanking::from_entries(entries, model_epoch))
}

pub fn rank_unlabeled(svm: &SvmModel, sae: &SaeModel<f32>, ds: &Dataset, model_epoch: usize) -> Result<UncertaintyRanking> {
    let ids = ds.unlabeled_ids();
    if ids.is_empty() {
        return Err(Error::Precondition("no unlabeled samples to rank".into()));
    }
    rank_ids(svm, sae, ds, &ids, model_epoch)
}

/// The `k` most uncertain ids.
pub fn select_batch(r: &UncertaintyRanking, k: usize) -> Result<Vec<usize>> {
    if k > r.entries.len() {
        return Err(Error::InvalidArgument(format!("requested {k} ids from a ranking of {}", r.entries.len())));
    }
    Ok(r.entries[..k].iter().map(|e| e.id).collect())
}

/// Uniformly random unlabeled ids, sorted.
pub fn select_random(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut ids = ds.unlabeled_ids();
    if k > ids.len() {
        return Err(Error::InvalidArgument(format!("requested {k} of {} unlabeled ids", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(k);
    ids.sort_unstable();
    Ok(ids)
}

/// Source of class labels for queried ids.
pub trait Oracle {
    /// Returns one class per id, in order, or fails without side effects.
    fn query(&mut self, ids: &[usize]) -> Result<Vec<usize>>;
}

/// Answers from held-back true labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayOracle {
    labels: BTreeMap<usize, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReplayRow {
    id: usize,
    label: usize,
}

impl ReplayOracle {
    pub fn new(labels: BTreeMap<usize, usize>) -> Self {
        ReplayOracle { labels }
    }

    /// Uses the superclass of every sample that has one.
    pub fn from_dataset(ds: &Dataset) -> Self {
        ReplayOracle { labels: (0..ds.len()).filter_map(|i| ds.superclass(i).map(|c| (i, c))).collect() }
    }

    /// Reads a CSV with header `id,label`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        let mut labels = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: ReplayRow = row?;
            if labels.insert(row.id, row.label).is_some() {
                return Err(Error::Consistency(format!("id {} listed twice", row.id)));
            }
        }
        Ok(ReplayOracle { labels })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for (&id, &label) in &self.labels {
            w.serialize(ReplayRow { id, label })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Oracle for ReplayOracle {
    fn query(&mut self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.labels.get(id).copied().ok_or_else(|| Error::Oracle(format!("no label known for id {id}")))).collect()
    }
}

/// Forwards queries over a channel and waits for `(id, class)` answers.
#[derive(Debug)]
pub struct InteractiveOracle {
    requests: Sender<Vec<usize>>,
    answers: Receiver<(usize, usize)>,
    timeout: Duration,
}

impl InteractiveOracle {
    pub fn new(requests: Sender<Vec<usize>>, answers: Receiver<(usize, usize)>, timeout: Duration) -> Self {
        InteractiveOracle { requests, answers, timeout }
    }
}

impl Oracle for InteractiveOracle {
    fn query(&mut self, ids: &[usize]) -> Result<Vec<usize>> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        self.requests.send(ids.to_vec()).map_err(|_| Error::Oracle("labeler disconnected".into()))?;
        let wanted: BTreeSet<usize> = ids.iter().copied().collect();
        let mut got = BTreeMap::new();
        let deadline = Instant::now() + self.timeout;
        while got.len() < wanted.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.answers.recv_timeout(left) {
                Ok((id, class)) if wanted.contains(&id) => {
                    got.insert(id, class);
                }
                Ok(_) => {}
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Oracle(format!("timed out with {} of {} answers", got.len(), wanted.len())))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Oracle("labeler disconnected".into())),
            }
        }
        Ok(ids.iter().map(|id| got[id]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Guided,
    Random,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Guided => "guided",
            Arm::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub selected: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Selects `k` ids with the given arm, queries the oracle and labels them.
/// On any failure `ds` is left untouched.
pub fn guided_round(
    ds: &mut Dataset,
    sae: &SaeModel<f32>,
    svm: &SvmModel,
    k: usize,
    arm: Arm,
    seed: u64,
    oracle: &mut dyn Oracle,
) -> Result<RoundOutcome> {
    if k == 0 {
        return Ok(RoundOutcome { selected: Vec::new(), labels: Vec::new() });
    }
    let selected = match arm {
        Arm::Guided => select_batch(&rank_unlabeled(svm, sae, ds, 0)?, k)?,
        Arm::Random => select_random(ds, k, seed)?,
    };
    let labels = oracle.query(&selected)?;
    if labels.len() != selected.len() {
        return Err(Error::Oracle(format!("oracle returned {} labels for {} ids", labels.len(), selected.len())));
    }
    let mut next = ds.clone();
    for (&id, &c) in selected.iter().zip(&labels) {
        next.assign_label(id, c)?;
    }
    *ds = next;
    Ok(RoundOutcome { selected, labels })
}

/// Labeling schedule of a guided experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSchedule {
    /// Size of the initial stratified labeled set.
    pub initial_labels: usize,
    /// Ids added per round.
    pub k: usize,
    pub rounds: usize,
    /// Epochs before the first round.
    pub initial_epochs: usize,
    /// Epochs after every round.
    pub round_epochs: usize,
    /// Re-initialize the model after each label injection instead of continuing warm.
    pub cold_restart: bool,
}

impl Default for ActiveSchedule {
    fn default() -> Self {
        ActiveSchedule { initial_labels: 600, k: 100, rounds: 1, initial_epochs: 200, round_epochs: 50, cold_restart: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub arm: Arm,
    pub round: usize,
    pub labeled_count: usize,
    pub test_error: f64,
}

/// Continues one arm from a trained state: `rounds` × (select, label, train, evaluate).
/// Row 0 of the result is the state handed in.
#[allow(clippy::too_many_arguments)]
pub fn run_arm(
    mut trainer: Trainer,
    mut train: Dataset,
    test: &Dataset,
    schedule: &ActiveSchedule,
    svm_params: &SvmParams,
    arm: Arm,
    oracle: &mut dyn Oracle,
    model_seed: u64,
) -> Result<(Vec<RoundMetrics>, Trainer, Dataset)> {
    let mut svm = fit_on_labeled(trainer.model(), &train, svm_params)?;
    let mut rows = vec![RoundMetrics {
        arm,
        round: 0,
        labeled_count: train.labeled_count(),
        test_error: classification_error(&svm, trainer.model(), test)?,
    }];
    for round in 1..=schedule.rounds {
        let seed = trainer.config().seed ^ (round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        guided_round(&mut train, trainer.model(), &svm, schedule.k, arm, seed, oracle)?;
        if schedule.cold_restart {
            trainer.reset_model(init_model(&trainer.model().spec, model_seed)?);
        }
        for _ in 0..schedule.round_epochs {
            trainer.run_epoch(&train)?;
        }
        svm = fit_on_labeled(trainer.model(), &train, svm_params)?;
        rows.push(RoundMetrics {
            arm,
            round,
            labeled_count: train.labeled_count(),
            test_error: classification_error(&svm, trainer.model(), test)?,
        });
    }
    Ok((rows, trainer, train))
}

/// Trains the shared initial phase once, then runs every requested arm from it.
#[allow(clippy::too_many_arguments)]
pub fn guided_experiment(
    model: SaeModel<f32>,
    train: &Dataset,
    test: &Dataset,
    spec: &DistanceSpec,
    cfg: &TrainConfig,
    schedule: &ActiveSchedule,
    svm_params: &SvmParams,
    arms: &[Arm],
    oracle: &mut dyn Oracle,
    model_seed: u64,
) -> Result<Vec<RoundMetrics>> {
    let mut trainer = Trainer::new(model, spec.clone(), cfg.clone())?;
    for _ in 0..schedule.initial_epochs {
        trainer.run_epoch(train)?;
    }
    let mut rows = Vec::new();
    for &arm in arms {
        let (r, _, _) = run_arm(trainer.clone(), train.clone(), test, schedule, svm_params, arm, oracle, model_seed)?;
        rows.extend(r);
    }
    Ok(rows)
}
