//! The training loop: train the encoder on the current pseudo-labels,
//! validate at parent level, update the per-class cluster budgets, then
//! re-cluster every class with X-Means under its budget and re-shape the
//! classifier head. Also hosts the baseline modes and K-fold orchestration.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, xmeans_capped_with, XMeansParams, DEFAULT_MAX_ITERS};
use crate::controller::{budget_trace, update_budgets, ClassTrace, ClusterBudget, ControllerConfig};
use crate::data::Dataset;
use crate::encoder::{EncoderConfig, EncoderModel, LossBreakdown, NegativePolicy, StepOptions};
use crate::error::{Error, Result};
use crate::metrics::{confusion, kfold_split, report, EvalReport};
use crate::numeric::{Matrix, Rng};
use crate::subclass::SubClassMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Cross-entropy on parent labels.
    Standard,
    /// Cross-entropy plus triplet loss on parent labels.
    Triplet,
    /// Adaptive sub-classes, cross-entropy only.
    Clustering,
    /// Adaptive sub-classes with cross-entropy plus triplet loss.
    ClusteringTriplet,
    /// Every class split once into `fixed_k` K-Means clusters, with triplet loss.
    FixedK,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Standard,
        Mode::Triplet,
        Mode::Clustering,
        Mode::ClusteringTriplet,
        Mode::FixedK,
    ];

    pub fn uses_triplet(self) -> bool {
        matches!(self, Mode::Triplet | Mode::ClusteringTriplet | Mode::FixedK)
    }

    pub fn uses_controller(self) -> bool {
        matches!(self, Mode::Clustering | Mode::ClusteringTriplet)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Triplet => "triplet",
            Mode::Clustering => "clustering",
            Mode::ClusteringTriplet => "clustering_triplet",
            Mode::FixedK => "fixed_k",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape of the trainable encoder; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderShape {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub normalize: bool,
}

impl Default for EncoderShape {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            hidden: d.hidden,
            embed_dim: d.embed_dim,
            normalize: d.normalize,
        }
    }
}

impl EncoderShape {
    pub fn for_input(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
            normalize: self.normalize,
        }
    }
}

/// Hyper-parameters shared by every mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub controller: ControllerConfig,
    pub encoder: EncoderShape,
    pub epochs: usize,
    /// Stop after this many epochs without a validation macro-F improvement.
    pub patience: usize,
    pub folds: usize,
    /// Clusters per class in `fixed_k` mode.
    pub fixed_k: usize,
    pub negatives: NegativePolicy,
    /// Cluster on the input features instead of the current encoder's embeddings.
    pub frozen_features: bool,
    pub split_restarts: usize,
    pub seed: u64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 128,
            margin: 0.2,
            controller: ControllerConfig::default(),
            encoder: EncoderShape::default(),
            epochs: 100,
            patience: 10,
            folds: 5,
            fixed_k: 5,
            negatives: NegativePolicy::OtherParent,
            frozen_features: false,
            split_restarts: 1,
            seed: 0,
        }
    }
}

impl TrainingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::param("margin", "must be >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::param("folds", "need at least 2"));
        }
        if self.fixed_k == 0 {
            return Err(Error::param("fixed_k", "must be positive"));
        }
        if self.encoder.embed_dim == 0 || self.encoder.hidden.contains(&0) {
            return Err(Error::param("encoder", "layer widths must be positive"));
        }
        self.controller.validate()
    }

    fn xmeans(&self) -> XMeansParams {
        XMeansParams {
            split_restarts: self.split_restarts.max(1),
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(flatten)]
    pub params: TrainingParams,
}

impl RunConfig {
    pub fn new(mode: Mode, params: TrainingParams) -> Self {
        Self { mode, params }
    }
}

fn canonical_order(local: &[usize], k: usize) -> Vec<usize> {
    // renumber clusters by first appearance so equal partitions get equal ids
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    let mut out = Vec::with_capacity(local.len());
    for &l in local {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
        out.push(remap[l]);
    }
    out
}

fn clustering_features(train: &Dataset, model: &EncoderModel, frozen: bool) -> Result<Matrix> {
    if frozen {
        Ok(train.features.clone())
    } else {
        model.embed(&train.features)
    }
}

fn assemble_map(
    train: &Dataset,
    per_class: Vec<(Vec<usize>, Vec<usize>, usize)>,
) -> Result<SubClassMap> {
    let mut local = vec![0usize; train.len()];
    let mut counts = Vec::with_capacity(per_class.len());
    for (members, assignment, k) in per_class {
        for (&i, &a) in members.iter().zip(&assignment) {
            local[i] = a;
        }
        counts.push(k);
    }
    SubClassMap::from_local_assignments(&train.parent_labels, &local, &counts)
}

/// Re-derives pseudo-labels: each class is clustered with capped X-Means on
/// the current embeddings, its budget as the cap. Classes with budget 1 or
/// fewer than two samples keep a single pseudo-label.
pub fn recluster(
    train: &Dataset,
    model: &EncoderModel,
    budgets: &ClusterBudget,
    rng: &Rng,
    params: &TrainingParams,
) -> Result<SubClassMap> {
    if budgets.num_classes() != train.num_classes() {
        return Err(Error::Dimension {
            expected: train.num_classes(),
            got: budgets.num_classes(),
        });
    }
    let feats = clustering_features(train, model, params.frozen_features)?;
    let xp = params.xmeans();
    let per_class = train
        .class_members()
        .into_par_iter()
        .enumerate()
        .map(|(c, members)| {
            let budget = budgets.num_allowed[c];
            if budget <= 1 || members.len() < 2 {
                let n = members.len();
                return Ok((members, vec![0; n], 1));
            }
            let pts = feats.select_rows(&members);
            let r = xmeans_capped_with(&pts, budget, &mut rng.fork(c as u64), xp)?;
            let assignment = canonical_order(&r.assignment, r.k);
            Ok((members, assignment, r.k))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_map(train, per_class)
}

/// Splits every class into `min(k, class size)` K-Means clusters.
pub fn fixed_partition(
    train: &Dataset,
    model: &EncoderModel,
    k: usize,
    rng: &Rng,
    params: &TrainingParams,
) -> Result<SubClassMap> {
    let feats = clustering_features(train, model, params.frozen_features)?;
    let per_class = train
        .class_members()
        .into_par_iter()
        .enumerate()
        .map(|(c, members)| {
            let kk = k.min(members.len()).max(1);
            if members.is_empty() {
                return Ok((members, Vec::new(), 1));
            }
            let pts = feats.select_rows(&members);
            let r = kmeans(&pts, kk, &mut rng.fork(c as u64), DEFAULT_MAX_ITERS)?;
            let used = r.sizes().iter().filter(|&&s| s > 0).count();
            let assignment = canonical_order(&r.assignment, r.k);
            Ok((members, assignment, used))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_map(train, per_class)
}

/// One pass over the training set in shuffled mini-batches. Returns the
/// sample-weighted mean of the per-batch losses.
pub fn train_epoch(
    model: &mut EncoderModel,
    train: &Dataset,
    map: &SubClassMap,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    if model.num_outputs() != map.num_pseudo() {
        return Err(Error::Dimension {
            expected: map.num_pseudo(),
            got: model.num_outputs(),
        });
    }
    let opts = StepOptions {
        margin: cfg.params.margin,
        learning_rate: cfg.params.learning_rate,
        use_triplet: cfg.mode.uses_triplet(),
        negatives: cfg.params.negatives,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut order);
    let mut acc = LossBreakdown {
        margin: opts.margin,
        ..Default::default()
    };
    let mut seen = 0usize;
    for (b, idx) in order.chunks(cfg.params.batch_size).enumerate() {
        let batch = train.features.select_rows(idx);
        let pseudo: Vec<usize> = idx.iter().map(|&i| map.sample_pseudo()[i]).collect();
        let parent: Vec<usize> = idx.iter().map(|&i| train.parent_labels[i]).collect();
        let l = model.backward_and_step(&batch, &pseudo, &parent, &opts, b)?;
        let w = idx.len() as f64;
        acc.cross_entropy += w * l.cross_entropy;
        acc.triplet += w * l.triplet;
        seen += idx.len();
    }
    if seen > 0 {
        acc.cross_entropy /= seen as f64;
        acc.triplet /= seen as f64;
    }
    acc.total = acc.cross_entropy + acc.triplet;
    Ok(acc)
}

/// Parent-level predictions: arg-max pseudo-label mapped to its parent.
pub fn predict_parents(model: &EncoderModel, features: &Matrix, pseudo_to_parent: &[usize]) -> Result<Vec<usize>> {
    Ok(model
        .predict(features)?
        .into_iter()
        .map(|p| pseudo_to_parent[p])
        .collect())
}

pub fn validate(model: &EncoderModel, val: &Dataset, map: &SubClassMap) -> Result<EvalReport> {
    evaluate_parents(model, val, map.pseudo_to_parent())
}

pub fn evaluate_parents(model: &EncoderModel, val: &Dataset, pseudo_to_parent: &[usize]) -> Result<EvalReport> {
    if val.is_empty() {
        return Err(Error::EmptyInput("validation set".into()));
    }
    let preds = predict_parents(model, &val.features, pseudo_to_parent)?;
    let mut cm = confusion(&val.parent_labels, &preds, val.num_classes())?;
    cm.class_names = val.class_names.clone();
    report(&cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Budgets after this epoch's controller update.
    pub budgets: Vec<usize>,
    pub flags: Vec<bool>,
    /// Clusters per class produced by this epoch's re-clustering.
    pub cluster_counts: Vec<usize>,
    pub loss: LossBreakdown,
    pub validation: EvalReport,
}

/// Model plus everything needed to turn its outputs into parent predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: EncoderModel,
    pub pseudo_to_parent: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.model.validate()?;
        if ck.pseudo_to_parent.len() != ck.model.num_outputs()
            || ck.pseudo_to_parent.iter().any(|&p| p >= ck.class_names.len())
        {
            return Err(Error::param("checkpoint", "pseudo-label map does not match the model"));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: EvalReport,
    pub final_budgets: ClusterBudget,
    pub final_cluster_counts: Vec<usize>,
    pub controller_trace: Vec<ClassTrace>,
    #[serde(skip)]
    pub checkpoint: Option<Checkpoint>,
}

/// Mean of the best-epoch metrics over folds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub var_fn: f64,
    pub var_fp: f64,
}

impl AggregateMetrics {
    pub fn mean_of<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Self {
        let mut m = AggregateMetrics::default();
        let mut n = 0usize;
        for r in reports {
            m.accuracy += r.accuracy;
            m.recall += r.recall;
            m.precision += r.precision;
            m.f_score += r.f_score;
            m.var_fn += r.var_fn;
            m.var_fp += r.var_fp;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            m.accuracy /= k;
            m.recall /= k;
            m.precision /= k;
            m.f_score /= k;
            m.var_fn /= k;
            m.var_fp /= k;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub mode: Mode,
    pub seed: u64,
    pub folds: Vec<FoldOutcome>,
    pub aggregate: AggregateMetrics,
}

/// Trains one fold to convergence (early stopping on validation macro-F).
pub fn run_fold(
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    fold: usize,
    rng: &Rng,
) -> Result<FoldOutcome> {
    let p = &cfg.params;
    let classes = train.num_classes();
    let mut init_rng = rng.fork(0);
    let mut shuffle_rng = rng.fork(1);
    let cluster_rng = rng.fork(2);
    let mut head_rng = rng.fork(3);

    let mut model = EncoderModel::new(p.encoder.for_input(train.dim()), classes, &mut init_rng)?;
    let mut budgets = ClusterBudget::initial(classes);
    let mut map = SubClassMap::identity(&train.parent_labels, classes)?;
    if cfg.mode == Mode::FixedK {
        let fixed = fixed_partition(train, &model, p.fixed_k, &cluster_rng.fork(u64::MAX), p)?;
        model.resize_head(&map, &fixed, &mut head_rng)?;
        map = fixed;
    }
    let mut history = vec![budgets.clone()];
    let mut epochs = Vec::new();
    let mut best: Option<(usize, EvalReport, Checkpoint)> = None;
    let mut since_best = 0usize;

    for epoch in 0..p.epochs {
        let loss = train_epoch(&mut model, train, &map, cfg, &mut shuffle_rng)?;
        let val_report = validate(&model, val, &map)?;

        let improved = best.as_ref().is_none_or(|(_, b, _)| val_report.f_score > b.f_score);
        if improved {
            best = Some((
                epoch,
                val_report.clone(),
                Checkpoint {
                    schema_version: crate::encoder::CHECKPOINT_SCHEMA_VERSION,
                    model: model.clone(),
                    pseudo_to_parent: map.pseudo_to_parent().to_vec(),
                    class_names: train.class_names.clone(),
                },
            ));
            since_best = 0;
        } else {
            since_best += 1;
        }

        if cfg.mode.uses_controller() {
            budgets = update_budgets(&budgets, &val_report.fn_rates(), &p.controller)?;
            history.push(budgets.clone());
            let next = recluster(train, &model, &budgets, &cluster_rng.fork(epoch as u64), p)?;
            model.resize_head(&map, &next, &mut head_rng)?;
            map = next;
        }
        debug_assert_eq!(model.num_outputs(), map.num_pseudo());

        epochs.push(EpochRecord {
            epoch,
            budgets: budgets.num_allowed.clone(),
            flags: budgets.flags.clone(),
            cluster_counts: map.cluster_counts(),
            loss,
            validation: val_report,
        });
        log::debug!(
            "{} fold {fold} epoch {epoch}: loss {:.4} val F {:.4} clusters {:?}",
            cfg.mode,
            loss.total,
            epochs.last().map_or(0.0, |e| e.validation.f_score),
            map.cluster_counts()
        );
        if p.patience > 0 && since_best >= p.patience {
            break;
        }
    }

    let (best_epoch, best_report, checkpoint) = best.expect("at least one epoch");
    Ok(FoldOutcome {
        fold,
        train_size: train.len(),
        val_size: val.len(),
        epochs,
        best_epoch,
        best: best_report,
        final_cluster_counts: map.cluster_counts(),
        final_budgets: budgets,
        controller_trace: budget_trace(&history)?,
        checkpoint: Some(checkpoint),
    })
}

/// K-fold run of one mode. Fold membership depends only on the seed, so
/// different modes with the same seed see identical folds.
pub fn run(cfg: &RunConfig, data: &Dataset) -> Result<RunOutcome> {
    cfg.params.validate()?;
    data.validate()?;
    let root = Rng::new(cfg.params.seed);
    let folds = kfold_split(data.len(), cfg.params.folds, &mut root.fork(0), &data.parent_labels)?;
    let outcomes = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let val_idx = &folds[f];
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let mut train_idx = train_idx;
            train_idx.sort_unstable();
            let train = data.subset(&train_idx);
            let val = data.subset(val_idx);
            run_fold(cfg, &train, &val, f, &root.fork(1000 + f as u64)).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateMetrics::mean_of(outcomes.iter().map(|o| &o.best));
    Ok(RunOutcome {
        mode: cfg.mode,
        seed: cfg.params.seed,
        folds: outcomes,
        aggregate,
    })
}
