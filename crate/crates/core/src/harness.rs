//! Training protocol and experiment drivers: balanced-batch SGD with
//! momentum, periodic validation with plateau-triggered learning-rate
//! halving, per-representation prediction, evaluation against proposal
//! scenarios, and one-axis parameter sweeps.
//!
//! Batch aggregation normalizes each loss term by the count of samples
//! carrying it: the classification term over the whole batch, the positive
//! and negative circle terms over the positive/negative counts, and the
//! joint pose term over positives only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{sample_batch, BatchPlan, DataError, Proposal, ProposalScenario, Sample};
use crate::geometry::{
    angle_from_feature, bin_center, discretize, distance_to_circle, Azimuth, BinIndex,
    GeometryError,
};
use crate::losses::{
    circle_loss, discrete_nll, joint_pose_term, softmax, CircleTarget, DiscreteTarget,
    JointTarget, JointVariant, LossError, LossHyper,
};
use crate::metrics::{
    evaluate_detections, Detection, MetricsError, ResultsTable, ViewpointRule,
};
use crate::nnet::{sgd_step, Gradients, Network, NnetError, OptimizerState};
use crate::textio::fmt_f64;

/// Valid sweep axes, each naming a numeric config field.
pub const SWEEP_AXES: [&str; 7] = [
    "k",
    "delta",
    "lambda",
    "initial_lr",
    "momentum",
    "weight_decay",
    "lr_floor",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: TrainingTrace,
    },
    #[error("unknown sweep axis `{0}`; valid axes: k, delta, lambda, initial_lr, momentum, weight_decay, lr_floor")]
    UnknownAxis(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Output-head representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Softmax over background + class×orientation bins.
    Discrete,
    /// Single-class regression onto the circle with a repulsive negative term.
    Continuous,
    /// Class softmax plus one shared 2-D pose output.
    JointA,
    /// Class softmax plus 2N pose outputs, all penalized.
    JointB1,
    /// Class softmax plus 2N pose outputs, true-class pair penalized.
    JointB2,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Discrete => "discrete",
            Representation::Continuous => "continuous",
            Representation::JointA => "joint-a",
            Representation::JointB1 => "joint-b1",
            Representation::JointB2 => "joint-b2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "discrete" => Some(Representation::Discrete),
            "continuous" => Some(Representation::Continuous),
            "joint-a" => Some(Representation::JointA),
            "joint-b1" => Some(Representation::JointB1),
            "joint-b2" => Some(Representation::JointB2),
            _ => None,
        }
    }

    pub fn joint_variant(self) -> Option<JointVariant> {
        match self {
            Representation::JointA => Some(JointVariant::A),
            Representation::JointB1 => Some(JointVariant::B1),
            Representation::JointB2 => Some(JointVariant::B2),
            _ => None,
        }
    }
}

/// Everything a run needs: representation, world dimensions, loss and batch
/// hyperparameters, and the learning-rate schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub representation: Representation,
    /// Object class count N (background excluded).
    pub classes: usize,
    /// Orientation bin count P for the discrete head and target binning.
    pub bins: usize,
    pub hidden: Vec<usize>,
    pub hyper: LossHyper,
    pub plan: BatchPlan,
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Consecutive non-improving evaluations before the rate halves.
    pub lr_halving_patience: usize,
    /// Iterations between validation evaluations.
    pub eval_every: usize,
    pub validation_size: usize,
    pub max_iterations: usize,
    /// Training stops once the learning rate falls below this.
    pub lr_floor: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Protocol defaults for a representation: learning rate 1e-3 and 32/96
    /// batches, except the continuous head which uses 5e-5 and 8/120.
    pub fn new(representation: Representation, classes: usize, bins: usize) -> Self {
        let continuous = representation == Representation::Continuous;
        ExperimentConfig {
            representation,
            classes,
            bins,
            hidden: vec![64, 64],
            hyper: LossHyper::default(),
            plan: if continuous {
                BatchPlan::regression()
            } else {
                BatchPlan::classification()
            },
            initial_lr: if continuous { 5e-5 } else { 1e-3 },
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_halving_patience: 10,
            eval_every: 500,
            validation_size: 6400,
            max_iterations: 20_000,
            lr_floor: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.classes == 0 {
            return fail("classes must be at least 1".into());
        }
        if self.representation == Representation::Continuous && self.classes != 1 {
            return fail(format!(
                "continuous representation requires a single class, got classes = {}",
                self.classes
            ));
        }
        if self.representation == Representation::Discrete && self.bins < 2 {
            return fail(format!("discrete representation requires bins >= 2, got {}", self.bins));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden widths must be positive".into());
        }
        self.hyper.validate()?;
        self.plan.validate()?;
        if !(self.initial_lr > 0.0) {
            return fail("initial_lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must be in [0, 1)".into());
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be nonnegative".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        if self.lr_halving_patience == 0 {
            return fail("lr_halving_patience must be positive".into());
        }
        if !(self.lr_floor > 0.0) {
            return fail("lr_floor must be positive".into());
        }
        let (vp, vn) = self.validation_split_sizes();
        if vp == 0 || vn == 0 {
            return fail(format!(
                "validation_size {} too small for the batch proportions",
                self.validation_size
            ));
        }
        Ok(())
    }

    /// Positive/negative counts of the validation split, preserving the
    /// batch proportions.
    pub fn validation_split_sizes(&self) -> (usize, usize) {
        let vp = self.validation_size * self.plan.positives / self.plan.batch_size;
        (vp, self.validation_size - vp)
    }

    /// Output dimension of the network head.
    pub fn head_dim(&self) -> usize {
        match self.representation {
            Representation::Discrete => self.classes * self.bins + 1,
            Representation::Continuous => 3,
            Representation::JointA => self.classes + 1 + 2,
            Representation::JointB1 | Representation::JointB2 => self.classes + 1 + 2 * self.classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

/// Per-evaluation training record; the learning rate is the one in effect
/// after the plateau rule processed that evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,val_loss,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration,
                fmt_f64(r.train_loss),
                fmt_f64(r.val_loss),
                fmt_f64(r.learning_rate)
            ));
        }
        out
    }
}

/// Plateau rule: halve the learning rate after `patience` consecutive
/// evaluations without strict improvement over the running best validation
/// loss, then reset the counter (the best is kept).
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    learning_rate: f64,
    patience: usize,
    best: f64,
    since_improvement: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, patience: usize) -> Self {
        PlateauSchedule {
            learning_rate: initial_lr,
            patience,
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }

    /// Feeds one validation loss; returns true when the rate halved.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_improvement = 0;
            return false;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            self.learning_rate /= 2.0;
            self.since_improvement = 0;
            return true;
        }
        false
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

// Derives independent RNG streams from the experiment seed (splitmix64).
fn subseed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_NET: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_REFERENCE: u64 = 4;

/// Internal head selector; `ClassOnly` is the detection-only reference
/// classifier (plain class NLL, equivalent to the discrete head with a
/// single orientation bin).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadKind {
    Discrete,
    Continuous,
    Joint(JointVariant),
    ClassOnly,
}

impl HeadKind {
    fn of(config: &ExperimentConfig) -> Self {
        match config.representation {
            Representation::Discrete => HeadKind::Discrete,
            Representation::Continuous => HeadKind::Continuous,
            Representation::JointA => HeadKind::Joint(JointVariant::A),
            Representation::JointB1 => HeadKind::Joint(JointVariant::B1),
            Representation::JointB2 => HeadKind::Joint(JointVariant::B2),
            // ClassOnly is selected explicitly by the reference trainer.
        }
    }

    fn dim(self, config: &ExperimentConfig) -> usize {
        match self {
            HeadKind::ClassOnly => config.classes + 1,
            _ => config.head_dim(),
        }
    }
}

/// Per-sample loss contribution and upstream gradient, already weighted for
/// batch aggregation.
fn sample_loss_and_upstream(
    kind: HeadKind,
    config: &ExperimentConfig,
    output: &[f64],
    sample: &Sample,
    w_all: f64,
    w_pos: f64,
    w_neg: f64,
) -> Result<(f64, Vec<f64>), HarnessError> {
    let hyper = &config.hyper;
    match kind {
        HeadKind::Discrete => {
            let target = if let Some(theta) = sample.azimuth.filter(|_| sample.is_positive()) {
                let bin = discretize(theta, config.bins)?;
                DiscreteTarget::object(sample.class_id, bin.index, config.classes, config.bins)?
            } else {
                DiscreteTarget::background(config.classes, config.bins)
            };
            let (nll, grad) = discrete_nll(&softmax(output), &target)?;
            Ok((w_all * nll, grad.into_iter().map(|g| w_all * g).collect()))
        }
        HeadKind::ClassOnly => {
            let target = if sample.is_positive() {
                DiscreteTarget::object(sample.class_id, 1, config.classes, 1)?
            } else {
                DiscreteTarget::background(config.classes, 1)
            };
            let (nll, grad) = discrete_nll(&softmax(output), &target)?;
            Ok((w_all * nll, grad.into_iter().map(|g| w_all * g).collect()))
        }
        HeadKind::Continuous => {
            let target = match sample.azimuth.filter(|_| sample.is_positive()) {
                Some(theta) => CircleTarget::positive(theta),
                None => CircleTarget::negative(),
            };
            let w = if target.is_positive { w_pos } else { w_neg };
            let (loss, grad) = circle_loss(output, &target, hyper)?;
            Ok((w * loss, grad.iter().map(|&g| w * g).collect()))
        }
        HeadKind::Joint(variant) => {
            let target = match sample.azimuth.filter(|_| sample.is_positive()) {
                Some(theta) => {
                    JointTarget::positive(sample.class_id, theta, variant, config.classes)?
                }
                None => JointTarget::background(variant, config.classes),
            };
            let class_dim = config.classes + 1;
            let (y_class, y_pose) = output.split_at(class_dim);
            let (ec, gc) = discrete_nll(&softmax(y_class), &target.class_target())?;
            let (ep, gp) = joint_pose_term(y_pose, &target, hyper)?;
            let wc = hyper.lambda * w_all;
            let loss = wc * ec + w_pos * ep;
            let mut upstream = Vec::with_capacity(output.len());
            upstream.extend(gc.into_iter().map(|g| wc * g));
            upstream.extend(gp.into_iter().map(|g| w_pos * g));
            Ok((loss, upstream))
        }
    }
}

// Normalizers for one batch: (all, positive, negative) term weights. The
// negative circle weight carries the factor K.
fn batch_weights(kind: HeadKind, hyper: &LossHyper, n_all: usize, n_pos: usize, n_neg: usize) -> (f64, f64, f64) {
    let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    match kind {
        HeadKind::Continuous => (inv(n_all), inv(n_pos), hyper.k * inv(n_neg)),
        _ => (inv(n_all), inv(n_pos), inv(n_neg)),
    }
}

fn batch_pass(
    net: &Network,
    kind: HeadKind,
    config: &ExperimentConfig,
    batch: &[&Sample],
    with_grads: bool,
) -> Result<(f64, Option<Gradients>), HarnessError> {
    let n_pos = batch.iter().filter(|s| s.is_positive()).count();
    let n_neg = batch.len() - n_pos;
    let (w_all, w_pos, w_neg) = batch_weights(kind, &config.hyper, batch.len(), n_pos, n_neg);
    let mut total = 0.0;
    let mut grads = if with_grads {
        Some(Gradients::zeros_like(net))
    } else {
        None
    };
    for sample in batch {
        if with_grads {
            let trace = net.forward_trace(&sample.features)?;
            let (loss, upstream) = sample_loss_and_upstream(
                kind,
                config,
                trace.output(),
                sample,
                w_all,
                w_pos,
                w_neg,
            )?;
            total += loss;
            let g = net.backward(&trace, &upstream)?;
            grads.as_mut().expect("with_grads").accumulate(&g);
        } else {
            let output = net.forward(&sample.features)?;
            let (loss, _) =
                sample_loss_and_upstream(kind, config, &output, sample, w_all, w_pos, w_neg)?;
            total += loss;
        }
    }
    Ok((total, grads))
}

/// Aggregated loss of a whole pool under the batch normalization rules.
pub fn pool_loss(
    net: &Network,
    config: &ExperimentConfig,
    pool: &[Sample],
) -> Result<f64, HarnessError> {
    let refs: Vec<&Sample> = pool.iter().collect();
    let kind = HeadKind::of(config);
    Ok(batch_pass(net, kind, config, &refs, false)?.0)
}

/// Splits a pool into disjoint (train, validation) parts; the validation
/// side holds `validation_size` samples at the batch plan's positive to
/// negative proportions, drawn by seeded shuffle.
pub fn split_validation(
    pool: &[Sample],
    config: &ExperimentConfig,
) -> Result<(Vec<Sample>, Vec<Sample>), HarnessError> {
    let (want_pos, want_neg) = config.validation_split_sizes();
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, s) in pool.iter().enumerate() {
        if s.is_positive() {
            positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    let need_pos = want_pos + config.plan.positives;
    let need_neg = want_neg + config.plan.negatives;
    if positives.len() < need_pos {
        return Err(HarnessError::Config(format!(
            "pool has {} positives, need at least {need_pos} for validation plus batches",
            positives.len()
        )));
    }
    if negatives.len() < need_neg {
        return Err(HarnessError::Config(format!(
            "pool has {} negatives, need at least {need_neg} for validation plus batches",
            negatives.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(config.seed, STREAM_SPLIT));
    shuffle(&mut positives, &mut rng);
    shuffle(&mut negatives, &mut rng);
    let mut val_idx: Vec<usize> = positives[..want_pos]
        .iter()
        .chain(&negatives[..want_neg])
        .copied()
        .collect();
    let mut train_idx: Vec<usize> = positives[want_pos..]
        .iter()
        .chain(&negatives[want_neg..])
        .copied()
        .collect();
    // Keep pool order inside each split for stable iteration.
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let val = val_idx.into_iter().map(|i| pool[i].clone()).collect();
    let train = train_idx.into_iter().map(|i| pool[i].clone()).collect();
    Ok((train, val))
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub trace: TrainingTrace,
}

/// Trains a head on a pool, splitting off the validation set internally.
pub fn train(config: &ExperimentConfig, pool: &[Sample]) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let (train_pool, val_pool) = split_validation(pool, config)?;
    train_with_split(config, &train_pool, &val_pool)
}

/// Trains on an explicit train/validation split (the splits must be
/// disjoint; augmentation, if any, is the caller's business).
pub fn train_with_split(
    config: &ExperimentConfig,
    train_pool: &[Sample],
    val_pool: &[Sample],
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    train_head(config, HeadKind::of(config), config.seed, train_pool, val_pool)
}

/// Trains the detection-only reference classifier (plain class NLL over
/// background + N classes) used as the frozen scorer for `lambda = 0` runs.
pub fn train_reference_classifier(
    config: &ExperimentConfig,
    train_pool: &[Sample],
    val_pool: &[Sample],
) -> Result<TrainOutcome, HarnessError> {
    let mut ref_config = config.clone();
    // The reference classifier always trains at the classification preset.
    ref_config.representation = Representation::Discrete;
    ref_config.bins = 2; // placates validation; ClassOnly ignores bins
    ref_config.plan = BatchPlan::classification();
    ref_config.initial_lr = 1e-3;
    ref_config.validate()?;
    train_head(
        &ref_config,
        HeadKind::ClassOnly,
        subseed(config.seed, STREAM_REFERENCE),
        train_pool,
        val_pool,
    )
}

fn train_head(
    config: &ExperimentConfig,
    kind: HeadKind,
    seed: u64,
    train_pool: &[Sample],
    val_pool: &[Sample],
) -> Result<TrainOutcome, HarnessError> {
    let input_dim = train_pool
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| HarnessError::Config("empty training pool".into()))?;
    let mut net = Network::new(
        input_dim,
        &config.hidden,
        kind.dim(config),
        subseed(seed, STREAM_NET),
    );
    let mut opt = OptimizerState::new(&net, config.initial_lr, config.momentum, config.weight_decay);
    let mut schedule = PlateauSchedule::new(config.initial_lr, config.lr_halving_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, STREAM_BATCH));
    let mut trace = TrainingTrace::default();
    let val_refs: Vec<&Sample> = val_pool.iter().collect();
    for iteration in 1..=config.max_iterations {
        if schedule.learning_rate() < config.lr_floor {
            break;
        }
        let batch = sample_batch(train_pool, &config.plan, &mut rng)?;
        let (train_loss, grads) = batch_pass(&net, kind, config, &batch, true)?;
        if !train_loss.is_finite() {
            return Err(HarnessError::Diverged { iteration, trace });
        }
        opt.learning_rate = schedule.learning_rate();
        let grads = grads.expect("gradients requested");
        if let Err(NnetError::DivergedTraining { .. }) = sgd_step(&mut net, &mut opt, &grads) {
            return Err(HarnessError::Diverged { iteration, trace });
        }
        if iteration % config.eval_every == 0 {
            let (val_loss, _) = batch_pass(&net, kind, config, &val_refs, false)?;
            schedule.observe(val_loss);
            trace.records.push(TraceRecord {
                iteration,
                train_loss,
                val_loss,
                learning_rate: schedule.learning_rate(),
            });
        }
    }
    Ok(TrainOutcome {
        network: net,
        trace,
    })
}

/// Argmax class with its detection score and azimuth.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Score per object class, index 0 holding class 1.
    pub class_scores: Vec<f64>,
    /// Predicted object class in `1..=N`.
    pub class_id: usize,
    /// Azimuth of the predicted class.
    pub azimuth: Azimuth,
}

/// Per-class `(score, azimuth)` read off a head's raw output vector.
///
/// Discrete: class score sums the class's bin probabilities, the azimuth is
/// the center of its best bin. Continuous: score is the negated distance to
/// the circle. Joint: scores are the class softmax, azimuths come from the
/// shared pose pair (a) or the per-class pair (b1/b2).
pub fn per_class_outputs(
    output: &[f64],
    config: &ExperimentConfig,
) -> Result<Vec<(f64, Azimuth)>, HarnessError> {
    let expect = config.head_dim();
    if output.len() != expect {
        return Err(HarnessError::Config(format!(
            "head output has dimension {}, representation expects {expect}",
            output.len()
        )));
    }
    let n = config.classes;
    match config.representation {
        Representation::Discrete => {
            let probs = softmax(output);
            let mut out = Vec::with_capacity(n);
            for class in 1..=n {
                let lo = 1 + (class - 1) * config.bins;
                let bins = &probs[lo..lo + config.bins];
                let score: f64 = bins.iter().sum();
                let best = bins
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
                    .unwrap_or(0);
                let azimuth = bin_center(BinIndex {
                    index: best + 1,
                    bins: config.bins,
                })?;
                out.push((score, azimuth));
            }
            Ok(out)
        }
        Representation::Continuous => {
            let y = [output[0], output[1], output[2]];
            let score = -distance_to_circle(y);
            Ok(vec![(score, angle_from_feature(output, (0, 1)))])
        }
        Representation::JointA => {
            let probs = softmax(&output[..n + 1]);
            let azimuth = angle_from_feature(&output[n + 1..], (0, 1));
            Ok((1..=n).map(|c| (probs[c], azimuth)).collect())
        }
        Representation::JointB1 | Representation::JointB2 => {
            let probs = softmax(&output[..n + 1]);
            let pose = &output[n + 1..];
            Ok((1..=n)
                .map(|c| {
                    let azimuth = angle_from_feature(pose, (2 * (c - 1), 2 * (c - 1) + 1));
                    (probs[c], azimuth)
                })
                .collect())
        }
    }
}

/// Runs the network on features and extracts the best class with its score
/// and azimuth.
pub fn predict(
    net: &Network,
    config: &ExperimentConfig,
    features: &[f64],
) -> Result<Prediction, HarnessError> {
    let output = net.forward(features)?;
    let per_class = per_class_outputs(&output, config)?;
    let best = per_class
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .expect("at least one class");
    Ok(Prediction {
        class_scores: per_class.iter().map(|(s, _)| *s).collect(),
        class_id: best + 1,
        azimuth: per_class[best].1,
    })
}

/// Evaluation settings for AP/AVP reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub views: Vec<usize>,
    pub rule: ViewpointRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            views: vec![4, 8, 16, 24],
            rule: ViewpointRule::SameBin,
        }
    }
}

/// Scores every proposal with a per-class scorer and runs the metrics.
pub fn evaluate_scorer<F>(
    scorer: F,
    classes: usize,
    scenario: &ProposalScenario,
    eval: &EvalConfig,
) -> Result<ResultsTable, HarnessError>
where
    F: Fn(&Proposal) -> Result<Vec<(f64, Azimuth)>, HarnessError>,
{
    let mut dets = Vec::with_capacity(scenario.proposals.len() * classes);
    for proposal in &scenario.proposals {
        let per_class = scorer(proposal)?;
        if per_class.len() != classes {
            return Err(HarnessError::Config(format!(
                "scorer produced {} class entries, expected {classes}",
                per_class.len()
            )));
        }
        for (i, (score, azimuth)) in per_class.into_iter().enumerate() {
            dets.push(Detection {
                image_id: proposal.image_id,
                class_id: i + 1,
                score,
                bbox: proposal.bbox,
                azimuth,
            });
        }
    }
    Ok(evaluate_detections(
        &dets,
        &scenario.ground_truths,
        eval.iou_threshold,
        &eval.views,
        eval.rule,
    )?)
}

/// Evaluates a trained head against a proposal scenario.
pub fn evaluate(
    net: &Network,
    config: &ExperimentConfig,
    scenario: &ProposalScenario,
    eval: &EvalConfig,
) -> Result<ResultsTable, HarnessError> {
    evaluate_scorer(
        |p| {
            let output = net.forward(&p.features)?;
            per_class_outputs(&output, config)
        },
        config.classes,
        scenario,
        eval,
    )
}

/// Evaluates with detection scores from a frozen reference classifier and
/// azimuths from the pose network (the `lambda = 0` protocol).
pub fn evaluate_fixed_classifier(
    reference: &Network,
    pose_net: &Network,
    config: &ExperimentConfig,
    scenario: &ProposalScenario,
    eval: &EvalConfig,
) -> Result<ResultsTable, HarnessError> {
    evaluate_scorer(
        |p| {
            let probs = softmax(&reference.forward(&p.features)?);
            if probs.len() != config.classes + 1 {
                return Err(HarnessError::Config(format!(
                    "reference classifier emits {} outputs, expected {}",
                    probs.len(),
                    config.classes + 1
                )));
            }
            let pose = per_class_outputs(&pose_net.forward(&p.features)?, config)?;
            Ok((1..=config.classes)
                .map(|c| (probs[c], pose[c - 1].1))
                .collect())
        },
        config.classes,
        scenario,
        eval,
    )
}

/// A full experiment: trained network(s), trace, and the metrics table.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub network: Network,
    /// The frozen reference classifier, present for `lambda = 0` joint runs.
    pub reference: Option<Network>,
    pub trace: TrainingTrace,
    pub table: ResultsTable,
}

/// Trains and evaluates one configuration. Joint runs with `lambda = 0`
/// follow the fixed-classifier protocol: a detection-only classifier is
/// trained first and frozen, supplying scores while only the pose output
/// learns.
pub fn run_experiment(
    config: &ExperimentConfig,
    pool: &[Sample],
    scenario: &ProposalScenario,
    eval: &EvalConfig,
) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let (train_pool, val_pool) = split_validation(pool, config)?;
    let fixed_classifier =
        config.representation.joint_variant().is_some() && config.hyper.lambda == 0.0;
    if fixed_classifier {
        let reference = train_reference_classifier(config, &train_pool, &val_pool)?;
        let pose = train_with_split(config, &train_pool, &val_pool)?;
        let table =
            evaluate_fixed_classifier(&reference.network, &pose.network, config, scenario, eval)?;
        Ok(ExperimentOutcome {
            network: pose.network,
            reference: Some(reference.network),
            trace: pose.trace,
            table,
        })
    } else {
        let outcome = train_with_split(config, &train_pool, &val_pool)?;
        let table = evaluate(&outcome.network, config, scenario, eval)?;
        Ok(ExperimentOutcome {
            network: outcome.network,
            reference: None,
            trace: outcome.trace,
            table,
        })
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub table: ResultsTable,
}

#[derive(Debug)]
pub struct SweepReport {
    pub axis: String,
    pub views: Vec<usize>,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// CSV with one column per swept value and one row per mean metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for p in &self.points {
            out.push_str(&format!(",{}", p.value));
        }
        out.push('\n');
        out.push_str("ap");
        for p in &self.points {
            out.push_str(&format!(",{:.6}", p.table.mean_ap().unwrap_or(0.0)));
        }
        out.push('\n');
        for (vi, v) in self.views.iter().enumerate() {
            out.push_str(&format!("avp{v}"));
            for p in &self.points {
                out.push_str(&format!(",{:.6}", p.table.mean_avp(vi).unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let mut plot = crate::plot::LinePlot::new(
            &format!("metrics vs {}", self.axis),
            &self.axis,
            "mean metric",
        );
        let ap: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (p.value, p.table.mean_ap().unwrap_or(0.0)))
            .collect();
        plot.add_series("ap", ap);
        for (vi, v) in self.views.iter().enumerate() {
            let pts: Vec<(f64, f64)> = self
                .points
                .iter()
                .map(|p| (p.value, p.table.mean_avp(vi).unwrap_or(0.0)))
                .collect();
            plot.add_series(&format!("avp{v}"), pts);
        }
        plot.to_svg(640, 480)
    }
}

/// Sets one numeric config field by axis name.
pub fn apply_axis(
    config: &mut ExperimentConfig,
    axis: &str,
    value: f64,
) -> Result<(), HarnessError> {
    match axis {
        "k" => config.hyper.k = value,
        "delta" => config.hyper.delta = value,
        "lambda" => config.hyper.lambda = value,
        "initial_lr" => config.initial_lr = value,
        "momentum" => config.momentum = value,
        "weight_decay" => config.weight_decay = value,
        "lr_floor" => config.lr_floor = value,
        other => return Err(HarnessError::UnknownAxis(other.to_string())),
    }
    Ok(())
}

/// Trains and evaluates the base configuration once per axis value, with
/// shared seeds, pool and scenario across the points.
pub fn sweep(
    axis: &str,
    values: &[f64],
    base: &ExperimentConfig,
    pool: &[Sample],
    scenario: &ProposalScenario,
    eval: &EvalConfig,
) -> Result<SweepReport, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        apply_axis(&mut config, axis, value)?;
        let outcome = run_experiment(&config, pool, scenario, eval)?;
        points.push(SweepPoint {
            value,
            table: outcome.table,
        });
    }
    Ok(SweepReport {
        axis: axis.to_string(),
        views: eval.views.clone(),
        points,
    })
}
