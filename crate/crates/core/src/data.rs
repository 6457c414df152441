//! Synthetic desk-scale stand-in for an annotated detection corpus.
//!
//! Positive patches of class `c` live on a circle in feature space:
//! `x = μ_c + r·(cos θ · u_c + sin θ · v_c) + σ·ε`, with a per-class
//! orthonormal frame `(u_c, v_c)`, so appearance varies continuously with
//! the viewpoint. Background patches come from a broad centered Gaussian.
//! An optional view-aliasing rate draws a fraction of positive features at
//! the antipodal angle while keeping the true label, imitating classes
//! whose opposite views look alike.
//!
//! File formats (one record per line, `#` comments, floats at 17
//! significant digits so round-trips are bit-exact):
//!
//! ```text
//! samples:      class_id azimuth f_1 ... f_D          (azimuth `nan` when class 0)
//! detections:   image_id class_id score x1 y1 x2 y2 azimuth
//! ground truth: image_id class_id x1 y1 x2 y2 azimuth difficult{0,1}
//! ```

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::Azimuth;
use crate::metrics::{BoundingBox, Detection, GroundTruth};
use crate::textio::{data_fields, fmt_f64, parse_f64};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at record line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("insufficient {side} pool: need {need}, have {have}")]
    InsufficientPool {
        side: &'static str,
        need: usize,
        have: usize,
    },
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        message: message.into(),
    }
}

/// One training patch: a feature vector with a class label (0 = background)
/// and, for positives, the annotated azimuth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class_id: usize,
    pub azimuth: Option<Azimuth>,
}

impl Sample {
    pub fn is_positive(&self) -> bool {
        self.class_id > 0
    }
}

/// Generator parameters for the synthetic world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldSpec {
    pub classes: usize,
    pub feature_dim: usize,
    /// Radius of the per-class signal circle.
    pub signal_radius: f64,
    /// Isotropic Gaussian noise added to positive features.
    pub noise_sigma: f64,
    /// Scale of the centered Gaussian background distribution.
    pub background_spread: f64,
    /// Distance of each class mean from the origin (one axis per class).
    pub mean_separation: f64,
    /// Probability that a positive's features are drawn at the antipodal
    /// azimuth while the label keeps the true one.
    pub view_aliasing: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            classes: 3,
            feature_dim: 32,
            signal_radius: 2.0,
            noise_sigma: 0.25,
            background_spread: 1.5,
            mean_separation: 8.0,
            view_aliasing: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct ClassFrame {
    mean: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// A world instantiated from a spec: class means on distinct axes (pairwise
/// distance `√2 · mean_separation`) and seeded orthonormal signal frames.
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    frames: Vec<ClassFrame>,
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self, DataError> {
        if spec.classes == 0 {
            return Err(DataError::InvalidSpec("need at least one class".into()));
        }
        if spec.feature_dim < spec.classes || spec.feature_dim < 3 {
            return Err(DataError::InvalidSpec(format!(
                "feature_dim {} too small for {} classes",
                spec.feature_dim, spec.classes
            )));
        }
        if !(spec.signal_radius > 0.0)
            || spec.noise_sigma < 0.0
            || !(spec.background_spread > 0.0)
            || !(0.0..=1.0).contains(&spec.view_aliasing)
        {
            return Err(DataError::InvalidSpec("out-of-range generator parameter".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.feature_dim;
        let mut frames = Vec::with_capacity(spec.classes);
        for c in 0..spec.classes {
            let mut mean = vec![0.0; d];
            mean[c] = spec.mean_separation;
            // Random orthonormal (u, v), orthogonal to the mean axis so the
            // de-embedding dot products are exact.
            let frame = loop {
                let mut u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                u[c] = 0.0;
                v[c] = 0.0;
                let un = norm(&u);
                if un < 1e-6 {
                    continue;
                }
                scale(&mut u, 1.0 / un);
                let uv = dot(&u, &v);
                for (vi, ui) in v.iter_mut().zip(&u) {
                    *vi -= uv * ui;
                }
                let vn = norm(&v);
                if vn < 1e-6 {
                    continue;
                }
                scale(&mut v, 1.0 / vn);
                break (u, v);
            };
            frames.push(ClassFrame {
                mean,
                u: frame.0,
                v: frame.1,
            });
        }
        Ok(World { spec, frames })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    fn frame(&self, class_id: usize) -> &ClassFrame {
        assert!(
            (1..=self.spec.classes).contains(&class_id),
            "class {class_id} out of range"
        );
        &self.frames[class_id - 1]
    }

    /// Noiseless feature point of `class_id` at azimuth `theta`.
    pub fn embed(&self, class_id: usize, theta: Azimuth) -> Vec<f64> {
        let f = self.frame(class_id);
        let (c, s) = (theta.radians().cos(), theta.radians().sin());
        let r = self.spec.signal_radius;
        f.mean
            .iter()
            .zip(f.u.iter().zip(&f.v))
            .map(|(&m, (&u, &v))| m + r * (c * u + s * v))
            .collect()
    }

    /// Projects features onto the class signal plane and reads the angle off
    /// the frame; exactly inverts [`World::embed`] when the noise is zero.
    pub fn signal_plane_angle(&self, class_id: usize, features: &[f64]) -> Azimuth {
        let f = self.frame(class_id);
        let centered: Vec<f64> = features.iter().zip(&f.mean).map(|(x, m)| x - m).collect();
        let a = dot(&centered, &f.u);
        let b = dot(&centered, &f.v);
        Azimuth::new(b.atan2(a))
    }

    pub fn positive_features(&self, class_id: usize, theta: Azimuth, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = self.embed(class_id, theta);
        if self.spec.noise_sigma > 0.0 {
            for xi in &mut x {
                *xi += self.spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        x
    }

    pub fn background_features(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.spec.feature_dim)
            .map(|_| self.spec.background_spread * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// The azimuth at which a positive's features are drawn: antipodal with
    /// probability `view_aliasing`, the labeled angle otherwise.
    fn feature_azimuth(&self, theta: Azimuth, rng: &mut ChaCha8Rng) -> Azimuth {
        if self.spec.view_aliasing > 0.0 && rng.gen_bool(self.spec.view_aliasing) {
            Azimuth::new(theta.radians() + PI)
        } else {
            theta
        }
    }

    /// Draws `n` labeled patches; each is positive with probability
    /// `positive_fraction` (class uniform, azimuth uniform on the circle).
    pub fn generate_samples(
        &self,
        n: usize,
        positive_fraction: f64,
        seed: u64,
    ) -> Result<Vec<Sample>, DataError> {
        if !(0.0..=1.0).contains(&positive_fraction) {
            return Err(DataError::InvalidSpec(format!(
                "positive_fraction {positive_fraction} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if positive_fraction > 0.0 && rng.gen_bool(positive_fraction) {
                let class_id = rng.gen_range(1..=self.spec.classes);
                let theta = Azimuth::new(rng.gen_range(0.0..TAU));
                let feat_theta = self.feature_azimuth(theta, &mut rng);
                out.push(Sample {
                    features: self.positive_features(class_id, feat_theta, &mut rng),
                    class_id,
                    azimuth: Some(theta),
                });
            } else {
                out.push(Sample {
                    features: self.background_features(&mut rng),
                    class_id: 0,
                    azimuth: None,
                });
            }
        }
        Ok(out)
    }

    /// Appends horizontally flipped copies of the positives: azimuth
    /// `2π − θ` and features mirrored across the class frame's `u` axis.
    pub fn flip_augmented(&self, samples: &[Sample]) -> Vec<Sample> {
        let mut out = samples.to_vec();
        for s in samples.iter().filter(|s| s.is_positive()) {
            let f = self.frame(s.class_id);
            let centered: Vec<f64> = s.features.iter().zip(&f.mean).map(|(x, m)| x - m).collect();
            let b = dot(&centered, &f.v);
            let features: Vec<f64> = s
                .features
                .iter()
                .zip(&f.v)
                .map(|(x, v)| x - 2.0 * b * v)
                .collect();
            out.push(Sample {
                features,
                class_id: s.class_id,
                azimuth: s.azimuth.map(|a| Azimuth::new(TAU - a.radians())),
            });
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &mut [f64], s: f64) {
    for x in a {
        *x *= s;
    }
}

/// Fixed per-batch composition of positive and negative patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl BatchPlan {
    /// 32 positives + 96 negatives, the classification-head composition.
    pub fn classification() -> Self {
        BatchPlan {
            batch_size: 128,
            positives: 32,
            negatives: 96,
        }
    }

    /// 8 positives + 120 negatives, the single-class regression composition.
    pub fn regression() -> Self {
        BatchPlan {
            batch_size: 128,
            positives: 8,
            negatives: 120,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.positives + self.negatives != self.batch_size {
            return Err(DataError::InvalidSpec(format!(
                "batch plan {}+{} != {}",
                self.positives, self.negatives, self.batch_size
            )));
        }
        Ok(())
    }
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan::classification()
    }
}

/// Draws a balanced batch: exactly `plan.positives` positives with classes
/// uniform among the present classes, and `plan.negatives` negatives.
/// Sampling is without replacement within the batch (with replacement across
/// batches).
pub fn sample_batch<'a>(
    pool: &'a [Sample],
    plan: &BatchPlan,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a Sample>, DataError> {
    plan.validate()?;
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    let mut class_ids: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, s) in pool.iter().enumerate() {
        if s.class_id == 0 {
            negatives.push(i);
        } else {
            match class_ids.iter().position(|&c| c == s.class_id) {
                Some(k) => by_class[k].push(i),
                None => {
                    class_ids.push(s.class_id);
                    by_class.push(vec![i]);
                }
            }
        }
    }
    let total_pos: usize = by_class.iter().map(|v| v.len()).sum();
    if total_pos < plan.positives {
        return Err(DataError::InsufficientPool {
            side: "positive",
            need: plan.positives,
            have: total_pos,
        });
    }
    if negatives.len() < plan.negatives {
        return Err(DataError::InsufficientPool {
            side: "negative",
            need: plan.negatives,
            have: negatives.len(),
        });
    }
    let mut batch = Vec::with_capacity(plan.batch_size);
    for _ in 0..plan.positives {
        let nonempty: Vec<usize> = (0..by_class.len()).filter(|&k| !by_class[k].is_empty()).collect();
        let k = nonempty[rng.gen_range(0..nonempty.len())];
        let j = rng.gen_range(0..by_class[k].len());
        batch.push(&pool[by_class[k].swap_remove(j)]);
    }
    for _ in 0..plan.negatives {
        let j = rng.gen_range(0..negatives.len());
        batch.push(&pool[negatives.swap_remove(j)]);
    }
    Ok(batch)
}

/// Layout of a generated detection scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub classes: usize,
    pub objects_per_image: usize,
    pub distractors_per_image: usize,
    /// Relative box jitter applied to planted detections; 0 keeps GT boxes.
    pub box_jitter: f64,
    /// Systematic azimuth offset of planted detections, radians.
    pub azimuth_error: f64,
    /// Additional uniform azimuth noise, radians (± half-width).
    pub azimuth_noise: f64,
    pub difficult_fraction: f64,
    /// When set, ground-truth azimuths snap to this grid's bin centers
    /// (multiples of `2π/grid`), which makes the 4/8/16/24 view bins nest.
    pub azimuth_grid: Option<usize>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            classes: 3,
            objects_per_image: 3,
            distractors_per_image: 12,
            box_jitter: 0.12,
            azimuth_error: 0.0,
            azimuth_noise: 0.0,
            difficult_fraction: 0.0,
            azimuth_grid: None,
        }
    }
}

const CANVAS: f64 = 1000.0;

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.gen_range(60.0..180.0);
    let h = rng.gen_range(60.0..180.0);
    let x1 = rng.gen_range(0.0..CANVAS - w);
    let y1 = rng.gen_range(0.0..CANVAS - h);
    BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("construction keeps boxes valid")
}

fn jittered_box(bbox: &BoundingBox, jitter: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    if jitter == 0.0 {
        return *bbox;
    }
    let w = bbox.x2 - bbox.x1;
    let h = bbox.y2 - bbox.y1;
    for _ in 0..64 {
        let dx = jitter * w * rng.gen_range(-1.0..1.0);
        let dy = jitter * h * rng.gen_range(-1.0..1.0);
        let grow = 1.0 + jitter * rng.gen_range(-0.5..0.5);
        let candidate = BoundingBox::new(
            bbox.x1 + dx,
            bbox.y1 + dy,
            bbox.x1 + dx + w * grow,
            bbox.y1 + dy + h * grow,
        );
        if let Ok(b) = candidate {
            if crate::metrics::iou(&b, bbox) >= 0.55 {
                return b;
            }
        }
    }
    *bbox
}

fn distractor_box(gts: &[GroundTruth], image_id: u32, rng: &mut ChaCha8Rng) -> BoundingBox {
    for _ in 0..64 {
        let b = random_box(rng);
        let overlaps = gts
            .iter()
            .filter(|g| g.image_id == image_id)
            .any(|g| crate::metrics::iou(&b, &g.bbox) >= 0.25);
        if !overlaps {
            return b;
        }
    }
    random_box(rng)
}

fn scenario_azimuth(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Azimuth {
    match spec.azimuth_grid {
        Some(grid) => Azimuth::new(rng.gen_range(0..grid) as f64 * TAU / grid as f64),
        None => Azimuth::new(rng.gen_range(0.0..TAU)),
    }
}

/// Generates a controlled detection scenario with a known labeling: one
/// planted detection per ground truth (score in (0.5, 1), IoU ≥ 0.55) plus
/// low-scoring distractors (score < 0.45, IoU < 0.25 with same-image GT).
pub fn generate_detection_scenario(
    spec: &ScenarioSpec,
    n_images: usize,
    seed: u64,
) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image in 0..n_images as u32 {
        for _ in 0..spec.objects_per_image {
            let bbox = random_box(&mut rng);
            let theta = scenario_azimuth(spec, &mut rng);
            let difficult =
                spec.difficult_fraction > 0.0 && rng.gen_bool(spec.difficult_fraction);
            let class_id = rng.gen_range(1..=spec.classes);
            gts.push(GroundTruth {
                image_id: image,
                class_id,
                bbox,
                azimuth: theta,
                difficult,
            });
            let det_box = jittered_box(&bbox, spec.box_jitter, &mut rng);
            let noise = if spec.azimuth_noise > 0.0 {
                rng.gen_range(-spec.azimuth_noise..spec.azimuth_noise)
            } else {
                0.0
            };
            dets.push(Detection {
                image_id: image,
                class_id,
                score: rng.gen_range(0.5..1.0),
                bbox: det_box,
                azimuth: Azimuth::new(theta.radians() + spec.azimuth_error + noise),
            });
        }
        for _ in 0..spec.distractors_per_image {
            let bbox = distractor_box(&gts, image, &mut rng);
            dets.push(Detection {
                image_id: image,
                class_id: rng.gen_range(1..=spec.classes),
                score: rng.gen_range(0.0..0.45),
                bbox,
                azimuth: Azimuth::new(rng.gen_range(0.0..TAU)),
            });
        }
    }
    (dets, gts)
}

/// An unscored region proposal carrying the features a model will score.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub image_id: u32,
    pub bbox: BoundingBox,
    pub features: Vec<f64>,
    pub truth: ProposalTruth,
}

/// Generation-time provenance, available to oracle scorers in tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalTruth {
    Object { class_id: usize, azimuth: Azimuth },
    Background,
}

/// Proposals plus ground truth for end-to-end evaluation of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalScenario {
    pub proposals: Vec<Proposal>,
    pub ground_truths: Vec<GroundTruth>,
}

/// Like [`generate_detection_scenario`] but emitting feature-carrying
/// proposals instead of pre-scored detections: one jittered proposal per
/// ground truth with positive features at the (possibly aliased) true
/// azimuth, plus background-feature distractors.
pub fn generate_proposal_scenario(
    world: &World,
    spec: &ScenarioSpec,
    n_images: usize,
    seed: u64,
) -> ProposalScenario {
    assert_eq!(
        world.spec().classes,
        spec.classes,
        "world and scenario class counts must agree"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gts = Vec::new();
    let mut proposals = Vec::new();
    for image in 0..n_images as u32 {
        for _ in 0..spec.objects_per_image {
            let bbox = random_box(&mut rng);
            let theta = scenario_azimuth(spec, &mut rng);
            let difficult =
                spec.difficult_fraction > 0.0 && rng.gen_bool(spec.difficult_fraction);
            let class_id = rng.gen_range(1..=spec.classes);
            gts.push(GroundTruth {
                image_id: image,
                class_id,
                bbox,
                azimuth: theta,
                difficult,
            });
            let feat_theta = world.feature_azimuth(theta, &mut rng);
            proposals.push(Proposal {
                image_id: image,
                bbox: jittered_box(&bbox, spec.box_jitter, &mut rng),
                features: world.positive_features(class_id, feat_theta, &mut rng),
                truth: ProposalTruth::Object {
                    class_id,
                    azimuth: theta,
                },
            });
        }
        for _ in 0..spec.distractors_per_image {
            let bbox = distractor_box(&gts, image, &mut rng);
            proposals.push(Proposal {
                image_id: image,
                bbox,
                features: world.background_features(&mut rng),
                truth: ProposalTruth::Background,
            });
        }
    }
    ProposalScenario {
        proposals,
        ground_truths: gts,
    }
}

// ---------------------------------------------------------------------------
// File formats

pub fn save_samples(path: &Path, samples: &[Sample]) -> Result<(), DataError> {
    let mut out = String::from("# poselab samples: class_id azimuth f_1 ... f_D\n");
    for s in samples {
        let az = s.azimuth.map_or(f64::NAN, |a| a.radians());
        out.push_str(&format!("{} {}", s.class_id, fmt_f64(az)));
        for f in &s.features {
            out.push(' ');
            out.push_str(&fmt_f64(*f));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some(fields) = data_fields(line) else { continue };
        if fields.len() < 3 {
            return Err(parse_err(line_no, "expected class_id azimuth f_1 ..."));
        }
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid class_id `{}`", fields[0])))?;
        let azimuth_raw = parse_f64(fields[1])
            .ok_or_else(|| parse_err(line_no, format!("invalid azimuth `{}`", fields[1])))?;
        let features: Vec<f64> = fields[2..]
            .iter()
            .map(|f| parse_f64(f).ok_or_else(|| parse_err(line_no, format!("invalid feature `{f}`"))))
            .collect::<Result<_, _>>()?;
        match dim {
            Some(d) if d != features.len() => {
                return Err(parse_err(
                    line_no,
                    format!("feature dimension {} != {}", features.len(), d),
                ))
            }
            None => dim = Some(features.len()),
            _ => {}
        }
        let azimuth = if class_id == 0 {
            None
        } else if azimuth_raw.is_nan() {
            return Err(parse_err(line_no, "positive sample with nan azimuth"));
        } else {
            Some(Azimuth::new(azimuth_raw))
        };
        samples.push(Sample {
            features,
            class_id,
            azimuth,
        });
    }
    Ok(samples)
}

pub fn save_detections(path: &Path, dets: &[Detection]) -> Result<(), DataError> {
    let mut out =
        String::from("# poselab detections: image_id class_id score x1 y1 x2 y2 azimuth\n");
    for d in dets {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            d.image_id,
            d.class_id,
            fmt_f64(d.score),
            fmt_f64(d.bbox.x1),
            fmt_f64(d.bbox.y1),
            fmt_f64(d.bbox.x2),
            fmt_f64(d.bbox.y2),
            fmt_f64(d.azimuth.radians()),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut dets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some(fields) = data_fields(line) else { continue };
        if fields.len() != 8 {
            return Err(parse_err(line_no, format!("expected 8 fields, got {}", fields.len())));
        }
        let fval = |idx: usize| -> Result<f64, DataError> {
            parse_f64(fields[idx])
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("invalid number `{}`", fields[idx])))
        };
        let image_id: u32 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid image_id `{}`", fields[0])))?;
        let class_id: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid class_id `{}`", fields[1])))?;
        let bbox = BoundingBox::new(fval(3)?, fval(4)?, fval(5)?, fval(6)?)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        dets.push(Detection {
            image_id,
            class_id,
            score: fval(2)?,
            bbox,
            azimuth: Azimuth::new(fval(7)?),
        });
    }
    Ok(dets)
}

pub fn save_ground_truths(path: &Path, gts: &[GroundTruth]) -> Result<(), DataError> {
    let mut out = String::from(
        "# poselab ground truth: image_id class_id x1 y1 x2 y2 azimuth difficult\n",
    );
    for g in gts {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            g.image_id,
            g.class_id,
            fmt_f64(g.bbox.x1),
            fmt_f64(g.bbox.y1),
            fmt_f64(g.bbox.x2),
            fmt_f64(g.bbox.y2),
            fmt_f64(g.azimuth.radians()),
            u8::from(g.difficult),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_ground_truths(path: &Path) -> Result<Vec<GroundTruth>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut gts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some(fields) = data_fields(line) else { continue };
        if fields.len() != 8 {
            return Err(parse_err(line_no, format!("expected 8 fields, got {}", fields.len())));
        }
        let fval = |idx: usize| -> Result<f64, DataError> {
            parse_f64(fields[idx])
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("invalid number `{}`", fields[idx])))
        };
        let image_id: u32 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid image_id `{}`", fields[0])))?;
        let class_id: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid class_id `{}`", fields[1])))?;
        let bbox = BoundingBox::new(fval(2)?, fval(3)?, fval(4)?, fval(5)?)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        let difficult = match fields[7] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line_no, format!("invalid difficult flag `{other}`"))),
        };
        gts.push(GroundTruth {
            image_id,
            class_id,
            bbox,
            azimuth: Azimuth::new(fval(6)?),
            difficult,
        });
    }
    Ok(gts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{average_precision, average_viewpoint_precision, match_detections, oracle};

    fn tiny_world() -> World {
        World::new(WorldSpec {
            classes: 2,
            feature_dim: 8,
            noise_sigma: 0.0,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn noiseless_positives_lie_on_the_class_circle() {
        let world = tiny_world();
        let samples = world.generate_samples(200, 1.0, 7).unwrap();
        let r = world.spec().signal_radius;
        for s in &samples {
            assert!(s.is_positive());
            let f = world.frame(s.class_id);
            let centered: Vec<f64> = s.features.iter().zip(&f.mean).map(|(x, m)| x - m).collect();
            assert!((norm(&centered) - r).abs() < 1e-9);
            // Angle recoverability: de-embed reproduces the label exactly.
            let got = world.signal_plane_angle(s.class_id, &s.features);
            let want = s.azimuth.unwrap();
            assert!(crate::geometry::angular_distance(got, want) < 1e-9);
            // Residual outside the signal plane is zero.
            let rebuilt = world.embed(s.class_id, got);
            for (a, b) in rebuilt.iter().zip(&s.features) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_fraction_generates_only_background() {
        let world = tiny_world();
        let samples = world.generate_samples(500, 0.0, 3).unwrap();
        assert!(samples.iter().all(|s| s.class_id == 0));
    }

    #[test]
    fn positive_count_within_binomial_interval() {
        let world = tiny_world();
        let n = 10_000;
        let p = 0.25;
        let samples = world.generate_samples(n, p, 11).unwrap();
        let count = samples.iter().filter(|s| s.is_positive()).count() as f64;
        // 99% normal-approximation interval around n·p.
        let half = 2.576 * (n as f64 * p * (1.0 - p)).sqrt();
        assert!((count - n as f64 * p).abs() <= half, "count {count}");
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let world = tiny_world();
        let a = world.generate_samples(300, 0.4, 5).unwrap();
        let b = world.generate_samples(300, 0.4, 5).unwrap();
        assert_eq!(a, b);
        let c = world.generate_samples(300, 0.4, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn aliased_features_sit_at_the_antipodal_angle() {
        let world = World::new(WorldSpec {
            classes: 1,
            feature_dim: 8,
            noise_sigma: 0.0,
            view_aliasing: 1.0,
            ..WorldSpec::default()
        })
        .unwrap();
        let samples = world.generate_samples(50, 1.0, 2).unwrap();
        for s in &samples {
            let feat = world.signal_plane_angle(1, &s.features);
            let d = crate::geometry::angular_distance(feat, s.azimuth.unwrap());
            assert!((d - PI).abs() < 1e-9);
        }
    }

    #[test]
    fn flip_augmentation_mirrors_azimuth_and_signal() {
        let world = tiny_world();
        let base = world.generate_samples(60, 1.0, 9).unwrap();
        let augmented = world.flip_augmented(&base);
        assert_eq!(augmented.len(), 2 * base.len());
        for (orig, flip) in base.iter().zip(&augmented[base.len()..]) {
            let want = Azimuth::new(TAU - orig.azimuth.unwrap().radians());
            assert!(crate::geometry::angular_distance(flip.azimuth.unwrap(), want) < 1e-12);
            let angle = world.signal_plane_angle(flip.class_id, &flip.features);
            assert!(crate::geometry::angular_distance(angle, want) < 1e-9);
        }
    }

    #[test]
    fn batch_composition_is_exact() {
        let world = tiny_world();
        let pool = world.generate_samples(4000, 0.5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for plan in [BatchPlan::classification(), BatchPlan::regression()] {
            let batch = sample_batch(&pool, &plan, &mut rng).unwrap();
            assert_eq!(batch.len(), plan.batch_size);
            assert_eq!(batch.iter().filter(|s| s.is_positive()).count(), plan.positives);
        }
    }

    #[test]
    fn batch_has_no_duplicates_within() {
        let world = tiny_world();
        let pool = world.generate_samples(500, 0.5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&pool, &BatchPlan::classification(), &mut rng).unwrap();
        let mut ptrs: Vec<*const Sample> = batch.iter().map(|s| *s as *const Sample).collect();
        ptrs.sort_unstable();
        ptrs.dedup();
        assert_eq!(ptrs.len(), batch.len());
    }

    #[test]
    fn batch_class_frequencies_are_uniform() {
        let world = World::new(WorldSpec {
            classes: 4,
            feature_dim: 8,
            ..WorldSpec::default()
        })
        .unwrap();
        // Deliberately imbalanced pool: the sampler must still draw classes
        // uniformly.
        let mut pool = world.generate_samples(6000, 0.5, 8).unwrap();
        pool.retain(|s| s.class_id != 1 || s.features[0] % 3.0 < 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 4];
        let batches = 1000;
        for _ in 0..batches {
            for s in sample_batch(&pool, &BatchPlan::classification(), &mut rng).unwrap() {
                if s.is_positive() {
                    counts[s.class_id - 1] += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        let expected = total as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // χ² critical value, 3 degrees of freedom, p = 0.01.
        assert!(chi2 < 11.345, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn insufficient_pool_names_the_deficient_side() {
        let world = tiny_world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let no_positives = world.generate_samples(200, 0.0, 1).unwrap();
        match sample_batch(&no_positives, &BatchPlan::classification(), &mut rng) {
            Err(DataError::InsufficientPool { side: "positive", .. }) => {}
            other => panic!("expected positive-pool error, got {other:?}"),
        }
        let no_negatives = world.generate_samples(200, 1.0, 1).unwrap();
        match sample_batch(&no_negatives, &BatchPlan::classification(), &mut rng) {
            Err(DataError::InsufficientPool { side: "negative", .. }) => {}
            other => panic!("expected negative-pool error, got {other:?}"),
        }
    }

    #[test]
    fn clean_scenario_scores_perfectly() {
        let spec = ScenarioSpec {
            box_jitter: 0.0,
            ..ScenarioSpec::default()
        };
        let (dets, gts) = generate_detection_scenario(&spec, 8, 3);
        for class in 1..=spec.classes {
            let cd: Vec<_> = dets.iter().filter(|d| d.class_id == class).cloned().collect();
            let cg: Vec<_> = gts.iter().filter(|g| g.class_id == class).cloned().collect();
            if cg.is_empty() {
                continue;
            }
            let m = match_detections(&cd, &cg, 0.5).unwrap();
            assert_eq!(average_precision(&m.labels, m.n_positives).ap, 1.0);
            for views in [4usize, 8, 16, 24] {
                assert_eq!(
                    average_viewpoint_precision(&cd, &cg, 0.5, views).unwrap().ap,
                    1.0
                );
            }
        }
    }

    #[test]
    fn quarter_turn_error_zeroes_avp_at_four_views() {
        let spec = ScenarioSpec {
            classes: 1,
            box_jitter: 0.0,
            azimuth_error: TAU / 4.0,
            distractors_per_image: 0,
            ..ScenarioSpec::default()
        };
        let (dets, gts) = generate_detection_scenario(&spec, 10, 5);
        let m = match_detections(&dets, &gts, 0.5).unwrap();
        assert_eq!(average_precision(&m.labels, m.n_positives).ap, 1.0);
        assert_eq!(average_viewpoint_precision(&dets, &gts, 0.5, 4).unwrap().ap, 0.0);
    }

    #[test]
    fn mixed_scenario_matches_enumeration_oracle() {
        let spec = ScenarioSpec {
            azimuth_noise: 0.7,
            difficult_fraction: 0.2,
            ..ScenarioSpec::default()
        };
        let (dets, gts) = generate_detection_scenario(&spec, 12, 13);
        for class in 1..=spec.classes {
            let cd: Vec<_> = dets.iter().filter(|d| d.class_id == class).cloned().collect();
            let cg: Vec<_> = gts.iter().filter(|g| g.class_id == class).cloned().collect();
            let m = match_detections(&cd, &cg, 0.5).unwrap();
            let fast = average_precision(&m.labels, m.n_positives).ap;
            let slow = oracle::ap_threshold_enumeration(&m.labels, m.n_positives);
            assert!((fast - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn proposal_scenario_aligns_objects_with_ground_truth() {
        let world = World::new(WorldSpec::default()).unwrap();
        let scenario =
            generate_proposal_scenario(&world, &ScenarioSpec::default(), 6, 17);
        let objects: Vec<_> = scenario
            .proposals
            .iter()
            .filter_map(|p| match p.truth {
                ProposalTruth::Object { class_id, azimuth } => Some((p, class_id, azimuth)),
                ProposalTruth::Background => None,
            })
            .collect();
        assert_eq!(objects.len(), scenario.ground_truths.len());
        for ((p, class_id, azimuth), gt) in objects.iter().zip(&scenario.ground_truths) {
            assert_eq!(p.image_id, gt.image_id);
            assert_eq!(*class_id, gt.class_id);
            assert_eq!(azimuth.radians(), gt.azimuth.radians());
            assert!(crate::metrics::iou(&p.bbox, &gt.bbox) >= 0.55);
        }
    }

    #[test]
    fn sample_files_round_trip() {
        let world = tiny_world();
        let samples = world.generate_samples(100, 0.4, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.samples");
        save_samples(&path, &samples).unwrap();
        let loaded = load_samples(&path).unwrap();
        assert_eq!(samples, loaded);
        save_samples(&path, &loaded).unwrap();
        let twice = load_samples(&path).unwrap();
        assert_eq!(loaded, twice);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.samples");
        save_samples(&path, &[]).unwrap();
        assert_eq!(load_samples(&path).unwrap(), Vec::<Sample>::new());
    }

    #[test]
    fn corrupted_record_reports_its_line() {
        let world = tiny_world();
        let samples = world.generate_samples(5, 0.5, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.samples");
        save_samples(&path, &samples).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[3] = broken[3].replacen(char::is_numeric, "x", 1);
        text = broken.join("\n");
        std::fs::write(&path, text).unwrap();
        match load_samples(&path) {
            Err(DataError::Parse { line: 4, .. }) => {}
            other => panic!("expected parse error at line 4, got {other:?}"),
        }
    }

    #[test]
    fn detection_and_gt_files_round_trip() {
        let (dets, gts) = generate_detection_scenario(&ScenarioSpec::default(), 4, 2);
        let dir = tempfile::tempdir().unwrap();
        let dpath = dir.path().join("eval.detections");
        let gpath = dir.path().join("eval.groundtruth");
        save_detections(&dpath, &dets).unwrap();
        save_ground_truths(&gpath, &gts).unwrap();
        assert_eq!(load_detections(&dpath).unwrap(), dets);
        assert_eq!(load_ground_truths(&gpath).unwrap(), gts);
    }
}
