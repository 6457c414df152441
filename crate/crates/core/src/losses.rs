//! The representation heads as per-sample loss functions with analytic
//! gradients w.r.t. the network output: discretized pose classification,
//! single-class continuous circle regression with a repulsive negative term,
//! and joint classification + pose regression in three target layouts.
//!
//! Batch aggregation (normalizing the positive, negative and classification
//! terms by their respective sample counts) belongs to the training harness.

use thiserror::Error;

use crate::geometry::{distance_to_circle, project_to_circle, Azimuth};

/// Probabilities are floored at this value inside logs so adversarial inputs
/// produce large finite losses instead of infinities.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("output has dimension {got}, target expects {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("class index {class} out of range 1..={classes}")]
    ClassRange { class: usize, classes: usize },
    #[error("bin index {bin} out of range 1..={bins}")]
    BinRange { bin: usize, bins: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyper(&'static str),
}

/// Distance penalty applied to pose regression differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    SquaredL2,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::SquaredL2 => "sql2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l1" => Some(Norm::L1),
            "l2" => Some(Norm::L2),
            "sql2" => Some(Norm::SquaredL2),
            _ => None,
        }
    }

    /// Value and gradient of the norm of `diff`. L1 and L2 use subgradient
    /// zero at their kinks (per-coordinate zero for L1, the zero vector for
    /// L2), which is deterministic and valid.
    pub fn value_and_grad(self, diff: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Norm::L1 => {
                let v = diff.iter().map(|d| d.abs()).sum();
                let g = diff
                    .iter()
                    .map(|&d| if d == 0.0 { 0.0 } else { d.signum() })
                    .collect();
                (v, g)
            }
            Norm::L2 => {
                let v = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
                if v == 0.0 {
                    (v, vec![0.0; diff.len()])
                } else {
                    (v, diff.iter().map(|&d| d / v).collect())
                }
            }
            Norm::SquaredL2 => {
                let v = diff.iter().map(|d| d * d).sum();
                (v, diff.iter().map(|&d| 2.0 * d).collect())
            }
        }
    }
}

/// Hyperparameters shared by the loss heads: `k` and `delta` weigh and scale
/// the repulsive negative term of the circle head, `lambda` balances the
/// classification term of the joint head, `norm` picks the pose penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossHyper {
    pub k: f64,
    pub delta: f64,
    pub lambda: f64,
    pub norm: Norm,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            k: 640.0,
            delta: 1.0,
            lambda: 1.0,
            norm: Norm::L1,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.k > 0.0) {
            return Err(LossError::Hyper("k must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(LossError::Hyper("delta must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(LossError::Hyper("lambda must be nonnegative"));
        }
        Ok(())
    }
}

/// One-hot target over background + class×orientation bins; dimension
/// `N·P + 1` with coordinate 0 for background and coordinate
/// `1 + (i−1)·P + (j−1)` for class `i`, bin `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscreteTarget {
    classes: usize,
    bins: usize,
    hot: usize,
}

impl DiscreteTarget {
    pub fn background(classes: usize, bins: usize) -> Self {
        DiscreteTarget {
            classes,
            bins,
            hot: 0,
        }
    }

    pub fn object(class: usize, bin: usize, classes: usize, bins: usize) -> Result<Self, LossError> {
        if class < 1 || class > classes {
            return Err(LossError::ClassRange { class, classes });
        }
        if bin < 1 || bin > bins {
            return Err(LossError::BinRange { bin, bins });
        }
        Ok(DiscreteTarget {
            classes,
            bins,
            hot: 1 + (class - 1) * bins + (bin - 1),
        })
    }

    pub fn dim(&self) -> usize {
        self.classes * self.bins + 1
    }

    pub fn hot_index(&self) -> usize {
        self.hot
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.dim()];
        t[self.hot] = 1.0;
        t
    }
}

/// Numerically stabilized softmax: coordinates in (0, 1), summing to 1, and
/// invariant to adding a constant to every logit.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Negative log-likelihood of a one-hot target against a probability vector.
///
/// `y` must already be post-softmax; the returned gradient is taken jointly
/// through the softmax, i.e. it is `y − t` with respect to the pre-softmax
/// logits. Probabilities are clamped at [`LOG_CLAMP`] inside the log.
pub fn discrete_nll(y: &[f64], target: &DiscreteTarget) -> Result<(f64, Vec<f64>), LossError> {
    if y.len() != target.dim() {
        return Err(LossError::Dimension {
            got: y.len(),
            expected: target.dim(),
        });
    }
    let loss = -y[target.hot].max(LOG_CLAMP).ln();
    let mut grad = y.to_vec();
    grad[target.hot] -= 1.0;
    Ok((loss, grad))
}

/// Target for the continuous circle head: a point of χ for positives,
/// no constraint (repulsion only) for negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleTarget {
    pub target: [f64; 3],
    pub is_positive: bool,
}

impl CircleTarget {
    pub fn positive(theta: Azimuth) -> Self {
        CircleTarget {
            target: theta.embed().coords(),
            is_positive: true,
        }
    }

    pub fn negative() -> Self {
        CircleTarget {
            target: [0.0; 3],
            is_positive: false,
        }
    }
}

/// Per-sample circle-head loss.
///
/// Positives: `‖y − t‖₂²` with gradient `2(y − t)`, minimized exactly at the
/// target. Negatives: `exp(−‖y − π(y)‖ / δ)`, strictly decreasing in the
/// distance to χ, with gradient `−(1/δ)·L⁻·(y − π(y))/‖y − π(y)‖`; on the
/// circle itself the distance is not differentiable and the gradient is
/// defined as zero.
pub fn circle_loss(
    y: &[f64],
    target: &CircleTarget,
    hyper: &LossHyper,
) -> Result<(f64, [f64; 3]), LossError> {
    hyper.validate()?;
    if y.len() != 3 {
        return Err(LossError::Dimension {
            got: y.len(),
            expected: 3,
        });
    }
    let y3 = [y[0], y[1], y[2]];
    if target.is_positive {
        let d = [
            y3[0] - target.target[0],
            y3[1] - target.target[1],
            y3[2] - target.target[2],
        ];
        let loss = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        Ok((loss, [2.0 * d[0], 2.0 * d[1], 2.0 * d[2]]))
    } else {
        let p = project_to_circle(y3).coords();
        let r = [y3[0] - p[0], y3[1] - p[1], y3[2] - p[2]];
        let dist = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let loss = (-dist / hyper.delta).exp();
        if dist == 0.0 {
            return Ok((loss, [0.0; 3]));
        }
        let scale = -loss / (hyper.delta * dist);
        Ok((loss, [scale * r[0], scale * r[1], scale * r[2]]))
    }
}

/// Pose-target layout of the joint head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointVariant {
    /// One shared 2-D pose output for all classes.
    A,
    /// `2N`-dimensional pose output, penalized on all coordinates.
    B1,
    /// `2N`-dimensional pose output, penalized only on the pair of the
    /// sample's true class.
    B2,
}

impl JointVariant {
    pub fn pose_dim(self, classes: usize) -> usize {
        match self {
            JointVariant::A => 2,
            JointVariant::B1 | JointVariant::B2 => 2 * classes,
        }
    }
}

/// Target for the joint head: a one-hot class vector over background + `N`
/// classes plus a variant-dependent pose vector. Negative (background)
/// samples leave the pose output unconstrained in every variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTarget {
    pub classes: usize,
    pub variant: JointVariant,
    /// 0 for background.
    pub class_index: usize,
    pub azimuth: Option<Azimuth>,
}

impl JointTarget {
    pub fn positive(
        class: usize,
        theta: Azimuth,
        variant: JointVariant,
        classes: usize,
    ) -> Result<Self, LossError> {
        if class < 1 || class > classes {
            return Err(LossError::ClassRange { class, classes });
        }
        Ok(JointTarget {
            classes,
            variant,
            class_index: class,
            azimuth: Some(theta),
        })
    }

    pub fn background(variant: JointVariant, classes: usize) -> Self {
        JointTarget {
            classes,
            variant,
            class_index: 0,
            azimuth: None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.class_index > 0
    }

    pub fn class_dim(&self) -> usize {
        self.classes + 1
    }

    pub fn pose_dim(&self) -> usize {
        self.variant.pose_dim(self.classes)
    }

    pub fn class_target(&self) -> DiscreteTarget {
        // Class NLL over background + N classes is a one-bin discrete target.
        DiscreteTarget {
            classes: self.classes,
            bins: 1,
            hot: self.class_index,
        }
    }

    /// Materialized pose target; zero for background samples.
    pub fn pose_target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.pose_dim()];
        if let Some(theta) = self.azimuth {
            let (c, s) = (theta.radians().cos(), theta.radians().sin());
            match self.variant {
                JointVariant::A => {
                    t[0] = c;
                    t[1] = s;
                }
                JointVariant::B1 | JointVariant::B2 => {
                    t[2 * (self.class_index - 1)] = c;
                    t[2 * (self.class_index - 1) + 1] = s;
                }
            }
        }
        t
    }
}

/// Pose term of the joint loss: the configured norm of the relevant
/// difference for positives, zero (value and gradient) for negatives.
pub fn joint_pose_term(
    y_pose: &[f64],
    target: &JointTarget,
    hyper: &LossHyper,
) -> Result<(f64, Vec<f64>), LossError> {
    if y_pose.len() != target.pose_dim() {
        return Err(LossError::Dimension {
            got: y_pose.len(),
            expected: target.pose_dim(),
        });
    }
    if !target.is_positive() {
        return Ok((0.0, vec![0.0; y_pose.len()]));
    }
    let t = target.pose_target();
    match target.variant {
        JointVariant::A | JointVariant::B1 => {
            let diff: Vec<f64> = y_pose.iter().zip(&t).map(|(y, t)| y - t).collect();
            Ok(hyper.norm.value_and_grad(&diff))
        }
        JointVariant::B2 => {
            let lo = 2 * (target.class_index - 1);
            let diff = [y_pose[lo] - t[lo], y_pose[lo + 1] - t[lo + 1]];
            let (v, g2) = hyper.norm.value_and_grad(&diff);
            let mut g = vec![0.0; y_pose.len()];
            g[lo] = g2[0];
            g[lo + 1] = g2[1];
            Ok((v, g))
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointLoss {
    pub loss: f64,
    pub class_term: f64,
    pub pose_term: f64,
    pub grad_class: Vec<f64>,
    pub grad_pose: Vec<f64>,
}

/// Joint head loss `λ·E_class + E_pose` for one sample.
///
/// `y_class` holds pre-softmax logits of dimension `N + 1`; `y_pose` has the
/// variant's pose dimension. The returned class gradient is w.r.t. the
/// logits and already carries the factor `λ`.
pub fn joint_loss(
    y_class: &[f64],
    y_pose: &[f64],
    target: &JointTarget,
    hyper: &LossHyper,
) -> Result<JointLoss, LossError> {
    hyper.validate()?;
    if y_class.len() != target.class_dim() {
        return Err(LossError::Dimension {
            got: y_class.len(),
            expected: target.class_dim(),
        });
    }
    let probs = softmax(y_class);
    let (class_term, g_class) = discrete_nll(&probs, &target.class_target())?;
    let (pose_term, grad_pose) = joint_pose_term(y_pose, target, hyper)?;
    let grad_class = g_class.into_iter().map(|g| hyper.lambda * g).collect();
    Ok(JointLoss {
        loss: hyper.lambda * class_term + pose_term,
        class_term,
        pose_term,
        grad_class,
        grad_pose,
    })
}
