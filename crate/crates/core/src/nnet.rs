//! Minimal fully-connected network in double precision with analytic
//! backpropagation, SGD-with-momentum updates, and a finite-difference
//! gradient checker.
//!
//! Checkpoint format (`poselab-net`, version 1, text, `#` comments allowed):
//!
//! ```text
//! poselab-net 1
//! layers <L>
//! layer <in> <out> <rectifier|identity>   } repeated L times:
//! <in floats>                              }   out weight rows (row-major),
//! ...                                      }   then one line of out biases
//! <out floats>
//! ```
//!
//! Floats use 17 significant digits, so save/load round-trips bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::textio::{data_fields, fmt_f64, parse_f64};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("input has length {got}, network expects {expected}")]
    InputShape { got: usize, expected: usize },
    #[error("upstream gradient has length {got}, output has length {expected}")]
    UpstreamShape { got: usize, expected: usize },
    #[error("gradient shape does not match network parameters")]
    GradientShape,
    #[error("stale activations: weights changed since the forward pass")]
    StaleActivation,
    #[error("non-finite value at parameter {parameter_index} during optimizer step")]
    DivergedTraining { parameter_index: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error at line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Rectifier,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    // Subgradient 0 at the rectifier kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Rectifier => "rectifier",
            Activation::Identity => "identity",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "rectifier" => Some(Activation::Rectifier),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer: `out = act(W x + b)` with `W` stored row-major.
#[derive(Debug, Clone)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for row in 0..self.out_dim {
            let w = &self.weight[row * self.in_dim..(row + 1) * self.in_dim];
            out.push(dot(w, x) + self.bias[row]);
        }
    }
}

// Four-lane dot product; the fixed summation order keeps runs bit-reproducible
// while letting the compiler vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Feed-forward network. Weights are mutated only through the optimizer (or
/// deserialization); a version counter invalidates stale forward traces.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    version: u64,
}

impl Network {
    /// Builds a network with the given hidden widths, rectifier activations
    /// on hidden layers and an identity output layer. Weights are initialized
    /// uniformly in `[−s, s]` with `s = sqrt(6 / (fan_in + fan_out))`, biases
    /// at zero.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Self {
        assert!(input_dim > 0 && output_dim > 0, "dimensions must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-s..=s))
                    .collect();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weight,
                    bias: vec![0.0; fan_out],
                    activation: if i + 1 == dims.len() - 1 {
                        Activation::Identity
                    } else {
                        Activation::Rectifier
                    },
                }
            })
            .collect();
        Network { layers, version: 0 }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_dim, pair[1].in_dim, "layer dimensions must chain");
        }
        Network { layers, version: 0 }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnetError> {
        if x.len() != self.input_dim() {
            return Err(NnetError::InputShape {
                got: x.len(),
                expected: self.input_dim(),
            });
        }
        let mut cur = x.to_vec();
        let mut pre = Vec::new();
        for layer in &self.layers {
            layer.affine(&cur, &mut pre);
            cur.clear();
            cur.extend(pre.iter().map(|&z| layer.activation.apply(z)));
        }
        Ok(cur)
    }

    /// Forward pass that records per-layer activations for [`Network::backward`].
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, NnetError> {
        if x.len() != self.input_dim() {
            return Err(NnetError::InputShape {
                got: x.len(),
                expected: self.input_dim(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.affine(&cur, &mut z);
            cur = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(cur.clone());
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            version: self.version,
            pre,
            post,
        })
    }

    /// Backpropagates `upstream = ∂L/∂output` through the recorded trace,
    /// returning parameter gradients and the gradient w.r.t. the input.
    ///
    /// Fails with [`NnetError::StaleActivation`] when the weights changed
    /// after the trace was recorded.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Gradients, NnetError> {
        if trace.version != self.version {
            return Err(NnetError::StaleActivation);
        }
        if upstream.len() != self.output_dim() {
            return Err(NnetError::UpstreamShape {
                got: upstream.len(),
                expected: self.output_dim(),
            });
        }
        let mut grads: Vec<LayerGradient> = self
            .layers
            .iter()
            .map(|l| LayerGradient {
                weight: vec![0.0; l.weight.len()],
                bias: vec![0.0; l.out_dim],
            })
            .collect();
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[l];
            for i in 0..layer.out_dim {
                delta[i] *= layer.activation.derivative(pre[i]);
            }
            let below: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let g = &mut grads[l];
            for i in 0..layer.out_dim {
                let di = delta[i];
                g.bias[i] = di;
                let row = &mut g.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (w, &a) in row.iter_mut().zip(below) {
                    *w = di * a;
                }
            }
            let mut next = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let di = delta[i];
                let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += di * w;
                }
            }
            delta = next;
        }
        Ok(Gradients {
            layers: grads,
            input: delta,
        })
    }

    /// Flat parameter access in layer order, weights row-major then bias.
    pub fn param(&self, flat: usize) -> f64 {
        let (l, off, is_bias) = self.locate(flat);
        if is_bias {
            self.layers[l].bias[off]
        } else {
            self.layers[l].weight[off]
        }
    }

    pub fn param_mut(&mut self, flat: usize) -> &mut f64 {
        self.version += 1;
        let (l, off, is_bias) = self.locate(flat);
        if is_bias {
            &mut self.layers[l].bias[off]
        } else {
            &mut self.layers[l].weight[off]
        }
    }

    fn locate(&self, mut flat: usize) -> (usize, usize, bool) {
        for (l, layer) in self.layers.iter().enumerate() {
            if flat < layer.weight.len() {
                return (l, flat, false);
            }
            flat -= layer.weight.len();
            if flat < layer.bias.len() {
                return (l, flat, true);
            }
            flat -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn save(&self, path: &Path) -> Result<(), NnetError> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnetError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(&text)
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "poselab-net 1");
        let _ = writeln!(out, "layers {}", self.layers.len());
        for layer in &self.layers {
            let _ = writeln!(
                out,
                "layer {} {} {}",
                layer.in_dim,
                layer.out_dim,
                layer.activation.tag()
            );
            for row in 0..layer.out_dim {
                let vals: Vec<String> = layer.weight
                    [row * layer.in_dim..(row + 1) * layer.in_dim]
                    .iter()
                    .map(|&w| fmt_f64(w))
                    .collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
            let vals: Vec<String> = layer.bias.iter().map(|&b| fmt_f64(b)).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NnetError> {
        let err = |line: usize, message: &str| NnetError::Checkpoint {
            line,
            message: message.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter_map(|(i, l)| data_fields(l).map(|f| (i + 1, f)));
        let (ln, header) = lines.next().ok_or_else(|| err(0, "empty checkpoint"))?;
        if header != ["poselab-net", "1"] {
            return Err(err(ln, "expected header `poselab-net 1`"));
        }
        let (ln, count) = lines.next().ok_or_else(|| err(ln, "missing layer count"))?;
        if count.len() != 2 || count[0] != "layers" {
            return Err(err(ln, "expected `layers <n>`"));
        }
        let n_layers: usize = count[1]
            .parse()
            .map_err(|_| err(ln, "invalid layer count"))?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut floats = |fields: &[&str], want: usize, ln: usize| -> Result<Vec<f64>, NnetError> {
            if fields.len() != want {
                return Err(err(ln, &format!("expected {want} values, got {}", fields.len())));
            }
            fields
                .iter()
                .map(|f| parse_f64(f).ok_or_else(|| err(ln, &format!("invalid float `{f}`"))))
                .collect()
        };
        for _ in 0..n_layers {
            let (ln, hdr) = lines.next().ok_or_else(|| err(0, "missing layer header"))?;
            if hdr.len() != 4 || hdr[0] != "layer" {
                return Err(err(ln, "expected `layer <in> <out> <activation>`"));
            }
            let in_dim: usize = hdr[1].parse().map_err(|_| err(ln, "invalid in dim"))?;
            let out_dim: usize = hdr[2].parse().map_err(|_| err(ln, "invalid out dim"))?;
            let activation =
                Activation::from_tag(hdr[3]).ok_or_else(|| err(ln, "unknown activation"))?;
            let mut weight = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..out_dim {
                let (ln, row) = lines.next().ok_or_else(|| err(0, "missing weight row"))?;
                weight.extend(floats(&row, in_dim, ln)?);
            }
            let (ln, brow) = lines.next().ok_or_else(|| err(0, "missing bias row"))?;
            let bias = floats(&brow, out_dim, ln)?;
            layers.push(Layer {
                in_dim,
                out_dim,
                weight,
                bias,
                activation,
            });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content after last layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(err(0, "layer dimensions do not chain"));
            }
        }
        Ok(Network { layers, version: 0 })
    }
}

/// Activations recorded by [`Network::forward_trace`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    version: u64,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct LayerGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients plus the input gradient, in network layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.out_dim],
                })
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    /// Adds `other` into `self` coordinate-wise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += y;
        }
    }

    fn param(&self, flat: usize) -> Option<f64> {
        let mut idx = flat;
        for g in &self.layers {
            if idx < g.weight.len() {
                return Some(g.weight[idx]);
            }
            idx -= g.weight.len();
            if idx < g.bias.len() {
                return Some(g.bias[idx]);
            }
            idx -= g.bias.len();
        }
        None
    }
}

/// SGD-with-momentum state: `v ← μ·v − lr·(g + wd·w)`, `w ← w + v`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<LayerGradient>,
}

impl OptimizerState {
    pub fn new(net: &Network, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!((0.0..1.0).contains(&momentum), "momentum must be in [0,1)");
        assert!(weight_decay >= 0.0, "weight decay must be nonnegative");
        OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(net).layers,
        }
    }
}

/// One SGD step over all parameters. Rejects non-finite gradients and
/// non-finite post-update weights, reporting the flat parameter index.
pub fn sgd_step(
    net: &mut Network,
    state: &mut OptimizerState,
    grads: &Gradients,
) -> Result<(), NnetError> {
    if grads.layers.len() != net.layers.len()
        || grads
            .layers
            .iter()
            .zip(&net.layers)
            .any(|(g, l)| g.weight.len() != l.weight.len() || g.bias.len() != l.bias.len())
    {
        return Err(NnetError::GradientShape);
    }
    let mut flat = 0usize;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let v = &mut state.velocity[l];
        let g = &grads.layers[l];
        let mut update = |w: &mut f64, v: &mut f64, g: f64, flat: usize| {
            if !g.is_finite() {
                return Err(NnetError::DivergedTraining {
                    parameter_index: flat,
                });
            }
            *v = state.momentum * *v
                - state.learning_rate * (g + state.weight_decay * *w);
            *w += *v;
            if !w.is_finite() {
                return Err(NnetError::DivergedTraining {
                    parameter_index: flat,
                });
            }
            Ok(())
        };
        for (i, w) in layer.weight.iter_mut().enumerate() {
            update(w, &mut v.weight[i], g.weight[i], flat)?;
            flat += 1;
        }
        for (i, b) in layer.bias.iter_mut().enumerate() {
            update(b, &mut v.bias[i], g.bias[i], flat)?;
            flat += 1;
        }
    }
    net.version += 1;
    Ok(())
}

/// Worst-coordinate comparison of analytic and numeric parameter gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-6;
/// Denominator floor in the relative error `|a−n| / max(|a|, |n|, ε)`; keeps
/// finite-difference noise on near-zero gradients from dominating the report.
pub const GRAD_CHECK_EPS: f64 = 1e-4;

/// Compares analytic parameter gradients against central finite differences
/// for a scalar loss on the network output. `loss` maps the output vector to
/// `(value, ∂loss/∂output)`. All parameters are checked when there are at
/// most 512; otherwise a seeded random subset of 256 is used.
pub fn grad_check<L>(net: &Network, loss: L, x: &[f64]) -> Result<GradCheckReport, NnetError>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    grad_check_seeded(net, loss, x, 0)
}

pub fn grad_check_seeded<L>(
    net: &Network,
    loss: L,
    x: &[f64],
    subset_seed: u64,
) -> Result<GradCheckReport, NnetError>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let trace = net.forward_trace(x)?;
    let (_, upstream) = loss(trace.output());
    let analytic = net.backward(&trace, &upstream)?;

    let n = net.num_params();
    let indices: Vec<usize> = if n <= 512 {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
        (0..256).map(|_| rng.gen_range(0..n)).collect()
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = net.clone();
    for &idx in &indices {
        let orig = probe.param(idx);
        *probe.param_mut(idx) = orig + GRAD_CHECK_STEP;
        let plus = loss(&probe.forward(x)?).0;
        *probe.param_mut(idx) = orig - GRAD_CHECK_STEP;
        let minus = loss(&probe.forward(x)?).0;
        *probe.param_mut(idx) = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic.param(idx).expect("index in range");
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_EPS);
        if rel > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: rel,
                worst_parameter_index: idx,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}
