//! Feed-forward label model: linear or ReLU networks with a sigmoid/softmax head.
//!
//! Forward and backward passes are written out by hand. Dropout is inverted
//! (kept activations are scaled by `1/(1-p)` at train time) so evaluation needs
//! no rescaling.

use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::optim::Parameters;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Features straight into the output head.
    Linear,
    /// One ReLU hidden layer.
    TwoLayer,
    /// Two ReLU hidden layers of equal width.
    ThreeLayer,
}

impl Architecture {
    pub fn hidden_layers(self) -> usize {
        match self {
            Architecture::Linear => 0,
            Architecture::TwoLayer => 1,
            Architecture::ThreeLayer => 2,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "two_layer" => Ok(Architecture::TwoLayer),
            "three_layer" => Ok(Architecture::ThreeLayer),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Sigmoid,
    Softmax,
}

impl OutputHead {
    /// Sigmoid for a single binary column, softmax otherwise.
    pub fn for_columns(n_columns: usize) -> Self {
        if n_columns == 1 {
            OutputHead::Sigmoid
        } else {
            OutputHead::Softmax
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelSpec {
    pub architecture: Architecture,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub output_head: OutputHead,
    pub n_outputs: usize,
}

impl LabelModelSpec {
    pub const DEFAULT_HIDDEN_UNITS: usize = 512;
    pub const DEFAULT_DROPOUT: f64 = 0.2;

    /// Two-layer ReLU network with dropout, sized for `n_columns` label columns.
    pub fn two_layer(n_columns: usize) -> Self {
        Self {
            architecture: Architecture::TwoLayer,
            hidden_units: Self::DEFAULT_HIDDEN_UNITS,
            dropout_rate: Self::DEFAULT_DROPOUT,
            output_head: OutputHead::for_columns(n_columns),
            n_outputs: n_columns,
        }
    }

    pub fn linear(n_columns: usize) -> Self {
        Self {
            architecture: Architecture::Linear,
            hidden_units: 1,
            dropout_rate: 0.0,
            output_head: OutputHead::for_columns(n_columns),
            n_outputs: n_columns,
        }
    }

    pub fn with_hidden_units(mut self, hidden_units: usize) -> Self {
        self.hidden_units = hidden_units;
        self
    }

    pub fn with_dropout(mut self, dropout_rate: f64) -> Self {
        self.dropout_rate = dropout_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.hidden_units == 0 {
            return Err(Error::invalid("hidden_units must be at least 1"));
        }
        if self.n_outputs == 0 {
            return Err(Error::invalid("n_outputs must be at least 1"));
        }
        match (self.output_head, self.n_outputs) {
            (OutputHead::Sigmoid, 1) => Ok(()),
            (OutputHead::Softmax, k) if k > 1 => Ok(()),
            (head, k) => Err(Error::invalid(format!("{head:?} head cannot produce {k} outputs"))),
        }
    }

    /// Widths of all layers, input first.
    fn layer_widths(&self, n_features: usize) -> Vec<usize> {
        let mut widths = vec![n_features];
        widths.extend(std::iter::repeat_n(self.hidden_units, self.architecture.hidden_layers()));
        widths.push(self.n_outputs);
        widths
    }
}

/// One affine layer, `x W + b` with `W` of shape `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelModelParams<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Parameters<T> for LabelModelParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }
}

impl<T: Scalar> LabelModelParams<T> {
    pub fn n_features(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_matches(&self, spec: &LabelModelSpec) -> Result<()> {
        let widths = spec.layer_widths(self.n_features());
        ensure_dim("layer count", widths.len() - 1, self.layers.len())?;
        for (l, layer) in self.layers.iter().enumerate() {
            ensure_dim("layer fan-in", widths[l], layer.weight.nrows())?;
            ensure_dim("layer fan-out", widths[l + 1], layer.weight.ncols())?;
            ensure_dim("bias length", widths[l + 1], layer.bias.len())?;
        }
        Ok(())
    }
}

/// Weights ~ N(0, 1/fan_in), biases zero. Deterministic in `seed`.
pub fn init_params<T: Scalar>(spec: &LabelModelSpec, n_features: usize, seed: u64) -> Result<LabelModelParams<T>> {
    spec.validate()?;
    if n_features == 0 {
        return Err(Error::Empty("label model needs at least one feature"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.layer_widths(n_features);
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                let z: f64 = rng.sample(StandardNormal);
                T::of(z * scale)
            });
            Dense {
                weight,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(LabelModelParams { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<'x, T> {
    input: ArrayView2<'x, T>,
    /// Post-activation (and post-dropout) output of each hidden layer.
    hidden: Vec<Array2<T>>,
    /// d(hidden activation)/d(pre-activation): ReLU indicator times dropout scale.
    gates: Vec<Array2<T>>,
    output: Array2<T>,
    head: OutputHead,
}

impl<T> ForwardCache<'_, T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }
}

fn affine<T: Scalar>(input: &ArrayView2<'_, T>, layer: &Dense<T>) -> Array2<T> {
    let mut z = Array2::zeros((input.nrows(), layer.weight.ncols()));
    general_mat_mul(T::one(), input, &layer.weight, T::zero(), &mut z);
    z += &layer.bias;
    z
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn apply_head<T: Scalar>(head: OutputHead, z: &mut Array2<T>) {
    match head {
        OutputHead::Sigmoid => z.mapv_inplace(sigmoid),
        OutputHead::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - max).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
        }
    }
}

/// Run the network. `rng` is only drawn from in train mode with non-zero dropout.
pub fn forward<'x, T: Scalar, R: Rng>(
    spec: &LabelModelSpec,
    params: &LabelModelParams<T>,
    x: ArrayView2<'x, T>,
    mode: ForwardMode,
    rng: &mut R,
) -> Result<ForwardCache<'x, T>> {
    params.check_matches(spec)?;
    ensure_dim("forward: feature count", params.n_features(), x.ncols())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward input"));
    }
    let n_hidden = params.layers.len() - 1;
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut gates = Vec::with_capacity(n_hidden);
    let dropout = spec.dropout_rate;
    let keep_scale = T::of(1.0 / (1.0 - dropout));
    for layer in &params.layers[..n_hidden] {
        let z = {
            let h = hidden.last().map_or(x.view(), |h: &Array2<T>| h.view());
            affine(&h, layer)
        };
        let mut gate = z.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
        if mode == ForwardMode::Train && dropout > 0.0 {
            gate.mapv_inplace(|g| {
                if rng.random::<f64>() < dropout {
                    T::zero()
                } else {
                    g * keep_scale
                }
            });
        }
        let mut a = z;
        a *= &gate;
        hidden.push(a);
        gates.push(gate);
    }
    let mut out = {
        let h = hidden.last().map_or(x.view(), |h| h.view());
        affine(&h, &params.layers[n_hidden])
    };
    apply_head(spec.output_head, &mut out);
    Ok(ForwardCache {
        input: x,
        hidden,
        gates,
        output: out,
        head: spec.output_head,
    })
}

/// Gradient of a loss with respect to every parameter, given `dL/df`.
pub fn backward<T: Scalar>(
    params: &LabelModelParams<T>,
    cache: &ForwardCache<'_, T>,
    output_gradient: ArrayView2<'_, T>,
) -> Result<LabelModelParams<T>> {
    ensure_dim("backward: rows", cache.output.nrows(), output_gradient.nrows())?;
    ensure_dim("backward: columns", cache.output.ncols(), output_gradient.ncols())?;
    ensure_dim("backward: layers", cache.hidden.len() + 1, params.layers.len())?;

    // through the head
    let f = &cache.output;
    let mut dz = match cache.head {
        OutputHead::Sigmoid => {
            let mut d = output_gradient.to_owned();
            Zip::from(&mut d).and(f).for_each(|d, &f| *d *= f * (T::one() - f));
            d
        }
        OutputHead::Softmax => {
            let mut d = output_gradient.to_owned();
            for (mut drow, frow) in d.rows_mut().into_iter().zip(f.rows()) {
                let inner = drow.dot(&frow);
                Zip::from(&mut drow).and(&frow).for_each(|d, &f| *d = f * (*d - inner));
            }
            d
        }
    };

    let mut grads = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let input = if l == 0 { cache.input.view() } else { cache.hidden[l - 1].view() };
        let g = &mut grads.layers[l];
        general_mat_mul(T::one(), &input.t(), &dz, T::zero(), &mut g.weight);
        g.bias = dz.sum_axis(Axis(0));
        if l > 0 {
            let mut dh = Array2::zeros((dz.nrows(), params.layers[l].weight.nrows()));
            general_mat_mul(T::one(), &dz, &params.layers[l].weight.t(), T::zero(), &mut dh);
            dh *= &cache.gates[l - 1];
            dz = dh;
        }
    }
    Ok(grads)
}

/// Eval-mode forward pass.
pub fn predict_probs<T: Scalar>(spec: &LabelModelSpec, params: &LabelModelParams<T>, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
    // eval mode never draws from the rng
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward(spec, params, x, ForwardMode::Eval, &mut no_rng)?.output)
}

const CHECKPOINT_FORMAT: &str = "dcws-label-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weight: TensorRecord,
    bias: TensorRecord,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format: String,
    version: u32,
    spec: LabelModelSpec,
    n_features: usize,
    layers: Vec<LayerRecord>,
}

/// Trained label model: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: LabelModelSpec,
    pub params: LabelModelParams<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        let tensor = |shape: Vec<usize>, data: &[T]| TensorRecord {
            shape,
            data: data.iter().map(|v| v.to_f64_lossy()).collect(),
        };
        let record = CheckpointRecord {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            n_features: self.params.n_features(),
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weight: tensor(l.weight.shape().to_vec(), l.weight.as_slice().expect("standard layout")),
                    bias: tensor(vec![l.bias.len()], l.bias.as_slice().expect("contiguous")),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: CheckpointRecord = serde_json::from_str(text)?;
        if record.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("not a label-model checkpoint: `{}`", record.format)));
        }
        if record.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", record.version)));
        }
        record.spec.validate()?;
        let convert = |data: Vec<f64>| -> Result<Vec<T>> {
            data.into_iter()
                .map(|v| T::from_f64(v).ok_or(Error::NonFinite("checkpoint tensor")))
                .collect()
        };
        let layers = record
            .layers
            .into_iter()
            .map(|l| {
                let [rows, cols] = l.weight.shape[..] else {
                    return Err(Error::invalid("weight tensor must be 2-D"));
                };
                let weight = Array2::from_shape_vec((rows, cols), convert(l.weight.data)?)
                    .map_err(|e| Error::invalid(format!("weight tensor: {e}")))?;
                ensure_dim("bias shape", 1, l.bias.shape.len())?;
                ensure_dim("bias length", l.bias.shape[0], l.bias.data.len())?;
                Ok(Dense {
                    weight,
                    bias: Array1::from(convert(l.bias.data)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = LabelModelParams { layers };
        if params.layers.is_empty() {
            return Err(Error::invalid("checkpoint has no layers"));
        }
        ensure_dim("checkpoint n_features", record.n_features, params.n_features())?;
        params.check_matches(&record.spec)?;
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(Self {
            spec: record.spec,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}
