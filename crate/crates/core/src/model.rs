//! Linear and leaky-ReLU network hypotheses over a flat parameter vector.
//!
//! Parameters are laid out layer by layer from input to output. Each layer
//! stores its weight matrix row-major (`fan_out` rows of `fan_in` entries)
//! followed by its bias vector. Distances and optimiser state index straight
//! into this layout, so it must not change.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// Slope of the leaky ReLU on negative inputs.
pub const LEAK: f64 = 0.01;
/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.04;
/// Initial value of every hidden bias.
pub const HIDDEN_BIAS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden width `D`; ignored for linear models.
    pub hidden_width: usize,
    /// Number of hidden layers; ignored for linear models.
    pub hidden_depth: usize,
}

/// Position of one affine layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl Layer {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn end(&self) -> usize {
        self.offset + (self.fan_in + 1) * self.fan_out
    }
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            input_dim,
            num_classes,
            hidden_width: 0,
            hidden_depth: 0,
        }
    }

    pub fn mlp(input_dim: usize, num_classes: usize, width: usize, depth: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden_width: width,
            hidden_depth: depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.kind == ModelKind::Mlp && (self.hidden_width == 0 || self.hidden_depth == 0) {
            return Err(Error::InvalidArgument(
                "network width and depth must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut dims = vec![self.input_dim];
        if self.kind == ModelKind::Mlp {
            dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_depth));
        }
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let layer = Layer { fan_in: w[0], fan_out: w[1], offset };
                offset = layer.end();
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::Linear => c * d + c,
            ModelKind::Mlp => {
                let h = self.hidden_width;
                h * d + h + (self.hidden_depth - 1) * (h * h + h) + c * h + c
            }
        }
    }
}

/// Flat vector of finite parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty parameter vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector { values })
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A model together with its parameters: the Dirac predictor `h_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub spec: ModelSpec,
    pub params: ParamVector,
}

impl Hypothesis {
    pub fn new(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.param_count(), params.dim())?;
        Ok(Hypothesis { spec, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = init_weights(&spec, seed)?;
        Ok(Hypothesis { spec, params })
    }
}

/// Gaussian weights with std 0.04 clamped to two standard deviations,
/// hidden biases 0.1, output bias 0.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let layers = spec.layers();
    let last = layers.len() - 1;
    let mut values = vec![0.0; spec.param_count()];
    let lim = 2.0 * INIT_STD;
    for (l, layer) in layers.iter().enumerate() {
        for v in &mut values[layer.weight_range()] {
            *v = (INIT_STD * rng::gaussian(&mut rng)).clamp(-lim, lim);
        }
        let bias = if l == last { 0.0 } else { HIDDEN_BIAS };
        values[layer.bias_range()].fill(bias);
    }
    Ok(ParamVector { values })
}

#[inline]
pub fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAK * z
    }
}

/// Derivative of the leaky ReLU, read off its output (the sign is preserved).
/// The kink at zero takes the leak slope.
#[inline]
pub fn leaky_slope(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        LEAK
    }
}

pub(crate) fn weights<'a>(layer: &Layer, params: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((layer.fan_out, layer.fan_in), &params[layer.weight_range()])
        .expect("layer shape")
}

pub(crate) fn bias<'a>(layer: &Layer, params: &'a [f64]) -> ArrayView1<'a, f64> {
    ArrayView1::from(&params[layer.bias_range()])
}

/// Layer inputs recorded during a batched forward pass.
///
/// `acts[0]` is the input batch, `acts[l]` the activated output of hidden
/// layer `l`; `scores` holds the final affine output.
pub struct ForwardPass {
    pub acts: Vec<Array2<f64>>,
    pub scores: Array2<f64>,
}

/// Forward pass over a batch of rows. Does not validate dimensions.
pub(crate) fn forward_pass(spec: &ModelSpec, params: &[f64], x: ArrayView2<f64>) -> ForwardPass {
    let layers = spec.layers();
    let last = layers.len() - 1;
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x.to_owned());
    for (l, layer) in layers.iter().enumerate() {
        let mut z = acts[l].dot(&weights(layer, params).t());
        if !z.is_standard_layout() {
            // rank-one products can come back column-major
            z = z.as_standard_layout().into_owned();
        }
        z += &bias(layer, params);
        if l == last {
            return ForwardPass { acts, scores: z };
        }
        z.mapv_inplace(leaky);
        acts.push(z);
    }
    unreachable!("a model has at least one layer")
}

/// Score matrix for a batch of inputs, one row per input.
pub fn forward_batch(h: &Hypothesis, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_dim(h.spec.input_dim, x.len_of(Axis(1)))?;
    check_dim(h.spec.param_count(), h.params.dim())?;
    Ok(forward_pass(&h.spec, h.params.as_slice(), x).scores)
}

pub fn forward(h: &Hypothesis, x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input"));
    }
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
    Ok(forward_batch(h, view)?.into_raw_vec_and_offset().0)
}

/// Euclidean distance between parameter vectors, which is also the
/// 1-Wasserstein distance between the two Dirac hypotheses.
pub fn param_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(euclidean(a.as_slice(), b.as_slice()))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

const MAGIC: &[u8; 4] = b"WPAC";
const FORMAT_VERSION: u32 = 1;

/// Binary hypothesis file.
///
/// ```text
/// offset  size  field
///      0     4  magic "WPAC"
///      4     4  format version (u32 LE, currently 1)
///      8     4  kind (u32 LE, 0 = linear, 1 = mlp)
///     12     8  input dim d (u64 LE)
///     20     8  classes |Y| (u64 LE)
///     28     8  hidden width D (u64 LE, 0 for linear)
///     36     8  hidden depth (u64 LE, 0 for linear)
///     44     8  parameter count n (u64 LE)
///     52    8n  parameters (f64 LE) in vectorisation order
/// ```
impl Hypothesis {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let kind: u32 = match self.spec.kind {
            ModelKind::Linear => 0,
            ModelKind::Mlp => 1,
        };
        let (width, depth) = match self.spec.kind {
            ModelKind::Linear => (0, 0),
            ModelKind::Mlp => (self.spec.hidden_width, self.spec.hidden_depth),
        };
        let mut buf = Vec::with_capacity(52 + 8 * self.params.dim());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&kind.to_le_bytes());
        for v in [
            self.spec.input_dim,
            self.spec.num_classes,
            width,
            depth,
            self.params.dim(),
        ] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in &self.params.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let fmt = |offset: usize, msg: &str| Error::Format {
            offset: offset as u64,
            msg: msg.to_string(),
        };
        if bytes.len() < 52 {
            return Err(fmt(bytes.len(), "truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fmt(0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
        if u32_at(4) != FORMAT_VERSION {
            return Err(fmt(4, "unsupported version"));
        }
        let kind = match u32_at(8) {
            0 => ModelKind::Linear,
            1 => ModelKind::Mlp,
            _ => return Err(fmt(8, "unknown model kind")),
        };
        let spec = ModelSpec {
            kind,
            input_dim: u64_at(12),
            num_classes: u64_at(20),
            hidden_width: u64_at(28),
            hidden_depth: u64_at(36),
        };
        spec.validate().map_err(|e| fmt(12, &e.to_string()))?;
        let n = u64_at(44);
        if n != spec.param_count() {
            return Err(fmt(44, "parameter count does not match header"));
        }
        if bytes.len() != 52 + 8 * n {
            return Err(fmt(bytes.len().min(52 + 8 * n), "payload length mismatch"));
        }
        let values = bytes[52..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Hypothesis::new(spec, ParamVector::new(values)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
