//! One-dimensional random convolutional networks on `(R^d)^n`.
//!
//! A layer of width `w` and stride `s` applies one weight matrix
//! `W: d_out x (d_in w)` to every window of `w` consecutive positions,
//! stepping by `s`, and then the activation entrywise. Windows are indexed from
//! 0, so window `i` covers positions `i s .. i s + w - 1` (0-based) and there
//! are `(n - w)/s + 1` of them.
//!
//! A window is flattened column-major: the `d_in` channels of its first
//! position, then those of the second, and so on. Because a `d x n` point cloud
//! is stored column-major, a window is a contiguous slice of the cloud.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotgroup::{gaussian_matrix, PlaneOrbit, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
    /// `tan^{-1}`, the odd sigmoid.
    Arctan,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Arctan => x.atan(),
        }
    }

    pub fn is_odd(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Arctan => "arctan",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "arctan" | "atan" | "arctan-sigmoid" => Ok(Activation::Arctan),
            other => Err(format!("unknown activation `{other}` (expected relu, identity, tanh or arctan)")),
        }
    }
}

/// Weight distribution of a layer. Both are regular: their law is invariant
/// under right multiplication by orthogonal matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// i.i.d. `N(0, 1/fan_in)` entries.
    XavierGaussian,
    /// Uniformly random orthonormal rows; needs `out_channels <= fan_in`.
    RowOrthonormal,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::XavierGaussian => "xavier",
            InitKind::RowOrthonormal => "orthonormal",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "xavier" | "xavier-gaussian" => Ok(InitKind::XavierGaussian),
            "orthonormal" | "row-orthonormal" => Ok(InitKind::RowOrthonormal),
            other => Err(format!("unknown init `{other}` (expected xavier or orthonormal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub in_positions: usize,
    pub width: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub init: InitKind,
}

impl ConvLayerSpec {
    pub fn new(
        in_channels: usize,
        in_positions: usize,
        width: usize,
        stride: usize,
        out_channels: usize,
        activation: Activation,
        init: InitKind,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            in_positions,
            width,
            stride,
            out_channels,
            activation,
            init,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Fully connected layer: a convolution whose width is the whole input.
    pub fn dense(in_channels: usize, in_positions: usize, out_channels: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_channels,
            in_positions,
            in_positions,
            1,
            out_channels,
            activation,
            InitKind::XavierGaussian,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.in_positions == 0 || self.out_channels == 0 {
            return Err(Error::Shape("channels and positions must be positive".into()));
        }
        if self.width == 0 || self.width > self.in_positions {
            return Err(Error::Shape(format!(
                "width {} must satisfy 1 <= w <= n = {}",
                self.width, self.in_positions
            )));
        }
        if self.stride == 0 || !(self.in_positions - self.width).is_multiple_of(self.stride) {
            return Err(Error::Shape(format!(
                "stride {} must divide n - w = {}",
                self.stride,
                self.in_positions - self.width
            )));
        }
        if self.init == InitKind::RowOrthonormal && self.out_channels > self.fan_in() {
            return Err(Error::Shape(format!(
                "orthonormal rows need out_channels {} <= fan-in {}",
                self.out_channels,
                self.fan_in()
            )));
        }
        Ok(())
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.width
    }

    pub fn out_positions(&self) -> usize {
        (self.in_positions - self.width) / self.stride + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    matrix: DMatrix<f64>,
    init: InitKind,
}

impl LayerWeights {
    pub fn new(matrix: DMatrix<f64>, init: InitKind) -> Self {
        Self { matrix, init }
    }

    pub fn sample<R: Rng + ?Sized>(spec: &ConvLayerSpec, rng: &mut R) -> Self {
        let fan_in = spec.fan_in();
        let matrix = match spec.init {
            InitKind::XavierGaussian => gaussian_matrix(spec.out_channels, fan_in, rng) / (fan_in as f64).sqrt(),
            InitKind::RowOrthonormal => {
                let qr = gaussian_matrix(fan_in, spec.out_channels, rng).qr();
                let r = qr.r();
                let mut q = qr.q();
                for j in 0..spec.out_channels {
                    if r[(j, j)] < 0.0 {
                        q.column_mut(j).neg_mut();
                    }
                }
                q.transpose()
            }
        };
        Self {
            matrix,
            init: spec.init,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn init(&self) -> InitKind {
        self.init
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layers: Vec<ConvLayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<ConvLayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (v, layer) in layers.iter().enumerate() {
            layer.validate().map_err(|e| Error::Shape(format!("layer {}: {e}", v + 1)))?;
        }
        for (v, pair) in layers.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.out_channels != b.in_channels || a.out_positions() != b.in_positions {
                return Err(Error::Shape(format!(
                    "layer {} outputs ({} channels, {} positions) but layer {} expects ({}, {})",
                    v + 1,
                    a.out_channels,
                    a.out_positions(),
                    v + 2,
                    b.in_channels,
                    b.in_positions
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Convolutional first layer of the given width and stride, `depth - 2`
    /// further pointwise (width 1) hidden layers, and a fully connected,
    /// identity-activated scalar output layer. `depth = 1` is a single linear
    /// readout.
    #[allow(clippy::too_many_arguments)]
    pub fn standard(
        d: usize,
        n: usize,
        width: usize,
        stride: usize,
        channels: usize,
        depth: usize,
        activation: Activation,
        init: InitKind,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Shape("depth must be >= 1".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        let (mut c, mut p) = (d, n);
        for v in 0..depth - 1 {
            let (w, s) = if v == 0 { (width, stride) } else { (1, 1) };
            let layer = ConvLayerSpec::new(c, p, w, s, channels, activation, init)?;
            c = layer.out_channels;
            p = layer.out_positions();
            layers.push(layer);
        }
        layers.push(ConvLayerSpec::dense(c, p, 1, Activation::Identity)?);
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ConvLayerSpec] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `(d, n)` of the input.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.layers[0].in_channels, self.layers[0].in_positions)
    }

    /// `(d_l, n_l)` of the output.
    pub fn output_shape(&self) -> (usize, usize) {
        let last = self.layers.last().expect("non-empty");
        (last.out_channels, last.out_positions())
    }

    pub fn is_scalar(&self) -> bool {
        self.output_shape() == (1, 1)
    }

    pub fn all_odd(&self) -> bool {
        self.layers.iter().all(|l| l.activation.is_odd())
    }

    /// Xavier ReLU hidden layers followed by a linear scalar layer.
    pub fn is_relu_xavier(&self) -> bool {
        let (last, hidden) = self.layers.split_last().expect("non-empty");
        self.is_scalar()
            && last.activation == Activation::Identity
            && last.init == InitKind::XavierGaussian
            && hidden
                .iter()
                .all(|l| l.activation == Activation::Relu && l.init == InitKind::XavierGaussian)
    }

    /// `sqrt(2^{l-1} / (n_{l-1} d_{l-1}))`, the normalisation of the feature map.
    pub fn feature_scale(&self) -> Result<f64> {
        if self.depth() < 2 {
            return Err(Error::Shape("the feature map needs depth >= 2".into()));
        }
        let penultimate = &self.layers[self.depth() - 2];
        let (c, p) = (penultimate.out_channels, penultimate.out_positions());
        Ok((2f64.powi(self.depth() as i32 - 1) / (p * c) as f64).sqrt())
    }

    fn check_weights(&self, weights: &[LayerWeights]) -> Result<()> {
        if weights.len() != self.depth() {
            return Err(Error::Shape(format!(
                "{} weight matrices for a depth-{} network",
                weights.len(),
                self.depth()
            )));
        }
        Ok(())
    }
}

/// Window `i` of width `w` and stride `s`: positions `i s + 1 ..= i s + w`
/// (1-based), i.e. columns `i s .. i s + w - 1`.
pub fn window(x: &PointCloud, i: usize, s: usize, w: usize) -> Result<PointCloud> {
    let n = x.len();
    if w == 0 || w > n || s == 0 {
        return Err(Error::Shape(format!("invalid window width {w} / stride {s} for n = {n}")));
    }
    let count = (n - w) / s + 1;
    if i >= count {
        return Err(Error::Shape(format!("window index {i} out of range 0..{count}")));
    }
    Ok(PointCloud::from_matrix(x.matrix().columns(i * s, w).into_owned()))
}

/// `F_W(x) = (sigma(W T_0(x)), ..., sigma(W T_{(n-w)/s}(x)))`.
pub fn layer_forward(spec: &ConvLayerSpec, weights: &LayerWeights, x: &PointCloud) -> Result<PointCloud> {
    if x.dim() != spec.in_channels || x.len() != spec.in_positions {
        return Err(Error::Shape(format!(
            "layer expects {}x{} input, got {}x{}",
            spec.in_channels,
            spec.in_positions,
            x.dim(),
            x.len()
        )));
    }
    let fan_in = spec.fan_in();
    if weights.matrix.nrows() != spec.out_channels || weights.matrix.ncols() != fan_in {
        return Err(Error::Shape(format!(
            "weights are {}x{}, layer needs {}x{}",
            weights.matrix.nrows(),
            weights.matrix.ncols(),
            spec.out_channels,
            fan_in
        )));
    }
    let positions = spec.out_positions();
    let data = x.matrix().as_slice();
    let d = spec.in_channels;
    let mut windows = DMatrix::<f64>::zeros(fan_in, positions);
    for t in 0..positions {
        let start = t * spec.stride * d;
        windows
            .column_mut(t)
            .copy_from_slice(&data[start..start + fan_in]);
    }
    let mut out = &weights.matrix * windows;
    let act = spec.activation;
    if act != Activation::Identity {
        out.apply(|v| *v = act.apply(*v));
    }
    Ok(PointCloud::from_matrix(out))
}

pub fn sample_network<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Vec<LayerWeights> {
    spec.layers.iter().map(|l| LayerWeights::sample(l, rng)).collect()
}

fn forward_layers(layers: &[ConvLayerSpec], weights: &[LayerWeights], x: &PointCloud) -> Result<PointCloud> {
    let mut h = layer_forward(&layers[0], &weights[0], x)?;
    for (spec, w) in layers.iter().zip(weights).skip(1) {
        h = layer_forward(spec, w, &h)?;
    }
    Ok(h)
}

/// `f = F_{W_l} o ... o F_{W_1}` for a network with scalar output.
pub fn network_forward(spec: &NetworkSpec, weights: &[LayerWeights], x: &PointCloud) -> Result<f64> {
    if !spec.is_scalar() {
        let (c, p) = spec.output_shape();
        return Err(Error::Shape(format!("network output is {c}x{p}, not a scalar")));
    }
    spec.check_weights(weights)?;
    Ok(forward_layers(&spec.layers, weights, x)?.matrix()[(0, 0)])
}

/// `Psi = sqrt(2^{l-1} / (n_{l-1} d_{l-1})) F_{W_{l-1}} o ... o F_{W_1}`.
pub fn feature_map(spec: &NetworkSpec, weights: &[LayerWeights], x: &PointCloud) -> Result<PointCloud> {
    let scale = spec.feature_scale()?;
    spec.check_weights(weights)?;
    let l = spec.depth();
    Ok(forward_layers(&spec.layers[..l - 1], &weights[..l - 1], x)?.scaled(scale))
}

/// A network architecture together with one draw of its weights.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    weights: Vec<LayerWeights>,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: Vec<LayerWeights>) -> Result<Self> {
        spec.check_weights(&weights)?;
        for (v, (l, w)) in spec.layers.iter().zip(&weights).enumerate() {
            if w.matrix.nrows() != l.out_channels || w.matrix.ncols() != l.fan_in() {
                return Err(Error::Shape(format!("layer {} weights have the wrong shape", v + 1)));
            }
        }
        Ok(Self { spec, weights })
    }

    pub fn sample<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        Self {
            weights: sample_network(spec, rng),
            spec: spec.clone(),
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[LayerWeights] {
        &self.weights
    }

    pub fn forward(&self, x: &PointCloud) -> Result<f64> {
        network_forward(&self.spec, &self.weights, x)
    }

    pub fn feature_map(&self, x: &PointCloud) -> Result<PointCloud> {
        feature_map(&self.spec, &self.weights, x)
    }

    /// Runs layers `start..` on `h`, the output of layer `start - 1`.
    pub fn forward_from(&self, start: usize, h: &PointCloud) -> Result<f64> {
        if !self.spec.is_scalar() {
            return Err(Error::Shape("network output is not a scalar".into()));
        }
        let mut h = h.clone();
        for (spec, w) in self.spec.layers.iter().zip(&self.weights).skip(start) {
            h = layer_forward(spec, w, &h)?;
        }
        Ok(h.matrix()[(0, 0)])
    }

    /// Evaluator of `theta -> f(R(theta) x)` along a plane orbit that updates
    /// the first-layer pre-activations by the rank-2 change of the input.
    pub fn along_plane<'a>(&'a self, orbit: &'a PlaneOrbit) -> Result<PlaneEvaluator<'a>> {
        let first = &self.spec.layers[0];
        let (d, w) = (first.in_channels, first.width);
        if orbit.u().len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: orbit.u().len(),
            });
        }
        let mut linear = *first;
        linear.activation = Activation::Identity;
        let base = layer_forward(&linear, &self.weights[0], &orbit.point(0.0))?.into_matrix();
        let weights = self.weights[0].matrix();
        let mut along_u = DMatrix::zeros(first.out_channels, w);
        let mut along_v = DMatrix::zeros(first.out_channels, w);
        for r in 0..w {
            along_u.set_column(r, &(weights.columns(r * d, d) * orbit.u()));
            along_v.set_column(r, &(weights.columns(r * d, d) * orbit.v()));
        }
        Ok(PlaneEvaluator {
            net: self,
            orbit,
            base,
            along_u,
            along_v,
        })
    }

    /// Replaces the weights of layer `index` (0-based).
    pub fn with_layer(&self, index: usize, weights: LayerWeights) -> Result<Self> {
        let mut all = self.weights.clone();
        let slot = all
            .get_mut(index)
            .ok_or_else(|| Error::Shape(format!("no layer {index}")))?;
        *slot = weights;
        Self::new(self.spec.clone(), all)
    }
}

/// See [`Network::along_plane`].
pub struct PlaneEvaluator<'a> {
    net: &'a Network,
    orbit: &'a PlaneOrbit,
    base: DMatrix<f64>,
    along_u: DMatrix<f64>,
    along_v: DMatrix<f64>,
}

impl PlaneEvaluator<'_> {
    pub fn eval(&self, theta: f64) -> Result<f64> {
        let first = &self.net.spec.layers[0];
        let (cu, cv) = self.orbit.update_coefficients(theta);
        let mut pre = self.base.clone();
        for t in 0..pre.ncols() {
            let start = t * first.stride;
            let mut col = pre.column_mut(t);
            for r in 0..first.width {
                col.axpy(cu[start + r], &self.along_u.column(r), 1.0);
                col.axpy(cv[start + r], &self.along_v.column(r), 1.0);
            }
        }
        let act = first.activation;
        if act != Activation::Identity {
            pre.apply(|v| *v = act.apply(*v));
        }
        self.net.forward_from(1, &PointCloud::from_matrix(pre))
    }
}
