use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::arch::{ArchitectureSpec, LayerSpec, ParamGeometry};
use crate::error::{bail, Result};
use crate::rng::{purpose, stream};

/// Inputs (one sample per row, flattened channel-major) with class labels.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(inputs: ArrayView2<'a, f64>, labels: &'a [usize]) -> Self {
        Batch { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Weights, biases and prune mask of one dense or conv layer.
///
/// Dense weights are `(outputs, inputs)`; conv weights are
/// `(out_channels, in_channels * kernel * kernel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayer {
    pub(crate) geometry: ParamGeometry,
    pub(crate) weight: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) mask: Array2<bool>,
}

impl ParamLayer {
    pub fn geometry(&self) -> ParamGeometry {
        self.geometry
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// `true` where the weight is live, `false` where it has been pruned.
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    fn enforce_mask(&mut self) {
        Zip::from(&mut self.weight)
            .and(&self.mask)
            .for_each(|w, &keep| {
                if !keep {
                    *w = 0.0;
                }
            });
    }
}

/// Per-layer gradients, congruent with a model's parameter layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        GradientSet {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    /// Weight gradients flattened layer-major, matching [`Model::flat_weights`].
    pub fn flat_weights(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub(crate) fn scaled_add(&mut self, scale: f64, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(scale, b);
        }
    }

    pub(crate) fn congruent_with(&self, model: &Model) -> bool {
        self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().zip(&self.weights).all(|(l, g)| l.weight.dim() == g.dim())
            && model.layers.iter().zip(&self.biases).all(|(l, g)| l.bias.dim() == g.dim())
    }
}

/// A feed-forward classifier: architecture plus masked parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub(crate) arch: ArchitectureSpec,
    pub(crate) layers: Vec<ParamLayer>,
}

enum Cache {
    Dense { input: Array2<f64> },
    Conv { cols: Array2<f64> },
    Relu { output: Array2<f64> },
    Flatten,
}

impl Model {
    /// Builds a model with Glorot-uniform weights, zero biases and full masks.
    pub fn new(arch: ArchitectureSpec, seed: u64) -> Result<Self> {
        let geoms = arch.param_geometry()?;
        let layers = geoms
            .into_iter()
            .enumerate()
            .map(|(i, geometry)| {
                let (fan_in, fan_out) = geometry.fan_in_out();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream(seed, purpose::INIT, i as u64);
                let weight = Array2::from_shape_simple_fn(geometry.weight_dims(), || {
                    rng.random_range(-limit..=limit)
                });
                ParamLayer {
                    geometry,
                    mask: Array2::from_elem(weight.raw_dim(), true),
                    bias: Array1::zeros(geometry.bias_len()),
                    weight,
                }
            })
            .collect();
        Ok(Model { arch, layers })
    }

    /// Reassembles a model from stored parts, validating shapes and masks.
    pub fn from_parts(
        arch: ArchitectureSpec,
        parts: Vec<(Array2<f64>, Array1<f64>, Array2<bool>)>,
    ) -> Result<Self> {
        let geoms = arch.param_geometry()?;
        if geoms.len() != parts.len() {
            bail!(Shape, "architecture has {} parameter layers, got {}", geoms.len(), parts.len());
        }
        let mut layers = Vec::with_capacity(parts.len());
        for (i, (geometry, (weight, bias, mask))) in geoms.into_iter().zip(parts).enumerate() {
            if weight.dim() != geometry.weight_dims()
                || mask.dim() != weight.dim()
                || bias.len() != geometry.bias_len()
            {
                bail!(Shape, "parameter layer {i} does not match its geometry");
            }
            if Zip::from(&weight).and(&mask).any(|&w, &keep| !keep && w != 0.0) {
                bail!(Input, "parameter layer {i} has nonzero masked weights");
            }
            layers.push(ParamLayer {
                geometry,
                weight,
                bias,
                mask,
            });
        }
        Ok(Model { arch, layers })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[ParamLayer] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Total number of weights (masked or not), excluding biases.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    /// Number of unmasked weights.
    pub fn live_weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.mask.iter().filter(|&&k| k).count())
            .sum()
    }

    pub fn nonzero_weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.iter().filter(|&&w| w != 0.0).count())
            .sum()
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().copied()).collect()
    }

    pub fn flat_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| l.mask.iter().copied()).collect()
    }

    /// Maps a layer-major flat weight index to `(layer, row, col)`.
    pub fn locate(&self, mut flat: usize) -> Option<(usize, usize, usize)> {
        for (li, layer) in self.layers.iter().enumerate() {
            let n = layer.weight.len();
            if flat < n {
                let cols = layer.weight.ncols();
                return Some((li, flat / cols, flat % cols));
            }
            flat -= n;
        }
        None
    }

    /// Overwrites one live weight.
    pub fn set_weight(&mut self, flat: usize, value: f64) -> Result<()> {
        let Some((l, r, c)) = self.locate(flat) else {
            bail!(Usage, "weight index {flat} out of range");
        };
        if !self.layers[l].mask[[r, c]] {
            bail!(Usage, "weight {flat} is masked");
        }
        self.layers[l].weight[[r, c]] = value;
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, index: usize, value: f64) -> Result<()> {
        match self.layers.get_mut(layer).and_then(|l| l.bias.get_mut(index)) {
            Some(b) => {
                *b = value;
                Ok(())
            }
            None => bail!(Usage, "bias ({layer}, {index}) out of range"),
        }
    }

    pub(crate) fn clear_weight(&mut self, flat: usize) {
        if let Some((l, r, c)) = self.locate(flat) {
            self.layers[l].weight[[r, c]] = 0.0;
            self.layers[l].mask[[r, c]] = false;
        }
    }

    /// Σθ² over live weights.
    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                Zip::from(&l.weight)
                    .and(&l.mask)
                    .fold(0.0, |acc, &w, &keep| if keep { acc + w * w } else { acc })
            })
            .sum()
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.arch.input_len() {
            bail!(Shape, "samples have {} features, model expects {}", inputs.ncols(), self.arch.input_len());
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            bail!(Input, "empty batch");
        }
        self.check_inputs(&batch.inputs)?;
        if batch.inputs.nrows() != batch.labels.len() {
            bail!(Shape, "{} samples but {} labels", batch.inputs.nrows(), batch.labels.len());
        }
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= self.arch.classes) {
            bail!(Input, "label {bad} outside [0, {})", self.arch.classes);
        }
        Ok(())
    }

    fn forward(&self, inputs: ArrayView2<f64>, caches: Option<&mut Vec<Cache>>) -> Array2<f64> {
        let mut x = inputs.to_owned();
        let mut caches = caches;
        let mut params = self.layers.iter();
        for layer in &self.arch.layers {
            let (next, cache) = match layer {
                LayerSpec::Dense { .. } => {
                    let p = params.next().expect("geometry checked at construction");
                    let mut z = x.dot(&p.weight.t());
                    z += &p.bias;
                    (z, Cache::Dense { input: x })
                }
                LayerSpec::Conv { .. } => {
                    let p = params.next().expect("geometry checked at construction");
                    let cols = im2col(&x, p.geometry);
                    let out = conv_output(&cols, p, x.nrows());
                    (out, Cache::Conv { cols })
                }
                LayerSpec::Relu => {
                    x.mapv_inplace(|v| v.max(0.0));
                    let out = x;
                    let cache = if caches.is_some() {
                        Cache::Relu {
                            output: out.clone(),
                        }
                    } else {
                        Cache::Flatten
                    };
                    (out, cache)
                }
                LayerSpec::Flatten => (x, Cache::Flatten),
            };
            if let Some(c) = caches.as_deref_mut() {
                c.push(cache);
            }
            x = next;
        }
        x
    }

    /// Raw class scores, one row per sample.
    pub fn logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        Ok(self.forward(inputs, None))
    }

    /// Argmax class per sample; ties resolve to the lowest class index.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self.logits(inputs)?.rows().into_iter().map(|r| argmax(r.iter())).collect())
    }

    /// Mean softmax cross-entropy without the decay term.
    pub fn data_loss(&self, batch: Batch) -> Result<f64> {
        self.check_batch(&batch)?;
        let logits = self.forward(batch.inputs, None);
        Ok(cross_entropy(&logits, batch.labels).0)
    }

    /// Regularized loss: mean cross-entropy plus `(decay / 2) * Σθ²` over live weights.
    pub fn loss(&self, batch: Batch, decay: f64) -> Result<f64> {
        Ok(self.data_loss(batch)? + 0.5 * decay * self.squared_norm())
    }

    /// Gradient of [`Model::loss`]; masked entries are zero.
    pub fn gradient(&self, batch: Batch, decay: f64) -> Result<GradientSet> {
        Ok(self.loss_and_gradient(batch, decay)?.1)
    }

    pub fn loss_and_gradient(&self, batch: Batch, decay: f64) -> Result<(f64, GradientSet)> {
        self.check_batch(&batch)?;
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        let logits = self.forward(batch.inputs, Some(&mut caches));
        let (data_loss, mut delta) = cross_entropy(&logits, batch.labels);

        let mut grads = GradientSet::zeros_like(self);
        let mut pi = self.layers.len();
        for (li, cache) in caches.into_iter().enumerate().rev() {
            let first = li == 0;
            match cache {
                Cache::Dense { input } => {
                    pi -= 1;
                    let p = &self.layers[pi];
                    grads.weights[pi] = delta.t().dot(&input);
                    grads.biases[pi] = delta.sum_axis(Axis(0));
                    if !first {
                        delta = delta.dot(&p.weight);
                    }
                }
                Cache::Conv { cols } => {
                    pi -= 1;
                    let p = &self.layers[pi];
                    let g = channel_major_to_rows(&delta, p.geometry);
                    grads.weights[pi] = g.t().dot(&cols);
                    grads.biases[pi] = g.sum_axis(Axis(0));
                    if !first {
                        let dcols = g.dot(&p.weight);
                        delta = col2im(&dcols, p.geometry, delta.nrows());
                    }
                }
                Cache::Relu { output } => {
                    Zip::from(&mut delta).and(&output).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                Cache::Flatten => {}
            }
        }

        for (g, layer) in grads.weights.iter_mut().zip(&self.layers) {
            Zip::from(g)
                .and(&layer.weight)
                .and(&layer.mask)
                .for_each(|g, &w, &keep| {
                    *g = if keep { *g + decay * w } else { 0.0 };
                });
        }
        Ok((data_loss + 0.5 * decay * self.squared_norm(), grads))
    }

    /// `θ ← θ − rate·∇` on live weights and all biases.
    pub fn sgd_step(&mut self, grads: &GradientSet, rate: f64) -> Result<()> {
        if !(rate > 0.0 && rate.is_finite()) {
            bail!(Config, "learning rate must be positive and finite, got {rate}");
        }
        if !grads.congruent_with(self) {
            bail!(Shape, "gradient set does not match model parameters");
        }
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            layer.weight.scaled_add(-rate, gw);
            layer.bias.scaled_add(-rate, gb);
            layer.enforce_mask();
        }
        Ok(())
    }
}

pub(crate) fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.enumerate() {
        if v > best_val || (i == 0 && v.is_nan()) {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub(crate) fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for ((mut row, raw), &y) in grad.rows_mut().into_iter().zip(logits.rows()).zip(labels) {
        let max = raw.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        total += sum.ln() - (raw[y] - max);
        row.mapv_inplace(|v| v / sum / n);
        row[y] -= 1.0 / n;
    }
    (total / n, grad)
}

fn conv_dims(geom: ParamGeometry) -> (usize, usize, usize, usize, usize, usize) {
    match geom {
        ParamGeometry::Conv {
            in_channels,
            out_channels,
            kernel,
            in_height,
            in_width,
        } => (
            in_channels,
            out_channels,
            kernel,
            in_height,
            in_width,
            (in_height - kernel + 1) * (in_width - kernel + 1),
        ),
        ParamGeometry::Dense { .. } => unreachable!("conv helper on dense layer"),
    }
}

/// Unfolds every receptive field into a row: `(batch * positions, c * k * k)`.
fn im2col(x: &Array2<f64>, geom: ParamGeometry) -> Array2<f64> {
    let (ic, _, k, h, w, positions) = conv_dims(geom);
    let ow = w - k + 1;
    let batch = x.nrows();
    let mut cols = Array2::zeros((batch * positions, ic * k * k));
    for s in 0..batch {
        let sample = x.row(s);
        for p in 0..positions {
            let (oy, ox) = (p / ow, p % ow);
            let mut row = cols.row_mut(s * positions + p);
            for c in 0..ic {
                for ky in 0..k {
                    let src = c * h * w + (oy + ky) * w + ox;
                    let dst = c * k * k + ky * k;
                    for kx in 0..k {
                        row[dst + kx] = sample[src + kx];
                    }
                }
            }
        }
    }
    cols
}

fn conv_output(cols: &Array2<f64>, p: &ParamLayer, batch: usize) -> Array2<f64> {
    let (_, oc, _, _, _, positions) = conv_dims(p.geometry);
    let mut z = cols.dot(&p.weight.t());
    z += &p.bias;
    let mut out = Array2::zeros((batch, oc * positions));
    for s in 0..batch {
        for pos in 0..positions {
            let src = z.row(s * positions + pos);
            for o in 0..oc {
                out[[s, o * positions + pos]] = src[o];
            }
        }
    }
    out
}

fn channel_major_to_rows(delta: &Array2<f64>, geom: ParamGeometry) -> Array2<f64> {
    let (_, oc, _, _, _, positions) = conv_dims(geom);
    let batch = delta.nrows();
    let mut g = Array2::zeros((batch * positions, oc));
    for s in 0..batch {
        for o in 0..oc {
            for pos in 0..positions {
                g[[s * positions + pos, o]] = delta[[s, o * positions + pos]];
            }
        }
    }
    g
}

fn col2im(dcols: &Array2<f64>, geom: ParamGeometry, batch: usize) -> Array2<f64> {
    let (ic, _, k, h, w, positions) = conv_dims(geom);
    let ow = w - k + 1;
    let mut dx = Array2::zeros((batch, ic * h * w));
    for s in 0..batch {
        let mut sample = dx.row_mut(s);
        for p in 0..positions {
            let (oy, ox) = (p / ow, p % ow);
            let row = dcols.row(s * positions + p);
            for c in 0..ic {
                for ky in 0..k {
                    let dst = c * h * w + (oy + ky) * w + ox;
                    let src = c * k * k + ky * k;
                    for kx in 0..k {
                        sample[dst + kx] += row[src + kx];
                    }
                }
            }
        }
    }
    dx
}
