//! A small feed-forward embedder trained with triplet loss.
//!
//! Hidden layers use tanh (smooth, so attack gradients exist everywhere);
//! the output layer is linear. Training is plain sequential SGD over
//! uniformly mined triplets — no hard-negative mining — so a seed fully
//! determines the trained parameters.

use nalgebra::{DMatrix, DVector};

use crate::embed::Embedder;
use crate::error::{CoreError, Result};
use crate::stream::Stream;
use crate::synthetic::SyntheticDataset;

/// Feed-forward embedder `R^d -> R^k` with tanh hidden layers and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEmbedder {
    /// Dimension chain `(d, h_1, …, k)`.
    pub layer_dims: Vec<usize>,
    /// `weights[l]` has shape `layer_dims[l+1] x layer_dims[l]`.
    pub weights: Vec<DMatrix<f64>>,
    /// `biases[l]` has length `layer_dims[l+1]`.
    pub biases: Vec<DVector<f64>>,
}

/// Per-parameter gradients, shaped exactly like the net's parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl ParamGrads {
    fn zeros_like(net: &MlpEmbedder) -> Self {
        ParamGrads {
            weights: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b * scale;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b * scale;
        }
    }
}

/// One mined training triplet: indices into a dataset's image list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    /// Anchor image index.
    pub anchor: usize,
    /// Same-identity image index (differs from the anchor when the
    /// identity has more than one image).
    pub positive: usize,
    /// Different-identity image index.
    pub negative: usize,
}

/// A trained net together with its per-epoch mean triplet loss.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub net: MlpEmbedder,
    /// Mean loss over all triplets of each epoch, in epoch order.
    pub epoch_mean_loss: Vec<f64>,
}

impl MlpEmbedder {
    /// Initializes parameters uniformly in `±1/sqrt(fan_in)` per layer,
    /// drawn from the stream in a fixed order.
    pub fn init(layer_dims: &[usize], stream: &Stream) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(CoreError::InvalidParameter {
                name: "layer_dims",
                reason: format!("need input and output dims, got {layer_dims:?}"),
            });
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidParameter {
                name: "layer_dims",
                reason: format!("all layer dims must be positive, got {layer_dims:?}"),
            });
        }
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for (l, pair) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut s = stream.substream_named("init").substream(l as u64);
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                s.uniform_in(-bound, bound)
            }));
            biases.push(DVector::from_fn(fan_out, |_, _| s.uniform_in(-bound, bound)));
        }
        Ok(MlpEmbedder { layer_dims: layer_dims.to_vec(), weights, biases })
    }

    /// Number of parameterized layers.
    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Checks dimension-chain consistency and parameter finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.layer_dims.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(CoreError::InvalidParameter {
                name: "layer_dims",
                reason: "parameter count does not match the dimension chain".into(),
            });
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.nrows() != self.layer_dims[l + 1] || w.ncols() != self.layer_dims[l] {
                return Err(CoreError::DimensionMismatch {
                    expected: self.layer_dims[l + 1],
                    got: w.nrows(),
                });
            }
            if b.len() != self.layer_dims[l + 1] {
                return Err(CoreError::DimensionMismatch {
                    expected: self.layer_dims[l + 1],
                    got: b.len(),
                });
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(CoreError::NumericFailure(format!(
                    "non-finite parameter in layer {l}"
                )));
            }
        }
        Ok(())
    }

    /// Forward pass keeping pre- and post-activation values per layer for
    /// backpropagation. `post[0]` is the input; `post[l+1]` the output of
    /// layer `l`.
    fn forward_trace(&self, x: &DVector<f64>) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        if x.len() != self.layer_dims[0] {
            return Err(CoreError::DimensionMismatch {
                expected: self.layer_dims[0],
                got: x.len(),
            });
        }
        let last = self.n_layers() - 1;
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut post = Vec::with_capacity(self.n_layers() + 1);
        post.push(x.clone());
        for l in 0..self.n_layers() {
            let z = &self.weights[l] * &post[l] + &self.biases[l];
            let a = if l < last { z.map(f64::tanh) } else { z.clone() };
            pre.push(z);
            post.push(a);
        }
        Ok((pre, post))
    }

    /// Backpropagates an upstream output gradient through the trace,
    /// returning the gradient with respect to the input and all parameters.
    fn backward(
        &self,
        pre: &[DVector<f64>],
        post: &[DVector<f64>],
        upstream: &DVector<f64>,
    ) -> (DVector<f64>, ParamGrads) {
        let mut grads = ParamGrads::zeros_like(self);
        // The output layer is linear, so the first delta is the upstream
        // gradient itself.
        let mut delta = upstream.clone();
        let mut input_grad = DVector::zeros(self.layer_dims[0]);
        for l in (0..self.n_layers()).rev() {
            grads.weights[l] = &delta * post[l].transpose();
            grads.biases[l] = delta.clone();
            let back = self.weights[l].tr_mul(&delta);
            if l > 0 {
                // Layer l-1 is hidden: apply the tanh derivative.
                delta = back.component_mul(&pre[l - 1].map(|z| 1.0 - z.tanh() * z.tanh()));
            } else {
                input_grad = back;
            }
        }
        (input_grad, grads)
    }

    /// Gradient of `uᵀ psi(x)` with respect to both `x` and the
    /// parameters.
    pub fn grad(&self, x: &DVector<f64>, upstream: &DVector<f64>) -> Result<(DVector<f64>, ParamGrads)> {
        if upstream.len() != *self.layer_dims.last().unwrap() {
            return Err(CoreError::DimensionMismatch {
                expected: *self.layer_dims.last().unwrap(),
                got: upstream.len(),
            });
        }
        let (pre, post) = self.forward_trace(x)?;
        Ok(self.backward(&pre, &post, upstream))
    }

    /// Serializes the net as CSV-style lines: per layer a `layer,in,out`
    /// header, then one row per output unit of weights, then the bias row.
    pub fn serialize_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            lines.push(format!("layer,{},{}", w.ncols(), w.nrows()));
            for r in 0..w.nrows() {
                let row: Vec<String> =
                    (0..w.ncols()).map(|c| crate::csvfmt::fmt_f64(w[(r, c)])).collect();
                lines.push(row.join(","));
            }
            let bias: Vec<String> = b.iter().map(|&v| crate::csvfmt::fmt_f64(v)).collect();
            lines.push(bias.join(","));
            let _ = l;
        }
        lines
    }
}

impl Embedder for MlpEmbedder {
    fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        let (_, post) = self.forward_trace(x).expect("dimension checked by caller");
        post.last().unwrap().clone()
    }

    fn input_gradient(&self, x: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        self.grad(x, upstream).expect("dimension checked by caller").0
    }
}

/// Triplet loss `max(0, ‖f(a)−f(p)‖² − ‖f(a)−f(n)‖² + margin)` and its
/// parameter gradients.
///
/// At the hinge boundary (argument exactly zero) the inactive-side
/// subgradient 0 is used, so an exactly-met margin contributes nothing.
pub fn triplet_loss(
    net: &MlpEmbedder,
    anchor: &DVector<f64>,
    positive: &DVector<f64>,
    negative: &DVector<f64>,
    margin: f64,
) -> Result<(f64, ParamGrads)> {
    if margin < 0.0 {
        return Err(CoreError::InvalidParameter {
            name: "margin",
            reason: format!("must be nonnegative, got {margin}"),
        });
    }
    let (pre_a, post_a) = net.forward_trace(anchor)?;
    let (pre_p, post_p) = net.forward_trace(positive)?;
    let (pre_n, post_n) = net.forward_trace(negative)?;
    let fa = post_a.last().unwrap();
    let fp = post_p.last().unwrap();
    let fn_ = post_n.last().unwrap();
    let d_ap = (fa - fp).norm_squared();
    let d_an = (fa - fn_).norm_squared();
    let raw = d_ap - d_an + margin;
    if raw <= 0.0 {
        return Ok((0.0, ParamGrads::zeros_like(net)));
    }
    // Active hinge: d(loss)/d f(a) = 2(f(a)-f(p)) - 2(f(a)-f(n)), etc.
    let up_a = (fa - fp) * 2.0 - (fa - fn_) * 2.0;
    let up_p = (fp - fa) * 2.0;
    let up_n = (fa - fn_) * 2.0;
    let (_, g_a) = net.backward(&pre_a, &post_a, &up_a);
    let (_, g_p) = net.backward(&pre_p, &post_p, &up_p);
    let (_, g_n) = net.backward(&pre_n, &post_n, &up_n);
    let mut grads = g_a;
    grads.add_scaled(&g_p, 1.0);
    grads.add_scaled(&g_n, 1.0);
    Ok((raw, grads))
}

/// Images of a dataset grouped by identity, as indices into
/// `dataset.images`, in dataset order.
fn images_by_identity(dataset: &SyntheticDataset) -> Vec<Vec<usize>> {
    let mut map: std::collections::BTreeMap<(u64, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (idx, img) in dataset.images.iter().enumerate() {
        map.entry((img.group.code(), img.identity_index)).or_default().push(idx);
    }
    map.into_values().collect()
}

/// Draws one uniform valid triplet: anchor uniform over images, positive
/// uniform over the anchor's identity (excluding the anchor itself when
/// possible), negative uniform over images of other identities.
fn mine_triplet(
    s: &mut Stream,
    identity_images: &[Vec<usize>],
    identity_of_image: &[usize],
    n_images: usize,
) -> Triplet {
    let anchor = s.below(n_images);
    let own = &identity_images[identity_of_image[anchor]];
    let positive = if own.len() == 1 {
        own[0]
    } else {
        loop {
            let cand = own[s.below(own.len())];
            if cand != anchor {
                break cand;
            }
        }
    };
    let negative = loop {
        let cand = s.below(n_images);
        if identity_of_image[cand] != identity_of_image[anchor] {
            break cand;
        }
    };
    Triplet { anchor, positive, negative }
}

/// Trains an MLP embedder on a dataset with uniform triplet mining and
/// sequential SGD.
///
/// Per epoch, `ceil(n_images / batch_size)` batches of `batch_size`
/// triplets are mined; each batch takes one step along the mean gradient.
/// The outcome records the mean loss of every epoch. Divergence
/// (non-finite loss or parameters) aborts with a diagnostic.
pub fn train_triplets(
    dataset: &SyntheticDataset,
    layer_dims: &[usize],
    margin: f64,
    step_size: f64,
    epochs: usize,
    batch_size: usize,
    stream: &Stream,
) -> Result<TrainingOutcome> {
    if batch_size == 0 {
        return Err(CoreError::InvalidParameter {
            name: "batch_size",
            reason: "must be positive".into(),
        });
    }
    let identity_images = images_by_identity(dataset);
    if identity_images.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "triplet training needs at least 2 identities, got {}",
            identity_images.len()
        )));
    }
    if layer_dims.first() != Some(&dataset.params.d) {
        return Err(CoreError::DimensionMismatch {
            expected: dataset.params.d,
            got: layer_dims.first().copied().unwrap_or(0),
        });
    }
    let n_images = dataset.images.len();
    let mut identity_of_image = vec![0usize; n_images];
    for (ident, members) in identity_images.iter().enumerate() {
        for &img in members {
            identity_of_image[img] = ident;
        }
    }

    let mut net = MlpEmbedder::init(layer_dims, &stream.substream_named("net"))?;
    let mine_stream = stream.substream_named("mining");
    let batches_per_epoch = n_images.div_ceil(batch_size);
    let mut epoch_mean_loss = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let epoch_stream = mine_stream.substream(epoch as u64);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in 0..batches_per_epoch {
            let mut s = epoch_stream.substream(batch as u64);
            let mut batch_grads = ParamGrads::zeros_like(&net);
            for _ in 0..batch_size {
                let t = mine_triplet(&mut s, &identity_images, &identity_of_image, n_images);
                let (loss, grads) = triplet_loss(
                    &net,
                    &dataset.images[t.anchor].x,
                    &dataset.images[t.positive].x,
                    &dataset.images[t.negative].x,
                    margin,
                )?;
                if !loss.is_finite() {
                    return Err(CoreError::NumericFailure(format!(
                        "triplet loss diverged (epoch {epoch}, batch {batch}): {loss}"
                    )));
                }
                loss_sum += loss;
                loss_count += 1;
                batch_grads.add_scaled(&grads, 1.0 / batch_size as f64);
            }
            for (w, g) in net.weights.iter_mut().zip(&batch_grads.weights) {
                *w -= g * step_size;
            }
            for (b, g) in net.biases.iter_mut().zip(&batch_grads.biases) {
                *b -= g * step_size;
            }
        }
        net.validate().map_err(|e| {
            CoreError::NumericFailure(format!("training diverged in epoch {epoch}: {e}"))
        })?;
        epoch_mean_loss.push(loss_sum / loss_count as f64);
    }

    Ok(TrainingOutcome { net, epoch_mean_loss })
}
