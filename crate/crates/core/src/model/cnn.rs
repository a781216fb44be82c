//! Small convolutional classifier over `channels x bins` feature images.
//!
//! Each block is a 3x3 convolution (zero padding 1, optional stride 2),
//! bias and ReLU, optionally followed by adding the block input back. The
//! final feature map is average-pooled and fed to a dense softmax layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy_row, softmax};
use super::tensor::{Params, Tensor};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub out_width: usize,
    pub stride: usize,
    pub residual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Average over the whole feature map.
    Global,
    /// Average over the electrode (row) axis only, keeping frequency columns.
    Electrode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Rows of the input image (EEG channels).
    pub input_channels: usize,
    /// Columns of the input image (frequency bins).
    pub input_bins: usize,
    pub blocks: Vec<BlockSpec>,
    pub pooling: Pooling,
    pub n_classes: usize,
    pub seed: u64,
}

impl CnnConfig {
    /// Three-block preset used by the pipeline.
    pub fn small(input_channels: usize, input_bins: usize, n_classes: usize, seed: u64) -> Self {
        let block = |out_width, stride| BlockSpec {
            out_width,
            stride,
            residual: false,
        };
        CnnConfig {
            input_channels,
            input_bins,
            blocks: vec![block(4, 2), block(8, 2), block(8, 2)],
            pooling: Pooling::Electrode,
            n_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("{} classes, need at least 2", self.n_classes));
        }
        if self.input_channels == 0 || self.input_bins == 0 {
            return bad("empty input image".into());
        }
        let mut width = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_width == 0 || b.stride == 0 {
                return bad(format!("block {i}: width and stride must be >= 1"));
            }
            if b.residual && (b.stride != 1 || b.out_width != width) {
                return bad(format!(
                    "block {i}: residual needs stride 1 and width {width}, got stride {} width {}",
                    b.stride, b.out_width
                ));
            }
            width = b.out_width;
        }
        Ok(())
    }

    /// `(width, height, cols)` of the input to each block and of the final map.
    fn geometry(&self) -> Vec<(usize, usize, usize)> {
        let mut dims = vec![(1, self.input_channels, self.input_bins)];
        for b in &self.blocks {
            let &(_, h, w) = dims.last().unwrap();
            dims.push((b.out_width, (h - 1) / b.stride + 1, (w - 1) / b.stride + 1));
        }
        dims
    }

    pub fn feature_len(&self) -> usize {
        let &(c, _, w) = self.geometry().last().unwrap();
        match self.pooling {
            Pooling::Global => c,
            Pooling::Electrode => c * w,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_bins
    }
}

/// Feature image with its target class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub config: CnnConfig,
    pub params: Params,
}

/// Forward-pass intermediates for one sample.
struct Trace {
    /// Input to each block, then the final map.
    maps: Vec<Vec<f64>>,
    /// Pre-activation of each block.
    pre: Vec<Vec<f64>>,
    features: Vec<f64>,
    probs: Vec<f64>,
}

/// 3x3 convolution, zero padding 1. `input` is `cin x h x w`, the result
/// `cout x oh x ow` with `oh = (h - 1) / stride + 1`. Adds into `out`.
#[allow(clippy::too_many_arguments)]
fn conv3x3(
    input: &[f64],
    weight: &[f64],
    (cin, h, w): (usize, usize, usize),
    (cout, oh, ow): (usize, usize, usize),
    stride: usize,
    out: &mut [f64],
) {
    for co in 0..cout {
        let out_c = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let in_c = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, w, ow, stride);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_c[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out_c[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            out_row[ox] += k * in_row[ox * stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Output positions whose tap `kx` lands inside `[0, w)`.
#[inline]
fn valid_range(kx: usize, w: usize, ow: usize, stride: usize) -> (usize, usize) {
    let lo = if kx == 0 { 1 } else { 0 };
    // ox * stride + kx - 1 <= w - 1
    let hi = if w >= kx { ((w - kx) / stride + 1).min(ow) } else { 0 };
    (lo, hi.max(lo))
}

/// Gradients of [`conv3x3`] w.r.t. its weight and input.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    (cin, h, w): (usize, usize, usize),
    (cout, oh, ow): (usize, usize, usize),
    stride: usize,
    grad_weight: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    let mut grad_input = grad_input;
    for co in 0..cout {
        let g_c = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let in_c = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let k = weight[widx];
                    let (ox_lo, ox_hi) = valid_range(kx, w, ow, stride);
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let in_row = &in_c[iy * w..(iy + 1) * w];
                        let g_row = &g_c[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            acc += g_row[ox] * in_row[ox * stride + kx - 1];
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let gi_row = &mut gi[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                            for ox in ox_lo..ox_hi {
                                gi_row[ox * stride + kx - 1] += k * g_row[ox];
                            }
                        }
                    }
                    grad_weight[widx] += acc;
                }
            }
        }
    }
}

impl Cnn {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new(config: CnnConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        };
        let mut tensors = Vec::new();
        let mut width = 1;
        for (i, b) in config.blocks.iter().enumerate() {
            tensors.push((
                format!("block{i}.weight"),
                uniform(&[b.out_width, width, 3, 3], width * 9),
            ));
            tensors.push((format!("block{i}.bias"), Tensor::zeros(&[b.out_width])));
            width = b.out_width;
        }
        let d = config.feature_len();
        tensors.push(("dense.weight".into(), uniform(&[config.n_classes, d], d)));
        tensors.push(("dense.bias".into(), Tensor::zeros(&[config.n_classes])));
        Ok(Cnn {
            config,
            params: Params { tensors },
        })
    }

    pub fn with_params(config: CnnConfig, params: Params) -> Result<Self, ModelError> {
        let reference = Cnn::new(config.clone())?;
        if !reference.params.same_layout(&params) {
            return Err(ModelError::ShapeMismatch(
                "parameters do not match configuration".into(),
            ));
        }
        Ok(Cnn { config, params })
    }

    fn block_weight(&self, i: usize) -> &[f64] {
        &self.params.tensors[2 * i].1.data
    }

    fn block_bias(&self, i: usize) -> &[f64] {
        &self.params.tensors[2 * i + 1].1.data
    }

    fn dense(&self) -> (&[f64], &[f64]) {
        let n = self.params.tensors.len();
        (&self.params.tensors[n - 2].1.data, &self.params.tensors[n - 1].1.data)
    }

    fn trace(&self, input: &[f64]) -> Result<Trace, ModelError> {
        if input.len() != self.config.input_len() {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} values, expected {} x {}",
                input.len(),
                self.config.input_channels,
                self.config.input_bins
            )));
        }
        let geom = self.config.geometry();
        let mut maps = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.config.blocks.len());
        for (i, b) in self.config.blocks.iter().enumerate() {
            let (ci, h, w) = geom[i];
            let (co, oh, ow) = geom[i + 1];
            let mut z = vec![0.0; co * oh * ow];
            conv3x3(
                maps.last().unwrap(),
                self.block_weight(i),
                (ci, h, w),
                (co, oh, ow),
                b.stride,
                &mut z,
            );
            let bias = self.block_bias(i);
            for (c, chunk) in z.chunks_mut(oh * ow).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias[c]);
            }
            let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if b.residual {
                for (o, x) in a.iter_mut().zip(maps.last().unwrap()) {
                    *o += x;
                }
            }
            pre.push(z);
            maps.push(a);
        }

        let &(c, h, w) = geom.last().unwrap();
        let last = maps.last().unwrap();
        let features: Vec<f64> = match self.config.pooling {
            Pooling::Global => last
                .chunks(h * w)
                .map(|m| m.iter().sum::<f64>() / (h * w) as f64)
                .collect(),
            Pooling::Electrode => {
                let mut f = vec![0.0; c * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            f[ch * w + x] += last[(ch * h + y) * w + x];
                        }
                    }
                }
                f.iter_mut().for_each(|v| *v /= h as f64);
                f
            }
        };
        let (dw, db) = self.dense();
        let d = features.len();
        let logits: Vec<f64> = (0..self.config.n_classes)
            .map(|k| {
                db[k]
                    + dw[k * d..(k + 1) * d]
                        .iter()
                        .zip(&features)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation);
        }
        let probs = softmax(&logits);
        Ok(Trace {
            maps,
            pre,
            features,
            probs,
        })
    }

    /// Class probabilities for one feature image.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.trace(input)?.probs)
    }

    /// Class probability rows for a batch.
    pub fn forward(&self, batch: &[&[f64]]) -> Result<Vec<Vec<f64>>, ModelError> {
        batch.iter().map(|x| self.predict(x)).collect()
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[&Example]) -> Result<(f64, Params), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        let n = batch.len() as f64;
        let geom = self.config.geometry();
        let mut grads = Params::zeros_like(&self.params);
        let mut loss = 0.0;
        let n_tensors = grads.tensors.len();
        let (dense_w, _) = self.dense();

        for ex in batch {
            if ex.class >= self.config.n_classes {
                return Err(ModelError::ShapeMismatch(format!(
                    "class {} >= {} classes",
                    ex.class, self.config.n_classes
                )));
            }
            let t = self.trace(&ex.input)?;
            loss += cross_entropy_row(&t.probs, ex.class);

            let d = t.features.len();
            let dlogits: Vec<f64> = t
                .probs
                .iter()
                .enumerate()
                .map(|(k, p)| (p - if k == ex.class { 1.0 } else { 0.0 }) / n)
                .collect();
            {
                let gw = &mut grads.tensors[n_tensors - 2].1.data;
                for (k, g) in dlogits.iter().enumerate() {
                    for (gw, f) in gw[k * d..(k + 1) * d].iter_mut().zip(&t.features) {
                        *gw += g * f;
                    }
                }
            }
            for (gb, g) in grads.tensors[n_tensors - 1].1.data.iter_mut().zip(&dlogits) {
                *gb += g;
            }
            let mut dfeat = vec![0.0; d];
            for (k, g) in dlogits.iter().enumerate() {
                for (df, w) in dfeat.iter_mut().zip(&dense_w[k * d..(k + 1) * d]) {
                    *df += g * w;
                }
            }

            let &(c, h, w) = geom.last().unwrap();
            let mut dmap = vec![0.0; c * h * w];
            match self.config.pooling {
                Pooling::Global => {
                    for ch in 0..c {
                        let g = dfeat[ch] / (h * w) as f64;
                        dmap[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|v| *v = g);
                    }
                }
                Pooling::Electrode => {
                    for ch in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                dmap[(ch * h + y) * w + x] = dfeat[ch * w + x] / h as f64;
                            }
                        }
                    }
                }
            }

            for (i, b) in self.config.blocks.iter().enumerate().rev() {
                let (ci, ih, iw) = geom[i];
                let (co, oh, ow) = geom[i + 1];
                let dz: Vec<f64> = dmap
                    .iter()
                    .zip(&t.pre[i])
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
                for (c_idx, chunk) in dz.chunks(oh * ow).enumerate() {
                    grads.tensors[2 * i + 1].1.data[c_idx] += chunk.iter().sum::<f64>();
                }
                let mut dinput = if i > 0 || b.residual {
                    Some(vec![0.0; ci * ih * iw])
                } else {
                    None
                };
                conv3x3_backward(
                    &t.maps[i],
                    self.block_weight(i),
                    &dz,
                    (ci, ih, iw),
                    (co, oh, ow),
                    b.stride,
                    &mut grads.tensors[2 * i].1.data,
                    dinput.as_deref_mut(),
                );
                if let Some(mut din) = dinput {
                    if b.residual {
                        for (a, g) in din.iter_mut().zip(&dmap) {
                            *a += g;
                        }
                    }
                    dmap = din;
                }
            }
        }
        if !grads.is_finite() {
            return Err(ModelError::NonFiniteGradient);
        }
        Ok((loss / n, grads))
    }
}
