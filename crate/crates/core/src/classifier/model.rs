use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Layer sizes of the two-convolution network.
///
/// `input → conv(k1, c1) → ReLU → maxpool(2) → conv(k2, c2) → ReLU →
/// maxpool(2) → flatten → dense(h) → ReLU → dropout → output`, all
/// convolutions with valid padding and stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub dense_units: usize,
    /// 1 for a sigmoid binary head, otherwise a softmax over this many classes.
    pub outputs: usize,
}

/// Lengths along the sequence axis after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shapes {
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    pub flat: usize,
}

impl Architecture {
    /// Paper-sized network for 22-point streamlines: 66 → 62 → 31 → 29 → 14.
    pub fn streamline(outputs: usize) -> Self {
        Architecture {
            input_len: 66,
            conv1_filters: 16,
            conv1_kernel: 5,
            conv2_filters: 32,
            conv2_kernel: 3,
            dense_units: 128,
            outputs,
        }
    }

    pub fn shapes(&self) -> Result<Shapes> {
        let bad = |what: &str| Error::ShapeMismatch(format!("{what} for {self:?}"));
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.dense_units == 0 || self.outputs == 0 {
            return Err(bad("zero-sized layer"));
        }
        if self.outputs == 2 {
            return Err(bad("two classes use a single sigmoid output"));
        }
        let conv1 = (self.input_len + 1).checked_sub(self.conv1_kernel).filter(|&l| l > 0).ok_or_else(|| bad("input shorter than conv1 kernel"))?;
        let pool1 = conv1 / 2;
        let conv2 = (pool1 + 1).checked_sub(self.conv2_kernel).filter(|&l| l > 0).ok_or_else(|| bad("pool1 shorter than conv2 kernel"))?;
        let pool2 = conv2 / 2;
        if pool2 == 0 {
            return Err(bad("nothing left after the second pooling"));
        }
        Ok(Shapes { conv1, pool1, conv2, pool2, flat: pool2 * self.conv2_filters })
    }

    pub fn n_classes(&self) -> usize {
        if self.outputs == 1 {
            2
        } else {
            self.outputs
        }
    }

    fn layout(&self) -> Result<Layout> {
        let s = self.shapes()?;
        let sizes = [
            self.conv1_filters * self.conv1_kernel,
            self.conv1_filters,
            self.conv2_filters * self.conv1_filters * self.conv2_kernel,
            self.conv2_filters,
            self.dense_units * s.flat,
            self.dense_units,
            self.outputs * self.dense_units,
            self.outputs,
        ];
        let mut offsets = [0usize; 9];
        for i in 0..8 {
            offsets[i + 1] = offsets[i] + sizes[i];
        }
        Ok(Layout { offsets, shapes: s })
    }

    pub fn n_params(&self) -> Result<usize> {
        Ok(self.layout()?.offsets[8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    offsets: [usize; 9],
    shapes: Shapes,
}

impl Layout {
    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Parameter block index, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    DenseWeight,
    DenseBias,
    OutputWeight,
    OutputBias,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Conv1Weight,
        Block::Conv1Bias,
        Block::Conv2Weight,
        Block::Conv2Bias,
        Block::DenseWeight,
        Block::DenseBias,
        Block::OutputWeight,
        Block::OutputBias,
    ];
}

/// How dropout behaves during a forward pass.
pub enum Dropout<'a> {
    /// Evaluation: identity.
    Off,
    /// Training: fresh Bernoulli mask per sample.
    Sample(&'a mut Rng),
    /// Training with a fixed keep-mask, for reproducible gradient checks.
    Mask(&'a [bool]),
}

/// Network weights stored in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    layout: Layout,
    pub dropout_rate: f64,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    input: Vec<f64>,
    z1: Vec<f64>,
    pool1: Vec<f64>,
    arg1: Vec<usize>,
    z2: Vec<f64>,
    flat: Vec<f64>,
    arg2: Vec<usize>,
    zd: Vec<f64>,
    /// Dense-layer activations before dropout: the exported embedding.
    pub dense: Vec<f64>,
    /// Per-unit dropout multiplier (0 or 1/(1-rate); 1 when off).
    scale: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Sigmoid score (binary) or softmax probabilities.
    pub output: Vec<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Model {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let layout = arch.layout()?;
        Ok(Model { arch, layout, dropout_rate: 0.5, params: vec![0.0; layout.offsets[8]] })
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform for the output
    /// layer, zero biases.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        let mut m = Model::zeros(arch)?;
        let s = m.layout.shapes;
        let fans = [
            (Block::Conv1Weight, arch.conv1_kernel as f64, None),
            (Block::Conv2Weight, (arch.conv1_filters * arch.conv2_kernel) as f64, None),
            (Block::DenseWeight, s.flat as f64, None),
            (Block::OutputWeight, arch.dense_units as f64, Some(arch.outputs as f64)),
        ];
        for (block, fan_in, fan_out) in fans {
            let limit = match fan_out {
                None => (6.0 / fan_in).sqrt(),
                Some(out) => (6.0 / (fan_in + out)).sqrt(),
            };
            for w in m.block_mut(block) {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn from_params(arch: Architecture, dropout_rate: f64, params: Vec<f64>) -> Result<Self> {
        let mut m = Model::zeros(arch)?;
        if params.len() != m.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        m.dropout_rate = dropout_rate;
        Ok(m)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn shapes(&self) -> Shapes {
        self.layout.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.params[self.layout.range(b as usize)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b as usize);
        &mut self.params[r]
    }

    pub fn block_range(&self, b: Block) -> std::ops::Range<usize> {
        self.layout.range(b as usize)
    }

    pub fn forward(&self, x: &[f64], dropout: Dropout<'_>) -> Result<Activations> {
        let a = &self.arch;
        let s = self.layout.shapes;
        if x.len() != a.input_len {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, model expects {}",
                x.len(),
                a.input_len
            )));
        }
        let (c1, k1, c2, k2, h) = (a.conv1_filters, a.conv1_kernel, a.conv2_filters, a.conv2_kernel, a.dense_units);
        let w1 = self.block(Block::Conv1Weight);
        let b1 = self.block(Block::Conv1Bias);
        let w2 = self.block(Block::Conv2Weight);
        let b2 = self.block(Block::Conv2Bias);
        let wd = self.block(Block::DenseWeight);
        let bd = self.block(Block::DenseBias);
        let wo = self.block(Block::OutputWeight);
        let bo = self.block(Block::OutputBias);

        let mut z1 = vec![0.0; c1 * s.conv1];
        for f in 0..c1 {
            let w = &w1[f * k1..(f + 1) * k1];
            for t in 0..s.conv1 {
                let acc: f64 = w.iter().zip(&x[t..t + k1]).map(|(w, x)| w * x).sum();
                z1[f * s.conv1 + t] = b1[f] + acc;
            }
        }
        let (pool1, arg1) = max_pool(&z1, c1, s.conv1, s.pool1);

        let mut z2 = vec![0.0; c2 * s.conv2];
        for o in 0..c2 {
            for t in 0..s.conv2 {
                let mut acc = b2[o];
                for i in 0..c1 {
                    let w = &w2[(o * c1 + i) * k2..(o * c1 + i + 1) * k2];
                    let p = &pool1[i * s.pool1 + t..i * s.pool1 + t + k2];
                    acc += w.iter().zip(p).map(|(w, p)| w * p).sum::<f64>();
                }
                z2[o * s.conv2 + t] = acc;
            }
        }
        let (flat, arg2) = max_pool(&z2, c2, s.conv2, s.pool2);

        let mut zd = vec![0.0; h];
        for (u, z) in zd.iter_mut().enumerate() {
            let row = &wd[u * s.flat..(u + 1) * s.flat];
            *z = bd[u] + row.iter().zip(&flat).map(|(w, v)| w * v).sum::<f64>();
        }
        let dense: Vec<f64> = zd.iter().map(|&z| relu(z)).collect();
        let keep = 1.0 - self.dropout_rate;
        let scale: Vec<f64> = match dropout {
            Dropout::Off => vec![1.0; h],
            Dropout::Sample(rng) => (0..h)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
            Dropout::Mask(mask) => {
                if mask.len() != h {
                    return Err(Error::ShapeMismatch("dropout mask length".into()));
                }
                mask.iter().map(|&k| if k { 1.0 / keep } else { 0.0 }).collect()
            }
        };
        let hidden: Vec<f64> = dense.iter().zip(&scale).map(|(d, s)| d * s).collect();

        let logits: Vec<f64> = (0..a.outputs)
            .map(|o| bo[o] + wo[o * h..(o + 1) * h].iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let output = if a.outputs == 1 { vec![sigmoid(logits[0])] } else { softmax(&logits) };
        Ok(Activations {
            input: x.to_vec(),
            z1,
            pool1,
            arg1,
            z2,
            flat,
            arg2,
            zd,
            dense,
            scale,
            hidden,
            logits,
            output,
        })
    }

    /// Cross-entropy of one sample (binary or categorical by architecture).
    pub fn sample_loss(&self, act: &Activations, label: usize) -> f64 {
        if self.arch.outputs == 1 {
            let z = act.logits[0];
            let y = if label == 1 { 1.0 } else { 0.0 };
            z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
        } else {
            let max = act.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + act.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            lse - act.logits[label]
        }
    }

    /// Accumulate `weight · ∂loss/∂params` for one sample into `grad`.
    pub fn backward(&self, act: &Activations, label: usize, weight: f64, grad: &mut [f64]) {
        let a = &self.arch;
        let s = self.layout.shapes;
        let (c1, k1, c2, k2, h) = (a.conv1_filters, a.conv1_kernel, a.conv2_filters, a.conv2_kernel, a.dense_units);
        let r = |b: Block| self.layout.range(b as usize);

        let dlogits: Vec<f64> = if a.outputs == 1 {
            let y = if label == 1 { 1.0 } else { 0.0 };
            vec![weight * (act.output[0] - y)]
        } else {
            act.output
                .iter()
                .enumerate()
                .map(|(o, p)| weight * (p - if o == label { 1.0 } else { 0.0 }))
                .collect()
        };

        let wo = self.block(Block::OutputWeight);
        let mut dhidden = vec![0.0; h];
        {
            let (gwo, gbo) = (r(Block::OutputWeight), r(Block::OutputBias));
            for (o, &dl) in dlogits.iter().enumerate() {
                grad[gbo.start + o] += dl;
                for u in 0..h {
                    grad[gwo.start + o * h + u] += dl * act.hidden[u];
                    dhidden[u] += dl * wo[o * h + u];
                }
            }
        }

        let dzd: Vec<f64> = (0..h)
            .map(|u| if act.zd[u] > 0.0 { dhidden[u] * act.scale[u] } else { 0.0 })
            .collect();
        let wd = self.block(Block::DenseWeight);
        let mut dflat = vec![0.0; s.flat];
        {
            let (gwd, gbd) = (r(Block::DenseWeight), r(Block::DenseBias));
            for (u, &dz) in dzd.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                grad[gbd.start + u] += dz;
                let row = gwd.start + u * s.flat;
                for f in 0..s.flat {
                    grad[row + f] += dz * act.flat[f];
                    dflat[f] += dz * wd[u * s.flat + f];
                }
            }
        }

        let mut dz2 = vec![0.0; c2 * s.conv2];
        for (j, &src) in act.arg2.iter().enumerate() {
            if act.z2[src] > 0.0 {
                dz2[src] += dflat[j];
            }
        }
        let w2 = self.block(Block::Conv2Weight);
        let mut dpool1 = vec![0.0; c1 * s.pool1];
        {
            let (gw2, gb2) = (r(Block::Conv2Weight), r(Block::Conv2Bias));
            for o in 0..c2 {
                for t in 0..s.conv2 {
                    let d = dz2[o * s.conv2 + t];
                    if d == 0.0 {
                        continue;
                    }
                    grad[gb2.start + o] += d;
                    for i in 0..c1 {
                        let wbase = (o * c1 + i) * k2;
                        for k in 0..k2 {
                            grad[gw2.start + wbase + k] += d * act.pool1[i * s.pool1 + t + k];
                            dpool1[i * s.pool1 + t + k] += d * w2[wbase + k];
                        }
                    }
                }
            }
        }

        let mut dz1 = vec![0.0; c1 * s.conv1];
        for (j, &src) in act.arg1.iter().enumerate() {
            if act.z1[src] > 0.0 {
                dz1[src] += dpool1[j];
            }
        }
        let (gw1, gb1) = (r(Block::Conv1Weight), r(Block::Conv1Bias));
        for f in 0..c1 {
            for t in 0..s.conv1 {
                let d = dz1[f * s.conv1 + t];
                if d == 0.0 {
                    continue;
                }
                grad[gb1.start + f] += d;
                for k in 0..k1 {
                    grad[gw1.start + f * k1 + k] += d * act.input[t + k];
                }
            }
        }
    }

    /// Mean loss over a batch and its exact gradient. `masks`, when given,
    /// fixes the dropout keep-mask of every sample.
    pub fn loss_and_grad(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        mut dropout: BatchDropout<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        if xs.len() != labels.len() || xs.is_empty() {
            return Err(Error::ShapeMismatch("batch inputs and labels differ in length".into()));
        }
        let weight = 1.0 / xs.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (i, (x, &y)) in xs.iter().zip(labels).enumerate() {
            let d = match &mut dropout {
                BatchDropout::Off => Dropout::Off,
                BatchDropout::Sample(rng) => Dropout::Sample(rng),
                BatchDropout::Masks(m) => Dropout::Mask(&m[i]),
            };
            let act = self.forward(x, d)?;
            loss += weight * self.sample_loss(&act, y);
            self.backward(&act, y, weight, &mut grad);
        }
        Ok((loss, grad))
    }
}

pub enum BatchDropout<'a> {
    Off,
    Sample(&'a mut Rng),
    Masks(&'a [Vec<bool>]),
}

/// Non-overlapping max pooling of width 2 per channel. A trailing odd
/// element is dropped. Returns pooled values and the source index of each.
fn max_pool(z: &[f64], channels: usize, len: usize, out_len: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(channels * out_len);
    let mut arg = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for t in 0..out_len {
            let (i, j) = (c * len + 2 * t, c * len + 2 * t + 1);
            let (v, src) = if z[i] >= z[j] { (z[i], i) } else { (z[j], j) };
            out.push(relu(v));
            arg.push(src);
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn shape_chain() {
        let s = Architecture::streamline(1).shapes().unwrap();
        assert_eq!((s.conv1, s.pool1, s.conv2, s.pool2, s.flat), (62, 31, 29, 14, 14 * 32));
        let bad = Architecture { input_len: 6, ..Architecture::streamline(1) };
        assert!(bad.shapes().is_err());
        assert!(Architecture::streamline(2).shapes().is_err());
    }

    #[test]
    fn zero_model_scores_half() {
        let m = Model::zeros(Architecture::streamline(1)).unwrap();
        let act = m.forward(&[0.3; 66], Dropout::Off).unwrap();
        assert_eq!(act.output, vec![0.5]);
        assert!(m.forward(&[0.0; 65], Dropout::Off).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = rng_for(1, &[]);
        let m = Model::init(Architecture::streamline(3), &mut rng).unwrap();
        let x: Vec<f64> = (0..66).map(|i| ((i * 7) % 13) as f64 / 6.5 - 1.0).collect();
        let act = m.forward(&x, Dropout::Off).unwrap();
        assert!((act.output.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(act.dense.len(), 128);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = rng_for(2, &[]);
        let m = Model::init(Architecture::streamline(1), &mut rng).unwrap();
        let x = vec![0.25; 66];
        let a = m.forward(&x, Dropout::Off).unwrap().output;
        let b = m.forward(&x, Dropout::Off).unwrap().output;
        assert_eq!(a, b);
        assert!(a[0] > 0.0 && a[0] < 1.0);
    }
}
