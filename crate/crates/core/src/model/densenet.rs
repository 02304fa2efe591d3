//! Densely connected convolutional backbone.
//!
//! The full configuration reproduces the 121-layer network (stem of 7x7/s2
//! conv + 3x3/s2 max pool, blocks of 6/12/24/16 dense layers with growth 32,
//! halving transitions, 1024 output features). A compact configuration with
//! the same wiring exists for desk-scale tests where no pretrained weights
//! are involved.

use candle_core::{Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::builder::ParamBuilder;
use crate::model::store::ParamInit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// 7x7 stride-2 conv followed by a 3x3 stride-2 max pool (ImageNet-scale
    /// inputs).
    Full,
    /// 3x3 stride-1 conv followed by a 2x2 max pool (tiny test inputs).
    Compact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub stem: StemKind,
    pub init_channels: usize,
    pub growth: usize,
    /// Bottleneck width multiplier: the 1x1 conv in each dense layer outputs
    /// `bn_size * growth` channels.
    pub bn_size: usize,
    pub blocks: Vec<usize>,
}

impl DenseNetConfig {
    pub fn densenet121() -> Self {
        DenseNetConfig {
            stem: StemKind::Full,
            init_channels: 64,
            growth: 32,
            bn_size: 4,
            blocks: vec![6, 12, 24, 16],
        }
    }

    /// Small random-init variant for tests and synthetic runs.
    pub fn tiny() -> Self {
        DenseNetConfig {
            stem: StemKind::Compact,
            init_channels: 8,
            growth: 4,
            bn_size: 2,
            blocks: vec![2, 2],
        }
    }

    /// Channels entering the classifier head.
    pub fn feature_width(&self) -> usize {
        let mut c = self.init_channels;
        for (i, &n) in self.blocks.iter().enumerate() {
            c += n * self.growth;
            if i + 1 != self.blocks.len() {
                c /= 2;
            }
        }
        c
    }
}

struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    fn build(b: &mut ParamBuilder<'_>, name: &str, channels: usize) -> Result<Self> {
        let weight = b.param(&format!("{name}.weight"), &[channels], ParamInit::Const(1.0))?;
        let bias = b.param(&format!("{name}.bias"), &[channels], ParamInit::Const(0.0))?;
        b.param(
            &format!("{name}.running_mean"),
            &[channels],
            ParamInit::Const(0.0),
        )?;
        b.param(
            &format!("{name}.running_var"),
            &[channels],
            ParamInit::Const(1.0),
        )?;
        let running_mean = b.var(&format!("{name}.running_mean"));
        let running_var = b.var(&format!("{name}.running_var"));
        Ok(BatchNorm2d {
            weight,
            bias,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if train {
            // spatial batch norm: statistics over batch and spatial dims
            let xt = x.transpose(0, 1)?; // (C, B, H, W)
            let dims = xt.dims().to_vec();
            let flat = xt.flatten_from(1)?.contiguous()?; // (C, B*H*W)
            let n = flat.dim(1)? as f64;
            let mean = flat.mean_keepdim(1)?; // (C,1)
            let centered = flat.broadcast_sub(&mean)?;
            let biased_var = centered.sqr()?.mean_keepdim(1)?; // (C,1)

            // exponential moving averages; variance uses the unbiased estimate
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_detached_tensor() * (1.0 - m))?
                + (mean.flatten_all()?.detach() * m)?)?;
            self.running_mean.set(&new_mean)?;
            if n > 1.0 {
                let unbiased = (biased_var.flatten_all()?.detach() * (n / (n - 1.0)))?;
                let new_var = ((self.running_var.as_detached_tensor() * (1.0 - m))?
                    + (unbiased * m)?)?;
                self.running_var.set(&new_var)?;
            }

            let normed = centered.broadcast_div(&(biased_var + self.eps)?.sqrt()?)?;
            let scaled = normed
                .broadcast_mul(&self.weight.reshape(((), 1))?)?
                .broadcast_add(&self.bias.reshape(((), 1))?)?;
            Ok(scaled.reshape(dims)?.transpose(0, 1)?)
        } else {
            let shape = (1, c, 1, 1);
            let mean = self.running_mean.as_detached_tensor().reshape(shape)?;
            let var = self.running_var.as_detached_tensor().reshape(shape)?;
            let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
            Ok(normed
                .broadcast_mul(&self.weight.reshape(shape)?)?
                .broadcast_add(&self.bias.reshape(shape)?)?)
        }
    }
}

fn conv2d(
    b: &mut ParamBuilder<'_>,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Conv2d> {
    let weight = b.param(
        &format!("{name}.weight"),
        &[c_out, c_in, kernel, kernel],
        ParamInit::KaimingUniform {
            fan_in: c_in * kernel * kernel,
        },
    )?;
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    Ok(Conv2d::new(weight, None, cfg))
}

/// 3x3/stride-2/pad-1 max pool assembled from differentiable primitives
/// (shifted-window maxima plus stride-2 row/column selection). Inputs must
/// be nonnegative, which holds after ReLU, so zero padding equals -inf
/// padding.
fn max_pool_3x3_s2_p1(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let xp = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let sh = h; // stride-1 pooled size over the padded map
    let sw = w;
    let mut pooled: Option<Tensor> = None;
    for di in 0..3 {
        for dj in 0..3 {
            let v = xp.narrow(2, di, sh)?.narrow(3, dj, sw)?;
            pooled = Some(match pooled {
                None => v,
                Some(acc) => acc.maximum(&v)?,
            });
        }
    }
    let pooled = pooled.expect("nine windows");
    let oh = (h + 2 - 3) / 2 + 1;
    let ow = (w + 2 - 3) / 2 + 1;
    let rows: Vec<u32> = (0..oh).map(|i| (i * 2) as u32).collect();
    let cols: Vec<u32> = (0..ow).map(|i| (i * 2) as u32).collect();
    let dev = x.device();
    let pooled = pooled.index_select(&Tensor::new(rows.as_slice(), dev)?, 2)?;
    Ok(pooled.index_select(&Tensor::new(cols.as_slice(), dev)?, 3)?)
}

struct DenseLayer {
    norm1: BatchNorm2d,
    conv1: Conv2d,
    norm2: BatchNorm2d,
    conv2: Conv2d,
}

impl DenseLayer {
    fn build(b: &mut ParamBuilder<'_>, name: &str, c_in: usize, cfg: &DenseNetConfig) -> Result<Self> {
        let inter = cfg.bn_size * cfg.growth;
        Ok(DenseLayer {
            norm1: BatchNorm2d::build(b, &format!("{name}.norm1"), c_in)?,
            conv1: conv2d(b, &format!("{name}.conv1"), c_in, inter, 1, 1, 0)?,
            norm2: BatchNorm2d::build(b, &format!("{name}.norm2"), inter)?,
            conv2: conv2d(b, &format!("{name}.conv2"), inter, cfg.growth, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.norm1.forward(x, train)?.relu()?;
        let y = self.conv1.forward(&y)?;
        let y = self.norm2.forward(&y, train)?.relu()?;
        let y = self.conv2.forward(&y)?;
        Ok(Tensor::cat(&[x, &y], 1)?)
    }
}

struct Transition {
    norm: BatchNorm2d,
    conv: Conv2d,
}

impl Transition {
    fn build(b: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Transition {
            norm: BatchNorm2d::build(b, &format!("{name}.norm"), c_in)?,
            conv: conv2d(b, &format!("{name}.conv"), c_in, c_out, 1, 1, 0)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.norm.forward(x, train)?.relu()?;
        let y = self.conv.forward(&y)?;
        Ok(y.avg_pool2d(2)?)
    }
}

pub struct DenseNetBackbone {
    config: DenseNetConfig,
    stem_conv: Conv2d,
    stem_norm: BatchNorm2d,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    final_norm: BatchNorm2d,
}

impl DenseNetBackbone {
    pub fn build(b: &mut ParamBuilder<'_>, config: DenseNetConfig) -> Result<Self> {
        let (kernel, stride, padding) = match config.stem {
            StemKind::Full => (7, 2, 3),
            StemKind::Compact => (3, 1, 1),
        };
        let stem_conv = conv2d(
            b,
            "backbone.conv0",
            3,
            config.init_channels,
            kernel,
            stride,
            padding,
        )?;
        let stem_norm = BatchNorm2d::build(b, "backbone.norm0", config.init_channels)?;

        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let mut channels = config.init_channels;
        for (bi, &layers) in config.blocks.iter().enumerate() {
            let mut block = Vec::with_capacity(layers);
            for li in 0..layers {
                let name = format!("backbone.denseblock{}.denselayer{}", bi + 1, li + 1);
                block.push(DenseLayer::build(b, &name, channels, &config)?);
                channels += config.growth;
            }
            blocks.push(block);
            if bi + 1 != config.blocks.len() {
                let name = format!("backbone.transition{}", bi + 1);
                transitions.push(Transition::build(b, &name, channels, channels / 2)?);
                channels /= 2;
            }
        }
        let final_norm = BatchNorm2d::build(b, "backbone.norm5", channels)?;
        Ok(DenseNetBackbone {
            config,
            stem_conv,
            stem_norm,
            blocks,
            transitions,
            final_norm,
        })
    }

    pub fn config(&self) -> &DenseNetConfig {
        &self.config
    }

    /// Pooled feature vector, `(B, feature_width)`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.stem_conv.forward(x)?;
        let y = self.stem_norm.forward(&y, train)?.relu()?;
        let mut y = match self.config.stem {
            StemKind::Full => max_pool_3x3_s2_p1(&y)?,
            StemKind::Compact => y.max_pool2d(2)?,
        };
        for (bi, block) in self.blocks.iter().enumerate() {
            for layer in block {
                y = layer.forward(&y, train)?;
            }
            if bi < self.transitions.len() {
                y = self.transitions[bi].forward(&y, train)?;
            }
        }
        let y = self.final_norm.forward(&y, train)?.relu()?;
        // global average pool over both spatial dims
        Ok(y.mean(D::Minus1)?.mean(D::Minus1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builder::ParamSource;
    use crate::model::store::ParamStore;
    use candle_core::{DType, Device};
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn densenet121_feature_width_is_1024() {
        assert_eq!(DenseNetConfig::densenet121().feature_width(), 1024);
    }

    #[test]
    fn batch_norm_matches_manual_reference() {
        let device = Device::Cpu;
        let mut store = ParamStore::new(device.clone(), DType::F64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut store, ParamSource::Random, &mut rng);
        let bn = BatchNorm2d::build(&mut b, "norm", 2).unwrap();
        b.finish().unwrap();
        // give the affine transform a visible effect
        store
            .get("norm.weight")
            .unwrap()
            .set(&Tensor::new(&[2.0f64, 0.5], &device).unwrap())
            .unwrap();
        store
            .get("norm.bias")
            .unwrap()
            .set(&Tensor::new(&[0.25f64, -1.0], &device).unwrap())
            .unwrap();

        let x = Tensor::rand(-1.0f64, 3.0f64, (2, 2, 2, 2), &device).unwrap();
        let y = bn.forward(&x, true).unwrap();

        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ys = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let affine = [(2.0, 0.25), (0.5, -1.0)];
        let eps = 1e-5;
        // per channel: normalize by biased batch statistics, then affine
        for ch in 0..2usize {
            let pick = |v: &[f64]| -> Vec<f64> {
                let mut out = Vec::new();
                for n in 0..2 {
                    for i in 0..4 {
                        out.push(v[n * 8 + ch * 4 + i]);
                    }
                }
                out
            };
            let xc = pick(&xs);
            let yc = pick(&ys);
            let mean = xc.iter().sum::<f64>() / xc.len() as f64;
            let var = xc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xc.len() as f64;
            for (xv, yv) in xc.iter().zip(&yc) {
                let want = (xv - mean) / (var + eps).sqrt() * affine[ch].0 + affine[ch].1;
                assert!((yv - want).abs() < 1e-9, "channel {ch}: {yv} vs {want}");
            }
            // running stats carry the momentum-weighted unbiased estimate
            let n = xc.len() as f64;
            let rm = bn.running_mean.as_tensor().to_vec1::<f64>().unwrap()[ch];
            let rv = bn.running_var.as_tensor().to_vec1::<f64>().unwrap()[ch];
            assert!((rm - 0.1 * mean).abs() < 1e-12);
            let unbiased = var * n / (n - 1.0);
            assert!((rv - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        }

        // eval mode applies the running statistics, not batch statistics
        let y_eval = bn.forward(&x, false).unwrap();
        let ye = y_eval.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let rm = bn.running_mean.as_tensor().to_vec1::<f64>().unwrap();
        let rv = bn.running_var.as_tensor().to_vec1::<f64>().unwrap();
        for n in 0..2usize {
            for ch in 0..2usize {
                for i in 0..4usize {
                    let idx = n * 8 + ch * 4 + i;
                    let want =
                        (xs[idx] - rm[ch]) / (rv[ch] + eps).sqrt() * affine[ch].0 + affine[ch].1;
                    assert!((ye[idx] - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn tiny_feature_width_matches_block_arithmetic() {
        // 8 + 2*4 = 16 -> /2 = 8 -> 8 + 2*4 = 16
        assert_eq!(DenseNetConfig::tiny().feature_width(), 16);
    }

    #[test]
    fn composed_max_pool_matches_manual_reference() {
        use candle_core::{Device, IndexOp};
        let dev = Device::Cpu;
        let x = Tensor::rand(0f32, 1f32, (1, 2, 9, 9), &dev).unwrap();
        let y = max_pool_3x3_s2_p1(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 5, 5]);
        let xs = x.i((0, 0)).unwrap().to_vec2::<f32>().unwrap();
        let ys = y.i((0, 0)).unwrap().to_vec2::<f32>().unwrap();
        for (oi, row) in ys.iter().enumerate() {
            for (oj, &pooled) in row.iter().enumerate() {
                let mut m = f32::NEG_INFINITY;
                for di in 0..3 {
                    for dj in 0..3 {
                        let ii = (oi * 2 + di) as isize - 1;
                        let jj = (oj * 2 + dj) as isize - 1;
                        if (0..9).contains(&ii) && (0..9).contains(&jj) {
                            m = m.max(xs[ii as usize][jj as usize]);
                        }
                    }
                }
                assert!((pooled - m).abs() < 1e-6);
            }
        }
    }
}
