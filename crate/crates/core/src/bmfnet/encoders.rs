use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::conv_out_len;
use crate::numerics::init::ParamBuilder;
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvSpec {
    pub const fn new(c_out: usize, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self { c_out, kernel, stride, pad }
    }

    fn out(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let ho = conv_out_len(h, self.kernel.0, self.stride.0, self.pad.0);
        let wo = conv_out_len(w, self.kernel.1, self.stride.1, self.pad.1);
        match (ho, wo) {
            (Some(ho), Some(wo)) if c > 0 => Ok((self.c_out, ho, wo)),
            _ => Err(Error::Config(format!("convolution {self:?} does not fit a {c}×{h}×{w} input"))),
        }
    }

    fn params(&self, c_in: usize) -> usize {
        self.c_out * c_in * self.kernel.0 * self.kernel.1 + self.c_out
    }

    fn flops(&self, c_in: usize, out: (usize, usize, usize)) -> u64 {
        2 * (out.0 * out.1 * out.2 * c_in * self.kernel.0 * self.kernel.1) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolSpec {
    fn out(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match (
            conv_out_len(h, self.kernel.0, self.stride.0, 0),
            conv_out_len(w, self.kernel.1, self.stride.1, 0),
        ) {
            (Some(ho), Some(wo)) => Ok((c, ho, wo)),
            _ => Err(Error::Config(format!("pooling {self:?} does not fit a {c}×{h}×{w} input"))),
        }
    }
}

/// conv → ReLU → optional max-pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub conv: ConvSpec,
    pub pool: Option<PoolSpec>,
}

/// AlexNet-style E-nose encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnoseEncoderSpec {
    pub layers: Vec<ConvLayer>,
}

/// ResNet-style EEG encoder: a stem convolution and basic residual stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EegEncoderSpec {
    pub stem: ConvSpec,
    /// (output channels, stride of the first convolution) per stage.
    pub stages: Vec<(usize, (usize, usize))>,
}

const fn layer(c_out: usize, k: (usize, usize), s: (usize, usize), p: (usize, usize), pool: Option<PoolSpec>) -> ConvLayer {
    ConvLayer { conv: ConvSpec::new(c_out, k, s, p), pool }
}

const fn pool(k: (usize, usize), s: (usize, usize)) -> Option<PoolSpec> {
    Some(PoolSpec { kernel: k, stride: s })
}

impl EnoseEncoderSpec {
    /// 1×10×90 → 64×1×5.
    pub fn paper() -> Self {
        Self {
            layers: alloc::vec![
                layer(16, (3, 5), (1, 1), (1, 2), pool((2, 2), (2, 2))),
                layer(32, (3, 3), (1, 1), (1, 1), pool((2, 3), (2, 3))),
                layer(48, (3, 3), (1, 1), (1, 1), None),
                layer(64, (3, 3), (1, 1), (1, 1), None),
                layer(64, (3, 3), (1, 1), (1, 1), pool((2, 3), (2, 3))),
            ],
        }
    }

    /// 1×10×90 → 16×1×2.
    pub fn tiny() -> Self {
        Self {
            layers: alloc::vec![
                layer(4, (3, 5), (2, 5), (1, 0), pool((2, 3), (2, 3))),
                layer(16, (2, 3), (1, 3), (0, 0), None),
            ],
        }
    }

    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let mut s = input;
        for l in &self.layers {
            s = l.conv.out(s)?;
            if let Some(p) = l.pool {
                s = p.out(s)?;
            }
        }
        Ok(s)
    }

    pub fn param_count(&self, input: (usize, usize, usize)) -> usize {
        let mut c = input.0;
        let mut n = 0;
        for l in &self.layers {
            n += l.conv.params(c);
            c = l.conv.c_out;
        }
        n
    }

    pub fn flops(&self, input: (usize, usize, usize)) -> Result<u64> {
        let mut s = input;
        let mut f = 0;
        for l in &self.layers {
            let out = l.conv.out(s)?;
            f += l.conv.flops(s.0, out);
            s = match l.pool {
                Some(p) => p.out(out)?,
                None => out,
            };
        }
        Ok(f)
    }
}

fn basic_block_convs(c_in: usize, c_out: usize, stride: (usize, usize)) -> (ConvSpec, ConvSpec, Option<ConvSpec>) {
    let conv1 = ConvSpec::new(c_out, (3, 3), stride, (1, 1));
    let conv2 = ConvSpec::new(c_out, (3, 3), (1, 1), (1, 1));
    let shortcut = (c_in != c_out || stride != (1, 1)).then(|| ConvSpec::new(c_out, (1, 1), stride, (0, 0)));
    (conv1, conv2, shortcut)
}

impl EegEncoderSpec {
    /// 1×21×256 → 160×1×2.
    pub fn paper() -> Self {
        Self {
            stem: ConvSpec::new(20, (3, 7), (2, 4), (1, 3)),
            stages: alloc::vec![(40, (2, 2)), (80, (2, 2)), (120, (2, 4)), (160, (2, 2))],
        }
    }

    /// 1×21×256 → 16×1×2 with two residual stages.
    pub fn tiny() -> Self {
        Self { stem: ConvSpec::new(4, (1, 32), (1, 8), (0, 12)), stages: alloc::vec![(8, (3, 4)), (16, (7, 4))] }
    }

    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let mut s = self.stem.out(input)?;
        for &(c_out, stride) in &self.stages {
            let (conv1, conv2, shortcut) = basic_block_convs(s.0, c_out, stride);
            let main = conv2.out(conv1.out(s)?)?;
            let skip = match shortcut {
                Some(sc) => sc.out(s)?,
                None => s,
            };
            if main != skip {
                return Err(Error::Config(format!("residual branch {main:?} and shortcut {skip:?} disagree")));
            }
            s = main;
        }
        Ok(s)
    }

    pub fn param_count(&self, input: (usize, usize, usize)) -> usize {
        let mut c = self.stem.c_out;
        let mut n = self.stem.params(input.0);
        for &(c_out, stride) in &self.stages {
            let (conv1, conv2, shortcut) = basic_block_convs(c, c_out, stride);
            n += conv1.params(c) + conv2.params(c_out) + shortcut.map_or(0, |s| s.params(c));
            c = c_out;
        }
        n
    }

    pub fn flops(&self, input: (usize, usize, usize)) -> Result<u64> {
        let mut s = self.stem.out(input)?;
        let mut f = self.stem.flops(input.0, s);
        for &(c_out, stride) in &self.stages {
            let (conv1, conv2, shortcut) = basic_block_convs(s.0, c_out, stride);
            let mid = conv1.out(s)?;
            let out = conv2.out(mid)?;
            f += conv1.flops(s.0, mid) + conv2.flops(c_out, out);
            if let Some(sc) = shortcut {
                f += sc.flops(s.0, out);
            }
            s = out;
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    spec: ConvSpec,
    weight: ParamId,
    bias: ParamId,
}

impl Conv {
    fn new<T: Scalar, R: Rng + ?Sized>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        c_in: usize,
        spec: ConvSpec,
    ) -> Result<Self> {
        let (kh, kw) = spec.kernel;
        Ok(Self {
            spec,
            weight: pb.kaiming(format!("{name}.weight"), &[spec.c_out, c_in, kh, kw], c_in * kh * kw)?,
            bias: pb.zeros(format!("{name}.bias"), &[spec.c_out])?,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b), self.spec.stride, self.spec.pad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnoseEncoder {
    layers: Vec<(Conv, Option<PoolSpec>)>,
}

impl EnoseEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        spec: &EnoseEncoderSpec,
        c_in: usize,
    ) -> Result<Self> {
        let mut c = c_in;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            layers.push((Conv::new(pb, &format!("{name}.conv{i}"), c, l.conv)?, l.pool));
            c = l.conv.c_out;
        }
        Ok(Self { layers })
    }

    /// `[B, C, H, W]` → final feature map.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, (conv, pool)) in self.layers.iter().enumerate() {
            h = conv.forward(tape, store, h)?;
            if i < last {
                h = tape.relu(h)?;
            }
            if let Some(p) = pool {
                h = tape.max_pool2d(h, p.kernel, p.stride)?;
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BasicBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EegEncoder {
    stem: Conv,
    stages: Vec<BasicBlock>,
}

impl EegEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        spec: &EegEncoderSpec,
        c_in: usize,
    ) -> Result<Self> {
        let stem = Conv::new(pb, &format!("{name}.stem"), c_in, spec.stem)?;
        let mut c = spec.stem.c_out;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (i, &(c_out, stride)) in spec.stages.iter().enumerate() {
            let (s1, s2, sc) = basic_block_convs(c, c_out, stride);
            let n = format!("{name}.stage{i}");
            stages.push(BasicBlock {
                conv1: Conv::new(pb, &format!("{n}.conv1"), c, s1)?,
                conv2: Conv::new(pb, &format!("{n}.conv2"), c_out, s2)?,
                shortcut: sc.map(|s| Conv::new(pb, &format!("{n}.shortcut"), c, s)).transpose()?,
            });
            c = c_out;
        }
        Ok(Self { stem, stages })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.stem.forward(tape, store, x)?;
        let mut h = tape.relu(h)?;
        let last = self.stages.len().saturating_sub(1);
        for (i, block) in self.stages.iter().enumerate() {
            let a = block.conv1.forward(tape, store, h)?;
            let a = tape.relu(a)?;
            let a = block.conv2.forward(tape, store, a)?;
            let skip = match &block.shortcut {
                Some(sc) => sc.forward(tape, store, h)?,
                None => h,
            };
            h = tape.add(a, skip)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
