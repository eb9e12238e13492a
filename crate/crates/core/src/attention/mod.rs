//! Patch embedding with class token, multi-head attention and the
//! crossmodal / self-attention transformer blocks.

use alloc::format;
use alloc::string::String;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::init::ParamBuilder;
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhaConfig {
    pub heads: usize,
    pub head_dim: usize,
}

impl MhaConfig {
    pub fn new(hidden: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::Config(format!("hidden size {hidden} is not divisible by {heads} heads")));
        }
        Ok(Self { heads, head_dim: hidden / heads })
    }

    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Score divisor `d = sqrt(head_dim)`.
    pub fn scale(&self) -> f64 {
        (self.head_dim as f64).sqrt()
    }
}

/// Scaled dot-product attention over `h` heads followed by the output
/// projection `w_h` (`[e, e]`).
///
/// `q` is `[B, l_q, e]`, `k` and `v` are `[B, l_k, e]`. Returns the projected
/// output `[B, l_q, e]` and the post-softmax maps `[B, h, l_q, l_k]`.
pub fn mha<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, w_h: Var, cfg: MhaConfig) -> Result<(Var, Var)> {
    let e = cfg.hidden();
    let check = |shape: &[usize], what: &str| -> Result<(usize, usize)> {
        if shape.len() != 3 || shape[2] != e {
            return Err(Error::shape("mha", format!("{what} has shape {shape:?}, expected [B, l, {e}]")));
        }
        Ok((shape[0], shape[1]))
    };
    let (b, lq) = check(tape.shape(q), "Q")?;
    let (bk, lk) = check(tape.shape(k), "K")?;
    if bk != b || tape.shape(v) != tape.shape(k) {
        return Err(Error::shape(
            "mha",
            format!("Q {:?}, K {:?}, V {:?}", tape.shape(q), tape.shape(k), tape.shape(v)),
        ));
    }
    let (h, d) = (cfg.heads, cfg.head_dim);
    let split = |tape: &mut Tape<T>, x: Var, l: usize| -> Result<Var> {
        let x = tape.reshape(x, &[b, l, h, d])?;
        tape.permute(x, &[0, 2, 1, 3])
    };
    let qh = split(tape, q, lq)?;
    let kh = split(tape, k, lk)?;
    let vh = split(tape, v, lk)?;
    let scores = tape.matmul(qh, kh, true)?;
    let scores = tape.scale(scores, T::from_f64(1.0 / cfg.scale()))?;
    let maps = tape.softmax(scores)?;
    let heads = tape.matmul(maps, vh, false)?;
    let heads = tape.permute(heads, &[0, 2, 1, 3])?;
    let concat = tape.reshape(heads, &[b, lq, e])?;
    let out = tape.linear(concat, w_h, None)?;
    Ok((out, maps))
}

/// Geometry of a `1 × H × W` feature map cut into `kh × kw` patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedSpec {
    pub map: (usize, usize),
    pub kernel: (usize, usize),
}

impl EmbedSpec {
    pub fn patches(&self) -> Result<usize> {
        let ((hh, ww), (kh, kw)) = (self.map, self.kernel);
        if kh == 0 || kw == 0 || hh % kh != 0 || ww % kw != 0 {
            return Err(Error::Config(format!("map {hh}×{ww} is not divisible into {kh}×{kw} patches")));
        }
        Ok((hh / kh) * (ww / kw))
    }

    /// Sequence length including the class token.
    pub fn tokens(&self) -> Result<usize> {
        Ok(self.patches()? + 1)
    }
}

/// Stride-equals-kernel convolution to `e` channels, flattened row-major
/// into patch tokens, with a learned class token prepended.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbedding {
    pub spec: EmbedSpec,
    pub hidden: usize,
    weight: ParamId,
    bias: ParamId,
    class_token: ParamId,
    positional: Option<ParamId>,
}

impl PatchEmbedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        spec: EmbedSpec,
        hidden: usize,
        positional: bool,
    ) -> Result<Self> {
        let tokens = spec.tokens()?;
        let (kh, kw) = spec.kernel;
        Ok(Self {
            spec,
            hidden,
            weight: pb.linear(format!("{name}.weight"), &[hidden, 1, kh, kw], kh * kw)?,
            bias: pb.zeros(format!("{name}.bias"), &[hidden])?,
            class_token: pb.normal(format!("{name}.cls"), &[hidden], 1.0)?,
            positional: if positional {
                Some(pb.normal(format!("{name}.pos"), &[tokens, hidden], 1.0)?)
            } else {
                None
            },
        })
    }

    /// `[B, 1, H, W]` → `[B, 1 + patches, e]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (hh, ww) = self.spec.map;
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != [1, hh, ww] {
            return Err(Error::shape("embed", format!("input {shape:?}, expected [B, 1, {hh}, {ww}]")));
        }
        let b = shape[0];
        let patches = self.spec.patches()?;
        let w = tape.param(store, self.weight);
        let bias = tape.param(store, self.bias);
        let y = tape.conv2d(x, w, Some(bias), self.spec.kernel, (0, 0))?;
        let y = tape.reshape(y, &[b, self.hidden, patches])?;
        let y = tape.permute(y, &[0, 2, 1])?;
        let cls = tape.param(store, self.class_token);
        let mut seq = tape.prepend_token(y, cls)?;
        if let Some(pos) = self.positional {
            let pos = tape.param(store, pos);
            seq = tape.add_broadcast(seq, pos)?;
        }
        Ok(seq)
    }
}

/// How one side of a block obtains its token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    /// `1 × H × W` feature map, patch-embedded.
    Map(EmbedSpec),
    /// Already an `l × e` sequence.
    Tokens(usize),
}

impl SourceKind {
    pub fn tokens(&self) -> Result<usize> {
        match self {
            SourceKind::Map(spec) => spec.tokens(),
            SourceKind::Tokens(l) => Ok(*l),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Queries from the first source, keys/values from the second.
    Cross { query: SourceKind, key_value: SourceKind },
    SelfAttention { source: SourceKind },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub positional: bool,
}

impl BlockSpec {
    pub fn mha(&self) -> Result<MhaConfig> {
        MhaConfig::new(self.hidden, self.heads)
    }

    /// (query length, key/value length).
    pub fn lengths(&self) -> Result<(usize, usize)> {
        match self.kind {
            BlockKind::Cross { query, key_value } => Ok((query.tokens()?, key_value.tokens()?)),
            BlockKind::SelfAttention { source } => {
                let l = source.tokens()?;
                Ok((l, l))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerNormParams {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNormParams {
    fn new<T: Scalar, R: Rng + ?Sized>(pb: &mut ParamBuilder<'_, T, R>, name: &str, e: usize) -> Result<Self> {
        Ok(Self { gamma: pb.ones(format!("{name}.gamma"), &[e])?, beta: pb.zeros(format!("{name}.beta"), &[e])? })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Embedding and pre-attention LN of one source.
#[derive(Clone, Debug, PartialEq)]
struct SourceParams {
    kind: SourceKind,
    embed: Option<PatchEmbedding>,
    norm: LayerNormParams,
}

impl SourceParams {
    fn new<T: Scalar, R: Rng + ?Sized>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        suffix: &str,
        kind: SourceKind,
        spec: &BlockSpec,
    ) -> Result<Self> {
        let embed = match kind {
            SourceKind::Map(es) => {
                Some(PatchEmbedding::new(pb, &format!("{name}.embed{suffix}"), es, spec.hidden, spec.positional)?)
            }
            SourceKind::Tokens(_) => None,
        };
        Ok(Self { kind, embed, norm: LayerNormParams::new(pb, &format!("{name}.ln{suffix}"), spec.hidden)? })
    }

    /// Returns (embedded sequence, normalized sequence).
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, e: usize) -> Result<(Var, Var)> {
        let seq = match (&self.embed, self.kind) {
            (Some(embed), _) => embed.forward(tape, store, x)?,
            (None, SourceKind::Tokens(l)) => {
                let shape = tape.shape(x);
                if shape.len() != 3 || shape[1..] != [l, e] {
                    return Err(Error::shape("block", format!("token input {shape:?}, expected [B, {l}, {e}]")));
                }
                x
            }
            (None, SourceKind::Map(_)) => unreachable!("map sources always carry an embedding"),
        };
        let normed = self.norm.forward(tape, store, seq)?;
        Ok((seq, normed))
    }
}

/// Tapped activations of one block forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockTaps {
    /// Post-softmax maps, `[B, h, l_q, l_k]`.
    pub attn: Var,
    /// Block output `Z`, `[B, l_q, e]`.
    pub hidden: Var,
}

/// `Y = MHA(LN(q)·Wq, LN(kv)·Wk, LN(kv)·Wv) + q`, `Z = MLP(LN(Y)) + Y`, where
/// `q` and `kv` are the (embedded) sources.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub name: String,
    pub spec: BlockSpec,
    query: SourceParams,
    key_value: Option<SourceParams>,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wh: ParamId,
    ln_mlp: LayerNormParams,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

impl AttentionBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: impl Into<String>,
        spec: BlockSpec,
    ) -> Result<Self> {
        let name = name.into();
        spec.mha()?;
        let e = spec.hidden;
        let wide = e * spec.mlp_ratio;
        let (query, key_value) = match spec.kind {
            BlockKind::Cross { query, key_value } => (
                SourceParams::new(pb, &name, "_q", query, &spec)?,
                Some(SourceParams::new(pb, &name, "_kv", key_value, &spec)?),
            ),
            BlockKind::SelfAttention { source } => (SourceParams::new(pb, &name, "", source, &spec)?, None),
        };
        let n = &name;
        Ok(Self {
            wq: pb.linear(format!("{n}.mha.wq"), &[e, e], e)?,
            wk: pb.linear(format!("{n}.mha.wk"), &[e, e], e)?,
            wv: pb.linear(format!("{n}.mha.wv"), &[e, e], e)?,
            wh: pb.linear(format!("{n}.mha.wh"), &[e, e], e)?,
            ln_mlp: LayerNormParams::new(pb, &format!("{n}.ln_mlp"), e)?,
            fc1: (pb.linear(format!("{n}.mlp.fc1.weight"), &[e, wide], e)?, pb.zeros(format!("{n}.mlp.fc1.bias"), &[wide])?),
            fc2: (pb.linear(format!("{n}.mlp.fc2.weight"), &[wide, e], wide)?, pb.zeros(format!("{n}.mlp.fc2.bias"), &[e])?),
            name,
            spec,
            query,
            key_value,
        })
    }

    pub fn is_cross(&self) -> bool {
        self.key_value.is_some()
    }

    /// Runs the block. Self-attention blocks take `other = None`; crossmodal
    /// blocks require the key/value source.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        src: Var,
        other: Option<Var>,
    ) -> Result<BlockTaps> {
        let e = self.spec.hidden;
        let (residual, q_in) = self.query.forward(tape, store, src, e)?;
        let kv_in = match (&self.key_value, other) {
            (Some(kv), Some(other)) => kv.forward(tape, store, other, e)?.1,
            (None, None) => q_in,
            (Some(_), None) => {
                return Err(Error::Config(format!("crossmodal block {} needs a key/value source", self.name)))
            }
            (None, Some(_)) => {
                return Err(Error::Config(format!("self-attention block {} takes a single source", self.name)))
            }
        };
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let wh = tape.param(store, self.wh);
        let q = tape.linear(q_in, wq, None)?;
        let k = tape.linear(kv_in, wk, None)?;
        let v = tape.linear(kv_in, wv, None)?;
        let (attended, attn) = mha(tape, q, k, v, wh, self.spec.mha()?)?;
        let y = tape.add(attended, residual)?;
        let normed = self.ln_mlp.forward(tape, store, y)?;
        let (w1, b1) = (tape.param(store, self.fc1.0), tape.param(store, self.fc1.1));
        let (w2, b2) = (tape.param(store, self.fc2.0), tape.param(store, self.fc2.1));
        let hidden = tape.linear(normed, w1, Some(b1))?;
        let hidden = tape.gelu(hidden)?;
        let mlp = tape.linear(hidden, w2, Some(b2))?;
        let z = tape.add(mlp, y)?;
        Ok(BlockTaps { attn, hidden: z })
    }

    /// Number of scalar parameters the block owns.
    pub fn param_count(spec: &BlockSpec) -> Result<usize> {
        let e = spec.hidden;
        let wide = e * spec.mlp_ratio;
        let source = |kind: SourceKind| -> Result<usize> {
            let ln = 2 * e;
            Ok(match kind {
                SourceKind::Map(es) => {
                    let pos = if spec.positional { es.tokens()? * e } else { 0 };
                    e * es.kernel.0 * es.kernel.1 + e + e + pos + ln
                }
                SourceKind::Tokens(_) => ln,
            })
        };
        let sources = match spec.kind {
            BlockKind::Cross { query, key_value } => source(query)? + source(key_value)?,
            BlockKind::SelfAttention { source: s } => source(s)?,
        };
        Ok(sources + 4 * e * e + 2 * e + (e * wide + wide) + (wide * e + e))
    }

    /// Forward floating-point operations per sample, counting a multiply-add
    /// as two.
    pub fn flops(spec: &BlockSpec) -> Result<u64> {
        let e = spec.hidden as u64;
        let wide = e * spec.mlp_ratio as u64;
        let (lq, lk) = spec.lengths()?;
        let (lq, lk) = (lq as u64, lk as u64);
        let embed = |kind: SourceKind| -> Result<u64> {
            Ok(match kind {
                SourceKind::Map(es) => 2 * es.patches()? as u64 * e * (es.kernel.0 * es.kernel.1) as u64,
                SourceKind::Tokens(_) => 0,
            })
        };
        let embeds = match spec.kind {
            BlockKind::Cross { query, key_value } => embed(query)? + embed(key_value)?,
            BlockKind::SelfAttention { source } => embed(source)?,
        };
        let projections = 2 * e * e * (lq + 2 * lk) + 2 * lq * e * e;
        let attention = 2 * lq * lk * e * 2;
        let mlp = 2 * lq * e * wide * 2;
        Ok(embeds + projections + attention + mlp)
    }
}
