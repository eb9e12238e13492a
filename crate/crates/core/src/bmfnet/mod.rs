//! The BMFNet teacher and student models and their ablations.

mod encoders;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use encoders::{ConvLayer, ConvSpec, EegEncoder, EegEncoderSpec, EnoseEncoder, EnoseEncoderSpec, PoolSpec};

use crate::attention::{AttentionBlock, BlockKind, BlockSpec, BlockTaps, EmbedSpec, SourceKind};
use crate::error::{Error, Result, StageExt};
use crate::numerics::init::ParamBuilder;
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::signals::MultimodalSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Teacher,
    Student,
    /// EEG-only student: no E-nose encoder, no MFI.
    BnetS,
    /// E-nose-only student: no EEG encoder, no MFI.
    MnetS,
    /// Student without the aligned-EEG branch.
    NoAefm,
    /// Student trained without the alignment term.
    NoAlignment,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Teacher, Variant::Student, Variant::BnetS, Variant::MnetS, Variant::NoAefm, Variant::NoAlignment];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Teacher => "teacher",
            Variant::Student => "student",
            Variant::BnetS => "bnet_s",
            Variant::MnetS => "mnet_s",
            Variant::NoAefm => "no_aefm",
            Variant::NoAlignment => "no_alignment",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown model variant {name:?}")))
    }
}

/// Which encoders feed the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Both,
    EegOnly,
    EnoseOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub modality: Modality,
    /// Crossmodal/self block pairs in MFI.
    pub mfi_pairs: usize,
    pub aefm_blocks: usize,
    pub ff_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub positional: bool,
    /// Whether the training loss includes MSE(m, b).
    pub alignment: bool,
    pub eeg_input: (usize, usize),
    pub enose_input: (usize, usize),
    /// Shape both encoder outputs are reshaped to.
    pub feature_map: (usize, usize),
    pub mfi_kernel: (usize, usize),
    /// Map the spliced class tokens are reshaped to, and its patch kernel.
    pub ff_map: (usize, usize),
    pub ff_kernel: (usize, usize),
    pub enose_encoder: EnoseEncoderSpec,
    pub eeg_encoder: EegEncoderSpec,
}

impl ModelConfig {
    fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        let (mfi, aefm, ff) = match variant {
            Variant::Teacher => (2, 4, 4),
            Variant::Student | Variant::NoAlignment => (1, 2, 2),
            Variant::BnetS | Variant::MnetS => (0, 2, 2),
            Variant::NoAefm => (1, 0, 2),
        };
        self.mfi_pairs = mfi;
        self.aefm_blocks = aefm;
        self.ff_blocks = ff;
        self.modality = match variant {
            Variant::BnetS => Modality::EegOnly,
            Variant::MnetS => Modality::EnoseOnly,
            _ => Modality::Both,
        };
        self.alignment = self.modality == Modality::Both && variant != Variant::NoAlignment;
        if self.single_stream() {
            self.ff_map.1 /= 2;
            self.ff_kernel.1 = (self.ff_kernel.1 / 2).max(1);
        }
        self
    }

    /// e = 320, h = 8, 1×16×20 features, 161 MFI tokens, 81 FF tokens.
    pub fn paper(variant: Variant) -> Self {
        Self {
            variant,
            modality: Modality::Both,
            mfi_pairs: 0,
            aefm_blocks: 0,
            ff_blocks: 0,
            hidden: 320,
            heads: 8,
            mlp_ratio: 4,
            classes: 2,
            positional: false,
            alignment: true,
            eeg_input: (21, 256),
            enose_input: (10, 90),
            feature_map: (16, 20),
            mfi_kernel: (1, 2),
            ff_map: (16, 40),
            ff_kernel: (2, 4),
            enose_encoder: EnoseEncoderSpec::paper(),
            eeg_encoder: EegEncoderSpec::paper(),
        }
        .with_variant(variant)
    }

    /// Reduced profile for desk-scale runs: 4×8 features (17 MFI tokens) and
    /// a 5-token FF sequence. `hidden` must be 8 or 16.
    pub fn tiny(variant: Variant, hidden: usize) -> Self {
        let (ff_map, ff_kernel) = if hidden == 8 { ((4, 4), (2, 2)) } else { ((4, 8), (2, 4)) };
        Self {
            hidden,
            heads: 2,
            feature_map: (4, 8),
            ff_map,
            ff_kernel,
            enose_encoder: EnoseEncoderSpec::tiny(),
            eeg_encoder: EegEncoderSpec::tiny(),
            ..Self::paper(Variant::Student)
        }
        .with_variant(variant)
    }

    /// FF consumes a single class token instead of a spliced pair.
    pub fn single_stream(&self) -> bool {
        self.mfi_pairs == 0 || self.aefm_blocks == 0
    }

    pub fn uses_eeg(&self) -> bool {
        self.modality != Modality::EnoseOnly
    }

    pub fn uses_enose(&self) -> bool {
        self.modality != Modality::EegOnly
    }

    fn feature_spec(&self) -> EmbedSpec {
        EmbedSpec { map: self.feature_map, kernel: self.mfi_kernel }
    }

    fn ff_spec(&self) -> EmbedSpec {
        EmbedSpec { map: self.ff_map, kernel: self.ff_kernel }
    }

    fn block(&self, kind: BlockKind) -> BlockSpec {
        BlockSpec { kind, hidden: self.hidden, heads: self.heads, mlp_ratio: self.mlp_ratio, positional: self.positional }
    }

    fn mfi_specs(&self) -> Result<Vec<BlockSpec>> {
        let map = SourceKind::Map(self.feature_spec());
        let l = self.feature_spec().tokens()?;
        let mut specs = Vec::new();
        for pair in 0..self.mfi_pairs {
            let key_value = if pair == 0 { map } else { SourceKind::Tokens(l) };
            specs.push(self.block(BlockKind::Cross { query: map, key_value }));
            specs.push(self.block(BlockKind::SelfAttention { source: SourceKind::Tokens(l) }));
        }
        Ok(specs)
    }

    fn chain_specs(&self, first: EmbedSpec, n: usize) -> Result<Vec<BlockSpec>> {
        let l = first.tokens()?;
        Ok((0..n)
            .map(|i| {
                let source = if i == 0 { SourceKind::Map(first) } else { SourceKind::Tokens(l) };
                self.block(BlockKind::SelfAttention { source })
            })
            .collect())
    }

    fn aefm_specs(&self) -> Result<Vec<BlockSpec>> {
        self.chain_specs(self.feature_spec(), self.aefm_blocks)
    }

    fn ff_specs(&self) -> Result<Vec<BlockSpec>> {
        self.chain_specs(self.ff_spec(), self.ff_blocks)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden size {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.classes < 2 {
            return bad(format!("need at least two classes, got {}", self.classes));
        }
        if self.ff_blocks == 0 {
            return bad("the fusion stage needs at least one block".into());
        }
        if self.mfi_pairs == 0 && self.aefm_blocks == 0 {
            return bad("either MFI or AEFM must be present".into());
        }
        if self.mfi_pairs > 0 && self.modality != Modality::Both {
            return bad("MFI needs both modalities".into());
        }
        let (fh, fw) = self.feature_map;
        if self.uses_enose() {
            let (c, h, w) = self.enose_encoder.out_shape((1, self.enose_input.0, self.enose_input.1))?;
            if c * h * w != fh * fw {
                return bad(format!("E-nose encoder yields {c}×{h}×{w}, not reshapeable to {fh}×{fw}"));
            }
        }
        if self.uses_eeg() {
            let (c, h, w) = self.eeg_encoder.out_shape((1, self.eeg_input.0, self.eeg_input.1))?;
            if c * h * w != fh * fw {
                return bad(format!("EEG encoder yields {c}×{h}×{w}, not reshapeable to {fh}×{fw}"));
            }
        }
        self.feature_spec().tokens()?;
        self.ff_spec().tokens()?;
        let spliced = if self.single_stream() { self.hidden } else { 2 * self.hidden };
        if self.ff_map.0 * self.ff_map.1 != spliced {
            return bad(format!("FF map {:?} does not hold {spliced} values", self.ff_map));
        }
        Ok(())
    }

    pub fn mfi_tokens(&self) -> Result<usize> {
        self.feature_spec().tokens()
    }

    pub fn ff_tokens(&self) -> Result<usize> {
        self.ff_spec().tokens()
    }
}

/// Exact number of scalar parameters of a model built from `cfg`.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let mut n = 0;
    if cfg.uses_enose() {
        n += cfg.enose_encoder.param_count((1, cfg.enose_input.0, cfg.enose_input.1));
    }
    if cfg.uses_eeg() {
        n += cfg.eeg_encoder.param_count((1, cfg.eeg_input.0, cfg.eeg_input.1));
    }
    for spec in cfg.mfi_specs()?.iter().chain(&cfg.aefm_specs()?).chain(&cfg.ff_specs()?) {
        n += AttentionBlock::param_count(spec)?;
    }
    Ok(n + cfg.hidden * cfg.classes + cfg.classes)
}

/// Forward floating-point operations for one sample (multiply-add = 2) over
/// convolutions, linear layers and attention products.
pub fn count_flops(cfg: &ModelConfig) -> Result<u64> {
    cfg.validate()?;
    let mut f = 0;
    if cfg.uses_enose() {
        f += cfg.enose_encoder.flops((1, cfg.enose_input.0, cfg.enose_input.1))?;
    }
    if cfg.uses_eeg() {
        f += cfg.eeg_encoder.flops((1, cfg.eeg_input.0, cfg.eeg_input.1))?;
    }
    for spec in cfg.mfi_specs()?.iter().chain(&cfg.aefm_specs()?).chain(&cfg.ff_specs()?) {
        f += AttentionBlock::flops(spec)?;
    }
    Ok(f + 2 * (cfg.hidden * cfg.classes) as u64)
}

/// Everything a forward pass exposes to losses and distillation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// E-nose feature `m`, `[B, 1, fh, fw]`.
    pub m: Option<Var>,
    /// EEG feature `b`, `[B, 1, fh, fw]`.
    pub b: Option<Var>,
    /// Alternating crossmodal (Z) and self-attention (S) taps.
    pub mfi: Vec<BlockTaps>,
    pub aefm: Vec<BlockTaps>,
    pub ff: Vec<BlockTaps>,
    /// FC-layer input `I`, `[B, e]`.
    pub feature: Var,
    pub logits: Var,
    /// Class probabilities `P`, `[B, c]`.
    pub probs: Var,
}

impl ForwardTrace {
    /// Final MFI sequence `S`.
    pub fn s_final(&self) -> Option<Var> {
        self.mfi.last().map(|t| t.hidden)
    }

    /// Final AEFM sequence `B`.
    pub fn b_final(&self) -> Option<Var> {
        self.aefm.last().map(|t| t.hidden)
    }

    /// Taps of one distilled module.
    pub fn taps(&self, module: Module) -> &[BlockTaps] {
        match module {
            Module::Mfi => &self.mfi,
            Module::Aefm => &self.aefm,
            Module::Ff => &self.ff,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Mfi,
    Aefm,
    Ff,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Mfi, Module::Aefm, Module::Ff];

    pub fn name(self) -> &'static str {
        match self {
            Module::Mfi => "mfi",
            Module::Aefm => "aefm",
            Module::Ff => "ff",
        }
    }
}

/// Parameter handles of a model; values live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct BmfNet {
    pub config: ModelConfig,
    enose: Option<EnoseEncoder>,
    eeg: Option<EegEncoder>,
    mfi: Vec<AttentionBlock>,
    aefm: Vec<AttentionBlock>,
    ff: Vec<AttentionBlock>,
    fc: (ParamId, ParamId),
}

impl BmfNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: ModelConfig, pb: &mut ParamBuilder<'_, T, R>) -> Result<Self> {
        config.validate()?;
        let enose = if config.uses_enose() {
            Some(EnoseEncoder::new(pb, "enose", &config.enose_encoder, 1)?)
        } else {
            None
        };
        let eeg =
            if config.uses_eeg() { Some(EegEncoder::new(pb, "eeg", &config.eeg_encoder, 1)?) } else { None };
        let mut chain = |module: &str, specs: Vec<BlockSpec>| -> Result<Vec<AttentionBlock>> {
            specs.into_iter().enumerate().map(|(i, s)| AttentionBlock::new(pb, format!("{module}.{i}"), s)).collect()
        };
        let mfi = chain("mfi", config.mfi_specs()?)?;
        let aefm = chain("aefm", config.aefm_specs()?)?;
        let ff = chain("ff", config.ff_specs()?)?;
        let fc = (
            pb.linear("fc.weight", &[config.hidden, config.classes], config.hidden)?,
            pb.zeros("fc.bias", &[config.classes])?,
        );
        Ok(Self { config, enose, eeg, mfi, aefm, ff, fc })
    }

    /// Builds a model and a fresh parameter store.
    pub fn init<T: Scalar, R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::new(config, &mut ParamBuilder::new(&mut store, rng))?;
        Ok((model, store))
    }

    fn check_input(&self, tape: &Tape<impl Scalar>, x: Var, dims: (usize, usize), what: &str) -> Result<usize> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1..] != [1, dims.0, dims.1] {
            return Err(Error::shape("forward", format!("{what} input {s:?}, expected [B, 1, {}, {}]", dims.0, dims.1)));
        }
        Ok(s[0])
    }

    fn to_feature_map<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, batch: usize) -> Result<Var> {
        let (fh, fw) = self.config.feature_map;
        tape.reshape(x, &[batch, 1, fh, fw])
    }

    /// `eeg` is `[B, 1, 21, 256]`, `enose` is `[B, 1, 10, 90]`. Inputs of a
    /// modality the variant does not use are ignored.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        eeg: Var,
        enose: Var,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let mut batch = None;
        let m = match &self.enose {
            Some(enc) => {
                let bsz = self.check_input(tape, enose, cfg.enose_input, "E-nose").stage("enose_encoder")?;
                batch = Some(bsz);
                let h = enc.forward(tape, store, enose).stage("enose_encoder")?;
                Some(self.to_feature_map(tape, h, bsz).stage("enose_encoder")?)
            }
            None => None,
        };
        let b = match &self.eeg {
            Some(enc) => {
                let bsz = self.check_input(tape, eeg, cfg.eeg_input, "EEG").stage("eeg_encoder")?;
                if batch.is_some_and(|n| n != bsz) {
                    return Err(Error::shape("forward", "EEG and E-nose batch sizes differ").in_stage("alignment"));
                }
                batch = Some(bsz);
                let h = enc.forward(tape, store, eeg).stage("eeg_encoder")?;
                Some(self.to_feature_map(tape, h, bsz).stage("eeg_encoder")?)
            }
            None => None,
        };
        let batch = batch.ok_or_else(|| Error::Config("model has no encoder".into()))?;

        let mut mfi = Vec::with_capacity(self.mfi.len());
        if let (Some(m), Some(b)) = (m, b) {
            let mut kv = b;
            for pair in self.mfi.chunks(2) {
                let z = pair[0].forward(tape, store, m, Some(kv)).stage("mfi")?;
                let s = pair[1].forward(tape, store, z.hidden, None).stage("mfi")?;
                kv = s.hidden;
                mfi.push(z);
                mfi.push(s);
            }
        }

        let mut aefm = Vec::with_capacity(self.aefm.len());
        let private = if cfg.modality == Modality::EnoseOnly { m } else { b };
        if let Some(mut x) = private.filter(|_| !self.aefm.is_empty()) {
            for block in &self.aefm {
                let t = block.forward(tape, store, x, None).stage("aefm")?;
                x = t.hidden;
                aefm.push(t);
            }
        }

        let tokens: Vec<Var> = mfi.last().iter().chain(aefm.last().iter()).map(|t| t.hidden).collect();
        let mut fused = tape.select_token(tokens[0], 0).stage("ff")?;
        if let Some(&second) = tokens.get(1) {
            let cls = tape.select_token(second, 0).stage("ff")?;
            fused = tape.concat_last(fused, cls).stage("ff")?;
        }
        let (rh, rw) = cfg.ff_map;
        let mut x = tape.reshape(fused, &[batch, 1, rh, rw]).stage("ff")?;
        let mut ff = Vec::with_capacity(self.ff.len());
        for block in &self.ff {
            let t = block.forward(tape, store, x, None).stage("ff")?;
            x = t.hidden;
            ff.push(t);
        }

        let feature = tape.select_token(x, 0).stage("classifier")?;
        let w = tape.param(store, self.fc.0);
        let bias = tape.param(store, self.fc.1);
        let logits = tape.linear(feature, w, Some(bias)).stage("classifier")?;
        let probs = tape.softmax(logits).stage("classifier")?;
        Ok(ForwardTrace { m, b, mfi, aefm, ff, feature, logits, probs })
    }
}

/// Stacks samples into `([B, 1, 21, 256], [B, 1, 10, 90], labels)`.
pub fn batch_inputs<T: Scalar>(
    samples: &[MultimodalSample],
    indices: &[usize],
) -> Result<(Tensor<T>, Tensor<T>, Vec<usize>)> {
    let first = indices
        .first()
        .map(|&i| &samples[i])
        .ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let (eh, ew) = (first.eeg.shape()[0], first.eeg.shape()[1]);
    let (nh, nw) = (first.enose.shape()[0], first.enose.shape()[1]);
    let mut eeg = Vec::with_capacity(indices.len() * eh * ew);
    let mut enose = Vec::with_capacity(indices.len() * nh * nw);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &samples[i];
        if s.eeg.shape() != [eh, ew] || s.enose.shape() != [nh, nw] {
            return Err(Error::Dataset(format!("sample {i} has inconsistent shapes")));
        }
        eeg.extend(s.eeg.data().iter().map(|&v| T::from_f64(v as f64)));
        enose.extend(s.enose.data().iter().map(|&v| T::from_f64(v as f64)));
        labels.push(s.label);
    }
    let n = indices.len();
    Ok((Tensor::new(alloc::vec![n, 1, eh, ew], eeg)?, Tensor::new(alloc::vec![n, 1, nh, nw], enose)?, labels))
}

#[cfg(test)]
mod tests;
