//! The full estimation network: per-frame CNN embedding, two parallel LSTM
//! branches (one for the regression indices, one for cardiac phase), and
//! four linear heads.
//!
//! A sequence's F frames run through the CNN as one batch, so batchnorm
//! statistics are per-sequence in train mode. Checkpoints store every
//! parameter and batchnorm running statistic as named little-endian f32
//! blobs behind a fingerprint of the architecture.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    relu_backward, relu_forward, BatchNorm, Conv2d, Dense, Dropout, ForwardCtx, LayerCache,
    MaxPool,
};
use crate::lstm::{Lstm, LstmCache};
use crate::scalar::{sigmoid, Fnv64, Scalar};
use crate::tensor::{ShapeError, Tensor};

pub const POOL_KERNEL: usize = 5;
pub const POOL_STRIDE: usize = 3;
pub const CONV_KERNEL: usize = 5;
pub const CONV_PAD: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvBlockCfg {
    pub channels: usize,
    /// 5×5 stride-3 max-pool after the activation.
    pub pool: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Square input side length (frames are `input_hw × input_hw`).
    pub input_hw: usize,
    pub conv_blocks: Vec<ConvBlockCfg>,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Dropout rate at the conv/dense interface (last block only).
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_hw: 75,
            conv_blocks: vec![
                ConvBlockCfg { channels: 8, pool: true },
                ConvBlockCfg { channels: 16, pool: true },
                ConvBlockCfg { channels: 32, pool: false },
            ],
            embed_dim: 100,
            hidden: 100,
            dropout_rate: 0.5,
        }
    }
}

impl ModelConfig {
    /// Small configuration for finite-difference verification: 8×8 input,
    /// two conv blocks, 6-d embedding, 4-d hidden states.
    pub fn reduced() -> Self {
        ModelConfig {
            input_hw: 8,
            conv_blocks: vec![
                ConvBlockCfg { channels: 2, pool: true },
                ConvBlockCfg { channels: 4, pool: false },
            ],
            embed_dim: 6,
            hidden: 4,
            dropout_rate: 0.5,
        }
    }

    /// Spatial side length after the conv stack.
    pub fn final_spatial(&self) -> Result<usize, ShapeError> {
        let mut s = self.input_hw;
        for b in &self.conv_blocks {
            // Convs are same-size (5×5, pad 2, stride 1).
            if b.pool {
                if s < POOL_KERNEL {
                    return Err(ShapeError::new(format!(
                        "pooling window {} exceeds feature map {}",
                        POOL_KERNEL, s
                    )));
                }
                s = (s - POOL_KERNEL) / POOL_STRIDE + 1;
            }
        }
        Ok(s)
    }

    pub fn flat_features(&self) -> Result<usize, ShapeError> {
        let s = self.final_spatial()?;
        let c = self.conv_blocks.last().map(|b| b.channels).unwrap_or(1);
        Ok(c * s * s)
    }

    /// Stable hash of the architecture; checkpoints refuse to load across
    /// fingerprint changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.input_hw as u64);
        for b in &self.conv_blocks {
            h.write_u64(b.channels as u64);
            h.write_bool(b.pool);
        }
        h.write_u64(self.embed_dim as u64);
        h.write_u64(self.hidden as u64);
        h.write_u64(self.dropout_rate.to_bits());
        h.finish()
    }
}

/// One conv block: conv → batchnorm → relu (+ optional pool; the final
/// block applies dropout instead, ahead of the dense embedding).
#[derive(Debug, Clone)]
pub struct ConvBlock<S: Scalar> {
    pub conv: Conv2d<S>,
    pub bn: BatchNorm<S>,
    pub pool: Option<MaxPool>,
}

#[derive(Debug, Clone)]
pub struct LvNet<S: Scalar> {
    pub config: ModelConfig,
    pub blocks: Vec<ConvBlock<S>>,
    pub dropout: Dropout,
    pub embed: Dense<S>,
    pub rnn1: Lstm<S>,
    pub rnn2: Lstm<S>,
    pub head_area: Dense<S>,
    pub head_dim: Dense<S>,
    pub head_rwt: Dense<S>,
    pub head_phase: Dense<S>,
}

/// Per-frame predictions for one sequence.
#[derive(Debug, Clone)]
pub struct Predictions<S: Scalar> {
    /// `[F, 2]` cavity and myocardium areas.
    pub area: Tensor<S>,
    /// `[F, 3]` cavity directional dimensions.
    pub dim: Tensor<S>,
    /// `[F, 6]` regional wall thicknesses.
    pub rwt: Tensor<S>,
    /// `[F]` raw phase logits; Diastole probability is `sigmoid(-logit)`.
    pub phase_logit: Vec<S>,
}

impl<S: Scalar> Predictions<S> {
    pub fn frames(&self) -> usize {
        self.area.shape[0]
    }

    pub fn p_diastole(&self) -> Vec<S> {
        self.phase_logit.iter().map(|&z| sigmoid(-z)).collect()
    }

    /// Hard phase decisions: 0 = Diastole, 1 = Systole; the p = 1/2 tie
    /// goes to Diastole.
    pub fn phase_decisions(&self) -> Vec<u8> {
        self.phase_logit
            .iter()
            .map(|&z| if z > S::zero() { 1 } else { 0 })
            .collect()
    }
}

/// Gradients w.r.t. the per-frame predictions, same shapes as
/// [`Predictions`].
#[derive(Debug, Clone)]
pub struct PredGrads<S: Scalar> {
    pub area: Tensor<S>,
    pub dim: Tensor<S>,
    pub rwt: Tensor<S>,
    pub phase_logit: Vec<S>,
}

impl<S: Scalar> PredGrads<S> {
    pub fn zeros(frames: usize) -> Self {
        PredGrads {
            area: Tensor::zeros(&[frames, 2]),
            dim: Tensor::zeros(&[frames, 3]),
            rwt: Tensor::zeros(&[frames, 6]),
            phase_logit: vec![S::zero(); frames],
        }
    }
}

/// Forward tape for one sequence pass.
pub struct SequenceCache<S: Scalar> {
    cnn: Vec<LayerCache<S>>,
    pre_flatten_shape: Vec<usize>,
    embed_cache: LayerCache<S>,
    pub embedding: Tensor<S>,
    rnn1: LstmCache<S>,
    rnn2: LstmCache<S>,
    h1: Tensor<S>,
    h2: Tensor<S>,
    head_caches: [LayerCache<S>; 4],
}

impl<S: Scalar> SequenceCache<S> {
    /// Fold every discrete forward decision (relu signs, pool argmaxes)
    /// into an active-set signature.
    pub fn fold_pattern(&self, h: &mut Fnv64) {
        for c in &self.cnn {
            c.fold_pattern(h);
        }
    }
}

/// Tape for the phase branch alone (used when the embedding is precomputed
/// and the CNN is frozen).
pub struct PhaseCache<S: Scalar> {
    rnn2: LstmCache<S>,
    h2: Tensor<S>,
    head_cache: LayerCache<S>,
}

impl<S: Scalar> LvNet<S> {
    pub fn new(config: ModelConfig) -> Result<Self, ShapeError> {
        if config.conv_blocks.is_empty() {
            return Err(ShapeError::new("model needs at least one conv block"));
        }
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for b in &config.conv_blocks {
            blocks.push(ConvBlock {
                conv: Conv2d::new(c_in, b.channels, CONV_KERNEL, 1, CONV_PAD),
                bn: BatchNorm::new(b.channels),
                pool: b.pool.then_some(MaxPool {
                    k: POOL_KERNEL,
                    stride: POOL_STRIDE,
                }),
            });
            c_in = b.channels;
        }
        blocks[0].conv.skip_input_grad = true;
        let flat = config.flat_features()?;
        let hidden = config.hidden;
        Ok(LvNet {
            embed: Dense::new(flat, config.embed_dim),
            rnn1: Lstm::new(config.embed_dim, hidden),
            rnn2: Lstm::new(config.embed_dim, hidden),
            head_area: Dense::new(hidden, 2),
            head_dim: Dense::new(hidden, 3),
            head_rwt: Dense::new(hidden, 6),
            head_phase: Dense::new(hidden, 1),
            dropout: Dropout {
                rate: config.dropout_rate,
                salt: 0x0D,
            },
            blocks,
            config,
        })
    }

    /// Canonical traversal of all trainable parameters. The visit order is
    /// part of the checkpoint and optimizer-state contract.
    pub fn visit_trainable(&mut self, mut f: impl FnMut(&str, &mut Tensor<S>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("cnn.{}.conv.w", i), &mut b.conv.w);
            f(&format!("cnn.{}.conv.b", i), &mut b.conv.b);
            f(&format!("cnn.{}.bn.gamma", i), &mut b.bn.gamma);
            f(&format!("cnn.{}.bn.beta", i), &mut b.bn.beta);
        }
        f("embed.w", &mut self.embed.w);
        f("embed.b", &mut self.embed.b);
        f("rnn1.w_ih", &mut self.rnn1.w_ih);
        f("rnn1.w_hh", &mut self.rnn1.w_hh);
        f("rnn1.b", &mut self.rnn1.b);
        f("rnn2.w_ih", &mut self.rnn2.w_ih);
        f("rnn2.w_hh", &mut self.rnn2.w_hh);
        f("rnn2.b", &mut self.rnn2.b);
        f("head.area.w", &mut self.head_area.w);
        f("head.area.b", &mut self.head_area.b);
        f("head.dim.w", &mut self.head_dim.w);
        f("head.dim.b", &mut self.head_dim.b);
        f("head.rwt.w", &mut self.head_rwt.w);
        f("head.rwt.b", &mut self.head_rwt.b);
        f("head.phase.w", &mut self.head_phase.w);
        f("head.phase.b", &mut self.head_phase.b);
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn visit_state(&mut self, mut f: impl FnMut(&str, &mut Tensor<S>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("cnn.{}.bn.running_mean", i), &mut b.bn.running_mean);
            f(&format!("cnn.{}.bn.running_var", i), &mut b.bn.running_var);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_trainable(|_, t| t.zero_grad());
    }

    /// Xavier-uniform weights, forget-gate biases 1, everything else 0;
    /// batchnorm scale 1 / shift 0. Deterministic per seed.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = self.config.hidden;
        self.visit_trainable(|name, t| {
            let is_weight = name.ends_with(".w") || name.contains("w_ih") || name.contains("w_hh");
            if is_weight {
                let (fan_out, fan_in) = (t.shape[0], t.shape[1..].iter().product::<usize>());
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut t.data {
                    *v = S::from_f64(rng.random_range(-limit..limit));
                }
            } else if name.ends_with(".gamma") {
                t.data.iter_mut().for_each(|v| *v = S::one());
            } else if name == "rnn1.b" || name == "rnn2.b" {
                t.data.iter_mut().for_each(|v| *v = S::zero());
                for v in &mut t.data[hidden..2 * hidden] {
                    *v = S::one();
                }
            } else {
                t.data.iter_mut().for_each(|v| *v = S::zero());
            }
        });
        self.visit_state(|name, t| {
            let fill = if name.ends_with("running_var") {
                S::one()
            } else {
                S::zero()
            };
            t.data.iter_mut().for_each(|v| *v = fill);
        });
    }

    /// CNN + dense embedding for a whole sequence: `[F, 1, hw, hw] -> [F, E]`.
    pub fn forward_embedding(
        &mut self,
        frames: &Tensor<S>,
        ctx: &ForwardCtx,
    ) -> Result<(Tensor<S>, Vec<LayerCache<S>>, Vec<usize>, LayerCache<S>), ShapeError> {
        let hw = self.config.input_hw;
        if frames.shape.len() != 4 || frames.shape[1] != 1 || frames.shape[2] != hw || frames.shape[3] != hw
        {
            return Err(ShapeError::new(format!(
                "sequence input {:?} vs expected [F, 1, {}, {}]",
                frames.shape, hw, hw
            )));
        }
        let mut caches = Vec::new();
        let mut x = frames.clone();
        let n_blocks = self.blocks.len();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (y, c) = block.conv.forward(&x)?;
            caches.push(c);
            let (y, c) = block.bn.forward(&y, ctx)?;
            caches.push(c);
            let (y, c) = relu_forward(&y);
            caches.push(c);
            x = y;
            if let Some(pool) = &block.pool {
                let (y, c) = pool.forward(&x)?;
                caches.push(c);
                x = y;
            }
            if i == n_blocks - 1 {
                let (y, c) = self.dropout.forward(&x, ctx);
                caches.push(c);
                x = y;
            }
        }
        let pre_flatten_shape = x.shape.clone();
        let flat: usize = x.shape[1..].iter().product();
        let x2 = Tensor::from_vec(&[x.shape[0], flat], x.data)?;
        let (emb, embed_cache) = self.embed.forward(&x2)?;
        Ok((emb, caches, pre_flatten_shape, embed_cache))
    }

    fn backward_embedding(
        &mut self,
        caches: &[LayerCache<S>],
        pre_flatten_shape: &[usize],
        embed_cache: &LayerCache<S>,
        demb: &Tensor<S>,
    ) -> Result<(), ShapeError> {
        let dflat = self
            .embed
            .backward(embed_cache, demb, true)?
            .expect("dense returns dx on request");
        let mut dy = Tensor::from_vec(pre_flatten_shape, dflat.data)?;
        let mut idx = caches.len();
        let n_blocks = self.blocks.len();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            if i == n_blocks - 1 {
                idx -= 1;
                dy = self.dropout.backward(&caches[idx], &dy);
            }
            if let Some(pool) = &block.pool {
                idx -= 1;
                dy = pool.backward(&caches[idx], &dy)?;
            }
            idx -= 1;
            dy = relu_backward(&caches[idx], &dy);
            idx -= 1;
            let need_dx = true; // batchnorm upstream of conv always needs it
            dy = block
                .bn
                .backward(&caches[idx], &dy, need_dx)?
                .expect("bn returns dx on request");
            idx -= 1;
            match block.conv.backward(&caches[idx], &dy, i > 0)? {
                Some(dx) => dy = dx,
                None => break, // first conv: input gradient skipped
            }
        }
        Ok(())
    }

    /// Full forward pass for one sequence.
    pub fn forward_sequence(
        &mut self,
        frames: &Tensor<S>,
        ctx: &ForwardCtx,
    ) -> Result<(Predictions<S>, SequenceCache<S>), ShapeError> {
        let (embedding, cnn, pre_flatten_shape, embed_cache) =
            self.forward_embedding(frames, ctx)?;
        let (h1, rnn1) = self.rnn1.forward(&embedding)?;
        let (h2, rnn2) = self.rnn2.forward(&embedding)?;
        let (area, c_area) = self.head_area.forward(&h1)?;
        let (dim, c_dim) = self.head_dim.forward(&h1)?;
        let (rwt, c_rwt) = self.head_rwt.forward(&h1)?;
        let (phase, c_phase) = self.head_phase.forward(&h2)?;
        Ok((
            Predictions {
                area,
                dim,
                rwt,
                phase_logit: phase.data,
            },
            SequenceCache {
                cnn,
                pre_flatten_shape,
                embed_cache,
                embedding,
                rnn1,
                rnn2,
                h1,
                h2,
                head_caches: [c_area, c_dim, c_rwt, c_phase],
            },
        ))
    }

    /// Full backward pass; accumulates into parameter grads. `through_cnn`
    /// controls whether gradients flow below the embedding (the phase
    /// training step freezes the CNN and regression branch).
    pub fn backward_sequence(
        &mut self,
        cache: &SequenceCache<S>,
        grads: &PredGrads<S>,
        through_cnn: bool,
    ) -> Result<(), ShapeError> {
        let f = cache.h1.shape[0];
        let mut dh1 = Tensor::zeros(&cache.h1.shape);
        for (head, (dy, c)) in [
            (&mut self.head_area, (&grads.area, &cache.head_caches[0])),
            (&mut self.head_dim, (&grads.dim, &cache.head_caches[1])),
            (&mut self.head_rwt, (&grads.rwt, &cache.head_caches[2])),
        ] {
            let dx = head.backward(c, dy, true)?.expect("dense dx");
            for i in 0..dh1.data.len() {
                dh1.data[i] += dx.data[i];
            }
        }
        let dphase = Tensor::from_vec(&[f, 1], grads.phase_logit.clone())?;
        let dh2 = self
            .head_phase
            .backward(&cache.head_caches[3], &dphase, true)?
            .expect("dense dx");

        let mut demb = self
            .rnn1
            .backward(&cache.rnn1, &dh1, true)?
            .expect("lstm dx");
        let demb2 = self.rnn2.backward(&cache.rnn2, &dh2, true)?.expect("lstm dx");
        for i in 0..demb.data.len() {
            demb.data[i] += demb2.data[i];
        }
        if through_cnn {
            self.backward_embedding(
                &cache.cnn,
                &cache.pre_flatten_shape,
                &cache.embed_cache,
                &demb,
            )?;
        }
        Ok(())
    }

    /// Phase branch only, from a precomputed embedding (frozen CNN).
    pub fn forward_phase(
        &mut self,
        embedding: &Tensor<S>,
    ) -> Result<(Vec<S>, PhaseCache<S>), ShapeError> {
        let (h2, rnn2) = self.rnn2.forward(embedding)?;
        let (phase, head_cache) = self.head_phase.forward(&h2)?;
        Ok((
            phase.data,
            PhaseCache {
                rnn2,
                h2,
                head_cache,
            },
        ))
    }

    pub fn backward_phase(
        &mut self,
        cache: &PhaseCache<S>,
        dlogit: &[S],
    ) -> Result<(), ShapeError> {
        let f = cache.h2.shape[0];
        let dphase = Tensor::from_vec(&[f, 1], dlogit.to_vec())?;
        let dh2 = self
            .head_phase
            .backward(&cache.head_cache, &dphase, true)?
            .expect("dense dx");
        self.rnn2.backward(&cache.rnn2, &dh2, false)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LVQM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic,
    BadVersion(u32),
    FingerprintMismatch { file: u64, model: u64 },
    Malformed(String),
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {}", e),
            CheckpointError::BadMagic => write!(f, "not a model checkpoint (bad magic)"),
            CheckpointError::BadVersion(v) => write!(f, "unsupported checkpoint version {}", v),
            CheckpointError::FingerprintMismatch { file, model } => write!(
                f,
                "checkpoint architecture fingerprint {:016x} does not match model {:016x}",
                file, model
            ),
            CheckpointError::Malformed(m) => write!(f, "malformed checkpoint: {}", m),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

fn blob_names<S: Scalar>(net: &mut LvNet<S>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut blobs = Vec::new();
    net.visit_trainable(|name, t| {
        blobs.push((
            name.to_string(),
            t.shape.clone(),
            t.data.iter().map(|&v| v.to_f64() as f32).collect(),
        ));
    });
    net.visit_state(|name, t| {
        blobs.push((
            name.to_string(),
            t.shape.clone(),
            t.data.iter().map(|&v| v.to_f64() as f32).collect(),
        ));
    });
    blobs
}

pub fn save_checkpoint<S: Scalar>(net: &mut LvNet<S>, path: &Path) -> Result<(), CheckpointError> {
    let blobs = blob_names(net);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&net.config.fingerprint().to_le_bytes());
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, shape, data) in &blobs {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u8).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(net: &mut LvNet<S>, path: &Path) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > bytes.len() {
            return Err(CheckpointError::Malformed("truncated file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let file_fp = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let model_fp = net.config.fingerprint();
    if file_fp != model_fp {
        return Err(CheckpointError::FingerprintMismatch {
            file: file_fp,
            model: model_fp,
        });
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut blobs: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> =
        std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("non-utf8 blob name".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut pos, n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blobs.insert(name, (shape, data));
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let mut missing = Vec::new();
    let mut fill = |name: &str, t: &mut Tensor<S>| {
        match blobs.remove(name) {
            Some((shape, data)) if shape == t.shape => {
                for (dst, src) in t.data.iter_mut().zip(&data) {
                    *dst = S::from_f64(*src as f64);
                }
            }
            Some((shape, _)) => missing.push(format!("{} has shape {:?}, want {:?}", name, shape, t.shape)),
            None => missing.push(format!("{} absent", name)),
        }
    };
    net.visit_trainable(|name, t| fill(name, t));
    net.visit_state(|name, t| fill(name, t));
    if !missing.is_empty() {
        return Err(CheckpointError::Malformed(missing.join("; ")));
    }
    if !blobs.is_empty() {
        let extra: Vec<_> = blobs.keys().cloned().collect();
        return Err(CheckpointError::Malformed(format!(
            "unknown blobs: {}",
            extra.join(", ")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_frames(seed: u64, f: usize, hw: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[f, 1, hw, hw],
            (0..f * hw * hw).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_config_embeds_to_100() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.final_spatial().unwrap(), 7); // 75 → 24 → 7
        assert_eq!(cfg.flat_features().unwrap(), 32 * 49);
        let mut net = LvNet::<f64>::new(cfg).unwrap();
        net.init_params(7);
        let x = random_frames(1, 2, 75);
        let (emb, ..) = net.forward_embedding(&x, &ForwardCtx::eval()).unwrap();
        assert_eq!(emb.shape, vec![2, 100]);
    }

    #[test]
    fn forward_shapes_and_probability_range() {
        let mut net = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        net.init_params(3);
        let x = random_frames(2, 5, 8);
        let (pred, _) = net.forward_sequence(&x, &ForwardCtx::eval()).unwrap();
        assert_eq!(pred.area.shape, vec![5, 2]);
        assert_eq!(pred.dim.shape, vec![5, 3]);
        assert_eq!(pred.rwt.shape, vec![5, 6]);
        assert_eq!(pred.phase_logit.len(), 5);
        for p in pred.p_diastole() {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn zero_params_give_half_probability_and_diastole_tie() {
        let mut net = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        // All zeros: every regression output 0, phase logit 0.
        let x = random_frames(4, 3, 8);
        let (pred, _) = net.forward_sequence(&x, &ForwardCtx::eval()).unwrap();
        assert!(pred.area.data.iter().all(|&v| v == 0.0));
        for p in pred.p_diastole() {
            assert!((p - 0.5).abs() < 1e-15);
        }
        assert_eq!(pred.phase_decisions(), vec![0, 0, 0], "tie goes to Diastole");
    }

    #[test]
    fn larger_logit_means_smaller_diastole_probability() {
        let pred = Predictions::<f64> {
            area: Tensor::zeros(&[2, 2]),
            dim: Tensor::zeros(&[2, 3]),
            rwt: Tensor::zeros(&[2, 6]),
            phase_logit: vec![2.0, -2.0],
        };
        let p = pred.p_diastole();
        assert!(p[0] < 0.5 && p[1] > 0.5);
        assert_eq!(pred.phase_decisions(), vec![1, 0]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut net = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        net.init_params(11);
        let x = random_frames(5, 4, 8);
        let (p1, _) = net.forward_sequence(&x, &ForwardCtx::eval()).unwrap();
        let (p2, _) = net.forward_sequence(&x, &ForwardCtx::eval()).unwrap();
        assert_eq!(p1.area.data, p2.area.data);
        assert_eq!(p1.phase_logit, p2.phase_logit);
    }

    #[test]
    fn eval_forward_is_causal_and_order_sensitive() {
        let mut net = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        net.init_params(13);
        let x = random_frames(6, 3, 8);
        let (p1, _) = net.forward_sequence(&x, &ForwardCtx::eval()).unwrap();

        // Perturb the last frame: earlier frames' outputs unchanged.
        let mut x2 = x.clone();
        let n = x2.data.len();
        x2.data[n - 1] += 1.0;
        let (p2, _) = net.forward_sequence(&x2, &ForwardCtx::eval()).unwrap();
        assert_eq!(p1.area.data[..4], p2.area.data[..4]);
        assert_eq!(p1.phase_logit[..2], p2.phase_logit[..2]);

        // Swap frames 0 and 1: outputs are not just permuted.
        let hw = 64;
        let mut x3 = x.clone();
        for i in 0..hw {
            x3.data.swap(i, hw + i);
        }
        let (p3, _) = net.forward_sequence(&x3, &ForwardCtx::eval()).unwrap();
        let mut same = true;
        for j in 0..2 {
            if (p3.area.data[2 + j] - p1.area.data[j]).abs() > 1e-12 {
                same = false;
            }
        }
        assert!(!same, "swapping frames must not merely permute outputs");
    }

    #[test]
    fn init_is_seed_deterministic_with_forget_bias_one() {
        let mut a = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        let mut b = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        a.init_params(42);
        b.init_params(42);
        let mut equal = true;
        a.visit_trainable(|name, t| {
            let mut other = None;
            b.visit_trainable(|n2, t2| {
                if n2 == name {
                    other = Some(t2.data.clone());
                }
            });
            if other.as_deref() != Some(&t.data[..]) {
                equal = false;
            }
        });
        assert!(equal);

        let h = a.config.hidden;
        for rnn in [&a.rnn1, &a.rnn2] {
            assert!(rnn.b.data[..h].iter().all(|&v| v == 0.0));
            assert!(rnn.b.data[h..2 * h].iter().all(|&v| v == 1.0));
            assert!(rnn.b.data[2 * h..].iter().all(|&v| v == 0.0));
        }
        assert!(a.head_area.b.data.iter().all(|&v| v == 0.0));
        assert!(a.head_phase.b.data.iter().all(|&v| v == 0.0));

        let mut c = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        c.init_params(43);
        assert_ne!(a.embed.w.data, c.embed.w.data, "seed must matter");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut net = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        net.init_params(17);
        // Perturb running stats so state blobs are exercised too.
        net.blocks[0].bn.running_mean.data[0] = 0.25;
        save_checkpoint(&mut net, &path).unwrap();
        // Snap the reference model onto the f32 grid first; after that the
        // roundtrip must be bit-exact.
        load_checkpoint(&mut net, &path).unwrap();
        save_checkpoint(&mut net, &path).unwrap();

        let x = random_frames(9, 3, 8);
        let (want, _) = net.forward_sequence(&x, &ForwardCtx::eval()).unwrap();

        let mut other = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        other.init_params(999);
        load_checkpoint(&mut other, &path).unwrap();
        let (got, _) = other.forward_sequence(&x, &ForwardCtx::eval()).unwrap();
        assert_eq!(got.phase_logit, want.phase_logit);
        assert_eq!(got.area.data, want.area.data);
    }

    #[test]
    fn checkpoint_rejects_wrong_architecture_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut net = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        net.init_params(1);
        save_checkpoint(&mut net, &path).unwrap();

        let mut full = LvNet::<f64>::new(ModelConfig::default()).unwrap();
        match load_checkpoint(&mut full, &path) {
            Err(CheckpointError::FingerprintMismatch { .. }) => {}
            other => panic!("want fingerprint mismatch, got {:?}", other.err()),
        }

        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        match load_checkpoint(&mut net, &path) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("want bad magic, got {:?}", other.err()),
        }
    }

    #[test]
    fn init_params_differ_from_f32_to_f64_only_in_precision() {
        // The init stream is drawn in f64 then cast, so f32 and f64 models
        // share the same underlying values.
        let mut a = LvNet::<f64>::new(ModelConfig::reduced()).unwrap();
        let mut b = LvNet::<f32>::new(ModelConfig::reduced()).unwrap();
        a.init_params(5);
        b.init_params(5);
        for (x, y) in a.embed.w.data.iter().zip(&b.embed.w.data) {
            assert!((x - *y as f64).abs() < 1e-7);
        }
    }
}
