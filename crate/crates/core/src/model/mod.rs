//! Convolutional-recurrent detector with category-specific projection heads.
//!
//! Layout of one forward pass (T₀ input frames, F bins, pool p):
//!
//! ```text
//! x [1,T₀,F] -conv3x3,tanh,pool(1,2)-> [c1,T₀,F/2] -conv3x3,tanh,pool(p,2)-> [c2,T,F/4]
//!   -> frames [T, c2·F/4] -> biGRU -> U [T, D]
//!   -> per class c: Zᶜ = tanh(U Wᶜ) [T, D/4] -> sigmoid(Zᶜ vᶜ + bᶜ)  (projector head)
//!   or            sigmoid(U V + b)                                  (linear head)
//! ```

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ClassHead, ConvBlock, GruParams, HeadParams, ModelParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{DenseArray, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// One linear classifier on the shared frame features.
    Linear,
    /// Category-specific projector plus linear classifier per class.
    Projectors,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub n_classes: usize,
    pub conv_channels: [usize; 2],
    pub rnn_hidden: usize,
    pub temporal_pool: usize,
    pub head: HeadKind,
}

impl ModelConfig {
    pub fn new(n_mels: usize, n_classes: usize, head: HeadKind) -> Self {
        Self {
            n_mels,
            n_classes,
            conv_channels: [8, 16],
            rnn_hidden: 16,
            temporal_pool: 2,
            head,
        }
    }

    /// Width D of the frame features (both recurrent directions).
    pub fn backbone_dim(&self) -> usize {
        2 * self.rnn_hidden
    }

    /// Width D/4 of each projected subspace.
    pub fn projector_dim(&self) -> usize {
        self.backbone_dim() / 4
    }

    pub fn rnn_input_dim(&self) -> usize {
        self.conv_channels[1] * self.n_mels / 4
    }

    pub fn output_frames(&self, input_frames: usize) -> Result<usize> {
        if input_frames == 0 || input_frames % self.temporal_pool != 0 {
            return Err(Error::Contract(format!(
                "{input_frames} input frames not divisible by temporal pool {}",
                self.temporal_pool
            )));
        }
        Ok(input_frames / self.temporal_pool)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if self.n_mels == 0 || self.n_mels % 4 != 0 {
            return bad(format!("n_mels {} must be a positive multiple of 4", self.n_mels));
        }
        if self.backbone_dim() % 4 != 0 || self.projector_dim() == 0 {
            return bad(format!("backbone dim {} must be a positive multiple of 4", self.backbone_dim()));
        }
        if self.temporal_pool == 0 {
            return bad("temporal_pool must be at least 1".into());
        }
        if self.conv_channels.contains(&0) {
            return bad("conv channel widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SedModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Parameters registered as leaves of one graph, in [`ModelParams::arrays`] order.
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Graph handles produced by one forward pass.
pub struct ForwardVars {
    pub frames: Var,
    pub u: Var,
    pub z: Vec<Var>,
    pub probs: Var,
}

/// Plain-value result of inference.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub u: DenseArray,
    pub z: Vec<DenseArray>,
    pub probs: DenseArray,
}

impl SedModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .arrays()
            .into_iter()
            .map(|a| if trainable { g.param(a.clone()) } else { g.constant(a.clone()) })
            .collect();
        BoundParams { vars }
    }

    /// Shared frame features `U: T×D` for an input `x: T₀×F` (already on the graph).
    pub fn backbone_forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let xs = g.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != cfg.n_mels {
            return Err(Error::Dimension {
                op: "backbone_forward",
                lhs: xs,
                rhs: vec![0, cfg.n_mels],
            });
        }
        let t0 = xs[0];
        let t = cfg.output_frames(t0)?;
        let x3 = g.reshape(x, &[1, t0, cfg.n_mels])?;

        let v = &p.vars;
        let c1 = g.conv2d(x3, v[0], v[1])?;
        let c1 = g.tanh(c1)?;
        let c1 = g.avg_pool2d(c1, 1, 2)?;
        let c2 = g.conv2d(c1, v[2], v[3])?;
        let c2 = g.tanh(c2)?;
        let c2 = g.avg_pool2d(c2, cfg.temporal_pool, 2)?;
        let frames = g.channels_to_frames(c2)?;

        let ones = g.constant(DenseArray::ones(&[t, 1]));
        let mut dirs = Vec::with_capacity(2);
        for (k, reverse) in [(4, false), (8, true)] {
            let xw = g.matmul(frames, v[k])?;
            let b = g.matmul(ones, v[k + 1])?;
            let xw = g.add(xw, b)?;
            dirs.push(g.gru(xw, v[k + 2], v[k + 3], reverse)?);
        }
        let u = g.concat_cols(&dirs)?;
        Ok((frames, u))
    }

    /// `Zᶜ = tanh(U Wᶜ)` for a zero-based class index.
    pub fn project(&self, g: &mut Graph, p: &BoundParams, u: Var, class: usize) -> Result<Var> {
        if self.config.head != HeadKind::Projectors {
            return Err(Error::Contract("linear-head model has no projectors".into()));
        }
        if class >= self.config.n_classes {
            return Err(Error::Contract(format!(
                "class index {class} out of range for {} classes",
                self.config.n_classes
            )));
        }
        let w = p.vars[ModelParams::HEAD_OFFSET + 3 * class];
        let m = g.matmul(u, w)?;
        g.tanh(m)
    }

    /// Frame probabilities `T×C`, column c = sigmoid(Zᶜ vᶜ + bᶜ).
    pub fn classify(&self, g: &mut Graph, p: &BoundParams, z: &[Var]) -> Result<Var> {
        if z.len() != self.config.n_classes {
            return Err(Error::Contract(format!(
                "expected {} projections, got {}",
                self.config.n_classes,
                z.len()
            )));
        }
        let t = g.shape(z[0])[0];
        let ones = g.constant(DenseArray::ones(&[t, 1]));
        let mut cols = Vec::with_capacity(z.len());
        for (c, &zc) in z.iter().enumerate() {
            let base = ModelParams::HEAD_OFFSET + 3 * c;
            let logit = g.matmul(zc, p.vars[base + 1])?;
            let bias = g.matmul(ones, p.vars[base + 2])?;
            let logit = g.add(logit, bias)?;
            cols.push(g.sigmoid(logit)?);
        }
        g.concat_cols(&cols)
    }

    fn classify_linear(&self, g: &mut Graph, p: &BoundParams, u: Var) -> Result<Var> {
        let t = g.shape(u)[0];
        let ones = g.constant(DenseArray::ones(&[t, 1]));
        let base = ModelParams::HEAD_OFFSET;
        let logit = g.matmul(u, p.vars[base])?;
        let bias = g.matmul(ones, p.vars[base + 1])?;
        let logit = g.add(logit, bias)?;
        g.sigmoid(logit)
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<ForwardVars> {
        let (frames, u) = self.backbone_forward(g, p, x)?;
        match self.config.head {
            HeadKind::Projectors => {
                let z = (0..self.config.n_classes)
                    .map(|c| self.project(g, p, u, c))
                    .collect::<Result<Vec<_>>>()?;
                let probs = self.classify(g, p, &z)?;
                Ok(ForwardVars { frames, u, z, probs })
            }
            HeadKind::Linear => {
                let probs = self.classify_linear(g, p, u)?;
                Ok(ForwardVars {
                    frames,
                    u,
                    z: Vec::new(),
                    probs,
                })
            }
        }
    }

    /// Gradient-free inference on a `T₀×F` feature matrix.
    pub fn predict(&self, features: &DenseArray) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(features.clone());
        let f = self.forward(&mut g, &p, x)?;
        Ok(Prediction {
            u: g.value(f.u).clone(),
            z: f.z.iter().map(|&v| g.value(v).clone()).collect(),
            probs: g.value(f.probs).clone(),
        })
    }
}

/// Clip-level probabilities: temporal max per class (`1×C`).
pub fn weak_pool(g: &mut Graph, probs: Var) -> Result<Var> {
    g.max_over_axis(probs, 0)
}

/// `teacher ← decay·teacher + (1−decay)·student` for every parameter.
pub fn ema_update(student: &ModelParams, teacher: &ModelParams, decay: f64) -> Result<ModelParams> {
    let mut out = teacher.clone();
    ema_update_in_place(student, &mut out, decay)?;
    Ok(out)
}

pub fn ema_update_in_place(student: &ModelParams, teacher: &mut ModelParams, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Contract(format!("ema decay {decay} outside [0, 1)")));
    }
    let s = student.arrays();
    let t = teacher.arrays_mut();
    if s.len() != t.len() || s.iter().zip(&t).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Contract("student and teacher parameter shapes differ".into()));
    }
    for (src, dst) in s.into_iter().zip(t) {
        for (d, v) in dst.data_mut().iter_mut().zip(src.data()) {
            *d = decay * *d + (1.0 - decay) * v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
