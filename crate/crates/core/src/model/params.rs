use rand::Rng;

use super::{HeadKind, ModelConfig};
use crate::tensor::DenseArray;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    /// `c_out × c_in × 3 × 3`
    pub kernel: DenseArray,
    /// `c_out`
    pub bias: DenseArray,
}

/// One direction of the recurrent layer; gate columns ordered reset|update|candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_in: DenseArray,
    pub b_in: DenseArray,
    pub w_h: DenseArray,
    pub b_h: DenseArray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassHead {
    /// `D × D/4`
    pub projector: DenseArray,
    /// `D/4 × 1`
    pub weight: DenseArray,
    /// `1 × 1`
    pub bias: DenseArray,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    Projectors(Vec<ClassHead>),
    Linear { weight: DenseArray, bias: DenseArray },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub conv: [ConvBlock; 2],
    pub gru_fwd: GruParams,
    pub gru_bwd: GruParams,
    pub head: HeadParams,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> DenseArray {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
        .expect("shape matches count")
}

impl ModelParams {
    /// Index of the first head array in [`ModelParams::arrays`].
    pub const HEAD_OFFSET: usize = 12;

    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization, drawn in `arrays()` order.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let [c1, c2] = cfg.conv_channels;
        let conv = [
            ConvBlock {
                kernel: uniform(&[c1, 1, 3, 3], 9, rng),
                bias: uniform(&[c1], 9, rng),
            },
            ConvBlock {
                kernel: uniform(&[c2, c1, 3, 3], c1 * 9, rng),
                bias: uniform(&[c2], c1 * 9, rng),
            },
        ];
        let h = cfg.rnn_hidden;
        let input = cfg.rnn_input_dim();
        let mut gru = || GruParams {
            w_in: uniform(&[input, 3 * h], input, rng),
            b_in: uniform(&[1, 3 * h], input, rng),
            w_h: uniform(&[h, 3 * h], h, rng),
            b_h: uniform(&[1, 3 * h], h, rng),
        };
        let gru_fwd = gru();
        let gru_bwd = gru();
        let d = cfg.backbone_dim();
        let dp = cfg.projector_dim();
        let head = match cfg.head {
            HeadKind::Projectors => HeadParams::Projectors(
                (0..cfg.n_classes)
                    .map(|_| ClassHead {
                        projector: uniform(&[d, dp], d, rng),
                        weight: uniform(&[dp, 1], dp, rng),
                        bias: uniform(&[1, 1], dp, rng),
                    })
                    .collect(),
            ),
            HeadKind::Linear => HeadParams::Linear {
                weight: uniform(&[d, cfg.n_classes], d, rng),
                bias: uniform(&[1, cfg.n_classes], d, rng),
            },
        };
        Self {
            conv,
            gru_fwd,
            gru_bwd,
            head,
        }
    }

    /// Zero-valued parameters with the shapes of `cfg`.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for a in z.arrays_mut() {
            a.data_mut().fill(0.0);
        }
        z
    }

    /// Every array in the fixed serialization order:
    /// conv1 kernel, conv1 bias, conv2 kernel, conv2 bias,
    /// forward GRU (w_in, b_in, w_h, b_h), backward GRU (same),
    /// then per class (projector, weight, bias) or the linear (weight, bias).
    pub fn arrays(&self) -> Vec<&DenseArray> {
        let mut v = vec![
            &self.conv[0].kernel,
            &self.conv[0].bias,
            &self.conv[1].kernel,
            &self.conv[1].bias,
        ];
        for g in [&self.gru_fwd, &self.gru_bwd] {
            v.extend([&g.w_in, &g.b_in, &g.w_h, &g.b_h]);
        }
        match &self.head {
            HeadParams::Projectors(heads) => {
                for h in heads {
                    v.extend([&h.projector, &h.weight, &h.bias]);
                }
            }
            HeadParams::Linear { weight, bias } => v.extend([weight, bias]),
        }
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut DenseArray> {
        let [c0, c1] = &mut self.conv;
        let mut v = vec![&mut c0.kernel, &mut c0.bias, &mut c1.kernel, &mut c1.bias];
        for g in [&mut self.gru_fwd, &mut self.gru_bwd] {
            v.extend([&mut g.w_in, &mut g.b_in, &mut g.w_h, &mut g.b_h]);
        }
        match &mut self.head {
            HeadParams::Projectors(heads) => {
                for h in heads {
                    v.extend([&mut h.projector, &mut h.weight, &mut h.bias]);
                }
            }
            HeadParams::Linear { weight, bias } => v.extend([weight, bias]),
        }
        v
    }

    /// Human-readable names aligned with [`ModelParams::arrays`].
    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["conv1.kernel", "conv1.bias", "conv2.kernel", "conv2.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for dir in ["gru_fwd", "gru_bwd"] {
            for p in ["w_in", "b_in", "w_h", "b_h"] {
                v.push(format!("{dir}.{p}"));
            }
        }
        match &self.head {
            HeadParams::Projectors(heads) => {
                for c in 0..heads.len() {
                    for p in ["projector", "weight", "bias"] {
                        v.push(format!("class{c}.{p}"));
                    }
                }
            }
            HeadParams::Linear { .. } => {
                v.push("linear.weight".into());
                v.push("linear.bias".into());
            }
        }
        v
    }

    pub fn count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    /// Parameters in the category-specific projector matrices only.
    pub fn projector_count(&self) -> usize {
        match &self.head {
            HeadParams::Projectors(heads) => heads.iter().map(|h| h.projector.len()).sum(),
            HeadParams::Linear { .. } => 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.is_finite())
    }
}
