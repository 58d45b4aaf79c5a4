//! Binary checkpoint: student and teacher parameters of one model.
//!
//! ```text
//! "SEDM"                      4 bytes
//! version                     u32 LE (= 1)
//! n_mels, n_classes, backbone_dim, projector_dim,
//! conv1_channels, conv2_channels, rnn_hidden, temporal_pool,
//! head (0 linear, 1 projectors)          9 × u32 LE
//! student arrays, ModelParams::arrays() order, f64 LE
//! teacher arrays, same order
//! ```

use std::io::Write;
use std::path::Path;

use super::{HeadKind, ModelConfig, ModelParams, SedModel};
use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SEDM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub student: SedModel,
    pub teacher: ModelParams,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.student.config
    }

    pub fn teacher_model(&self) -> SedModel {
        SedModel {
            config: self.student.config.clone(),
            params: self.teacher.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let header = [
            CHECKPOINT_VERSION,
            cfg.n_mels as u32,
            cfg.n_classes as u32,
            cfg.backbone_dim() as u32,
            cfg.projector_dim() as u32,
            cfg.conv_channels[0] as u32,
            cfg.conv_channels[1] as u32,
            cfg.rnn_hidden as u32,
            cfg.temporal_pool as u32,
            match cfg.head {
                HeadKind::Linear => 0,
                HeadKind::Projectors => 1,
            },
        ];
        for v in header {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for params in [&self.student.params, &self.teacher] {
            for a in params.arrays() {
                for v in a.data() {
                    out.write_all(&v.to_le_bytes()).expect("vec write");
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic, expected SEDM"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let mut f = [0usize; 9];
        for v in &mut f {
            *v = r.u32()? as usize;
        }
        let head = match f[8] {
            0 => HeadKind::Linear,
            1 => HeadKind::Projectors,
            h => return Err(Error::format(path, format!("unknown head kind {h}"))),
        };
        let config = ModelConfig {
            n_mels: f[0],
            n_classes: f[1],
            conv_channels: [f[4], f[5]],
            rnn_hidden: f[6],
            temporal_pool: f[7],
            head,
        };
        config
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        if config.backbone_dim() != f[2] || config.projector_dim() != f[3] {
            return Err(Error::format(
                path,
                format!("inconsistent dims D={} D'={} for hidden {}", f[2], f[3], f[6]),
            ));
        }
        // Shapes come from the config; values are overwritten below.
        let template = SedModel::new(config.clone(), 0)?.params;
        let read_params = |r: &mut ByteReader| -> Result<ModelParams> {
            let mut p = template.clone();
            for a in p.arrays_mut() {
                for v in a.data_mut() {
                    *v = r.f64()?;
                }
            }
            Ok(p)
        };
        let student = read_params(&mut r)?;
        let teacher = read_params(&mut r)?;
        r.finish()?;
        Ok(Self {
            student: SedModel {
                config,
                params: student,
            },
            teacher,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
