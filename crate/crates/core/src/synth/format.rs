//! Clip file layout, all integers little-endian:
//!
//! ```text
//! "SEDC" | version u32 | T0 u32 | F u32 | C u32 | mode u8 (0 strong, 1 weak, 2 unlabeled)
//! features: T0·F f32, row-major
//! labels: strong T·C bytes (T = T0 / FRAME_HOP) | weak C bytes | unlabeled nothing
//! ```

use std::path::Path;

use super::{ClipLabels, ClipRecord, FRAME_HOP};
use crate::error::{Error, Result};
use crate::io::ByteReader;
use crate::labels::LabelGrid;
use crate::losses::LabelMode;
use crate::tensor::DenseArray;

pub const CLIP_MAGIC: &[u8; 4] = b"SEDC";
pub const CLIP_VERSION: u32 = 1;

pub fn encode_clip(clip: &ClipRecord, n_classes: usize) -> Result<Vec<u8>> {
    let (t0, f) = (clip.features.rows(), clip.features.cols());
    let mut out = Vec::with_capacity(21 + 4 * t0 * f + t0 * n_classes);
    out.extend_from_slice(CLIP_MAGIC);
    for v in [CLIP_VERSION, t0 as u32, f as u32, n_classes as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(clip.mode().as_u8());
    for &v in clip.features.data() {
        let x = v as f32;
        if x as f64 != v {
            return Err(Error::Contract(format!(
                "clip {}: feature {v} is not exactly representable as f32",
                clip.id
            )));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    match &clip.labels {
        ClipLabels::Strong(y) => {
            if y.frames() * FRAME_HOP != t0 || y.classes() != n_classes {
                return Err(Error::Contract(format!(
                    "clip {}: labels {}x{} do not fit {t0} input frames and {n_classes} classes",
                    clip.id,
                    y.frames(),
                    y.classes()
                )));
            }
            out.extend_from_slice(y.bits());
        }
        ClipLabels::Weak(w) => {
            if w.len() != n_classes || w.iter().any(|b| *b > 1) {
                return Err(Error::Contract(format!("clip {}: bad weak labels", clip.id)));
            }
            out.extend_from_slice(w);
        }
        ClipLabels::Unlabeled => {}
    }
    Ok(out)
}

/// Parses a clip file; `id` comes from the manifest. Returns the record and
/// its class count.
pub fn decode_clip(bytes: &[u8], path: &Path, id: &str) -> Result<(ClipRecord, usize)> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != CLIP_MAGIC {
        return Err(Error::format(path, "bad magic, expected SEDC"));
    }
    let version = r.u32()?;
    if version != CLIP_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let t0 = r.u32()? as usize;
    let f = r.u32()? as usize;
    let c = r.u32()? as usize;
    if t0 == 0 || t0 % FRAME_HOP != 0 || f == 0 || c == 0 {
        return Err(Error::format(path, format!("bad dimensions T0={t0} F={f} C={c}")));
    }
    let mode = r.u8()?;
    let mode = LabelMode::from_u8(mode)
        .ok_or_else(|| Error::format(path, format!("unknown label mode {mode}")))?;
    let mut data = Vec::with_capacity(t0 * f);
    for _ in 0..t0 * f {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::format(path, "non-finite feature value"));
        }
        data.push(v as f64);
    }
    let features = DenseArray::new(vec![t0, f], data)?;
    let labels = match mode {
        LabelMode::Strong => {
            let bits = r.take(t0 / FRAME_HOP * c)?.to_vec();
            ClipLabels::Strong(
                LabelGrid::new(t0 / FRAME_HOP, c, bits).map_err(|e| Error::format(path, e.to_string()))?,
            )
        }
        LabelMode::Weak => {
            let bits = r.take(c)?.to_vec();
            if bits.iter().any(|b| *b > 1) {
                return Err(Error::format(path, "weak label byte is not 0 or 1"));
            }
            ClipLabels::Weak(bits)
        }
        LabelMode::Unlabeled => ClipLabels::Unlabeled,
    };
    r.finish()?;
    Ok((
        ClipRecord {
            id: id.to_string(),
            features,
            labels,
        },
        c,
    ))
}

/// Plain write; the dataset manifest, written last and atomically, is what
/// makes a set of clip files visible.
pub fn write_clip(path: &Path, clip: &ClipRecord, n_classes: usize) -> Result<()> {
    std::fs::write(path, encode_clip(clip, n_classes)?).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path, id: &str) -> Result<(ClipRecord, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes, path, id)
}
