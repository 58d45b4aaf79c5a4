use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    clip_seed, default_templates, overlap_fraction, read_clip, write_clip, ClipParams, ClipRecord,
    FRAME_HOP,
};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::kv::KvDoc;
use crate::losses::LabelMode;

pub const MANIFEST_NAME: &str = "manifest.tsv";
const CLIP_DIR: &str = "clips";

/// What to generate. Clips are numbered strong first, then weak, then
/// unlabeled; clip `k` draws from stream `k` of `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
    /// Polyphony target of every clip, in `[0, 1]`.
    pub overlap: f64,
    pub seed: u64,
    pub n_frames: usize,
    pub n_bins: usize,
    pub n_classes: usize,
    pub max_events: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            strong: 0,
            weak: 0,
            unlabeled: 0,
            overlap: 0.5,
            seed: 0,
            n_frames: 128,
            n_bins: 24,
            n_classes: 4,
            max_events: None,
        }
    }
}

impl DatasetSpec {
    /// Keys: `strong`, `weak`, `unlabeled`, `overlap`, `seed`, `frames`,
    /// `bins`, `classes`, `max_events`.
    pub fn from_kv(mut doc: KvDoc) -> Result<Self> {
        let d = Self::default();
        let count = "a non-negative integer";
        let spec = Self {
            strong: doc.get_or("strong", count, d.strong)?,
            weak: doc.get_or("weak", count, d.weak)?,
            unlabeled: doc.get_or("unlabeled", count, d.unlabeled)?,
            overlap: doc.get_or("overlap", "a number in [0, 1]", d.overlap)?,
            seed: doc.get_or("seed", count, d.seed)?,
            n_frames: doc.get_or("frames", count, d.n_frames)?,
            n_bins: doc.get_or("bins", count, d.n_bins)?,
            n_classes: doc.get_or("classes", count, d.n_classes)?,
            max_events: doc.get("max_events", count)?,
        };
        if !(0.0..=1.0).contains(&spec.overlap) {
            return Err(doc.error_at("overlap", "`overlap` must lie in [0, 1]"));
        }
        if spec.n_frames == 0 || spec.n_frames % FRAME_HOP != 0 {
            return Err(doc.error_at("frames", format!("`frames` must be a positive multiple of {FRAME_HOP}")));
        }
        if spec.n_classes < 2 {
            return Err(doc.error_at("classes", "`classes` must be at least 2"));
        }
        if spec.n_bins == 0 {
            return Err(doc.error_at("bins", "`bins` must be positive"));
        }
        doc.finish()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvDoc::read(path)?)
    }

    pub fn total(&self) -> usize {
        self.strong + self.weak + self.unlabeled
    }

    fn mode_of(&self, index: usize) -> LabelMode {
        if index < self.strong {
            LabelMode::Strong
        } else if index < self.strong + self.weak {
            LabelMode::Weak
        } else {
            LabelMode::Unlabeled
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub clips: usize,
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
    /// Realized over the full ground truth of every clip, labeled or not.
    pub overlap_fraction: f64,
}

impl DatasetSummary {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "clips = {}", self.clips);
        let _ = writeln!(s, "strong = {}", self.strong);
        let _ = writeln!(s, "weak = {}", self.weak);
        let _ = writeln!(s, "unlabeled = {}", self.unlabeled);
        let _ = writeln!(s, "overlap_fraction = {:.6}", self.overlap_fraction);
        s
    }
}

/// Writes `clips/*.sedc`, then `manifest.tsv` and `summary.txt` under `out`.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetSummary> {
    let templates = default_templates(spec.n_classes, spec.n_bins)?;
    let params = ClipParams {
        n_frames: spec.n_frames,
        polyphony: spec.overlap,
        max_events: spec.max_events,
    };
    let clip_dir = out.join(CLIP_DIR);
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut manifest = String::new();
    let mut truths = Vec::with_capacity(spec.total());
    for index in 0..spec.total() {
        let clip = super::generate_clip(&templates, &params, clip_seed(spec.seed, index as u64))?;
        truths.push(clip.truth.clone());
        let id = format!("clip{index:05}");
        let mode = spec.mode_of(index);
        let rel = format!("{CLIP_DIR}/{id}.sedc");
        write_clip(&out.join(&rel), &clip.into_record(id.clone(), mode), spec.n_classes)?;
        let _ = writeln!(manifest, "{id}\t{}\t{rel}", mode.name());
    }
    let summary = DatasetSummary {
        clips: spec.total(),
        strong: spec.strong,
        weak: spec.weak,
        unlabeled: spec.unlabeled,
        overlap_fraction: overlap_fraction(&truths),
    };
    atomic_write(&out.join("summary.txt"), summary.to_kv().as_bytes())?;
    atomic_write(&out.join(MANIFEST_NAME), manifest.as_bytes())?;
    Ok(summary)
}

/// A loaded dataset; every clip shares `n_frames × n_bins` and `n_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub clips: Vec<ClipRecord>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut clips = Vec::new();
        let mut dims: Option<(usize, usize, usize)> = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |detail: String| Error::format(&manifest_path, format!("line {}: {detail}", n + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, mode, rel] = fields[..] else {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let (clip, c) = read_clip(&root.join(rel), id)?;
            if clip.mode().name() != mode {
                return Err(bad(format!("manifest says {mode}, clip file says {}", clip.mode().name())));
            }
            let d = (clip.features.rows(), clip.features.cols(), c);
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(bad(format!(
                        "clip {id} has T0×F×C = {:?}, earlier clips {:?}",
                        d, prev
                    )))
                }
                _ => {}
            }
            clips.push(clip);
        }
        let (n_frames, n_bins, n_classes) = dims.unwrap_or((0, 0, 0));
        Ok(Self {
            root: root.to_path_buf(),
            clips,
            n_frames,
            n_bins,
            n_classes,
        })
    }

    pub fn count(&self, mode: LabelMode) -> usize {
        self.clips.iter().filter(|c| c.mode() == mode).count()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}
