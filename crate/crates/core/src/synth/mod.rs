//! Synthetic polyphonic clips.
//!
//! Events are placed on the model frame grid (one model frame spans
//! [`FRAME_HOP`] input frames), so frame labels match the placements exactly.
//! Consecutive events in a clip are chained; each overlap is chosen to steer
//! the clip's running fraction of doubly-active frames toward the polyphony
//! target. No frame ever holds three events.

mod dataset;
mod format;

pub use dataset::{generate_dataset, Dataset, DatasetSpec, DatasetSummary, MANIFEST_NAME};
pub use format::{decode_clip, encode_clip, read_clip, write_clip, CLIP_MAGIC, CLIP_VERSION};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::LabelGrid;
use crate::losses::{ClipTarget, LabelMode};
use crate::tensor::DenseArray;

/// Input frames per model (label) frame.
pub const FRAME_HOP: usize = 2;

const NOISE_FLOOR: f64 = 0.05;
const ENVELOPE_FLOOR: f64 = 0.5;
const JITTER: f64 = 0.2;
const MAX_COSINE: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct EventTemplate {
    pub class: usize,
    /// Non-negative energy per feature bin.
    pub profile: Vec<f64>,
    /// Inclusive duration range in model frames.
    pub duration: (usize, usize),
    pub amplitude: (f64, f64),
    /// Fractions of the event spent ramping up and down.
    pub attack: f64,
    pub decay: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// One template per class: a main spectral bump, a weaker bump half the
/// band away, and a broadband floor. The secondary bumps land on other
/// classes' main bands, so mixtures entangle.
pub fn default_templates(n_classes: usize, n_bins: usize) -> Result<Vec<EventTemplate>> {
    let band = n_bins as f64 / n_classes.max(1) as f64;
    let sigma = (band / 2.0).max(0.75);
    let templates: Vec<EventTemplate> = (0..n_classes)
        .map(|c| {
            let main = (c as f64 + 0.5) * band;
            let second = (main + band) % n_bins as f64;
            let bump = |f: f64, mu: f64| (-(f - mu).powi(2) / (2.0 * sigma * sigma)).exp();
            let profile = (0..n_bins)
                .map(|f| {
                    let f = f as f64;
                    bump(f, main) + 0.8 * bump(f, second) + 0.05
                })
                .collect();
            EventTemplate {
                class: c,
                profile,
                duration: (4, 16),
                amplitude: (0.15, 2.0),
                attack: 0.1,
                decay: 0.3,
            }
        })
        .collect();
    validate_templates(&templates)?;
    Ok(templates)
}

pub fn validate_templates(templates: &[EventTemplate]) -> Result<()> {
    if templates.len() < 2 {
        return Err(Error::Validation("need at least two event templates".into()));
    }
    let bins = templates[0].profile.len();
    for (k, t) in templates.iter().enumerate() {
        if t.class != k {
            return Err(Error::Validation(format!("template {k} has class {}", t.class)));
        }
        if t.profile.len() != bins || t.profile.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("template {k}: bad spectral profile")));
        }
        if t.duration.0 < 4 || t.duration.1 < t.duration.0 {
            return Err(Error::Validation(format!("template {k}: bad duration range")));
        }
        if !(t.amplitude.0 > 0.0 && t.amplitude.1 >= t.amplitude.0) {
            return Err(Error::Validation(format!("template {k}: bad amplitude range")));
        }
        if !(0.0..=0.5).contains(&t.attack) || !(0.0..=0.5).contains(&t.decay) {
            return Err(Error::Validation(format!("template {k}: bad envelope")));
        }
        for u in &templates[..k] {
            let cos = cosine(&t.profile, &u.profile);
            if cos >= MAX_COSINE {
                return Err(Error::Validation(format!(
                    "templates {} and {k} too similar (cosine {cos:.3})",
                    u.class
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipParams {
    /// Input frames `T0`; a multiple of [`FRAME_HOP`].
    pub n_frames: usize,
    /// Target fraction of active frames that hold two events, in `[0, 1]`.
    pub polyphony: f64,
    pub max_events: Option<usize>,
}

/// One placed event on the model frame grid, `[onset, offset)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub class: usize,
    pub onset: usize,
    pub offset: usize,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClipLabels {
    Strong(LabelGrid),
    Weak(Vec<u8>),
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    /// `T0 × F`; every value is exactly representable as f32.
    pub features: DenseArray,
    pub labels: ClipLabels,
}

impl ClipRecord {
    pub fn mode(&self) -> LabelMode {
        match self.labels {
            ClipLabels::Strong(_) => LabelMode::Strong,
            ClipLabels::Weak(_) => LabelMode::Weak,
            ClipLabels::Unlabeled => LabelMode::Unlabeled,
        }
    }

    pub fn strong(&self) -> Option<&LabelGrid> {
        match &self.labels {
            ClipLabels::Strong(y) => Some(y),
            _ => None,
        }
    }

    pub fn target(&self) -> ClipTarget<'_> {
        match &self.labels {
            ClipLabels::Strong(y) => ClipTarget::strong(y),
            ClipLabels::Weak(w) => ClipTarget::weak(w),
            ClipLabels::Unlabeled => ClipTarget::unlabeled(),
        }
    }
}

/// A generated clip with its full ground truth, whatever its label mode.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedClip {
    pub features: DenseArray,
    pub truth: LabelGrid,
    pub events: Vec<Placement>,
}

impl GeneratedClip {
    /// Keeps only the supervision `mode` allows.
    pub fn into_record(self, id: String, mode: LabelMode) -> ClipRecord {
        let labels = match mode {
            LabelMode::Strong => ClipLabels::Strong(self.truth),
            LabelMode::Weak => ClipLabels::Weak(self.truth.weak()),
            LabelMode::Unlabeled => ClipLabels::Unlabeled,
        };
        ClipRecord {
            id,
            features: self.features,
            labels,
        }
    }
}

/// Seed of clip `index` in a dataset, drawn from its own ChaCha stream.
pub fn clip_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed);
    rng.set_stream(index);
    rng.next_u64()
}

fn place_events(
    templates: &[EventTemplate],
    frames: usize,
    polyphony: f64,
    max_events: Option<usize>,
    rng: &mut impl Rng,
) -> Vec<Placement> {
    let draw_duration = |class: usize, rng: &mut dyn RngCore| {
        let (lo, hi) = templates[class].duration;
        rng.gen_range(lo..=hi)
    };
    let mut events = Vec::new();
    let mut class = rng.gen_range(0..templates.len());
    let mut duration = draw_duration(class, rng);
    let mut onset = rng.gen_range(0..=4);
    // Frames of the current event already shared with its predecessor.
    let mut shared = 0;
    let (mut active, mut multi) = (0usize, 0usize);
    while max_events.map_or(true, |m| events.len() < m) {
        let offset = (onset + duration).min(frames);
        if offset <= onset || offset - onset < templates[class].duration.0 {
            break;
        }
        let (lo, hi) = templates[class].amplitude;
        events.push(Placement {
            class,
            onset,
            offset,
            amplitude: rng.gen_range(lo..=hi),
        });
        if offset == frames {
            break;
        }
        // Next class differs from the current one so overlaps stay visible.
        let next = (class + rng.gen_range(1..templates.len())) % templates.len();
        let next_duration = draw_duration(next, rng);
        // Sharing at most the unshared tail of the current event keeps every
        // frame at two events or fewer.
        let cap = (duration - shared).min(next_duration);
        active += offset - onset - shared;
        // Overlap that brings the running fraction of doubly-active frames to
        // the target once the next event is placed.
        let wanted = (polyphony * (active + next_duration) as f64 - multi as f64) / (1.0 + polyphony);
        let overlap = (wanted.round().max(0.0) as usize).min(cap);
        multi += overlap;
        onset = if overlap == 0 {
            offset + rng.gen_range(1..=6)
        } else {
            offset - overlap
        };
        shared = overlap;
        class = next;
        duration = next_duration;
    }
    events
}

fn envelope(i: usize, len: usize, attack: f64, decay: f64) -> f64 {
    let u = (i as f64 + 0.5) / len as f64;
    let ramp = |x: f64| ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * x.clamp(0.0, 1.0);
    if attack > 0.0 && u < attack {
        ramp(u / attack)
    } else if decay > 0.0 && u > 1.0 - decay {
        ramp((1.0 - u) / decay)
    } else {
        1.0
    }
}

/// Renders one clip. Identical arguments give bit-identical output.
pub fn generate_clip(templates: &[EventTemplate], params: &ClipParams, seed: u64) -> Result<GeneratedClip> {
    validate_templates(templates)?;
    if params.n_frames == 0 || params.n_frames % FRAME_HOP != 0 {
        return Err(Error::Validation(format!(
            "clip length {} is not a positive multiple of {FRAME_HOP}",
            params.n_frames
        )));
    }
    if !(0.0..=1.0).contains(&params.polyphony) {
        return Err(Error::Validation(format!(
            "polyphony target {} outside [0, 1]",
            params.polyphony
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = params.n_frames / FRAME_HOP;
    let bins = templates[0].profile.len();
    let events = place_events(templates, frames, params.polyphony, params.max_events, &mut rng);

    let mut energy = vec![0.0; params.n_frames * bins];
    let mut truth = LabelGrid::zeros(frames, templates.len());
    for ev in &events {
        let tpl = &templates[ev.class];
        for t in ev.onset..ev.offset {
            truth.set(t, ev.class, true);
        }
        let start = ev.onset * FRAME_HOP;
        let len = (ev.offset - ev.onset) * FRAME_HOP;
        for i in 0..len {
            let gain = ev.amplitude * envelope(i, len, tpl.attack, tpl.decay);
            let row = &mut energy[(start + i) * bins..(start + i + 1) * bins];
            for (e, p) in row.iter_mut().zip(&tpl.profile) {
                *e += gain * p * rng.gen_range(1.0 - JITTER..=1.0 + JITTER);
            }
        }
    }
    let data = energy
        .iter()
        .map(|e| (e + rng.gen_range(0.0..=NOISE_FLOOR)).ln_1p() as f32 as f64)
        .collect();
    Ok(GeneratedClip {
        features: DenseArray::new(vec![params.n_frames, bins], data)?,
        truth,
        events,
    })
}

/// Frames with at least two active classes over frames with at least one.
/// 0 when nothing is active.
pub fn overlap_fraction<'a>(grids: impl IntoIterator<Item = &'a LabelGrid>) -> f64 {
    let (mut active, mut multi) = (0usize, 0usize);
    for y in grids {
        for t in 0..y.frames() {
            match y.row_count(t) {
                0 => {}
                1 => active += 1,
                _ => {
                    active += 1;
                    multi += 1;
                }
            }
        }
    }
    if active == 0 {
        0.0
    } else {
        multi as f64 / active as f64
    }
}
