use std::fmt::Write as _;

use super::DecodedEvents;
use crate::error::{Error, Result};
use crate::labels::LabelGrid;

/// Frame subsets by ground-truth polyphony.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    /// Frames whose truth row has two or more active classes.
    Overlapping,
    NonOverlapping,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::Overlapping, Subset::NonOverlapping];

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Overlapping => "overlap",
            Subset::NonOverlapping => "nonoverlap",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Confusion {
    fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

/// Per-class frame confusion counts for each subset, summed over clips.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCounts {
    classes: usize,
    counts: [Vec<Confusion>; 3],
}

impl FrameCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: std::array::from_fn(|_| vec![Confusion::default(); classes]),
        }
    }

    pub fn add(&mut self, pred: &LabelGrid, truth: &LabelGrid) -> Result<()> {
        if pred.frames() != truth.frames() || pred.classes() != truth.classes() || truth.classes() != self.classes {
            return Err(Error::Dimension {
                op: "frame_metrics",
                lhs: vec![pred.frames(), pred.classes()],
                rhs: vec![truth.frames(), truth.classes()],
            });
        }
        for t in 0..truth.frames() {
            let subset = if truth.is_overlapping(t) {
                Subset::Overlapping
            } else {
                Subset::NonOverlapping
            };
            for c in 0..self.classes {
                for s in [Subset::All, subset] {
                    let k = &mut self.counts[s.index()][c];
                    match (pred.get(t, c), truth.get(t, c)) {
                        (true, true) => k.tp += 1,
                        (true, false) => k.fp += 1,
                        (false, true) => k.fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn confusion(&self, subset: Subset, class: usize) -> Confusion {
        self.counts[subset.index()][class]
    }

    pub fn finish(&self) -> [SubsetMetrics; 3] {
        Subset::ALL.map(|s| {
            let per_class: Vec<Option<Prf>> = self.counts[s.index()]
                .iter()
                .map(|k| (k.tp + k.fn_ > 0).then(|| k.prf()))
                .collect();
            let present: Vec<&Prf> = per_class.iter().flatten().collect();
            let macro_f1 = if present.is_empty() {
                None
            } else {
                Some(present.iter().map(|p| p.f1).sum::<f64>() / present.len() as f64)
            };
            SubsetMetrics {
                subset: s,
                per_class,
                macro_f1,
            }
        })
    }
}

/// Frame metrics of one subset. Classes without positive truth frames are
/// `None` and left out of the macro mean.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetMetrics {
    pub subset: Subset,
    pub per_class: Vec<Option<Prf>>,
    pub macro_f1: Option<f64>,
}

/// Frame metrics of a single clip, split by truth polyphony.
pub fn frame_metrics(pred: &LabelGrid, truth: &LabelGrid) -> Result<[SubsetMetrics; 3]> {
    let mut counts = FrameCounts::new(truth.classes());
    counts.add(pred, truth)?;
    Ok(counts.finish())
}

/// Event-level match counts per class, summed over clips.
#[derive(Clone, Debug, PartialEq)]
pub struct EventCounts {
    pub per_class: Vec<Confusion>,
}

impl EventCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            per_class: vec![Confusion::default(); classes],
        }
    }

    pub fn merge(&mut self, other: &EventCounts) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }

    pub fn class_f1(&self) -> Vec<Option<f64>> {
        self.per_class
            .iter()
            .map(|k| (k.tp + k.fn_ > 0).then(|| k.prf().f1))
            .collect()
    }

    pub fn macro_f1(&self) -> Option<f64> {
        let f: Vec<f64> = self.class_f1().into_iter().flatten().collect();
        (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
    }

    pub fn micro_f1(&self) -> f64 {
        let mut total = Confusion::default();
        for k in &self.per_class {
            total.tp += k.tp;
            total.fp += k.fp;
            total.fn_ += k.fn_;
        }
        total.prf().f1
    }
}

/// Greedy matching in onset order: each predicted event takes the first
/// unmatched truth event of its class whose onset and offset both lie
/// within `collar` frames.
pub fn event_metrics(pred: &DecodedEvents, truth: &DecodedEvents, collar: usize) -> Result<EventCounts> {
    if pred.per_class.len() != truth.per_class.len() {
        return Err(Error::Dimension {
            op: "event_metrics",
            lhs: vec![pred.per_class.len()],
            rhs: vec![truth.per_class.len()],
        });
    }
    let mut counts = EventCounts::new(truth.per_class.len());
    for (c, (p, t)) in pred.per_class.iter().zip(&truth.per_class).enumerate() {
        let mut used = vec![false; t.len()];
        let mut tp = 0;
        for &(on, off) in p {
            let hit = t.iter().enumerate().position(|(k, &(ton, toff))| {
                !used[k] && on.abs_diff(ton) <= collar && off.abs_diff(toff) <= collar
            });
            if let Some(k) = hit {
                used[k] = true;
                tp += 1;
            }
        }
        counts.per_class[c] = Confusion {
            tp,
            fp: p.len() - tp,
            fn_: t.len() - tp,
        };
    }
    Ok(counts)
}

/// Everything `eval` reports for one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub clips: usize,
    pub frame: [SubsetMetrics; 3],
    pub event: EventCounts,
    pub collar: usize,
}

impl MetricsReport {
    pub fn subset(&self, s: Subset) -> &SubsetMetrics {
        &self.frame[s.index()]
    }

    /// Macro frame F1 over all frames; 0 when no class has positives.
    pub fn frame_f1(&self) -> f64 {
        self.subset(Subset::All).macro_f1.unwrap_or(0.0)
    }

    fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![("clips".to_string(), Some(self.clips as f64))];
        for m in &self.frame {
            let s = m.subset.name();
            for (c, prf) in m.per_class.iter().enumerate() {
                rows.push((format!("frame.{s}.class{c}.precision"), prf.map(|p| p.precision)));
                rows.push((format!("frame.{s}.class{c}.recall"), prf.map(|p| p.recall)));
                rows.push((format!("frame.{s}.class{c}.f1"), prf.map(|p| p.f1)));
            }
            rows.push((format!("frame.{s}.macro.f1"), m.macro_f1));
        }
        for (c, f) in self.event.class_f1().into_iter().enumerate() {
            rows.push((format!("event.class{c}.f1"), f));
        }
        rows.push(("event.macro.f1".into(), self.event.macro_f1()));
        rows.push(("event.micro.f1".into(), Some(self.event.micro_f1())));
        rows.push(("event.collar".into(), Some(self.collar as f64)));
        rows
    }

    /// One `metric.name = value` per line; inapplicable metrics print `na`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.rows() {
            match v {
                Some(v) => writeln!(s, "{k} = {v:.6}"),
                None => writeln!(s, "{k} = na"),
            }
            .expect("string write");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            match v {
                Some(v) => writeln!(s, "{k},{v:.6}"),
                None => writeln!(s, "{k},na"),
            }
            .expect("string write");
        }
        s
    }
}
