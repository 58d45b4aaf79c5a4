//! Post-processing, metrics and representation diagnostics.

mod metrics;
mod pca;
mod probe;

pub use metrics::{
    event_metrics, frame_metrics, Confusion, EventCounts, FrameCounts, MetricsReport, Prf, Subset,
    SubsetMetrics,
};
pub use pca::{pca_export, PcaPoint, PcaResult};
pub use probe::{auc, leakage_probe, ProbeConfig};

use crate::error::{Error, Result};
use crate::labels::LabelGrid;
use crate::tensor::DenseArray;

/// Sliding median of a binary sequence, edges replicated. `window` must be odd.
pub fn median_filter(column: &[u8], window: usize) -> Result<Vec<u8>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Contract(format!("median window must be odd and positive, got {window}")));
    }
    let n = column.len();
    let half = window / 2;
    let at = |i: isize| column[i.clamp(0, n as isize - 1) as usize];
    Ok((0..n as isize)
        .map(|t| {
            let ones = (t - half as isize..=t + half as isize)
                .filter(|&i| at(i) == 1)
                .count();
            (ones > half) as u8
        })
        .collect())
}

/// Closed-open `[onset, offset)` intervals per class, sorted and disjoint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecodedEvents {
    pub per_class: Vec<Vec<(usize, usize)>>,
}

impl DecodedEvents {
    /// Maximal runs of ones in each column of `grid`.
    pub fn from_grid(grid: &LabelGrid) -> Self {
        let per_class = (0..grid.classes())
            .map(|c| {
                let mut runs = Vec::new();
                let mut start = None;
                for t in 0..grid.frames() {
                    match (grid.get(t, c), start) {
                        (true, None) => start = Some(t),
                        (false, Some(s)) => {
                            runs.push((s, t));
                            start = None;
                        }
                        _ => {}
                    }
                }
                if let Some(s) = start {
                    runs.push((s, grid.frames()));
                }
                runs
            })
            .collect();
        Self { per_class }
    }

    pub fn rasterize(&self, frames: usize) -> LabelGrid {
        let mut g = LabelGrid::zeros(frames, self.per_class.len());
        for (c, runs) in self.per_class.iter().enumerate() {
            for &(on, off) in runs {
                for t in on..off.min(frames) {
                    g.set(t, c, true);
                }
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Thresholds (`p > threshold`) and median-filters every class column.
pub fn binarize(probs: &DenseArray, threshold: f64, window: usize) -> Result<LabelGrid> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!("threshold {threshold} outside (0, 1)")));
    }
    let (t, c) = (probs.rows(), probs.cols());
    let mut out = LabelGrid::zeros(t, c);
    for k in 0..c {
        let col: Vec<u8> = (0..t).map(|i| (probs.get(i, k) > threshold) as u8).collect();
        for (i, v) in median_filter(&col, window)?.into_iter().enumerate() {
            out.set(i, k, v == 1);
        }
    }
    Ok(out)
}

pub fn decode(probs: &DenseArray, threshold: f64, window: usize) -> Result<DecodedEvents> {
    Ok(DecodedEvents::from_grid(&binarize(probs, threshold, window)?))
}
