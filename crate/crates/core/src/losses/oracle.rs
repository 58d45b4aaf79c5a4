//! Literal nested-loop evaluation of the frame-wise contrastive loss.
//! Used only to cross-check the vectorized implementation.

use super::{pair_loss, ScheduleConfig};
use crate::error::{Error, Result};
use crate::labels::LabelGrid;
use crate::tensor::DenseArray;

fn normalized(z: &DenseArray) -> Vec<Vec<f64>> {
    (0..z.rows())
        .map(|t| {
            let r = z.row(t);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

pub fn fc_loss_oracle(z: &[DenseArray], y: &LabelGrid, cfg: &ScheduleConfig) -> Result<f64> {
    if z.len() != y.classes() || z.iter().any(|a| a.shape().len() != 2 || a.rows() != y.frames()) {
        return Err(Error::Contract("projection and label shapes disagree".into()));
    }
    let t_len = y.frames();
    let mut total = 0.0;
    let mut c_plus = 0usize;
    for (c, zc) in z.iter().enumerate() {
        let rows: Vec<Vec<f64>> = if cfg.normalize {
            normalized(zc)
        } else {
            (0..t_len).map(|t| zc.row(t).to_vec()).collect()
        };
        let mut n_anchors = 0usize;
        for t in 0..t_len {
            if y.get(t, c) {
                n_anchors += 1;
            }
        }
        if n_anchors > 0 {
            c_plus += 1;
        }
        let mut negatives: Vec<&[f64]> = Vec::new();
        for t in 0..t_len {
            if !y.get(t, c) {
                negatives.push(&rows[t]);
            }
        }
        if n_anchors <= 1 || negatives.is_empty() {
            continue;
        }
        let mut class_sum = 0.0;
        for i in 0..t_len {
            if !y.get(i, c) {
                continue;
            }
            let mut anchor_sum = 0.0;
            let mut n_pos = 0usize;
            for j in 0..t_len {
                let mut p = 0usize;
                for k in 0..y.classes() {
                    if y.get(i, k) && y.get(j, k) {
                        p += 1;
                    }
                }
                if j != i && p == 1 && y.get(j, c) {
                    anchor_sum += pair_loss(&rows[i], &rows[j], &negatives, cfg.tau, cfg.denominator)?;
                    n_pos += 1;
                }
            }
            if n_pos > 0 {
                class_sum += anchor_sum / n_pos as f64;
            }
        }
        total += class_sum / n_anchors as f64;
    }
    if c_plus == 0 {
        return Ok(0.0);
    }
    Ok(total / c_plus as f64)
}
