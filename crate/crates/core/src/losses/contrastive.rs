use super::{Denominator, ScheduleConfig};
use crate::error::{Error, Result};
use crate::labels::LabelGrid;
use crate::tensor::{kernels, DenseArray, Graph, Var};

/// Anchor, positive and negative frame indices for one class of one clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSets {
    pub class: usize,
    pub anchors: Vec<usize>,
    /// `positives[k]` belongs to `anchors[k]`.
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<usize>,
}

impl SampleSets {
    pub fn positives_of(&self, anchor: usize) -> Option<&[usize]> {
        self.anchors
            .iter()
            .position(|&a| a == anchor)
            .map(|k| self.positives[k].as_slice())
    }
}

/// Positives of anchor `i` share exactly class `c` with it: `y_j · y_i = 1`,
/// `y_j^c = 1`, `j != i`.
pub fn build_sample_sets(y: &LabelGrid, c: usize) -> Result<SampleSets> {
    if c >= y.classes() {
        return Err(Error::Contract(format!(
            "class {c} out of range for {} classes",
            y.classes()
        )));
    }
    let frames = 0..y.frames();
    let anchors: Vec<usize> = frames.clone().filter(|&t| y.get(t, c)).collect();
    let negatives = frames.filter(|&t| !y.get(t, c)).collect();
    let positives = anchors
        .iter()
        .map(|&i| {
            anchors
                .iter()
                .copied()
                .filter(|&j| j != i && y.row_dot(i, j) == 1)
                .collect()
        })
        .collect();
    Ok(SampleSets {
        class: c,
        anchors,
        positives,
        negatives,
    })
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `-log(exp(z_i·z_j/τ) / Σ_k exp(z_i·z_k/τ))` over the negatives `z_k`.
pub fn pair_loss(
    z_i: &[f64],
    z_j: &[f64],
    negatives: &[&[f64]],
    tau: f64,
    denominator: Denominator,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Contract("pair_loss needs at least one negative".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    let dim = z_i.len();
    if z_j.len() != dim || negatives.iter().any(|n| n.len() != dim) {
        return Err(Error::Contract("pair_loss vectors differ in length".into()));
    }
    let pos = kernels::dot(z_i, z_j) / tau;
    let negs = negatives.iter().map(|n| kernels::dot(z_i, n) / tau);
    let lse = match denominator {
        Denominator::NegativesOnly => logsumexp(negs),
        Denominator::WithPositive => logsumexp(negs.chain(std::iter::once(pos))),
    };
    Ok(lse - pos)
}

fn check_shapes(shapes: &[&[usize]], y: &LabelGrid) -> Result<()> {
    if shapes.len() != y.classes() {
        return Err(Error::Contract(format!(
            "{} projections for {} classes",
            shapes.len(),
            y.classes()
        )));
    }
    for s in shapes {
        if s.len() != 2 || s[0] != y.frames() {
            return Err(Error::Contract(format!(
                "projection shape {s:?} does not match {} label frames",
                y.frames()
            )));
        }
    }
    Ok(())
}

/// Per-class weights `W_ij = 1/(N_c |P_i|)` for `j ∈ P_i`, and the negative mask
/// for rows whose anchor has positives. `None` when the class contributes 0.
fn class_weights(sets: &SampleSets, t: usize) -> Option<(Vec<f64>, Vec<bool>)> {
    let n = sets.anchors.len();
    if n <= 1 || sets.negatives.is_empty() {
        return None;
    }
    let mut w = vec![0.0; t * t];
    let mut mask = vec![false; t * t];
    let mut any = false;
    for (&i, pos) in sets.anchors.iter().zip(&sets.positives) {
        if pos.is_empty() {
            continue;
        }
        any = true;
        let wij = 1.0 / (n as f64 * pos.len() as f64);
        for &j in pos {
            w[i * t + j] = wij;
        }
        for &k in &sets.negatives {
            mask[i * t + k] = true;
        }
    }
    any.then_some((w, mask))
}

/// Frame-wise contrastive loss of one clip as a scalar on the tape.
/// `z[c]` is the `T × D'` projection of class `c`.
pub fn fc_loss(g: &mut Graph, z: &[Var], y: &LabelGrid, cfg: &ScheduleConfig) -> Result<Var> {
    let shapes: Vec<&[usize]> = z.iter().map(|&v| g.shape(v)).collect();
    check_shapes(&shapes, y)?;
    let t = y.frames();
    let c_plus = y.active_classes();
    let mut terms = Vec::new();
    if c_plus > 0 {
        for (c, &zc) in z.iter().enumerate() {
            let sets = build_sample_sets(y, c)?;
            let Some((w, mask)) = class_weights(&sets, t) else {
                continue;
            };
            let zc = if cfg.normalize { g.normalize_rows(zc)? } else { zc };
            let zt = g.transpose(zc)?;
            let gram = g.matmul(zc, zt)?;
            let s = g.scale(gram, 1.0 / cfg.tau)?;
            let lse = g.masked_row_logsumexp(s, mask)?;
            let w = g.constant(DenseArray::new(vec![t, t], w)?);
            let term = match cfg.denominator {
                Denominator::NegativesOnly => {
                    // Σ_ij W_ij (lse_i − S_ij) = Σ_i (Σ_j W_ij) lse_i − Σ_ij W_ij S_ij
                    let row_w: Vec<f64> = g.value(w).data().chunks_exact(t).map(|r| r.iter().sum()).collect();
                    let row_w = g.constant(DenseArray::new(vec![t, 1], row_w)?);
                    let a = g.mul(lse, row_w)?;
                    let a = g.sum(a)?;
                    let b = g.mul(s, w)?;
                    let b = g.sum(b)?;
                    g.sub(a, b)?
                }
                Denominator::WithPositive => {
                    // log(e^{S_ij} + e^{lse_i}) − S_ij = softplus(lse_i − S_ij)
                    let ones = g.constant(DenseArray::ones(&[1, t]));
                    let spread = g.matmul(lse, ones)?;
                    let d = g.sub(spread, s)?;
                    let sp = g.softplus(d)?;
                    let weighted = g.mul(sp, w)?;
                    g.sum(weighted)?
                }
            };
            terms.push(term);
        }
    }
    let Some(&first) = terms.first() else {
        return Ok(g.constant(DenseArray::scalar(0.0)));
    };
    let mut acc = first;
    for &term in &terms[1..] {
        acc = g.add(acc, term)?;
    }
    g.scale(acc, 1.0 / c_plus as f64)
}

/// [`fc_loss`] evaluated without gradients.
pub fn fc_loss_value(z: &[DenseArray], y: &LabelGrid, cfg: &ScheduleConfig) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = z.iter().map(|a| g.constant(a.clone())).collect();
    let loss = fc_loss(&mut g, &vars, y, cfg)?;
    Ok(g.value(loss).item())
}
