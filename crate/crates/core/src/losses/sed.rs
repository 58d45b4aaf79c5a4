use crate::error::{Error, Result};
use crate::labels::LabelGrid;
use crate::tensor::{DenseArray, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelMode {
    Strong,
    Weak,
    Unlabeled,
}

impl LabelMode {
    pub fn as_u8(self) -> u8 {
        match self {
            LabelMode::Strong => 0,
            LabelMode::Weak => 1,
            LabelMode::Unlabeled => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(LabelMode::Strong),
            1 => Some(LabelMode::Weak),
            2 => Some(LabelMode::Unlabeled),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelMode::Strong => "strong",
            LabelMode::Weak => "weak",
            LabelMode::Unlabeled => "unlabeled",
        }
    }
}

/// Supervision available for one clip. Exactly the labels implied by
/// `mode` must be present.
#[derive(Clone, Copy, Debug)]
pub struct ClipTarget<'a> {
    pub mode: LabelMode,
    pub strong: Option<&'a LabelGrid>,
    pub weak: Option<&'a [u8]>,
}

impl<'a> ClipTarget<'a> {
    pub fn strong(y: &'a LabelGrid) -> Self {
        Self {
            mode: LabelMode::Strong,
            strong: Some(y),
            weak: None,
        }
    }

    pub fn weak(w: &'a [u8]) -> Self {
        Self {
            mode: LabelMode::Weak,
            strong: None,
            weak: Some(w),
        }
    }

    pub fn unlabeled() -> Self {
        Self {
            mode: LabelMode::Unlabeled,
            strong: None,
            weak: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            LabelMode::Strong => self.strong.is_some() && self.weak.is_none(),
            LabelMode::Weak => self.strong.is_none() && self.weak.is_some(),
            LabelMode::Unlabeled => self.strong.is_none() && self.weak.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "{} clip with strong labels {} and weak labels {}",
                self.mode.name(),
                if self.strong.is_some() { "present" } else { "absent" },
                if self.weak.is_some() { "present" } else { "absent" },
            )))
        }
    }
}

/// Student outputs of one clip plus what they are compared against.
#[derive(Clone, Copy, Debug)]
pub struct SedTerm<'a> {
    /// `T × C` frame probabilities.
    pub probs: Var,
    /// `1 × C` clip probabilities.
    pub pooled: Var,
    /// Teacher frame probabilities, required when consistency is on.
    pub teacher: Option<&'a DenseArray>,
    pub target: ClipTarget<'a>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SedLossConfig {
    pub strong: bool,
    pub weak: bool,
    pub consistency: bool,
    /// Peak weight of the consistency term before the ramp.
    pub consistency_weight: f64,
}

impl Default for SedLossConfig {
    fn default() -> Self {
        Self {
            strong: true,
            weak: true,
            consistency: true,
            consistency_weight: 1.0,
        }
    }
}

fn to_row(bits: &[u8]) -> DenseArray {
    DenseArray::new(vec![1, bits.len()], bits.iter().map(|&b| b as f64).collect())
        .expect("row shape")
}

/// Batch mean of strong BCE + weak BCE + `weight·ramp`·MSE to the teacher.
/// `ramp` is the ramp-up factor for the current epoch.
pub fn sed_loss(g: &mut Graph, terms: &[SedTerm], cfg: &SedLossConfig, ramp: f64) -> Result<Var> {
    if terms.is_empty() {
        return Err(Error::Contract("sed_loss on an empty batch".into()));
    }
    let mut clip_losses = Vec::with_capacity(terms.len());
    for term in terms {
        term.target.validate()?;
        let mut parts = Vec::new();
        if let (true, Some(y)) = (cfg.strong, term.target.strong) {
            let b = g.bce(term.probs, &y.to_array())?;
            parts.push(g.mean(b)?);
        }
        if let (true, Some(w)) = (cfg.weak, term.target.weak) {
            let b = g.bce(term.pooled, &to_row(w))?;
            parts.push(g.mean(b)?);
        }
        if cfg.consistency {
            let teacher = term.teacher.ok_or_else(|| {
                Error::Contract("consistency term needs teacher probabilities".into())
            })?;
            let tv = g.constant(teacher.clone());
            let d = g.sub(term.probs, tv)?;
            let sq = g.mul(d, d)?;
            let m = g.mean(sq)?;
            parts.push(g.scale(m, cfg.consistency_weight * ramp)?);
        }
        let mut acc = match parts.first() {
            Some(&p) => p,
            None => g.constant(DenseArray::scalar(0.0)),
        };
        for &p in parts.iter().skip(1) {
            acc = g.add(acc, p)?;
        }
        clip_losses.push(acc);
    }
    let mut sum = clip_losses[0];
    for &l in &clip_losses[1..] {
        sum = g.add(sum, l)?;
    }
    g.scale(sum, 1.0 / terms.len() as f64)
}

/// Thresholds teacher probabilities: 1 where `p > threshold`.
pub fn pseudo_labels(probs: &DenseArray, threshold: f64) -> Result<LabelGrid> {
    if probs.shape().len() != 2 {
        return Err(Error::Contract(format!(
            "pseudo_labels expects T × C, got {:?}",
            probs.shape()
        )));
    }
    let bits = probs.data().iter().map(|&p| (p > threshold) as u8).collect();
    LabelGrid::new(probs.rows(), probs.cols(), bits)
}
