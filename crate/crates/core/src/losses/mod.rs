//! Training objectives: the frame-wise contrastive loss with its sample
//! sets, the detection loss, pseudo-labels, and the loss schedule.

mod contrastive;
pub mod oracle;
mod sed;

pub use contrastive::{build_sample_sets, fc_loss, fc_loss_value, pair_loss, SampleSets};
pub use sed::{pseudo_labels, sed_loss, ClipTarget, LabelMode, SedLossConfig, SedTerm};

use crate::error::{Error, Result};

/// Which terms enter the softmax denominator of a positive pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Denominator {
    /// Negatives only. The pair loss can be negative.
    #[default]
    NegativesOnly,
    /// Negatives plus the positive itself (InfoNCE). The pair loss is positive.
    WithPositive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub lambda1: f64,
    pub tau: f64,
    /// Ramp-up length `E` in epochs.
    pub rampup_epochs: usize,
    pub pseudo_threshold: f64,
    pub denominator: Denominator,
    /// L2-normalize projection rows before dot products.
    pub normalize: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            tau: 0.1,
            rampup_epochs: 100,
            pseudo_threshold: 0.5,
            denominator: Denominator::NegativesOnly,
            normalize: false,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1 must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.rampup_epochs < 1 {
            return bad("rampup_epochs must be at least 1");
        }
        if !(self.pseudo_threshold > 0.0 && self.pseudo_threshold < 1.0) {
            return bad("pseudo_threshold must lie strictly inside (0, 1)");
        }
        Ok(())
    }
}

/// `exp(-5 (1 - t/E)^2)` below `E`, 1 from `E` on.
pub fn rampup(t: f64, rampup_epochs: usize) -> f64 {
    let e = rampup_epochs as f64;
    if t >= e {
        1.0
    } else {
        let x = 1.0 - t.max(0.0) / e;
        (-5.0 * x * x).exp()
    }
}

/// Weight of the semi-supervised contrastive term at epoch `t`.
pub fn lambda2(t: f64, cfg: &ScheduleConfig) -> f64 {
    cfg.lambda1 * rampup(t, cfg.rampup_epochs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_sed: f64,
    pub l_fc: f64,
    pub l_sc: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub total: f64,
}

/// Combines loss components. With `l_sc = None` the semi-supervised term is
/// absent; `lambda2` is still reported for the epoch.
pub fn total_loss(
    l_sed: f64,
    l_fc: f64,
    l_sc: Option<f64>,
    t: f64,
    cfg: &ScheduleConfig,
) -> LossReport {
    let lambda2 = lambda2(t, cfg);
    let mut total = l_sed + cfg.lambda1 * l_fc;
    if let Some(sc) = l_sc {
        total += lambda2 * sc;
    }
    LossReport {
        l_sed,
        l_fc,
        l_sc: l_sc.unwrap_or(0.0),
        lambda1: cfg.lambda1,
        lambda2,
        total,
    }
}
