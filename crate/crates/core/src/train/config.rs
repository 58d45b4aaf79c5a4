use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::losses::{Denominator, ScheduleConfig, SedLossConfig};
use crate::model::HeadKind;

/// Ablation axis: which head and which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Linear classifier on the shared features, detection loss only.
    Baseline,
    /// Per-class projectors and classifiers, detection loss only.
    Projector,
    /// Adds the supervised frame-wise contrastive loss.
    ProjectorFc,
    /// Adds the same loss on teacher pseudo-labels of unlabeled clips.
    ProjectorFcSc,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Projector, Mode::ProjectorFc, Mode::ProjectorFcSc];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Projector => "projector",
            Mode::ProjectorFc => "projector+fc",
            Mode::ProjectorFcSc => "projector+fc+sc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn head(self) -> HeadKind {
        match self {
            Mode::Baseline => HeadKind::Linear,
            _ => HeadKind::Projectors,
        }
    }

    pub fn uses_fc(self) -> bool {
        matches!(self, Mode::ProjectorFc | Mode::ProjectorFcSc)
    }

    pub fn uses_sc(self) -> bool {
        self == Mode::ProjectorFcSc
    }
}

/// Inference post-processing shared by training-time and stand-alone evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub median_window: usize,
    pub collar: usize,
    pub use_student: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            median_window: 3,
            collar: 2,
            use_student: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Dataset for the final metrics; the training set when absent.
    pub eval_dataset: Option<PathBuf>,
    pub output: PathBuf,
    pub mode: Mode,
    pub schedule: ScheduleConfig,
    pub sed: SedLossConfig,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ema_decay: f64,
    pub checkpoint_every: usize,
    pub conv_channels: [usize; 2],
    pub rnn_hidden: usize,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults for everything but the dataset and mode.
    pub fn new(dataset: PathBuf, mode: Mode) -> Self {
        Self {
            dataset,
            eval_dataset: None,
            output: PathBuf::from("run"),
            mode,
            schedule: ScheduleConfig::default(),
            sed: SedLossConfig::default(),
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 8,
            epochs: 150,
            seed: 0,
            ema_decay: 0.99,
            checkpoint_every: 10,
            conv_channels: [8, 16],
            rnn_hidden: 16,
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if !(self.sed.consistency_weight >= 0.0 && self.sed.consistency_weight.is_finite()) {
            return bad("consistency_weight must be non-negative".into());
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.eval.threshold));
        }
        if self.eval.median_window % 2 == 0 {
            return bad(format!("median_window must be odd, got {}", self.eval.median_window));
        }
        if self.rnn_hidden % 2 != 0 || self.rnn_hidden == 0 {
            // D = 2·hidden must be divisible by 4.
            return bad(format!("rnn_hidden must be positive and even, got {}", self.rnn_hidden));
        }
        if self.conv_channels.contains(&0) {
            return bad("conv channels must be positive".into());
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: String) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Reads a run configuration. Relative paths resolve against the config
/// file's directory. Only `dataset` and `mode` are required.
///
/// | key | default |
/// |---|---|
/// | `dataset`, `mode` | required |
/// | `eval_dataset` | training set |
/// | `output` | `run` |
/// | `lambda1`, `tau`, `rampup_epochs`, `pseudo_threshold` | 0.05, 0.1, 100, 0.5 |
/// | `infonce`, `normalize` | false, false |
/// | `strong_loss`, `weak_loss`, `consistency_loss` | true, true, true |
/// | `consistency_weight` | 1.0 |
/// | `learning_rate`, `momentum`, `batch_size`, `epochs` | 0.02, 0.9, 8, 150 |
/// | `seed`, `ema_decay`, `checkpoint_every` | 0, 0.99, 10 |
/// | `conv1_channels`, `conv2_channels`, `rnn_hidden` | 8, 16, 16 |
/// | `threshold`, `median_window`, `collar`, `eval_student` | 0.5, 3, 2, false |
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let doc = KvDoc::read(path)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    config_from_kv(doc, &base)
}

pub fn config_from_kv(mut doc: KvDoc, base: &Path) -> Result<RunConfig> {
    let dataset = resolve(base, doc.require::<String>("dataset", "a directory path")?);
    let mode_raw: String = doc.require("mode", "a mode name")?;
    let mode = Mode::parse(&mode_raw).ok_or_else(|| {
        doc.error_at(
            "mode",
            format!(
                "`mode` expects one of baseline, projector, projector+fc, projector+fc+sc; got `{mode_raw}`"
            ),
        )
    })?;
    let mut c = RunConfig::new(dataset, mode);
    let num = "a number";
    let int = "a non-negative integer";
    if let Some(p) = doc.get::<String>("eval_dataset", "a directory path")? {
        c.eval_dataset = Some(resolve(base, p));
    }
    if let Some(p) = doc.get::<String>("output", "a directory path")? {
        c.output = resolve(base, p);
    }
    let s = &mut c.schedule;
    s.lambda1 = doc.get_or("lambda1", num, s.lambda1)?;
    s.tau = doc.get_or("tau", num, s.tau)?;
    s.rampup_epochs = doc.get_or("rampup_epochs", int, s.rampup_epochs)?;
    s.pseudo_threshold = doc.get_or("pseudo_threshold", num, s.pseudo_threshold)?;
    if doc.bool_or("infonce", false)? {
        s.denominator = Denominator::WithPositive;
    }
    s.normalize = doc.bool_or("normalize", s.normalize)?;
    c.sed.strong = doc.bool_or("strong_loss", c.sed.strong)?;
    c.sed.weak = doc.bool_or("weak_loss", c.sed.weak)?;
    c.sed.consistency = doc.bool_or("consistency_loss", c.sed.consistency)?;
    c.sed.consistency_weight = doc.get_or("consistency_weight", num, c.sed.consistency_weight)?;
    c.learning_rate = doc.get_or("learning_rate", num, c.learning_rate)?;
    c.momentum = doc.get_or("momentum", num, c.momentum)?;
    c.batch_size = doc.get_or("batch_size", int, c.batch_size)?;
    c.epochs = doc.get_or("epochs", int, c.epochs)?;
    c.seed = doc.get_or("seed", int, c.seed)?;
    c.ema_decay = doc.get_or("ema_decay", num, c.ema_decay)?;
    c.checkpoint_every = doc.get_or("checkpoint_every", int, c.checkpoint_every)?;
    c.conv_channels[0] = doc.get_or("conv1_channels", int, c.conv_channels[0])?;
    c.conv_channels[1] = doc.get_or("conv2_channels", int, c.conv_channels[1])?;
    c.rnn_hidden = doc.get_or("rnn_hidden", int, c.rnn_hidden)?;
    c.eval.threshold = doc.get_or("threshold", num, c.eval.threshold)?;
    c.eval.median_window = doc.get_or("median_window", int, c.eval.median_window)?;
    c.eval.collar = doc.get_or("collar", int, c.eval.collar)?;
    c.eval.use_student = doc.bool_or("eval_student", c.eval.use_student)?;

    // Attribute validation failures to the offending line where possible.
    let checks: [(&str, bool, &str); 6] = [
        ("lambda1", c.schedule.lambda1 > 0.0, "`lambda1` must be positive"),
        ("tau", c.schedule.tau > 0.0, "`tau` must be positive"),
        ("rampup_epochs", c.schedule.rampup_epochs >= 1, "`rampup_epochs` must be at least 1"),
        (
            "pseudo_threshold",
            c.schedule.pseudo_threshold > 0.0 && c.schedule.pseudo_threshold < 1.0,
            "`pseudo_threshold` must lie in (0, 1)",
        ),
        ("learning_rate", c.learning_rate > 0.0, "`learning_rate` must be positive"),
        ("batch_size", c.batch_size > 0, "`batch_size` must be positive"),
    ];
    for (key, ok, msg) in checks {
        if !ok {
            return Err(doc.error_at(key, msg));
        }
    }
    let missing = |p: &Path| !p.is_dir();
    if missing(&c.dataset) {
        return Err(doc.error_at("dataset", format!("directory {} does not exist", c.dataset.display())));
    }
    if let Some(p) = c.eval_dataset.as_deref().filter(|p| missing(p)) {
        return Err(doc.error_at("eval_dataset", format!("directory {} does not exist", p.display())));
    }
    doc.finish()?;
    c.validate()?;
    Ok(c)
}
