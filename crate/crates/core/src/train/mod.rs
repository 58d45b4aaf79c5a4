//! Training loop, evaluation and representation probing.
//!
//! One optimizer step: the student sees a mini-batch and minimizes
//! `L_SED + λ1·L_FC + λ2(t)·L_SC` with momentum SGD; the teacher then moves
//! toward the student by EMA. The teacher is never differentiated: its
//! probabilities enter the graph as constants, both as consistency targets
//! and (thresholded) as pseudo-labels.

mod config;
mod log;

pub use config::{config_from_kv, parse_config, EvalConfig, Mode, RunConfig};
pub use log::{EpochRecord, RunLog, RUNLOG_COLUMNS};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{binarize, event_metrics, pca_export, leakage_probe, DecodedEvents, EventCounts, FrameCounts};
use crate::eval::{MetricsReport, PcaResult, ProbeConfig};
use crate::io::atomic_write;
use crate::losses::{fc_loss, lambda2, pseudo_labels, rampup, sed_loss, total_loss, LabelMode, SedTerm};
use crate::model::{ema_update_in_place, save_checkpoint, weak_pool, BoundParams, Checkpoint, HeadKind};
use crate::model::{ModelConfig, ModelParams, SedModel};
use crate::synth::Dataset;
use crate::synth::ClipRecord;
use crate::tensor::{DenseArray, Graph, Var};

pub const CHECKPOINT_FILE: &str = "checkpoint.sedm";
pub const RUNLOG_FILE: &str = "runlog.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// Loss terms of one mini-batch, all scalars on the graph.
pub struct BatchLoss {
    pub total: Var,
    pub l_sed: Var,
    pub l_fc: Var,
    pub l_sc: Var,
    pub fc_clips: usize,
    pub sc_clips: usize,
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let Some(&first) = terms.first() else {
        return Ok(g.constant(DenseArray::scalar(0.0)));
    };
    let mut acc = first;
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

/// Records the batch objective for `student` (bound as `params`) at epoch `epoch`.
///
/// `L_FC` averages over strong clips with at least one active class; `L_SC`
/// averages over unlabeled clips whose pseudo-labels have an active class.
/// Clips outside those sets add nothing, and an empty set gives 0.
pub fn batch_loss(
    g: &mut Graph,
    student: &SedModel,
    params: &BoundParams,
    teacher: &SedModel,
    clips: &[&ClipRecord],
    epoch: usize,
    cfg: &RunConfig,
) -> Result<BatchLoss> {
    let t = epoch as f64;
    let need_teacher = cfg.sed.consistency || cfg.mode.uses_sc();
    let teacher_probs: Vec<Option<DenseArray>> = clips
        .iter()
        .map(|c| {
            let wanted = cfg.sed.consistency || (cfg.mode.uses_sc() && c.mode() == LabelMode::Unlabeled);
            (need_teacher && wanted)
                .then(|| teacher.predict(&c.features).map(|p| p.probs))
                .transpose()
        })
        .collect::<Result<_>>()?;

    let mut terms = Vec::with_capacity(clips.len());
    let mut fc_terms = Vec::new();
    let mut sc_terms = Vec::new();
    for (clip, tp) in clips.iter().zip(&teacher_probs) {
        let x = g.constant(clip.features.clone());
        let out = student.forward(g, params, x)?;
        let pooled = weak_pool(g, out.probs)?;
        terms.push(SedTerm {
            probs: out.probs,
            pooled,
            teacher: tp.as_ref().filter(|_| cfg.sed.consistency),
            target: clip.target(),
        });
        if cfg.mode.uses_fc() {
            if let Some(y) = clip.strong().filter(|y| y.active_classes() > 0) {
                fc_terms.push(fc_loss(g, &out.z, y, &cfg.schedule)?);
            }
        }
        if cfg.mode.uses_sc() && clip.mode() == LabelMode::Unlabeled {
            let probs = tp.as_ref().expect("teacher probabilities computed for unlabeled clips");
            let pseudo = pseudo_labels(probs, cfg.schedule.pseudo_threshold)?;
            if pseudo.active_classes() > 0 {
                sc_terms.push(fc_loss(g, &out.z, &pseudo, &cfg.schedule)?);
            }
        }
    }
    let l_sed = sed_loss(g, &terms, &cfg.sed, rampup(t, cfg.schedule.rampup_epochs))?;
    let l_fc = mean_of(g, &fc_terms)?;
    let l_sc = mean_of(g, &sc_terms)?;
    let mut total = l_sed;
    if cfg.mode.uses_fc() {
        let w = g.scale(l_fc, cfg.schedule.lambda1)?;
        total = g.add(total, w)?;
    }
    if cfg.mode.uses_sc() {
        let w = g.scale(l_sc, lambda2(t, &cfg.schedule))?;
        total = g.add(total, w)?;
    }
    Ok(BatchLoss {
        total,
        l_sed,
        l_fc,
        l_sc,
        fc_clips: fc_terms.len(),
        sc_clips: sc_terms.len(),
    })
}

/// Rejects a model/dataset pair whose dimensions disagree, naming both.
pub fn check_compatible(model: &ModelConfig, dataset: &Dataset) -> Result<()> {
    let frames_ok = dataset.n_frames > 0 && dataset.n_frames % model.temporal_pool == 0;
    if model.n_mels != dataset.n_bins || model.n_classes != dataset.n_classes || !frames_ok {
        return Err(Error::Validation(format!(
            "model expects F = {} bins, C = {} classes, input frames divisible by {}; dataset {} has F = {}, C = {}, T0 = {}",
            model.n_mels,
            model.n_classes,
            model.temporal_pool,
            dataset.root.display(),
            dataset.n_bins,
            dataset.n_classes,
            dataset.n_frames
        )));
    }
    Ok(())
}

fn model_config(cfg: &RunConfig, dataset: &Dataset) -> ModelConfig {
    let mut m = ModelConfig::new(dataset.n_bins, dataset.n_classes, cfg.mode.head());
    m.conv_channels = cfg.conv_channels;
    m.rnn_hidden = cfg.rnn_hidden;
    m
}

fn load_nonempty(path: &Path) -> Result<Dataset> {
    let ds = Dataset::load(path)?;
    if ds.is_empty() {
        return Err(Error::Validation(format!("dataset {} has no clips", path.display())));
    }
    Ok(ds)
}

/// In-memory training state; [`train`] drives it to completion.
pub struct Trainer {
    pub cfg: RunConfig,
    pub student: SedModel,
    pub teacher: SedModel,
    velocity: ModelParams,
    shuffle: ChaCha8Rng,
    pub log: RunLog,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig, dataset: &Dataset) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Validation(format!("dataset {} has no clips", dataset.root.display())));
        }
        if cfg.mode.uses_sc() && dataset.count(LabelMode::Unlabeled) == 0 {
            return Err(Error::Validation(format!(
                "mode {} needs unlabeled clips, dataset {} has none",
                cfg.mode.name(),
                dataset.root.display()
            )));
        }
        let student = SedModel::new(model_config(&cfg, dataset), cfg.seed)?;
        check_compatible(&student.config, dataset)?;
        let teacher = student.clone();
        let velocity = student.params.zeros_like();
        let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle.set_stream(1);
        Ok(Self {
            cfg,
            student,
            teacher,
            velocity,
            shuffle,
            log: RunLog::default(),
            epoch: 0,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            student: self.student.clone(),
            teacher: self.teacher.params.clone(),
        }
    }

    /// One pass over `dataset` in a freshly shuffled order.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<&EpochRecord> {
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..dataset.clips.len()).collect();
        order.shuffle(&mut self.shuffle);
        let (mut sed, mut fc, mut sc) = (0.0, 0.0, 0.0);
        let (mut fc_clips, mut sc_clips) = (0, 0);
        let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let clips: Vec<&ClipRecord> = idx.iter().map(|&i| &dataset.clips[i]).collect();
            let mut g = Graph::new();
            let bound = self.student.bind(&mut g, true);
            let loss = batch_loss(&mut g, &self.student, &bound, &self.teacher, &clips, epoch, &self.cfg)?;
            let total = g.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            sed += g.value(loss.l_sed).item();
            fc += g.value(loss.l_fc).item();
            sc += g.value(loss.l_sc).item();
            fc_clips += loss.fc_clips;
            sc_clips += loss.sc_clips;
            g.backward(loss.total)?;
            self.step(&g, &bound)?;
        }
        let n = batches.len() as f64;
        let report = total_loss(sed / n, fc / n, self.cfg.mode.uses_sc().then_some(sc / n), epoch as f64, &self.cfg.schedule);
        self.log.records.push(EpochRecord {
            epoch,
            l_sed: report.l_sed,
            l_fc: report.l_fc,
            l_sc: report.l_sc,
            lambda1: report.lambda1,
            lambda2: report.lambda2,
            total: report.total,
            lr: self.cfg.learning_rate,
            fc_clips,
            sc_clips,
            train_f1: None,
        });
        self.epoch += 1;
        Ok(self.log.records.last().expect("just pushed"))
    }

    /// `v ← μv + ∇`, `θ ← θ − lr·v`, then the EMA teacher update.
    fn step(&mut self, g: &Graph, bound: &BoundParams) -> Result<()> {
        let (lr, mu) = (self.cfg.learning_rate, self.cfg.momentum);
        let params = self.student.params.arrays_mut();
        let vel = self.velocity.arrays_mut();
        for ((p, v), &var) in params.into_iter().zip(vel).zip(&bound.vars) {
            let grad = g.grad(var);
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        ema_update_in_place(&self.student.params, &mut self.teacher.params, self.cfg.ema_decay)
    }

    /// Model used for reporting: the teacher unless `use_student`.
    pub fn eval_model(&self) -> &SedModel {
        if self.cfg.eval.use_student {
            &self.student
        } else {
            &self.teacher
        }
    }

    fn save(&self, out: &Path) -> Result<()> {
        save_checkpoint(&out.join(CHECKPOINT_FILE), &self.checkpoint())?;
        atomic_write(&out.join(RUNLOG_FILE), self.log.to_csv().as_bytes())
    }
}

/// Result of a completed run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: RunLog,
    pub metrics: MetricsReport,
    pub output: PathBuf,
}

/// Trains per `cfg`, writing the checkpoint and run log every
/// `checkpoint_every` epochs and at the end, then the final metrics.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = load_nonempty(&cfg.dataset)?;
    let eval_set = match &cfg.eval_dataset {
        Some(p) => load_nonempty(p)?,
        None => dataset.clone(),
    };
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut trainer = Trainer::new(cfg.clone(), &dataset)?;
    check_compatible(&trainer.student.config, &eval_set)?;

    let mut timing = String::from("epoch,seconds\n");
    for _ in 0..cfg.epochs {
        let start = Instant::now();
        let r = trainer.run_epoch(&dataset)?;
        let secs = start.elapsed().as_secs_f64();
        ::log::info!(
            "epoch {} total {:.5} sed {:.5} fc {:.5} sc {:.5} ({:.1}s)",
            r.epoch, r.total, r.l_sed, r.l_fc, r.l_sc, secs
        );
        writeln!(timing, "{},{secs:.3}", r.epoch).expect("string write");
        if trainer.epoch % cfg.checkpoint_every == 0 && trainer.epoch < cfg.epochs {
            trainer.save(&out)?;
            atomic_write(&out.join(TIMING_FILE), timing.as_bytes())?;
        }
    }
    let metrics = evaluate_model(trainer.eval_model(), &eval_set, &cfg.eval)?;
    if let Some(last) = trainer.log.records.last_mut() {
        last.train_f1 = Some(metrics.frame_f1());
    }
    trainer.save(&out)?;
    atomic_write(&out.join(TIMING_FILE), timing.as_bytes())?;
    write_metrics(&metrics, &out, "metrics")?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log: trainer.log,
        metrics,
        output: out,
    })
}

/// Writes `<stem>.txt` (key = value) and `<stem>.csv` into `dir`.
pub fn write_metrics(report: &MetricsReport, dir: &Path, stem: &str) -> Result<()> {
    atomic_write(&dir.join(format!("{stem}.txt")), report.to_kv().as_bytes())?;
    atomic_write(&dir.join(format!("{stem}.csv")), report.to_csv().as_bytes())
}

fn strong_clips(dataset: &Dataset) -> Result<Vec<&ClipRecord>> {
    let clips: Vec<&ClipRecord> = dataset.clips.iter().filter(|c| c.strong().is_some()).collect();
    if clips.is_empty() {
        return Err(Error::Validation(format!(
            "dataset {} has no strongly-labeled clips to evaluate on",
            dataset.root.display()
        )));
    }
    Ok(clips)
}

/// Frame and event metrics of `model` on the strongly-labeled clips of `dataset`.
pub fn evaluate_model(model: &SedModel, dataset: &Dataset, eval: &EvalConfig) -> Result<MetricsReport> {
    check_compatible(&model.config, dataset)?;
    let clips = strong_clips(dataset)?;
    let c = dataset.n_classes;
    let mut frames = FrameCounts::new(c);
    let mut events = EventCounts::new(c);
    for clip in &clips {
        let truth = clip.strong().expect("filtered to strong clips");
        let probs = model.predict(&clip.features)?.probs;
        let pred = binarize(&probs, eval.threshold, eval.median_window)?;
        frames.add(&pred, truth)?;
        let e = event_metrics(&DecodedEvents::from_grid(&pred), &DecodedEvents::from_grid(truth), eval.collar)?;
        events.merge(&e);
    }
    Ok(MetricsReport {
        clips: clips.len(),
        frame: frames.finish(),
        event: events,
        collar: eval.collar,
    })
}

/// Checkpoint evaluation; the teacher unless `eval.use_student`.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, eval: &EvalConfig) -> Result<MetricsReport> {
    if eval.use_student {
        evaluate_model(&ckpt.student, dataset, eval)
    } else {
        evaluate_model(&ckpt.teacher_model(), dataset, eval)
    }
}

/// Leakage AUCs and per-class PCA projections.
#[derive(Clone, Debug)]
pub struct ProbeReport {
    /// `auc[c][k]`: probe on class-`c` features predicting class `k`.
    pub auc: Vec<Vec<Option<f64>>>,
    pub pca: Vec<PcaResult>,
}

impl ProbeReport {
    pub fn classes(&self) -> usize {
        self.auc.len()
    }

    fn mean_where(&self, keep: impl Fn(usize, usize) -> bool) -> Option<f64> {
        let vals: Vec<f64> = (0..self.classes())
            .flat_map(|c| (0..self.classes()).map(move |k| (c, k)))
            .filter(|&(c, k)| keep(c, k))
            .filter_map(|(c, k)| self.auc[c][k])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn diagonal_mean(&self) -> Option<f64> {
        self.mean_where(|c, k| c == k)
    }

    pub fn off_diagonal_mean(&self) -> Option<f64> {
        self.mean_where(|c, k| c != k)
    }

    /// Long format, one row per ordered pair; `kind` is `self` on the diagonal.
    pub fn leakage_csv(&self) -> String {
        let mut s = String::from("feature_class,target_class,kind,auc\n");
        for (c, row) in self.auc.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let kind = if c == k { "self" } else { "cross" };
                let v = v.map_or("na".to_string(), |v| format!("{v:.6}"));
                writeln!(s, "{c},{k},{kind},{v}").expect("string write");
            }
        }
        s
    }

    /// Writes `leakage.csv` and `pca_class{c}.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        atomic_write(&dir.join("leakage.csv"), self.leakage_csv().as_bytes())?;
        for (c, p) in self.pca.iter().enumerate() {
            atomic_write(&dir.join(format!("pca_class{c}.csv")), p.to_csv().as_bytes())?;
        }
        Ok(())
    }
}

/// Features that represent class `c`: `Zᶜ` for projector heads, `U` otherwise.
fn class_features(model: &SedModel, clips: &[&ClipRecord]) -> Result<(Vec<DenseArray>, Vec<(String, usize)>)> {
    let c = model.config.n_classes;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); c];
    let mut width = vec![0; c];
    let mut meta = Vec::new();
    for clip in clips {
        let pred = model.predict(&clip.features)?;
        for k in 0..c {
            let f = match model.config.head {
                HeadKind::Projectors => &pred.z[k],
                HeadKind::Linear => &pred.u,
            };
            width[k] = f.cols();
            rows[k].extend_from_slice(f.data());
        }
        meta.extend((0..pred.u.rows()).map(|t| (clip.id.clone(), t)));
    }
    let n = meta.len();
    let feats = rows
        .into_iter()
        .zip(width)
        .map(|(r, w)| DenseArray::new(vec![n, w], r))
        .collect::<Result<_>>()?;
    Ok((feats, meta))
}

/// For every ordered class pair `(c, k)`, how well a linear probe on
/// class-`c` features recovers class-`k` frame labels (held-out AUC).
pub fn probe_model(model: &SedModel, dataset: &Dataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    check_compatible(&model.config, dataset)?;
    let clips = strong_clips(dataset)?;
    let (feats, meta) = class_features(model, &clips)?;
    let c = model.config.n_classes;
    let labels: Vec<Vec<bool>> = (0..c)
        .map(|k| {
            clips
                .iter()
                .flat_map(|clip| {
                    let y = clip.strong().expect("strong clip");
                    (0..y.frames()).map(move |t| y.get(t, k))
                })
                .collect()
        })
        .collect();
    let mut auc = vec![vec![None; c]; c];
    for (fc, f) in feats.iter().enumerate() {
        for (k, y) in labels.iter().enumerate() {
            auc[fc][k] = leakage_probe(f, y, cfg)?;
        }
    }
    let pca = feats
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let m: Vec<(String, usize, bool)> =
                meta.iter().zip(&labels[k]).map(|((id, t), &y)| (id.clone(), *t, y)).collect();
            pca_export(f, &m, cfg.seed)
        })
        .collect::<Result<_>>()?;
    Ok(ProbeReport { auc, pca })
}

/// Probes the checkpoint's teacher (or student with `use_student`).
pub fn probe(ckpt: &Checkpoint, dataset: &Dataset, use_student: bool, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if use_student {
        probe_model(&ckpt.student, dataset, cfg)
    } else {
        probe_model(&ckpt.teacher_model(), dataset, cfg)
    }
}
