//! Generated data must be learnable: on clips without overlapping events, a
//! per-frame logistic regression on raw features separates the classes.

use sedx::synth::{generate_dataset, Dataset, DatasetSpec};

/// One row per label frame: the two input frames it covers, concatenated.
fn frames(ds: &Dataset, clips: std::ops::Range<usize>) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for clip in &ds.clips[clips] {
        let y = clip.strong().expect("strong clip");
        let f = clip.features.shape()[1];
        let hop = clip.features.shape()[0] / y.frames();
        for t in 0..y.frames() {
            xs.push(clip.features.data()[t * hop * f..(t + 1) * hop * f].to_vec());
            ys.push((0..y.classes()).map(|c| y.get(t, c)).collect());
        }
    }
    (xs, ys)
}

fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) {
    let d = train[0].len();
    for j in 0..d {
        let n = train.len() as f64;
        let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-9);
        for r in train.iter_mut().chain(test.iter_mut()) {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

fn fit(xs: &[Vec<f64>], ys: &[bool]) -> (Vec<f64>, f64) {
    let d = xs[0].len();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let n = xs.len() as f64;
    for _ in 0..300 {
        let (mut gw, mut gb) = (vec![0.0; d], 0.0);
        for (x, &y) in xs.iter().zip(ys) {
            let z = b + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - y as u8 as f64;
            gb += r;
            gw.iter_mut().zip(x).for_each(|(g, a)| *g += r * a);
        }
        b -= 0.5 * gb / n;
        w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= 0.5 * (g / n + 1e-3 * *w));
    }
    (w, b)
}

#[test]
fn per_frame_linear_classifier_reaches_f1_above_0_7_without_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        strong: 80,
        overlap: 0.0,
        seed: 31,
        ..DatasetSpec::default()
    };
    generate_dataset(&spec, dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let (mut xtr, ytr) = frames(&ds, 0..40);
    let (mut xte, yte) = frames(&ds, 40..80);
    assert!(ytr.iter().all(|r| r.iter().filter(|&&b| b).count() <= 1), "dataset has overlaps");
    standardize(&mut xtr, &mut xte);

    let mut f1s = Vec::new();
    for c in 0..ds.n_classes {
        let col = |ys: &[Vec<bool>]| ys.iter().map(|r| r[c]).collect::<Vec<_>>();
        let (w, b) = fit(&xtr, &col(&ytr));
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (x, &y) in xte.iter().zip(&col(&yte)) {
            let p = b + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0;
            match (p, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        f1s.push(2.0 * tp as f64 / (2 * tp + fp + fn_).max(1) as f64);
    }
    let macro_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
    assert!(macro_f1 > 0.7, "macro frame F1 {macro_f1:.3} (per class {f1s:.3?})");
}
