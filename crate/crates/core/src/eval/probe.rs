use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::kernels::sigmoid;
use crate::tensor::DenseArray;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.1,
            l2: 1e-3,
            seed: 0,
        }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` unless both labels occur.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives (Mann-Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Fits an L2-regularized logistic probe on a seeded random half of the rows
/// of `features` (standardized with that half's statistics) and returns its
/// AUC on the other half. `None` when either half lacks a label value.
pub fn leakage_probe(features: &DenseArray, labels: &[bool], cfg: &ProbeConfig) -> Result<Option<f64>> {
    let (n, d) = (features.rows(), features.cols());
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} rows", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (train, test) = idx.split_at(n / 2);
    let both = |set: &[usize]| {
        set.iter().any(|&i| labels[i]) && set.iter().any(|&i| !labels[i])
    };
    if !both(train) || !both(test) {
        return Ok(None);
    }

    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in train {
        mean.iter_mut().zip(features.row(i)).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in train {
        for ((s, x), m) in sd.iter_mut().zip(features.row(i)).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    // Constant columns stay at zero after centering.
    sd.iter_mut()
        .for_each(|s| *s = if *s > 0.0 { (*s / train.len() as f64).sqrt() } else { 1.0 });
    let standardize = |i: usize| -> Vec<f64> {
        features
            .row(i)
            .iter()
            .zip(&mean)
            .zip(&sd)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| standardize(i)).collect();

    let mut w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut b = 0.0;
    let inv = 1.0 / train.len() as f64;
    for _ in 0..cfg.steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &i) in xs.iter().zip(train) {
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let r = sigmoid(s) - labels[i] as u8 as f64;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
            gb += r;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= cfg.step_size * (g * inv + cfg.l2 * *wi);
        }
        b -= cfg.step_size * gb * inv;
    }

    let scores: Vec<f64> = test
        .iter()
        .map(|&i| standardize(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b)
        .collect();
    let truth: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    Ok(auc(&scores, &truth))
}
