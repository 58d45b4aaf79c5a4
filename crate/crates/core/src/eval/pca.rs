use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

const TOL: f64 = 1e-8;
const MAX_ITERS: usize = 20_000;
/// Eigenvalues below this fraction of the leading one count as zero.
const RANK_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaPoint {
    pub clip_id: String,
    pub frame: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub truth: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit principal directions, leading first.
    pub directions: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    /// Fewer than two nonzero eigenvalues; `pc2` is then 0.
    pub rank_deficient: bool,
    pub points: Vec<PcaPoint>,
}

impl PcaResult {
    pub fn explained_fraction(&self, total_variance: f64) -> f64 {
        if total_variance == 0.0 {
            1.0
        } else {
            (self.eigenvalues[0] + self.eigenvalues[1]) / total_variance
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip_id,frame,pc1,pc2,truth,rank_deficient\n");
        for p in &self.points {
            writeln!(
                s,
                "{},{},{:.9},{:.9},{},{}",
                p.clip_id, p.frame, p.pc1, p.pc2, p.truth as u8, self.rank_deficient as u8
            )
            .expect("string write");
        }
        s
    }
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair of the symmetric `m`, restricted to the complement of `avoid`.
fn power_iteration(m: &[f64], d: usize, avoid: Option<&[f64]>, rng: &mut impl Rng) -> (Vec<f64>, f64) {
    let project_out = |v: &mut Vec<f64>| {
        if let Some(q) = avoid {
            let p = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
        }
    };
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project_out(&mut v);
    normalize(&mut v);
    for _ in 0..MAX_ITERS {
        let mut w = mat_vec(m, &v);
        project_out(&mut w);
        if normalize(&mut w) == 0.0 {
            return (v, 0.0);
        }
        let sign = if dot(&w, &v) < 0.0 { -1.0 } else { 1.0 };
        let delta = w.iter().zip(&v).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < TOL {
            break;
        }
    }
    let lambda = dot(&v, &mat_vec(m, &v));
    (v, lambda)
}

/// Projects mean-centered rows of `features` (`N × D`) onto their top two
/// principal directions. `meta[k]` holds the clip id, frame and truth bit of row `k`.
pub fn pca_export(features: &DenseArray, meta: &[(String, usize, bool)], seed: u64) -> Result<PcaResult> {
    let (n, d) = (features.rows(), features.cols());
    if n < 3 {
        return Err(Error::Contract(format!("PCA needs at least 3 frames, got {n}")));
    }
    if meta.len() != n {
        return Err(Error::Contract(format!("{} metadata rows for {n} frames", meta.len())));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(features.row(i)).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| features.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += r[a] * r[b];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q1, l1) = power_iteration(&cov, d, None, &mut rng);
    let mut deflated = cov.clone();
    for a in 0..d {
        for b in 0..d {
            deflated[a * d + b] -= l1 * q1[a] * q1[b];
        }
    }
    let (mut q2, mut l2) = if d >= 2 {
        power_iteration(&deflated, d, Some(&q1), &mut rng)
    } else {
        (vec![0.0; d], 0.0)
    };
    let rank_deficient = l1 <= 0.0 || l2 <= RANK_EPS * l1;
    if rank_deficient {
        log::warn!("PCA input has fewer than two nonzero principal components");
        l2 = l2.max(0.0);
        q2.iter_mut().for_each(|x| *x = 0.0);
    }
    let points = centered
        .iter()
        .zip(meta)
        .map(|(r, (id, frame, truth))| PcaPoint {
            clip_id: id.clone(),
            frame: *frame,
            pc1: dot(r, &q1),
            pc2: if rank_deficient { 0.0 } else { dot(r, &q2) },
            truth: *truth,
        })
        .collect();
    Ok(PcaResult {
        mean,
        directions: [q1, q2],
        eigenvalues: [l1, l2],
        rank_deficient,
        points,
    })
}
