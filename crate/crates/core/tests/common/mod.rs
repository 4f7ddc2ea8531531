//! Data generators and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use scrubkit::probes::LabeledSet;
use scrubkit::Matrix;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn unit_vector(rng: &mut ChaCha8Rng, h: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..h).map(|_| normal(rng)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
pub fn random_rotation(rng: &mut ChaCha8Rng, h: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(h);
    while basis.len() < h {
        let mut v: Vec<f64> = (0..h).map(|_| normal(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    basis
}

/// Two classes in isotropic unit noise, means `±sep/2` along a random
/// direction. Labels alternate.
pub fn separated_gaussians(rng: &mut ChaCha8Rng, n: usize, h: usize, sep: f64) -> LabeledSet {
    let u = unit_vector(rng, h);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z = i % 2;
        let s = if z == 0 { -sep / 2.0 } else { sep / 2.0 };
        rows.push((0..h).map(|d| normal(rng) + s * u[d]).collect::<Vec<f64>>());
        labels.push(z);
    }
    LabeledSet::from_rows(&rows, labels, 2).unwrap()
}

/// `k` classes with a shared anisotropic covariance (axis scales spread over
/// four orders of magnitude, randomly rotated) and random class means.
pub fn anisotropic(rng: &mut ChaCha8Rng, n: usize, h: usize, k: usize, sep: f64) -> LabeledSet {
    let rot = random_rotation(rng, h);
    let scales: Vec<f64> = (0..h).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
    let offset: Vec<f64> = (0..h).map(|_| rng.random_range(-5.0..5.0)).collect();
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| unit_vector(rng, h).into_iter().map(|v| v * sep).collect())
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z = i % k;
        let e: Vec<f64> = scales.iter().map(|s| s * normal(rng)).collect();
        let row: Vec<f64> = (0..h)
            .map(|d| offset[d] + means[z][d] + rot.iter().zip(&e).map(|(r, ei)| r[d] * ei).sum::<f64>())
            .collect();
        rows.push(row);
        labels.push(z);
    }
    LabeledSet::from_rows(&rows, labels, k).unwrap()
}

pub fn rows_of(data: &LabeledSet) -> Vec<Vec<f64>> {
    (0..data.len()).map(|i| data.row(i).to_vec()).collect()
}

/// Per-class and overall means by direct summation.
pub fn class_means(data: &LabeledSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    let h = data.dim();
    let k = data.n_classes();
    let mut sums = vec![vec![0.0; h]; k];
    let mut counts = vec![0usize; k];
    let mut total = vec![0.0; h];
    for i in 0..data.len() {
        let z = data.labels()[i];
        counts[z] += 1;
        for d in 0..h {
            sums[z][d] += data.row(i)[d];
            total[d] += data.row(i)[d];
        }
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    (means, total.into_iter().map(|v| v / data.len() as f64).collect())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Two-pass population mean and covariances.
pub struct BatchMoments {
    pub mean_x: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub cov_xx: Matrix,
    pub cov_xz: Matrix,
}

pub fn batch_moments(xs: &[Vec<f64>], zs: &[Vec<f64>]) -> BatchMoments {
    let n = xs.len() as f64;
    let (h, k) = (xs[0].len(), zs[0].len());
    let mut mean_x = vec![0.0; h];
    let mut mean_z = vec![0.0; k];
    for (x, z) in xs.iter().zip(zs) {
        mean_x.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        mean_z.iter_mut().zip(z).for_each(|(m, v)| *m += v / n);
    }
    let mut cov_xx = Matrix::zeros(h, h);
    let mut cov_xz = Matrix::zeros(h, k);
    for (x, z) in xs.iter().zip(zs) {
        let cx = diff(x, &mean_x);
        let cz = diff(z, &mean_z);
        for i in 0..h {
            for j in 0..h {
                cov_xx.row_mut(i)[j] += cx[i] * cx[j] / n;
            }
            for j in 0..k {
                cov_xz.row_mut(i)[j] += cx[i] * cz[j] / n;
            }
        }
    }
    BatchMoments {
        mean_x,
        mean_z,
        cov_xx,
        cov_xz,
    }
}

/// Largest absolute difference over the largest magnitude in `reference`.
pub fn rel_err(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(reference).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// The eraser that orthogonally projects out the class-mean difference
/// after centering. Two classes only.
pub struct NaiveEraser {
    pub mean: Vec<f64>,
    pub dir: Vec<f64>,
}

impl NaiveEraser {
    pub fn fit(data: &LabeledSet) -> Self {
        assert_eq!(data.n_classes(), 2);
        let (means, mean) = class_means(data);
        let d = diff(&means[1], &means[0]);
        let n = norm(&d);
        Self {
            mean,
            dir: d.into_iter().map(|v| v / n).collect(),
        }
    }

    pub fn erase(&self, x: &[f64]) -> Vec<f64> {
        let c = diff(x, &self.mean);
        let dot: f64 = c.iter().zip(&self.dir).map(|(a, b)| a * b).sum();
        x.iter().zip(&self.dir).map(|(v, d)| v - dot * d).collect()
    }

    pub fn erase_set(&self, data: &LabeledSet) -> LabeledSet {
        let rows: Vec<Vec<f64>> = rows_of(data).iter().map(|r| self.erase(r)).collect();
        LabeledSet::from_rows(&rows, data.labels().to_vec(), data.n_classes()).unwrap()
    }
}

/// Word-level Levenshtein distance by memoized recursion.
pub fn levenshtein_oracle(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == 0 {
            j
        } else if j == 0 {
            i
        } else {
            let sub = go(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
            let del = go(a, b, i - 1, j, memo) + 1;
            let ins = go(a, b, i, j - 1, memo) + 1;
            sub.min(del).min(ins)
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, a.len(), b.len(), &mut memo)
}

/// Greedy CTC by definition: per-frame argmax (first maximum), merge runs,
/// drop blanks.
pub fn ctc_collapse_oracle(logits: &Matrix, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut runs = path.clone();
    runs.dedup();
    runs.into_iter().filter(|&s| s != blank).collect()
}

/// Random word sequence over a small vocabulary, so matches are common.
pub fn random_words(rng: &mut ChaCha8Rng, max_len: usize, min_len: usize) -> Vec<String> {
    const WORDS: [&str; 6] = ["a", "b", "c", "dd", "ee", "f"];
    let n = rng.random_range(min_len..=max_len);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}
