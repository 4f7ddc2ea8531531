//! Multinomial logistic regression trained by plain per-sample SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledSet, Standardizer};
use super::{Convergence, TrainingMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearHyper {
    /// Initial step size; decays as `eta0 / (1 + eta0·l2·t)`.
    pub eta0: f64,
    pub l2: f64,
    pub convergence: Convergence,
}

impl Default for LinearHyper {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            l2: 1e-4,
            convergence: Convergence::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `k×H`, acting on standardized features.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub seed: u64,
    pub meta: TrainingMeta,
    scaler: Standardizer,
}

impl LinearProbe {
    pub fn train(train: &LabeledSet, seed: u64, hyper: &LinearHyper) -> Result<Self> {
        train.check_trainable()?;
        let k = train.n_classes();
        let d = train.dim();
        let scaler = Standardizer::fit(train);
        let x = scaler.transform(train);
        let y = train.labels();
        let n = train.len();

        let mut w = Matrix::zeros(k, d);
        let mut b = vec![0.0; k];
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = vec![0.0; k];
        let mut t = 0.0_f64;

        let mut tracker = hyper.convergence.tracker();
        let mut epochs = 0;
        let mut last_loss = f64::NAN;
        while epochs < hyper.convergence.max_epochs {
            epochs += 1;
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for &i in &order {
                let xi = x.row(i);
                let eta = hyper.eta0 / (1.0 + hyper.eta0 * hyper.l2 * t);
                t += 1.0;
                softmax_scores(&w, &b, xi, &mut probs);
                loss_sum -= probs[y[i]].max(1e-300).ln();
                // gradient of cross-entropy is (p - onehot(y)) xᵀ
                let decay = 1.0 - eta * hyper.l2;
                for c in 0..k {
                    let g = probs[c] - if c == y[i] { 1.0 } else { 0.0 };
                    let row = w.row_mut(c);
                    for (wj, xj) in row.iter_mut().zip(xi) {
                        *wj = *wj * decay - eta * g * xj;
                    }
                    b[c] -= eta * g;
                }
            }
            let reg = 0.5 * hyper.l2 * w.as_slice().iter().map(|v| v * v).sum::<f64>();
            last_loss = loss_sum / n as f64 + reg;
            if !last_loss.is_finite() {
                return Err(Error::NonFinite("linear probe loss diverged".into()));
            }
            if tracker.observe(last_loss) {
                break;
            }
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("linear probe weights".into()));
        }
        Ok(Self {
            weights: w,
            bias: b,
            seed,
            meta: TrainingMeta {
                epochs,
                final_loss: last_loss,
            },
            scaler,
        })
    }

    pub fn predict_one(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; x.len()];
        self.scaler.transform_into(x, &mut z);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..self.bias.len() {
            let s: f64 = self.bias[c] + self.weights.row(c).iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, data: &LabeledSet) -> Vec<usize> {
        (0..data.len()).map(|i| self.predict_one(data.row(i))).collect()
    }
}

fn softmax_scores(w: &Matrix, b: &[f64], x: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (c, o) in out.iter_mut().enumerate() {
        *o = b[c] + w.row(c).iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
