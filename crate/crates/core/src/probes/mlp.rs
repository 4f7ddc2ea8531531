//! One-hidden-layer ReLU classifier trained with Adam on minibatches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledSet, Standardizer};
use super::{Convergence, TrainingMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub convergence: Convergence,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            l2: 1e-4,
            convergence: Convergence::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    /// `hidden×H`
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    /// `k×hidden`
    pub output_weights: Matrix,
    pub output_bias: Vec<f64>,
    pub seed: u64,
    pub meta: TrainingMeta,
    scaler: Standardizer,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let step = lr * c2.sqrt() / c1;
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (j, (pj, gj)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[offset + j];
                let v = &mut self.v[offset + j];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gj;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gj * gj;
                *pj -= step * *m / (v.sqrt() + Self::EPS);
            }
            offset += p.len();
        }
    }
}

impl MlpProbe {
    pub fn train(train: &LabeledSet, seed: u64, hyper: &MlpHyper) -> Result<Self> {
        train.check_trainable()?;
        if hyper.hidden == 0 || hyper.batch_size == 0 {
            return Err(Error::Config("mlp hidden size and batch size must be positive".into()));
        }
        let k = train.n_classes();
        let d = train.dim();
        let hdim = hyper.hidden;
        let scaler = Standardizer::fit(train);
        let x = scaler.transform(train);
        let y = train.labels();
        let n = train.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Glorot-uniform initialization
        let mut init = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Matrix::from_vec(rows, cols, data).expect("init shape")
        };
        let mut w1 = init(hdim, d);
        let mut b1: Vec<f64> = vec![0.0; hdim];
        let mut w2 = init(k, hdim);
        let mut b2: Vec<f64> = vec![0.0; k];
        let mut b1_init = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let bound1 = (6.0 / (hdim + d) as f64).sqrt();
        b1.iter_mut().for_each(|b| *b = b1_init.random_range(-bound1..bound1));

        let mut adam = Adam::new(hdim * d + hdim + k * hdim + k);
        let mut g_w1 = Matrix::zeros(hdim, d);
        let mut g_b1 = vec![0.0; hdim];
        let mut g_w2 = Matrix::zeros(k, hdim);
        let mut g_b2 = vec![0.0; k];
        let mut hidden = vec![0.0; hdim];
        let mut probs = vec![0.0; k];
        let mut d_hidden = vec![0.0; hdim];
        let mut order: Vec<usize> = (0..n).collect();

        let mut tracker = hyper.convergence.tracker();
        let mut epochs = 0;
        let mut last_loss = f64::NAN;
        while epochs < hyper.convergence.max_epochs {
            epochs += 1;
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(hyper.batch_size) {
                g_w1.as_mut_slice().fill(0.0);
                g_b1.fill(0.0);
                g_w2.as_mut_slice().fill(0.0);
                g_b2.fill(0.0);
                for &i in batch {
                    let xi = x.row(i);
                    forward(&w1, &b1, &w2, &b2, xi, &mut hidden, &mut probs);
                    loss_sum -= probs[y[i]].max(1e-300).ln();
                    d_hidden.fill(0.0);
                    for c in 0..k {
                        let g = probs[c] - if c == y[i] { 1.0 } else { 0.0 };
                        g_b2[c] += g;
                        for ((gw, h), (dh, w)) in g_w2
                            .row_mut(c)
                            .iter_mut()
                            .zip(&hidden)
                            .zip(d_hidden.iter_mut().zip(w2.row(c)))
                        {
                            *gw += g * h;
                            *dh += g * w;
                        }
                    }
                    for j in 0..hdim {
                        if hidden[j] <= 0.0 {
                            continue;
                        }
                        let g = d_hidden[j];
                        g_b1[j] += g;
                        for (gw, xv) in g_w1.row_mut(j).iter_mut().zip(xi) {
                            *gw += g * xv;
                        }
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                for (g, w) in g_w1.as_mut_slice().iter_mut().zip(w1.as_slice()) {
                    *g = *g * scale + hyper.l2 * w;
                }
                for (g, w) in g_w2.as_mut_slice().iter_mut().zip(w2.as_slice()) {
                    *g = *g * scale + hyper.l2 * w;
                }
                g_b1.iter_mut().for_each(|g| *g *= scale);
                g_b2.iter_mut().for_each(|g| *g *= scale);
                adam.apply(
                    &mut [w1.as_mut_slice(), &mut b1, w2.as_mut_slice(), &mut b2],
                    &[g_w1.as_slice(), &g_b1, g_w2.as_slice(), &g_b2],
                    hyper.learning_rate,
                );
            }
            let reg = 0.5
                * hyper.l2
                * (w1.as_slice().iter().chain(w2.as_slice()).map(|v| v * v).sum::<f64>());
            last_loss = loss_sum / n as f64 + reg;
            if !last_loss.is_finite() {
                return Err(Error::NonFinite("mlp probe loss diverged".into()));
            }
            if tracker.observe(last_loss) {
                break;
            }
        }
        Ok(Self {
            hidden_weights: w1,
            hidden_bias: b1,
            output_weights: w2,
            output_bias: b2,
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
        let mut hidden = vec![0.0; self.hidden_bias.len()];
        let mut probs = vec![0.0; self.output_bias.len()];
        forward(
            &self.hidden_weights,
            &self.hidden_bias,
            &self.output_weights,
            &self.output_bias,
            &z,
            &mut hidden,
            &mut probs,
        );
        probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
            .0
    }

    pub fn predict(&self, data: &LabeledSet) -> Vec<usize> {
        (0..data.len()).map(|i| self.predict_one(data.row(i))).collect()
    }
}

fn forward(w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64], x: &[f64], hidden: &mut [f64], probs: &mut [f64]) {
    for (j, h) in hidden.iter_mut().enumerate() {
        let a = b1[j] + w1.row(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        *h = a.max(0.0);
    }
    let mut max = f64::NEG_INFINITY;
    for (c, p) in probs.iter_mut().enumerate() {
        *p = b2[c] + w2.row(c).iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>();
        max = max.max(*p);
    }
    let mut total = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
}
