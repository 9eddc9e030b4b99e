//! Global-embedding baseline: a one-hidden-layer MLP on the concatenated
//! text EOS and image CLS vectors, trained with the same contrastive loss
//! and batches as the map scorer.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bench::Sample;
use crate::error::{Error, Result};
use crate::scorer::contrastive_loss;
use crate::sphere::{derive_seed, rng_for};
use crate::train::{batch_pairs, plan_batches, EpochLog, Featurizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input: usize,
    pub hidden: usize,
    /// hidden x input, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpParams {
    pub fn init(input: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::ConfigInvalid("mlp sizes must be positive".into()));
        }
        let mut rng = rng_for(seed, 0);
        let n1 = Normal::new(0.0, (2.0 / input as f64).sqrt()).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        Ok(MlpParams {
            input,
            hidden,
            w1: (0..input * hidden).map(|_| n1.sample(&mut rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| n2.sample(&mut rng)).collect(),
            b2: 0.0,
        })
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * self.input..(k + 1) * self.input];
                (self.b1[k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).max(0.0)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input {
            return Err(Error::ShapeMismatch(format!("mlp input {} != {}", x.len(), self.input)));
        }
        let h = self.hidden_act(x);
        Ok(self.b2 + h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Accumulates `dscore` times the gradient at `x` into `g`.
    fn backward(&self, x: &[f64], dscore: f64, g: &mut MlpParams) {
        let h = self.hidden_act(x);
        g.b2 += dscore;
        for k in 0..self.hidden {
            g.w2[k] += dscore * h[k];
            if h[k] > 0.0 {
                let d = dscore * self.w2[k];
                g.b1[k] += d;
                let row = &mut g.w1[k * self.input..(k + 1) * self.input];
                for (r, xi) in row.iter_mut().zip(x) {
                    *r += d * xi;
                }
            }
        }
    }

    fn zeros_like(&self) -> MlpParams {
        MlpParams {
            input: self.input,
            hidden: self.hidden,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.hidden],
            b2: 0.0,
        }
    }

    fn flat_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, std::slice::from_mut(&mut self.b2)]
    }

    fn all_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<MlpParams> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        let p: MlpParams = serde_json::from_str(&s)?;
        if p.w1.len() != p.input * p.hidden || p.b1.len() != p.hidden || p.w2.len() != p.hidden {
            return Err(Error::Format("mlp tensor sizes do not match header".into()));
        }
        Ok(p)
    }
}

/// EOS of the caption followed by CLS of the image.
pub fn global_features(feat: &Featurizer, text: &crate::oracle::DenseEmbedding, image: &crate::oracle::DenseEmbedding) -> Vec<f64> {
    let mut x = feat.encoder.eos(text).as_slice().to_vec();
    x.extend_from_slice(feat.encoder.cls(image).as_slice());
    x
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
    step: i32,
    lr: f64,
}

impl Adam {
    fn update(&mut self, p: &mut MlpParams, g: &mut MlpParams) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let (c1, c2) = (1.0 - B1.powi(self.step), 1.0 - B2.powi(self.step));
        for (((p, m), v), g) in p.flat_mut().into_iter().zip(self.m.flat_mut()).zip(self.v.flat_mut()).zip(g.flat_mut()) {
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
            }
        }
    }
}

pub fn train_mlp(
    data: &[Sample],
    feat: &Featurizer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &MlpParams),
) -> Result<(MlpParams, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = MlpParams::init(2 * feat.encoder.dim(), cfg.hidden, derive_seed(cfg.seed, 1))?;
    let mut adam = Adam { m: params.zeros_like(), v: params.zeros_like(), step: 0, lr: cfg.lr };
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(derive_seed(cfg.seed, 2), epoch as u64);
        let batches = plan_batches(data, cfg.samples_per_batch, cfg.shuffle, epoch_seed);
        let (mut loss_sum, mut hits, mut rows) = (0.0, 0usize, 0usize);
        for batch in &batches {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data[i]).collect();
            let (texts, images) = batch_pairs(feat, &samples, epoch_seed)?;
            let b = texts.len();
            if b < 2 {
                continue;
            }
            let xs: Vec<Vec<f64>> = texts.iter().flat_map(|t| images.iter().map(|i| global_features(feat, &t.1, i))).collect();
            let scores = xs.iter().map(|x| params.forward(x)).collect::<Result<Vec<_>>>()?;
            let (loss, dscores) = contrastive_loss(&scores, b)?;
            let mut g = params.zeros_like();
            for (x, d) in xs.iter().zip(&dscores) {
                params.backward(x, *d, &mut g);
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient);
            }
            adam.update(&mut params, &mut g);
            loss_sum += loss;
            rows += b;
            hits += (0..b).filter(|&i| (0..b).all(|j| j == i || scores[i * b + j] < scores[i * b + i])).count();
        }
        let entry = EpochLog { epoch: epoch + 1, loss: loss_sum / batches.len().max(1) as f64, accuracy: hits as f64 / rows.max(1) as f64 };
        on_epoch(&entry, &params);
        log.push(entry);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn backward_matches_finite_differences() {
        let p = MlpParams::init(6, 5, 3).unwrap();
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = p.zeros_like();
        p.backward(&x, 1.0, &mut g);
        let h = 1e-6;
        for idx in [0usize, 7, 13, 29] {
            let mut a = p.clone();
            a.w1[idx] += h;
            let mut b = p.clone();
            b.w1[idx] -= h;
            let fd = (a.forward(&x).unwrap() - b.forward(&x).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd, g.w1[idx], epsilon = 1e-6);
        }
        let mut a = p.clone();
        a.b2 += 1.0;
        assert_relative_eq!(a.forward(&x).unwrap() - p.forward(&x).unwrap(), g.b2);
    }

    #[test]
    fn input_size_is_checked() {
        let p = MlpParams::init(4, 3, 0).unwrap();
        assert!(matches!(p.forward(&[0.0; 3]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn json_round_trip() {
        let p = MlpParams::init(4, 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.json");
        p.save_json(&path).unwrap();
        assert_eq!(MlpParams::load_json(&path).unwrap(), p);
        assert!(matches!(MlpParams::load_json(&dir.path().join("nope.json")), Err(Error::MissingArtifact(_))));
    }
}
