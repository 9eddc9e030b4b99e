//! Caption-choice evaluation of the map scorer and the global-vector
//! baselines, plus the data-scaling curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bench::{chance_level, questions, Family, Sample};
use crate::error::{Error, Result};
use crate::mlp::{global_features, MlpParams};
use crate::scorer::ScorerParams;
use crate::sphere::derive_seed;
use crate::train::{sample_key, train, Featurizer, TrainConfig};

/// Scores within this distance of the maximum count as tied.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Map { params: &'a ScorerParams<f32>, use_frs: bool },
    Cosine,
    Mlp(&'a MlpParams),
}

impl Model<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Map { use_frs: true, .. } => "dcsm",
            Model::Map { use_frs: false, .. } => "dcsm_no_fr",
            Model::Cosine => "cosine",
            Model::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model: String,
    pub family: Family,
    pub accuracy: f64,
    pub chance: f64,
    /// Correct-caption score minus the best wrong one, per question.
    pub margins: Vec<f64>,
}

impl EvalResult {
    pub fn questions(&self) -> usize {
        self.margins.len()
    }

    pub fn mean_margin(&self) -> f64 {
        if self.margins.is_empty() {
            return 0.0;
        }
        self.margins.iter().sum::<f64>() / self.margins.len() as f64
    }
}

/// Credit for one argmax choice: a correct caption tied with k-1 others
/// earns 1/k, the expectation of a uniformly random tie-break.
pub fn choice_credit(scores: &[f64], correct: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores[correct] < max - TIE_EPS {
        return 0.0;
    }
    1.0 / scores.iter().filter(|&&s| s >= max - TIE_EPS).count() as f64
}

/// Every question of every sample, grouped by family. Image noise for each
/// question is keyed by (seed, sample, question index).
pub fn evaluate(model: Model<'_>, samples: &[Sample], feat: &Featurizer, seed: u64) -> Result<Vec<EvalResult>> {
    let mut by_family: BTreeMap<Family, (f64, Vec<f64>)> = BTreeMap::new();
    for s in samples {
        let entry = by_family.entry(s.family).or_default();
        for (qi, q) in questions(s, &feat.world).into_iter().enumerate() {
            let image = feat.image(&q.scene, derive_seed(seed, 4 * sample_key(s) + qi as u64))?;
            let scores = q
                .captions
                .iter()
                .map(|c| {
                    let text = feat.text(c)?;
                    match model {
                        Model::Map { params, use_frs } => Ok(params.score(&feat.map(&text, &image, use_frs)?)? as f64),
                        Model::Cosine => feat.encoder.eos(&text.1).cos(feat.encoder.cls(&image)),
                        Model::Mlp(p) => p.forward(&global_features(feat, &text.1, &image)),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            entry.0 += choice_credit(&scores, q.correct);
            let best_wrong = scores.iter().enumerate().filter(|&(i, _)| i != q.correct).map(|(_, &s)| s).fold(f64::NEG_INFINITY, f64::max);
            entry.1.push(scores[q.correct] - best_wrong);
        }
    }
    Ok(by_family
        .into_iter()
        .map(|(family, (credit, margins))| EvalResult {
            model: model.name().to_string(),
            family,
            accuracy: credit / margins.len().max(1) as f64,
            chance: chance_level(family),
            margins,
        })
        .collect())
}

pub fn results_csv(results: &[EvalResult]) -> String {
    let mut s = String::from("model,family,accuracy,chance,questions,mean_margin\n");
    for r in results {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.model, r.family, r.accuracy, r.chance, r.questions(), r.mean_margin()));
    }
    s
}

pub fn margins_csv(results: &[EvalResult]) -> String {
    let mut s = String::from("model,family,question,margin\n");
    for r in results {
        for (i, m) in r.margins.iter().enumerate() {
            s.push_str(&format!("{},{},{i},{m}\n", r.model, r.family));
        }
    }
    s
}

/// Fixed-width accuracy table for text reports.
pub fn results_table(results: &[EvalResult]) -> String {
    let mut s = format!("{:<12} {:<10} {:>9} {:>7} {:>10}\n", "model", "family", "accuracy", "chance", "questions");
    for r in results {
        s.push_str(&format!("{:<12} {:<10} {:>9.4} {:>7.2} {:>10}\n", r.model, r.family.to_string(), r.accuracy, r.chance, r.questions()));
    }
    s
}

/// The first `n` samples of each family, in dataset order.
pub fn per_family_prefix(data: &[Sample], n: usize) -> Result<Vec<Sample>> {
    let mut taken: BTreeMap<Family, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for s in data {
        let t = taken.entry(s.family).or_default();
        if *t < n {
            *t += 1;
            out.push(s.clone());
        }
    }
    if let Some((f, t)) = taken.iter().find(|(_, &t)| t < n) {
        return Err(Error::ConfigInvalid(format!("only {t} {f} samples available, {n} requested")));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub multiplier: f64,
    pub train_per_family: usize,
    pub family: Family,
    pub accuracy: f64,
}

pub const SCALING_MULTIPLIERS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

pub fn scaling_size(base: usize, multiplier: f64) -> usize {
    (base as f64 * multiplier).round() as usize
}

/// Trains one map scorer per multiplier on nested prefixes of `train_data`
/// and evaluates each on the same `eval_data`. `reuse` supplies already
/// trained points (keyed by per-family size) so callers can share models.
pub fn scaling_curve(
    train_data: &[Sample],
    eval_data: &[Sample],
    feat: &Featurizer,
    cfg: &TrainConfig,
    base: usize,
    multipliers: &[f64],
    eval_seed: u64,
    reuse: &BTreeMap<usize, Vec<EvalResult>>,
) -> Result<Vec<ScalingPoint>> {
    let mut out = Vec::new();
    for &m in multipliers {
        let n = scaling_size(base, m);
        let results = match reuse.get(&n) {
            Some(r) => r.clone(),
            None => {
                let subset = per_family_prefix(train_data, n)?;
                let model = train(&subset, feat, cfg, |_, _| {})?;
                evaluate(Model::Map { params: &model.params, use_frs: cfg.use_frs }, eval_data, feat, eval_seed)?
            }
        };
        out.extend(results.into_iter().map(|r| ScalingPoint { multiplier: m, train_per_family: n, family: r.family, accuracy: r.accuracy }));
    }
    Ok(out)
}

pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut s = String::from("multiplier,train_per_family,family,accuracy\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.multiplier, p.train_per_family, p.family, p.accuracy));
    }
    s
}
