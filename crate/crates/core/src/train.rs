//! Featurization of benchmark samples into maps and the contrastive training
//! loop for the convolutional scorer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::Sample;
use crate::dcsm::{pipeline, Dcsm, FrTable};
use crate::error::{Error, Result};
use crate::oracle::{DenseEmbedding, DenseEncoder, DenseEncoderConfig, SceneSpec};
use crate::scorer::{batch_step, AdamState, ScorerParams};
use crate::sphere::{derive_seed, rng_for};
use crate::world::{Clause, ConceptWorld, Token};

/// World, encoders and functional-row table: everything needed to turn a
/// (caption, scene) pair into a normalized map.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub world: ConceptWorld,
    pub encoder: DenseEncoder,
    pub table: FrTable,
}

impl Featurizer {
    pub fn new(world: ConceptWorld, cfg: DenseEncoderConfig, encoder_seed: u64, fr_seed: u64) -> Result<Self> {
        let encoder = DenseEncoder::new(&world, cfg, encoder_seed)?;
        let table = FrTable::new(&world, cfg.image_rows(), fr_seed);
        Ok(Featurizer { world, encoder, table })
    }

    pub fn text(&self, caption: &Clause) -> Result<(Vec<Token>, DenseEmbedding)> {
        let tokens = caption.tokens(&self.world)?;
        let emb = self.encoder.embed_text(&tokens)?;
        Ok((tokens, emb))
    }

    pub fn image(&self, scene: &SceneSpec, noise_seed: u64) -> Result<DenseEmbedding> {
        self.encoder.embed_scene(scene, noise_seed)
    }

    pub fn map(&self, text: &(Vec<Token>, DenseEmbedding), image: &DenseEmbedding, use_frs: bool) -> Result<Dcsm> {
        pipeline(&text.1, &text.0, image, &self.world, use_frs.then_some(&self.table))
    }

    pub fn map_shape(&self) -> (usize, usize) {
        (self.encoder.cfg.t_max, self.encoder.cfg.image_rows())
    }
}

/// Dataset-wide key of a sample; ids restart per family.
pub fn sample_key(s: &Sample) -> u64 {
    ((s.family as u64) << 40) | s.id
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Each sample contributes a positive and a hard-negative pair.
    pub samples_per_batch: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub shuffle: bool,
    pub use_frs: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 27,
            lr: 1e-3,
            samples_per_batch: 4,
            hidden: crate::scorer::DEFAULT_HIDDEN,
            kernel: crate::scorer::DEFAULT_KERNEL,
            shuffle: true,
            use_frs: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of batch rows whose best-scoring image is the true one.
    pub accuracy: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,train_accuracy\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
    }
    s
}

/// Single-family batches of sample indices. Families are never mixed so
/// that every off-diagonal pair is a same-template hard negative.
pub fn plan_batches(data: &[Sample], per_batch: usize, shuffle: bool, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, 0);
    let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry(s.family).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        if shuffle {
            idx.shuffle(&mut rng);
        }
        batches.extend(idx.chunks(per_batch.max(1)).map(<[usize]>::to_vec));
    }
    if shuffle {
        batches.shuffle(&mut rng);
    }
    batches
}

/// Texts and images of one batch: sample j gives pair 2j (positive caption,
/// positive scene) and 2j+1 (negative caption, negative scene). Which of the
/// two caption orders is used is drawn per sample and epoch.
pub fn batch_pairs(
    feat: &Featurizer,
    samples: &[&Sample],
    seed: u64,
) -> Result<(Vec<(Vec<Token>, DenseEmbedding)>, Vec<DenseEmbedding>)> {
    let mut texts = Vec::with_capacity(2 * samples.len());
    let mut images = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let key = sample_key(s);
        let k = rng_for(seed, key).random_range(0..2);
        texts.push(feat.text(&s.pos_captions[k])?);
        texts.push(feat.text(&s.neg_captions[k])?);
        images.push(feat.image(&s.pos_scene, derive_seed(seed, 2 * key))?);
        images.push(feat.image(&s.neg_scene, derive_seed(seed, 2 * key + 1))?);
    }
    Ok((texts, images))
}

fn batch_maps(
    feat: &Featurizer,
    texts: &[(Vec<Token>, DenseEmbedding)],
    images: &[DenseEmbedding],
    use_frs: bool,
) -> Result<Vec<Vec<Vec<f32>>>> {
    texts
        .iter()
        .map(|t| {
            images
                .iter()
                .map(|i| Ok(feat.map(t, i, use_frs)?.values.iter().map(|&v| v as f32).collect()))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ScorerParams<f32>,
    pub log: Vec<EpochLog>,
    pub uses_frs: bool,
}

/// Adam on the symmetric contrastive loss. Image noise is redrawn every
/// epoch from seeds keyed by (epoch, sample), so results do not depend on
/// batch order beyond the optimisation trajectory itself.
pub fn train(
    data: &[Sample],
    feat: &Featurizer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ScorerParams<f32>),
) -> Result<Trained> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.samples_per_batch == 0 || cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(Error::ConfigInvalid("samples_per_batch and lr must be positive".into()));
    }
    let mut params = ScorerParams::<f32>::init(cfg.hidden, cfg.kernel, derive_seed(cfg.seed, 1))?;
    let mut adam = AdamState::new(&params, cfg.lr);
    let (h, w) = feat.map_shape();
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
            let maps = batch_maps(feat, &texts, &images, cfg.use_frs)?;
            let mut grads = params.zeros_like();
            let (loss, scores) = batch_step(&params, &maps, h, w, Some(&mut grads))?;
            adam.update(&mut params, &grads)?;
            loss_sum += loss;
            rows += b;
            hits += (0..b)
                .filter(|&i| {
                    let row = &scores[i * b..(i + 1) * b];
                    row.iter().enumerate().all(|(j, &s)| j == i || s < row[i])
                })
                .count();
        }
        let entry = EpochLog { epoch: epoch + 1, loss: loss_sum / batches.len().max(1) as f64, accuracy: hits as f64 / rows.max(1) as f64 };
        on_epoch(&entry, &params);
        log.push(entry);
    }
    Ok(Trained { params, log, uses_frs: cfg.use_frs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, ConceptPool, Family, Grid};
    use crate::world::{build_world, WorldConfig};

    fn featurizer() -> Featurizer {
        let w = build_world(WorldConfig { num_objects: 8, num_attributes: 4, dimension: 32, seed: 0 }).unwrap();
        let cfg = DenseEncoderConfig { grid: 3, ..Default::default() };
        Featurizer::new(w, cfg, 1, 2).unwrap()
    }

    fn data(f: &Featurizer, fam: Family, n: usize) -> Vec<Sample> {
        generate(fam, &f.world, &ConceptPool::all(&f.world), Grid(3), n, 7).unwrap()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, hidden: 8, ..Default::default() }
    }

    #[test]
    fn batches_are_single_family_and_cover_everything() {
        let f = featurizer();
        let mut all = data(&f, Family::Attribute, 10);
        all.extend(data(&f, Family::Negation, 7));
        let plan = plan_batches(&all, 4, true, 3);
        let mut seen: Vec<usize> = plan.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..17).collect::<Vec<_>>());
        for b in &plan {
            assert!(b.iter().all(|&i| all[i].family == all[b[0]].family));
            assert!(b.len() <= 4);
        }
        assert_eq!(plan, plan_batches(&all, 4, true, 3));
        assert_ne!(plan, plan_batches(&all, 4, true, 4));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let f = featurizer();
        assert!(matches!(train(&[], &f, &small_cfg(1), |_, _| {}), Err(Error::EmptyDataset)));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let f = featurizer();
        let d = data(&f, Family::Attribute, 48);
        let a = train(&d, &f, &small_cfg(6), |_, _| {}).unwrap();
        assert!(a.log.last().unwrap().loss < a.log[0].loss, "{:?}", a.log);
        let b = train(&d, &f, &small_cfg(6), |_, _| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn shuffle_changes_only_the_trajectory() {
        let f = featurizer();
        let d = data(&f, Family::Negation, 24);
        let fixed = TrainConfig { shuffle: false, ..small_cfg(2) };
        let a = train(&d, &f, &fixed, |_, _| {}).unwrap();
        let b = train(&d, &f, &small_cfg(2), |_, _| {}).unwrap();
        assert_ne!(a.params, b.params);
        for t in [&a, &b] {
            assert!(t.params.all_finite());
            assert_eq!(t.log.len(), 2);
            assert!(t.log.iter().all(|e| (0.0..=1.0).contains(&e.accuracy) && e.loss >= 0.0));
        }
    }
}
