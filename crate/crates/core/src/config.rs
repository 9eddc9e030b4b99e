//! Run configuration: a flat `key=value` file, command-line overrides and
//! the derived component configs. Every seed below the master seed is
//! derived, so one number pins every artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bench::{ConceptPool, Grid};
use crate::error::{Error, Result};
use crate::oracle::{build_global_space, DenseEncoderConfig, GlobalEmbeddingSpace, Layout};
use crate::sphere::{derive_seed, AscentConfig};
use crate::train::{Featurizer, TrainConfig};
use crate::verify::CollapseWeights;
use crate::world::{build_world, ConceptWorld, WorldConfig};

/// Sub-seed streams of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    World = 0,
    Encoder = 1,
    FrTable = 2,
    Train = 3,
    Data = 4,
    Eval = 5,
    Verify = 6,
    Dilution = 7,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub world: WorldConfig,
    pub encoder: DenseEncoderConfig,
    pub hidden: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub lr: f64,
    pub samples_per_batch: usize,
    pub shuffle: bool,
    pub use_frs: bool,
    pub train_per_family: usize,
    pub eval_per_family: usize,
    /// Fraction of objects and attributes reserved for training.
    pub train_fraction: f64,
    pub scaling_base: usize,
    pub layout: Layout,
    pub delta: f64,
    pub verify_concepts: usize,
    pub verify_attributes: usize,
    pub verify_dimension: usize,
    pub trials: usize,
    pub sweep_trials: usize,
    pub noise_weights: Vec<f64>,
    pub object_weight: f64,
    pub attribute_weight: f64,
    pub dilution_k_max: usize,
    pub dilution_trials: usize,
    pub dilution_dimension: usize,
    pub dilution_concepts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let w = CollapseWeights::default();
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            encoder: DenseEncoderConfig::default(),
            hidden: t.hidden,
            kernel: t.kernel,
            epochs: t.epochs,
            lr: t.lr,
            samples_per_batch: t.samples_per_batch,
            shuffle: t.shuffle,
            use_frs: t.use_frs,
            train_per_family: 2000,
            eval_per_family: 500,
            train_fraction: 0.75,
            scaling_base: 1000,
            layout: Layout::Simplex,
            delta: 0.02,
            verify_concepts: 16,
            verify_attributes: 4,
            verify_dimension: 64,
            trials: 50,
            sweep_trials: 1000,
            noise_weights: vec![0.0, 0.1, 0.2, 0.3],
            object_weight: w.object,
            attribute_weight: w.attribute,
            dilution_k_max: 8,
            dilution_trials: 500,
            dilution_dimension: 512,
            dilution_concepts: 16,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::ConfigInvalid(format!("bad value `{value}` for `{key}`")))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.encoder;
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("world.objects", self.world.num_objects.to_string()),
            ("world.attributes", self.world.num_attributes.to_string()),
            ("world.dimension", self.world.dimension.to_string()),
            ("encoder.grid", e.grid.to_string()),
            ("encoder.t_max", e.t_max.to_string()),
            ("encoder.w_c", e.w_c.to_string()),
            ("encoder.w_a", e.w_a.to_string()),
            ("encoder.w_g", e.w_g.to_string()),
            ("encoder.sigma", e.sigma.to_string()),
            ("scorer.hidden", self.hidden.to_string()),
            ("scorer.kernel", self.kernel.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.samples_per_batch", self.samples_per_batch.to_string()),
            ("train.shuffle", self.shuffle.to_string()),
            ("train.use_frs", self.use_frs.to_string()),
            ("data.train_per_family", self.train_per_family.to_string()),
            ("data.eval_per_family", self.eval_per_family.to_string()),
            ("data.train_fraction", self.train_fraction.to_string()),
            ("scaling.base", self.scaling_base.to_string()),
            ("verify.layout", self.layout.to_string()),
            ("verify.delta", self.delta.to_string()),
            ("verify.concepts", self.verify_concepts.to_string()),
            ("verify.attributes", self.verify_attributes.to_string()),
            ("verify.dimension", self.verify_dimension.to_string()),
            ("verify.trials", self.trials.to_string()),
            ("verify.sweep_trials", self.sweep_trials.to_string()),
            ("verify.noise_weights", join(&self.noise_weights)),
            ("verify.object_weight", self.object_weight.to_string()),
            ("verify.attribute_weight", self.attribute_weight.to_string()),
            ("dilution.k_max", self.dilution_k_max.to_string()),
            ("dilution.trials", self.dilution_trials.to_string()),
            ("dilution.dimension", self.dilution_dimension.to_string()),
            ("dilution.concepts", self.dilution_concepts.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "world.objects" => self.world.num_objects = parse(key, v)?,
            "world.attributes" => self.world.num_attributes = parse(key, v)?,
            "world.dimension" => self.world.dimension = parse(key, v)?,
            "encoder.grid" => self.encoder.grid = parse(key, v)?,
            "encoder.t_max" => self.encoder.t_max = parse(key, v)?,
            "encoder.w_c" => self.encoder.w_c = parse(key, v)?,
            "encoder.w_a" => self.encoder.w_a = parse(key, v)?,
            "encoder.w_g" => self.encoder.w_g = parse(key, v)?,
            "encoder.sigma" => self.encoder.sigma = parse(key, v)?,
            "scorer.hidden" => self.hidden = parse(key, v)?,
            "scorer.kernel" => self.kernel = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.samples_per_batch" => self.samples_per_batch = parse(key, v)?,
            "train.shuffle" => self.shuffle = parse(key, v)?,
            "train.use_frs" => self.use_frs = parse(key, v)?,
            "data.train_per_family" => self.train_per_family = parse(key, v)?,
            "data.eval_per_family" => self.eval_per_family = parse(key, v)?,
            "data.train_fraction" => self.train_fraction = parse(key, v)?,
            "scaling.base" => self.scaling_base = parse(key, v)?,
            "verify.layout" => self.layout = v.parse()?,
            "verify.delta" => self.delta = parse(key, v)?,
            "verify.concepts" => self.verify_concepts = parse(key, v)?,
            "verify.attributes" => self.verify_attributes = parse(key, v)?,
            "verify.dimension" => self.verify_dimension = parse(key, v)?,
            "verify.trials" => self.trials = parse(key, v)?,
            "verify.sweep_trials" => self.sweep_trials = parse(key, v)?,
            "verify.noise_weights" => {
                self.noise_weights = v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect::<Result<_>>()?
            }
            "verify.object_weight" => self.object_weight = parse(key, v)?,
            "verify.attribute_weight" => self.attribute_weight = parse(key, v)?,
            "dilution.k_max" => self.dilution_k_max = parse(key, v)?,
            "dilution.trials" => self.dilution_trials = parse(key, v)?,
            "dilution.dimension" => self.dilution_dimension = parse(key, v)?,
            "dilution.concepts" => self.dilution_concepts = parse(key, v)?,
            other => return Err(Error::ConfigInvalid(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        RunConfig::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Writes the resolved config as `config.txt` in `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.encoder.validate()?;
        Grid(self.encoder.grid).check()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::ConfigInvalid("data.train_fraction must lie in (0, 1)".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::ConfigInvalid("verify.delta must lie in (0, 1)".into()));
        }
        if self.hidden == 0 || self.kernel % 2 == 0 || self.samples_per_batch == 0 {
            return Err(Error::ConfigInvalid("scorer.hidden > 0, odd scorer.kernel and train.samples_per_batch > 0 required".into()));
        }
        Ok(())
    }

    pub fn stream(&self, s: SeedStream) -> u64 {
        derive_seed(self.seed, s as u64)
    }

    pub fn build_world(&self) -> Result<ConceptWorld> {
        build_world(WorldConfig { seed: self.stream(SeedStream::World), ..self.world })
    }

    pub fn featurizer(&self) -> Result<Featurizer> {
        self.validate()?;
        Featurizer::new(self.build_world()?, self.encoder, self.stream(SeedStream::Encoder), self.stream(SeedStream::FrTable))
    }

    /// Train and held-out eval concept pools.
    pub fn pools(&self, world: &ConceptWorld) -> Result<(ConceptPool, ConceptPool)> {
        ConceptPool::split(world, self.train_fraction)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            samples_per_batch: self.samples_per_batch,
            hidden: self.hidden,
            kernel: self.kernel,
            shuffle: self.shuffle,
            use_frs: self.use_frs,
            seed: self.stream(SeedStream::Train),
        }
    }

    pub fn data_seed(&self, eval: bool) -> u64 {
        derive_seed(self.stream(SeedStream::Data), eval as u64)
    }

    pub fn collapse_weights(&self) -> CollapseWeights {
        CollapseWeights { object: self.object_weight, attribute: self.attribute_weight }
    }

    pub fn ascent(&self) -> AscentConfig {
        AscentConfig { seed: derive_seed(self.stream(SeedStream::Verify), 1), ..AscentConfig::default() }
    }

    /// World and global space for the lemma experiments.
    pub fn verify_space(&self, layout: Layout) -> Result<(ConceptWorld, GlobalEmbeddingSpace)> {
        let world = build_world(WorldConfig {
            num_objects: self.verify_concepts,
            num_attributes: self.verify_attributes,
            dimension: self.verify_dimension,
            seed: self.stream(SeedStream::Verify),
        })?;
        let space = build_global_space(&world, self.delta, layout, self.stream(SeedStream::Verify))?;
        Ok((world, space))
    }

    pub fn dilution_space(&self) -> Result<GlobalEmbeddingSpace> {
        let world = build_world(WorldConfig {
            num_objects: self.dilution_concepts,
            num_attributes: 2,
            dimension: self.dilution_dimension,
            seed: self.stream(SeedStream::Dilution),
        })?;
        build_global_space(&world, self.delta, Layout::Random, self.stream(SeedStream::Dilution))
    }
}
