//! Command implementations behind the `dcsm` binary. Each command reads a
//! resolved [`RunConfig`], writes its artifacts under `cfg.out` and returns
//! the structured result so tests can check it without parsing files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dcsm_core::bench::{generate, load_jsonl, parse_scene, save_jsonl, Family, Grid, Sample};
use dcsm_core::config::{RunConfig, SeedStream};
use dcsm_core::dcsm::{patch_labels, token_labels, Dcsm};
use dcsm_core::eval::{
    evaluate, margins_csv, results_csv, results_table, scaling_csv, scaling_curve, scaling_size,
    EvalResult, Model, ScalingPoint, SCALING_MULTIPLIERS,
};
use dcsm_core::io::save_embeddings;
use dcsm_core::mlp::{train_mlp, MlpParams};
use dcsm_core::oracle::{build_global_space, DenseEmbedding, Layout};
use dcsm_core::scorer::Checkpoint;
use dcsm_core::sphere::derive_seed;
use dcsm_core::train::{log_csv, train, EpochLog, Featurizer};
use dcsm_core::verify::{
    check_conditions, constraint_betas, multi_object_dilution, oracle_assignment, verify_attribute_collapse,
    verify_negation_contradiction, verify_preposition_hierarchy, verify_spatial_contradiction, verify_superposition,
    ConditionReport, DilutionPoint, LemmaCertificate, NoiseSweepRow,
};
use dcsm_core::world::{tokenize, Clause};
use dcsm_core::{Error, Result};

pub const TRAIN_DATA: &str = "train.jsonl";
pub const EVAL_DATA: &str = "eval.jsonl";
pub const CHECKPOINT: &str = "scorer.ckpt";
pub const CHECKPOINT_NO_FR: &str = "scorer_no_fr.ckpt";
pub const MLP_PARAMS: &str = "mlp.json";

/// Deltas of the preposition-hierarchy sweep.
pub const HIERARCHY_DELTAS: [f64; 3] = [0.01, 0.05, 0.1];
pub const RANDOM_BETAS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Cosine,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyArg {
    Attribute,
    Spatial,
    Negation,
    All,
}

impl FamilyArg {
    pub fn families(self) -> Vec<Family> {
        match self {
            FamilyArg::Attribute => vec![Family::Attribute],
            FamilyArg::Spatial => vec![Family::Spatial],
            FamilyArg::Negation => vec![Family::Negation],
            FamilyArg::All => Family::ALL.to_vec(),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Result<&Path> {
    cfg.validate()?;
    cfg.write_resolved(&cfg.out)?;
    Ok(&cfg.out)
}

// ---- verify-lemmas ----

#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub certificates: Vec<LemmaCertificate>,
    /// Random constraint-surface betas whose sign structure held, of those tried.
    pub beta_checks: (usize, usize),
    pub conditions: Vec<ConditionReport>,
    /// Conditions re-checked in the simplex space used for negation.
    pub simplex_conditions: Vec<ConditionReport>,
    pub sweep: Vec<NoiseSweepRow>,
}

impl LemmaReport {
    pub fn certificate(&self, lemma: &str) -> Option<&LemmaCertificate> {
        self.certificates.iter().find(|c| c.lemma == lemma)
    }

    /// Every analytic value matched its numeric counterpart.
    pub fn passed(&self) -> bool {
        self.certificates.iter().all(LemmaCertificate::within_tolerance) && self.beta_checks.0 == self.beta_checks.1
    }

    pub fn lemmas_csv(&self) -> String {
        let mut s = String::from("lemma,name,analytic,numeric,abs_deviation\n");
        for c in &self.certificates {
            for p in &c.pairs {
                let _ = writeln!(s, "{},{},{},{},{}", c.lemma, p.name, p.analytic, p.numeric, (p.analytic - p.numeric).abs());
            }
            for (n, v) in &c.observed {
                let _ = writeln!(s, "{},{n},,{v},", c.lemma);
            }
        }
        s
    }

    pub fn conditions_csv(&self) -> String {
        let mut s = String::from("space,condition,instances,violations,boundary,worst_margin,satisfied\n");
        for (space, reports) in [("configured", &self.conditions), ("simplex", &self.simplex_conditions)] {
            for r in reports {
                let _ = writeln!(
                    s,
                    "{space},{},{},{},{},{},{}",
                    r.condition,
                    r.instances,
                    r.violations,
                    r.boundary,
                    r.worst_margin,
                    r.satisfied()
                );
            }
        }
        s
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.certificates {
            let _ = writeln!(
                s,
                "{:<34} max|dev| {:.3e}  {}  contradiction {}",
                c.lemma,
                c.max_abs_deviation,
                if c.within_tolerance() { "ok" } else { "OUT OF TOLERANCE" },
                if c.contradiction_reproduced { "reproduced" } else { "not reproduced" }
            );
        }
        let _ = writeln!(s, "random betas with the sign structure: {}/{}", self.beta_checks.0, self.beta_checks.1);
        let _ = writeln!(s, "\nconditions (configured layout):");
        for r in &self.conditions {
            let _ = writeln!(s, "  {:<5} {:>6} instances {:>6} violated  worst margin {:+.4e}", r.condition, r.instances, r.violations, r.worst_margin);
        }
        let _ = writeln!(s, "\nconditions (simplex layout):");
        for r in &self.simplex_conditions {
            let _ = writeln!(s, "  {:<5} {:>6} instances {:>6} violated  worst margin {:+.4e}", r.condition, r.instances, r.violations, r.worst_margin);
        }
        let _ = writeln!(s, "\n{}", if self.passed() { "all certificates within tolerance" } else { "FAILED: certificate deviation above tolerance" });
        s
    }
}

pub fn sweep_csv(rows: &[NoiseSweepRow]) -> String {
    let mut s = String::from("noise_weight,mean_cos,q25,q75,unrelated_mean_cos,object_attribute_mean_cos\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.noise_weight, r.mean_cos, r.q25, r.q75, r.unrelated_mean_cos, r.object_attribute_mean_cos);
    }
    s
}

/// All five lemma experiments and the condition reports, without I/O.
pub fn verify_lemmas(cfg: &RunConfig) -> Result<LemmaReport> {
    let (world, space) = cfg.verify_space(cfg.layout)?;
    let seed = cfg.stream(SeedStream::Verify);
    let mut certificates = vec![verify_superposition(&space, cfg.trials, &cfg.ascent())?];
    let (collapse, sweep) =
        verify_attribute_collapse(&space, cfg.collapse_weights(), &cfg.noise_weights, cfg.sweep_trials, derive_seed(seed, 2))?;
    certificates.push(collapse);
    certificates.push(verify_spatial_contradiction(&world, &space, [1.0, 1.0, 1.0])?);
    let betas = constraint_betas(derive_seed(seed, 3), RANDOM_BETAS);
    let mut held = 0;
    for b in &betas {
        if verify_spatial_contradiction(&world, &space, *b)?.contradiction_reproduced {
            held += 1;
        }
    }
    for delta in HIERARCHY_DELTAS {
        let s = build_global_space(&world, delta, cfg.layout, seed)?;
        let mut c = verify_preposition_hierarchy(&world, &s)?;
        c.lemma = format!("{}_delta_{delta}", c.lemma);
        certificates.push(c);
    }
    let simplex = if cfg.layout == Layout::Simplex { space.clone() } else { build_global_space(&world, cfg.delta, Layout::Simplex, seed)? };
    certificates.push(verify_negation_contradiction(&simplex)?);
    let conditions = check_conditions(&oracle_assignment(&world, &space)?, &world, derive_seed(seed, 4))?;
    let simplex_conditions = check_conditions(&oracle_assignment(&world, &simplex)?, &world, derive_seed(seed, 4))?;
    Ok(LemmaReport { certificates, beta_checks: (held, betas.len()), conditions, simplex_conditions, sweep })
}

pub fn cmd_verify_lemmas(cfg: &RunConfig) -> Result<LemmaReport> {
    let out = prepare(cfg)?;
    let report = verify_lemmas(cfg)?;
    write(&out.join("lemmas.csv"), report.lemmas_csv())?;
    write(&out.join("conditions.csv"), report.conditions_csv())?;
    write(&out.join("noise_sweep.csv"), sweep_csv(&report.sweep))?;
    write(&out.join("lemmas.txt"), report.text())?;
    Ok(report)
}

// ---- data ----

pub fn generate_split(cfg: &RunConfig, feat: &Featurizer, families: &[Family], per_family: usize, eval: bool) -> Result<Vec<Sample>> {
    let (train_pool, eval_pool) = cfg.pools(&feat.world)?;
    let pool = if eval { &eval_pool } else { &train_pool };
    let mut out = Vec::new();
    for &f in families {
        out.extend(generate(f, &feat.world, pool, Grid(cfg.encoder.grid), per_family, cfg.data_seed(eval))?);
    }
    Ok(out)
}

pub fn cmd_gen_data(cfg: &RunConfig, families: &[Family]) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let out = prepare(cfg)?;
    let feat = cfg.featurizer()?;
    let train = generate_split(cfg, &feat, families, cfg.train_per_family, false)?;
    let eval = generate_split(cfg, &feat, families, cfg.eval_per_family, true)?;
    save_jsonl(&out.join(TRAIN_DATA), &train, &feat.world)?;
    save_jsonl(&out.join(EVAL_DATA), &eval, &feat.world)?;
    feat.world.save_json(&out.join("world.json"))?;
    feat.table.save_json(&out.join("fr_table.json"))?;
    Ok((train, eval))
}

fn only(data: Vec<Sample>, families: &[Family]) -> Vec<Sample> {
    data.into_iter().filter(|s| families.contains(&s.family)).collect()
}

/// Training data from `train.jsonl` when present, otherwise freshly
/// generated and saved.
fn train_data(cfg: &RunConfig, feat: &Featurizer, families: &[Family]) -> Result<Vec<Sample>> {
    let path = cfg.out.join(TRAIN_DATA);
    if path.exists() {
        return Ok(only(load_jsonl(&path, &feat.world)?, families));
    }
    let data = generate_split(cfg, feat, families, cfg.train_per_family, false)?;
    save_jsonl(&path, &data, &feat.world)?;
    Ok(data)
}

// ---- train ----

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub artifact: PathBuf,
    pub log: Vec<EpochLog>,
    pub elapsed: Duration,
}

pub fn cmd_train(
    cfg: &RunConfig,
    families: &[Family],
    baseline: Option<Baseline>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainSummary> {
    let out = prepare(cfg)?;
    let feat = cfg.featurizer()?;
    let data = train_data(cfg, &feat, families)?;
    let tc = cfg.train_config();
    let start = Instant::now();
    let (artifact, log_name, log) = match baseline {
        Some(Baseline::Cosine) => return Err(Error::ConfigInvalid("the cosine baseline has no parameters to train".into())),
        Some(Baseline::Mlp) => {
            let (params, log) = train_mlp(&data, &feat, &tc, |e, _| progress(e))?;
            let path = out.join(MLP_PARAMS);
            params.save_json(&path)?;
            (path, "mlp_log.csv", log)
        }
        None => {
            let trained = train(&data, &feat, &tc, |e, _| progress(e))?;
            let (ckpt, log_name) = if tc.use_frs { (CHECKPOINT, "train_log.csv") } else { (CHECKPOINT_NO_FR, "train_log_no_fr.csv") };
            let path = out.join(ckpt);
            trained.params.save(&path, trained.uses_frs)?;
            (path, log_name, trained.log)
        }
    };
    write(&out.join(log_name), log_csv(&log))?;
    Ok(TrainSummary { artifact, log, elapsed: start.elapsed() })
}

// ---- eval ----

/// Scores the eval set with the FR scorer, the cosine baseline and, when
/// their artifacts exist, the MLP baseline and the no-FR ablation.
/// `baseline` restricts the baselines to the one named.
pub fn cmd_eval(cfg: &RunConfig, families: &[Family], baseline: Option<Baseline>) -> Result<Vec<EvalResult>> {
    let out = prepare(cfg)?;
    let feat = cfg.featurizer()?;
    let data = only(load_jsonl(&out.join(EVAL_DATA), &feat.world)?, families);
    let main = Checkpoint::load(&out.join(CHECKPOINT))?;
    let seed = cfg.stream(SeedStream::Eval);
    let mut results = evaluate(Model::Map { params: &main.params, use_frs: main.uses_frs }, &data, &feat, seed)?;
    if baseline.is_none() || baseline == Some(Baseline::Cosine) {
        results.extend(evaluate(Model::Cosine, &data, &feat, seed)?);
    }
    let mlp_path = out.join(MLP_PARAMS);
    if baseline == Some(Baseline::Mlp) || (baseline.is_none() && mlp_path.exists()) {
        let p = MlpParams::load_json(&mlp_path)?;
        results.extend(evaluate(Model::Mlp(&p), &data, &feat, seed)?);
    }
    let ablation = out.join(CHECKPOINT_NO_FR);
    if baseline.is_none() && ablation.exists() {
        let c = Checkpoint::load(&ablation)?;
        results.extend(evaluate(Model::Map { params: &c.params, use_frs: c.uses_frs }, &data, &feat, seed)?);
    }
    write(&out.join("eval.csv"), results_csv(&results))?;
    write(&out.join("margins.csv"), margins_csv(&results))?;
    write(&out.join("eval.txt"), results_table(&results))?;
    Ok(results)
}

// ---- scaling ----

/// Trains at each multiple of `scaling.base` per family on nested prefixes
/// of one dataset and evaluates on a fixed held-out set.
pub fn scaling_points(
    cfg: &RunConfig,
    families: &[Family],
    multipliers: &[f64],
    reuse: &BTreeMap<usize, Vec<EvalResult>>,
) -> Result<Vec<ScalingPoint>> {
    let feat = cfg.featurizer()?;
    let largest = multipliers.iter().map(|&m| scaling_size(cfg.scaling_base, m)).max().unwrap_or(0);
    if largest == 0 {
        return Err(Error::EmptyDataset);
    }
    let train = generate_split(cfg, &feat, families, largest, false)?;
    let eval = generate_split(cfg, &feat, families, cfg.eval_per_family, true)?;
    scaling_curve(&train, &eval, &feat, &cfg.train_config(), cfg.scaling_base, multipliers, cfg.stream(SeedStream::Eval), reuse)
}

pub fn cmd_scaling(cfg: &RunConfig, families: &[Family]) -> Result<Vec<ScalingPoint>> {
    let out = prepare(cfg)?;
    let points = scaling_points(cfg, families, &SCALING_MULTIPLIERS, &BTreeMap::new())?;
    write(&out.join("scaling.csv"), scaling_csv(&points))?;
    Ok(points)
}

// ---- emit-dcsm ----

pub struct Rendered {
    pub map: Dcsm,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub text: DenseEmbedding,
    pub image: DenseEmbedding,
}

/// One normalized map with its labels and the embeddings it came from.
pub fn render_dcsm(cfg: &RunConfig, caption: &str, scene: &str, noise_seed: u64) -> Result<Rendered> {
    let feat = cfg.featurizer()?;
    let tokens = tokenize(&feat.world, caption)?;
    Clause::from_tokens(&feat.world, &tokens)?;
    let scene = parse_scene(&feat.world, scene)?;
    let text = feat.encoder.embed_text(&tokens)?;
    let image = feat.image(&scene, noise_seed)?;
    let map = feat.map(&(tokens.clone(), text.clone()), &image, cfg.use_frs)?;
    Ok(Rendered { map, row_labels: token_labels(&feat.world, &text, &tokens), col_labels: patch_labels(&image), text, image })
}

pub const PGM_SCALE: usize = 16;

pub fn cmd_emit_dcsm(cfg: &RunConfig, caption: &str, scene: &str, noise_seed: u64, name: &str) -> Result<Dcsm> {
    let out = prepare(cfg)?;
    let r = render_dcsm(cfg, caption, scene, noise_seed)?;
    write(&out.join(format!("{name}.csv")), r.map.to_csv(&r.row_labels, &r.col_labels)?)?;
    write(&out.join(format!("{name}.pgm")), r.map.to_pgm(PGM_SCALE))?;
    save_embeddings(&out.join(format!("{name}.text.dcse")), std::slice::from_ref(&r.text))?;
    save_embeddings(&out.join(format!("{name}.image.dcse")), std::slice::from_ref(&r.image))?;
    Ok(r.map)
}

// ---- dilution ----

pub fn dilution_csv(points: &[DilutionPoint]) -> String {
    let mut s = String::from("k,mean_cos,q25,q75,orthogonal_prediction\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.k, p.mean_cos, p.q25, p.q75, p.orthogonal_prediction);
    }
    s
}

pub fn cmd_dilution(cfg: &RunConfig) -> Result<Vec<DilutionPoint>> {
    let out = prepare(cfg)?;
    let space = cfg.dilution_space()?;
    let points = multi_object_dilution(&space, cfg.dilution_k_max, cfg.dilution_trials, cfg.stream(SeedStream::Dilution))?;
    write(&out.join("dilution.csv"), dilution_csv(&points))?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig { out: dir.to_path_buf(), ..RunConfig::default() };
        c.apply_text("scorer.hidden=4\ntrain.epochs=1\ndata.train_per_family=8\ndata.eval_per_family=4\nverify.trials=2\nverify.sweep_trials=20\ndilution.trials=20\ndilution.dimension=32")
            .unwrap();
        c
    }

    #[test]
    fn family_selection() {
        assert_eq!(FamilyArg::All.families().len(), 3);
        assert_eq!(FamilyArg::Spatial.families(), vec![Family::Spatial]);
    }

    #[test]
    fn eval_needs_its_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        assert!(matches!(cmd_eval(&cfg, &Family::ALL, None), Err(Error::MissingArtifact(_))));
        cmd_gen_data(&cfg, &Family::ALL).unwrap();
        assert!(matches!(cmd_eval(&cfg, &Family::ALL, None), Err(Error::MissingArtifact(_))));
        assert!(matches!(cmd_train(&cfg, &Family::ALL, Some(Baseline::Cosine), |_| {}), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn verify_report_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let r = cmd_verify_lemmas(&cfg).unwrap();
        assert!(r.passed(), "{}", r.text());
        for f in ["lemmas.csv", "conditions.csv", "noise_sweep.csv", "lemmas.txt", "config.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
