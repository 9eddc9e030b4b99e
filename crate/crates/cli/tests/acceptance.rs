//! The ten acceptance criteria, each printed as one PASS/FAIL line.
//! Runs without the libtest harness so the lines always reach stdout;
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dcsm_cli::{generate_split, scaling_points};
use dcsm_core::bench::Family;
use dcsm_core::config::{RunConfig, SeedStream};
use dcsm_core::eval::{evaluate, EvalResult, Model};
use dcsm_core::oracle::{build_global_space, Layout};
use dcsm_core::scorer::{contrastive_loss, gradient_check, lattice_case};
use dcsm_core::train::train;
use dcsm_core::verify::{
    check_conditions, constraint_betas, multi_object_dilution, oracle_assignment, verify_attribute_collapse,
    verify_negation_contradiction, verify_preposition_hierarchy, verify_spatial_contradiction, verify_superposition,
};
use dcsm_core::world::{build_world, WorldConfig};
use dcsm_core::Result;

/// Epochs per trained scorer. One epoch of the default data fits the
/// ten-minute train+eval budget on a single core with room to spare.
const ACCEPTANCE_EPOCHS: usize = 1;

type Outcome = Result<(bool, String)>;

fn acc(results: &[EvalResult], f: Family) -> f64 {
    results.iter().find(|r| r.family == f).map_or(f64::NAN, |r| r.accuracy)
}

fn superposition() -> Outcome {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let (_, space) = cfg.verify_space(Layout::Simplex)?;
    let cert = verify_superposition(&space, 50, &cfg.ascent())?;
    let min = cert.observed("min_cos_numeric_superposition").unwrap_or(f64::NAN);
    let el = t.elapsed();
    Ok((min >= 0.999 && el < Duration::from_secs(30), format!("min cos {min:.12} over 50 trials (M=16, N=64) in {el:.2?}")))
}

fn attribute_collapse() -> Outcome {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let (_, space) = cfg.verify_space(Layout::Random)?;
    let (cert, sweep) = verify_attribute_collapse(&space, cfg.collapse_weights(), &[0.2], 1000, cfg.stream(SeedStream::Verify))?;
    let swapped = cert.numeric("cos_swapped_bindings").unwrap_or(f64::NAN);
    let row = &sweep[0];
    let el = t.elapsed();
    let ok = (swapped - 1.0).abs() <= 1e-9 && row.mean_cos >= 0.95 && row.unrelated_mean_cos.abs() <= 0.1 && el < Duration::from_secs(30);
    Ok((ok, format!("noiseless cos {swapped:.15}; noise 0.2: mean {:.4}, unrelated {:+.4} in {el:.2?}", row.mean_cos, row.unrelated_mean_cos)))
}

fn spatial_contradiction() -> Outcome {
    let cfg = RunConfig::default();
    let (world, space) = cfg.verify_space(Layout::Random)?;
    let cert = verify_spatial_contradiction(&world, &space, [1.0, 1.0, 1.0])?;
    let got = ["e1.e2", "e1.e3", "e2.e3"].map(|n| cert.numeric(n).unwrap_or(f64::NAN));
    let want = [0.04, -0.04, -0.12];
    let mut ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-12);
    let mut worst: f64 = 0.0;
    for b in constraint_betas(7, 20) {
        let c = verify_spatial_contradiction(&world, &space, b)?;
        let sum = c.numeric("e1.e2").unwrap_or(f64::NAN) + c.numeric("e1.e3").unwrap_or(f64::NAN);
        worst = worst.max(sum.abs());
        ok &= c.contradiction_reproduced;
    }
    Ok((ok, format!("dots ({:.15}, {:.15}, {:.15}); 20 random betas max |e1.e2 + e1.e3| = {worst:.1e}", got[0], got[1], got[2])))
}

fn preposition_hierarchy() -> Outcome {
    let cfg = RunConfig::default();
    let (world, _) = cfg.verify_space(Layout::Random)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for delta in [0.01, 0.05, 0.1] {
        let space = build_global_space(&world, delta, Layout::Random, cfg.stream(SeedStream::Verify))?;
        let cert = verify_preposition_hierarchy(&world, &space)?;
        let cos = cert.numeric("cos_superposition_txy").unwrap_or(f64::NAN);
        let margin = cert.numeric("margin").unwrap_or(f64::NAN);
        ok &= (cos - 1.0).abs() <= 1e-9 && margin > 0.0;
        parts.push(format!("d={delta}: cos {cos:.12}, margin {margin:.6}"));
    }
    Ok((ok, parts.join("; ")))
}

fn negation() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [4usize, 16, 32] {
        let world = build_world(WorldConfig { num_objects: m, num_attributes: 2, dimension: 64, seed: 0 })?;
        let space = build_global_space(&world, 0.02, Layout::Simplex, 0)?;
        let reports = check_conditions(&oracle_assignment(&world, &space)?, &world, 1)?;
        let get = |c: &str| reports.iter().find(|r| r.condition == c);
        let (c41, c42, c43) = (get("4.1"), get("4.2"), get("4.3"));
        let inv = 1.0 / (m as f64 - 1.0);
        let cert = verify_negation_contradiction(&space)?;
        let pos = cert.numeric("t(not xj).t(xk)").unwrap_or(f64::NAN);
        let neg = cert.numeric("t(not xj).t(not xk)").unwrap_or(f64::NAN);
        ok &= c41.is_some_and(|r| r.violations == 0 && r.satisfied())
            && c42.is_some_and(|r| r.violations == 0 && r.satisfied())
            && c43.is_some_and(|r| r.instances > 0 && r.violations == r.instances)
            && (pos - inv).abs() <= 1e-9
            && (neg + inv).abs() <= 1e-9
            && cert.contradiction_reproduced;
        parts.push(format!(
            "M={m}: 4.3 violated {}/{}, values ({pos:+.9}, {neg:+.9})",
            c43.map_or(0, |r| r.violations),
            c43.map_or(0, |r| r.instances)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn dilution() -> Outcome {
    let cfg = RunConfig::default();
    let curve = multi_object_dilution(&cfg.dilution_space()?, 8, 500, cfg.stream(SeedStream::Dilution))?;
    let decreasing = curve.windows(2).all(|p| p[1].mean_cos < p[0].mean_cos);
    let worst = curve.iter().map(|p| (p.mean_cos - p.orthogonal_prediction).abs()).fold(0.0, f64::max);
    Ok((decreasing && worst <= 0.05 && curve.len() == 8, format!("strictly decreasing: {decreasing}; max |mean - 1/sqrt(k)| = {worst:.4} (N=512, 500 trials)")))
}

fn scorer_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let (p, batch) = lattice_case(seed, 4, 4, 8, 9);
        worst = worst.max(gradient_check(&p, &batch, 8, 9, 1e-4)?);
    }
    let mut loss_err: f64 = 0.0;
    for b in [2usize, 4, 8] {
        let (loss, _) = contrastive_loss(&vec![0.37; b * b], b)?;
        loss_err = loss_err.max((loss - 2.0 * (b as f64).ln()).abs());
    }
    let mut cfg = RunConfig::default();
    cfg.apply_text("scorer.hidden=8\ntrain.epochs=2\ndata.train_per_family=16")?;
    let feat = cfg.featurizer()?;
    let data = generate_split(&cfg, &feat, &Family::ALL, cfg.train_per_family, false)?;
    let bits = |p: &dcsm_core::scorer::ScorerParams<f32>| p.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    let a = train(&data, &feat, &cfg.train_config(), |_, _| {})?;
    let b = train(&data, &feat, &cfg.train_config(), |_, _| {})?;
    let deterministic = bits(&a.params) == bits(&b.params) && a.log == b.log;
    Ok((worst < 1e-4 && loss_err <= 1e-9 && deterministic, format!("max grad rel err {worst:.2e}; |loss - 2 ln B| {loss_err:.1e}; bit-deterministic {deterministic}")))
}

struct Trained {
    fr: Vec<EvalResult>,
    no_fr: Vec<EvalResult>,
    cosine: Vec<EvalResult>,
    fr_time: Duration,
}

fn train_models(cfg: &RunConfig) -> Result<Trained> {
    let feat = cfg.featurizer()?;
    let train_data = generate_split(cfg, &feat, &Family::ALL, cfg.train_per_family, false)?;
    let eval_data = generate_split(cfg, &feat, &Family::ALL, cfg.eval_per_family, true)?;
    let seed = cfg.stream(SeedStream::Eval);
    let t = Instant::now();
    let fr_model = train(&train_data, &feat, &cfg.train_config(), |_, _| {})?;
    let fr = evaluate(Model::Map { params: &fr_model.params, use_frs: true }, &eval_data, &feat, seed)?;
    let cosine = evaluate(Model::Cosine, &eval_data, &feat, seed)?;
    let fr_time = t.elapsed();
    let ablation = RunConfig { use_frs: false, ..cfg.clone() };
    let nf_model = train(&train_data, &feat, &ablation.train_config(), |_, _| {})?;
    let no_fr = evaluate(Model::Map { params: &nf_model.params, use_frs: false }, &eval_data, &feat, seed)?;
    Ok(Trained { fr, no_fr, cosine, fr_time })
}

fn dcsm_beats_geometry(t: &Trained) -> Outcome {
    let fams = Family::ALL.map(|f| acc(&t.fr, f));
    let cos_att = acc(&t.cosine, Family::Attribute);
    let cos_sp = acc(&t.cosine, Family::Spatial);
    let ok = fams.iter().all(|&a| a >= 0.90) && (cos_att - 0.5).abs() <= 0.05 && (cos_sp - 0.25).abs() <= 0.05 && t.fr_time < Duration::from_secs(600);
    Ok((
        ok,
        format!(
            "dcsm+fr attribute {:.4} spatial {:.4} negation {:.4}; cosine attribute {cos_att:.4} spatial {cos_sp:.4}; train+eval {:.1?}",
            fams[0], fams[1], fams[2], t.fr_time
        ),
    ))
}

fn fr_ablation(t: &Trained) -> Outcome {
    let (with, without) = (acc(&t.fr, Family::Spatial), acc(&t.no_fr, Family::Spatial));
    Ok((with - without >= 0.10, format!("spatial with FR {with:.4}, without {without:.4}, drop {:.4}", with - without)))
}

fn scaling(cfg: &RunConfig, t: &Trained) -> Outcome {
    // The 2x point is the criterion-8 model: same data prefix, seeds and budget.
    let mut cfg = cfg.clone();
    cfg.scaling_base = cfg.train_per_family / 2;
    let reuse = BTreeMap::from([(cfg.train_per_family, t.fr.clone())]);
    let points = scaling_points(&cfg, &Family::ALL, &[0.25, 2.0], &reuse)?;
    let at = |m: f64, f: Family| points.iter().find(|p| p.multiplier == m && p.family == f).map_or(f64::NAN, |p| p.accuracy);
    let mut ok = true;
    let mut parts = Vec::new();
    for f in Family::ALL {
        let (q, d) = (at(0.25, f), at(2.0, f));
        ok &= d >= q - 0.02;
        parts.push(format!("{f} 1/4x {q:.4} 2x {d:.4}"));
    }
    Ok((ok, parts.join("; ")))
}

fn report(n: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    let (pass, detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if !pass {
        *failures += 1;
    }
    println!("criterion {n:>2} {:<4} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn main() {
    // Accept and ignore libtest arguments such as --nocapture.
    let start = Instant::now();
    let mut failures = 0;
    report(1, "superposition", superposition(), &mut failures);
    report(2, "attribute-binding collapse", attribute_collapse(), &mut failures);
    report(3, "spatial contradiction", spatial_contradiction(), &mut failures);
    report(4, "preposition hierarchy", preposition_hierarchy(), &mut failures);
    report(5, "negation", negation(), &mut failures);
    report(6, "multi-object dilution", dilution(), &mut failures);
    report(7, "scorer correctness", scorer_correctness(), &mut failures);

    let cfg = RunConfig { epochs: ACCEPTANCE_EPOCHS, ..RunConfig::default() };
    match train_models(&cfg) {
        Ok(t) => {
            report(8, "DCSM beats the geometry", dcsm_beats_geometry(&t), &mut failures);
            report(9, "FR ablation", fr_ablation(&t), &mut failures);
            report(10, "scaling", scaling(&cfg, &t), &mut failures);
        }
        Err(e) => {
            for (n, name) in [(8, "DCSM beats the geometry"), (9, "FR ablation"), (10, "scaling")] {
                report(n, name, Err(dcsm_core::Error::ConfigInvalid(format!("training failed: {e}"))), &mut failures);
            }
        }
    }
    println!("acceptance: {} of 10 passed in {:.1?}", 10 - failures, start.elapsed());
    if failures > 0 {
        std::process::exit(1);
    }
}
