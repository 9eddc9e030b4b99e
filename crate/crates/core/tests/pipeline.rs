//! End-to-end through the library: world, benchmark, maps, training,
//! checkpoint and evaluation on a tiny budget.

use dcsm_core::bench::{generate, read_jsonl, write_jsonl, Family, Grid};
use dcsm_core::config::{RunConfig, SeedStream};
use dcsm_core::eval::{evaluate, Model};
use dcsm_core::io::{read_embeddings, write_embeddings};
use dcsm_core::scorer::Checkpoint;
use dcsm_core::train::train;

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text("scorer.hidden=8\ntrain.epochs=1\ndata.train_per_family=8\ndata.eval_per_family=8").unwrap();
    cfg
}

fn split(cfg: &RunConfig, feat: &dcsm_core::train::Featurizer, eval: bool) -> Vec<dcsm_core::bench::Sample> {
    let (tr, ev) = cfg.pools(&feat.world).unwrap();
    let n = if eval { cfg.eval_per_family } else { cfg.train_per_family };
    Family::ALL
        .iter()
        .flat_map(|&f| generate(f, &feat.world, if eval { &ev } else { &tr }, Grid(cfg.encoder.grid), n, cfg.data_seed(eval)).unwrap())
        .collect()
}

#[test]
fn train_checkpoint_eval_roundtrip() {
    let cfg = small();
    let feat = cfg.featurizer().unwrap();
    let train_set = split(&cfg, &feat, false);
    let eval_set = split(&cfg, &feat, true);

    let mut buf = Vec::new();
    write_jsonl(&mut buf, &train_set, &feat.world).unwrap();
    assert_eq!(read_jsonl(buf.as_slice(), &feat.world).unwrap(), train_set);

    let trained = train(&train_set, &feat, &cfg.train_config(), |_, _| {}).unwrap();
    assert_eq!(trained.log.len(), 1);

    let mut ckpt = Vec::new();
    trained.params.write_checkpoint(&mut ckpt, true).unwrap();
    let loaded = Checkpoint::read(&mut ckpt.as_slice()).unwrap();
    assert!(loaded.uses_frs);

    let seed = cfg.stream(SeedStream::Eval);
    let a = evaluate(Model::Map { params: &trained.params, use_frs: true }, &eval_set, &feat, seed).unwrap();
    let b = evaluate(Model::Map { params: &loaded.params, use_frs: true }, &eval_set, &feat, seed).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.accuracy, y.accuracy);
        assert!((0.0..=1.0).contains(&x.accuracy));
    }
}

#[test]
fn cosine_baseline_sits_at_chance() {
    let cfg = small();
    let feat = cfg.featurizer().unwrap();
    let eval_set = split(&cfg, &feat, true);
    for r in evaluate(Model::Cosine, &eval_set, &feat, 3).unwrap() {
        assert!((r.accuracy - r.chance).abs() < 1e-9, "{} {}", r.family, r.accuracy);
    }
}

#[test]
fn embeddings_survive_the_binary_format() {
    let cfg = small();
    let feat = cfg.featurizer().unwrap();
    let sample = &split(&cfg, &feat, false)[0];
    let image = feat.image(&sample.pos_scene, 1).unwrap();
    let mut buf = Vec::new();
    write_embeddings(&mut buf, std::slice::from_ref(&image)).unwrap();
    let back = read_embeddings(&mut buf.as_slice()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].roles, image.roles);
    for (a, b) in back[0].rows.iter().zip(&image.rows) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
