//! Dense cosine similarity maps: token-by-patch cosine matrices with
//! functional rows written over the rows of functional words.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{DenseEmbedding, Role};
use crate::sphere::{dot, rng_for};
use crate::world::{ConceptWorld, Token};

/// Where a map stands with respect to functional-row replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrStage {
    Pending,
    Applied,
    /// Deliberately left raw (the no-FR ablation).
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dcsm {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols`.
    pub values: Vec<f64>,
    pub fr_stage: FrStage,
    pub normalized: bool,
    /// (text id, image id)
    pub provenance: (String, String),
}

impl Dcsm {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fr_applied(&self) -> bool {
        self.fr_stage == FrStage::Applied
    }

    pub fn with_provenance(mut self, text: impl Into<String>, image: impl Into<String>) -> Self {
        self.provenance = (text.into(), image.into());
        self
    }

    /// Marks the map as intentionally FR-free so it may be normalized.
    pub fn skip_frs(mut self) -> Result<Self> {
        if self.fr_stage != FrStage::Pending {
            return Err(Error::PipelineOrder("functional rows already handled"));
        }
        self.fr_stage = FrStage::Skipped;
        Ok(self)
    }

    /// Comma-separated map with token labels down the side and patch labels
    /// across the top.
    pub fn to_csv(&self, row_labels: &[String], col_labels: &[String]) -> Result<String> {
        if row_labels.len() != self.rows || col_labels.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "labels {}x{} for a {}x{} map",
                row_labels.len(),
                col_labels.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = String::from("token");
        for c in col_labels {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, label) in row_labels.iter().enumerate() {
            out.push_str(label);
            for v in self.row(r) {
                write!(out, ",{v}").expect("write to String");
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Binary 8-bit PGM, min-max scaled, each entry drawn as a `scale`-pixel
    /// square.
    pub fn to_pgm(&self, scale: usize) -> Vec<u8> {
        let scale = scale.max(1);
        let (lo, hi) = self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        let (w, h) = (self.cols * scale, self.rows * scale);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.reserve(w * h);
        for r in 0..h {
            for c in 0..w {
                let v = self.get(r / scale, c / scale);
                let level = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                out.push(level as u8);
            }
        }
        out
    }
}

/// Column labels: CLS then patches row-major.
pub fn patch_labels(image: &DenseEmbedding) -> Vec<String> {
    image
        .roles
        .iter()
        .map(|r| match r {
            Role::Cls => "cls".to_string(),
            Role::Patch { row, col } => format!("p{row}_{col}"),
            other => format!("{other:?}").to_lowercase(),
        })
        .collect()
}

/// Row labels for a text embedding built from `tokens`.
pub fn token_labels(world: &ConceptWorld, text: &DenseEmbedding, tokens: &[Token]) -> Vec<String> {
    let body: Vec<Token> = tokens.iter().copied().filter(|t| *t != Token::Eos).collect();
    text.roles
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Role::Eos => "<eos>".to_string(),
            Role::Pad => "<pad>".to_string(),
            _ => body.get(i).map_or_else(|| "?".to_string(), |&t| world.token_label(t)),
        })
        .collect()
}

pub fn compute_dcsm(text: &DenseEmbedding, image: &DenseEmbedding) -> Result<Dcsm> {
    if text.dim() != image.dim() {
        return Err(Error::DimensionMismatch { left: text.dim(), right: image.dim() });
    }
    let mut values = Vec::with_capacity(text.len() * image.len());
    for t in &text.rows {
        for p in &image.rows {
            values.push(dot(t.as_slice(), p.as_slice()).clamp(-1.0, 1.0));
        }
    }
    Ok(Dcsm {
        rows: text.len(),
        cols: image.len(),
        values,
        fr_stage: FrStage::Pending,
        normalized: false,
        provenance: (String::new(), String::new()),
    })
}

/// All text-by-image maps; entry `[i][j]` pairs text i with image j.
pub fn compute_batch(texts: &[DenseEmbedding], images: &[DenseEmbedding]) -> Result<Vec<Vec<Dcsm>>> {
    texts.iter().map(|t| images.iter().map(|i| compute_dcsm(t, i)).collect()).collect()
}

/// Constant rows keyed by synonym class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrTable {
    pub seed: u64,
    pub width: usize,
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl FrTable {
    /// One row per synonym class, entries uniform on [-1, 1].
    pub fn new(world: &ConceptWorld, width: usize, seed: u64) -> Self {
        let entries = world
            .fr_classes()
            .into_iter()
            .enumerate()
            .map(|(i, class)| {
                let mut rng = rng_for(seed, i as u64);
                let row = (0..width).map(|_| rng.random_range(-1.0..=1.0)).collect();
                (class, row)
            })
            .collect();
        FrTable { seed, width, entries }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<FrTable> {
        let table: FrTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if table.entries.values().any(|r| r.len() != table.width || r.iter().any(|v| !(-1.0..=1.0).contains(v))) {
            return Err(Error::Format("functional row has the wrong width or leaves [-1, 1]".into()));
        }
        Ok(table)
    }
}

/// Overwrites every functional-word row with its class row. `tokens` are the
/// caption tokens the text embedding was built from; EOS and pad rows stay.
pub fn apply_frs(mut map: Dcsm, tokens: &[Token], world: &ConceptWorld, table: &FrTable) -> Result<Dcsm> {
    if map.fr_stage != FrStage::Pending {
        return Err(Error::PipelineOrder("functional rows already handled"));
    }
    if table.width != map.cols {
        return Err(Error::ShapeMismatch(format!("table width {} for {} columns", table.width, map.cols)));
    }
    for (r, &t) in tokens.iter().filter(|t| **t != Token::Eos).enumerate() {
        if r >= map.rows {
            return Err(Error::ShapeMismatch(format!("{} tokens for {} rows", tokens.len(), map.rows)));
        }
        if let Token::Term(g) = t {
            let class = &world.term(g).fr_class;
            let row = table.entries.get(class).ok_or_else(|| Error::MissingFrEntry(class.clone()))?;
            map.values[r * map.cols..(r + 1) * map.cols].copy_from_slice(row);
        }
    }
    map.fr_stage = FrStage::Applied;
    Ok(map)
}

/// Standardizes the whole map to mean 0 and (population) std 1.
pub fn zscore(mut map: Dcsm) -> Result<Dcsm> {
    if map.fr_stage == FrStage::Pending {
        return Err(Error::PipelineOrder("z-score before functional rows"));
    }
    if map.normalized {
        return Err(Error::PipelineOrder("map already normalized"));
    }
    let n = map.values.len() as f64;
    let mean = map.values.iter().sum::<f64>() / n;
    let var = map.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return Err(Error::ZeroVariance);
    }
    map.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    map.normalized = true;
    Ok(map)
}

/// compute, then functional rows (or their deliberate omission), then z-score.
pub fn pipeline(
    text: &DenseEmbedding,
    tokens: &[Token],
    image: &DenseEmbedding,
    world: &ConceptWorld,
    table: Option<&FrTable>,
) -> Result<Dcsm> {
    let map = compute_dcsm(text, image)?;
    let map = match table {
        Some(t) => apply_frs(map, tokens, world, t)?,
        None => map.skip_frs()?,
    };
    zscore(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{DenseEncoder, DenseEncoderConfig, Placement, SceneSpec};
    use crate::sphere::{random_unit, UnitVector};
    use crate::world::{build_world, tokenize, AttributeId, ConceptId, WorldConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn world() -> ConceptWorld {
        build_world(WorldConfig { num_objects: 8, num_attributes: 4, dimension: 64, seed: 0 }).unwrap()
    }

    fn text_of(rows: Vec<UnitVector>) -> DenseEmbedding {
        let roles = vec![Role::Eos; rows.len()];
        DenseEmbedding { rows, roles, grid: None }
    }

    fn image_of(rows: Vec<UnitVector>) -> DenseEmbedding {
        let roles = vec![Role::Cls; rows.len()];
        DenseEmbedding { rows, roles, grid: Some(1) }
    }

    fn scene(w: &ConceptWorld, x: usize, y: usize) -> SceneSpec {
        let _ = w;
        SceneSpec {
            placements: vec![
                Placement { object: ConceptId(x), attribute: AttributeId(0), cell: (0, 0) },
                Placement { object: ConceptId(y), attribute: AttributeId(1), cell: (4, 4) },
            ],
            absent: vec![],
        }
    }

    #[test]
    fn cosine_entries() {
        let a = UnitVector::basis(4, 0).unwrap();
        let b = UnitVector::basis(4, 1).unwrap();
        let m = compute_dcsm(&text_of(vec![a.clone(), b.clone()]), &image_of(vec![b.clone(), a.clone()])).unwrap();
        assert_eq!((m.rows, m.cols), (2, 2));
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert!(!m.fr_applied() && !m.normalized);
        let bad = image_of(vec![UnitVector::basis(3, 0).unwrap()]);
        assert!(matches!(compute_dcsm(&text_of(vec![a]), &bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn batch_diagonal_is_matched_pairs() {
        let w = world();
        let enc = DenseEncoder::new(&w, DenseEncoderConfig { grid: 5, t_max: 8, ..Default::default() }, 1).unwrap();
        let toks: Vec<_> = ["obj00 and obj01", "obj02 and obj03", "obj04 and obj05"]
            .iter()
            .map(|s| tokenize(&w, s).unwrap())
            .collect();
        let texts: Vec<_> = toks.iter().map(|t| enc.embed_text(t).unwrap()).collect();
        let images: Vec<_> =
            (0..3).map(|i| enc.embed_scene(&scene(&w, 2 * i, 2 * i + 1), i as u64).unwrap()).collect();
        let b = compute_batch(&texts, &images).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|r| r.len() == 3));
        for i in 0..3 {
            assert_eq!(b[i][i], compute_dcsm(&texts[i], &images[i]).unwrap());
            // The first token (an object) peaks on its own patch only in the matched image.
            let own = b[i][i].get(0, 1);
            for j in (0..3).filter(|&j| j != i) {
                assert!(own > b[i][j].values[..b[i][j].cols].iter().copied().fold(f64::MIN, f64::max));
            }
        }
    }

    #[test]
    fn functional_rows_replace_only_functional_words() {
        let w = world();
        let enc = DenseEncoder::new(&w, DenseEncoderConfig { grid: 5, t_max: 8, ..Default::default() }, 1).unwrap();
        let table = FrTable::new(&w, enc.cfg.image_rows(), 3);
        let img = enc.embed_scene(&scene(&w, 0, 1), 0).unwrap();

        let plain = tokenize(&w, "obj00 and obj01").unwrap();
        let raw = compute_dcsm(&enc.embed_text(&plain).unwrap(), &img).unwrap();
        assert_eq!(apply_frs(raw.clone(), &plain, &w, &table).unwrap().values, raw.values);

        let below = tokenize(&w, "obj00 below obj01").unwrap();
        let raw = compute_dcsm(&enc.embed_text(&below).unwrap(), &img).unwrap();
        let fr = apply_frs(raw.clone(), &below, &w, &table).unwrap();
        let class = &w.term(w.term_by_key("below").unwrap()).fr_class;
        assert_eq!(fr.row(1), &table.entries[class][..]);
        for r in (0..fr.rows).filter(|&r| r != 1) {
            assert_eq!(fr.row(r), raw.row(r));
        }
        assert!(matches!(apply_frs(fr, &below, &w, &table), Err(Error::PipelineOrder(_))));

        let a = tokenize(&w, "obj00 without obj01").unwrap();
        let b = tokenize(&w, "obj02 and no obj03").unwrap();
        let ma = apply_frs(compute_dcsm(&enc.embed_text(&a).unwrap(), &img).unwrap(), &a, &w, &table).unwrap();
        let mb = apply_frs(compute_dcsm(&enc.embed_text(&b).unwrap(), &img).unwrap(), &b, &w, &table).unwrap();
        assert_eq!(ma.row(1), mb.row(1));

        let mut sparse = table.clone();
        sparse.entries.remove(class);
        let raw = compute_dcsm(&enc.embed_text(&below).unwrap(), &img).unwrap();
        assert!(matches!(apply_frs(raw, &below, &w, &sparse), Err(Error::MissingFrEntry(_))));
    }

    #[test]
    fn fr_table_is_seeded_and_round_trips() {
        let w = world();
        let t = FrTable::new(&w, 26, 9);
        assert_eq!(t, FrTable::new(&w, 26, 9));
        assert_ne!(t, FrTable::new(&w, 26, 10));
        assert_eq!(t.entries.len(), w.fr_classes().len());
        assert!(t.entries.values().flatten().all(|v| (-1.0..=1.0).contains(v)));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fr.json");
        t.save_json(&p).unwrap();
        assert_eq!(FrTable::load_json(&p).unwrap(), t);
    }

    #[test]
    fn zscore_contract() {
        let m = Dcsm {
            rows: 1,
            cols: 3,
            values: vec![0.5; 3],
            fr_stage: FrStage::Applied,
            normalized: false,
            provenance: Default::default(),
        };
        assert!(matches!(zscore(m.clone()), Err(Error::ZeroVariance)));
        let pending = Dcsm { fr_stage: FrStage::Pending, values: vec![0.0, 1.0, 2.0], ..m.clone() };
        assert!(matches!(zscore(pending.clone()), Err(Error::PipelineOrder(_))));
        let z = zscore(pending.skip_frs().unwrap()).unwrap();
        assert_abs_diff_eq!(z.values[0], -(1.5f64.sqrt()), epsilon = 1e-12);
        assert!(matches!(zscore(z), Err(Error::PipelineOrder(_))));
    }

    proptest! {
        #[test]
        fn zscore_standardizes_and_is_affine_invariant(
            vals in proptest::collection::vec(-1.0f64..1.0, 6..40),
            alpha in 0.1f64..10.0,
            beta in -5.0f64..5.0,
        ) {
            let base = Dcsm {
                rows: 1,
                cols: vals.len(),
                values: vals.clone(),
                fr_stage: FrStage::Applied,
                normalized: false,
                provenance: Default::default(),
            };
            prop_assume!(zscore(base.clone()).is_ok());
            let z = zscore(base.clone()).unwrap();
            let n = z.values.len() as f64;
            let mean = z.values.iter().sum::<f64>() / n;
            let std = (z.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
            let shifted = Dcsm { values: vals.iter().map(|v| alpha * v + beta).collect(), ..base };
            let zs = zscore(shifted).unwrap();
            for (a, b) in z.values.iter().zip(&zs.values) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn patch_permutation_permutes_columns(seed in 0u64..500, n in 2usize..7) {
            let text = text_of((0..3).map(|i| random_unit(seed * 10 + i, 8).unwrap()).collect());
            let rows: Vec<_> = (0..n).map(|i| random_unit(seed * 100 + 50 + i as u64, 8).unwrap()).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left((seed as usize) % n);
            let permuted = image_of(perm.iter().map(|&p| rows[p].clone()).collect());
            let a = compute_dcsm(&text, &image_of(rows)).unwrap();
            let b = compute_dcsm(&text, &permuted).unwrap();
            for r in 0..3 {
                for (c, &p) in perm.iter().enumerate() {
                    prop_assert_eq!(b.get(r, c), a.get(r, p));
                }
            }
            prop_assert!(a.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let w = world();
        let enc = DenseEncoder::new(&w, DenseEncoderConfig { grid: 5, t_max: 8, ..Default::default() }, 4).unwrap();
        let table = FrTable::new(&w, enc.cfg.image_rows(), 3);
        let toks = tokenize(&w, "obj00 left of obj01").unwrap();
        let run = || {
            let t = enc.embed_text(&toks).unwrap();
            let i = enc.embed_scene(&scene(&w, 0, 1), 11).unwrap();
            pipeline(&t, &toks, &i, &w, Some(&table)).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.normalized && a.fr_applied());
    }

    #[test]
    fn exports() {
        let m = Dcsm {
            rows: 2,
            cols: 2,
            values: vec![-1.0, 0.0, 0.5, 1.0],
            fr_stage: FrStage::Pending,
            normalized: false,
            provenance: Default::default(),
        };
        let pgm = m.to_pgm(2);
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        assert_eq!(px.len(), 16);
        assert_eq!((px[0], px[2], px[15]), (0, 128, 255));
        let csv = m.to_csv(&["a".into(), "b".into()], &["cls".into(), "p0_0".into()]).unwrap();
        assert_eq!(csv, "token,cls,p0_0\na,-1,0\nb,0.5,1\n");
        assert!(m.to_csv(&["a".into()], &[]).is_err());
    }
}
