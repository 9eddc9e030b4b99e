//! Oracle encoders: the ideal global embeddings assumed by the proofs, and a
//! synthetic dense token/patch encoder for similarity maps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{
    axpy, derive_seed, dot, norm, normalize, random_unit, random_unit_from, regular_simplex, rng_for, UnitVector,
    DEGENERATE_NORM,
};
use crate::world::{AttributeId, ConceptId, ConceptWorld, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Simplex,
    Random,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" => Ok(Layout::Simplex),
            "random" => Ok(Layout::Random),
            other => Err(Error::ConfigInvalid(format!("unknown layout `{other}`"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Simplex => "simplex",
            Layout::Random => "random",
        })
    }
}

// Stream tags so each family of directions draws from its own seed range.
const STREAM_CONCEPT: u64 = 1 << 32;
const STREAM_ATTRIBUTE: u64 = 2 << 32;
const STREAM_TERM: u64 = 3 << 32;
const STREAM_CONJUNCTION: u64 = 4 << 32;

/// Global single-vector embeddings. Text and image vectors of a concept
/// coincide (no modality gap).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbeddingSpace {
    pub delta: f64,
    pub layout: Layout,
    pub seed: u64,
    pub concepts: Vec<UnitVector>,
    pub attributes: Vec<UnitVector>,
    pub terms: Vec<UnitVector>,
    pub conjunction: UnitVector,
}

pub fn build_global_space(world: &ConceptWorld, delta: f64, layout: Layout, seed: u64) -> Result<GlobalEmbeddingSpace> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::ConfigInvalid(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    let n = world.config.dimension;
    let m = world.num_objects();
    let concepts = match layout {
        Layout::Simplex => regular_simplex(m, n)?.vertices,
        Layout::Random => (0..m as u64)
            .map(|x| random_unit(derive_seed(seed, STREAM_CONCEPT + x), n))
            .collect::<Result<_>>()?,
    };

    // Attributes are agnostic to objects: every i(x).t(a) is equal (zero)
    // when the complement of the concept span has room.
    let basis = orthonormal_basis(&concepts);
    let attributes = (0..world.num_attributes() as u64)
        .map(|a| {
            let raw = random_unit(derive_seed(seed, STREAM_ATTRIBUTE + a), n)?;
            Ok(project_out(&raw, &basis).unwrap_or(raw))
        })
        .collect::<Result<_>>()?;
    let terms = (0..world.terms.len() as u64)
        .map(|g| random_unit(derive_seed(seed, STREAM_TERM + g), n))
        .collect::<Result<_>>()?;
    let conjunction = random_unit(derive_seed(seed, STREAM_CONJUNCTION), n)?;
    Ok(GlobalEmbeddingSpace { delta, layout, seed, concepts, attributes, terms, conjunction })
}

/// Gram-Schmidt basis of the span of `vs`; near-dependent vectors are skipped.
pub fn orthonormal_basis(vs: &[UnitVector]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut r = v.as_slice().to_vec();
        // Two passes keep the basis orthogonal to round-off.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                axpy(&mut r, -c, q);
            }
        }
        let nr = norm(&r);
        if nr > 1e-8 {
            r.iter_mut().for_each(|x| *x /= nr);
            basis.push(r);
        }
    }
    basis
}

/// Component of `v` orthogonal to an orthonormal `basis`, normalised;
/// `None` when nothing is left.
pub fn project_out(v: &UnitVector, basis: &[Vec<f64>]) -> Option<UnitVector> {
    let mut r = v.as_slice().to_vec();
    for _ in 0..2 {
        for q in basis {
            let c = dot(&r, q);
            axpy(&mut r, -c, q);
        }
    }
    if norm(&r) < 1e-8 {
        return None;
    }
    normalize(&r).ok()
}

impl GlobalEmbeddingSpace {
    pub fn dim(&self) -> usize {
        self.concepts[0].dim()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// i(x)
    pub fn image(&self, x: ConceptId) -> &UnitVector {
        &self.concepts[x.0]
    }

    /// t(x), identical to i(x) for the oracle.
    pub fn text(&self, x: ConceptId) -> &UnitVector {
        &self.concepts[x.0]
    }

    /// t(a)
    pub fn attribute_text(&self, a: AttributeId) -> &UnitVector {
        &self.attributes[a.0]
    }
}

/// Non-negative root p of p^2 + 2(1-d)p cos(theta) - (2d - d^2) = 0, the
/// weight that keeps (1-d)i(x) + p t(a) on the sphere.
pub fn attribute_weight(delta: f64, cos_theta: f64) -> Result<f64> {
    let b = (1.0 - delta) * cos_theta;
    let disc = b * b + 2.0 * delta - delta * delta;
    if disc < 0.0 {
        return Err(Error::NoRealRoot(disc));
    }
    Ok(-b + disc.sqrt())
}

/// (1-d) base + p attr, with p from [`attribute_weight`].
pub fn attributed(base: &UnitVector, attr: &UnitVector, delta: f64) -> Result<UnitVector> {
    let p = attribute_weight(delta, base.cos(attr)?)?;
    let v: Vec<f64> = base
        .as_slice()
        .iter()
        .zip(attr.as_slice())
        .map(|(b, a)| (1.0 - delta) * b + p * a)
        .collect();
    // Already unit up to rounding; normalising removes the residue.
    normalize(&v)
}

/// i(x_a)
pub fn embed_attributed(space: &GlobalEmbeddingSpace, x: ConceptId, a: AttributeId) -> Result<UnitVector> {
    attributed(space.image(x), space.attribute_text(a), space.delta)
}

/// Normalised superposition of the parts.
pub fn embed_composite<V: AsRef<[f64]>>(parts: &[V]) -> Result<UnitVector> {
    let first = parts.first().ok_or(Error::DegenerateSum(0.0))?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for p in parts {
        let p = p.as_ref();
        if p.len() != sum.len() {
            return Err(Error::DimensionMismatch { left: sum.len(), right: p.len() });
        }
        axpy(&mut sum, 1.0, p);
    }
    let n = norm(&sum);
    if n < DEGENERATE_NORM {
        return Err(Error::DegenerateSum(n));
    }
    normalize(&sum)
}

/// t(not x) = -i(x); only defined for the simplex layout.
pub fn embed_negation_text(space: &GlobalEmbeddingSpace, x: ConceptId) -> Result<UnitVector> {
    if space.layout != Layout::Simplex {
        return Err(Error::RequiresSimplex);
    }
    Ok(space.image(x).antipode())
}

/// Maximiser of sum_v t.i(v) - 2 t.i(x): the negation text for any layout.
/// Reduces to -i(x) when the concepts sum to zero.
pub fn negation_optimum(space: &GlobalEmbeddingSpace, x: ConceptId) -> Result<UnitVector> {
    let mut v = vec![0.0; space.dim()];
    for c in &space.concepts {
        axpy(&mut v, 1.0, c.as_slice());
    }
    axpy(&mut v, -2.0, space.image(x).as_slice());
    let n = norm(&v);
    if n < DEGENERATE_NORM {
        return Err(Error::DegenerateSum(n));
    }
    normalize(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseEncoderConfig {
    /// Patch grid is `grid` x `grid`.
    pub grid: usize,
    pub t_max: usize,
    pub w_c: f64,
    pub w_a: f64,
    pub w_g: f64,
    pub sigma: f64,
}

impl Default for DenseEncoderConfig {
    fn default() -> Self {
        Self { grid: 3, t_max: 6, w_c: 0.8, w_a: 0.4, w_g: 0.9, sigma: 0.15 }
    }
}

impl DenseEncoderConfig {
    pub fn image_rows(&self) -> usize {
        1 + self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 || self.t_max < 2 {
            return Err(Error::ConfigInvalid(format!("grid {} and t_max {} must be >= 2", self.grid, self.t_max)));
        }
        if [self.w_c, self.w_a, self.w_g, self.sigma].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::ConfigInvalid("encoder weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Object,
    Attribute,
    Functional,
    Conjunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Cls,
    Patch { row: u16, col: u16 },
    Token(TokenKind),
    Eos,
    Pad,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Cls => 0,
            Role::Patch { .. } => 1,
            Role::Token(TokenKind::Object) => 2,
            Role::Token(TokenKind::Attribute) => 3,
            Role::Token(TokenKind::Functional) => 4,
            Role::Token(TokenKind::Conjunction) => 5,
            Role::Eos => 6,
            Role::Pad => 7,
        }
    }

    /// Inverse of [`Role::tag`]; patch coordinates come from the row index.
    pub fn from_tag(tag: u8, index: usize, grid: Option<usize>) -> Result<Role> {
        Ok(match tag {
            0 => Role::Cls,
            1 => {
                let g = grid.ok_or_else(|| Error::Format("patch row outside an image".into()))?;
                let p = index.checked_sub(1).ok_or_else(|| Error::Format("patch tag on row 0".into()))?;
                Role::Patch { row: (p / g) as u16, col: (p % g) as u16 }
            }
            2 => Role::Token(TokenKind::Object),
            3 => Role::Token(TokenKind::Attribute),
            4 => Role::Token(TokenKind::Functional),
            5 => Role::Token(TokenKind::Conjunction),
            6 => Role::Eos,
            7 => Role::Pad,
            t => return Err(Error::Format(format!("unknown role tag {t}"))),
        })
    }
}

/// Ordered per-token or per-patch unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEmbedding {
    pub rows: Vec<UnitVector>,
    pub roles: Vec<Role>,
    /// Patch grid side for images, `None` for text.
    pub grid: Option<usize>,
}

impl DenseEmbedding {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.dim())
    }

    pub fn is_image(&self) -> bool {
        self.grid.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub object: ConceptId,
    pub attribute: AttributeId,
    /// (row, col) on the patch grid.
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SceneSpec {
    pub placements: Vec<Placement>,
    /// Concepts a caption may negate; they have no patches.
    #[serde(default)]
    pub absent: Vec<ConceptId>,
}

impl SceneSpec {
    pub fn validate(&self, grid: usize) -> Result<()> {
        for (i, p) in self.placements.iter().enumerate() {
            if p.cell.0 >= grid || p.cell.1 >= grid {
                return Err(Error::GridOverflow(format!("cell {:?} outside a {grid}x{grid} grid", p.cell)));
            }
            if self.placements[..i].iter().any(|q| q.cell == p.cell) {
                return Err(Error::GridOverflow(format!("cell {:?} used twice", p.cell)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: ConceptId) -> bool {
        self.placements.iter().any(|p| p.object == x)
    }

    pub fn placement(&self, x: ConceptId) -> Option<&Placement> {
        self.placements.iter().find(|p| p.object == x)
    }
}

/// Synthetic dense encoders. Object patches carry the local concept and
/// attribute; background patches and CLS carry the scene superposition.
#[derive(Debug, Clone)]
pub struct DenseEncoder {
    pub cfg: DenseEncoderConfig,
    pub space: GlobalEmbeddingSpace,
}

impl DenseEncoder {
    pub fn new(world: &ConceptWorld, cfg: DenseEncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let space = build_global_space(world, 0.02, Layout::Random, seed)?;
        Ok(DenseEncoder { cfg, space })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn noisy(&self, signal: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> Result<UnitVector> {
        let mut v = signal.to_vec();
        if self.cfg.sigma > 0.0 {
            let eps = random_unit_from(rng, v.len())?;
            axpy(&mut v, self.cfg.sigma, eps.as_slice());
        }
        let n = norm(&v);
        if n < DEGENERATE_NORM {
            return Err(Error::DegenerateSum(n));
        }
        normalize(&v)
    }

    /// Dense image embedding: CLS first, then patches row-major.
    pub fn embed_scene(&self, scene: &SceneSpec, seed: u64) -> Result<DenseEmbedding> {
        let g = self.cfg.grid;
        scene.validate(g)?;
        let n = self.dim();
        let mut rng = rng_for(seed, 0);

        let mut g_scene = vec![0.0; n];
        for p in &scene.placements {
            axpy(&mut g_scene, 1.0, self.space.image(p.object).as_slice());
        }
        let gn = norm(&g_scene);
        if gn >= DEGENERATE_NORM {
            g_scene.iter_mut().for_each(|v| *v /= gn);
        } else {
            g_scene.iter_mut().for_each(|v| *v = 0.0);
        }
        let background: Vec<f64> = g_scene.iter().map(|v| self.cfg.w_g * v).collect();

        let mut rows = Vec::with_capacity(1 + g * g);
        let mut roles = Vec::with_capacity(1 + g * g);
        rows.push(self.noisy(&background, &mut rng)?);
        roles.push(Role::Cls);
        for r in 0..g {
            for c in 0..g {
                let signal = match scene.placements.iter().find(|p| p.cell == (r, c)) {
                    Some(p) => {
                        let mut s = vec![0.0; n];
                        axpy(&mut s, self.cfg.w_c, self.space.image(p.object).as_slice());
                        axpy(&mut s, self.cfg.w_a, self.space.attribute_text(p.attribute).as_slice());
                        s
                    }
                    None => background.clone(),
                };
                rows.push(self.noisy(&signal, &mut rng)?);
                roles.push(Role::Patch { row: r as u16, col: c as u16 });
            }
        }
        Ok(DenseEmbedding { rows, roles, grid: Some(g) })
    }

    pub fn token_vector(&self, token: Token) -> Option<&UnitVector> {
        match token {
            Token::Object(x) => Some(self.space.text(x)),
            Token::Attribute(a) => Some(self.space.attribute_text(a)),
            Token::Term(t) => Some(&self.space.terms[t.0]),
            Token::Conjunction => Some(&self.space.conjunction),
            Token::Eos => None,
        }
    }

    /// Dense text embedding padded with EOS copies to `t_max` rows. The EOS
    /// row is the superposition of the object and attribute tokens.
    pub fn embed_text(&self, tokens: &[Token]) -> Result<DenseEmbedding> {
        let body: Vec<Token> = tokens.iter().copied().filter(|t| *t != Token::Eos).collect();
        if body.len() + 1 > self.cfg.t_max {
            return Err(Error::ShapeMismatch(format!(
                "{} tokens plus EOS exceed t_max {}",
                body.len(),
                self.cfg.t_max
            )));
        }
        let content: Vec<&UnitVector> =
            body.iter().filter(|t| t.is_content()).filter_map(|&t| self.token_vector(t)).collect();
        let eos = embed_composite(&content)?;

        let mut rows = Vec::with_capacity(self.cfg.t_max);
        let mut roles = Vec::with_capacity(self.cfg.t_max);
        for &t in &body {
            rows.push(self.token_vector(t).expect("non-EOS token").clone());
            roles.push(Role::Token(match t {
                Token::Object(_) => TokenKind::Object,
                Token::Attribute(_) => TokenKind::Attribute,
                Token::Term(_) => TokenKind::Functional,
                _ => TokenKind::Conjunction,
            }));
        }
        rows.push(eos.clone());
        roles.push(Role::Eos);
        while rows.len() < self.cfg.t_max {
            rows.push(eos.clone());
            roles.push(Role::Pad);
        }
        Ok(DenseEmbedding { rows, roles, grid: None })
    }

    /// Global CLS-style vector of an image embedding.
    pub fn cls<'a>(&self, image: &'a DenseEmbedding) -> &'a UnitVector {
        &image.rows[0]
    }

    /// Global EOS-style vector of a text embedding.
    pub fn eos<'a>(&self, text: &'a DenseEmbedding) -> &'a UnitVector {
        let i = text.roles.iter().position(|r| *r == Role::Eos).expect("text embedding has an EOS row");
        &text.rows[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::cosine;
    use crate::world::{build_world, tokenize, WorldConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn world(m: usize, a: usize, n: usize) -> ConceptWorld {
        build_world(WorldConfig { num_objects: m, num_attributes: a, dimension: n, seed: 0 }).unwrap()
    }

    #[test]
    fn global_space_layouts() {
        let s = build_global_space(&world(4, 2, 64), 0.02, Layout::Simplex, 1).unwrap();
        for j in 0..4 {
            for k in 0..j {
                assert_abs_diff_eq!(s.concepts[j].cos(&s.concepts[k]).unwrap(), -1.0 / 3.0, epsilon = 1e-12);
            }
        }
        let s = build_global_space(&world(16, 4, 64), 0.02, Layout::Random, 1).unwrap();
        for j in 0..16 {
            for k in 0..j {
                assert!(s.concepts[j].cos(&s.concepts[k]).unwrap().abs() < 0.5);
            }
        }
        for bad in [0.6, 0.0, 0.5] {
            assert!(matches!(
                build_global_space(&world(4, 2, 64), bad, Layout::Random, 1),
                Err(Error::ConfigInvalid(_))
            ));
        }
    }

    #[test]
    fn attributes_are_agnostic_to_objects() {
        for layout in [Layout::Simplex, Layout::Random] {
            let s = build_global_space(&world(16, 8, 64), 0.02, layout, 3).unwrap();
            for x in &s.concepts {
                for a in &s.attributes {
                    assert!(x.cos(a).unwrap().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attribute_weight_examples() {
        assert_eq!(attribute_weight(0.0, 0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(attribute_weight(0.02, 0.0).unwrap(), 0.0396f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(attribute_weight(0.02, 0.0).unwrap(), 0.19899, epsilon = 1e-5);
    }

    #[test]
    fn embed_attributed_examples() {
        let w = world(4, 2, 16);
        let s = build_global_space(&w, 0.02, Layout::Random, 7).unwrap();
        let xa = embed_attributed(&s, ConceptId(1), AttributeId(0)).unwrap();
        assert_abs_diff_eq!(norm(xa.as_slice()), 1.0, epsilon = 1e-12);
        // cos(theta) = 0 in the oracle space, so the object overlap is 1 - delta.
        assert_abs_diff_eq!(xa.cos(s.image(ConceptId(1))).unwrap(), 0.98, epsilon = 1e-12);

        // delta = 0 leaves the object untouched.
        let same = attributed(s.image(ConceptId(1)), s.attribute_text(AttributeId(0)), 0.0).unwrap();
        assert_abs_diff_eq!(same.cos(s.image(ConceptId(1))).unwrap(), 1.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn attributed_stays_on_sphere(seed in 0u64..1000, delta in 0.001f64..0.499, n in 2usize..32) {
            let x = random_unit(seed, n).unwrap();
            let a = random_unit(seed + 7919, n).unwrap();
            let xa = attributed(&x, &a, delta).unwrap();
            let cos_t = x.cos(&a).unwrap();
            let p = attribute_weight(delta, cos_t).unwrap();
            // Check the unnormalised construction against the sphere directly.
            let raw: Vec<f64> = x.as_slice().iter().zip(a.as_slice()).map(|(u, v)| (1.0 - delta) * u + p * v).collect();
            prop_assert!((norm(&raw) - 1.0).abs() < 1e-12);
            prop_assert!((xa.cos(&x).unwrap() - ((1.0 - delta) + p * cos_t)).abs() < 1e-12);
            // Condition 2.2: the attributed image is closer to its attribute text.
            if cos_t.abs() < 0.99 {
                prop_assert!(xa.cos(&a).unwrap() > cos_t);
            }
        }

        #[test]
        fn composite_is_symmetric(seed in 0u64..1000) {
            let x = random_unit(seed, 32).unwrap();
            let y = random_unit(seed + 1_000_003, 32).unwrap();
            let c = embed_composite(&[&x, &y]).unwrap();
            prop_assert!((c.cos(&x).unwrap() - c.cos(&y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_examples() {
        let x = random_unit(1, 8).unwrap();
        let y = random_unit(2, 8).unwrap();
        let c = embed_composite(&[&x, &y]).unwrap();
        let sum: Vec<f64> = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a + b).collect();
        let n = norm(&sum);
        for (ci, si) in c.as_slice().iter().zip(&sum) {
            assert_abs_diff_eq!(*ci, si / n, epsilon = 1e-15);
        }
        let single = embed_composite(&[&x]).unwrap();
        for (a, b) in single.as_slice().iter().zip(x.as_slice()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        assert!(matches!(embed_composite(&[x.clone(), x.antipode()]), Err(Error::DegenerateSum(_))));
    }

    #[test]
    fn negation_text_examples() {
        for m in [2usize, 4, 32] {
            let s = build_global_space(&world(m, 2, 64), 0.02, Layout::Simplex, 0).unwrap();
            let inv = 1.0 / (m as f64 - 1.0);
            let n0 = embed_negation_text(&s, ConceptId(0)).unwrap();
            let n1 = embed_negation_text(&s, ConceptId(1)).unwrap();
            assert_abs_diff_eq!(n0.cos(s.image(ConceptId(0))).unwrap(), -1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(n0.cos(s.text(ConceptId(1))).unwrap(), inv, epsilon = 1e-9);
            assert_abs_diff_eq!(n0.cos(&n1).unwrap(), -inv, epsilon = 1e-9);
            assert_abs_diff_eq!(
                negation_optimum(&s, ConceptId(0)).unwrap().cos(&n0).unwrap(),
                1.0,
                epsilon = 1e-9
            );
        }
        let r = build_global_space(&world(4, 2, 64), 0.02, Layout::Random, 0).unwrap();
        assert!(matches!(embed_negation_text(&r, ConceptId(0)), Err(Error::RequiresSimplex)));
    }

    fn encoder(sigma: f64) -> (ConceptWorld, DenseEncoder) {
        let w = world(8, 4, 64);
        let cfg = DenseEncoderConfig { grid: 5, t_max: 8, sigma, ..Default::default() };
        let e = DenseEncoder::new(&w, cfg, 11).unwrap();
        (w, e)
    }

    #[test]
    fn noiseless_object_patch() {
        let (_, e) = encoder(0.0);
        let p = Placement { object: ConceptId(2), attribute: AttributeId(1), cell: (1, 3) };
        let img = e.embed_scene(&SceneSpec { placements: vec![p], absent: vec![] }, 5).unwrap();
        assert_eq!(img.len(), 1 + 25);
        let mut want = vec![0.0; 64];
        axpy(&mut want, 0.8, e.space.image(ConceptId(2)).as_slice());
        axpy(&mut want, 0.4, e.space.attribute_text(AttributeId(1)).as_slice());
        let want = normalize(&want).unwrap();
        let row = &img.rows[1 + 5 + 3];
        assert_abs_diff_eq!(row.cos(&want).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(img.roles[1 + 5 + 3], Role::Patch { row: 1, col: 3 });
    }

    #[test]
    fn empty_scene() {
        let (_, e) = encoder(0.15);
        let img = e.embed_scene(&SceneSpec::default(), 1).unwrap();
        assert!(img.rows.iter().all(|r| (norm(r.as_slice()) - 1.0).abs() < 1e-12));
        let (_, e) = encoder(0.0);
        assert!(matches!(e.embed_scene(&SceneSpec::default(), 1), Err(Error::DegenerateSum(_))));
    }

    #[test]
    fn left_and_right_halves_carry_their_objects() {
        let (_, e) = encoder(0.15);
        let scene = SceneSpec {
            placements: vec![
                Placement { object: ConceptId(0), attribute: AttributeId(0), cell: (2, 0) },
                Placement { object: ConceptId(1), attribute: AttributeId(1), cell: (2, 4) },
            ],
            absent: vec![],
        };
        let img = e.embed_scene(&scene, 9).unwrap();
        let best = |col: usize| {
            let row = &img.rows[1 + 2 * 5 + col];
            (0..8)
                .max_by(|&a, &b| {
                    let ca = row.cos(e.space.image(ConceptId(a))).unwrap();
                    let cb = row.cos(e.space.image(ConceptId(b))).unwrap();
                    ca.total_cmp(&cb)
                })
                .unwrap()
        };
        assert_eq!(best(0), 0);
        assert_eq!(best(4), 1);
    }

    #[test]
    fn overlapping_or_outside_cells_overflow() {
        let (_, e) = encoder(0.1);
        let p = Placement { object: ConceptId(0), attribute: AttributeId(0), cell: (5, 0) };
        let s = SceneSpec { placements: vec![p], absent: vec![] };
        assert!(matches!(e.embed_scene(&s, 0), Err(Error::GridOverflow(_))));
        let q = Placement { cell: (1, 1), ..p };
        let s = SceneSpec { placements: vec![q, Placement { object: ConceptId(1), ..q }], absent: vec![] };
        assert!(matches!(e.embed_scene(&s, 0), Err(Error::GridOverflow(_))));
    }

    #[test]
    fn text_embedding_examples() {
        let (w, e) = encoder(0.15);
        let t = e.embed_text(&tokenize(&w, "obj03").unwrap()).unwrap();
        assert_eq!(t.len(), 8);
        for r in &t.rows {
            assert_abs_diff_eq!(r.cos(e.space.text(ConceptId(3))).unwrap(), 1.0, epsilon = 1e-12);
        }
        assert_eq!(t.roles[1], Role::Eos);
        assert_eq!(t.roles[7], Role::Pad);

        let t = e.embed_text(&tokenize(&w, "attr01 obj02").unwrap()).unwrap();
        let want = embed_composite(&[e.space.text(ConceptId(2)), e.space.attribute_text(AttributeId(1))]).unwrap();
        assert_abs_diff_eq!(e.eos(&t).cos(&want).unwrap(), 1.0, epsilon = 1e-12);

        let tokens = tokenize(&w, "attr00 obj01 and attr02 obj03").unwrap();
        assert_eq!(e.embed_text(&tokens).unwrap(), e.embed_text(&tokens).unwrap());
        assert!(matches!(
            DenseEncoder::new(&w, DenseEncoderConfig { t_max: 3, ..Default::default() }, 0)
                .unwrap()
                .embed_text(&tokens),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn dense_rows_are_unit_and_deterministic() {
        let (_, e) = encoder(0.15);
        let scene = SceneSpec {
            placements: vec![Placement { object: ConceptId(4), attribute: AttributeId(2), cell: (0, 0) }],
            absent: vec![],
        };
        let a = e.embed_scene(&scene, 3).unwrap();
        assert_eq!(a, e.embed_scene(&scene, 3).unwrap());
        assert_ne!(a, e.embed_scene(&scene, 4).unwrap());
        for r in &a.rows {
            assert_abs_diff_eq!(norm(r.as_slice()), 1.0, epsilon = 1e-12);
        }
        let _ = cosine(&a.rows[0], &a.rows[1]).unwrap();
    }

    #[test]
    fn role_tags_round_trip() {
        let roles = [
            Role::Cls,
            Role::Token(TokenKind::Object),
            Role::Token(TokenKind::Attribute),
            Role::Token(TokenKind::Functional),
            Role::Token(TokenKind::Conjunction),
            Role::Eos,
            Role::Pad,
        ];
        for r in roles {
            assert_eq!(Role::from_tag(r.tag(), 0, None).unwrap(), r);
        }
        assert_eq!(Role::from_tag(1, 7, Some(5)).unwrap(), Role::Patch { row: 1, col: 1 });
    }
}
