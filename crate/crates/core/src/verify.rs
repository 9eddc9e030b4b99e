//! Executable versions of the impossibility lemmas and the ideal-space
//! conditions: analytic predictions next to numerical optimisation.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{
    embed_attributed, embed_composite, embed_negation_text, negation_optimum, orthonormal_basis, project_out,
    GlobalEmbeddingSpace, Layout,
};
use crate::sphere::{axpy, derive_seed, dot, normalize, random_unit_from, rng_for, sphere_argmax, AscentConfig,
    SphereObjective, UnitVector};
use crate::world::{AttributeId, Clause, CompositionalId, ConceptId, ConceptWorld, Element, TermKind};

/// Margins inside this band count as boundary cases, not violations.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Instances are enumerated exhaustively up to this many objects and sampled
/// above it.
pub const EXHAUSTIVE_MAX_OBJECTS: usize = 8;
pub const SAMPLED_INSTANCES: usize = 1000;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub instances: usize,
    pub violations: usize,
    /// Instances whose margin is within [`BOUNDARY_EPS`] of zero.
    pub boundary: usize,
    pub worst_margin: f64,
}

impl ConditionReport {
    fn new(condition: &str) -> Self {
        Self { condition: condition.into(), instances: 0, violations: 0, boundary: 0, worst_margin: f64::INFINITY }
    }

    /// One instance; its margin is the smallest of its inequality margins
    /// (positive means the strict inequality holds).
    fn record(&mut self, margin: f64) {
        self.instances += 1;
        if margin < -BOUNDARY_EPS {
            self.violations += 1;
        } else if margin <= BOUNDARY_EPS {
            self.boundary += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }

    /// Every instance holds strictly.
    pub fn satisfied(&self) -> bool {
        self.violations == 0 && self.boundary == 0
    }
}

/// Image and text embeddings keyed by clause. Keys need not be grammatical:
/// `[a]` names t(a) and `[neg, x]` names t(not x).
#[derive(Debug, Clone, Default)]
pub struct Assignment {
    pub images: HashMap<Clause, UnitVector>,
    pub texts: HashMap<Clause, UnitVector>,
}

fn key(els: &[Element]) -> Clause {
    Clause(els.to_vec())
}

impl Assignment {
    pub fn image(&self, els: &[Element]) -> Result<&UnitVector> {
        self.images.get(&key(els)).ok_or_else(|| Error::MissingClause(format!("i{els:?}")))
    }

    pub fn text(&self, els: &[Element]) -> Result<&UnitVector> {
        self.texts.get(&key(els)).ok_or_else(|| Error::MissingClause(format!("t{els:?}")))
    }
}

fn obj(x: usize) -> Element {
    Element::Object(ConceptId(x))
}

fn attr(a: usize) -> Element {
    Element::Attribute(AttributeId(a))
}

fn term(g: CompositionalId) -> Element {
    Element::Term(g)
}

/// Term standing for "not" in negation keys.
fn negation_term(world: &ConceptWorld) -> Result<CompositionalId> {
    world
        .terms_of_kind(TermKind::Negation)
        .first()
        .copied()
        .ok_or_else(|| Error::ConfigInvalid("world has no negation term".into()))
}

/// Unit direction of `t(g)` orthogonal to `base`, sign-flipped for the second
/// member of an antonym pair so that antonyms get opposite error vectors.
fn error_direction(world: &ConceptWorld, space: &GlobalEmbeddingSpace, g: CompositionalId, base: &UnitVector)
    -> Result<Vec<f64>> {
    let (lead, sign) = match world.antonym(g) {
        Some(h) if h.0 < g.0 => (h, -1.0),
        _ => (g, 1.0),
    };
    let basis = orthonormal_basis(std::slice::from_ref(base));
    let dir = project_out(&space.terms[lead.0], &basis).ok_or(Error::DegenerateSum(0.0))?;
    Ok(dir.as_slice().iter().map(|v| sign * v).collect())
}

/// (1 - d) base + e with e orthogonal to base and |e| = sqrt(2d - d^2).
fn perturbed(base: &UnitVector, dir: &[f64], delta: f64) -> Result<UnitVector> {
    let mag = (2.0 * delta - delta * delta).sqrt();
    let mut v: Vec<f64> = base.as_slice().iter().map(|b| (1.0 - delta) * b).collect();
    axpy(&mut v, mag, dir);
    normalize(&v)
}

/// Ideal embeddings for every clause the condition checks touch.
pub fn oracle_assignment(world: &ConceptWorld, space: &GlobalEmbeddingSpace) -> Result<Assignment> {
    let m = world.num_objects();
    let na = world.num_attributes();
    let neg = negation_term(world)?;
    let locs = world.terms_of_kind(TermKind::Location);
    let rels = world.terms_of_kind(TermKind::Relation);
    let mut asg = Assignment::default();

    for x in 0..m {
        let ix = space.image(ConceptId(x)).clone();
        asg.images.insert(key(&[obj(x)]), ix.clone());
        asg.texts.insert(key(&[obj(x)]), space.text(ConceptId(x)).clone());
        asg.texts.insert(key(&[term(neg), obj(x)]), negation_optimum(space, ConceptId(x))?);
        for a in 0..na {
            asg.images.insert(key(&[attr(a), obj(x)]), embed_attributed(space, ConceptId(x), AttributeId(a))?);
        }
        for &g in &locs {
            let dir = error_direction(world, space, g, &ix)?;
            asg.images.insert(key(&[obj(x), term(g)]), perturbed(&ix, &dir, space.delta)?);
        }
    }
    for a in 0..na {
        asg.texts.insert(key(&[attr(a)]), space.attribute_text(AttributeId(a)).clone());
    }
    for x in 0..m {
        for y in 0..m {
            if x == y {
                continue;
            }
            let ixy = embed_composite(&[space.image(ConceptId(x)), space.image(ConceptId(y))])?;
            for &g in &rels {
                let dir = error_direction(world, space, g, &ixy)?;
                asg.images.insert(key(&[obj(x), term(g), obj(y)]), perturbed(&ixy, &dir, space.delta)?);
            }
            asg.images.insert(key(&[obj(x), obj(y)]), ixy);
            for a in 0..na {
                for b in 0..na {
                    if a == b {
                        continue;
                    }
                    let xa = asg.image(&[attr(a), obj(x)])?.clone();
                    let yb = asg.image(&[attr(b), obj(y)])?.clone();
                    asg.images.insert(key(&[attr(a), obj(x), attr(b), obj(y)]), embed_composite(&[xa, yb])?);
                }
            }
        }
    }
    Ok(asg)
}

/// Ordered tuples of distinct indices below `n`.
fn distinct_tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for t in &out {
            for i in 0..n {
                if !t.contains(&i) {
                    let mut u = t.clone();
                    u.push(i);
                    next.push(u);
                }
            }
        }
        out = next;
    }
    out
}

/// (objects, attributes, terms) index combinations for one condition, cut
/// down to a seeded sample once the world is large.
fn instances(
    m: usize,
    objects: usize,
    na: usize,
    attributes: usize,
    terms: &[CompositionalId],
    term_count: usize,
    sampled: bool,
    seed: u64,
) -> Vec<(Vec<usize>, Vec<usize>, Vec<CompositionalId>)> {
    let term_idx = distinct_tuples(terms.len(), term_count);
    let mut all = Vec::new();
    for o in distinct_tuples(m, objects) {
        for a in distinct_tuples(na, attributes) {
            for t in &term_idx {
                all.push((o.clone(), a.clone(), t.iter().map(|&i| terms[i]).collect()));
            }
        }
    }
    if sampled && all.len() > SAMPLED_INSTANCES {
        let mut rng = rng_for(seed, 0);
        let picks = sample(&mut rng, all.len(), SAMPLED_INSTANCES).into_vec();
        return picks.into_iter().map(|i| all[i].clone()).collect();
    }
    all
}

/// Evaluates every inequality instance of Conditions 1.1 to 4.3.
pub fn check_conditions(asg: &Assignment, world: &ConceptWorld, seed: u64) -> Result<Vec<ConditionReport>> {
    let m = world.num_objects();
    let na = world.num_attributes();
    let sampled = m > EXHAUSTIVE_MAX_OBJECTS;
    let neg = negation_term(world)?;
    let locs = world.terms_of_kind(TermKind::Location);
    let rels = world.terms_of_kind(TermKind::Relation);
    let d = |a: &UnitVector, b: &UnitVector| dot(a.as_slice(), b.as_slice());
    let inst = |c: u64, o, a, t: &[CompositionalId], k| instances(m, o, na, a, t, k, sampled, derive_seed(seed, c));
    let mut reports = Vec::new();

    let mut r = ConditionReport::new("1.1");
    for (o, _, _) in inst(11, 2, 0, &[], 0) {
        let ix = asg.image(&[obj(o[0])])?;
        r.record(d(ix, asg.text(&[obj(o[0])])?) - d(ix, asg.text(&[obj(o[1])])?));
    }
    for (o, _, _) in inst(12, 3, 0, &[], 0) {
        let ixy = asg.image(&[obj(o[0]), obj(o[1])])?;
        r.record(d(ixy, asg.text(&[obj(o[0])])?) - d(ixy, asg.text(&[obj(o[2])])?));
    }
    reports.push(r);

    let mut r = ConditionReport::new("1.2");
    for (o, a, _) in inst(21, 2, 2, &[], 0) {
        let xa = asg.image(&[attr(a[0]), obj(o[0])])?;
        let xb = asg.image(&[attr(a[1]), obj(o[0])])?;
        r.record(d(xa, xb) - d(xa, asg.image(&[obj(o[1])])?));
    }
    for (o, _, g) in inst(22, 2, 0, &locs, 2) {
        let l1 = asg.image(&[obj(o[0]), term(g[0])])?;
        let l2 = asg.image(&[obj(o[0]), term(g[1])])?;
        r.record(d(l1, l2) - d(asg.image(&[obj(o[0])])?, asg.image(&[obj(o[1])])?));
    }
    reports.push(r);

    let mut r = ConditionReport::new("2.1");
    for (o, a, _) in inst(31, 1, 2, &[], 0) {
        r.record(1.0 - d(asg.image(&[attr(a[0]), obj(o[0])])?, asg.image(&[attr(a[1]), obj(o[0])])?));
    }
    reports.push(r);

    let mut r = ConditionReport::new("2.2");
    for (o, a, _) in inst(32, 1, 2, &[], 0) {
        let ta = asg.text(&[attr(a[0])])?;
        r.record(d(asg.image(&[attr(a[0]), obj(o[0])])?, ta) - d(asg.image(&[attr(a[1]), obj(o[0])])?, ta));
    }
    reports.push(r);

    let mut r = ConditionReport::new("2.3");
    for (o, a, _) in inst(33, 2, 2, &[], 0) {
        let ab = asg.image(&[attr(a[0]), obj(o[0]), attr(a[1]), obj(o[1])])?;
        let ba = asg.image(&[attr(a[1]), obj(o[0]), attr(a[0]), obj(o[1])])?;
        r.record(1.0 - d(ab, ba));
    }
    reports.push(r);

    let mut r = ConditionReport::new("3.1");
    for (o, _, g) in inst(41, 1, 0, &locs, 2) {
        r.record(1.0 - d(asg.image(&[obj(o[0]), term(g[0])])?, asg.image(&[obj(o[0]), term(g[1])])?));
    }
    reports.push(r);

    let mut r = ConditionReport::new("3.2");
    for (o, _, g) in inst(42, 2, 0, &rels, 2) {
        let a = asg.image(&[obj(o[0]), term(g[0]), obj(o[1])])?;
        let b = asg.image(&[obj(o[0]), term(g[1]), obj(o[1])])?;
        r.record(1.0 - d(a, b));
    }
    reports.push(r);

    let mut r = ConditionReport::new("3.3");
    for (o, _, g) in inst(43, 3, 0, &rels, 2) {
        let base = asg.image(&[obj(o[0]), term(g[0]), obj(o[1])])?;
        let same = asg.image(&[obj(o[0]), term(g[0]), obj(o[2])])?;
        let other = asg.image(&[obj(o[0]), term(g[1]), obj(o[2])])?;
        r.record(d(base, same) - d(base, other));
    }
    reports.push(r);

    let not = |x: usize| asg.text(&[term(neg), obj(x)]);
    let mut r = ConditionReport::new("4.1");
    for (o, _, _) in inst(51, 2, 0, &[], 0) {
        let nx = not(o[0])?;
        r.record(d(asg.text(&[obj(o[1])])?, nx) - d(asg.text(&[obj(o[0])])?, nx));
    }
    reports.push(r);

    let mut r = ConditionReport::new("4.2");
    for (o, _, _) in inst(52, 2, 0, &[], 0) {
        let ix = asg.image(&[obj(o[0])])?;
        r.record(d(ix, asg.text(&[obj(o[1])])?) - d(ix, not(o[0])?));
    }
    reports.push(r);

    // Two negated concepts should overlap more than two plain ones, and more
    // than a negated concept with a plain one.
    let mut r = ConditionReport::new("4.3");
    for (o, _, _) in inst(53, 2, 0, &[], 0) {
        let (nx, ny) = (not(o[0])?, not(o[1])?);
        let (tx, ty) = (asg.text(&[obj(o[0])])?, asg.text(&[obj(o[1])])?);
        let literal = d(ny, nx) - d(tx, ty);
        let cross = d(nx, ny) - d(nx, ty);
        r.record(literal.min(cross));
    }
    reports.push(r);
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPair {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCertificate {
    pub lemma: String,
    pub pairs: Vec<NamedPair>,
    /// Measured quantities with no closed form.
    pub observed: Vec<(String, f64)>,
    pub max_abs_deviation: f64,
    pub contradiction_reproduced: bool,
}

/// Analytic-vs-numeric tolerance for oracle inputs.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-6;

impl LemmaCertificate {
    fn new(lemma: &str) -> Self {
        Self {
            lemma: lemma.into(),
            pairs: Vec::new(),
            observed: Vec::new(),
            max_abs_deviation: 0.0,
            contradiction_reproduced: false,
        }
    }

    fn pair(&mut self, name: impl Into<String>, analytic: f64, numeric: f64) {
        self.max_abs_deviation = self.max_abs_deviation.max((analytic - numeric).abs());
        self.pairs.push(NamedPair { name: name.into(), analytic, numeric });
    }

    fn observe(&mut self, name: impl Into<String>, value: f64) {
        self.observed.push((name.into(), value));
    }

    pub fn numeric(&self, name: &str) -> Option<f64> {
        self.pairs.iter().find(|p| p.name == name).map(|p| p.numeric)
    }

    pub fn observed(&self, name: &str) -> Option<f64> {
        self.observed.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn within_tolerance(&self) -> bool {
        self.max_abs_deviation < CERTIFICATE_TOLERANCE
    }
}

/// Two-concept images: numerical argmax of the categorisation objective
/// against its closed form and against the plain superposition.
pub fn verify_superposition(space: &GlobalEmbeddingSpace, trials: usize, ascent: &AscentConfig)
    -> Result<LemmaCertificate> {
    let m = space.num_concepts();
    let mut cert = LemmaCertificate::new("superposition");
    let mut cos_closed = Vec::with_capacity(trials);
    let mut cos_super = Vec::with_capacity(trials);
    let mut worst_gap = (0.0f64, 0.0f64);
    for t in 0..trials as u64 {
        let mut rng = rng_for(ascent.seed, t);
        let pick = sample(&mut rng, m, 2).into_vec();
        let mut obj = SphereObjective::new();
        for (j, c) in space.concepts.iter().enumerate() {
            obj = obj.with(if pick.contains(&j) { 1.0 } else { -1.0 }, c.clone());
        }
        let numeric = sphere_argmax(&obj, &AscentConfig { seed: derive_seed(ascent.seed, t), ..*ascent })?;
        let closed = obj.analytic_optimum()?;
        let sup = embed_composite(&[&space.concepts[pick[0]], &space.concepts[pick[1]]])?;
        cos_closed.push(numeric.cos(&closed)?);
        cos_super.push(numeric.cos(&sup)?);
        let (vn, vc) = (obj.value(&numeric)?, obj.value(&closed)?);
        if (vn - vc).abs() >= (worst_gap.1 - worst_gap.0).abs() {
            worst_gap = (vc, vn);
        }
    }
    let min_closed = cos_closed.iter().copied().fold(f64::INFINITY, f64::min);
    let min_super = cos_super.iter().copied().fold(f64::INFINITY, f64::min);
    cert.pair("min_cos_numeric_closed_form", 1.0, min_closed);
    cert.pair("objective_value", worst_gap.0, worst_gap.1);
    cert.observe("min_cos_numeric_superposition", min_super);
    cert.observe("mean_cos_numeric_superposition", mean(&cos_super));
    let mut total = vec![0.0; space.dim()];
    for c in &space.concepts {
        axpy(&mut total, 1.0, c.as_slice());
    }
    cert.observe("concept_sum_norm", crate::sphere::norm(&total));
    cert.contradiction_reproduced = min_super >= 0.999;
    Ok(cert)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseWeights {
    pub object: f64,
    pub attribute: f64,
}

impl Default for CollapseWeights {
    fn default() -> Self {
        Self { object: 0.8, attribute: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepRow {
    pub noise_weight: f64,
    pub mean_cos: f64,
    pub q25: f64,
    pub q75: f64,
    pub unrelated_mean_cos: f64,
    pub object_attribute_mean_cos: f64,
}

fn weighted_pair_image<R: Rng + ?Sized>(
    space: &GlobalEmbeddingSpace,
    (x, a): (usize, usize),
    (y, b): (usize, usize),
    w: CollapseWeights,
    noise: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    let mut v = vec![0.0; space.dim()];
    axpy(&mut v, w.object, space.concepts[x].as_slice());
    axpy(&mut v, w.object, space.concepts[y].as_slice());
    axpy(&mut v, w.attribute, space.attributes[a].as_slice());
    axpy(&mut v, w.attribute, space.attributes[b].as_slice());
    if noise > 0.0 {
        axpy(&mut v, noise, random_unit_from(rng, space.dim())?.as_slice());
    }
    normalize(&v)
}

/// Monte-Carlo spread of cos(i(x_a, y_b), i(x_b, y_a)) under weighted
/// mixtures with a fresh unit noise direction per composite image.
pub fn noise_sweep(space: &GlobalEmbeddingSpace, weights: CollapseWeights, noise_weights: &[f64], trials: usize,
    seed: u64) -> Result<Vec<NoiseSweepRow>> {
    let (m, na) = (space.num_concepts(), space.attributes.len());
    if m < 2 || na < 2 {
        return Err(Error::WorldTooSmall("need 2 objects and 2 attributes".into()));
    }
    let unrelated_possible = m >= 4 && na >= 4;
    let mut rows = Vec::new();
    for (wi, &noise) in noise_weights.iter().enumerate() {
        let mut rng = rng_for(seed, wi as u64);
        let (mut cos, mut unrelated, mut oa) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..trials {
            let (o, a) = if unrelated_possible {
                (sample(&mut rng, m, 4).into_vec(), sample(&mut rng, na, 4).into_vec())
            } else {
                (sample(&mut rng, m, 2).into_vec(), sample(&mut rng, na, 2).into_vec())
            };
            let ab = weighted_pair_image(space, (o[0], a[0]), (o[1], a[1]), weights, noise, &mut rng)?;
            let ba = weighted_pair_image(space, (o[0], a[1]), (o[1], a[0]), weights, noise, &mut rng)?;
            cos.push(ab.cos(&ba)?);
            oa.push(space.concepts[o[0]].cos(&space.attributes[a[0]])?);
            if unrelated_possible {
                let other = weighted_pair_image(space, (o[2], a[2]), (o[3], a[3]), weights, noise, &mut rng)?;
                unrelated.push(ab.cos(&other)?);
            }
        }
        rows.push(NoiseSweepRow {
            noise_weight: noise,
            mean_cos: mean(&cos),
            q25: quantile(&cos, 0.25),
            q75: quantile(&cos, 0.75),
            unrelated_mean_cos: mean(&unrelated),
            object_attribute_mean_cos: mean(&oa),
        });
    }
    Ok(rows)
}

/// Attribute-binding collapse: the lemma construction gives identical
/// composites for swapped bindings; the noise sweep shows it survives noise.
pub fn verify_attribute_collapse(space: &GlobalEmbeddingSpace, weights: CollapseWeights, noise_weights: &[f64],
    trials: usize, seed: u64) -> Result<(LemmaCertificate, Vec<NoiseSweepRow>)> {
    let mut cert = LemmaCertificate::new("attribute_collapse");
    let (x, y, a, b) = (ConceptId(0), ConceptId(1), AttributeId(0), AttributeId(1));
    if space.num_concepts() < 2 || space.attributes.len() < 2 {
        return Err(Error::WorldTooSmall("need 2 objects and 2 attributes".into()));
    }
    let xa = embed_attributed(space, x, a)?;
    let yb = embed_attributed(space, y, b)?;
    let xb = embed_attributed(space, x, b)?;
    let ya = embed_attributed(space, y, a)?;
    let ab = embed_composite(&[&xa, &yb])?;
    let ba = embed_composite(&[&xb, &ya])?;

    let cos_theta = space.image(x).cos(space.attribute_text(a))?;
    let p = crate::oracle::attribute_weight(space.delta, cos_theta)?;
    cert.pair("cos_swapped_bindings", 1.0, ab.cos(&ba)?);
    cert.pair("p", p, xa.cos(space.attribute_text(a))? - (1.0 - space.delta) * cos_theta);
    cert.pair("cos_attributed_object", 1.0 - space.delta + p * cos_theta, xa.cos(space.image(x))?);
    cert.observe("cos_theta_x", cos_theta);
    cert.observe("cos_theta_y", space.image(y).cos(space.attribute_text(a))?);

    let sweep = noise_sweep(space, weights, noise_weights, trials, seed)?;
    for row in &sweep {
        cert.observe(format!("mean_cos_noise_{}", row.noise_weight), row.mean_cos);
        cert.observe(format!("unrelated_mean_cos_noise_{}", row.noise_weight), row.unrelated_mean_cos);
    }
    cert.contradiction_reproduced = (1.0 - ab.cos(&ba)?).abs() < 1e-9;
    Ok((cert, sweep))
}

fn require_term(world: &ConceptWorld, key: &str) -> Result<CompositionalId> {
    world.term_by_key(key).ok_or_else(|| Error::ConfigInvalid(format!("world has no term `{key}`")))
}

/// Sign structure of the spatial error vectors. The e-vectors are scaled by
/// sqrt(2d), which makes the stated dot products exact.
pub fn verify_spatial_contradiction(world: &ConceptWorld, space: &GlobalEmbeddingSpace, betas: [f64; 3])
    -> Result<LemmaCertificate> {
    let sum: f64 = betas.iter().sum();
    if (sum - 3.0).abs() > 1e-9 {
        return Err(Error::BetaConstraintViolated(sum));
    }
    if space.num_concepts() < 2 {
        return Err(Error::WorldTooSmall("need 2 objects".into()));
    }
    let delta = space.delta;
    let (x, y) = (space.text(ConceptId(0)), space.text(ConceptId(1)));
    let loc = &space.terms[require_term(world, "to_the_left")?.0];
    let rel = &space.terms[require_term(world, "left_of")?.0];
    let ixy = embed_composite(&[x, y])?;
    // The three captions: "x to the left", "y to the left", "x left of y".
    let prompts = [embed_composite(&[x, loc])?, embed_composite(&[y, loc])?, embed_composite(&[x, rel, y])?];
    let mut vs = vec![ixy.clone()];
    vs.extend(prompts.iter().cloned());
    let basis = orthonormal_basis(&vs);
    if basis.len() < 4 {
        return Err(Error::DimensionTooSmall("prompt vectors are not independent".into()));
    }
    let q = &basis[1..4];

    let scale = (2.0 * delta).sqrt();
    let combo = |s: [f64; 3]| {
        let mut v = vec![0.0; space.dim()];
        for j in 0..3 {
            axpy(&mut v, scale * s[j] * betas[j], &q[j]);
        }
        v
    };
    let e1 = combo([1.0, 1.0, 1.0]);
    let e2 = combo([1.0, 1.0, -1.0]);
    let e3 = combo([-1.0, -1.0, 1.0]);
    let [b1, b2, b3] = betas.map(|b| b * b);

    let mut cert = LemmaCertificate::new("spatial_contradiction");
    let (d12, d13, d23) = (dot(&e1, &e2), dot(&e1, &e3), dot(&e2, &e3));
    cert.pair("e1.e2", 2.0 * delta * (b1 + b2 - b3), d12);
    cert.pair("e1.e3", 2.0 * delta * (-b1 - b2 + b3), d13);
    cert.pair("e2.e3", -2.0 * delta * (b1 + b2 + b3), d23);
    cert.observe("e1.e2+e1.e3", d12 + d13);
    // With the exact magnitude sqrt(2d - d^2) every product shrinks by (1 - d/2).
    cert.observe("e1.e2_exact_magnitude", (1.0 - delta / 2.0) * d12);
    cert.observe("e_parallel.e1", dot(ixy.as_slice(), &e1));

    // The first image's error direction is the argmax of its prompt objective.
    let obj = (0..3).fold(SphereObjective::new(), |o, j| {
        o.with(betas[j], UnitVector::try_from(q[j].clone()).expect("orthonormal basis vector"))
    });
    if let Ok(numeric) = sphere_argmax(&obj, &AscentConfig::default()) {
        let dir = normalize(&e1)?;
        cert.observe("argmax_cos_e1", numeric.cos(&dir)?);
    }
    cert.contradiction_reproduced = (d12 + d13).abs() <= 1e-12;
    Ok(cert)
}

/// Seeded points on the plane b1 + b2 + b3 = 3.
pub fn constraint_betas(seed: u64, n: usize) -> Vec<[f64; 3]> {
    let mut rng = rng_for(seed, 0);
    (0..n)
        .map(|_| {
            let (b1, b2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            [b1, b2, 3.0 - b1 - b2]
        })
        .collect()
}

/// General prepositions collapse onto t(x, y) and so sit closer to an
/// unrelated relation than a specific preposition does.
pub fn verify_preposition_hierarchy(world: &ConceptWorld, space: &GlobalEmbeddingSpace) -> Result<LemmaCertificate> {
    let left = require_term(world, "left_of")?;
    let right = world.antonym(left).ok_or_else(|| Error::ConfigInvalid("left_of has no antonym".into()))?;
    let above = require_term(world, "above")?;
    let delta = space.delta;
    let txy = embed_composite(&[space.text(ConceptId(0)), space.text(ConceptId(1))])?;

    let basis = orthonormal_basis(std::slice::from_ref(&txy));
    let e_l = project_out(&space.terms[left.0], &basis).ok_or(Error::DegenerateSum(0.0))?;
    let mut basis2 = basis.clone();
    basis2.push(e_l.as_slice().to_vec());
    let e_a = project_out(&space.terms[above.0], &basis2).ok_or(Error::DegenerateSum(0.0))?;

    let mag = (2.0 * delta - delta * delta).sqrt();
    let build = |sign: f64, e: &UnitVector| {
        let mut v: Vec<f64> = txy.as_slice().iter().map(|t| (1.0 - delta) * t).collect();
        axpy(&mut v, sign * mag, e.as_slice());
        v
    };
    let t_l = build(1.0, &e_l);
    let t_r = build(-1.0, &e_l);
    let i_a = build(1.0, &e_a);
    let _ = right;

    let t_b = embed_composite(&[&t_l, &t_r])?;
    let mut cert = LemmaCertificate::new("preposition_hierarchy");
    cert.pair("norm_t_left", 1.0, crate::sphere::norm(&t_l));
    cert.pair("cos_superposition_txy", 1.0, t_b.cos(&txy)?);
    let margin = dot(t_b.as_slice(), &i_a) - dot(&t_l, &i_a);
    cert.pair("margin", delta * (1.0 - delta), margin);
    cert.contradiction_reproduced = (1.0 - t_b.cos(&txy)?).abs() < 1e-9 && margin > 0.0;
    Ok(cert)
}

/// Negation in the simplex space: negated texts inherit the concept geometry
/// and the negated-pair inequality fails on every pair.
pub fn verify_negation_contradiction(space: &GlobalEmbeddingSpace) -> Result<LemmaCertificate> {
    if space.layout != Layout::Simplex {
        return Err(Error::RequiresSimplex);
    }
    let m = space.num_concepts();
    let inv = 1.0 / (m as f64 - 1.0);
    // Numeric t(not x): argmax of sum_{v != x} t.i(v) - t.i(x).
    let negs = (0..m)
        .map(|x| {
            let obj = space.concepts.iter().enumerate().fold(SphereObjective::new(), |o, (j, c)| {
                o.with(if j == x { -1.0 } else { 1.0 }, c.clone())
            });
            sphere_argmax(&obj, &AscentConfig { seed: x as u64, ..AscentConfig::default() })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut worst = [(inv, inv), (-inv, -inv), (-inv, -inv), (-1.0, -1.0)];
    let mut all_violated = true;
    for j in 0..m {
        let closed = embed_negation_text(space, ConceptId(j))?;
        let c = negs[j].cos(&closed)?;
        if (c - 1.0).abs() > (worst[3].1 + 1.0).abs() {
            worst[3] = (-1.0, -c);
        }
        for k in 0..m {
            if j == k {
                continue;
            }
            let vals = [
                negs[j].cos(space.text(ConceptId(k)))?,
                negs[j].cos(&negs[k])?,
                space.text(ConceptId(j)).cos(space.text(ConceptId(k)))?,
            ];
            for (w, v) in worst.iter_mut().zip(vals) {
                if (v - w.0).abs() > (w.1 - w.0).abs() {
                    w.1 = v;
                }
            }
            all_violated &= vals[0] - vals[1] > BOUNDARY_EPS;
        }
    }
    let mut cert = LemmaCertificate::new("negation");
    cert.pair("t(not xj).t(xk)", worst[0].0, worst[0].1);
    cert.pair("t(not xj).t(not xk)", worst[1].0, worst[1].1);
    cert.pair("t(xj).t(xk)", worst[2].0, worst[2].1);
    cert.pair("-cos(numeric, -i(x))", worst[3].0, worst[3].1);
    cert.observe("pairs", (m * (m - 1)) as f64);
    cert.contradiction_reproduced = all_violated;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionPoint {
    pub k: usize,
    pub mean_cos: f64,
    pub q25: f64,
    pub q75: f64,
    /// 1/sqrt(k), exact for mutually orthogonal concepts.
    pub orthogonal_prediction: f64,
}

/// Mean cosine between one constituent's text vector and the superposition
/// of k concepts, for k = 1..=k_max.
pub fn multi_object_dilution(space: &GlobalEmbeddingSpace, k_max: usize, trials: usize, seed: u64)
    -> Result<Vec<DilutionPoint>> {
    let m = space.num_concepts();
    if k_max > m || k_max == 0 {
        return Err(Error::ConfigInvalid(format!("k_max {k_max} must be in 1..={m}")));
    }
    (1..=k_max)
        .map(|k| {
            let mut rng = rng_for(seed, k as u64);
            let cos = (0..trials)
                .map(|_| {
                    let pick = sample(&mut rng, m, k).into_vec();
                    let parts: Vec<&UnitVector> = pick.iter().map(|&j| &space.concepts[j]).collect();
                    embed_composite(&parts)?.cos(space.text(ConceptId(pick[0])))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DilutionPoint {
                k,
                mean_cos: mean(&cos),
                q25: quantile(&cos, 0.25),
                q75: quantile(&cos, 0.75),
                orthogonal_prediction: 1.0 / (k as f64).sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::build_global_space;
    use crate::world::{build_world, WorldConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn setup(m: usize, a: usize, n: usize, layout: Layout, delta: f64) -> (ConceptWorld, GlobalEmbeddingSpace) {
        let w = build_world(WorldConfig { num_objects: m, num_attributes: a, dimension: n, seed: 0 }).unwrap();
        let s = build_global_space(&w, delta, layout, 5).unwrap();
        (w, s)
    }

    fn report<'a>(rs: &'a [ConditionReport], id: &str) -> &'a ConditionReport {
        rs.iter().find(|r| r.condition == id).unwrap()
    }

    #[test]
    fn quantile_matches_hand_values() {
        let xs = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(mean(&xs), 3.0);
    }

    #[test]
    fn oracle_simplex_condition_pattern() {
        for m in [4usize, 8] {
            let (w, s) = setup(m, 4, 64, Layout::Simplex, 0.02);
            let asg = oracle_assignment(&w, &s).unwrap();
            let rs = check_conditions(&asg, &w, 1).unwrap();
            for id in ["1.1", "1.2", "2.1", "2.2", "4.1", "4.2"] {
                assert!(report(&rs, id).satisfied(), "{id}: {:?}", report(&rs, id));
            }
            // Swapped bindings are parallel: every instance sits on the boundary.
            let r23 = report(&rs, "2.3");
            assert_eq!(r23.boundary + r23.violations, r23.instances);
            assert!(!r23.satisfied());
            let r43 = report(&rs, "4.3");
            assert_eq!(r43.violations, m * (m - 1));
            assert_abs_diff_eq!(r43.worst_margin, -2.0 / (m as f64 - 1.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn large_worlds_are_sampled() {
        let (w, s) = setup(12, 4, 64, Layout::Random, 0.02);
        let asg = oracle_assignment(&w, &s).unwrap();
        let rs = check_conditions(&asg, &w, 1).unwrap();
        assert_eq!(report(&rs, "2.3").instances, SAMPLED_INSTANCES);
        assert_eq!(report(&rs, "4.1").instances, 12 * 11);
        assert_eq!(rs, check_conditions(&asg, &w, 1).unwrap());
    }

    #[test]
    fn unstructured_assignment_breaks_categorisation() {
        let (w, s) = setup(6, 2, 16, Layout::Random, 0.02);
        let mut asg = oracle_assignment(&w, &s).unwrap();
        let mut rng = rng_for(77, 0);
        for v in asg.images.values_mut().chain(asg.texts.values_mut()) {
            *v = random_unit_from(&mut rng, 16).unwrap();
        }
        let rs = check_conditions(&asg, &w, 0).unwrap();
        assert!(report(&rs, "1.1").violations > 0);
    }

    #[test]
    fn missing_clause_is_reported() {
        let (w, _) = setup(4, 2, 16, Layout::Random, 0.02);
        assert!(matches!(check_conditions(&Assignment::default(), &w, 0), Err(Error::MissingClause(_))));
    }

    #[test]
    fn superposition_examples() {
        let (_, s) = setup(16, 2, 64, Layout::Simplex, 0.02);
        let cert = verify_superposition(&s, 50, &AscentConfig::default()).unwrap();
        assert!(cert.numeric("min_cos_numeric_closed_form").unwrap() >= 0.999);
        assert!(cert.observed("min_cos_numeric_superposition").unwrap() >= 0.999);
        assert!(cert.observed("concept_sum_norm").unwrap() < 1e-9);
        assert!(cert.within_tolerance() && cert.contradiction_reproduced);

        let (_, s) = setup(2, 2, 8, Layout::Random, 0.02);
        let cert = verify_superposition(&s, 3, &AscentConfig::default()).unwrap();
        assert_abs_diff_eq!(cert.observed("min_cos_numeric_superposition").unwrap(), 1.0, epsilon = 1e-9);

        // Random layout: the optimiser still finds the closed form, which is
        // not the plain superposition because the concepts do not sum to zero.
        let (_, s) = setup(16, 2, 64, Layout::Random, 0.02);
        let cert = verify_superposition(&s, 10, &AscentConfig::default()).unwrap();
        assert!(cert.within_tolerance());
        // The numeric optimum never beats the closed form.
        let p = cert.pairs.iter().find(|p| p.name == "objective_value").unwrap();
        assert!(p.numeric <= p.analytic + 1e-9);
    }

    #[test]
    fn attribute_collapse_examples() {
        let (_, s) = setup(16, 8, 64, Layout::Random, 0.02);
        let (cert, sweep) =
            verify_attribute_collapse(&s, CollapseWeights::default(), &[0.0, 0.2], 1000, 3).unwrap();
        assert_abs_diff_eq!(cert.numeric("cos_swapped_bindings").unwrap(), 1.0, epsilon = 1e-9);
        assert!(cert.within_tolerance() && cert.contradiction_reproduced);
        assert_abs_diff_eq!(sweep[0].mean_cos, 1.0, epsilon = 1e-9);
        assert!(sweep[1].mean_cos >= 0.95, "{:?}", sweep[1]);
        assert!(sweep[1].unrelated_mean_cos.abs() <= 0.1, "{:?}", sweep[1]);
        assert!(sweep[1].q25 <= sweep[1].mean_cos && sweep[1].mean_cos <= 1.0);
    }

    #[test]
    fn spatial_contradiction_examples() {
        let (w, s) = setup(4, 2, 64, Layout::Random, 0.02);
        let cert = verify_spatial_contradiction(&w, &s, [1.0, 1.0, 1.0]).unwrap();
        for (name, want) in [("e1.e2", 0.04), ("e1.e3", -0.04), ("e2.e3", -0.12)] {
            assert_abs_diff_eq!(cert.numeric(name).unwrap(), want, epsilon = 1e-12);
        }
        assert!(cert.contradiction_reproduced);
        assert!(cert.observed("e_parallel.e1").unwrap().abs() < 1e-12);
        assert!(cert.observed("argmax_cos_e1").unwrap() > 1.0 - 1e-9);

        let cert = verify_spatial_contradiction(&w, &s, [1.5, 1.5, 0.0]).unwrap();
        for (name, want) in [("e1.e2", 9.0 * 0.02), ("e1.e3", -9.0 * 0.02), ("e2.e3", -9.0 * 0.02)] {
            assert_abs_diff_eq!(cert.numeric(name).unwrap(), want, epsilon = 1e-12);
        }
        assert!(matches!(
            verify_spatial_contradiction(&w, &s, [1.0, 1.0, 1.1]),
            Err(Error::BetaConstraintViolated(_))
        ));
    }

    proptest! {
        #[test]
        fn spatial_sign_structure_holds_on_constraint(b1 in -3.0f64..3.0, b2 in -3.0f64..3.0) {
            let (w, s) = setup(4, 2, 32, Layout::Random, 0.05);
            let cert = verify_spatial_contradiction(&w, &s, [b1, b2, 3.0 - b1 - b2]).unwrap();
            prop_assert!(cert.contradiction_reproduced);
            prop_assert!(cert.max_abs_deviation < 1e-12);
        }
    }

    #[test]
    fn preposition_hierarchy_examples() {
        for delta in [0.01, 0.05, 0.1] {
            let (w, s) = setup(4, 2, 64, Layout::Random, delta);
            let cert = verify_preposition_hierarchy(&w, &s).unwrap();
            assert_abs_diff_eq!(cert.numeric("cos_superposition_txy").unwrap(), 1.0, epsilon = 1e-9);
            assert!(cert.numeric("margin").unwrap() > 0.0);
            assert!(cert.within_tolerance() && cert.contradiction_reproduced);
        }
        // The margin vanishes with delta.
        let (w, s) = setup(4, 2, 64, Layout::Random, 1e-6);
        assert!(verify_preposition_hierarchy(&w, &s).unwrap().numeric("margin").unwrap() < 2e-6);
    }

    #[test]
    fn negation_examples() {
        for m in [2usize, 4, 32] {
            let (_, s) = setup(m, 2, 64, Layout::Simplex, 0.02);
            let cert = verify_negation_contradiction(&s).unwrap();
            let inv = 1.0 / (m as f64 - 1.0);
            assert_abs_diff_eq!(cert.numeric("t(not xj).t(xk)").unwrap(), inv, epsilon = 1e-9);
            assert_abs_diff_eq!(cert.numeric("t(not xj).t(not xk)").unwrap(), -inv, epsilon = 1e-9);
            assert!(cert.within_tolerance() && cert.contradiction_reproduced);
        }
        let (_, s) = setup(4, 2, 64, Layout::Random, 0.02);
        assert!(matches!(verify_negation_contradiction(&s), Err(Error::RequiresSimplex)));
    }

    #[test]
    fn dilution_examples() {
        let (_, s) = setup(16, 2, 512, Layout::Random, 0.02);
        let curve = multi_object_dilution(&s, 8, 500, 9).unwrap();
        assert_abs_diff_eq!(curve[0].mean_cos, 1.0, epsilon = 1e-12);
        assert!((curve[3].mean_cos - 0.5).abs() <= 0.05);
        for pair in curve.windows(2) {
            assert!(pair[1].mean_cos < pair[0].mean_cos);
        }
        assert!(multi_object_dilution(&s, 17, 10, 0).is_err());
    }
}
