//! Hard-negative benchmark quads for attribute binding, spatial relations
//! and negation, with a symbolic ground-truth predicate per caption.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Placement, SceneSpec};
use crate::sphere::{derive_seed, rng_for};
use crate::world::{AttributeId, Clause, CompositionalId, ConceptId, ConceptWorld, Element, TermKind, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Attribute,
    Spatial,
    Negation,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Attribute, Family::Spatial, Family::Negation];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Attribute => "attribute",
            Family::Spatial => "spatial",
            Family::Negation => "negation",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(Family::Attribute),
            "spatial" => Ok(Family::Spatial),
            "negation" => Ok(Family::Negation),
            _ => Err(Error::ConfigInvalid(format!("unknown family `{s}`"))),
        }
    }
}

/// Objects and attributes a generator may draw from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPool {
    pub objects: Vec<ConceptId>,
    pub attributes: Vec<AttributeId>,
}

impl ConceptPool {
    pub fn all(world: &ConceptWorld) -> Self {
        ConceptPool { objects: world.object_ids().collect(), attributes: world.attribute_ids().collect() }
    }

    /// Training pool (the first `frac` of each registry) and the held-out
    /// remainder used for evaluation.
    pub fn split(world: &ConceptWorld, frac: f64) -> Result<(ConceptPool, ConceptPool)> {
        let cut = |n: usize| ((n as f64 * frac).round() as usize).clamp(0, n);
        let (mo, ma) = (cut(world.num_objects()), cut(world.num_attributes()));
        let train = ConceptPool {
            objects: world.object_ids().take(mo).collect(),
            attributes: world.attribute_ids().take(ma).collect(),
        };
        let eval = ConceptPool {
            objects: world.object_ids().skip(mo).collect(),
            attributes: world.attribute_ids().skip(ma).collect(),
        };
        for (name, p) in [("train", &train), ("eval", &eval)] {
            if p.objects.len() < 4 || p.attributes.len() < 2 {
                return Err(Error::WorldTooSmall(format!(
                    "{name} split has {} objects and {} attributes; need 4 and 2",
                    p.objects.len(),
                    p.attributes.len()
                )));
            }
        }
        Ok((train, eval))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub family: Family,
    pub pos_scene: SceneSpec,
    pub neg_scene: SceneSpec,
    /// True of `pos_scene`.
    pub pos_captions: [Clause; 2],
    /// False of `pos_scene`, true of `neg_scene`.
    pub neg_captions: [Clause; 2],
}

/// Grid geometry: halves exclude the middle row/column of an odd grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid(pub usize);

impl Grid {
    fn low(self) -> std::ops::Range<usize> {
        0..self.0 / 2
    }

    fn high(self) -> std::ops::Range<usize> {
        self.0.div_ceil(2)..self.0
    }

    fn is_low(self, i: usize) -> bool {
        i < self.0 / 2
    }

    fn is_high(self, i: usize) -> bool {
        i >= self.0.div_ceil(2)
    }

    /// Index of the neutral middle line, if the grid has one.
    fn middle(self) -> Option<usize> {
        (self.0 % 2 == 1).then_some(self.0 / 2)
    }
}

/// Symbolic truth of a caption in a scene, from placements alone.
pub fn holds(clause: &Clause, scene: &SceneSpec, world: &ConceptWorld, grid: Grid) -> bool {
    let els = clause.elements();
    let cell = |x: ConceptId| scene.placement(x).map(|p| p.cell);
    let term_key = |g: CompositionalId| world.term(g).key.as_str();
    match els {
        [Element::Object(x), Element::Term(g), Element::Object(y)] => {
            let (Some(a), Some(b)) = (cell(*x), cell(*y)) else {
                return world.term(*g).kind == TermKind::Negation && scene.contains(*x) && !scene.contains(*y);
            };
            match (world.term(*g).kind, term_key(*g)) {
                (TermKind::Relation, "left_of") => grid.is_low(a.1) && grid.is_high(b.1),
                (TermKind::Relation, "right_of") => grid.is_high(a.1) && grid.is_low(b.1),
                (TermKind::Relation, "above") => grid.is_low(a.0) && grid.is_high(b.0),
                (TermKind::Relation, "below") => grid.is_high(a.0) && grid.is_low(b.0),
                _ => false,
            }
        }
        [Element::Object(x), Element::Term(g)] if world.term(*g).kind == TermKind::Location => {
            let Some(a) = cell(*x) else { return false };
            match term_key(*g) {
                "to_the_left" => grid.is_low(a.1),
                "to_the_right" => grid.is_high(a.1),
                "at_top" => grid.is_low(a.0),
                "at_bottom" => grid.is_high(a.0),
                _ => false,
            }
        }
        _ => {
            // Conjunction of noun phrases, each attribute bound to the next object.
            let mut pending: Option<AttributeId> = None;
            for e in els {
                match *e {
                    Element::Attribute(a) => pending = Some(a),
                    Element::Object(x) => {
                        let Some(p) = scene.placement(x) else { return false };
                        if pending.take().is_some_and(|a| a != p.attribute) {
                            return false;
                        }
                    }
                    Element::Term(_) => return false,
                }
            }
            !els.is_empty()
        }
    }
}

fn pick_distinct<T: Copy, R: Rng>(rng: &mut R, pool: &[T], n: usize) -> Result<Vec<T>> {
    if pool.len() < n {
        return Err(Error::WorldTooSmall(format!("need {n} distinct items, pool has {}", pool.len())));
    }
    Ok(pool.choose_multiple(rng, n).copied().collect())
}

fn random_cells(rng: &mut ChaCha8Rng, grid: Grid, n: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..grid.0).flat_map(|r| (0..grid.0).map(move |c| (r, c))).collect();
    all.choose_multiple(rng, n).copied().collect()
}

fn check_pool(world: &ConceptWorld, pool: &ConceptPool) -> Result<()> {
    let bad_o = pool.objects.iter().find(|x| x.0 >= world.num_objects());
    let bad_a = pool.attributes.iter().find(|a| a.0 >= world.num_attributes());
    if bad_o.is_some() || bad_a.is_some() {
        return Err(Error::ConfigInvalid("concept pool refers outside the world".into()));
    }
    Ok(())
}

fn antonym(world: &ConceptWorld, g: CompositionalId) -> Result<CompositionalId> {
    world.antonym(g).ok_or_else(|| Error::ConfigInvalid(format!("term `{}` has no antonym", world.term(g).key)))
}

impl Grid {
    pub fn check(self) -> Result<()> {
        if self.0 < 3 || self.middle().is_none() {
            return Err(Error::ConfigInvalid(format!("benchmarks need an odd grid of at least 3, got {}", self.0)));
        }
        Ok(())
    }
}

/// "a A and b B" quads; the negative scene swaps the two attributes.
pub fn gen_attribute(world: &ConceptWorld, pool: &ConceptPool, grid: Grid, n: usize, seed: u64) -> Result<Vec<Sample>> {
    grid.check()?;
    check_pool(world, pool)?;
    if pool.objects.len() < 2 || pool.attributes.len() < 2 {
        return Err(Error::WorldTooSmall("attribute binding needs 2 objects and 2 attributes".into()));
    }
    (0..n as u64)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let xy = pick_distinct(&mut rng, &pool.objects, 2)?;
            let ab = pick_distinct(&mut rng, &pool.attributes, 2)?;
            let cells = random_cells(&mut rng, grid, 2);
            let (x, y, a, b) = (xy[0], xy[1], ab[0], ab[1]);
            let scene = |ax, bx| SceneSpec {
                placements: vec![
                    Placement { object: x, attribute: ax, cell: cells[0] },
                    Placement { object: y, attribute: bx, cell: cells[1] },
                ],
                absent: vec![],
            };
            let np = |att: AttributeId, obj: ConceptId| [Element::Attribute(att), Element::Object(obj)];
            let cap = |p: [Element; 2], q: [Element; 2]| Clause([p, q].concat());
            Ok(Sample {
                id: i,
                family: Family::Attribute,
                pos_scene: scene(a, b),
                neg_scene: scene(b, a),
                pos_captions: [cap(np(a, x), np(b, y)), cap(np(b, y), np(a, x))],
                neg_captions: [cap(np(a, y), np(b, x)), cap(np(b, x), np(a, y))],
            })
        })
        .collect()
}

/// Probability that a spatial sample is a single-object location variant.
pub const LOCATION_VARIANT_P: f64 = 0.25;

/// Relation quads "A rel B" / "B rel_opp A", plus location variants.
/// Objects sit in opposite halves along the relation axis and in the same
/// half (or, for location variants, the middle line) across it.
pub fn gen_spatial(world: &ConceptWorld, pool: &ConceptPool, grid: Grid, n: usize, seed: u64) -> Result<Vec<Sample>> {
    grid.check()?;
    check_pool(world, pool)?;
    let relations = world.terms_of_kind(TermKind::Relation);
    let locations = world.terms_of_kind(TermKind::Location);
    if relations.is_empty() || locations.is_empty() {
        return Err(Error::ConfigInvalid("world lacks spatial terms".into()));
    }
    let mid = grid.middle().expect("odd grid");
    (0..n as u64)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let xy = pick_distinct(&mut rng, &pool.objects, 2)?;
            let (x, y) = (xy[0], xy[1]);
            let attrs = [*pool.attributes.choose(&mut rng).unwrap(), *pool.attributes.choose(&mut rng).unwrap()];
            let location = rng.random_bool(LOCATION_VARIANT_P);
            let g = if location { *locations.choose(&mut rng).unwrap() } else { *relations.choose(&mut rng).unwrap() };
            let key = world.term(g).key.clone();
            let horizontal = matches!(key.as_str(), "left_of" | "right_of" | "to_the_left" | "to_the_right");
            // Does the first object sit on the low side of the axis?
            let x_low = matches!(key.as_str(), "left_of" | "above" | "to_the_left" | "at_top");
            let along_low = rng.random_range(grid.low());
            let along_high = rng.random_range(grid.high());
            let (ax, ay) = if x_low { (along_low, along_high) } else { (along_high, along_low) };
            let (cx, cy) = if location {
                (mid, mid)
            } else {
                let side = if rng.random_bool(0.5) { grid.low() } else { grid.high() };
                (rng.random_range(side.clone()), rng.random_range(side))
            };
            let cell = |along, across| if horizontal { (across, along) } else { (along, across) };
            let (px, py) = (cell(ax, cx), cell(ay, cy));
            let scene = |cx_, cy_| SceneSpec {
                placements: vec![
                    Placement { object: x, attribute: attrs[0], cell: cx_ },
                    Placement { object: y, attribute: attrs[1], cell: cy_ },
                ],
                absent: vec![],
            };
            let opp = antonym(world, g)?;
            let (o, t) = (Element::Object, Element::Term);
            let (pos_captions, neg_captions) = if location {
                (
                    [Clause(vec![o(x), t(g)]), Clause(vec![o(y), t(opp)])],
                    [Clause(vec![o(x), t(opp)]), Clause(vec![o(y), t(g)])],
                )
            } else {
                (
                    [Clause(vec![o(x), t(g), o(y)]), Clause(vec![o(y), t(opp), o(x)])],
                    [Clause(vec![o(x), t(opp), o(y)]), Clause(vec![o(y), t(g), o(x)])],
                )
            };
            Ok(Sample {
                id: i,
                family: Family::Spatial,
                pos_scene: scene(px, py),
                neg_scene: scene(py, px),
                pos_captions,
                neg_captions,
            })
        })
        .collect()
}

/// "A1 not B1" quads: the positive scene holds A1, A2 and the negative
/// scene holds B1, B2.
pub fn gen_negation(world: &ConceptWorld, pool: &ConceptPool, grid: Grid, n: usize, seed: u64) -> Result<Vec<Sample>> {
    grid.check()?;
    check_pool(world, pool)?;
    if pool.objects.len() < 4 {
        return Err(Error::WorldTooSmall("negation needs 4 objects".into()));
    }
    let words = world.terms_of_kind(TermKind::Negation);
    if words.is_empty() {
        return Err(Error::ConfigInvalid("world lacks negation terms".into()));
    }
    (0..n as u64)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let objs = pick_distinct(&mut rng, &pool.objects, 4)?;
            let (a1, a2, b1, b2) = (objs[0], objs[1], objs[2], objs[3]);
            let neg = *words.choose(&mut rng).unwrap();
            let mut scene = |p: ConceptId, q: ConceptId, absent: Vec<ConceptId>| {
                let cells = random_cells(&mut rng, grid, 2);
                let mut att = || *pool.attributes.choose(&mut rng).unwrap();
                let (ap, aq) = (att(), att());
                SceneSpec {
                    placements: vec![
                        Placement { object: p, attribute: ap, cell: cells[0] },
                        Placement { object: q, attribute: aq, cell: cells[1] },
                    ],
                    absent,
                }
            };
            let pos_scene = scene(a1, a2, vec![b1, b2]);
            let neg_scene = scene(b1, b2, vec![a1, a2]);
            let cap = |p, q| Clause(vec![Element::Object(p), Element::Term(neg), Element::Object(q)]);
            Ok(Sample {
                id: i,
                family: Family::Negation,
                pos_scene,
                neg_scene,
                pos_captions: [cap(a1, b1), cap(a2, b2)],
                neg_captions: [cap(b1, a1), cap(b2, a2)],
            })
        })
        .collect()
}

pub fn generate(
    family: Family,
    world: &ConceptWorld,
    pool: &ConceptPool,
    grid: Grid,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let seed = derive_seed(seed, family as u64);
    match family {
        Family::Attribute => gen_attribute(world, pool, grid, n, seed),
        Family::Spatial => gen_spatial(world, pool, grid, n, seed),
        Family::Negation => gen_negation(world, pool, grid, n, seed),
    }
}

/// One caption-choice question: pick `correct` among `captions` for `scene`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub sample: u64,
    pub scene: SceneSpec,
    pub captions: Vec<Clause>,
    pub correct: usize,
}

/// Parses the scene notation `attr obj@row,col; ...`, with `!obj` marking a
/// concept that is absent.
pub fn parse_scene(world: &ConceptWorld, text: &str) -> Result<SceneSpec> {
    let object = |w: &str| {
        world.objects.iter().position(|o| o == w).map(ConceptId).ok_or_else(|| Error::UnknownToken(w.to_string()))
    };
    let mut scene = SceneSpec::default();
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some(x) = part.strip_prefix('!') {
            scene.absent.push(object(x.trim())?);
            continue;
        }
        let bad = || Error::Format(format!("expected `attr obj@row,col`, got `{part}`"));
        let (words, cell) = part.split_once('@').ok_or_else(bad)?;
        let (r, c) = cell.split_once(',').ok_or_else(bad)?;
        let cell = (r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
        let mut words = words.split_whitespace();
        let (a, x) = (words.next().ok_or_else(bad)?, words.next().ok_or_else(bad)?);
        if words.next().is_some() {
            return Err(bad());
        }
        let attribute =
            world.attributes.iter().position(|n| n == a).map(AttributeId).ok_or_else(|| Error::UnknownToken(a.to_string()))?;
        scene.placements.push(Placement { object: object(x)?, attribute, cell });
    }
    Ok(scene)
}

pub fn render_scene(world: &ConceptWorld, scene: &SceneSpec) -> String {
    let mut parts: Vec<String> = scene
        .placements
        .iter()
        .map(|p| format!("{} {}@{},{}", world.attribute_name(p.attribute), world.object_name(p.object), p.cell.0, p.cell.1))
        .collect();
    parts.extend(scene.absent.iter().map(|&x| format!("!{}", world.object_name(x))));
    parts.join("; ")
}

/// Replaces the single functional term of a clause.
fn with_term(c: &Clause, g: CompositionalId) -> Clause {
    Clause(c.0.iter().map(|e| if matches!(e, Element::Term(_)) { Element::Term(g) } else { *e }).collect())
}

/// Caption-choice questions for a sample. Spatial questions are 4-way over
/// the terms of the caption's kind; the others are 2-way positive vs hard
/// negative. Both scenes and both caption orders are asked.
pub fn questions(sample: &Sample, world: &ConceptWorld) -> Vec<Question> {
    let mut out = Vec::with_capacity(4);
    for (scene, truths, falses) in [
        (&sample.pos_scene, &sample.pos_captions, &sample.neg_captions),
        (&sample.neg_scene, &sample.neg_captions, &sample.pos_captions),
    ] {
        for k in 0..2 {
            let truth = &truths[k];
            let (captions, correct) = match sample.family {
                Family::Spatial => {
                    let g = truth.0.iter().find_map(|e| match e {
                        Element::Term(g) => Some(*g),
                        _ => None,
                    });
                    let g = g.expect("spatial captions carry a term");
                    let terms = world.terms_of_kind(world.term(g).kind);
                    let caps: Vec<Clause> = terms.iter().map(|&h| with_term(truth, h)).collect();
                    let correct = terms.iter().position(|&h| h == g).expect("term of its own kind");
                    (caps, correct)
                }
                _ => (vec![truth.clone(), falses[k].clone()], 0),
            };
            out.push(Question { sample: sample.id, scene: scene.clone(), captions, correct });
        }
    }
    out
}

pub fn chance_level(family: Family) -> f64 {
    match family {
        Family::Spatial => 0.25,
        _ => 0.5,
    }
}

#[derive(Serialize, Deserialize)]
struct WireCaption {
    tokens: Vec<usize>,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct WireSample {
    id: u64,
    family: Family,
    pos_scene: SceneSpec,
    neg_scene: SceneSpec,
    pos_captions: Vec<WireCaption>,
    neg_captions: Vec<WireCaption>,
}

fn to_wire(c: &Clause, world: &ConceptWorld) -> Result<WireCaption> {
    let tokens = c.tokens(world)?;
    Ok(WireCaption { tokens: tokens.iter().map(|&t| world.token_id(t)).collect(), text: c.render(world)? })
}

fn from_wire(w: &WireCaption, world: &ConceptWorld) -> Result<Clause> {
    let tokens = w.tokens.iter().map(|&i| world.token_from_id(i)).collect::<Result<Vec<Token>>>()?;
    let clause = Clause::from_tokens(world, &tokens)?;
    if clause.render(world)? != w.text {
        return Err(Error::Format(format!("caption text `{}` does not match its tokens", w.text)));
    }
    Ok(clause)
}

pub fn write_jsonl<W: Write>(out: &mut W, samples: &[Sample], world: &ConceptWorld) -> Result<()> {
    for s in samples {
        let wire = WireSample {
            id: s.id,
            family: s.family,
            pos_scene: s.pos_scene.clone(),
            neg_scene: s.neg_scene.clone(),
            pos_captions: s.pos_captions.iter().map(|c| to_wire(c, world)).collect::<Result<_>>()?,
            neg_captions: s.neg_captions.iter().map(|c| to_wire(c, world)).collect::<Result<_>>()?,
        };
        serde_json::to_writer(&mut *out, &wire)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R, world: &ConceptWorld) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let w: WireSample = serde_json::from_str(&line)?;
        let pair = |v: &[WireCaption]| -> Result<[Clause; 2]> {
            match v {
                [a, b] => Ok([from_wire(a, world)?, from_wire(b, world)?]),
                _ => Err(Error::Format(format!("line {}: expected two captions", n + 1))),
            }
        };
        out.push(Sample {
            id: w.id,
            family: w.family,
            pos_captions: pair(&w.pos_captions)?,
            neg_captions: pair(&w.neg_captions)?,
            pos_scene: w.pos_scene,
            neg_scene: w.neg_scene,
        });
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, samples: &[Sample], world: &ConceptWorld) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(&mut f, samples, world)?;
    f.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path, world: &ConceptWorld) -> Result<Vec<Sample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    read_jsonl(std::io::BufReader::new(f), world)
}

/// Seeded shuffle helper shared by training and scaling.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut rng_for(seed, 0));
    v
}
