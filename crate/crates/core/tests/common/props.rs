//! Seed-driven DST properties. Each check returns a description of the
//! first violation it finds.

use facetalk_core::clu::{Inclusivity, Intent, PredicateType, Value};
use facetalk_core::dst::Range;
use facetalk_core::synth::{nudge_stats, random_intent, random_state};
use facetalk_core::{
    DialogState, FacetId, LexiconOracle, ProductCategory, RelationOracle, Schema, StateTracker,
    TagRef,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

/// Spans mixing free words with lexicon phrases that relate to each other.
pub const SPANS: &[&str] = &[
    "lemon",
    "lemon scented",
    "citrus",
    "lavender",
    "lavender scented",
    "fresh linen",
    "razmatazz",
    "razzmatazz",
    "fuchsia",
    "trail",
    "gym",
    "warm",
];

pub struct Env<'a> {
    pub schema: &'a Schema,
    pub oracle: &'a LexiconOracle<'a>,
    pub tracker: StateTracker<'a>,
}

impl<'a> Env<'a> {
    pub fn new(schema: &'a Schema, oracle: &'a LexiconOracle<'a>) -> Self {
        Self {
            schema,
            oracle,
            tracker: StateTracker::new(schema, oracle),
        }
    }

    fn setup(&self, seed: u64) -> (ChaCha8Rng, &'a ProductCategory, DialogState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let category = self.schema.categories().choose(&mut rng).unwrap();
        let turns = rng.random_range(0..6);
        let mut state = random_state(&self.tracker, category, turns, &mut rng);
        for _ in 0..rng.random_range(0..3) {
            let span = Intent::set_span(
                *SPANS.choose(&mut rng).unwrap(),
                PredicateType::Equals,
                Inclusivity::Undefined,
            );
            if let Ok(u) = self.tracker.apply(&state, &[span], &nudge_stats(category)) {
                state = u.state;
            }
        }
        (rng, category, state)
    }

    fn intents(&self, rng: &mut ChaCha8Rng, category: &ProductCategory) -> Vec<Intent> {
        (0..rng.random_range(1..=4))
            .map(|_| {
                if rng.random_bool(0.2) {
                    let ptype = if rng.random_bool(0.3) {
                        PredicateType::NotEquals
                    } else {
                        PredicateType::Equals
                    };
                    Intent::set_span(*SPANS.choose(rng).unwrap(), ptype, Inclusivity::Undefined)
                } else {
                    random_intent(category, rng)
                }
            })
            .collect()
    }

    /// Applying the same intents to the same state twice gives identical
    /// serializations and leaves the input untouched.
    pub fn purity(&self, seed: u64) -> Check {
        let (mut rng, category, state) = self.setup(seed);
        let before = state.to_canonical_json();
        let intents = self.intents(&mut rng, category);
        let stats = nudge_stats(category);
        let a = self.tracker.apply(&state, &intents, &stats);
        let b = self.tracker.apply(&state, &intents, &stats);
        if state.to_canonical_json() != before {
            return Err("input state mutated".into());
        }
        match (a, b) {
            (Ok(a), Ok(b))
                if a.state.to_canonical_json() == b.state.to_canonical_json()
                    && a.events == b.events =>
            {
                Ok(())
            }
            (Err(a), Err(b)) if a == b => Ok(()),
            (a, b) => Err(format!("replay differs: {a:?} vs {b:?}")),
        }
    }

    /// After an EXCLUSIVE set of tag t on facet f, f's positive tags are {t}.
    pub fn exclusive(&self, seed: u64) -> Check {
        let (mut rng, category, state) = self.setup(seed);
        let facets: Vec<_> = category
            .facets
            .iter()
            .filter(|f| !f.tags.is_empty())
            .collect();
        let facet = facets.choose(&mut rng).unwrap();
        let tag = facet.tags.choose(&mut rng).unwrap();
        let tag_ref = TagRef::new(facet.id.0.clone(), tag.id.0.clone());
        let intent = Intent::set_tag(
            tag_ref.clone(),
            PredicateType::Equals,
            Inclusivity::Exclusive,
        );
        let next = self
            .tracker
            .apply(&state, &[intent], &nudge_stats(category))
            .map_err(|e| format!("exclusive rejected: {e}"))?
            .state;
        let fs = next.facet(&facet.id).ok_or("facet missing")?;
        let pos: Vec<&TagRef> = fs.positive_tags().collect();
        if pos != [&tag_ref] {
            return Err(format!("positive tags {pos:?}"));
        }
        if fs.negative_tags().any(|t| t == &tag_ref) {
            return Err("tag still negated".into());
        }
        Ok(())
    }

    /// CLEAR_ALL_FACETS alone empties facets, spans and sort.
    pub fn clear_all(&self, seed: u64) -> Check {
        let (mut rng, category, state) = self.setup(seed);
        let next = self
            .tracker
            .apply(&state, &[Intent::ClearAllFacets], &[])
            .map_err(|e| e.to_string())?
            .state;
        if !next.facets.is_empty() || !next.ungrounded.is_empty() || next.sort.is_some() {
            return Err(format!("not empty: {}", next.to_canonical_json()));
        }
        if next.category != state.category {
            return Err("category changed".into());
        }
        // With other intents in the same turn the clear goes first.
        let mut intents = self.intents(&mut rng, category);
        let fresh = DialogState {
            turn: state.turn,
            ..DialogState::new(state.category.clone())
        };
        let expected = self.tracker.apply(&fresh, &intents, &nudge_stats(category));
        intents.insert(rng.random_range(0..=intents.len()), Intent::ClearAllFacets);
        let got = self.tracker.apply(&state, &intents, &nudge_stats(category));
        match (got, expected) {
            (Ok(g), Ok(e))
                if g.state.facets == e.state.facets && g.state.ungrounded == e.state.ungrounded =>
            {
                Ok(())
            }
            (Ok(g), Ok(e)) => Err(format!(
                "{} vs {}",
                g.state.to_canonical_json(),
                e.state.to_canonical_json()
            )),
            _ => Ok(()),
        }
    }

    /// No two ungrounded spans in a state denote the same tag.
    pub fn same_tag_dedup(&self, seed: u64) -> Check {
        let (mut rng, category, state) = self.setup(seed);
        let intents = self.intents(&mut rng, category);
        let Ok(next) = self.tracker.apply(&state, &intents, &nudge_stats(category)) else {
            return Ok(());
        };
        for s in [&state, &next.state] {
            let spans: Vec<&str> = s
                .ungrounded
                .iter()
                .filter_map(|p| p.value.as_span())
                .collect();
            for (i, a) in spans.iter().enumerate() {
                for b in &spans[i + 1..] {
                    if self.oracle.same_tag(&category.id, a, b) {
                        return Err(format!("'{a}' and '{b}' both held"));
                    }
                }
            }
        }
        Ok(())
    }

    /// CLEAR_VALUE of a tag touches nothing but that tag.
    pub fn clear_value_locality(&self, seed: u64) -> Check {
        let (mut rng, category, state) = self.setup(seed);
        let held: Vec<TagRef> = state
            .facets
            .values()
            .flat_map(|fs| fs.positive_tags().chain(fs.negative_tags()).cloned())
            .collect();
        let target = match held.choose(&mut rng) {
            Some(t) if rng.random_bool(0.8) => t.clone(),
            _ => {
                let facets: Vec<_> = category
                    .facets
                    .iter()
                    .filter(|f| !f.tags.is_empty())
                    .collect();
                let f = facets.choose(&mut rng).unwrap();
                TagRef::new(
                    f.id.0.clone(),
                    f.tags.choose(&mut rng).unwrap().id.0.clone(),
                )
            }
        };
        let next = self
            .tracker
            .apply(&state, &[Intent::clear_tag(target.clone())], &[])
            .map_err(|e| e.to_string())?
            .state;
        if next.ungrounded != state.ungrounded
            || next.sort != state.sort
            || next.category != state.category
        {
            return Err("outside facets changed".into());
        }
        let ids: std::collections::BTreeSet<&FacetId> =
            state.facets.keys().chain(next.facets.keys()).collect();
        for id in ids {
            let (old, new) = (state.facets.get(id), next.facets.get(id));
            if id != &target.facet {
                if old != new {
                    return Err(format!("facet {id} changed"));
                }
                continue;
            }
            let strip = |fs: Option<&facetalk_core::dst::FacetState>| {
                let mut fs = fs.cloned().unwrap_or_default();
                fs.positive.retain(|p| p.value.as_tag() != Some(&target));
                fs.negative.retain(|p| p.value.as_tag() != Some(&target));
                fs
            };
            let (o, n) = (strip(old), strip(new));
            if o.positive != n.positive || o.negative != n.negative || o.range != n.range {
                return Err(format!("facet {id} changed beyond the cleared tag"));
            }
            if new.is_some_and(|fs| {
                fs.positive_tags()
                    .chain(fs.negative_tags())
                    .any(|t| t == &target)
            }) {
                return Err("tag still held".into());
            }
        }
        Ok(())
    }

    /// Every (category, facet) pair that accepts numeric values.
    pub fn numeric_facets(&self) -> Vec<(&'a ProductCategory, FacetId)> {
        self.schema
            .categories()
            .iter()
            .flat_map(|c| {
                c.facets
                    .iter()
                    .filter(|f| f.has_type(facetalk_core::FacetType::Numeric))
                    .map(move |f| (c, f.id.clone()))
            })
            .collect()
    }

    /// Range merging on a random numeric facet.
    pub fn range_merge(&self, seed: u64, samples: usize) -> Check {
        let facets = self.numeric_facets();
        let (category, facet) = &facets[(seed % facets.len() as u64) as usize];
        self.range_merge_on(category, facet, seed, samples)
    }

    /// A sequence of numeric range intents on one facet, one per turn,
    /// against a replay of the constraints it keeps.
    pub fn range_merge_on(
        &self,
        category: &ProductCategory,
        facet: &FacetId,
        seed: u64,
        samples: usize,
    ) -> Check {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = DialogState::new(Some(category.id.clone()));
        let mut kept: Vec<(PredicateType, f64)> = Vec::new();
        let len = rng.random_range(1..=8);
        let mut bounds = Vec::new();
        for _ in 0..len {
            let ptype = *[
                PredicateType::LessThan,
                PredicateType::LessEq,
                PredicateType::GreaterThan,
                PredicateType::GreaterEq,
            ]
            .choose(&mut rng)
            .unwrap();
            let value = f64::from(rng.random_range(0..40u32)) * 2.5;
            bounds.push(value);
            state = self
                .tracker
                .apply(
                    &state,
                    &[Intent::set_number(facet.clone(), value, ptype)],
                    &[],
                )
                .map_err(|e| e.to_string())?
                .state;
            kept.push((ptype, value));
            if !satisfiable(&kept) {
                kept = vec![(ptype, value)];
            }
        }
        let range: Range = state
            .facet(facet)
            .and_then(|fs| fs.range)
            .ok_or("no range held")?;
        let mut probes: Vec<f64> = bounds;
        while probes.len() < samples {
            probes.push(rng.random_range(-10.0..110.0));
        }
        for v in probes {
            if range.contains(v) != kept.iter().all(|&(p, b)| holds(p, b, v)) {
                return Err(format!("{v} in {range:?} disagrees with {kept:?}"));
            }
        }
        let values: Vec<&Value> = state
            .facet(facet)
            .unwrap()
            .positive
            .iter()
            .map(|p| &p.value)
            .collect();
        if !values.is_empty() {
            return Err(format!("range intents left values {values:?}"));
        }
        Ok(())
    }
}

fn holds(p: PredicateType, bound: f64, v: f64) -> bool {
    match p {
        PredicateType::LessThan => v < bound,
        PredicateType::LessEq => v <= bound,
        PredicateType::GreaterThan => v > bound,
        PredicateType::GreaterEq => v >= bound,
        _ => unreachable!(),
    }
}

/// Some point satisfies every constraint. Candidates are the bounds,
/// midpoints between them and points beyond the extremes.
fn satisfiable(cs: &[(PredicateType, f64)]) -> bool {
    let mut pts: Vec<f64> = cs.iter().map(|c| c.1).collect();
    pts.sort_by(f64::total_cmp);
    let mut cands = pts.clone();
    cands.extend(pts.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cands.push(pts[0] - 1.0);
    cands.push(pts[pts.len() - 1] + 1.0);
    cands
        .iter()
        .any(|&v| cs.iter().all(|&(p, b)| holds(p, b, v)))
}
