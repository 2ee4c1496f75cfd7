mod common;

use facetalk_core::clu::PredicateType;
use facetalk_core::dst::Range;
use facetalk_core::fulfillment::{compile_request, Index, Polarity, QuerySpan};
use facetalk_core::synth::{random_catalog, random_state};
use facetalk_core::{DialogState, LexiconOracle, StateTracker};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{index, lexicon, oracle, schema};

#[test]
fn matches_linear_scan_on_random_states() {
    let (schema, lexicon) = (schema(), lexicon());
    let rel = LexiconOracle::new(&schema, &lexicon);
    let tracker = StateTracker::new(&schema, &rel);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let products = random_catalog(&schema, 300, &mut rng);
    let index = Index::new(products.clone(), &schema).unwrap();
    let mut nonempty = 0;
    for _ in 0..150 {
        let category = schema.categories().choose(&mut rng).unwrap();
        let turns = rand::Rng::random_range(&mut rng, 0..6);
        let state = random_state(&tracker, category, turns, &mut rng);
        let req = compile_request(&state, &schema).unwrap();
        let got: Vec<&str> = index
            .search_all(&req)
            .iter()
            .map(|p| p.id.as_str())
            .collect();
        let want: Vec<&str> = oracle::search(&schema, &state, &products)
            .iter()
            .map(|p| p.id.as_str())
            .collect();
        assert_eq!(got, want, "{}", state.to_canonical_json());
        nonempty += usize::from(!got.is_empty());
    }
    assert!(nonempty > 30, "too few non-empty result sets: {nonempty}");
}

#[test]
fn category_only_returns_whole_category() {
    let schema = schema();
    let index = index(&schema);
    let req = compile_request(&DialogState::new(Some("detergent".into())), &schema).unwrap();
    let ids: Vec<&str> = index
        .search_all(&req)
        .iter()
        .map(|p| p.id.as_str())
        .collect();
    assert_eq!(ids, ["det-01", "det-02", "det-03"]);
}

#[test]
fn restricting_a_request_never_grows_results() {
    let (schema, lexicon) = (schema(), lexicon());
    let rel = LexiconOracle::new(&schema, &lexicon);
    let tracker = StateTracker::new(&schema, &rel);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let products = random_catalog(&schema, 200, &mut rng);
    let index = Index::new(products, &schema).unwrap();
    for _ in 0..200 {
        let category = schema.categories().choose(&mut rng).unwrap();
        let state = random_state(&tracker, category, 3, &mut rng);
        let req = compile_request(&state, &schema).unwrap();
        let before: Vec<String> = index
            .search_all(&req)
            .iter()
            .map(|p| p.id.clone())
            .collect();
        let facet = category
            .facets
            .iter()
            .filter(|f| !f.tags.is_empty())
            .collect::<Vec<_>>();
        let facet = facet.choose(&mut rng).unwrap();
        let tag = facet.tags.choose(&mut rng).unwrap();

        let mut forbid = req.clone();
        forbid
            .restricts
            .entry(facet.id.clone())
            .or_default()
            .forbidden
            .insert(tag.id.clone());
        let mut narrow = req.clone();
        let r = narrow.restricts.entry(facet.id.clone()).or_default();
        r.range = Some(match r.range {
            Some(old) => old.intersect(&Range::half_line(PredicateType::LessEq, 3.0).unwrap()),
            None => Range::half_line(PredicateType::LessEq, 3.0).unwrap(),
        });
        let mut span = req.clone();
        span.query_spans.push(QuerySpan {
            text: "trail".into(),
            polarity: Polarity::Positive,
        });
        for smaller in [forbid, narrow, span] {
            let after = index.search_all(&smaller);
            assert!(after.iter().all(|p| before.contains(&p.id)));
        }
    }
}

#[test]
fn span_polarities_partition_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let schema = schema();
    let products = random_catalog(&schema, 200, &mut rng);
    let index = Index::new(products, &schema).unwrap();
    for word in ["trail", "soft gym", "warm retro kids"] {
        let base = compile_request(&DialogState::new(Some("shoes".into())), &schema).unwrap();
        let with = |polarity| {
            let mut r = base.clone();
            r.query_spans.push(QuerySpan {
                text: word.into(),
                polarity,
            });
            index
                .search_all(&r)
                .into_iter()
                .map(|p| p.id.clone())
                .collect::<Vec<_>>()
        };
        let all: Vec<String> = index
            .search_all(&base)
            .into_iter()
            .map(|p| p.id.clone())
            .collect();
        let (pos, neg) = (with(Polarity::Positive), with(Polarity::Negative));
        assert!(pos.iter().all(|p| !neg.contains(p)));
        let mut union = [pos.clone(), neg].concat();
        union.sort();
        assert_eq!(union, all, "{word}");
        if word == "trail" {
            assert!(!pos.is_empty());
        }
    }
}

#[test]
fn page_is_prefix_of_full_result() {
    let schema = schema();
    let index = index(&schema);
    let mut state = DialogState::new(Some("shoes".into()));
    state.sort = Some(facetalk_core::SortOrder {
        facet: "price".into(),
        direction: facetalk_core::SortDirection::Descending,
    });
    let req = compile_request(&state, &schema).unwrap();
    let all = index.search_all(&req);
    let page = index.search(&req, 3);
    assert_eq!(page, all[..3].to_vec());
    assert_eq!(all.last().unwrap().id, "shoe-11");
}
