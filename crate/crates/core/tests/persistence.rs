use collabsel::actors::{ActorMemory, SubcategoryRewardReport};
use collabsel::corpus::{generate_synthetic_corpus, Corpus, GeneratorConfig};
use proptest::prelude::*;

fn tiny(n_points: usize) -> GeneratorConfig {
    GeneratorConfig {
        n_points,
        reference_size: 10,
        ..GeneratorConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corpus_round_trip_is_lossless(seed in any::<u64>(), n in 1usize..400) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = generate_synthetic_corpus(&tiny(n), seed).unwrap();
        corpus.save(&path).unwrap();
        let back = Corpus::load(&path).unwrap();
        prop_assert_eq!(back.points(), corpus.points());
        prop_assert_eq!(back.registry(), corpus.registry());
        prop_assert_eq!(back.metadata(), corpus.metadata());
        prop_assert_eq!(back.d_f(), corpus.d_f());
        for (a, b) in back.points().iter().zip(corpus.points()) {
            for (x, y) in a.features.iter().zip(&b.features) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn actor_memory_json_is_lossless(
        weights in prop::collection::vec(-1e6f64..1e6, 5),
        eta in 0.0f64..=1.0,
        rewards in prop::collection::vec(-1e3f64..1e3, 0..6),
    ) {
        let labels: Vec<String> = (1..=5).map(|j| j.to_string()).collect();
        let mut actor = ActorMemory::new("quality", labels, weights, eta).unwrap();
        for (t, r) in rewards.iter().enumerate() {
            actor.update(&SubcategoryRewardReport::constant(&actor, *r, t as u64)).unwrap();
        }
        let text = serde_json::to_string(&actor).unwrap();
        let back: ActorMemory = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &actor);
        for (a, b) in back.weights.iter().zip(&actor.weights) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn corpus_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    generate_synthetic_corpus(&tiny(3), 1).unwrap().save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    let keys: Vec<&str> = [
        "id",
        "features",
        "domain",
        "quality_score",
        "quality_interval",
        "topic",
        "token_count",
    ]
    .into_iter()
    .collect();
    let mut at = 0;
    for k in keys {
        let pos = first.find(&format!("\"{k}\"")).unwrap_or_else(|| panic!("missing {k}"));
        assert!(pos >= at, "{k} out of order in {first}");
        at = pos;
    }
    assert_eq!(text.lines().count(), 3);
    assert!(dir.path().join("c.header.json").exists());
}

#[test]
fn actor_memory_json_shape() {
    let actor = ActorMemory::new("domain", vec!["A".into(), "B".into()], vec![0.5, 1.0], 0.3).unwrap();
    let v = serde_json::to_value(&actor).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["actor_id", "subcategories", "weights", "eta", "stage_count"] {
        assert!(keys.contains(&k), "{k} missing from {keys:?}");
    }
}
