use collabsel::actors::{ActorMemory, SubcategoryReward, SubcategoryRewardReport};
use indexmap::IndexMap;
use proptest::prelude::*;

fn report(actor: &ActorMemory, rewards: &[f64], stage: u64) -> SubcategoryRewardReport {
    SubcategoryRewardReport {
        actor_id: actor.actor_id.clone(),
        per_subcategory: actor
            .subcategories
            .iter()
            .zip(rewards)
            .map(|(s, &r)| {
                (
                    s.clone(),
                    SubcategoryReward {
                        mean_reward: Some(r),
                        sample_count: 10,
                    },
                )
            })
            .collect::<IndexMap<_, _>>(),
        stage_index: stage,
    }
}

proptest! {
    // The subcategory whose reward is uniformly highest at every stage ends
    // with the highest weight once the initial gap has decayed.
    #[test]
    fn argmax_is_consistent(
        eta in 0.05f64..=1.0,
        winner in 0usize..5,
        margin in 0.01f64..1.0,
        base in prop::collection::vec(-1.0f64..1.0, 40 * 5),
        w0 in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let labels: Vec<String> = (1..=5).map(|j| j.to_string()).collect();
        let mut actor = ActorMemory::new("quality", labels, w0, eta).unwrap();
        let mut steps = 0;
        for stage in 0..400u64 {
            let row = &base[(stage as usize % 40) * 5..][..5];
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut rewards = row.to_vec();
            rewards[winner] = top + margin;
            actor.update(&report(&actor, &rewards, stage)).unwrap();
            steps += 1;
            // the initial gap is at most 2 and decays as (1 - eta)^t
            if (1.0 - eta).powi(steps) * (2.0 + margin) < margin {
                break;
            }
        }
        let best = actor
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        prop_assert_eq!(best, winner, "weights {:?}", actor.weights);
    }
}

#[test]
fn subcategory_means_match_an_exact_oracle() {
    use collabsel::actors::{compute_subcategory_reward, SampleSet};
    use std::collections::HashMap;

    // rewards k / 8 are exact binary fractions, so the oracle mean is exact
    let ids: Vec<usize> = (0..1000).collect();
    let rewards: HashMap<usize, f64> = ids.iter().map(|&i| (i, (i % 17) as f64 / 8.0 - 1.0)).collect();
    let samples = SampleSet {
        actor_id: "quality".into(),
        per_subcategory: [
            ("1".to_string(), ids.clone()),
            ("2".to_string(), ids[..3].to_vec()),
            ("3".to_string(), Vec::new()),
        ]
        .into_iter()
        .collect(),
        empty: vec!["3".into()],
    };
    let report = compute_subcategory_reward(&samples, &rewards, 4).unwrap();
    let oracle = |xs: &[usize]| xs.iter().map(|i| rewards[i]).sum::<f64>() / xs.len() as f64;
    let all = report.per_subcategory["1"];
    assert_eq!(all.sample_count, 1000);
    assert_eq!(all.mean_reward, Some(oracle(&ids)));
    assert_eq!(
        report.per_subcategory["2"].mean_reward,
        Some((-1.0 - 0.875 - 0.75) / 3.0)
    );
    assert_eq!(report.per_subcategory["3"].mean_reward, None);
    assert_eq!(report.stage_index, 4);

    let mut missing = rewards.clone();
    missing.remove(&999);
    assert!(compute_subcategory_reward(&samples, &missing, 4).is_err());
}
