//! Scoring, ranking and question selection checked against a plain
//! reimplementation over the association list.

use std::collections::BTreeSet;

use anamnesis_core::kb::{Assertion, KnowledgeBase, Polarity};
use anamnesis_core::simulator::{simulate_dataset, validate_case, recomputed_margin, SimulatorConfig};
use anamnesis_core::synth::random_kb;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn oracle_score(kb: &KnowledgeBase, assertions: &[Assertion], disease: &str) -> f64 {
    let mut total = 0.0;
    for a in assertions {
        for assoc in kb.associations() {
            if assoc.finding_id == a.finding_id && assoc.disease_id == disease {
                total += match a.polarity {
                    Polarity::Present => f64::from(assoc.es),
                    Polarity::Absent => -f64::from(assoc.tf),
                };
            }
        }
    }
    total
}

/// Random distinct assertions that respect exclusion groups.
fn random_assertions(kb: &KnowledgeBase, seed: u64, n: usize) -> Vec<Assertion> {
    let mut rng = anamnesis_core::rng::seeded(seed);
    let mut ids: Vec<&str> = kb.findings().map(|f| f.id.as_str()).collect();
    ids.shuffle(&mut rng);
    let mut used_groups = BTreeSet::new();
    let mut out = Vec::new();
    for id in ids.into_iter().take(n) {
        let mut polarity = if rng.gen_bool(0.5) { Polarity::Present } else { Polarity::Absent };
        if let Some(g) = &kb.finding(id).unwrap().exclusion_group {
            if polarity == Polarity::Present && !used_groups.insert(g.clone()) {
                polarity = Polarity::Absent;
            }
        }
        out.push(Assertion {
            finding_id: id.to_string(),
            polarity,
        });
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn differential_matches_oracle(kb_seed in 0u64..50, a_seed in any::<u64>(), n in 0usize..10) {
        let kb = random_kb(kb_seed, 3, 16).unwrap();
        let assertions = random_assertions(&kb, a_seed, n);
        let dd = kb.differential(&assertions).unwrap();
        let scores: Vec<f64> = dd.entries.iter().map(|e| oracle_score(&kb, &assertions, &e.disease_id)).collect();
        let z: f64 = scores.iter().map(|s| (s / 5.0).exp()).sum();
        for (e, s) in dd.entries.iter().zip(&scores) {
            prop_assert_eq!(e.raw_score, *s);
            prop_assert!((e.probability - (s / 5.0).exp() / z).abs() < 1e-12);
        }
        prop_assert!(dd.entries.windows(2).all(|w| w[0].raw_score >= w[1].raw_score));
        let margin = dd.margin().unwrap();
        prop_assert!(margin >= 0.0);
        prop_assert_eq!(margin, scores[0] - scores[1]);

        // brute force over candidates
        let asserted: BTreeSet<&str> = assertions.iter().map(|a| a.finding_id.as_str()).collect();
        let excluded = kb.excluded_findings(&assertions);
        let mut best: Option<(f64, String)> = None;
        let mut ids: Vec<&str> = kb.findings().map(|f| f.id.as_str()).collect();
        ids.sort();
        for id in ids {
            if asserted.contains(id) || excluded.contains(id) || kb.finding(id).unwrap().is_demographic {
                continue;
            }
            let v: f64 = dd.entries.iter().map(|e| e.probability * f64::from(kb.es(id, &e.disease_id))).sum();
            if best.as_ref().is_none_or(|(bv, _)| v > *bv + 1e-9 * bv.abs().max(1.0)) {
                best = Some((v, id.to_string()));
            }
        }
        prop_assert_eq!(kb.next_finding(&assertions, &dd), best.map(|b| b.1));
    }

    #[test]
    fn accepted_cases_are_sound(kb_seed in 0u64..4, seed in any::<u64>()) {
        let sizes = [(2u64, 2usize, 16usize), (4, 2, 20), (5, 3, 24), (7, 2, 24)];
        let (s, d, f) = sizes[kb_seed as usize];
        let kb = random_kb(s, d, f).unwrap();
        let config = SimulatorConfig { seed, ..SimulatorConfig::default() };
        let data = simulate_dataset(&kb, &config, 5).unwrap();
        for case in &data.cases {
            prop_assert!(validate_case(&kb, case).is_empty());
            prop_assert!(recomputed_margin(&kb, case, 5.0).unwrap() >= 20.0);
            prop_assert!(case.findings.len() <= 20);
        }
    }
}
