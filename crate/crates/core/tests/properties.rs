use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;

use conceptcode::annotator::annotate;
use conceptcode::corpus::{preprocess, split_by_patient, Document, Vocabulary};
use conceptcode::eval::{self, Average};
use conceptcode::multitask::joint_loss;
use conceptcode::ontology::{Dictionary, Ontology};

fn matrix(docs: usize, labels: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    (
        prop::collection::vec(prop::collection::vec(0u8..8, labels), docs),
        prop::collection::vec(prop::collection::vec(any::<bool>(), labels), docs),
    )
        .prop_map(|(s, g)| {
            let s = s.into_iter().map(|r| r.into_iter().map(|v| v as f64 / 7.0).collect()).collect();
            (s, g)
        })
}

fn tree(parents: &[usize]) -> Ontology {
    let mut edges = vec![("n0".to_string(), None)];
    for (i, &p) in parents.iter().enumerate() {
        edges.push((format!("n{}", i + 1), Some(format!("n{}", p % (i + 1)))));
    }
    Ontology::from_edges(edges).unwrap()
}

proptest! {
    #[test]
    fn preprocessing_is_idempotent(text in "[a-zA-Z0-9/ .,\\-\t\n]{0,80}") {
        let once = preprocess(&text);
        prop_assert_eq!(preprocess(&once.join(" ")), once);
    }

    #[test]
    fn vocabulary_lookup_never_fails(items in prop::collection::vec("[a-c]{1,3}", 0..20), probe in "[a-d]{0,4}") {
        let v = Vocabulary::from_items(items.iter().map(String::as_str), 1);
        let idx = v.lookup(&probe);
        prop_assert!(idx < v.len());
        prop_assert!(idx != Vocabulary::PAD);
    }

    #[test]
    fn splits_partition_by_patient(patients in prop::collection::vec(0usize..15, 3..60), seed in any::<u64>()) {
        let docs: Vec<Document> = patients
            .iter()
            .enumerate()
            .map(|(i, p)| Document::new(format!("d{i}"), format!("p{p}"), vec!["x".into()]))
            .collect();
        let distinct: HashSet<usize> = patients.iter().copied().collect();
        let split = split_by_patient(&docs, &[0.8, 0.1, 0.1], seed);
        if distinct.len() < 3 {
            prop_assert!(split.is_err());
            return Ok(());
        }
        let split = split.unwrap();
        let mut seen = BTreeSet::new();
        let mut owner = std::collections::HashMap::new();
        for (part, ids) in split.parts().iter().enumerate() {
            for id in ids.iter() {
                prop_assert!(seen.insert(id.clone()), "{} assigned twice", id);
                let d = docs.iter().find(|d| &d.doc_id == id).unwrap();
                let prev = owner.insert(d.patient_id.clone(), part);
                prop_assert!(prev.is_none() || prev == Some(part));
            }
        }
        prop_assert_eq!(seen.len(), docs.len());
        prop_assert_eq!(split_by_patient(&docs, &[0.8, 0.1, 0.1], seed).unwrap(), split);
    }

    #[test]
    fn ancestors_are_prefix_consistent(parents in prop::collection::vec(any::<usize>(), 0..30)) {
        let ont = tree(&parents);
        for i in 0..=parents.len() {
            let code = format!("n{i}");
            let chain = ont.ancestors(&code).unwrap();
            // independent walk over the parent list
            let mut depth = 0;
            let mut node = i;
            while node != 0 {
                node = parents[node - 1] % node;
                depth += 1;
            }
            prop_assert_eq!(chain.len(), depth + 1);
            prop_assert_eq!(chain[0], code.as_str());
            if let Some(p) = ont.parent(&code) {
                prop_assert_eq!(ont.ancestors(p).unwrap(), chain[1..].to_vec());
            }
        }
    }

    #[test]
    fn annotations_do_not_overlap(
        tokens in prop::collection::vec(0u8..4, 0..40),
        phrases in prop::collection::vec(prop::collection::vec(0u8..4, 1..4), 1..8),
    ) {
        let word = |t: &u8| format!("w{t}");
        let tokens: Vec<String> = tokens.iter().map(word).collect();
        let mut dict = Dictionary::new();
        for (i, p) in phrases.iter().enumerate() {
            dict.insert(p.iter().map(word).collect(), format!("C{}", i % 3));
        }
        let anns = annotate(&tokens, &dict);
        let spans: Vec<(usize, usize)> = anns.iter().map(|a| (a.start, a.end)).collect::<BTreeSet<_>>().into_iter().collect();
        for w in spans.windows(2) {
            prop_assert!(w[0].1 <= w[1].0, "{:?} overlaps {:?}", w[0], w[1]);
        }
        for w in anns.windows(2) {
            prop_assert!(w[0].start <= w[1].start);
        }
        for a in &anns {
            prop_assert!(dict.get(&tokens[a.start..a.end]).unwrap().contains(&a.code));
        }
    }

    #[test]
    fn metrics_ignore_document_order((scores, gold) in matrix(6, 5), rot in 0usize..6) {
        let mut s2 = scores.clone();
        let mut g2 = gold.clone();
        s2.rotate_left(rot);
        g2.rotate_left(rot);
        for k in [1, 3, 5] {
            prop_assert!((eval::p_at_k(&scores, &gold, k).unwrap() - eval::p_at_k(&s2, &g2, k).unwrap()).abs() < 1e-12);
            prop_assert!((eval::r_at_k(&scores, &gold, k).unwrap() - eval::r_at_k(&s2, &g2, k).unwrap()).abs() < 1e-12);
        }
        for mode in [Average::Macro, Average::Micro] {
            let a = eval::auc(&scores, &gold, mode).ok().map(|m| m.value);
            let b = eval::auc(&s2, &g2, mode).ok().map(|m| m.value);
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let a = eval::ap(&scores, &gold, mode).ok().map(|m| m.value);
            let b = eval::ap(&s2, &g2, mode).ok().map(|m| m.value);
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let fa = eval::f1_scores(&scores, &gold, mode, 0.5).unwrap();
            let fb = eval::f1_scores(&s2, &g2, mode, 0.5).unwrap();
            prop_assert!((fa - fb).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_ignores_label_order((scores, gold) in matrix(5, 6), rot in 0usize..6) {
        let rotate = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { m.iter().map(|r| { let mut r = r.clone(); r.rotate_left(rot); r }).collect() };
        let s2 = rotate(&scores);
        let g2: Vec<Vec<bool>> = gold.iter().map(|r| { let mut r = r.clone(); r.rotate_left(rot); r }).collect();
        for mode in [Average::Macro, Average::Micro] {
            let fa = eval::f1_scores(&scores, &gold, mode, 0.5).unwrap();
            let fb = eval::f1_scores(&s2, &g2, mode, 0.5).unwrap();
            prop_assert!((fa - fb).abs() < 1e-12);
        }
    }

    #[test]
    fn precision_at_k_survives_monotone_transforms((scores, gold) in matrix(5, 8), k in 1usize..=8) {
        let transformed: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|&v| (3.0 * v).exp() - 2.0).collect()).collect();
        prop_assert_eq!(eval::p_at_k(&scores, &gold, k).unwrap(), eval::p_at_k(&transformed, &gold, k).unwrap());
        prop_assert_eq!(eval::r_at_k(&scores, &gold, k).unwrap(), eval::r_at_k(&transformed, &gold, k).unwrap());
    }

    #[test]
    fn joint_loss_is_monotone_in_lambda(
        probs in prop::collection::vec(0.01f64..0.99, 4),
        gold in prop::collection::vec(any::<bool>(), 4),
        raw in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 3), 1..5),
        targets in prop::collection::vec(0usize..3, 5),
        l1 in 0.0f64..100.0,
        dl in 0.0f64..100.0,
    ) {
        let spans: Vec<(Vec<f64>, usize)> = raw
            .iter()
            .zip(&targets)
            .map(|(r, &t)| {
                let z: f64 = r.iter().sum();
                (r.iter().map(|v| v / z).collect(), t)
            })
            .collect();
        let p = vec![probs];
        let g = vec![gold];
        let lo = joint_loss(&p, &g, &spans, l1);
        let hi = joint_loss(&p, &g, &spans, l1 + dl);
        prop_assert!(hi >= lo - 1e-12);
        prop_assert_eq!(joint_loss(&p, &g, &spans, 0.0), joint_loss(&p, &g, &[], 5.0));
    }
}
