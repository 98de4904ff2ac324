use super::*;
use crate::trainer::{initial_model, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn ev(s: &str, p: &str, o: &str) -> Event {
    Event::new(s, p, o).unwrap()
}

fn lookup(map: HashMap<Event, Vec<f64>>) -> FnEmbedder<impl Fn(&Event) -> Vec<f64>> {
    FnEmbedder(move |e: &Event| map[e].clone())
}

/// Deterministic pseudo-random vector per event, from its text.
fn hashed(dim: usize, salt: u64) -> FnEmbedder<impl Fn(&Event) -> Vec<f64>> {
    FnEmbedder(move |e: &Event| {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        e.hash(&mut h);
        salt.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    })
}

fn tiny_model() -> Model {
    let corpus = vec![ev("he", "flee", "city"), ev("i", "leave", "town")];
    let cfg = TrainConfig { hidden_dim: 8, num_heads: 2, ffn_dim: 8, num_layers: 1, prototype_count: 2, ..Default::default() };
    initial_model(&corpus, &cfg).unwrap()
}

#[test]
fn embed_contract() {
    let m = tiny_model();
    let e = ev("he", "flee", "city");
    let a = embed(&e, &m).unwrap();
    let b = embed(&e, &m).unwrap();
    assert!((a.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    assert_eq!(a, b);
    assert!((dot(&a, &b) - 1.0).abs() < 1e-12);
}

fn four_events() -> [Event; 4] {
    [ev("a", "b", "c"), ev("d", "e", "f"), ev("g", "h", "i"), ev("j", "k", "l")]
}

#[test]
fn hard_similarity_oracles() {
    let [a, b, c, d] = four_events();
    let pair = HardPair { similar: (a.clone(), b.clone()), dissimilar: (c.clone(), d.clone()) };
    // cos(a,b) = 0.9, cos(c,d) = 0.3
    let s = |x: f64| vec![x, (1.0 - x * x).sqrt()];
    let oracle = lookup(HashMap::from([
        (a.clone(), vec![1.0, 0.0]),
        (b.clone(), s(0.9)),
        (c.clone(), vec![1.0, 0.0]),
        (d.clone(), s(0.3)),
    ]));
    assert_eq!(hard_similarity_accuracy(&[pair.clone(), pair.clone()], &oracle).unwrap(), 100.0);
    let constant = FnEmbedder(|_: &Event| vec![0.3, -0.2, 0.5]);
    assert_eq!(hard_similarity_accuracy(&[pair], &constant).unwrap(), 0.0);
    assert!(matches!(hard_similarity_accuracy(&[], &constant), Err(Error::Input(_))));
}

#[test]
fn spearman_closed_forms() {
    let g = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&g, &g).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&[4.0, 3.0, 2.0, 1.0], &g).unwrap() + 1.0).abs() < 1e-12);
    assert!((spearman(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap() + 0.5).abs() < 1e-12);
    assert!(spearman(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]).is_err());
    assert!(spearman(&[0.5], &[1.0]).is_err());
    assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
}

/// Rank by counting, then textbook Pearson.
fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let eq = v.iter().filter(|b| *b == a).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_matches_oracle_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.gen_range(3..30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(1..8) as f64).collect();
        let want = spearman_oracle(&x, &y);
        if !want.is_finite() {
            continue;
        }
        assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn transitive_uses_cosine_ranks() {
    let [a, b, c, d] = four_events();
    let emb = lookup(HashMap::from([
        (a.clone(), vec![1.0, 0.0]),
        (b.clone(), vec![1.0, 0.1]),
        (c.clone(), vec![0.0, 1.0]),
        (d.clone(), vec![-1.0, 0.2]),
    ]));
    let pairs = vec![
        TransitivePair { event_a: a.clone(), event_b: b.clone(), gold_score: 7.0 },
        TransitivePair { event_a: a.clone(), event_b: c.clone(), gold_score: 4.0 },
        TransitivePair { event_a: a.clone(), event_b: d.clone(), gold_score: 1.0 },
    ];
    assert!((transitive_spearman(&pairs, &emb).unwrap() - 1.0).abs() < 1e-12);
    let flat = FnEmbedder(|_: &Event| vec![1.0, 1.0]);
    assert!(transitive_spearman(&pairs, &flat).is_err());
}

#[test]
fn mcnc_picks_mean_context() {
    let [a, b, c, d] = four_events();
    let (e, z, gold) = (ev("m", "n", "o"), ev("z", "z", "z"), ev("gold", "x", "y"));
    let emb = lookup(HashMap::from([
        (a.clone(), vec![1.0, 0.0, 0.0]),
        (b.clone(), vec![0.0, 1.0, 0.0]),
        (gold.clone(), vec![1.0, 1.0, 0.0]),
        (c.clone(), vec![0.0, 0.0, 1.0]),
        (d.clone(), vec![0.0, 0.0, -1.0]),
        (e.clone(), vec![1.0, -1.0, 0.0]),
        (z.clone(), vec![0.0, 0.3, 1.0]),
    ]));
    let inst = McncInstance {
        context: vec![a, b],
        candidates: vec![c, d, gold, e, z],
        gold_index: 2,
    };
    assert_eq!(mcnc_accuracy(std::slice::from_ref(&inst), &emb).unwrap(), 100.0);

    let empty = McncInstance { context: vec![], ..inst.clone() };
    assert!(matches!(mcnc_accuracy(&[empty], &emb), Err(Error::Input(_))));

    // all candidates tie: index 0 wins
    let flat = FnEmbedder(|_: &Event| vec![1.0, 0.0]);
    let first = McncInstance { gold_index: 0, ..inst.clone() };
    assert_eq!(mcnc_accuracy(&[first, inst], &flat).unwrap(), 50.0);
}

#[test]
fn random_embedder_mcnc_is_chance() {
    let data = crate::data::generate_synthetic(&crate::data::SyntheticSpec {
        events_per_cluster: 1,
        mcnc_instances: 4000,
        ..Default::default()
    })
    .unwrap();
    let acc = mcnc_accuracy(&data.mcnc, &hashed(32, 1)).unwrap();
    assert!((acc - 20.0).abs() < 3.0, "{acc}");
}

#[test]
fn alignment_uniformity_closed_forms() {
    let [a, b, c, d] = four_events();
    let emb = lookup(HashMap::from([
        (a.clone(), vec![1.0, 0.0]),
        (b.clone(), vec![-1.0, 0.0]),
        (c.clone(), vec![1.0, 0.0]),
        (d.clone(), vec![0.0, 2.0]),
    ]));
    let (align, uniform) = alignment_uniformity(&[(a.clone(), c.clone())], &[a.clone(), b.clone()], &emb).unwrap();
    assert_eq!(align, 0.0);
    assert!((uniform + 8.0).abs() < 1e-12);

    let same = FnEmbedder(|_: &Event| vec![0.6, 0.8]);
    let (_, u) = alignment_uniformity(&[(a.clone(), b.clone())], &[a.clone(), b.clone(), c.clone()], &same).unwrap();
    assert_eq!(u, 0.0);

    assert!(matches!(
        alignment_uniformity(&[(a.clone(), b.clone())], &[a.clone(), a.clone()], &emb),
        Err(Error::Input(_))
    ));
    assert!(alignment_uniformity(&[], &[a, b], &emb).is_err());
}

#[test]
fn case_dump_rows() {
    let m = tiny_model();
    let e = ev("he", "flee", "city");
    let rows = case_study_dump(
        &[(e.clone(), e.clone(), 1.0), (e.clone(), ev("i", "leave", "town"), 1.0)],
        &m,
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].cosine - 1.0).abs() < 1e-12);
    let tsv = case_table_tsv(&rows);
    assert_eq!(tsv.lines().count(), 3);
    assert!(tsv.lines().nth(2).unwrap().starts_with("he flee city\ti leave town\t"));
}

fn sets(seed: u64) -> EvalSets {
    let data = crate::data::generate_synthetic(&crate::data::SyntheticSpec {
        events_per_cluster: 1,
        hard_original: 20,
        hard_extended: 60,
        transitive_pairs: 40,
        mcnc_instances: 50,
        seed,
        ..Default::default()
    })
    .unwrap();
    EvalSets {
        hard_original: data.hard_original,
        hard_extended: data.hard_extended,
        transitive: data.transitive,
        mcnc: data.mcnc,
    }
}

#[test]
fn report_has_six_keys_and_is_read_only() {
    let m = tiny_model();
    let before = m.encoder.params.clone();
    let r = evaluate(&sets(0), &m).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 6);
    for k in ["original_acc", "extended_acc", "transitive_rho", "mcnc_acc", "align", "uniform"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(m.encoder.params.iter().collect::<Vec<_>>(), before.iter().collect::<Vec<_>>());
    assert!((0.0..=100.0).contains(&r.original_acc));
    assert!((-1.0..=1.0).contains(&r.transitive_rho));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_ignore_positive_rescaling(seed in 0u64..1000, salt in 0u64..1000) {
        let s = sets(seed);
        let base = hashed(16, salt);
        let scaled = FnEmbedder(|e: &Event| {
            let v = (base.0)(e);
            let k = 1e-3 + (v[0].abs() * 1e3) % 50.0;
            v.into_iter().map(|x| x * k).collect()
        });
        let r1 = evaluate(&s, &base).unwrap();
        let r2 = evaluate(&s, &scaled).unwrap();
        prop_assert_eq!(r1.original_acc, r2.original_acc);
        prop_assert_eq!(r1.extended_acc, r2.extended_acc);
        prop_assert_eq!(r1.mcnc_acc, r2.mcnc_acc);
        prop_assert!((r1.transitive_rho - r2.transitive_rho).abs() <= 1e-6);
        prop_assert!((r1.align - r2.align).abs() <= 1e-6);
        prop_assert!((r1.uniform - r2.uniform).abs() <= 1e-6);
    }

    #[test]
    fn metrics_ignore_list_order(seed in 0u64..1000) {
        let s = sets(seed);
        let emb = hashed(16, 7);
        let mut rev = s.clone();
        rev.hard_original.reverse();
        rev.hard_extended.reverse();
        rev.transitive.reverse();
        rev.mcnc.reverse();
        let (a, b) = (evaluate(&s, &emb).unwrap(), evaluate(&rev, &emb).unwrap());
        prop_assert_eq!(a.original_acc, b.original_acc);
        prop_assert_eq!(a.mcnc_acc, b.mcnc_acc);
        prop_assert!((a.transitive_rho - b.transitive_rho).abs() < 1e-12);
        prop_assert!((a.align - b.align).abs() < 1e-12);
        prop_assert!((a.uniform - b.uniform).abs() < 1e-9);
    }
}
