use super::synthetic::shared_slots;
use super::*;
use crate::augment::Component;
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn ev(s: &str, p: &str, o: &str) -> Event {
    Event::new(s, p, o).unwrap()
}

#[test]
fn load_events_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "e.jsonl",
        "{\"subject\":\"military\",\"predicate\":\"launch\",\"object\":\"missile\"}\n\n",
    );
    assert_eq!(load_events(&p).unwrap(), vec![ev("military", "launch", "missile")]);

    let empty = write(&dir, "empty.jsonl", "");
    assert!(load_events(&empty).unwrap().is_empty());

    let missing = write(
        &dir,
        "m.jsonl",
        "{\"subject\":\"a\",\"predicate\":\"b\",\"object\":\"c\"}\n{\"subject\":\"he\",\"predicate\":\"flee\"}\n",
    );
    match load_events(&missing).unwrap_err() {
        Error::Schema { line, message, .. } => {
            assert_eq!(line, 2);
            assert!(message.contains("object"), "{message}");
        }
        other => panic!("unexpected {other}"),
    }

    let broken = write(&dir, "b.jsonl", "{\"subject\":\"a\",\n");
    assert!(matches!(load_events(&broken), Err(Error::Parse { line: 1, .. })));

    let blank = write(&dir, "blank.jsonl", "{\"subject\":\" \",\"predicate\":\"b\",\"object\":\"c\"}\n");
    assert!(matches!(load_events(&blank), Err(Error::Schema { .. })));

    assert!(matches!(load_events(&dir.path().join("nope.jsonl")), Err(Error::Input(_))));
}

fn transitive_line(score: f64) -> String {
    format!(
        "{{\"event_a\":{{\"subject\":\"he\",\"predicate\":\"flee\",\"object\":\"city\"}},\"event_b\":{{\"subject\":\"i\",\"predicate\":\"leave\",\"object\":\"town\"}},\"gold_score\":{score:?}}}\n"
    )
}

#[test]
fn transitive_range_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(&dir, "t.jsonl", &transitive_line(7.0));
    assert_eq!(load_transitive(&ok).unwrap()[0].gold_score, 7.0);
    let low = write(&dir, "l.jsonl", &transitive_line(1.0));
    assert_eq!(load_transitive(&low).unwrap().len(), 1);
    let bad = write(&dir, "b.jsonl", &transitive_line(7.5));
    assert!(matches!(load_transitive(&bad), Err(Error::Range { line: 1, .. })));
}

fn mcnc_json(n: usize, gold: usize) -> String {
    let c: Vec<Event> = (0..n).map(|i| ev(&format!("s{i}"), "p", "o")).collect();
    let m = serde_json::json!({
        "context": [ev("he", "walk", "home")],
        "candidates": c,
        "gold_index": gold,
    });
    format!("{m}\n")
}

#[test]
fn mcnc_schema_and_range() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(&dir, "ok.jsonl", &mcnc_json(5, 4));
    assert_eq!(load_mcnc(&ok).unwrap()[0].gold_index, 4);
    let four = write(&dir, "four.jsonl", &mcnc_json(4, 0));
    assert!(matches!(load_mcnc(&four), Err(Error::Schema { .. })));
    let range = write(&dir, "range.jsonl", &mcnc_json(5, 5));
    assert!(matches!(load_mcnc(&range), Err(Error::Range { .. })));
    let dup = serde_json::json!({
        "context": [ev("a", "b", "c")],
        "candidates": vec![ev("x", "y", "z"); 5],
        "gold_index": 0,
    });
    let dup = write(&dir, "dup.jsonl", &format!("{dup}\n"));
    assert!(matches!(load_mcnc(&dup), Err(Error::Schema { .. })));
}

#[test]
fn generator_rejects_single_cluster() {
    let spec = SyntheticSpec { num_synonym_clusters: 1, ..Default::default() };
    assert!(matches!(generate_synthetic(&spec), Err(Error::Input(_))));
    let mut spec = SyntheticSpec::default();
    spec.cluster_vocab[0].subjects.truncate(1);
    assert!(generate_synthetic(&spec).is_err());
}

fn cluster_of(word: &str, role: Component) -> usize {
    default_clusters()
        .iter()
        .position(|c| c.words(role).iter().any(|w| w == word))
        .unwrap()
}

fn clusters(e: &Event) -> [usize; 3] {
    Component::ALL.map(|r| cluster_of(e.component(r), r))
}

#[test]
fn generator_construction_rules() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    assert!(data.corpus.len() >= 2000);
    assert_eq!(data.hard_original.len(), 230);
    assert_eq!(data.hard_extended.len(), 1000);
    assert_eq!(data.hard_original[..], data.hard_extended[..230]);

    // the introductory example pair lives in one cluster
    let a = ev("army", "start", "initiative");
    let b = ev("military", "launch", "program");
    assert_eq!(clusters(&a), clusters(&b));

    for p in &data.hard_extended {
        assert_eq!(shared_slots(&p.similar.0, &p.similar.1), 0);
        assert_eq!(clusters(&p.similar.0), clusters(&p.similar.1));
        assert_eq!(shared_slots(&p.dissimilar.0, &p.dissimilar.1), 2);
        let (ca, cb) = (clusters(&p.dissimilar.0), clusters(&p.dissimilar.1));
        assert_eq!(ca.iter().zip(&cb).filter(|(x, y)| x != y).count(), 1);
    }
    let mut levels = std::collections::BTreeSet::new();
    for t in &data.transitive {
        let d = clusters(&t.event_a)
            .iter()
            .zip(&clusters(&t.event_b))
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(t.gold_score, 7.0 - 2.0 * d as f64);
        levels.insert(d);
    }
    assert_eq!(levels.len(), 4);
    for m in &data.mcnc {
        assert_eq!(m.candidates.len(), 5);
        let ctx = clusters(&m.context[0]);
        let gold = &m.candidates[m.gold_index];
        assert_eq!(clusters(gold), ctx);
        for (i, c) in m.candidates.iter().enumerate() {
            if i != m.gold_index {
                assert!(clusters(c).iter().all(|&k| k != ctx[0]));
            }
            for e in &m.context {
                if i == m.gold_index {
                    assert_eq!(shared_slots(e, c), 0, "gold shares a word with the context");
                }
            }
        }
    }
}

#[test]
fn generation_is_byte_deterministic() {
    let spec = SyntheticSpec { events_per_cluster: 20, mcnc_instances: 30, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    generate_synthetic(&spec).unwrap().write(&a).unwrap();
    generate_synthetic(&spec).unwrap().write(&b).unwrap();
    for f in [
        SyntheticData::CORPUS_FILE,
        SyntheticData::HARD_ORIGINAL_FILE,
        SyntheticData::HARD_EXTENDED_FILE,
        SyntheticData::TRANSITIVE_FILE,
        SyntheticData::MCNC_FILE,
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let other = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(other.corpus, generate_synthetic(&SyntheticSpec { events_per_cluster: 20, mcnc_instances: 30, ..Default::default() }).unwrap().corpus);
}

#[test]
fn written_files_load_back_identically() {
    let spec = SyntheticSpec { events_per_cluster: 10, mcnc_instances: 20, seed: 3, ..Default::default() };
    let data = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let p = |f: &str| dir.path().join(f);
    assert_eq!(load_events(&p(SyntheticData::CORPUS_FILE)).unwrap(), data.corpus);
    assert_eq!(load_hard_pairs(&p(SyntheticData::HARD_EXTENDED_FILE)).unwrap(), data.hard_extended);
    assert_eq!(load_transitive(&p(SyntheticData::TRANSITIVE_FILE)).unwrap(), data.transitive);
    assert_eq!(load_mcnc(&p(SyntheticData::MCNC_FILE)).unwrap(), data.mcnc);
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,6})?"
}

fn event() -> impl Strategy<Value = Event> {
    (word(), word(), word()).prop_map(|(s, p, o)| Event::new(&s, &p, &o).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn roundtrip_identity(
        events in prop::collection::vec(event(), 0..6),
        pairs in prop::collection::vec((event(), event(), event(), event()), 0..4),
        trans in prop::collection::vec((event(), event(), 1.0f64..=7.0), 0..4),
        mc in prop::collection::vec((prop::collection::vec(event(), 1..4), 0usize..5), 0..3),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let p = |f: &str| dir.path().join(f);

        write_jsonl(&p("e"), &events).unwrap();
        prop_assert_eq!(load_events(&p("e")).unwrap(), events);

        let hp: Vec<HardPair> = pairs
            .into_iter()
            .map(|(a, b, c, d)| HardPair { similar: (a, b), dissimilar: (c, d) })
            .collect();
        write_jsonl(&p("h"), &hp).unwrap();
        prop_assert_eq!(load_hard_pairs(&p("h")).unwrap(), hp);

        let tp: Vec<TransitivePair> = trans
            .into_iter()
            .map(|(event_a, event_b, gold_score)| TransitivePair { event_a, event_b, gold_score })
            .collect();
        write_jsonl(&p("t"), &tp).unwrap();
        prop_assert_eq!(load_transitive(&p("t")).unwrap(), tp);

        let mi: Vec<McncInstance> = mc
            .into_iter()
            .enumerate()
            .map(|(k, (context, gold_index))| McncInstance {
                context,
                candidates: (0..5).map(|i| ev(&format!("c{k}x{i}"), "p", "o")).collect(),
                gold_index,
            })
            .collect();
        write_jsonl(&p("m"), &mi).unwrap();
        prop_assert_eq!(load_mcnc(&p("m")).unwrap(), mi);
    }
}
