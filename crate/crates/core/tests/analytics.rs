use std::collections::{BTreeMap, HashMap};

use logenc_core::analytics::*;
use logenc_core::metrics::mrr;
use logenc_core::{seed, Embedding, LogRecord};
use proptest::prelude::*;
use rand::Rng;

fn emb(id: &str, v: &[f64]) -> Embedding {
    Embedding {
        source_id: id.to_string(),
        vector: v.to_vec(),
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{i:03}")).collect()
}

#[test]
fn similarity_diff_extremes_and_hand_values() {
    let mut e = HashMap::new();
    e.insert("a".to_string(), vec![1.0, 0.0]);
    e.insert("b".to_string(), vec![1.0, 0.0]);
    e.insert("c".to_string(), vec![0.0, 2.0]);
    e.insert("z".to_string(), vec![0.0, 0.0]);
    let p = |a: &str, b: &str| (a.to_string(), b.to_string());
    let r = similarity_diff(&e, &[p("a", "b")], &[p("a", "c")]).unwrap();
    assert_eq!((r.pmean, r.nmean, r.diff), (1.0, 0.0, 1.0));
    let same = similarity_diff(&e, &[p("a", "b")], &[p("b", "a")]).unwrap();
    assert_eq!(same.diff, 0.0);

    // Hand-computed cosines: (1,0)·(1,1) = 1/sqrt2; (1,2)·(2,1) = 4/5; (3,4)·(4,-3) = 0.
    let mut h = HashMap::new();
    for (k, v) in [("p", [1.0, 0.0]), ("q", [1.0, 1.0]), ("r", [1.0, 2.0]), ("s", [2.0, 1.0]), ("t", [3.0, 4.0]), ("u", [4.0, -3.0])] {
        h.insert(k.to_string(), v.to_vec());
    }
    let r = similarity_diff(&h, &[p("p", "q"), p("r", "s")], &[p("t", "u")]).unwrap();
    let expected = (1.0 / 2f64.sqrt() + 0.8) / 2.0;
    assert!((r.pmean - expected).abs() < 1e-12);
    assert!(r.nmean.abs() < 1e-12);

    let z = similarity_diff(&e, &[p("a", "z")], &[p("a", "c")]).unwrap();
    assert_eq!((z.excluded, z.positive_count), (1, 0));
    assert!(matches!(
        similarity_diff(&e, &[p("a", "nope")], &[]),
        Err(AnalyticsError::MissingEmbedding(_))
    ));
}

proptest! {
    #[test]
    fn similarity_diff_is_scale_invariant(
        vs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 4..10),
        scale in 0.01f64..100.0,
    ) {
        let e: HashMap<String, Vec<f64>> = vs.iter().enumerate().map(|(i, v)| (i.to_string(), v.clone())).collect();
        let s: HashMap<String, Vec<f64>> = e.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x * scale).collect())).collect();
        let pos = vec![("0".to_string(), "1".to_string())];
        let neg = vec![("2".to_string(), "3".to_string())];
        let a = similarity_diff(&e, &pos, &neg).unwrap();
        let b = similarity_diff(&s, &pos, &neg).unwrap();
        prop_assert!((a.diff - b.diff).abs() < 1e-9);
    }
}

fn brute_cosine_order(query: &[f64], docs: &[Embedding]) -> Vec<String> {
    // Selection sort by descending cosine, ties by ascending id.
    let mut left: Vec<(String, f64)> = docs
        .iter()
        .map(|d| {
            let n = (d.vector.iter().map(|x| x * x).sum::<f64>() * query.iter().map(|x| x * x).sum::<f64>()).sqrt();
            let c = if n > 0.0 { d.vector.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / n } else { 0.0 };
            (d.source_id.clone(), c)
        })
        .collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            if left[i].1 > left[best].1 || (left[i].1 == left[best].1 && left[i].0 < left[best].0) {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

#[test]
fn search_ranks_match_exhaustive_cosine() {
    let refs = vec![
        emb("r0", &[1.0, 0.0]),
        emb("r1", &[0.0, 1.0]),
        emb("r2", &[1.0, 1.0]),
        emb("r3", &[-1.0, 0.5]),
        emb("r4", &[2.0, 0.1]),
    ];
    let templates: Vec<String> = ["A", "B", "A", "C", "A"].iter().map(|s| s.to_string()).collect();
    let queries = vec![emb("q0", &[0.0, 1.0]), emb("q1", &[1.0, 0.2]), emb("q2", &[1.0, 0.0])];
    let qt: Vec<String> = ["B", "A", "Z"].iter().map(|s| s.to_string()).collect();
    let results = log_search(&queries, &qt, &refs, &templates, 5).unwrap();
    for (q, r) in queries.iter().zip(&results) {
        assert_eq!(r.ranked_doc_ids, brute_cosine_order(&q.vector, &refs));
    }
    assert_eq!(results[0].ranked_doc_ids[0], "r1");
    assert!(results[2].relevant_doc_ids.is_empty());
    assert!((mrr(&results) - (1.0 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
    assert!(matches!(
        log_search(&[emb("q", &[1.0])], &qt[..1], &refs, &templates, 2),
        Err(AnalyticsError::DimensionMismatch { .. })
    ));
}

#[test]
fn retrieval_matches_brute_force_and_is_prefix_closed() {
    let mut rng = seed::rng(4);
    for _ in 0..50 {
        let docs: Vec<Embedding> = (0..6)
            .map(|i| emb(&format!("d{i}"), &(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let all: Vec<String> = retrieve_topk(&q, &docs, 6).unwrap().into_iter().map(|(id, _)| id).collect();
        assert_eq!(all, brute_cosine_order(&q, &docs));
        for k in 0..6 {
            let a = retrieve_topk(&q, &docs, k).unwrap();
            let b = retrieve_topk(&q, &docs, k + 1).unwrap();
            assert_eq!(a[..], b[..k]);
        }
        assert_eq!(retrieve_topk(&docs[3].vector, &docs, 1).unwrap()[0].0, "d3");
    }
    assert!(retrieve_topk(&[1.0], &[emb("a", &[1.0])], 2).is_err());
}

#[test]
fn maxmin_worked_example() {
    let pts = vec![emb("a", &[0.0]), emb("b", &[1.0]), emb("c", &[10.0])];
    assert_eq!(subsample_maxmin(&pts, 2).unwrap(), vec!["b", "c"]);
    assert_eq!(subsample_maxmin(&pts, 3).unwrap().len(), 3);
    let twins = vec![emb("a", &[0.0]), emb("b", &[0.0]), emb("c", &[5.0]), emb("d", &[2.0])];
    let order = subsample_maxmin(&twins, 4).unwrap();
    assert_eq!(order.last().unwrap(), "b");
    assert!(subsample_maxmin(&pts, 0).is_err());
    assert!(subsample_maxmin(&pts, 4).is_err());
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Enumerate every selection sequence and keep the one that follows the
/// greedy rule at each step.
fn brute_greedy(points: &[Embedding], n: usize) -> Vec<String> {
    let dim = points[0].vector.len();
    let centroid: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p.vector[d]).sum::<f64>() / points.len() as f64)
        .collect();
    fn rec(points: &[Embedding], n: usize, chosen: &mut Vec<usize>, centroid: &[f64], out: &mut Option<Vec<usize>>) {
        if out.is_some() {
            return;
        }
        if chosen.len() == n {
            *out = Some(chosen.clone());
            return;
        }
        let score = |i: usize| -> f64 {
            if chosen.is_empty() {
                -dist(&points[i].vector, centroid)
            } else {
                chosen.iter().map(|&j| dist(&points[i].vector, &points[j].vector)).fold(f64::INFINITY, f64::min)
            }
        };
        let candidates: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
        let scores: Vec<f64> = candidates.iter().map(|&i| score(i)).collect();
        for (a, &i) in candidates.iter().enumerate() {
            let ok = candidates.iter().enumerate().all(|(b, &j)| {
                scores[a] > scores[b] || (scores[a] == scores[b] && points[i].source_id <= points[j].source_id)
            });
            if ok {
                chosen.push(i);
                rec(points, n, chosen, centroid, out);
                chosen.pop();
            }
        }
    }
    let mut out = None;
    rec(points, n, &mut Vec::new(), &centroid, &mut out);
    out.unwrap().into_iter().map(|i| points[i].source_id.clone()).collect()
}

fn min_pairwise(points: &[&[f64]]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            m = m.min(dist(points[i], points[j]));
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn maxmin_matches_brute_force(
        raw in proptest::collection::vec(proptest::collection::vec(-3i32..3, 2), 2..=12),
        n in 1usize..=4,
    ) {
        let n = n.min(raw.len());
        let points: Vec<Embedding> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| emb(&format!("{i:02}"), &v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()))
            .collect();
        let greedy = subsample_maxmin(&points, n).unwrap();
        prop_assert_eq!(&greedy, &brute_greedy(&points, n));
        if n >= 2 {
            let pick: Vec<&[f64]> = greedy
                .iter()
                .map(|id| points.iter().find(|p| &p.source_id == id).unwrap().vector.as_slice())
                .collect();
            let g = min_pairwise(&pick);
            // Exhaustive optimum over all n-subsets.
            let mut best: f64 = 0.0;
            let m = points.len();
            for mask in 0u32..(1 << m) {
                if mask.count_ones() as usize == n {
                    let sub: Vec<&[f64]> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| points[i].vector.as_slice()).collect();
                    best = best.max(min_pairwise(&sub));
                }
            }
            prop_assert!(g >= 0.5 * best - 1e-12, "greedy {} optimum {}", g, best);
        }
    }
}

fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let c = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + c);
        }
    }
    d[a.len()][b.len()]
}

proptest! {
    #[test]
    fn levenshtein_matches_full_table(a in "[a-cé ]{0,12}", b in "[a-cé ]{0,12}") {
        prop_assert_eq!(levenshtein(&a, &b), dp_levenshtein(&a, &b));
    }
}

#[test]
fn subsample_score_worked_values() {
    assert_eq!(levenshtein("kitten", "sitting"), 3);
    let same = vec![LogRecord::new("a", "x y", "t"), LogRecord::new("b", "x y", "t")];
    assert_eq!(subsample_score(&same), SubsampleScore { entity_count: 2, levenshtein_total: 0 });
    let f = |a: &str, b: &str| BTreeMap::from([("a".to_string(), a.to_string()), ("b".to_string(), b.to_string())]);
    let s = vec![
        LogRecord::structured("1", f("1", "2"), "t"),
        LogRecord::structured("2", f("1", "3"), "t"),
    ];
    assert_eq!(subsample_score(&s).entity_count, 3);
}

#[test]
fn isolation_forest_basics() {
    assert_eq!(average_path_length(2), 1.0);
    assert_eq!(average_path_length(1), 0.0);
    // Identical rows: every path ends in the root leaf, so E[h] = c(psi).
    let same = vec![vec![1.0, 2.0]; 20];
    let model = iforest_fit(&same, 10, 16, 0).unwrap();
    let scores = iforest_score(&model, &same).unwrap();
    assert!(scores.iter().all(|&s| (s - 0.5).abs() < 1e-12));
    assert!(matches!(iforest_fit(&same[..1], 10, 1, 0), Err(AnalyticsError::TooFewRows(1))));
    assert!(iforest_fit(&same, 10, 21, 0).is_err());
}

fn blob_with_outlier(seed_value: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed_value);
    let mut rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    rows.push(vec![100.0, 100.0]);
    rows
}

#[test]
fn planted_outlier_scores_highest() {
    let rows = blob_with_outlier(1);
    // Nearest-neighbor oracle: the planted point is the unique extreme.
    let nn = |i: usize| {
        (0..rows.len())
            .filter(|&j| j != i)
            .map(|j| dist(&rows[i], &rows[j]))
            .fold(f64::INFINITY, f64::min)
    };
    assert!((0..100).all(|i| nn(i) < nn(100)));
    let model = iforest_fit(&rows, 100, 64, 7).unwrap();
    let scores = iforest_score(&model, &rows).unwrap();
    let top = (0..rows.len()).max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap()).unwrap();
    assert_eq!(top, 100);
    let depth_cap = (64f64).log2().ceil() as usize;
    assert!(model.trees.iter().all(|t| t.depth() <= depth_cap));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_in_unit_interval_and_row_order_free(seed_value in 0u64..1000, n in 4usize..40) {
        let mut rng = seed::rng(seed_value);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random_range(-5.0..5.0)]).collect();
        let model = iforest_fit(&rows, 20, n.min(16), seed_value).unwrap();
        let scores = iforest_score(&model, &rows).unwrap();
        prop_assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
        let mut reversed = rows.clone();
        reversed.reverse();
        let mut back = iforest_score(&model, &reversed).unwrap();
        back.reverse();
        prop_assert_eq!(back, scores);
        prop_assert_eq!(&iforest_fit(&rows, 20, n.min(16), seed_value).unwrap(), &model);
    }
}

#[test]
fn pattern_detect_flags_and_accuracy() {
    let rows = blob_with_outlier(3);
    let ids = ids(rows.len());
    let mut labels = vec![false; rows.len()];
    labels[100] = true;
    let config = PatternConfig {
        top_k: 1,
        ..Default::default()
    };
    let report = pattern_detect(&ids, &rows, Some(&labels), &config).unwrap();
    assert_eq!(report.flagged, vec!["100"]);
    assert_eq!(report.accuracy_at_k, Some(1.0));
    let five = PatternConfig { top_k: 5, ..Default::default() };
    let report = pattern_detect(&ids, &rows, Some(&labels), &five).unwrap();
    assert_eq!(report.accuracy_at_k, Some(0.2));
    assert!(pattern_detect(&ids, &rows, None, &PatternConfig { top_k: 0, ..Default::default() }).is_err());
}

#[test]
fn hybrid_label_codes() {
    let rec = |id: &str, user: &str, msg: &str| {
        LogRecord::structured(
            id,
            BTreeMap::from([("user".to_string(), user.to_string()), ("msg".to_string(), msg.to_string())]),
            "t",
        )
    };
    let logs = vec![rec("1", "ann", "hi"), rec("2", "bob", "yo"), rec("3", "ann", "hey"), rec("4", "cy", "x")];
    let cols = vec!["user".to_string()];
    let codes = label_codes(&logs, &cols);
    assert_eq!(codes, vec![vec![0.0], vec![0.5], vec![0.0], vec![1.0]]);
    assert_eq!(unstructured_text(&logs[0], &cols).as_deref(), Some(r#"{"msg": "hi"}"#));
    let all = vec!["user".to_string(), "msg".to_string()];
    assert_eq!(unstructured_text(&logs[0], &all), None);
    let emb = vec![vec![9.0]; 4];
    let feats = hybrid_features(&logs, &cols, Some(&emb)).unwrap();
    assert_eq!(feats[1], vec![0.5, 9.0]);
    assert_eq!(hybrid_features(&logs, &all, None).unwrap()[3], vec![1.0, 1.0]);
    assert!(hybrid_features(&logs, &[], None).is_err());
}

fn incident(id: usize, label: IncidentLabel) -> IncidentRecord {
    IncidentRecord {
        id: format!("i{id}"),
        text: String::new(),
        label: Some(label),
        timestamp: None,
    }
}

#[test]
fn triage_self_match_and_unreachable_thresholds() {
    let train = vec![incident(0, IncidentLabel::Tp), incident(1, IncidentLabel::Bp), incident(2, IncidentLabel::Fp)];
    let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.1, 1.0]];
    let k1 = triage_fit(&train, &emb, &TriageConfig { k: 1, ..Default::default() }).unwrap();
    let r = triage_apply(&k1, &train[..1], &emb[..1]).unwrap();
    assert_eq!(r.decisions, vec![TriageDecision::AutoTp]);
    let k3 = triage_fit(&train, &emb, &TriageConfig { k: 3, ..Default::default() }).unwrap();
    let r = triage_apply(&k3, &train, &emb).unwrap();
    assert!(r.decisions.iter().all(|d| *d == TriageDecision::Escalate));
    assert_eq!(r.volume_reduction, 0.0);
    assert!(matches!(triage_fit(&[], &[], &TriageConfig::default()), Err(AnalyticsError::EmptyTrain)));
    assert!(triage_fit(&train, &emb, &TriageConfig { tp_threshold: 0.3, ..Default::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raising_thresholds_shrinks_auto_sets(seed_value in 0u64..500) {
        let mut rng = seed::rng(seed_value);
        let labels = [IncidentLabel::Tp, IncidentLabel::Bp, IncidentLabel::Fp];
        let train: Vec<IncidentRecord> = (0..40).map(|i| incident(i, labels[rng.random_range(0..3)])).collect();
        let emb: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
        let test: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
        let test_recs: Vec<IncidentRecord> = (0..30).map(|i| incident(100 + i, IncidentLabel::Tp)).collect();
        let thetas: Vec<f64> = (0..10).map(|i| 0.5 + 0.5 * i as f64 / 9.0).collect();
        let mut prev_tp: Option<Vec<bool>> = None;
        let mut prev_bp: Option<Vec<bool>> = None;
        for &t in &thetas {
            let model = triage_fit(&train, &emb, &TriageConfig { k: 7, tp_threshold: t, bpfp_threshold: t }).unwrap();
            let r = triage_apply(&model, &test_recs, &test).unwrap();
            let tp: Vec<bool> = r.decisions.iter().map(|d| *d == TriageDecision::AutoTp).collect();
            let bp: Vec<bool> = r.decisions.iter().map(|d| *d == TriageDecision::AutoBpfp).collect();
            if let (Some(pt), Some(pb)) = (&prev_tp, &prev_bp) {
                for i in 0..tp.len() {
                    prop_assert!(!tp[i] || pt[i]);
                    prop_assert!(!bp[i] || pb[i]);
                }
            }
            prev_tp = Some(tp);
            prev_bp = Some(bp);
        }
    }
}
