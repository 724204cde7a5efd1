//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use anonaudit::adversaries::ProfileKind;
use anonaudit::anonymizer::{
    anonymize_with_tree, build_adt, build_blind_adt, compute_root_hash, AdtNode,
};
use anonaudit::config::RunConfig;
use anonaudit::experiments::{
    bench, calibrate, detection_matrix, k_sweep, synthetic_datasets, DetectionMatrix, MATRIX_ROWS,
    SWEEP_ROWS,
};
use anonaudit::fingerprint::{compute_fingerprint_run, wasserstein_1d};
use anonaudit::models::{brute_shapley, tree_shap};
use anonaudit::stats::{bootstrap_ci, cohens_d_paired, wilcoxon_exact, PairedSeries};
use anonaudit::synth::{generate, SynthKind};
use anonaudit::traps::OutsourcedDataset;
use anonaudit::util::seeded_rng;
use anonaudit::verifier::{evasion_probability, Verdict};
use rand::seq::index::sample;
use rand::Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// Reference k-sweep values: k, TD F1, Blind F1, TD WD, Blind WD.
const REFERENCE_SWEEP: [(usize, f64, f64, f64, f64); 11] = [
    (2, 0.6383, 0.5034, 0.1718, 0.3444),
    (3, 0.6597, 0.5092, 0.2221, 0.2772),
    (4, 0.6263, 0.5128, 0.2928, 0.2699),
    (5, 0.6420, 0.4929, 0.2962, 0.3686),
    (7, 0.5978, 0.5139, 0.2164, 0.3670),
    (10, 0.5472, 0.4297, 0.2784, 0.3778),
    (12, 0.5407, 0.4461, 0.4299, 0.3707),
    (15, 0.5660, 0.4044, 0.3453, 0.4173),
    (20, 0.5914, 0.4605, 0.2039, 0.4827),
    (25, 0.6085, 0.2370, 0.2347, 0.5250),
    (30, 0.5982, 0.3750, 0.2974, 0.4151),
];

fn reference_f1() -> PairedSeries {
    PairedSeries::new(
        REFERENCE_SWEEP.iter().map(|r| r.1).collect(),
        REFERENCE_SWEEP.iter().map(|r| r.2).collect(),
    )
    .unwrap()
}

fn reference_wd() -> PairedSeries {
    PairedSeries::new(
        REFERENCE_SWEEP.iter().map(|r| r.3).collect(),
        REFERENCE_SWEEP.iter().map(|r| r.4).collect(),
    )
    .unwrap()
}

/// Calibrate on the first dataset, then run the full matrix, as the CLI does.
fn full_matrix() -> Result<DetectionMatrix, String> {
    let cfg = RunConfig::default();
    let data = synthetic_datasets(&[SynthKind::Strong, SynthKind::Weak], MATRIX_ROWS, cfg.seed)
        .map_err(err)?;
    let cal = calibrate(&data[0].1, &cfg).map_err(err)?;
    detection_matrix(&data, &cfg, cal.epsilon, Some(cal)).map_err(err)
}

fn layers(
    m: &DetectionMatrix,
    ds: &str,
    kind: ProfileKind,
) -> Result<(Verdict, Vec<String>), String> {
    let s = m
        .scenario(ds, kind)
        .ok_or_else(|| format!("missing scenario {ds}/{}", kind.as_str()))?;
    Ok((s.report.verdict, s.report.triggered_layers.clone()))
}

fn criterion_1(store: &mut Option<String>) -> Outcome {
    let t = Instant::now();
    let m = full_matrix()?;
    let secs = t.elapsed().as_secs_f64();
    *store = Some(serde_json::to_string_pretty(&m).map_err(err)?);

    let (v, l) = layers(&m, "strong", ProfileKind::Honest)?;
    ensure(v == Verdict::Verified, || {
        format!("strong honest: {v} {l:?}")
    })?;
    let (v, l) = layers(&m, "strong", ProfileKind::Lazy)?;
    ensure(
        v == Verdict::ViolationDetected && l.contains(&"2b".into()),
        || format!("strong lazy: {v} {l:?}"),
    )?;
    let (v, l) = layers(&m, "strong", ProfileKind::Dumb)?;
    ensure(
        v == Verdict::ViolationDetected && l.contains(&"1".into()),
        || format!("strong dumb: {v} {l:?}"),
    )?;
    let (v, l) = layers(&m, "strong", ProfileKind::Approximate)?;
    ensure(v == Verdict::ViolationDetected && l == ["3"], || {
        format!("strong approximate: {v} {l:?}")
    })?;
    let (v, l) = layers(&m, "weak", ProfileKind::Approximate)?;
    ensure(v == Verdict::Verified, || {
        format!("weak approximate: {v} {l:?}")
    })?;
    let (v, l) = layers(&m, "weak", ProfileKind::Dumb)?;
    ensure(
        v == Verdict::ViolationDetected && l.contains(&"1".into()),
        || format!("weak dumb: {v} {l:?}"),
    )?;
    ensure(secs < 60.0, || format!("matrix took {secs:.1} s"))?;
    Ok(format!(
        "pattern matches, epsilon {:.4}, {secs:.1} s",
        m.epsilon
    ))
}

fn criterion_2() -> Outcome {
    let (s, n, delta) = (13usize, 8413usize, 0.05);
    let closed = evasion_probability(s, n, delta).map_err(err)?;
    ensure((0.515..=0.525).contains(&closed), || {
        format!("closed form {closed}")
    })?;
    let drop = (delta * n as f64).floor() as usize;
    let trials = 100_000;
    let mut rng = seeded_rng(7, "acceptance-evasion");
    // sentinels occupy indices 0..s
    let missed = (0..trials)
        .filter(|_| sample(&mut rng, n, drop).iter().all(|i| i >= s))
        .count();
    let mc = missed as f64 / trials as f64;
    ensure((mc - closed).abs() <= 0.02, || {
        format!("closed {closed:.4} vs simulated {mc:.4}")
    })?;
    Ok(format!("closed form {closed:.4}, simulated {mc:.4}"))
}

fn criterion_3() -> Outcome {
    let f1 = wilcoxon_exact(&reference_f1()).map_err(err)?;
    let wd = wilcoxon_exact(&reference_wd()).map_err(err)?;
    // 2 and 14 of the 2^11 equally likely sign patterns are at least as extreme
    let (p_f1, p_wd) = (2.0 / 2048.0, 14.0 / 2048.0);
    ensure(
        f1.statistic == 0.0 && (f1.p_value - p_f1).abs() < 1e-12,
        || format!("F1: {f1:?}"),
    )?;
    ensure(
        wd.statistic == 4.0 && (wd.p_value - p_wd).abs() < 1e-12,
        || format!("WD: {wd:?}"),
    )?;
    Ok(format!(
        "F1 W={} p={:.6}; WD W={} p={:.6}",
        f1.statistic, f1.p_value, wd.statistic, wd.p_value
    ))
}

fn criterion_4() -> Outcome {
    let d_f1 = cohens_d_paired(&reference_f1()).map_err(err)?;
    let d_wd = cohens_d_paired(&reference_wd()).map_err(err)?;
    ensure((d_f1 - 1.9618).abs() <= 1e-3, || format!("F1 d = {d_f1}"))?;
    ensure((d_wd + 1.0228).abs() <= 1e-3, || format!("WD d = {d_wd}"))?;
    Ok(format!("d_F1 {d_f1:.4}, d_WD {d_wd:.4}"))
}

fn criterion_5() -> Outcome {
    let gaps: Vec<f64> = REFERENCE_SWEEP.iter().map(|r| r.1 - r.2).collect();
    let ci = bootstrap_ci(&gaps, 10_000, 0.95, 42).map_err(err)?;
    ensure((ci.mean - 0.1574).abs() <= 1e-4, || {
        format!("mean {}", ci.mean)
    })?;
    ensure(
        (ci.low - 0.1203).abs() <= 0.01 && (ci.high - 0.2079).abs() <= 0.01,
        || format!("interval [{:.4}, {:.4}]", ci.low, ci.high),
    )?;
    Ok(format!(
        "mean {:.4}, 95% CI [{:.4}, {:.4}]",
        ci.mean, ci.low, ci.high
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = seeded_rng(6, "acceptance-kanon");
    let mut trees = 0;
    for i in 0..24 {
        let n = rng.gen_range(60..900);
        let t = common::random_table(&mut rng, n);
        let d = OutsourcedDataset::untrapped(&t, b"acceptance").map_err(err)?;
        for k in [2usize, 5, 10] {
            for blind in [false, true] {
                let tree = if blind {
                    build_blind_adt(&t, k, i)
                } else {
                    build_adt(&t, k)
                }
                .map_err(err)?;
                let counts = tree.leaf_counts();
                ensure(counts.iter().sum::<usize>() == n, || {
                    format!("dataset {i} k={k}: counts {counts:?} vs n={n}")
                })?;
                ensure(counts.iter().all(|&c| c >= 2 * k), || {
                    format!("dataset {i} k={k}: leaf below 2k")
                })?;
                // recount from the row assignment rather than the stored counts
                let res = anonymize_with_tree(&d, tree).map_err(err)?;
                let mut per_leaf: BTreeMap<u32, usize> = BTreeMap::new();
                for leaf in res.leaf_map.values() {
                    *per_leaf.entry(*leaf).or_default() += 1;
                }
                ensure(per_leaf.values().all(|&c| c >= 2 * k), || {
                    format!("dataset {i} k={k}: routed leaf below 2k")
                })?;
                ensure(per_leaf.values().sum::<usize>() == n, || {
                    format!("dataset {i} k={k}: rows lost")
                })?;
                trees += 1;
            }
        }
    }
    Ok(format!("{trees} trees over 24 datasets"))
}

fn oracle_hash(node: &AdtNode) -> String {
    let h = |s: String| hex::encode(Sha256::digest(s.as_bytes()));
    match node {
        AdtNode::Leaf { count, bounds } => {
            let parts: Vec<String> = bounds
                .iter()
                .map(|(k, (a, b))| format!("{k}={a:.6}..{b:.6}"))
                .collect();
            h(format!("LEAF|{count}|{}", parts.join("|")))
        }
        AdtNode::Internal {
            feature,
            split_value,
            left,
            right,
        } => h(format!(
            "INTERNAL|{feature}|{split_value:.6}|{}|{}",
            oracle_hash(left),
            oracle_hash(right)
        )),
    }
}

/// Applies `f` to the `target`-th node (pre-order) among leaves or internals.
fn mutate_nth(
    node: &mut AdtNode,
    want_leaf: bool,
    target: usize,
    seen: &mut usize,
    f: &mut dyn FnMut(&mut AdtNode),
) -> bool {
    if node.is_leaf() == want_leaf {
        if *seen == target {
            f(node);
            return true;
        }
        *seen += 1;
    }
    match node {
        AdtNode::Internal { left, right, .. } => {
            mutate_nth(left, want_leaf, target, seen, f)
                || mutate_nth(right, want_leaf, target, seen, f)
        }
        AdtNode::Leaf { .. } => false,
    }
}

fn mutate_random(
    tree: &AdtNode,
    rng: &mut impl Rng,
    want_leaf: bool,
    mut f: impl FnMut(&mut AdtNode),
) -> AdtNode {
    let n = tree.n_leaves();
    let count = if want_leaf { n } else { n - 1 };
    let mut out = tree.clone();
    let target = rng.gen_range(0..count);
    assert!(mutate_nth(&mut out, want_leaf, target, &mut 0, &mut f));
    out
}

fn criterion_7() -> Outcome {
    let mut rng = seeded_rng(7, "acceptance-merkle");
    let mut swaps = 0;
    for i in 0..100u64 {
        let n = rng.gen_range(40..500);
        let t = common::random_table(&mut rng, n);
        let d = OutsourcedDataset::untrapped(&t, b"acceptance").map_err(err)?;
        let k = [2, 3, 5][i as usize % 3];
        let tree = if i % 2 == 0 {
            build_adt(&t, k)
        } else {
            build_blind_adt(&t, k, i)
        }
        .map_err(err)?;
        let res = anonymize_with_tree(&d, tree).map_err(err)?;
        let reread = AdtNode::from_json(&res.tree.to_json().map_err(err)?).map_err(err)?;
        ensure(compute_root_hash(&reread) == res.root_hash, || {
            format!("tree {i}: recompute differs")
        })?;
        ensure(oracle_hash(&reread) == res.root_hash, || {
            format!("tree {i}: oracle differs")
        })?;

        let bumped = mutate_random(&reread, &mut rng, true, |node| {
            if let AdtNode::Leaf { bounds, .. } = node {
                let b = bounds.values_mut().next().unwrap();
                b.1 += 1.0;
            }
        });
        ensure(compute_root_hash(&bumped) != res.root_hash, || {
            format!("tree {i}: bound change undetected")
        })?;

        if reread.is_leaf() {
            continue;
        }
        let shifted = mutate_random(&reread, &mut rng, false, |node| {
            if let AdtNode::Internal { split_value, .. } = node {
                *split_value += 1e-5;
            }
        });
        ensure(compute_root_hash(&shifted) != res.root_hash, || {
            format!("tree {i}: split change undetected")
        })?;

        let mut distinct = true;
        let swapped = mutate_random(&reread, &mut rng, false, |node| {
            if let AdtNode::Internal { left, right, .. } = node {
                distinct = oracle_hash(left) != oracle_hash(right);
                std::mem::swap(left, right);
            }
        });
        if distinct {
            swaps += 1;
            ensure(compute_root_hash(&swapped) != res.root_hash, || {
                format!("tree {i}: child swap undetected")
            })?;
        }
    }
    Ok(format!(
        "100 trees, {swaps} swaps, all mutations change the root"
    ))
}

fn criterion_8(matrix_json: Option<&str>) -> Outcome {
    let mut rng = seeded_rng(8, "acceptance-shap");
    let mut worst: f64 = 0.0;
    for m in 0..200 {
        let p = rng.gen_range(1..=4);
        let model = common::random_gbdt(&mut rng, p);
        for _ in 0..5 {
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.1..1.1)).collect();
            let fast = tree_shap(&model, &x);
            let oracle = common::permutation_shapley(&model, &x);
            let brute = brute_shapley(&model, &x).map_err(err)?;
            for j in 0..p {
                worst = worst.max((fast.per_feature[j] - oracle[j]).abs());
                ensure(
                    (fast.per_feature[j] - brute.per_feature[j]).abs() <= 1e-9,
                    || format!("model {m}: brute disagrees"),
                )?;
            }
            ensure((fast.total() - model.margin(&x)).abs() < 1e-6, || {
                format!("model {m}: local accuracy")
            })?;
        }
    }
    ensure(worst <= 1e-9, || {
        format!("max |tree_shap - oracle| = {worst:e}")
    })?;

    let cfg = RunConfig::default();
    let mut la: f64 = 0.0;
    for kind in SynthKind::ALL {
        let t = generate(kind, 3000, cfg.seed).map_err(err)?;
        la = la.max(
            compute_fingerprint_run(&t, &cfg.fingerprint_params(), cfg.seed)
                .map_err(err)?
                .max_local_accuracy_error,
        );
    }
    if let Some(json) = matrix_json {
        let m: DetectionMatrix = serde_json::from_str(json).map_err(err)?;
        for s in m.datasets.iter().flat_map(|d| &d.scenarios) {
            la = la.max(s.report.layer3.max_local_accuracy_error);
        }
    }
    ensure(la < 1e-6, || {
        format!("fingerprint local accuracy error {la:e}")
    })?;
    Ok(format!(
        "max oracle gap {worst:.1e}, max local accuracy error {la:.1e}"
    ))
}

fn criterion_9() -> Outcome {
    let mut rng = seeded_rng(9, "acceptance-w1");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        // values on a 1e-3 grid so the grid integral is exact
        let step = 1e-3;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let len = rng.gen_range(1..60);
            let spread = rng.gen_range(10..3000);
            let shift = rng.gen_range(0..500);
            (0..len)
                .map(|_| (shift + rng.gen_range(0..spread)) as f64 * step)
                .collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let w = wasserstein_1d(&a, &b).map_err(err)?;
        worst = worst.max((w - common::grid_w1(&a, &b, step)).abs());
        worst = worst.max((w - common::quantile_w1(&a, &b)).abs());
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;

    for _ in 0..200 {
        let cont = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let len = rng.gen_range(1..40);
            let mu = rng.gen_range(-3.0..3.0);
            (0..len).map(|_| mu + rng.gen_range(-2.0..2.0)).collect()
        };
        let (x, y, z) = (cont(&mut rng), cont(&mut rng), cont(&mut rng));
        let w = |p: &[f64], q: &[f64]| wasserstein_1d(p, q).unwrap();
        ensure(w(&x, &x) == 0.0, || "identity fails".into())?;
        ensure(w(&x, &y) >= 0.0, || "negative distance".into())?;
        ensure((w(&x, &y) - w(&y, &x)).abs() <= 1e-12, || {
            "asymmetric".into()
        })?;
        ensure(w(&x, &z) <= w(&x, &y) + w(&y, &z) + 1e-12, || {
            "triangle inequality fails".into()
        })?;
    }
    Ok(format!(
        "max deviation from oracles {worst:.1e}; axioms hold on 200 triples"
    ))
}

fn criterion_10() -> Outcome {
    let cfg = RunConfig::default();
    let t = generate(SynthKind::Strong, SWEEP_ROWS, cfg.seed).map_err(err)?;
    let r = k_sweep(&t, &cfg, 0.2).map_err(err)?;
    ensure(r.rows.len() == 11, || {
        format!("{} sweep points", r.rows.len())
    })?;
    let losing: Vec<usize> = r
        .rows
        .iter()
        .filter(|row| row.td_f1 <= row.blind_f1)
        .map(|row| row.k)
        .collect();
    ensure(losing.is_empty(), || {
        format!("TD F1 not above blind at k = {losing:?}")
    })?;
    let td: Vec<f64> = r.rows.iter().map(|row| row.td_f1).collect();
    let bl: Vec<f64> = r.rows.iter().map(|row| row.blind_f1).collect();
    let w = wilcoxon_exact(&PairedSeries::new(td, bl).map_err(err)?).map_err(err)?;
    ensure(w.p_value < 0.01, || format!("p = {}", w.p_value))?;
    let mean_gap = r.rows.iter().map(|row| row.f1_gap).sum::<f64>() / 11.0;
    Ok(format!(
        "11/11 positive gaps, mean {mean_gap:.3}, W={} p={:.6}",
        w.statistic, w.p_value
    ))
}

fn criterion_11() -> Outcome {
    let cfg = RunConfig::default();
    let rows = bench(&[10_000, 100_000, 1_000_000], cfg.k, 3, &cfg).map_err(err)?;
    let big = rows.last().unwrap();
    ensure(big.total_s < 3.0, || {
        format!("n=1e6 total {:.2} s", big.total_s)
    })?;
    let ratio = rows[2].hash_s / rows[1].hash_s;
    ensure((5.0..=20.0).contains(&ratio), || {
        format!("hash growth x{ratio:.2} for 10x rows")
    })?;
    let fp: Vec<f64> = rows.iter().map(|r| r.fingerprint_s).collect();
    let (lo, hi) = fp
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let spread = (hi - lo) / lo;
    ensure(spread < 0.25, || {
        format!("fingerprint times {fp:?} vary {:.0}%", spread * 100.0)
    })?;
    Ok(format!(
        "total {:.2} s at 1e6, hash growth x{ratio:.1}, fingerprint spread {:.0}%",
        big.total_s,
        spread * 100.0
    ))
}

fn criterion_12(first: Option<&str>) -> Outcome {
    let first = first.ok_or("first matrix run unavailable")?;
    let second = serde_json::to_string_pretty(&full_matrix()?).map_err(err)?;
    ensure(first.as_bytes() == second.as_bytes(), || {
        "matrix JSON differs between runs".into()
    })?;
    Ok(format!("{} identical bytes", second.len()))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match &r {
        Ok(detail) => println!("PASS criterion {id:>2} ({name}): {detail} [{secs:.1}s]"),
        Err(detail) => println!("FAIL criterion {id:>2} ({name}): {detail} [{secs:.1}s]"),
    }
    r.is_ok()
}

fn main() {
    let mut matrix_json = None;
    let results = [
        run(1, "detection matrix", || criterion_1(&mut matrix_json)),
        run(2, "sentinel evasion", criterion_2),
        run(3, "exact Wilcoxon", criterion_3),
        run(4, "Cohen's d", criterion_4),
        run(5, "bootstrap interval", criterion_5),
        run(6, "k-anonymity", criterion_6),
        run(7, "Merkle soundness", criterion_7),
        run(8, "TreeSHAP", || criterion_8(matrix_json.as_deref())),
        run(9, "Wasserstein", criterion_9),
        run(10, "utility gap", criterion_10),
        run(11, "scalability", criterion_11),
        run(12, "determinism", || criterion_12(matrix_json.as_deref())),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
