//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Runs without the libtest harness so the lines are never captured.

#[path = "../../core/tests/split_oracle/mod.rs"]
mod split_oracle;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lifespan_core::eval::report::{file_sha256, sha256_hex};
use lifespan_core::eval::{
    cross_validate, cross_validate_by_community, downsample, feature_subset_sweep, fit_fold, grid_search, kfold_split,
    macro_f1, r2_score, shuffle_labels, spearman_rho, GridSpec, Learner, ModelArtifact, ScoreSummary, Task,
};
use lifespan_core::events::{binary_flags, label_users, lifetime_class, BinaryWindow, DEFAULT_CHURN_DAYS};
use lifespan_core::features::{default_catalog, extract, FeatureMatrix, Subset};
use lifespan_core::forest::{
    gini_impurity, BaselineModel, ForestParams, MaxFeatures, Prediction, Response, Target, TaskKind,
};
use lifespan_core::seed;
use lifespan_core::synth::{self, CommunitySpec, GeneratorConfig, DEFAULT_MIXTURE};
use rand::Rng as _;

const SEEDS: [u64; 3] = [1, 2, 3];
const FOLDS: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn five_cities(seed: u64) -> FeatureMatrix {
    let cfg = GeneratorConfig {
        seed,
        ..synth::preset("five-cities").unwrap()
    };
    let log = synth::generate(&cfg).unwrap();
    extract(&log, &default_catalog(), DEFAULT_CHURN_DAYS)
}

/// Community ids from largest to smallest.
fn by_size(m: &FeatureMatrix) -> Vec<String> {
    let mut ids = m.community_ids();
    ids.sort_by_key(|c| std::cmp::Reverse(m.rows_in_community(c).len()));
    ids
}

fn forest(task: Task, seed: u64) -> Learner {
    Learner::Forest(ForestParams::new(task.kind(), 32, 16, seed))
}

fn cv(m: &FeatureMatrix, task: Task, seed: u64) -> ScoreSummary {
    let plan = kfold_split(m.n_rows(), FOLDS, seed).unwrap();
    cross_validate(m, task, &forest(task, seed), &plan).unwrap()
}

fn c1_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(11);
    let mut mismatches = Vec::new();
    for i in 0..500 {
        let n = rng.random_range(2..=12);
        let f = rng.random_range(1..=4);
        let cols: Vec<Vec<f64>> = (0..f)
            .map(|_| (0..n).map(|_| rng.random_range(0..8) as f64 * 0.5).collect())
            .collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let ys: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gini = Response::Classes {
            labels: &labels,
            n_classes: 3,
        };
        if let Some(m) = split_oracle::disagreement(&cols, &ys, gini, true) {
            mismatches.push(format!("gini #{i}: {m}"));
        }
        if let Some(m) = split_oracle::disagreement(&cols, &values, Response::Values(&values), false) {
            mismatches.push(format!("variance #{i}: {m}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < 10.0,
        format!(
            "{} mismatches over 500 instances x 2 criteria in {secs:.2}s {mismatches:?}",
            mismatches.len()
        ),
    )
}

fn c2_unit_values() -> Outcome {
    let g1 = gini_impurity(&[5.0, 5.0]).unwrap();
    let g2 = gini_impurity(&[1.0, 2.0, 3.0]).unwrap();
    let y: Vec<f64> = (0..50).map(|i| (i * i % 17) as f64).collect();
    let base = BaselineModel::fit(&Target::Values(y.clone())).unwrap();
    let Prediction::Value(mean) = base.predict() else {
        unreachable!()
    };
    let r2 = r2_score(&y, &vec![mean; y.len()]).unwrap();
    let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])
        .unwrap()
        .unwrap();
    let f1 = macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 0], &[0, 1]).unwrap().macro_f1;
    let pass = g1 == 0.5
        && (g2 - 0.611_111_111_1).abs() < 1e-9
        && r2.abs() < 1e-12
        && (rho - 0.8).abs() < 1e-12
        && (f1 - 1.0 / 3.0).abs() < 1e-12;
    outcome(pass, format!("gini {g1}, {g2:.10}; r2 {r2}; rho {rho}; f1 {f1}"))
}

fn c3_labels() -> Outcome {
    let day = 1440;
    let boundaries = [(1440, 1), (1441, 2), (10 * day, 3), (100 * day, 6)];
    let classes_ok = boundaries.iter().all(|&(l, c)| lifetime_class(l).unwrap() == c);
    let mut rng = seed::rng(3);
    let mut monotone = true;
    for _ in 0..1000 {
        let l = rng.random_range(0..400 * day);
        let flags = binary_flags(l);
        for w in BinaryWindow::ALL {
            monotone &= flags[&w] == (l > w.minutes());
        }
        for pair in BinaryWindow::ALL.windows(2) {
            monotone &= !flags[&pair[1]] || flags[&pair[0]];
        }
    }
    outcome(
        classes_ok && monotone,
        format!("boundaries {classes_ok}, flags monotone on 1000 lifetimes {monotone}"),
    )
}

fn c4_mixture() -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for s in SEEDS {
        let cfg = GeneratorConfig::new(
            vec![CommunitySpec {
                id: "mix".into(),
                users: 10_000,
            }],
            s,
        );
        let labels = label_users(&synth::generate(&cfg).unwrap(), DEFAULT_CHURN_DAYS);
        for (c, share) in DEFAULT_MIXTURE.iter().enumerate() {
            let got = labels.iter().filter(|l| l.class_id == c as u32 + 1).count() as f64 / labels.len() as f64;
            let dev = (got - share).abs();
            worst = worst.max(dev);
            pass &= dev <= 0.015;
        }
    }
    outcome(
        pass,
        format!("largest class-share deviation {:.2} pp over 3 seeds", worst * 100.0),
    )
}

fn c5_learnability(data: &[FeatureMatrix]) -> Outcome {
    let mut thresholds = true;
    let mut ordered_seeds = 0;
    let mut spread = true;
    let mut lines = Vec::new();
    for (m, s) in data.iter().zip(SEEDS) {
        let ids = by_size(m);
        let mut f1 = Vec::new();
        let mut r2 = Vec::new();
        for c in &ids {
            let d = m.community(c);
            f1.push(cv(&d, Task::Multiclass, s));
            r2.push(cv(&d, Task::Regression, s).mean);
        }
        for i in 0..3 {
            thresholds &= f1[i].mean >= 0.85 && r2[i] >= 0.80;
        }
        let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
        let f1_means: Vec<f64> = f1.iter().map(|s| s.mean).collect();
        if non_increasing(&f1_means) && non_increasing(&r2) {
            ordered_seeds += 1;
        }
        let ratio = f1[ids.len() - 1].stddev / f1[0].stddev;
        spread &= ratio >= 2.0;
        lines.push(format!(
            "seed {s}: f1 [{}] r2 [{}] std ratio {ratio:.1}",
            f1_means.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" "),
            r2.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    outcome(
        thresholds && ordered_seeds >= 2 && spread,
        format!("ordered in {ordered_seeds}/3 seeds; {}", lines.join("; ")),
    )
}

fn c6_diminishing_returns(data: &[FeatureMatrix]) -> Outcome {
    let spec = GridSpec {
        n_estimators: vec![32, 64],
        max_depth: vec![8, 16, 32],
        max_features: vec![MaxFeatures::Sqrt],
        min_samples_leaf: vec![1],
        bootstrap: vec![true],
    };
    let mut pass = true;
    let mut lines = Vec::new();
    for (m, s) in data.iter().zip(SEEDS) {
        let plan = kfold_split(m.n_rows(), FOLDS, s).unwrap();
        let entries = grid_search(m, Task::Regression, &spec.expand(Task::Regression, s).unwrap(), &plan).unwrap();
        let r2: BTreeMap<(usize, usize), f64> = entries
            .iter()
            .map(|e| ((e.params.n_estimators, e.params.max_depth), e.summary.mean))
            .collect();
        let depth_gain = |a: usize, b: usize| [32, 64].iter().map(|&n| r2[&(n, b)] - r2[&(n, a)]).sum::<f64>() / 2.0;
        let (g8_16, g16_32) = (depth_gain(8, 16), depth_gain(16, 32));
        let g_est = [8, 16, 32].iter().map(|&d| r2[&(64, d)] - r2[&(32, d)]).sum::<f64>() / 3.0;
        pass &= g8_16 > g16_32 && g_est <= 0.01;
        lines.push(format!(
            "seed {s}: 8->16 {g8_16:+.4}, 16->32 {g16_32:+.4}, 32->64 trees {g_est:+.4}"
        ));
    }
    outcome(pass, lines.join("; "))
}

fn c7_subsets(pooled: &FeatureMatrix, s: u64) -> (Outcome, HashMap<Subset, f64>) {
    let plan = kfold_split(pooled.n_rows(), FOLDS, s).unwrap();
    let sweep = feature_subset_sweep(
        pooled,
        Task::Multiclass,
        &Subset::ALL,
        &forest(Task::Multiclass, s),
        &plan,
    )
    .unwrap();
    let scores: HashMap<Subset, f64> = sweep.iter().map(|x| (x.subset, x.summary.mean)).collect();
    let community = scores[&Subset::CommunityOnly];
    let lowest = scores
        .iter()
        .all(|(k, v)| *k == Subset::CommunityOnly || *v > community);
    let cumulative = [
        Subset::FirstDay,
        Subset::First3Days,
        Subset::FirstWeek,
        Subset::First2Weeks,
        Subset::FirstMonth,
        Subset::First3Months,
    ];
    let ordered = cumulative.windows(2).all(|w| scores[&w[1]] >= scores[&w[0]] - 0.02);
    let detail = sweep
        .iter()
        .map(|x| format!("{} {:.3}", x.subset.id(), x.summary.mean))
        .collect::<Vec<_>>()
        .join(", ");
    (outcome(lowest && ordered, detail), scores)
}

fn c8_generalization(pooled: &FeatureMatrix, s: u64) -> Outcome {
    let task = Task::Multiclass;
    let learner = forest(task, s);
    let plan = kfold_split(pooled.n_rows(), FOLDS, s).unwrap();
    let held_out = cross_validate_by_community(pooled, task, &learner, &plan).unwrap();
    const REPS: u64 = 5;
    let mut pass = true;
    let mut lines = Vec::new();
    for (ci, c) in by_size(pooled).iter().enumerate() {
        let d = pooled.community(c);
        let n = d.n_rows();
        let mut own = 0.0;
        let mut down = 0.0;
        for r in 0..REPS {
            let p = kfold_split(n, FOLDS, seed::derive(s, &[r])).unwrap();
            own += cross_validate(&d, task, &learner, &p).unwrap().mean / REPS as f64;
            let ds = downsample(pooled, n, seed::derive(s, &[100 + ci as u64, r])).unwrap();
            down += cross_validate(&ds, task, &learner, &p).unwrap().mean / REPS as f64;
        }
        let pooled_score = held_out[c].mean;
        let ok_pooled = pooled_score >= own - 0.05;
        let ok_down = (down - own).abs() <= 0.03;
        pass &= ok_pooled && ok_down;
        lines.push(format!(
            "{c} (n={n}) own {own:.3} pooled {pooled_score:.3}{} downsampled {down:.3}{}",
            if ok_pooled { "" } else { " FAIL" },
            if ok_down { "" } else { " FAIL" }
        ));
    }
    outcome(pass, lines.join("; "))
}

fn c9_importance(pooled: &FeatureMatrix, s: u64) -> Outcome {
    let params = ForestParams::new(TaskKind::Multiclass, 32, 16, s);
    let ids: Vec<String> = by_size(pooled).into_iter().take(3).collect();
    let mut real = Vec::new();
    let mut control = Vec::new();
    for (i, c) in ids.iter().enumerate() {
        let d = pooled.community(c);
        real.push(
            ModelArtifact::train(&d, Task::Multiclass, &params, c)
                .unwrap()
                .forest
                .importance,
        );
        let shuffled = shuffle_labels(&d, seed::derive(s, &[200 + i as u64]));
        control.push(
            ModelArtifact::train(&shuffled, Task::Multiclass, &params, c)
                .unwrap()
                .forest
                .importance,
        );
    }
    let rho = |a: &[f64], b: &[f64]| spearman_rho(a, b).unwrap().unwrap_or(0.0);
    let mut pass = true;
    let mut lines = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let same = rho(&real[i], &real[j]);
            let ctrl = rho(&real[i], &control[j]).max(rho(&real[j], &control[i]));
            pass &= same >= 0.6 && same > ctrl;
            lines.push(format!("{}~{} rho {same:.3} vs control {ctrl:.3}", ids[i], ids[j]));
        }
    }
    outcome(pass, lines.join("; "))
}

fn c10_binary(pooled: &FeatureMatrix, s: u64, multiclass: &HashMap<Subset, f64>) -> Outcome {
    let plan = kfold_split(pooled.n_rows(), FOLDS, s).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for w in BinaryWindow::ALL {
        let subset = Subset::for_binary_window(w);
        let d = pooled.select_subset(subset).unwrap();
        let task = Task::Binary(w);
        let bin = cross_validate(&d, task, &forest(task, s), &plan).unwrap().mean;
        let mc = multiclass[&subset];
        pass &= bin >= mc;
        lines.push(format!(
            "{} binary {bin:.3} vs {} multiclass {mc:.3}",
            w.id(),
            subset.id()
        ));
    }
    outcome(pass, lines.join("; "))
}

fn run_cli(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_lifespan"))
        .current_dir(dir)
        .args(args)
        .arg("-q")
        .status()
        .unwrap();
    assert!(status.success(), "lifespan {args:?} failed: {status}");
}

/// Runs the whole staged pipeline and returns a hash per artifact.
fn pipeline(workers: usize) -> BTreeMap<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let w = workers.to_string();
    let model = ["--estimators", "8", "--depth", "8", "--seed", "5", "--workers", &w];
    std::fs::write(dir.join("grid.toml"), "n_estimators = [4, 8]\nmax_depth = [4, 8]\n").unwrap();
    run_cli(
        dir,
        &[
            "generate",
            "--preset",
            "tiny",
            "--seed",
            "7",
            "-o",
            "log.jsonl",
            "--workers",
            &w,
        ],
    );
    run_cli(dir, &["label", "log.jsonl", "-o", "labels.csv", "--workers", &w]);
    run_cli(dir, &["extract", "log.jsonl", "-o", "all.csv", "--workers", &w]);
    let reports = [
        ("evaluate", vec!["--draws", "2"]),
        ("gridsearch", vec!["--grid", "grid.toml"]),
        ("subsets", vec![]),
        ("crossapply", vec![]),
        ("importance", vec!["--control"]),
        ("binary", vec![]),
        ("bands", vec![]),
    ];
    let mut hashes = BTreeMap::new();
    for (cmd, extra) in &reports {
        let mut args = vec![*cmd, "all.csv", "-o", cmd];
        if *cmd == "bands" {
            args.extend(["--workers", &w]);
        } else {
            args.extend(model);
        }
        args.extend(extra.iter().copied());
        run_cli(dir, &args);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{cmd}.json"))).unwrap()).unwrap();
        let recomputed = sha256_hex(serde_json::to_string(&report["body"]).unwrap().as_bytes());
        assert_eq!(report["body_sha256"].as_str().unwrap(), recomputed, "{cmd} body hash");
        hashes.insert(format!("{cmd} body"), recomputed);
    }
    let mut train = vec!["train", "all.csv", "--community", "town-a", "-o", "a.json"];
    train.extend(model);
    run_cli(dir, &train);
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("a.json")).unwrap()).unwrap();
    hashes.insert("model".into(), sha256_hex(a["model"].to_string().as_bytes()));
    for f in ["log.jsonl", "labels.csv", "all.csv", "all.csv.json"] {
        hashes.insert(f.into(), file_sha256(&dir.join(f)).unwrap());
    }
    hashes
}

fn c11_determinism() -> Outcome {
    let one = pipeline(1);
    let four = pipeline(4);
    let differing: Vec<&String> = one.keys().filter(|k| one.get(*k) != four.get(*k)).collect();
    outcome(
        differing.is_empty() && one.len() == four.len(),
        format!("{} artifacts compared, differing: {differing:?}", one.len()),
    )
}

fn c12_no_leakage() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 4,
        ..synth::preset("tiny").unwrap()
    };
    let m = extract(&synth::generate(&cfg).unwrap(), &default_catalog(), DEFAULT_CHURN_DAYS);
    let plan = kfold_split(m.n_rows(), FOLDS, 4).unwrap();
    let learner = Learner::Forest(ForestParams::new(TaskKind::Multiclass, 8, 8, 4));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut checked = 0;
    let mut pass = true;
    for fold in 0..plan.k {
        let before = fit_fold(&m, Task::Multiclass, &learner, &plan, fold).unwrap();
        // every test row at once, then each test row alone
        let mut groups = vec![before.test_rows.clone()];
        groups.extend(before.test_rows.iter().map(|&r| vec![r]));
        for rows in groups {
            let mut mutated = m.clone();
            for &r in &rows {
                for c in 0..mutated.n_cols() {
                    mutated.set(r, c, Some(-7.5e5 - r as f64));
                }
                let l = &mut mutated.labels[r];
                l.class_id = 1 + l.class_id % 6;
                l.lifetime_minutes += 99_999;
            }
            let after = fit_fold(&mutated, Task::Multiclass, &learner, &plan, fold).unwrap();
            pass &= bits(&before.imputer.means) == bits(&after.imputer.means) && before.forest == after.forest;
            checked += 1;
        }
    }
    outcome(pass, format!("{checked} perturbations across {} folds", plan.k))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let record = |id: u8, name: &'static str, o: Outcome, results: &mut Vec<(u8, &str, Outcome)>| {
        println!(
            "C{id:<2} {:<4} {name}: {} [{:.0}s elapsed]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((id, name, o));
    };
    record(1, "oracle equivalence", c1_oracle(), &mut results);
    record(2, "unit values", c2_unit_values(), &mut results);
    record(3, "class labeling", c3_labels(), &mut results);
    record(4, "mixture fidelity", c4_mixture(), &mut results);
    let data: Vec<FeatureMatrix> = SEEDS.iter().map(|&s| five_cities(s)).collect();
    record(5, "learnability direction", c5_learnability(&data), &mut results);
    record(6, "diminishing returns", c6_diminishing_returns(&data), &mut results);
    let (pooled, s) = (&data[0], SEEDS[0]);
    let (c7, multiclass) = c7_subsets(pooled, s);
    record(7, "subset ordering", c7, &mut results);
    record(
        8,
        "generalization direction",
        c8_generalization(pooled, s),
        &mut results,
    );
    record(9, "importance coherence", c9_importance(pooled, s), &mut results);
    record(
        10,
        "binary superiority",
        c10_binary(pooled, s, &multiclass),
        &mut results,
    );
    record(11, "determinism", c11_determinism(), &mut results);
    record(12, "no leakage", c12_no_leakage(), &mut results);
    let secs = start.elapsed().as_secs_f64();
    record(
        13,
        "desk-scale budget",
        outcome(secs < 900.0, format!("{secs:.0}s of 900s")),
        &mut results,
    );

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("C{} {}", r.0, r.1))
        .collect();
    println!(
        "acceptance: {}/{} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
