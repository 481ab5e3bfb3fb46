use std::fs::File;
use std::io::BufReader;

use rsift::density::{build_target_field, Contributions, DirectionBins, TargetDensityField};
use rsift::engine::{
    acceptance_rate, assign_labels, planned_runs, probe_min_subset_size, run_rsift, Label, LabelSet, ProbeParams,
    RsiftConfig, RunRecord, Scope, VoteLedger,
};
use rsift::phantom::{build_fp_experiment, fp_total_for, generate_ground_truth, PhantomSpec};

fn problem() -> (Contributions, TargetDensityField) {
    let spec = PhantomSpec { n_bundles: 8, streamlines_per_bundle: 15, rng_seed: 21, ..Default::default() };
    let gt = generate_ground_truth(&spec).unwrap();
    let exp = build_fp_experiment(&gt, fp_total_for(gt.len()), 22).unwrap();
    let bins = DirectionBins::new(6).unwrap();
    let target = build_target_field(&gt, &bins).unwrap();
    (Contributions::compute(&exp.tractogram, &bins).unwrap(), target)
}

fn config(m: usize) -> RsiftConfig {
    RsiftConfig { subset_sizes: vec![m, m / 2, m / 4, m / 7], tau: 5, master_seed: 99, ..Default::default() }
}

#[test]
fn reference_run_counts() {
    assert_eq!(planned_runs(10_000_000, 10_000_000, 5).unwrap(), 5);
    assert_eq!(planned_runs(10_000_000, 2_500_000, 5).unwrap(), 20);
    assert_eq!(planned_runs(10, 3, 1).unwrap(), 4);
}

#[test]
fn votes_add_up_to_runs_times_subset_size() {
    let (c, t) = problem();
    let m = c.len();
    let cfg = config(m);
    let ledger = run_rsift(&c, &t, &cfg).unwrap();
    for &n in &cfg.subset_sizes {
        let k = planned_runs(m, n, cfg.tau).unwrap();
        assert_eq!(ledger.runs.iter().filter(|r| r.subset_size == n).count(), k);
        let total: u64 = (0..m)
            .map(|id| {
                let (p, q) = ledger.votes_at(id, n).unwrap();
                (p + q) as u64
            })
            .sum();
        assert_eq!(total, (k * n) as u64, "n={n}");
    }
    for run in &ledger.runs {
        assert_eq!(run.subset.len(), run.subset_size);
        assert!(run.subset.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn ledger_replays_from_run_files() {
    let (c, t) = problem();
    let m = c.len();
    let cfg = config(m);
    let ledger = run_rsift(&c, &t, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for run in &ledger.runs {
        run.write_csv(File::create(dir.path().join(run.file_name())).unwrap()).unwrap();
    }
    let mut runs = Vec::new();
    for original in &ledger.runs {
        let f = BufReader::new(File::open(dir.path().join(original.file_name())).unwrap());
        let mut r = RunRecord::read_csv(original.subset_size, original.run_index, f).unwrap();
        r.attempt = original.attempt;
        r.seed = original.seed;
        runs.push(r);
    }
    let replayed = VoteLedger::from_runs(m, cfg.subset_sizes.clone(), runs).unwrap();
    for id in 0..m {
        for &n in &cfg.subset_sizes {
            assert_eq!(replayed.votes_at(id, n).unwrap(), ledger.votes_at(id, n).unwrap());
        }
    }
    assert_eq!(replayed, ledger);

    let mut csv = Vec::new();
    ledger.write_csv(&mut csv).unwrap();
    let reread = VoteLedger::read_csv(csv.as_slice()).unwrap();
    for id in 0..m {
        assert_eq!(reread.votes(id).unwrap(), ledger.votes(id).unwrap());
    }
}

#[test]
fn thread_count_does_not_change_votes() {
    let (c, t) = problem();
    let cfg = config(c.len());
    let run_with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_rsift(&c, &t, &cfg).unwrap())
    };
    assert_eq!(run_with(1), run_with(4));
}

#[test]
fn labels_follow_overall_votes() {
    let (c, t) = problem();
    let ledger = run_rsift(&c, &t, &config(c.len())).unwrap();
    let labels = assign_labels(&ledger);
    for id in 0..c.len() {
        let (p, n) = ledger.votes(id).unwrap();
        let expected = match (p, n) {
            (0, 0) => Label::Unvoted,
            (_, 0) => Label::Plausible,
            (0, _) => Label::Implausible,
            _ => Label::Inconclusive,
        };
        assert_eq!(labels.labels[id], expected);
        let ar = acceptance_rate(&ledger, id, Scope::Overall).unwrap();
        assert_eq!(labels.ar[id], ar);
        if let Some(ar) = ar {
            assert_eq!(ar, p as f64 / (p + n) as f64);
        }
    }
    let mut csv = Vec::new();
    labels.write_csv(&mut csv).unwrap();
    assert_eq!(LabelSet::read_csv(csv.as_slice()).unwrap(), labels);
}

#[test]
fn probe_result_satisfies_its_own_predicate() {
    let (c, t) = problem();
    let params = ProbeParams { survivor_fraction: 0.5, seed: 3, ..Default::default() };
    let r = probe_min_subset_size(&c, &t, &params).unwrap();
    let required = (0.5 * r.full_retained as f64).ceil() as usize;
    let at_min = r.evaluations.iter().find(|e| e.0 == r.n_min).unwrap();
    assert!(at_min.1 >= required);
    if let Some(below) = r.evaluations.iter().find(|e| e.0 == r.n_min - 1) {
        assert!(below.1 < required);
    }
    assert_eq!(probe_min_subset_size(&c, &t, &params).unwrap(), r);
}
