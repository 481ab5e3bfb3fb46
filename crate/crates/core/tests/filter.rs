use rand::seq::SliceRandom;
use rand::Rng as _;
use rsift::density::{build_target_field, Contributions, DirectionBins, TargetDensityField};
use rsift::filter::{cost, optimal_lambda, sift_filter, ContributionTable, FilterParams, Lambda, Termination};
use rsift::phantom::{build_fp_experiment, fp_total_for, generate_ground_truth, PhantomSpec};
use rsift::rng::rng_for;
use rsift::tractogram::{Grid, Streamline, Tractogram};

struct Fixture {
    gt: Tractogram,
    contributions: Contributions,
    target: TargetDensityField,
}

fn fp_fixture() -> Fixture {
    let spec = PhantomSpec { n_bundles: 10, streamlines_per_bundle: 20, rng_seed: 5, ..Default::default() };
    let gt = generate_ground_truth(&spec).unwrap();
    let exp = build_fp_experiment(&gt, fp_total_for(gt.len()), 6).unwrap();
    let bins = DirectionBins::new(6).unwrap();
    let target = build_target_field(&gt, &bins).unwrap();
    let contributions = Contributions::compute(&exp.tractogram, &bins).unwrap();
    Fixture { gt, contributions, target }
}

fn random_subset(m: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..m).collect();
    ids.shuffle(&mut rng_for(seed, &[]));
    ids.truncate(n);
    ids.sort_unstable();
    ids
}

#[test]
fn cost_trace_never_increases() {
    let f = fp_fixture();
    let m = f.contributions.len();
    let mut removals = 0;
    for (i, n) in [m, m / 2, m / 4, m / 8].into_iter().enumerate() {
        for run in 0..3 {
            let subset = random_subset(m, n, (i * 10 + run) as u64);
            let out = sift_filter(&subset, &f.contributions, &f.target, &FilterParams::default()).unwrap();
            removals += out.steps.len();
            for w in out.cost_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-15 * w[0].abs(), "n={n}: cost rose {} -> {}", w[0], w[1]);
            }
        }
    }
    assert!(removals > 0);
}

#[test]
fn recorded_deltas_match_scratch_recomputation() {
    let f = fp_fixture();
    let m = f.contributions.len();
    let mu = f.target.mu();
    for (seed, n) in [(1, m), (2, m / 3)] {
        let subset = random_subset(m, n, seed);
        let out = sift_filter(&subset, &f.contributions, &f.target, &FilterParams::default()).unwrap();
        assert!(!out.steps.is_empty());
        let mut remaining = subset.clone();
        let mut worst = 0.0f64;
        for step in &out.steps {
            let before = f.contributions.density(remaining.iter().copied());
            let (c_before, _) = cost(&before, mu, Lambda::Fixed(step.lambda)).unwrap();
            remaining.retain(|&id| id != step.id);
            let after = f.contributions.density(remaining.iter().copied());
            let (c_after, _) = cost(&after, mu, Lambda::Fixed(step.lambda)).unwrap();
            worst = worst.max(((c_after - c_before) - step.delta).abs());
            assert!((c_before - step.cost_before).abs() < 1e-9);
        }
        assert!(worst < 1e-9, "largest ΔC discrepancy {worst:e}");
        assert_eq!(remaining, out.accepted);
        let td = f.contributions.density(remaining.iter().copied());
        let (c_final, _) = cost(&td, mu, Lambda::Fixed(out.final_lambda)).unwrap();
        assert!((c_final - out.final_cost).abs() < 1e-9);
    }
}

/// Golden-section minimization of the cost over λ.
fn golden_lambda(td: &[f64], mu: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let c = |l: f64| cost(td, mu, Lambda::Fixed(l)).unwrap().0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if c(a) < c(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (lo + hi) / 2.0
}

#[test]
fn closed_form_lambda_matches_golden_section() {
    let f = fp_fixture();
    let m = f.contributions.len();
    let mu = f.target.mu();
    for seed in 0..5 {
        let subset = random_subset(m, m / (seed as usize + 1), seed);
        let td = f.contributions.density(subset.iter().copied());
        let closed = optimal_lambda(&td, mu).unwrap();
        let searched = golden_lambda(&td, mu, 0.0, 10.0 * closed);
        assert!((closed - searched).abs() <= 1e-6 * closed, "{closed} vs {searched}");
        let (c_opt, l) = cost(&td, mu, Lambda::Optimal).unwrap();
        assert_eq!(l, closed);
        for scale in [0.9, 0.99, 1.01, 1.1] {
            assert!(cost(&td, mu, Lambda::Fixed(closed * scale)).unwrap().0 >= c_opt);
        }
    }
}

#[test]
fn greedy_beats_random_removal_orders() {
    let f = fp_fixture();
    let m = f.contributions.len();
    let mu = f.target.mu();
    let all: Vec<usize> = (0..m).collect();
    let out = sift_filter(&all, &f.contributions, &f.target, &FilterParams::default()).unwrap();
    let removed = out.rejected.len();
    assert!(removed > 0);
    let mut rng = rng_for(77, &[]);
    let mut best_random = f64::INFINITY;
    for _ in 0..1000 {
        let mut order = all.clone();
        order.shuffle(&mut rng);
        let kept = &order[removed..];
        let td = f.contributions.density(kept.iter().copied());
        best_random = best_random.min(cost(&td, mu, Lambda::Optimal).unwrap().0);
    }
    assert!(out.final_cost < best_random, "greedy {} vs best random {}", out.final_cost, best_random);
}

#[test]
fn reference_subset_is_a_fixpoint() {
    let f = fp_fixture();
    let contributions = Contributions::compute(&f.gt, &f.target.bins).unwrap();
    let all: Vec<usize> = (0..f.gt.len()).collect();
    let out = sift_filter(&all, &contributions, &f.target, &FilterParams::default()).unwrap();
    assert!(out.final_cost < 1e-20);
    // Only exact ties (ΔC = 0) could ever be removed from a perfect fit.
    assert!(out.steps.iter().all(|s| s.delta >= -1e-18), "{:?}", out.steps.first());
    assert!(out.rejected.is_empty());
    assert_eq!(out.termination, Termination::Converged);
}

#[test]
fn disjoint_excess_streamline_goes_first() {
    let grid = Grid::new([16, 16, 16], 1.0).unwrap();
    let bins = DirectionBins::new(6).unwrap();
    let mut rng = rng_for(12, &[]);
    let mut reference = Vec::new();
    for _ in 0..20 {
        let y = rng.gen_range(2.0..6.0);
        let z = rng.gen_range(2.0..6.0);
        reference.push(Streamline::from_coords(&[[0.5, y, z], [8.0, y + 0.3, z], [15.5, y, z + 0.2]]).unwrap());
    }
    let target = build_target_field(&Tractogram::new(reference.clone(), grid).unwrap(), &bins).unwrap();
    let mut candidates = reference.clone();
    // Over-represent part of the bundle, then add one streamline far away.
    candidates.extend(reference[..6].iter().cloned());
    let stray = candidates.len();
    candidates.push(Streamline::from_coords(&[[1.0, 12.0, 12.0], [7.0, 13.0, 12.5], [14.0, 12.5, 13.0]]).unwrap());
    let t = Tractogram::new(candidates, grid).unwrap();
    let contributions = Contributions::compute(&t, &bins).unwrap();
    let all: Vec<usize> = (0..t.len()).collect();
    let out = sift_filter(&all, &contributions, &target, &FilterParams::default()).unwrap();
    assert_eq!(out.rejected.first(), Some(&stray));
}

#[test]
fn contribution_table_tracks_density() {
    let f = fp_fixture();
    let subset = random_subset(f.contributions.len(), 300, 4);
    let mut table = ContributionTable::new(&f.contributions, &subset).unwrap();
    for &id in &subset[..100] {
        table.remove(id).unwrap();
    }
    let scratch = f.contributions.density(subset[100..].iter().copied());
    for (a, b) in table.td().iter().zip(&scratch) {
        assert!((a - b).abs() < 1e-9);
    }
}
