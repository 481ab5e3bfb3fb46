//! Randomized subset filtering: run the density filter on many random
//! subsets per subset size, count accept/reject votes per streamline, and
//! turn the acceptance rates into labels.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{Contributions, TargetDensityField};
use crate::error::{Error, Result};
use crate::filter::{sift_filter, FilterParams};
use crate::rng::{derive_seed, rng_for};

/// Number of filter runs for subset size `n`: `ceil(τ·M / n)`.
pub fn planned_runs(m: usize, n: usize, tau: u32) -> Result<usize> {
    if n == 0 || m == 0 || tau == 0 {
        return Err(Error::InvalidArgument(format!(
            "planned_runs needs positive M, n and τ (got {m}, {n}, {tau})"
        )));
    }
    if n > m {
        return Err(Error::InvalidArgument(format!("subset size {n} exceeds M = {m}")));
    }
    Ok((tau as usize * m).div_ceil(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsiftConfig {
    /// Subset sizes; empty means the default `{M, M/2, M/4, n_min}` schedule
    /// resolved by the caller.
    pub subset_sizes: Vec<usize>,
    pub tau: u32,
    pub master_seed: u64,
    pub filter: FilterParams,
    /// Fresh-seed retries per run after a degenerate subset.
    pub max_retries: u32,
}

impl Default for RsiftConfig {
    fn default() -> Self {
        RsiftConfig {
            subset_sizes: Vec::new(),
            tau: 5,
            master_seed: 0,
            filter: FilterParams::default(),
            max_retries: 3,
        }
    }
}

impl RsiftConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::InvalidArgument("τ must be >= 1".into()));
        }
        if self.subset_sizes.is_empty() {
            return Err(Error::InvalidArgument("no subset sizes".into()));
        }
        for &n in &self.subset_sizes {
            if n < 2 || n > m {
                return Err(Error::InvalidArgument(format!(
                    "subset size {n} outside [2, {m}]"
                )));
            }
        }
        let mut sorted = self.subset_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.subset_sizes.len() {
            return Err(Error::InvalidArgument("duplicate subset sizes".into()));
        }
        Ok(())
    }
}

/// `{M, M/2, M/4, n_min}`, descending and without duplicates.
pub fn default_subset_sizes(m: usize, n_min: usize) -> Vec<usize> {
    let mut sizes = vec![m, m / 2, m / 4, n_min];
    sizes.retain(|&n| n >= 2 && n <= m);
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    sizes
}

/// One filter run: the subset it saw and which members survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub subset_size: usize,
    pub run_index: usize,
    /// Retries spent before this subset filtered cleanly.
    pub attempt: u32,
    pub seed: u64,
    /// Sorted ascending.
    pub subset: Vec<usize>,
    /// Parallel to `subset`.
    pub accepted: Vec<bool>,
}

impl RunRecord {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "id,verdict")?;
        for (id, acc) in self.subset.iter().zip(&self.accepted) {
            writeln!(out, "{id},{}", if *acc { "accepted" } else { "rejected" })?;
        }
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("run_n{}_i{:04}.csv", self.subset_size, self.run_index)
    }

    pub fn read_csv(subset_size: usize, run_index: usize, input: impl BufRead) -> Result<Self> {
        let mut subset = Vec::new();
        let mut accepted = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "id,verdict" {
                    return Err(Error::Format(format!("unexpected run file header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (id, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad run file row {line:?}")))?;
            subset.push(id.trim().parse().map_err(|_| Error::Format(format!("bad id {id:?}")))?);
            accepted.push(match v.trim() {
                "accepted" => true,
                "rejected" => false,
                other => return Err(Error::Format(format!("bad verdict {other:?}"))),
            });
        }
        Ok(RunRecord { subset_size, run_index, attempt: 0, seed: 0, subset, accepted })
    }
}

/// Per-streamline positive/negative vote counters for every subset size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteLedger {
    m: usize,
    sizes: Vec<usize>,
    positive: Vec<Vec<u32>>,
    negative: Vec<Vec<u32>>,
    pub runs: Vec<RunRecord>,
}

impl VoteLedger {
    pub fn new(m: usize, sizes: Vec<usize>) -> Self {
        let positive = vec![vec![0; m]; sizes.len()];
        let negative = vec![vec![0; m]; sizes.len()];
        VoteLedger { m, sizes, positive, negative, runs: Vec::new() }
    }

    /// Rebuild counters by replaying run records.
    pub fn from_runs(m: usize, sizes: Vec<usize>, runs: Vec<RunRecord>) -> Result<Self> {
        let mut ledger = VoteLedger::new(m, sizes);
        for run in runs {
            ledger.record(run)?;
        }
        Ok(ledger)
    }

    pub fn record(&mut self, run: RunRecord) -> Result<()> {
        let k = self.size_index(run.subset_size)?;
        if run.subset.len() != run.accepted.len() {
            return Err(Error::ShapeMismatch("run verdicts do not match its subset".into()));
        }
        for (&id, &acc) in run.subset.iter().zip(&run.accepted) {
            if id >= self.m {
                return Err(Error::UnknownId(id));
            }
            if acc {
                self.positive[k][id] += 1;
            } else {
                self.negative[k][id] += 1;
            }
        }
        self.runs.push(run);
        Ok(())
    }

    pub fn n_streamlines(&self) -> usize {
        self.m
    }

    pub fn subset_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size_index(&self, n: usize) -> Result<usize> {
        self.sizes
            .iter()
            .position(|&s| s == n)
            .ok_or_else(|| Error::InvalidArgument(format!("subset size {n} not in ledger")))
    }

    /// `(P_n, N_n)` for one subset size.
    pub fn votes_at(&self, id: usize, n: usize) -> Result<(u32, u32)> {
        if id >= self.m {
            return Err(Error::UnknownId(id));
        }
        let k = self.size_index(n)?;
        Ok((self.positive[k][id], self.negative[k][id]))
    }

    /// `(P, N)` summed over all subset sizes.
    pub fn votes(&self, id: usize) -> Result<(u32, u32)> {
        if id >= self.m {
            return Err(Error::UnknownId(id));
        }
        Ok((0..self.sizes.len()).fold((0, 0), |(p, n), k| {
            (p + self.positive[k][id], n + self.negative[k][id])
        }))
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "id,n,P_n,N_n")?;
        for id in 0..self.m {
            for (k, &n) in self.sizes.iter().enumerate() {
                writeln!(out, "{id},{n},{},{}", self.positive[k][id], self.negative[k][id])?;
            }
        }
        Ok(())
    }

    /// Read counters back from [`write_csv`](Self::write_csv) output. Run
    /// records are not part of the CSV.
    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let mut rows: Vec<(usize, usize, u32, u32)> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "id,n,P_n,N_n" {
                    return Err(Error::Format(format!("unexpected ledger header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("bad ledger row {line:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            rows.push((
                f[0].trim().parse().map_err(|_| bad())?,
                f[1].trim().parse().map_err(|_| bad())?,
                f[2].trim().parse().map_err(|_| bad())?,
                f[3].trim().parse().map_err(|_| bad())?,
            ));
        }
        let m = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut sizes: Vec<usize> = Vec::new();
        for r in &rows {
            if !sizes.contains(&r.1) {
                sizes.push(r.1);
            }
        }
        let mut ledger = VoteLedger::new(m, sizes);
        for (id, n, p, q) in rows {
            let k = ledger.size_index(n)?;
            ledger.positive[k][id] = p;
            ledger.negative[k][id] = q;
        }
        Ok(ledger)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    SubsetSize(usize),
    Overall,
}

/// `P / (P + N)` in the requested scope; `None` when the streamline got no votes.
pub fn acceptance_rate(ledger: &VoteLedger, id: usize, scope: Scope) -> Result<Option<f64>> {
    let (p, n) = match scope {
        Scope::SubsetSize(s) => ledger.votes_at(id, s)?,
        Scope::Overall => ledger.votes(id)?,
    };
    Ok(ar_from_votes(p, n))
}

pub fn ar_from_votes(p: u32, n: u32) -> Option<f64> {
    (p + n > 0).then(|| p as f64 / (p + n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Plausible,
    Implausible,
    Inconclusive,
    Unvoted,
}

impl Label {
    pub fn from_votes(p: u32, n: u32) -> Label {
        match (p, n) {
            (0, 0) => Label::Unvoted,
            (_, 0) => Label::Plausible,
            (0, _) => Label::Implausible,
            _ => Label::Inconclusive,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Plausible => "plausible",
            Label::Implausible => "implausible",
            Label::Inconclusive => "inconclusive",
            Label::Unvoted => "unvoted",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "plausible" => Ok(Label::Plausible),
            "implausible" => Ok(Label::Implausible),
            "inconclusive" => Ok(Label::Inconclusive),
            "unvoted" => Ok(Label::Unvoted),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<Label>,
    pub ar: Vec<Option<f64>>,
}

impl LabelSet {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "id,AR,label")?;
        for (id, (l, ar)) in self.labels.iter().zip(&self.ar).enumerate() {
            match ar {
                Some(a) => writeln!(out, "{id},{a},{l}")?,
                None => writeln!(out, "{id},,{l}")?,
            }
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let mut labels = Vec::new();
        let mut ar = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "id,AR,label" {
                    return Err(Error::Format(format!("unexpected label header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Format(format!("bad label row {line:?}")));
            }
            if f[0].trim().parse::<usize>().ok() != Some(labels.len()) {
                return Err(Error::Format(format!("label ids not dense at {line:?}")));
            }
            ar.push(if f[1].is_empty() {
                None
            } else {
                Some(f[1].parse::<f64>().map_err(|_| Error::Format(format!("bad AR in {line:?}")))?)
            });
            labels.push(Label::parse(f[2].trim())?);
        }
        Ok(LabelSet { labels, ar })
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Labels from overall acceptance rates.
pub fn assign_labels(ledger: &VoteLedger) -> LabelSet {
    let (labels, ar) = (0..ledger.n_streamlines())
        .map(|id| {
            let (p, n) = ledger.votes(id).expect("id in range");
            (Label::from_votes(p, n), ar_from_votes(p, n))
        })
        .unzip();
    LabelSet { labels, ar }
}

fn subset_seed(master: u64, n: usize, run: usize, attempt: u32) -> u64 {
    derive_seed(master, &[n as u64, run as u64, attempt as u64])
}

fn random_subset(m: usize, n: usize, seed: u64) -> Vec<usize> {
    if n == m {
        return (0..m).collect();
    }
    let mut rng = rng_for(seed, &[]);
    let mut ids = sample(&mut rng, m, n).into_vec();
    ids.sort_unstable();
    ids
}

fn one_run(
    contributions: &Contributions,
    target: &TargetDensityField,
    config: &RsiftConfig,
    n: usize,
    run_index: usize,
) -> Result<RunRecord> {
    let m = contributions.len();
    let mut last_err = None;
    for attempt in 0..=config.max_retries {
        let seed = subset_seed(config.master_seed, n, run_index, attempt);
        let subset = random_subset(m, n, seed);
        match sift_filter(&subset, contributions, target, &config.filter) {
            Ok(outcome) => {
                let mut accepted = vec![false; subset.len()];
                // Both lists are in ascending id order.
                let mut j = 0;
                for (i, &id) in subset.iter().enumerate() {
                    if outcome.accepted.get(j) == Some(&id) {
                        accepted[i] = true;
                        j += 1;
                    }
                }
                return Ok(RunRecord { subset_size: n, run_index, attempt, seed, subset, accepted });
            }
            Err(Error::DegenerateSubset(msg)) => {
                log::warn!("subset n={n} run={run_index} attempt={attempt} degenerate: {msg}");
                last_err = Some(msg);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateSubset(format!(
        "run {run_index} at n={n} failed after {} retries: {}",
        config.max_retries,
        last_err.unwrap_or_default()
    )))
}

pub fn run_rsift(
    contributions: &Contributions,
    target: &TargetDensityField,
    config: &RsiftConfig,
) -> Result<VoteLedger> {
    run_rsift_with_progress(contributions, target, config, |_, _| {})
}

/// Runs within a subset size execute in parallel on the current rayon pool;
/// results are merged in run order so the ledger is independent of
/// scheduling. `progress(done, total)` is called after each run.
pub fn run_rsift_with_progress(
    contributions: &Contributions,
    target: &TargetDensityField,
    config: &RsiftConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<VoteLedger> {
    let m = contributions.len();
    config.validate(m)?;
    let plans: Vec<(usize, usize)> = config
        .subset_sizes
        .iter()
        .map(|&n| planned_runs(m, n, config.tau).map(|k| (n, k)))
        .collect::<Result<_>>()?;
    let total: usize = plans.iter().map(|p| p.1).sum();
    let done = AtomicUsize::new(0);
    let jobs: Vec<(usize, usize)> = plans
        .iter()
        .flat_map(|&(n, k)| (0..k).map(move |i| (n, i)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(n, i)| {
            let r = one_run(contributions, target, config, n, i);
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            r
        })
        .collect::<Result<_>>()?;
    VoteLedger::from_runs(m, config.subset_sizes.clone(), records)
}

/// Smallest `x` in `[lo, hi]` with `pred(x)`, assuming `pred` is monotone
/// (false then true). `None` if `pred(hi)` is false.
pub fn bisect_smallest(lo: usize, hi: usize, mut pred: impl FnMut(usize) -> bool) -> Option<usize> {
    if lo > hi || !pred(hi) {
        return None;
    }
    let (mut lo, mut hi) = (lo, hi);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    /// Required retention relative to the full-tractogram run.
    pub survivor_fraction: f64,
    pub seed: u64,
    pub filter: FilterParams,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams { survivor_fraction: 1.0, seed: 0, filter: FilterParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub n_min: usize,
    pub full_retained: usize,
    /// Every `(n, retained)` pair evaluated, in evaluation order.
    pub evaluations: Vec<(usize, usize)>,
}

/// Smallest subset size whose converged run still retains at least
/// `survivor_fraction` of what the full tractogram retains.
pub fn probe_min_subset_size(
    contributions: &Contributions,
    target: &TargetDensityField,
    params: &ProbeParams,
) -> Result<ProbeResult> {
    let m = contributions.len();
    if m < 2 {
        return Err(Error::InvalidArgument("probing needs at least 2 streamlines".into()));
    }
    let all: Vec<usize> = (0..m).collect();
    let full_retained = sift_filter(&all, contributions, target, &params.filter)?.accepted.len();
    let required = (params.survivor_fraction * full_retained as f64).ceil() as usize;
    let mut evaluations = Vec::new();
    let mut retained = |n: usize| -> usize {
        let seed = derive_seed(params.seed, &[0x9B, n as u64]);
        let subset = random_subset(m, n, seed);
        let r = match sift_filter(&subset, contributions, target, &params.filter) {
            Ok(o) => o.accepted.len(),
            Err(_) => 0,
        };
        evaluations.push((n, r));
        r
    };
    let n_min = bisect_smallest(2, m, |n| retained(n) >= required).ok_or(Error::NoMinSubsetSize)?;
    Ok(ProbeResult { n_min, full_retained, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_formula() {
        assert_eq!(planned_runs(10_000_000, 10_000_000, 5).unwrap(), 5);
        assert_eq!(planned_runs(10_000_000, 2_500_000, 5).unwrap(), 20);
        assert_eq!(planned_runs(100, 33, 5).unwrap(), 16);
        assert!(planned_runs(100, 0, 5).is_err());
        assert!(planned_runs(100, 101, 5).is_err());
    }

    #[test]
    fn ar_values() {
        assert_eq!(ar_from_votes(5, 0), Some(1.0));
        assert_eq!(ar_from_votes(2, 3), Some(0.4));
        assert_eq!(ar_from_votes(0, 0), None);
    }

    #[test]
    fn labels_from_votes() {
        assert_eq!(Label::from_votes(7, 0), Label::Plausible);
        assert_eq!(Label::from_votes(3, 4), Label::Inconclusive);
        assert_eq!(Label::from_votes(0, 2), Label::Implausible);
        assert_eq!(Label::from_votes(0, 0), Label::Unvoted);
    }

    #[test]
    fn ledger_records_and_replays() {
        let runs = vec![
            RunRecord { subset_size: 4, run_index: 0, attempt: 0, seed: 1, subset: vec![0, 1, 2, 3], accepted: vec![true, false, true, false] },
            RunRecord { subset_size: 2, run_index: 0, attempt: 0, seed: 2, subset: vec![1, 3], accepted: vec![true, false] },
            RunRecord { subset_size: 2, run_index: 1, attempt: 0, seed: 3, subset: vec![0, 1], accepted: vec![true, true] },
        ];
        let ledger = VoteLedger::from_runs(5, vec![4, 2], runs).unwrap();
        assert_eq!(ledger.votes(1).unwrap(), (2, 1));
        assert_eq!(ledger.votes_at(0, 2).unwrap(), (1, 0));
        assert_eq!(ledger.votes(4).unwrap(), (0, 0));
        let labels = assign_labels(&ledger);
        assert_eq!(
            labels.labels,
            vec![Label::Plausible, Label::Inconclusive, Label::Plausible, Label::Implausible, Label::Unvoted]
        );
        assert_eq!(acceptance_rate(&ledger, 1, Scope::Overall).unwrap(), Some(2.0 / 3.0));
        assert_eq!(acceptance_rate(&ledger, 1, Scope::SubsetSize(4)).unwrap(), Some(0.0));

        let mut csv = Vec::new();
        ledger.write_csv(&mut csv).unwrap();
        let back = VoteLedger::read_csv(&csv[..]).unwrap();
        for id in 0..5 {
            assert_eq!(back.votes(id).unwrap(), ledger.votes(id).unwrap());
        }

        let mut csv = Vec::new();
        labels.write_csv(&mut csv).unwrap();
        assert_eq!(LabelSet::read_csv(&csv[..]).unwrap(), labels);
    }

    #[test]
    fn run_file_round_trip() {
        let r = RunRecord { subset_size: 3, run_index: 7, attempt: 0, seed: 0, subset: vec![2, 5, 9], accepted: vec![false, true, true] };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(RunRecord::read_csv(3, 7, &buf[..]).unwrap(), r);
        assert_eq!(r.file_name(), "run_n3_i0007.csv");
    }

    #[test]
    fn bisection_matches_linear_scan() {
        for threshold in [2usize, 3, 17, 50, 99, 100] {
            let pred = |n: usize| n >= threshold;
            let scan = (2..=100).find(|&n| pred(n));
            assert_eq!(bisect_smallest(2, 100, pred), scan);
        }
        assert_eq!(bisect_smallest(2, 100, |_| false), None);
    }

    #[test]
    fn default_schedule() {
        assert_eq!(default_subset_sizes(500, 60), vec![500, 250, 125, 60]);
        assert_eq!(default_subset_sizes(500, 250), vec![500, 250, 125]);
    }

    #[test]
    fn config_validation() {
        let mut c = RsiftConfig { subset_sizes: vec![10, 5], ..RsiftConfig::default() };
        assert!(c.validate(10).is_ok());
        c.subset_sizes = vec![11];
        assert!(c.validate(10).is_err());
        c.subset_sizes = vec![1];
        assert!(c.validate(10).is_err());
        c.subset_sizes = vec![5, 5];
        assert!(c.validate(10).is_err());
    }
}
