//! Density-matching streamline filter.
//!
//! The cost of a set of streamlines is `C = Σ (λ·TD − μ)²` over all cells,
//! where `TD` is the set's binned track density, `μ` the target field and
//! `λ` a global scale refitted in closed form. Streamlines are removed one at
//! a time, always the one whose removal lowers `C` the most, until the best
//! available reduction is no longer significant.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::density::{Contributions, TargetDensityField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    Optimal,
}

/// Closed-form minimizer `λ* = Σ μ·TD / Σ TD²`.
pub fn optimal_lambda(td: &[f64], mu: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (t, m) in td.iter().zip(mu) {
        num += m * t;
        den += t * t;
    }
    (den > 0.0).then(|| num / den)
}

/// Cost and the λ it was evaluated at.
pub fn cost(td: &[f64], mu: &[f64], lambda: Lambda) -> Result<(f64, f64)> {
    if td.len() != mu.len() {
        return Err(Error::ShapeMismatch(format!(
            "density has {} cells, target {}",
            td.len(),
            mu.len()
        )));
    }
    let lambda = match lambda {
        Lambda::Fixed(l) => l,
        Lambda::Optimal => optimal_lambda(td, mu).ok_or_else(|| {
            Error::DegenerateSubset("track density is zero everywhere".into())
        })?,
    };
    let c = td
        .iter()
        .zip(mu)
        .map(|(t, m)| {
            let r = lambda * t - m;
            r * r
        })
        .sum();
    Ok((c, lambda))
}

/// Running track density of a subset of streamlines.
#[derive(Debug, Clone)]
pub struct ContributionTable<'a> {
    contributions: &'a Contributions,
    td: Vec<f64>,
    present: Vec<bool>,
}

impl<'a> ContributionTable<'a> {
    pub fn new(contributions: &'a Contributions, ids: &[usize]) -> Result<Self> {
        let mut present = vec![false; contributions.len()];
        for &id in ids {
            if id >= contributions.len() {
                return Err(Error::UnknownId(id));
            }
            if present[id] {
                return Err(Error::InvalidArgument(format!("id {id} appears twice in the subset")));
            }
            present[id] = true;
        }
        let td = contributions.density(ids.iter().copied());
        Ok(ContributionTable { contributions, td, present })
    }

    pub fn td(&self) -> &[f64] {
        &self.td
    }

    pub fn contains(&self, id: usize) -> bool {
        self.present.get(id).copied().unwrap_or(false)
    }

    pub fn remove(&mut self, id: usize) -> Result<()> {
        if !self.contains(id) {
            return Err(Error::UnknownId(id));
        }
        for &(c, l) in self.contributions.of(id) {
            self.td[c as usize] -= l;
        }
        self.present[id] = false;
        Ok(())
    }

    fn delta_unchecked(&self, id: usize, mu: &[f64], lambda: f64) -> f64 {
        self.contributions
            .of(id)
            .iter()
            .map(|&(c, l)| {
                let c = c as usize;
                let dl = lambda * l;
                dl * (dl - 2.0 * (lambda * self.td[c] - mu[c]))
            })
            .sum()
    }
}

/// Exact change in cost if `id` were removed, λ held fixed.
pub fn removal_delta(id: usize, table: &ContributionTable<'_>, mu: &[f64], lambda: f64) -> Result<f64> {
    if !table.contains(id) {
        return Err(Error::UnknownId(id));
    }
    Ok(table.delta_unchecked(id, mu, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Stop once the best reduction is smaller than `epsilon_rel · C / count`.
    pub epsilon_rel: f64,
    /// Refit λ after this many removals; `None` means `max(1, n / 100)`.
    pub refit_every: Option<usize>,
    /// Stop early once this many streamlines remain.
    pub target_count: Option<usize>,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { epsilon_rel: 0.1, refit_every: None, target_count: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    TargetCount,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalStep {
    pub id: usize,
    pub delta: f64,
    pub lambda: f64,
    pub cost_before: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Surviving ids, in input order.
    pub accepted: Vec<usize>,
    /// Removed ids, in removal order.
    pub rejected: Vec<usize>,
    pub steps: Vec<RemovalStep>,
    /// Cost after the initial fit, after every removal and after every refit.
    pub cost_trace: Vec<f64>,
    pub final_cost: f64,
    pub final_lambda: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl FilterOutcome {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "id,verdict,removal_rank,delta_cost")?;
        let mut rows: Vec<(usize, String)> = self
            .accepted
            .iter()
            .map(|&id| (id, format!("{id},accepted,,")))
            .chain(
                self.steps
                    .iter()
                    .enumerate()
                    .map(|(rank, s)| (s.id, format!("{},rejected,{},{:e}", s.id, rank, s.delta))),
            )
            .collect();
        rows.sort_by_key(|r| r.0);
        for (_, r) in rows {
            writeln!(out, "{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    delta: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so that BinaryHeap pops the most negative delta, then lowest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .delta
            .total_cmp(&self.delta)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Fit {
    lambda: f64,
    cost: f64,
}

/// Refit λ* and recompute the cost, visiting only cells the subset touches.
fn fit(table: &ContributionTable<'_>, touched: &[u32], target: &TargetDensityField) -> Result<Fit> {
    let mu = target.mu();
    let (mut num, mut den, mut mu_touched) = (0.0, 0.0, 0.0);
    for &c in touched {
        let (t, m) = (table.td[c as usize], mu[c as usize]);
        num += m * t;
        den += t * t;
        mu_touched += m * m;
    }
    if den <= 0.0 || num <= 0.0 {
        return Err(Error::DegenerateSubset(
            "subset density does not overlap the target".into(),
        ));
    }
    let lambda = num / den;
    let mut c_touched = 0.0;
    for &c in touched {
        let r = lambda * table.td[c as usize] - mu[c as usize];
        c_touched += r * r;
    }
    let cost = (target.mu_sq_sum() - mu_touched).max(0.0) + c_touched;
    Ok(Fit { lambda, cost })
}

/// Greedily remove streamlines from `subset` until convergence.
///
/// Candidates sit in a lazy min-heap keyed by their last computed ΔC. With λ
/// fixed, removing a streamline can only raise the ΔC of others, so a stored
/// key never overstates a candidate's benefit. A popped candidate is rescored
/// and taken only if it still beats the next stored key; the heap is rebuilt
/// whenever λ is refitted.
pub fn sift_filter(
    subset: &[usize],
    contributions: &Contributions,
    target: &TargetDensityField,
    params: &FilterParams,
) -> Result<FilterOutcome> {
    if subset.is_empty() {
        return Err(Error::DegenerateSubset("empty subset".into()));
    }
    if contributions.n_cells() != target.n_cells() {
        return Err(Error::ShapeMismatch("contributions and target use different cell layouts".into()));
    }
    let mut table = ContributionTable::new(contributions, subset)?;
    let mu = target.mu();

    let touched: Vec<u32> = {
        let mut seen = vec![false; target.n_cells()];
        let mut out = Vec::new();
        for &id in subset {
            for &(c, _) in contributions.of(id) {
                if !seen[c as usize] {
                    seen[c as usize] = true;
                    out.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    };

    let refit_every = params
        .refit_every
        .unwrap_or(subset.len() / 100)
        .max(1);
    let floor = params.target_count.unwrap_or(1).max(1);

    let Fit { mut lambda, mut cost } = fit(&table, &touched, target)?;
    let mut cost_trace = vec![cost];
    let mut steps = Vec::new();
    let mut remaining = subset.len();
    let mut since_refit = 0;
    let mut iterations = 0;

    let rebuild = |table: &ContributionTable<'_>, lambda: f64| -> BinaryHeap<Candidate> {
        subset
            .iter()
            .filter(|&&id| table.contains(id))
            .map(|&id| Candidate { delta: table.delta_unchecked(id, mu, lambda), id })
            .collect()
    };
    let mut heap = rebuild(&table, lambda);

    let termination = loop {
        if remaining <= floor {
            break if params.target_count.is_some() {
                Termination::TargetCount
            } else {
                Termination::Exhausted
            };
        }
        iterations += 1;

        let best = loop {
            let Some(top) = heap.pop() else { break None };
            if !table.contains(top.id) {
                continue;
            }
            let fresh = Candidate { delta: table.delta_unchecked(top.id, mu, lambda), id: top.id };
            let wins = fresh.delta.to_bits() == top.delta.to_bits()
                || heap.peek().is_none_or(|next| fresh >= *next);
            if wins {
                break Some(fresh);
            }
            heap.push(fresh);
        };
        let Some(best) = best else { break Termination::Exhausted };

        if best.delta > -params.epsilon_rel * cost / remaining as f64 {
            break Termination::Converged;
        }

        steps.push(RemovalStep { id: best.id, delta: best.delta, lambda, cost_before: cost });
        table.remove(best.id)?;
        remaining -= 1;
        cost += best.delta;
        cost_trace.push(cost);

        since_refit += 1;
        if since_refit == refit_every {
            since_refit = 0;
            let f = fit(&table, &touched, target)?;
            lambda = f.lambda;
            cost = f.cost;
            cost_trace.push(cost);
            heap = rebuild(&table, lambda);
        }
    };

    let accepted: Vec<usize> = subset.iter().copied().filter(|&id| table.contains(id)).collect();
    let rejected = steps.iter().map(|s| s.id).collect();
    Ok(FilterOutcome {
        accepted,
        rejected,
        steps,
        cost_trace,
        final_cost: cost,
        final_lambda: lambda,
        iterations,
        termination,
    })
}
