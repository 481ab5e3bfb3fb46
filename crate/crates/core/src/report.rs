//! Tables and summary statistics: acceptance-rate bins, vote combinations,
//! length histograms, confusion matrices and correlations. Every writer emits
//! plain CSV with a header row.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{Scope, VoteLedger};
use crate::error::{Error, Result};

/// Acceptance-rate bins. Interior bins exclude their lower bound and include
/// their upper bound; 0 and 1 have bins of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArBin {
    Zero,
    To20,
    To40,
    To60,
    To80,
    Below100,
    Full,
}

impl ArBin {
    pub const ALL: [ArBin; 7] = [
        ArBin::Zero,
        ArBin::To20,
        ArBin::To40,
        ArBin::To60,
        ArBin::To80,
        ArBin::Below100,
        ArBin::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArBin::Zero => "0%",
            ArBin::To20 => "(0,20]%",
            ArBin::To40 => "(20,40]%",
            ArBin::To60 => "(40,60]%",
            ArBin::To80 => "(60,80]%",
            ArBin::Below100 => "(80,100)%",
            ArBin::Full => "100%",
        }
    }

    pub fn of(ar: f64) -> ArBin {
        if ar <= 0.0 {
            ArBin::Zero
        } else if ar >= 1.0 {
            ArBin::Full
        } else if ar <= 0.2 {
            ArBin::To20
        } else if ar <= 0.4 {
            ArBin::To40
        } else if ar <= 0.6 {
            ArBin::To60
        } else if ar <= 0.8 {
            ArBin::To80
        } else {
            ArBin::Below100
        }
    }

    /// Bin of `p / (p + n)` decided in integer arithmetic. `None` if unvoted.
    pub fn of_votes(p: u32, n: u32) -> Option<ArBin> {
        let total = u64::from(p) + u64::from(n);
        if total == 0 {
            return None;
        }
        let p = u64::from(p);
        Some(if p == 0 {
            ArBin::Zero
        } else if p == total {
            ArBin::Full
        } else if 5 * p <= total {
            ArBin::To20
        } else if 5 * p <= 2 * total {
            ArBin::To40
        } else if 5 * p <= 3 * total {
            ArBin::To60
        } else if 5 * p <= 4 * total {
            ArBin::To80
        } else {
            ArBin::Below100
        })
    }
}

/// Fractions of voted streamlines per AR bin, one column per scope or group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArBinTable {
    pub columns: Vec<String>,
    /// `counts[column][bin]`.
    pub counts: Vec<[usize; 7]>,
}

impl ArBinTable {
    pub fn from_columns(columns: Vec<(String, Vec<ArBin>)>) -> Self {
        let mut names = Vec::with_capacity(columns.len());
        let mut counts = Vec::with_capacity(columns.len());
        for (name, bins) in columns {
            let mut c = [0usize; 7];
            for b in bins {
                c[b as usize] += 1;
            }
            names.push(name);
            counts.push(c);
        }
        ArBinTable { columns: names, counts }
    }

    pub fn total(&self, column: usize) -> usize {
        self.counts[column].iter().sum()
    }

    /// Fraction of the column's voted streamlines in `bin`; NaN for an empty column.
    pub fn fraction(&self, column: usize, bin: ArBin) -> f64 {
        self.counts[column][bin as usize] as f64 / self.total(column) as f64
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows are bins; each column gives the fraction, plus a trailing row of
    /// voted counts.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        write!(out, "ar_bin")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for bin in ArBin::ALL {
            write!(out, "{}", bin.name())?;
            for c in 0..self.columns.len() {
                write!(out, ",{:.6}", self.fraction(c, bin))?;
            }
            writeln!(out)?;
        }
        write!(out, "n_voted")?;
        for c in 0..self.columns.len() {
            write!(out, ",{}", self.total(c))?;
        }
        writeln!(out)?;
        Ok(())
    }
}

fn votes_in(ledger: &VoteLedger, id: usize, scope: Scope) -> Result<(u32, u32)> {
    match scope {
        Scope::SubsetSize(n) => ledger.votes_at(id, n),
        Scope::Overall => ledger.votes(id),
    }
}

fn bins_for(ledger: &VoteLedger, ids: &[usize], scope: Scope) -> Result<Vec<ArBin>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let (p, n) = votes_in(ledger, id, scope)?;
        out.extend(ArBin::of_votes(p, n));
    }
    Ok(out)
}

/// One column per subset size (`n=…`) and a final `overall` column over
/// `ids`, or over every streamline when `ids` is `None`.
pub fn ar_distribution(ledger: &VoteLedger, ids: Option<&[usize]>) -> Result<ArBinTable> {
    let all: Vec<usize>;
    let ids = match ids {
        Some(ids) => ids,
        None => {
            all = (0..ledger.n_streamlines()).collect();
            &all
        }
    };
    let mut columns = Vec::new();
    for &n in ledger.subset_sizes() {
        columns.push((format!("n={n}"), bins_for(ledger, ids, Scope::SubsetSize(n))?));
    }
    columns.push(("overall".to_string(), bins_for(ledger, ids, Scope::Overall)?));
    Ok(ArBinTable::from_columns(columns))
}

/// One column per group (for example truth label or replication count) in
/// the given scope. Groups keep the order they are passed in.
pub fn ar_distribution_by_group(
    ledger: &VoteLedger,
    groups: &[(String, Vec<usize>)],
    scope: Scope,
) -> Result<ArBinTable> {
    let columns = groups
        .iter()
        .map(|(name, ids)| Ok((name.clone(), bins_for(ledger, ids, scope)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ArBinTable::from_columns(columns))
}

/// Group ids by a key, keys sorted ascending.
pub fn group_ids<K: Ord + Clone>(keys: &[K]) -> BTreeMap<K, Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (id, k) in keys.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(id);
    }
    groups
}

/// Streamlines with exactly `exact_votes` votes in a scope, broken down by
/// positive count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteCombinationTable {
    pub exact_votes: u32,
    /// `counts[p]` = streamlines with `p` positive and `exact_votes − p` negative votes.
    pub counts: Vec<usize>,
}

impl VoteCombinationTable {
    pub fn included(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn fraction(&self, positive: u32) -> f64 {
        self.counts[positive as usize] as f64 / self.included() as f64
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "combination,P,N,count,fraction")?;
        for p in (0..=self.exact_votes).rev() {
            let n = self.exact_votes - p;
            writeln!(out, "P:{p} N:{n},{p},{n},{},{:.6}", self.counts[p as usize], self.fraction(p))?;
        }
        Ok(())
    }
}

pub fn vote_combination_table(
    ledger: &VoteLedger,
    ids: Option<&[usize]>,
    scope: Scope,
    exact_votes: u32,
) -> Result<VoteCombinationTable> {
    let mut counts = vec![0usize; exact_votes as usize + 1];
    let mut visit = |id: usize| -> Result<()> {
        let (p, n) = votes_in(ledger, id, scope)?;
        if p + n == exact_votes {
            counts[p as usize] += 1;
        }
        Ok(())
    };
    match ids {
        Some(ids) => ids.iter().try_for_each(|&id| visit(id))?,
        None => (0..ledger.n_streamlines()).try_for_each(&mut visit)?,
    }
    Ok(VoteCombinationTable { exact_votes, counts })
}

/// Per-group length histograms on shared bins `[k·w, (k+1)·w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistograms {
    pub bin_width: f64,
    pub groups: Vec<String>,
    /// `counts[group][bin]`.
    pub counts: Vec<Vec<usize>>,
}

impl LengthHistograms {
    pub fn n_bins(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }

    /// Lower edge of the first bin where `negative` outnumbers `positive`
    /// and no later bin has more positives than negatives.
    pub fn crossover(&self, positive: usize, negative: usize) -> Option<f64> {
        let (p, n) = (&self.counts[positive], &self.counts[negative]);
        let last_pos_majority = (0..self.n_bins()).rev().find(|&b| p[b] > n[b]);
        let start = last_pos_majority.map_or(0, |b| b + 1);
        (start..self.n_bins())
            .find(|&b| n[b] > p[b])
            .map(|b| b as f64 * self.bin_width)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        write!(out, "length_from_mm,length_to_mm")?;
        for g in &self.groups {
            write!(out, ",{g}")?;
        }
        writeln!(out)?;
        for b in 0..self.n_bins() {
            write!(out, "{},{}", b as f64 * self.bin_width, (b + 1) as f64 * self.bin_width)?;
            for c in &self.counts {
                write!(out, ",{}", c[b])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Histogram `lengths[i]` into the group named `groups[i]`; `None` skips the
/// streamline. Group columns are sorted by name.
pub fn length_histograms(lengths: &[f64], groups: &[Option<String>], bin_width: f64) -> Result<LengthHistograms> {
    if lengths.len() != groups.len() {
        return Err(Error::ShapeMismatch("lengths and groups differ in length".into()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {bin_width} must be positive")));
    }
    let mut names: Vec<String> = groups.iter().flatten().cloned().collect();
    names.sort();
    names.dedup();
    let bin_of = |l: f64| (l / bin_width).floor().max(0.0) as usize;
    let n_bins = lengths
        .iter()
        .zip(groups)
        .filter(|(_, g)| g.is_some())
        .map(|(&l, _)| bin_of(l) + 1)
        .max()
        .unwrap_or(0);
    let mut counts = vec![vec![0usize; n_bins]; names.len()];
    for (&l, g) in lengths.iter().zip(groups) {
        if let Some(g) = g {
            let gi = names.binary_search(g).expect("name collected above");
            counts[gi][bin_of(l)] += 1;
        }
    }
    Ok(LengthHistograms { bin_width, groups: names, counts })
}

/// Confusion matrix and per-class rates of a classifier against reference labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub class_names: Vec<String>,
    /// `counts[predicted][truth]`.
    pub counts: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Per-class true rate (recall): TPR, TNR, TIR for plausible,
    /// implausible, inconclusive.
    pub true_rates: Vec<f64>,
}

impl ClassificationReport {
    /// Column-normalized matrix: each truth column sums to 1.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        let k = self.class_names.len();
        let col: Vec<usize> = (0..k).map(|t| (0..k).map(|p| self.counts[p][t]).sum()).collect();
        (0..k)
            .map(|p| (0..k).map(|t| self.counts[p][t] as f64 / col[t] as f64).collect())
            .collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        write!(out, "predicted\\truth")?;
        for n in &self.class_names {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
        for (p, row) in self.normalized().iter().enumerate() {
            write!(out, "{}", self.class_names[p])?;
            for v in row {
                write!(out, ",{v:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn classification_report(truth: &[usize], predicted: &[usize], class_names: &[String]) -> Result<ClassificationReport> {
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch("truth and predictions differ in length".into()));
    }
    let k = class_names.len();
    let mut counts = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!("class index out of range for {k} classes")));
        }
        counts[p][t] += 1;
    }
    let correct: usize = (0..k).map(|c| counts[c][c]).sum();
    let true_rates = (0..k)
        .map(|t| counts[t][t] as f64 / (0..k).map(|p| counts[p][t]).sum::<usize>() as f64)
        .collect();
    Ok(ClassificationReport {
        class_names: class_names.to_vec(),
        counts,
        accuracy: correct as f64 / truth.len() as f64,
        true_rates,
    })
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    if scores.len() != positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with mid-ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}
