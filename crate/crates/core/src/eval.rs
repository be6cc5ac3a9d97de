//! Evaluation: clustering accuracy under the best cluster-to-label matching,
//! random counting-query workloads and relative error.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryDataset, BinaryRecord};
use crate::{Error, Result};

/// Number of query-length regimes.
pub const SUBSETS: usize = 5;
pub const SANITY_FRACTION: f64 = 0.001;

/// Minimum-cost perfect matching on a square cost matrix. Returns, for each
/// row, its assigned column.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials over 1-based rows/columns, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            rows[p[j] - 1] = j - 1;
        }
    }
    rows
}

/// Largest total of a one-to-one row-to-column matching in a non-negative
/// (possibly rectangular) matrix.
pub fn max_matching_weight(weights: &[Vec<u64>]) -> u64 {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return 0;
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0) as f64;
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| max - weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as f64)
                .collect()
        })
        .collect();
    hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
        .sum()
}

/// Counts of `(cluster, label)` pairs, rows and columns in sorted id order.
pub fn contingency<A: Ord + Copy, B: Ord + Copy>(assignments: &[A], labels: &[B]) -> Vec<Vec<u64>> {
    let rows: BTreeMap<A, usize> = index_of(assignments);
    let cols: BTreeMap<B, usize> = index_of(labels);
    let mut table = vec![vec![0u64; cols.len()]; rows.len()];
    for (a, b) in assignments.iter().zip(labels) {
        table[rows[a]][cols[b]] += 1;
    }
    table
}

fn index_of<T: Ord + Copy>(ids: &[T]) -> BTreeMap<T, usize> {
    let mut map: BTreeMap<T, usize> = ids.iter().map(|&x| (x, 0)).collect();
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    map
}

/// Fraction of records whose label equals the label matched to their
/// cluster, under the best one-to-one matching.
pub fn clustering_accuracy(assignments: &[usize], labels: &[i64]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} assignments but {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::Validation("no records to score".into()));
    }
    let table = contingency(assignments, labels);
    Ok(max_matching_weight(&table) as f64 / assignments.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    /// The record holds at least one query item.
    #[default]
    Any,
    /// The record holds every query item.
    All,
}

impl std::str::FromStr for Semantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(Self::Any),
            "all" => Ok(Self::All),
            _ => Err(Error::Validation(format!("unknown query semantics {s:?} (use any or all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryWorkload {
    pub queries: Vec<Vec<usize>>,
    /// Length regime of each query, 1 to 5.
    pub subset: Vec<usize>,
    pub semantics: Semantics,
}

/// `total / 5` queries per regime `i`, lengths uniform on
/// `[1, ceil(i * max_l1 / 5)]` (capped at `m`), items without replacement.
pub fn generate_workload<R: Rng + ?Sized>(
    m: usize,
    max_l1: usize,
    total: usize,
    semantics: Semantics,
    rng: &mut R,
) -> Result<QueryWorkload> {
    if total == 0 || total % SUBSETS != 0 {
        return Err(Error::Domain(format!("query total must be a positive multiple of {SUBSETS}, got {total}")));
    }
    if max_l1 < SUBSETS {
        return Err(Error::Domain(format!("max_l1 must be at least {SUBSETS}, got {max_l1}")));
    }
    if m == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    let per = total / SUBSETS;
    let mut queries = Vec::with_capacity(total);
    let mut subset = Vec::with_capacity(total);
    for i in 1..=SUBSETS {
        let hi = (i * max_l1).div_ceil(SUBSETS).min(m);
        for _ in 0..per {
            let len = rng.random_range(1..=hi);
            let mut items = index::sample(rng, m, len).into_vec();
            items.sort_unstable();
            queries.push(items);
            subset.push(i);
        }
    }
    Ok(QueryWorkload {
        queries,
        subset,
        semantics,
    })
}

fn satisfies(record: &BinaryRecord, query: &[usize], semantics: Semantics) -> bool {
    let bits = record.bits();
    match semantics {
        Semantics::Any => query.iter().any(|&j| bits[j] == 1),
        Semantics::All => query.iter().all(|&j| bits[j] == 1),
    }
}

/// Number of records satisfying `query`.
pub fn counting_query(dataset: &BinaryDataset, query: &[usize], semantics: Semantics) -> Result<usize> {
    if let Some(&j) = query.iter().find(|&&j| j >= dataset.m()) {
        return Err(Error::Domain(format!("query item {j} outside [0, {})", dataset.m())));
    }
    Ok(dataset
        .records()
        .iter()
        .filter(|r| satisfies(r, query, semantics))
        .count())
}

/// `|synth - truth| / max(truth, 0.001 * dataset_size)`.
pub fn relative_error(truth: f64, synth: f64, dataset_size: usize) -> f64 {
    let s = SANITY_FRACTION * dataset_size as f64;
    let denom = truth.max(s);
    if denom == 0.0 {
        return if synth == truth { 0.0 } else { f64::INFINITY };
    }
    (synth - truth).abs() / denom
}

/// Expected count of `query` if items were independent with the given
/// marginals, on `n` records.
pub fn independent_count(marginals: &[f64], query: &[usize], semantics: Semantics, n: usize) -> f64 {
    let p = match semantics {
        Semantics::Any => 1.0 - query.iter().map(|&j| 1.0 - marginals[j]).product::<f64>(),
        Semantics::All => query.iter().map(|&j| marginals[j]).product::<f64>(),
    };
    n as f64 * p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub subset: usize,
    pub mean_rel_err: f64,
    pub n_queries: usize,
    /// Same queries answered by the independent-marginals reference.
    pub baseline_mean_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub semantics: Semantics,
    pub original_size: usize,
    pub synthetic_size: usize,
    pub sanity_bound: f64,
    pub n_queries: usize,
    pub subsets: Vec<SubsetResult>,
    /// Reference that treats items as independent with the original marginals.
    pub baseline: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
}

impl EvalReport {
    /// `subset,mean_rel_err,n_queries` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subset,mean_rel_err,n_queries\n");
        for s in &self.subsets {
            out.push_str(&format!("{},{},{}\n", s.subset, s.mean_rel_err, s.n_queries));
        }
        out
    }
}

/// Answers `workload` on both datasets. Synthetic counts are rescaled by
/// `|original| / |synthetic|` when the sizes differ.
pub fn evaluate(original: &BinaryDataset, synthetic: &BinaryDataset, workload: &QueryWorkload) -> Result<EvalReport> {
    if original.m() != synthetic.m() {
        return Err(Error::Validation(format!(
            "original has dimension {} but synthetic has {}",
            original.m(),
            synthetic.m()
        )));
    }
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::Validation("datasets must be non-empty".into()));
    }
    let n = original.len();
    let scale = n as f64 / synthetic.len() as f64;
    let marginals = original.marginals();
    let errors: Vec<(f64, f64)> = workload
        .queries
        .par_iter()
        .map(|q| {
            let truth = counting_query(original, q, workload.semantics)? as f64;
            let synth = counting_query(synthetic, q, workload.semantics)? as f64 * scale;
            let base = independent_count(&marginals, q, workload.semantics, n);
            Ok((relative_error(truth, synth, n), relative_error(truth, base, n)))
        })
        .collect::<Result<_>>()?;
    let mut subsets = Vec::new();
    for i in 1..=SUBSETS {
        let errs: Vec<&(f64, f64)> = errors
            .iter()
            .zip(&workload.subset)
            .filter(|(_, &s)| s == i)
            .map(|(e, _)| e)
            .collect();
        if errs.is_empty() {
            continue;
        }
        let k = errs.len() as f64;
        subsets.push(SubsetResult {
            subset: i,
            mean_rel_err: errs.iter().map(|e| e.0).sum::<f64>() / k,
            n_queries: errs.len(),
            baseline_mean_rel_err: errs.iter().map(|e| e.1).sum::<f64>() / k,
        });
    }
    Ok(EvalReport {
        semantics: workload.semantics,
        original_size: n,
        synthetic_size: synthetic.len(),
        sanity_bound: SANITY_FRACTION * n as f64,
        n_queries: workload.queries.len(),
        subsets,
        baseline: "independent marginals of the original data".into(),
        acc: None,
    })
}
