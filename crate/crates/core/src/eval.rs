//! Task metrics, the exact 1-D Wasserstein distance, WD-Diff curves and
//! feature dumps.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{project_all, PreparedPairs, ProjectorSpec};
use crate::numcore::ParamSet;
use crate::trainer::RunHistory;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Candidates of one query as `(score, relevant)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    pub query_id: String,
    pub candidates: Vec<(f64, bool)>,
}

impl RankedQuery {
    /// Relevance flags in rank order: descending score, ties by input index.
    fn ranked(&self) -> Vec<bool> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (self.candidates[a].0 + 0.0, self.candidates[b].0 + 0.0);
            sb.total_cmp(&sa).then(a.cmp(&b))
        });
        order.into_iter().map(|i| self.candidates[i].1).collect()
    }

    /// `None` when the query has no relevant candidate.
    pub fn average_precision(&self) -> Option<f64> {
        let mut hits = 0usize;
        let mut total = 0.0;
        for (rank, rel) in self.ranked().into_iter().enumerate() {
            if rel {
                hits += 1;
                total += hits as f64 / (rank + 1) as f64;
            }
        }
        (hits > 0).then(|| total / hits as f64)
    }

    pub fn reciprocal_rank(&self) -> Option<f64> {
        self.ranked()
            .into_iter()
            .position(|rel| rel)
            .map(|r| 1.0 / (r + 1) as f64)
    }
}

fn mean_over_answerable(queries: &[RankedQuery], f: impl Fn(&RankedQuery) -> Option<f64>) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Data("no queries".into()));
    }
    if let Some(q) = queries.iter().find(|q| q.candidates.is_empty()) {
        return Err(Error::Data(format!("query `{}` has no candidates", q.query_id)));
    }
    let vals: Vec<f64> = queries.iter().filter_map(f).collect();
    if vals.is_empty() {
        return Err(Error::Data("no query has a relevant candidate".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean of per-query average precision. Queries without any relevant
/// candidate are left out of the mean.
pub fn mean_average_precision(queries: &[RankedQuery]) -> Result<f64> {
    mean_over_answerable(queries, RankedQuery::average_precision)
}

pub fn mean_reciprocal_rank(queries: &[RankedQuery]) -> Result<f64> {
    mean_over_answerable(queries, RankedQuery::reciprocal_rank)
}

/// Groups scored candidates by query id, in order of first appearance.
pub fn group_queries(query_ids: &[String], scores: &[f64], relevance: &[usize]) -> Result<Vec<RankedQuery>> {
    if query_ids.len() != scores.len() || scores.len() != relevance.len() {
        return Err(Error::Data("query ids, scores and labels differ in length".into()));
    }
    let mut out: Vec<RankedQuery> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for ((q, &s), &r) in query_ids.iter().zip(scores).zip(relevance) {
        let i = *slot.entry(q.clone()).or_insert_with(|| {
            out.push(RankedQuery {
                query_id: q.clone(),
                candidates: Vec::new(),
            });
            out.len() - 1
        });
        out[i].candidates.push((s, r == 1));
    }
    Ok(out)
}

/// Exact Wasserstein-1 distance between two equal-size empirical samples on
/// the real line: mean absolute difference of the sorted samples.
pub fn w1_empirical_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Data(format!(
            "sample sizes differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::Data("empty samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite sample".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// Per-epoch `baseline.wd_estimate - regularized.wd_estimate`.
pub fn wd_diff(baseline: &RunHistory, regularized: &RunHistory) -> Result<Vec<f64>> {
    let (a, b) = (baseline.records(), regularized.records());
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "histories have {} and {} epochs",
            a.len(),
            b.len()
        )));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x.wd_estimate, y.wd_estimate) {
            (Some(p), Some(q)) => Ok(p - q),
            _ => Err(Error::Data(format!("epoch {} has no Wasserstein estimate", x.epoch))),
        })
        .collect()
}

pub fn write_wd_diff(path: &Path, baseline: &RunHistory, diff: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,wd_diff").map_err(io)?;
    for (rec, d) in baseline.records().iter().zip(diff) {
        writeln!(w, "{},{}", rec.epoch, d).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `domain,pair_index,f1..fK` with an X row then a Y row per pair.
pub fn dump_features(params: &ParamSet, spec: &ProjectorSpec, data: &PreparedPairs, path: &Path) -> Result<()> {
    let features = project_all(params, spec, data)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let cols: Vec<String> = (1..=features.k()).map(|i| format!("f{i}")).collect();
    writeln!(w, "domain,pair_index,{}", cols.join(",")).map_err(io)?;
    for i in 0..features.len() {
        let p = features.pair(i);
        for (domain, h) in [("X", &p.hx), ("Y", &p.hy)] {
            let vals: Vec<String> = h.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{domain},{i},{}", vals.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// One `metric=… value=… n_examples=…` report line.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: &'static str,
    pub value: f64,
    /// `n_examples` or `n_queries`.
    pub count_field: &'static str,
    pub count: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "metric={} value={:.6} {}={}",
            self.metric, self.value, self.count_field, self.count
        )
    }
}
