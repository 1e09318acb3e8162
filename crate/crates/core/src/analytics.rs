//! Score distributions, category bands and paired bias metrics.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Corpus, Group, SentencePair};
use crate::scoring::ScoreMatrix;

pub const DEFAULT_GRID_SIZE: usize = 256;
/// Bands with fewer members than this are flagged as low support.
pub const LOW_SUPPORT: usize = 3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no values")]
    Empty,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("all {0} values are identical; render a point mass instead of a density")]
    PointMass(usize),
    #[error("density needs at least 2 values and a grid of at least 2 points")]
    TooFew,
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("model {model} has no score for: {}", .pending.join(", "))]
    Unscored { model: String, pending: Vec<String> },
    #[error("pair {0} is missing a base or stereotype side")]
    IncompletePair(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear interpolation between order statistics (the "inclusive" method):
/// position `p·(n−1)` in the sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite(bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

pub fn summary_stats(values: &[f64]) -> Result<Quartiles, AnalyticsError> {
    let sorted = sorted_finite(values)?;
    Ok(Quartiles {
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

/// Silverman's rule: `0.9 · min(σ, IQR/1.34) · n^(−1/5)`, falling back to σ
/// when the IQR is zero.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64, AnalyticsError> {
    let sorted = sorted_finite(values)?;
    let n = sorted.len() as f64;
    if sorted.len() < 2 {
        return Err(AnalyticsError::TooFew);
    }
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(AnalyticsError::PointMass(sorted.len()));
    }
    // Sum in sorted order so the result does not depend on input order.
    let mean = sorted.iter().sum::<f64>() / n;
    let sigma = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian KDE on `grid_size` evenly spaced points over `[min − 3h, max + 3h]`.
///
/// The curve is rescaled so its trapezoidal integral over the grid is exactly
/// one; without that the mass beyond the ±3h margins (up to ~0.13%) would be lost.
pub fn kde_density(values: &[f64], grid_size: usize) -> Result<Vec<(f64, f64)>, AnalyticsError> {
    if values.len() < 2 || grid_size < 2 {
        return Err(AnalyticsError::TooFew);
    }
    let h = silverman_bandwidth(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0] - 3.0 * h, sorted[sorted.len() - 1] + 3.0 * h);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * PI).sqrt());

    let mut points: Vec<(f64, f64)> = (0..grid_size)
        .map(|i| {
            let x = if i == grid_size - 1 { hi } else { lo + step * i as f64 };
            let y = sorted.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, y)
        })
        .collect();

    let mass = trapezoid(&points);
    for p in &mut points {
        p.1 /= mass;
    }
    Ok(points)
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub model_id: String,
    pub density: Vec<DensityPoint>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

fn model_values<'a>(
    matrix: &'a ScoreMatrix,
    corpus: &'a Corpus,
    model_id: &'a str,
    keep: impl Fn(&crate::dataset::SentenceRecord) -> bool + 'a,
) -> Result<Vec<f64>, AnalyticsError> {
    let model = matrix.model(model_id).ok_or_else(|| AnalyticsError::UnknownModel(model_id.to_string()))?;
    Ok(corpus
        .records()
        .iter()
        .filter(|r| keep(r))
        .filter_map(|r| model.scores.get(&r.id).map(|s| s.pll))
        .collect())
}

/// Density and quartiles of one model's corpus scores (probes never contribute).
pub fn distribution_summary(
    matrix: &ScoreMatrix,
    corpus: &Corpus,
    model_id: &str,
    grid_size: usize,
) -> Result<DistributionSummary, AnalyticsError> {
    let values = model_values(matrix, corpus, model_id, |_| true)?;
    let q = summary_stats(&values)?;
    let density = kde_density(&values, grid_size)?.into_iter().map(|(x, y)| DensityPoint { x, y }).collect();
    Ok(DistributionSummary { model_id: model_id.to_string(), density, median: q.median, q1: q.q1, q3: q.q3, n: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBand {
    pub model_id: String,
    pub category: String,
    pub group: Option<Group>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
    pub low_support: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub bands: Vec<CategoryBand>,
    pub diagnostics: Vec<String>,
}

/// Median/IQR bands per (model, category), or per (model, category, group)
/// when `split_by_group` is set. Models follow registration order.
pub fn category_bands(
    matrix: &ScoreMatrix,
    corpus: &Corpus,
    categories: &[String],
    split_by_group: bool,
) -> Result<Bands, AnalyticsError> {
    if let Some(unknown) = categories.iter().find(|c| !corpus.categories().contains(c)) {
        return Err(AnalyticsError::UnknownCategory(unknown.clone()));
    }
    let groups: Vec<Option<Group>> =
        if split_by_group { vec![Some(Group::Base), Some(Group::Stereotype)] } else { vec![None] };

    let mut out = Bands::default();
    for model_id in matrix.model_ids() {
        for category in categories {
            for &group in &groups {
                let values = model_values(matrix, corpus, model_id, |r| {
                    &r.category == category && group.is_none_or(|g| r.group == g)
                })?;
                let label = match group {
                    Some(g) => format!("{category}/{g}"),
                    None => category.clone(),
                };
                if values.is_empty() {
                    out.diagnostics.push(format!("model {model_id}: category {label} has no scored sentences"));
                    continue;
                }
                let q = summary_stats(&values)?;
                out.bands.push(CategoryBand {
                    model_id: model_id.to_string(),
                    category: category.clone(),
                    group,
                    median: q.median,
                    q1: q.q1,
                    q3: q.q3,
                    n: values.len(),
                    low_support: values.len() < LOW_SUPPORT,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub preference_rate: f64,
    pub n_pairs: usize,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub model_id: String,
    pub per_category: BTreeMap<String, BiasStats>,
    pub overall: BiasStats,
}

fn side_mean(matrix: &ScoreMatrix, ids: &[String], model_id: &str, pending: &mut Vec<String>) -> f64 {
    let mut sum = 0.0;
    for id in ids {
        match matrix.pll(id, model_id) {
            Some(v) => sum += v,
            None => pending.push(id.clone()),
        }
    }
    sum / ids.len() as f64
}

/// Mean stereotype PLL minus mean base PLL over the pair's members.
pub fn pairwise_delta(matrix: &ScoreMatrix, pair: &SentencePair, model_id: &str) -> Result<f64, AnalyticsError> {
    if !matrix.contains_model(model_id) {
        return Err(AnalyticsError::UnknownModel(model_id.to_string()));
    }
    if pair.base_ids.is_empty() || pair.stereotype_ids.is_empty() {
        return Err(AnalyticsError::IncompletePair(pair.pair_id.clone()));
    }
    let mut pending = Vec::new();
    let stereotype = side_mean(matrix, &pair.stereotype_ids, model_id, &mut pending);
    let base = side_mean(matrix, &pair.base_ids, model_id, &mut pending);
    if !pending.is_empty() {
        return Err(AnalyticsError::Unscored { model: model_id.to_string(), pending });
    }
    Ok(stereotype - base)
}

fn contribution(stereotype: f64, base: f64) -> f64 {
    if stereotype > base {
        1.0
    } else if stereotype < base {
        0.0
    } else {
        0.5
    }
}

#[derive(Default)]
struct Accumulator {
    contributions: f64,
    deltas: f64,
    n: usize,
}

impl Accumulator {
    fn stats(&self) -> BiasStats {
        let n = self.n.max(1) as f64;
        BiasStats { preference_rate: self.contributions / n, n_pairs: self.n, mean_delta: self.deltas / n }
    }
}

/// Fraction of pairs (ties count half) where the stereotype side scores higher.
/// 0.5 is the zero-bias reference.
pub fn stereotype_preference_rate(matrix: &ScoreMatrix, corpus: &Corpus, model_id: &str) -> Result<BiasReport, AnalyticsError> {
    if !matrix.contains_model(model_id) {
        return Err(AnalyticsError::UnknownModel(model_id.to_string()));
    }
    let mut pending = Vec::new();
    let mut per_category: BTreeMap<String, Accumulator> = BTreeMap::new();
    let mut overall = Accumulator::default();
    for pair in corpus.pairs() {
        if pair.base_ids.is_empty() || pair.stereotype_ids.is_empty() {
            return Err(AnalyticsError::IncompletePair(pair.pair_id.clone()));
        }
        let stereotype = side_mean(matrix, &pair.stereotype_ids, model_id, &mut pending);
        let base = side_mean(matrix, &pair.base_ids, model_id, &mut pending);
        let c = contribution(stereotype, base);
        let delta = stereotype - base;
        for acc in [per_category.entry(pair.category.clone()).or_default(), &mut overall] {
            acc.contributions += c;
            acc.deltas += delta;
            acc.n += 1;
        }
    }
    if !pending.is_empty() {
        return Err(AnalyticsError::Unscored { model: model_id.to_string(), pending });
    }
    Ok(BiasReport {
        model_id: model_id.to_string(),
        per_category: per_category.into_iter().map(|(k, acc)| (k, acc.stats())).collect(),
        overall: overall.stats(),
    })
}

/// Label used for the whole-corpus row of the CSV table.
pub const OVERALL: &str = "overall";

/// `model_id,category,preference_rate,n_pairs,mean_delta`, one row per category
/// plus an `overall` row per report.
pub fn bias_reports_to_csv(reports: &[BiasReport]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["model_id", "category", "preference_rate", "n_pairs", "mean_delta"])
        .expect("in-memory write");
    for report in reports {
        let rows = report.per_category.iter().map(|(c, s)| (c.as_str(), s)).chain([(OVERALL, &report.overall)]);
        for (category, stats) in rows {
            writer
                .write_record([
                    report.model_id.as_str(),
                    category,
                    &stats.preference_rate.to_string(),
                    &stats.n_pairs.to_string(),
                    &stats.mean_delta.to_string(),
                ])
                .expect("in-memory write");
        }
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}
