//! Dataset-level topology statistics: per-class box summaries, scatter data,
//! node-count histograms and the pooled feature correlation matrix.

use crate::graph::{FAKE, REAL};
use crate::topo::TopoSummary;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_FEATURES: usize = 5;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("class {class} has {found} summaries; at least 2 per class are required")]
    TooFewSummaries { class: &'static str, found: usize },
    #[error("summary {graph_id} has label {label}; expected 0 or 1")]
    BadLabel { graph_id: String, label: u8 },
    #[error("cannot compute statistics of an empty sample")]
    EmptySample,
    #[error("csv: {0}")]
    Csv(String),
}

fn class_name(label: u8) -> &'static str {
    if label == FAKE {
        "fake"
    } else {
        "real"
    }
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Quantile of sorted data at `q`, interpolating linearly between the order
/// statistics at `(n − 1)·q`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(BoxStats {
        count: v.len(),
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
        // Summing in sorted order keeps the mean independent of input order.
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBoxStats {
    pub feature: String,
    pub real: BoxStats,
    pub fake: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub graph_id: String,
    pub label: u8,
    pub avg_degree: f64,
    pub mean_clustering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `HISTOGRAM_BINS + 1` increasing edges; the last bin is closed.
    pub bin_edges: Vec<f64>,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoReport {
    pub features: Vec<String>,
    pub boxstats: Vec<FeatureBoxStats>,
    /// Sorted by graph id.
    pub scatter: Vec<ScatterPoint>,
    pub node_count_histogram: Histogram,
    /// Pearson correlation over all graphs, rows and columns in `features` order.
    pub correlation: Vec<Vec<f64>>,
    /// Features with zero variance; their off-diagonal correlations are reported as 0.
    pub degenerate_features: Vec<String>,
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
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
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn histogram(summaries: &[TopoSummary]) -> Histogram {
    let counts: Vec<f64> = summaries.iter().map(|s| s.node_count as f64).collect();
    let lo = counts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 / HISTOGRAM_BINS as f64 };
    let bin_edges: Vec<f64> =
        (0..=HISTOGRAM_BINS).map(|k| if k == HISTOGRAM_BINS && hi > lo { hi } else { lo + k as f64 * width }).collect();
    let mut real = vec![0; HISTOGRAM_BINS];
    let mut fake = vec![0; HISTOGRAM_BINS];
    for (s, &c) in summaries.iter().zip(&counts) {
        let bin = (((c - lo) / width).floor() as usize).min(HISTOGRAM_BINS - 1);
        if s.label == FAKE {
            fake[bin] += 1;
        } else {
            real[bin] += 1;
        }
    }
    Histogram { bin_edges, real, fake }
}

/// Builds the full report. Requires at least two summaries of each class.
/// The result does not depend on the order of `summaries`.
pub fn build_report(summaries: &[TopoSummary]) -> Result<TopoReport, AnalysisError> {
    if let Some(s) = summaries.iter().find(|s| s.label > 1) {
        return Err(AnalysisError::BadLabel { graph_id: s.graph_id.clone(), label: s.label });
    }
    for label in [REAL, FAKE] {
        let found = summaries.iter().filter(|s| s.label == label).count();
        if found < 2 {
            return Err(AnalysisError::TooFewSummaries { class: class_name(label), found });
        }
    }
    // Canonical order makes floating-point accumulation order-independent.
    let mut sorted = summaries.to_vec();
    sorted.sort_by(|a, b| {
        a.graph_id.cmp(&b.graph_id).then(a.label.cmp(&b.label)).then_with(|| {
            a.values().iter().zip(b.values().iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let columns: Vec<Vec<f64>> = (0..NUM_FEATURES).map(|j| sorted.iter().map(|s| s.values()[j]).collect()).collect();
    let class_column =
        |j: usize, label: u8| -> Vec<f64> { sorted.iter().filter(|s| s.label == label).map(|s| s.values()[j]).collect() };

    let boxstats = TopoSummary::FEATURES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            Ok(FeatureBoxStats {
                feature: (*name).into(),
                real: box_stats(&class_column(j, REAL))?,
                fake: box_stats(&class_column(j, FAKE))?,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;

    let degenerate: Vec<bool> = columns.iter().map(|c| c.iter().all(|&x| x == c[0])).collect();
    let mut correlation = vec![vec![0.0; NUM_FEATURES]; NUM_FEATURES];
    for i in 0..NUM_FEATURES {
        correlation[i][i] = 1.0;
        for j in i + 1..NUM_FEATURES {
            let r = pearson(&columns[i], &columns[j]).unwrap_or(0.0);
            correlation[i][j] = r;
            correlation[j][i] = r;
        }
    }

    Ok(TopoReport {
        features: TopoSummary::FEATURES.iter().map(|s| (*s).into()).collect(),
        boxstats,
        scatter: sorted
            .iter()
            .map(|s| ScatterPoint {
                graph_id: s.graph_id.clone(),
                label: s.label,
                avg_degree: s.avg_degree,
                mean_clustering: s.mean_clustering,
            })
            .collect(),
        node_count_histogram: histogram(&sorted),
        correlation,
        degenerate_features: TopoSummary::FEATURES
            .iter()
            .zip(&degenerate)
            .filter(|(_, &d)| d)
            .map(|(n, _)| (*n).into())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    pub feature: String,
    pub mean_real: f64,
    pub mean_fake: f64,
    /// Sign of `mean_fake − mean_real`: −1, 0 or 1.
    pub direction: i8,
}

/// Descriptive class contrast per feature.
pub fn compare_classes(report: &TopoReport) -> Vec<ClassComparison> {
    report
        .boxstats
        .iter()
        .map(|b| {
            let (r, f) = (b.real.mean, b.fake.mean);
            let direction = if f > r {
                1
            } else if f < r {
                -1
            } else {
                0
            };
            ClassComparison { feature: b.feature.clone(), mean_real: r, mean_fake: f, direction }
        })
        .collect()
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| AnalysisError::Csv(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| AnalysisError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AnalysisError::Csv(e.to_string()))
}

pub const BOXSTATS_HEADER: [&str; 9] = ["feature", "class", "count", "min", "q1", "median", "q3", "max", "mean"];
pub const SCATTER_HEADER: [&str; 4] = ["graph_id", "label", "avg_degree", "mean_clustering"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["bin", "lower", "upper", "real", "fake"];

impl TopoReport {
    pub fn boxstats_csv(&self) -> Result<String, AnalysisError> {
        csv_string(|w| {
            w.write_record(BOXSTATS_HEADER)?;
            for b in &self.boxstats {
                for (class, s) in [("real", &b.real), ("fake", &b.fake)] {
                    w.write_record([
                        b.feature.clone(),
                        class.into(),
                        s.count.to_string(),
                        s.min.to_string(),
                        s.q1.to_string(),
                        s.median.to_string(),
                        s.q3.to_string(),
                        s.max.to_string(),
                        s.mean.to_string(),
                    ])?;
                }
            }
            Ok(())
        })
    }

    pub fn scatter_csv(&self) -> Result<String, AnalysisError> {
        csv_string(|w| {
            w.write_record(SCATTER_HEADER)?;
            for p in &self.scatter {
                w.write_record([p.graph_id.clone(), p.label.to_string(), p.avg_degree.to_string(), p.mean_clustering.to_string()])?;
            }
            Ok(())
        })
    }

    pub fn histogram_csv(&self) -> Result<String, AnalysisError> {
        let h = &self.node_count_histogram;
        csv_string(|w| {
            w.write_record(HISTOGRAM_HEADER)?;
            for k in 0..h.real.len() {
                w.write_record([
                    k.to_string(),
                    h.bin_edges[k].to_string(),
                    h.bin_edges[k + 1].to_string(),
                    h.real[k].to_string(),
                    h.fake[k].to_string(),
                ])?;
            }
            Ok(())
        })
    }

    /// Square matrix with a leading `feature` column.
    pub fn correlation_csv(&self) -> Result<String, AnalysisError> {
        csv_string(|w| {
            let mut header = vec!["feature".to_string()];
            header.extend(self.features.iter().cloned());
            w.write_record(&header)?;
            for (name, row) in self.features.iter().zip(&self.correlation) {
                let mut rec = vec![name.clone()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: &str, label: u8, values: [f64; 4], nodes: usize) -> TopoSummary {
        TopoSummary {
            graph_id: id.into(),
            label,
            avg_degree: values[0],
            mean_degree_centrality: values[1],
            mean_clustering: values[2],
            density: values[3],
            node_count: nodes,
        }
    }

    fn sample() -> Vec<TopoSummary> {
        vec![
            summary("a", 0, [1.8, 0.2, 0.0, 0.2], 10),
            summary("b", 0, [1.9, 0.1, 0.1, 0.1], 20),
            summary("c", 1, [2.4, 0.3, 0.4, 0.3], 12),
            summary("d", 1, [2.2, 0.15, 0.3, 0.12], 16),
            summary("e", 1, [2.6, 0.05, 0.5, 0.06], 40),
        ]
    }

    #[test]
    fn quartiles_by_interpolation() {
        let b = box_stats(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max, b.mean), (1.0, 2.0, 3.0, 4.0, 5.0, 3.0));
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (1.75, 2.5, 3.25));
        assert_eq!(box_stats(&[]), Err(AnalysisError::EmptySample));
    }

    #[test]
    fn self_and_linear_correlation() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(pearson(&x, &x), Some(1.0));
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 2.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[2.0; 4]), None);
    }

    #[test]
    fn node_count_linear_in_avg_degree() {
        let s: Vec<TopoSummary> = (0..6)
            .map(|k| {
                let n = 10 + 5 * k;
                summary(&format!("g{k}"), (k % 2) as u8, [0.5 * n as f64, 0.1, 0.1 * k as f64, 0.2], n)
            })
            .collect();
        let r = build_report(&s).unwrap();
        assert!((r.correlation[0][4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_shape_and_invariants() {
        let r = build_report(&sample()).unwrap();
        assert_eq!(r.boxstats.len(), NUM_FEATURES);
        assert_eq!(r.node_count_histogram.bin_edges.len(), HISTOGRAM_BINS + 1);
        assert_eq!(r.node_count_histogram.real.iter().sum::<usize>(), 2);
        assert_eq!(r.node_count_histogram.fake.iter().sum::<usize>(), 3);
        assert_eq!(r.node_count_histogram.fake[HISTOGRAM_BINS - 1], 1);
        for i in 0..NUM_FEATURES {
            assert_eq!(r.correlation[i][i], 1.0);
            for j in 0..NUM_FEATURES {
                assert_eq!(r.correlation[i][j], r.correlation[j][i]);
                assert!(r.correlation[i][j].abs() <= 1.0);
            }
        }
        let mut rev = sample();
        rev.reverse();
        assert_eq!(build_report(&rev).unwrap(), r);
    }

    #[test]
    fn class_box_stats_match_single_class() {
        let r = build_report(&sample()).unwrap();
        let fake_deg: Vec<f64> = sample().iter().filter(|s| s.label == 1).map(|s| s.avg_degree).collect();
        assert_eq!(r.boxstats[0].fake, box_stats(&fake_deg).unwrap());
    }

    #[test]
    fn degenerate_feature_flagged() {
        let mut s = sample();
        for x in &mut s {
            x.density = 0.25;
        }
        let r = build_report(&s).unwrap();
        assert_eq!(r.degenerate_features, vec!["density".to_string()]);
        assert_eq!(r.correlation[3], vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn too_few_per_class() {
        let s = &sample()[1..];
        assert_eq!(build_report(s).unwrap_err(), AnalysisError::TooFewSummaries { class: "real", found: 1 });
    }

    #[test]
    fn comparisons() {
        let r = build_report(&sample()).unwrap();
        let c = compare_classes(&r);
        assert_eq!(c.len(), 5);
        assert_eq!(c[0].direction, 1);
        let same: Vec<TopoSummary> =
            ["a", "b", "c", "d"].iter().enumerate().map(|(i, id)| summary(id, (i % 2) as u8, [2.0, 0.1, 0.2, 0.3], 9)).collect();
        assert!(compare_classes(&build_report(&same).unwrap()).iter().all(|c| c.direction == 0));
    }

    #[test]
    fn csv_layouts() {
        let r = build_report(&sample()).unwrap();
        let b = r.boxstats_csv().unwrap();
        assert!(b.starts_with("feature,class,count,min,q1,median,q3,max,mean\navg_degree,real,2,"));
        assert_eq!(b.lines().count(), 11);
        assert_eq!(r.scatter_csv().unwrap().lines().nth(1).unwrap(), "a,0,1.8,0");
        assert_eq!(r.histogram_csv().unwrap().lines().count(), HISTOGRAM_BINS + 1);
        let c = r.correlation_csv().unwrap();
        assert!(c.starts_with("feature,avg_degree,mean_degree_centrality,mean_clustering,density,node_count\n"));
        assert_eq!(c.lines().count(), 6);
    }
}
