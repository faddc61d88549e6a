//! Bias, spread and classification metrics against phantom ground truth.
//!
//! Relative bias per realization is `(estimate - truth) / truth`; voxels in
//! the noise region use a denominator of 1. Aggregates over `N` realizations
//! are the mean bias, the mean squared bias and the sample standard deviation.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ParametricMap;
use crate::kinetics::KineticParams;
use crate::phantom::Truth;

pub const K1_ABNORMAL_THRESHOLD: f64 = 0.3;
pub const K1_NORMAL_THRESHOLD: f64 = 0.6;

/// Relative bias of `[K1, k2]`.
pub fn voxel_bias(estimate: KineticParams, truth: KineticParams, noise_region: bool) -> Result<[f64; 2]> {
    if !(truth.k1.is_finite() && truth.k2.is_finite()) {
        return Err(Error::invalid("truth parameters must be finite"));
    }
    let rel = |e: f64, t: f64| {
        if noise_region {
            e - t
        } else {
            (e - t) / t
        }
    };
    if !noise_region && (truth.k1 == 0.0 || truth.k2 == 0.0) {
        return Err(Error::invalid("zero truth outside the noise region"));
    }
    Ok([rel(estimate.k1, truth.k1), rel(estimate.k2, truth.k2)])
}

/// Per-voxel biases of one realization.
pub fn map_biases(map: &ParametricMap, truth: &Truth) -> Result<Vec<[f64; 2]>> {
    if map.entries.len() != truth.params.len() {
        return Err(Error::invalid(format!(
            "map has {} voxels, truth has {}",
            map.entries.len(),
            truth.params.len()
        )));
    }
    map.entries
        .iter()
        .zip(truth.params.iter().zip(&truth.noise))
        .map(|(e, (&t, &noise))| voxel_bias(e.params, t, noise))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub mean: f64,
    pub mean_sq: f64,
    /// Sample standard deviation; absent for a single realization.
    pub std: Option<f64>,
}

impl BiasStats {
    pub fn from_samples(b: &[f64]) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::invalid("no realizations"));
        }
        let nf = n as f64;
        let mean = b.iter().sum::<f64>() / nf;
        let mean_sq = b.iter().map(|v| v * v).sum::<f64>() / nf;
        let std = (n >= 2).then(|| (b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt());
        Ok(Self { mean, mean_sq, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    K1,
    K2,
}

impl Param {
    pub const ALL: [Param; 2] = [Param::K1, Param::K2];

    pub fn name(self) -> &'static str {
        match self {
            Param::K1 => "K1",
            Param::K2 => "k2",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Lower-median summaries of one parameter over the voxels of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub region: u32,
    pub param: Param,
    pub voxels: usize,
    pub median_mean: f64,
    pub median_mean_sq: f64,
    pub median_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub realizations: usize,
    pub region_id: Vec<u32>,
    /// Indexed `[voxel][param]`.
    pub voxels: Vec<[BiasStats; 2]>,
    pub roi: Vec<RoiSummary>,
}

/// Lower median (element `(n - 1) / 2` of the sorted values). NaN sorts last.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Aggregates `biases[realization][voxel]` into per-voxel and per-region statistics.
pub fn aggregate_bias(biases: &[Vec<[f64; 2]>], region_id: &[u32]) -> Result<BiasReport> {
    let n = biases.len();
    if n == 0 {
        return Err(Error::invalid("aggregate_bias needs at least one realization"));
    }
    let nv = region_id.len();
    if let Some(bad) = biases.iter().position(|b| b.len() != nv) {
        return Err(Error::invalid(format!(
            "realization {bad} has {} voxels, expected {nv}",
            biases[bad].len()
        )));
    }
    let voxels: Vec<[BiasStats; 2]> = (0..nv)
        .into_par_iter()
        .map(|i| {
            let k1: Vec<f64> = biases.iter().map(|b| b[i][0]).collect();
            let k2: Vec<f64> = biases.iter().map(|b| b[i][1]).collect();
            Ok([BiasStats::from_samples(&k1)?, BiasStats::from_samples(&k2)?])
        })
        .collect::<Result<_>>()?;

    let mut regions: Vec<u32> = region_id.to_vec();
    regions.sort_unstable();
    regions.dedup();
    let mut roi = Vec::new();
    for &r in &regions {
        let members: Vec<&[BiasStats; 2]> =
            voxels.iter().zip(region_id).filter(|(_, &id)| id == r).map(|(s, _)| s).collect();
        for p in Param::ALL {
            let col = |f: fn(&BiasStats) -> f64| members.iter().map(|s| f(&s[p.index()])).collect::<Vec<_>>();
            let stds: Option<Vec<f64>> = members.iter().map(|s| s[p.index()].std).collect();
            roi.push(RoiSummary {
                region: r,
                param: p,
                voxels: members.len(),
                median_mean: lower_median(&col(|s| s.mean)).unwrap_or(f64::NAN),
                median_mean_sq: lower_median(&col(|s| s.mean_sq)).unwrap_or(f64::NAN),
                median_std: stds.and_then(|s| lower_median(&s)),
            });
        }
    }
    Ok(BiasReport {
        realizations: n,
        region_id: region_id.to_vec(),
        voxels,
        roi,
    })
}

impl BiasReport {
    pub fn column(&self, p: Param, f: impl Fn(&BiasStats) -> Option<f64>) -> Vec<f64> {
        self.voxels.iter().filter_map(|s| f(&s[p.index()])).collect()
    }

    /// Lower median of the per-voxel standard deviation over all voxels.
    pub fn median_std(&self, p: Param) -> Option<f64> {
        if self.realizations < 2 {
            return None;
        }
        lower_median(&self.column(p, |s| s.std))
    }

    pub fn roi_summary(&self, region: u32, p: Param) -> Option<&RoiSummary> {
        self.roi.iter().find(|r| r.region == region && r.param == p)
    }

    pub fn write_voxel_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = crate::io::csv_writer(w);
        wtr.write_record(["voxel", "region", "param", "mean_bias", "mean_sq_bias", "std_bias"])?;
        for (i, (stats, region)) in self.voxels.iter().zip(&self.region_id).enumerate() {
            for p in Param::ALL {
                let s = &stats[p.index()];
                wtr.write_record([
                    i.to_string(),
                    region.to_string(),
                    p.name().to_string(),
                    s.mean.to_string(),
                    s.mean_sq.to_string(),
                    s.std.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_roi_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = crate::io::csv_writer(w);
        wtr.write_record(["region", "param", "voxels", "median_mean_bias", "median_mean_sq_bias", "median_std_bias"])?;
        for r in &self.roi {
            wtr.write_record([
                r.region.to_string(),
                r.param.name().to_string(),
                r.voxels.to_string(),
                r.median_mean.to_string(),
                r.median_mean_sq.to_string(),
                r.median_std.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum K1Class {
    Noise = 0,
    Abnormal = 1,
    Normal = 2,
}

impl K1Class {
    pub const ALL: [K1Class; 3] = [K1Class::Noise, K1Class::Abnormal, K1Class::Normal];

    pub fn of(k1: f64) -> Self {
        if k1 < K1_ABNORMAL_THRESHOLD {
            K1Class::Noise
        } else if k1 < K1_NORMAL_THRESHOLD {
            K1Class::Abnormal
        } else {
            K1Class::Normal
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            K1Class::Noise => "NOISE",
            K1Class::Abnormal => "ABNORMAL",
            K1Class::Normal => "NORMAL",
        }
    }
}

pub fn classify_k1(k1_map: &[f64]) -> Result<Vec<K1Class>> {
    k1_map
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if k.is_finite() {
                Ok(K1Class::of(k))
            } else {
                Err(Error::invalid(format!("K1 at voxel {i} is not finite")))
            }
        })
        .collect()
}

/// Reference classes: noise voxels are NOISE, kinetic voxels are classified by true K1.
pub fn truth_classes(truth: &Truth) -> Vec<K1Class> {
    truth
        .params
        .iter()
        .zip(&truth.noise)
        .map(|(p, &noise)| if noise { K1Class::Noise } else { K1Class::of(p.k1) })
        .collect()
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: K1Class, predicted: K1Class) -> usize {
        self.counts[truth as usize][predicted as usize]
    }

    /// Fraction of voxels of each true class classified correctly; `None` for absent classes.
    pub fn correct_rate(&self, class: K1Class) -> Option<f64> {
        let row = &self.counts[class as usize];
        let total: usize = row.iter().sum();
        (total > 0).then(|| row[class as usize] as f64 / total as f64)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = crate::io::csv_writer(w);
        wtr.write_record(["truth", "NOISE", "ABNORMAL", "NORMAL", "correct_rate"])?;
        for c in K1Class::ALL {
            let row = &self.counts[c as usize];
            wtr.write_record([
                c.name().to_string(),
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
                self.correct_rate(c).map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn misclassification_table(labels: &[K1Class], truth: &[K1Class]) -> Result<ConfusionMatrix> {
    if labels.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} truth voxels",
            labels.len(),
            truth.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (&l, &t) in labels.iter().zip(truth) {
        m.counts[t as usize][l as usize] += 1;
    }
    Ok(m)
}

/// Human-readable summary of a bias report and an optional pooled confusion matrix.
pub fn text_summary(report: &BiasReport, confusion: Option<&ConfusionMatrix>, region_names: &[(u32, String)]) -> String {
    let name = |r: u32| {
        region_names
            .iter()
            .find(|(id, _)| *id == r)
            .map(|(_, n)| n.clone())
            .unwrap_or_else(|| format!("region {r}"))
    };
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let mut s = String::new();
    let _ = writeln!(s, "realizations: {}", report.realizations);
    for p in Param::ALL {
        let _ = writeln!(s, "median std of {} bias over all voxels: {}", p.name(), fmt_opt(report.median_std(p)));
    }
    for r in &report.roi {
        let _ = writeln!(
            s,
            "{:<12} {:<3} voxels={:<5} median mean bias={:.4} median mean sq bias={:.4} median std={}",
            name(r.region),
            r.param.name(),
            r.voxels,
            r.median_mean,
            r.median_mean_sq,
            fmt_opt(r.median_std)
        );
    }
    if let Some(m) = confusion {
        for c in K1Class::ALL {
            let _ = writeln!(s, "{} correct rate: {}", c.name(), fmt_opt(m.correct_rate(c)));
        }
    }
    s
}
