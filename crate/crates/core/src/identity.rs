//! FaceDistance: cosine distance to a subject's mean face vector, plus the
//! ranking, filtering and distribution tooling built on it.


use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on `|‖e‖ - 1|` accepted by [`face_distance`].
pub const UNIT_TOLERANCE: f64 = 1e-3;

/// Share of failed detections above which a checkpoint counts as diverged.
pub const DIVERGENCE_FAILURE_RATE: f64 = 0.20;

/// Mode gap below which two checkpoints are reported as indistinguishable.
pub const INDISTINGUISHABLE_MODE_GAP: f64 = 0.01;

const KDE_GRID_POINTS: usize = 512;
const MIN_BANDWIDTH: f64 = 1e-4;

fn round6<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

fn round6_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => round6(v, s),
        None => s.serialize_none(),
    }
}

fn round6_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| (x * 1e6).round() / 1e6))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v / ‖v‖`; fails on empty, zero or non-finite vectors.
pub fn unit_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if v.is_empty() || !n.is_finite() || n < 1e-12 {
        return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn check_unit(e: &[f64], dim: usize) -> Result<()> {
    if e.len() != dim {
        return Err(Error::invalid(format!(
            "embedding has {} dimensions, profile has {dim}",
            e.len()
        )));
    }
    let n = l2_norm(e);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!("embedding norm {n} is not 1")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A subject's mean face vector and how far each reference sits from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub subject_id: String,
    pub mean_vector: Vec<f64>,
    pub reference_distances: Vec<f64>,
    pub n_references: usize,
}

/// Normalized arithmetic mean of the reference embeddings.
pub fn build_profile(subject_id: &str, embeddings: &[Vec<f64>]) -> Result<ReferenceProfile> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid("no reference embeddings"))?;
    let dim = first.len();
    for e in embeddings {
        check_unit(e, dim)?;
    }
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let n = embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = l2_norm(&mean);
    if norm < 1e-6 {
        return Err(Error::DegenerateProfile(format!(
            "mean of {} embeddings has norm {norm:e}",
            embeddings.len()
        )));
    }
    let mean_vector: Vec<f64> = mean.iter().map(|m| m / norm).collect();
    let reference_distances = embeddings
        .iter()
        .map(|e| (1.0 - dot(e, &mean_vector)).clamp(0.0, 2.0))
        .collect();
    Ok(ReferenceProfile {
        subject_id: subject_id.to_owned(),
        mean_vector,
        reference_distances,
        n_references: embeddings.len(),
    })
}

/// `1 - e · v̄`, in `[0, 2]`.
pub fn face_distance(e: &[f64], profile: &ReferenceProfile) -> Result<f64> {
    check_unit(e, profile.mean_vector.len())?;
    Ok((1.0 - dot(e, &profile.mean_vector)).clamp(0.0, 2.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    #[serde(serialize_with = "round6")]
    pub distance: f64,
    pub rank: usize,
    /// `100 * rank / n`.
    #[serde(serialize_with = "round6")]
    pub percentile: f64,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub policy: FilterPolicy,
    pub discarded: usize,
    /// Distance threshold in quantile mode.
    #[serde(default, serialize_with = "round6_opt", skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Items in ascending distance; ranks are `1..=n`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub items: Vec<RankedItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSummary>,
}

impl RankingReport {
    pub fn kept(&self) -> impl Iterator<Item = &RankedItem> {
        self.items.iter().filter(|i| i.kept)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "distance", "rank", "percentile", "kept", "reason"])
            .expect("in-memory csv write");
        for it in &self.items {
            w.write_record([
                it.id.clone(),
                format!("{:.6}", it.distance),
                it.rank.to_string(),
                format!("{:.6}", it.percentile),
                it.kept.to_string(),
                it.reason.clone().unwrap_or_default(),
            ])
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv of utf-8 fields")
    }
}

/// Sorts candidates by FaceDistance, ties broken by id.
pub fn rank_images(candidates: &[(String, Vec<f64>)], profile: &ReferenceProfile) -> Result<RankingReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    let mut scored = candidates
        .iter()
        .map(|(id, e)| face_distance(e, profile).map(|d| (id.clone(), d)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n = scored.len() as f64;
    let items = scored
        .into_iter()
        .enumerate()
        .map(|(i, (id, distance))| RankedItem {
            id,
            distance,
            rank: i + 1,
            percentile: 100.0 * (i + 1) as f64 / n,
            kept: true,
            reason: None,
        })
        .collect();
    Ok(RankingReport { items, filter: None })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    TopKPercent,
    Quantile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub mode: FilterMode,
    pub k_percent: f64,
    pub quantile: f64,
    pub min_n: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            mode: FilterMode::TopKPercent,
            k_percent: 15.0,
            quantile: 0.80,
            min_n: 8,
        }
    }
}

impl FilterPolicy {
    pub fn top_k(k_percent: f64) -> Self {
        FilterPolicy {
            mode: FilterMode::TopKPercent,
            k_percent,
            ..Default::default()
        }
    }

    pub fn quantile(q: f64) -> Self {
        FilterPolicy {
            mode: FilterMode::Quantile,
            quantile: q,
            ..Default::default()
        }
    }
}

/// Linear interpolation between order statistics of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Marks the most distant items as discarded. The kept set is always a
/// prefix of the ranking.
pub fn apply_filter(report: &RankingReport, policy: &FilterPolicy) -> Result<RankingReport> {
    let n = report.items.len();
    if n == 0 {
        return Err(Error::invalid("empty ranking report"));
    }
    let mut out = report.clone();
    out.items.iter_mut().for_each(|i| {
        i.kept = true;
        i.reason = None;
    });
    let mut summary = FilterSummary {
        policy: *policy,
        discarded: 0,
        threshold: None,
        note: None,
    };
    match policy.mode {
        FilterMode::TopKPercent => {
            let k = policy.k_percent;
            if !(0.0..=100.0).contains(&k) {
                return Err(Error::invalid(format!("k = {k} outside [0, 100]")));
            }
            if n < policy.min_n {
                summary.note = Some(format!(
                    "n = {n} below min_n = {}; nothing discarded",
                    policy.min_n
                ));
            } else {
                // floor(k * n / 100), guarded against 0.1 + 0.2 style drift
                let m = ((k * n as f64 / 100.0) + 1e-9).floor() as usize;
                for item in out.items.iter_mut().skip(n - m) {
                    item.kept = false;
                    item.reason = Some(format!("top {k}% most distant"));
                }
                summary.discarded = m;
            }
        }
        FilterMode::Quantile => {
            let q = policy.quantile;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::invalid(format!("q = {q} outside [0, 1]")));
            }
            let sorted: Vec<f64> = out.items.iter().map(|i| i.distance).collect();
            let cut = quantile_sorted(&sorted, q);
            for item in out.items.iter_mut().filter(|i| i.distance > cut) {
                item.kept = false;
                item.reason = Some(format!("distance above q{q:.2} = {cut:.6}"));
            }
            summary.discarded = out.items.iter().filter(|i| !i.kept).count();
            summary.threshold = Some(cut);
        }
    }
    out.filter = Some(summary);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    #[serde(serialize_with = "round6")]
    pub mean: f64,
    #[serde(serialize_with = "round6")]
    pub min: f64,
    #[serde(serialize_with = "round6")]
    pub max: f64,
    #[serde(serialize_with = "round6")]
    pub median: f64,
    #[serde(serialize_with = "round6")]
    pub kde_mode: f64,
    pub bandwidth: f64,
}

fn sample_std(data: &[f64], mean: f64) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let ss: f64 = data.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (data.len() - 1) as f64).sqrt()
}

/// Silverman's rule `0.9 * min(σ, IQR/1.34) * n^(-1/5)`, using whichever
/// spread estimate is positive when the other vanishes, floored at 1e-4.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sigma = sample_std(sorted, mean);
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = match (sigma > 0.0, iqr > 0.0) {
        (true, true) => sigma.min(iqr / 1.34),
        (true, false) => sigma,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    (0.9 * spread * (n as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Gaussian kernel density estimate at `x`.
pub fn kde_density(data: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (data.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    norm * data
        .iter()
        .map(|xi| (-0.5 * ((x - xi) / bandwidth).powi(2)).exp())
        .sum::<f64>()
}

pub fn summarize_distribution(distances: &[f64]) -> Result<DistributionSummary> {
    if distances.is_empty() {
        return Err(Error::invalid("no distances to summarize"));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("distances must be finite"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = quantile_sorted(&sorted, 0.5);
    let h = silverman_bandwidth(&sorted);
    let kde_mode = if min == max {
        min
    } else {
        let (lo, hi) = (min - 3.0 * h, max + 3.0 * h);
        let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
        let mut best = (lo, f64::NEG_INFINITY);
        for i in 0..KDE_GRID_POINTS {
            let x = lo + i as f64 * step;
            let d = kde_density(&sorted, h, x);
            if d > best.1 {
                best = (x, d);
            }
        }
        best.0
    };
    Ok(DistributionSummary {
        count: n,
        mean,
        min,
        max,
        median,
        kde_mode,
        bandwidth: h,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSet {
    pub name: String,
    pub distances: Vec<f64>,
    /// Fraction of generations where no face was detected.
    #[serde(default)]
    pub detection_failure_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<DistributionSummary>,
    pub detection_failure_rate: f64,
    pub diverged: bool,
    /// 1-based position among non-diverged checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Other checkpoints whose KDE mode lies within 0.01 of this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indistinguishable_from: Vec<String>,
}

/// Non-diverged checkpoints ordered by KDE mode (then mean), followed by the
/// diverged ones in input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointComparison {
    pub entries: Vec<CheckpointEntry>,
}

impl CheckpointComparison {
    pub fn best(&self) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| !e.diverged)
    }
}

pub fn compare_checkpoints(sets: &[CheckpointSet]) -> Result<CheckpointComparison> {
    if sets.is_empty() {
        return Err(Error::invalid("no checkpoint sets"));
    }
    let mut ranked = Vec::new();
    let mut diverged = Vec::new();
    for set in sets {
        let rate = set.detection_failure_rate;
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "{}: failure rate {rate} outside [0, 1]",
                set.name
            )));
        }
        let summary = if set.distances.is_empty() {
            None
        } else {
            Some(summarize_distribution(&set.distances)?)
        };
        let entry = CheckpointEntry {
            name: set.name.clone(),
            diverged: rate > DIVERGENCE_FAILURE_RATE || summary.is_none(),
            summary,
            detection_failure_rate: rate,
            rank: None,
            indistinguishable_from: Vec::new(),
        };
        if entry.diverged {
            diverged.push(entry);
        } else {
            ranked.push(entry);
        }
    }
    let key = |e: &CheckpointEntry| {
        let s = e.summary.as_ref().expect("ranked entries have summaries");
        (s.kde_mode, s.mean)
    };
    ranked.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    let modes: Vec<f64> = ranked.iter().map(|e| key(e).0).collect();
    let names: Vec<String> = ranked.iter().map(|e| e.name.clone()).collect();
    for (i, e) in ranked.iter_mut().enumerate() {
        e.rank = Some(i + 1);
        e.indistinguishable_from = (0..modes.len())
            .filter(|&j| j != i && (modes[j] - modes[i]).abs() < INDISTINGUISHABLE_MODE_GAP)
            .map(|j| names[j].clone())
            .collect();
    }
    ranked.extend(diverged);
    Ok(CheckpointComparison { entries: ranked })
}

/// Serializes distance lists with six decimals.
#[derive(Serialize)]
pub struct RoundedDistances<'a>(#[serde(serialize_with = "round6_vec")] pub &'a [f64]);
