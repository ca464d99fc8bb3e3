use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Source};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixPolicy {
    /// A concept violates the policy when its share is strictly above this.
    pub max_concept_share: f64,
    pub min_real_fraction: Option<f64>,
}

impl Default for MixPolicy {
    fn default() -> Self {
        MixPolicy {
            max_concept_share: 0.25,
            min_real_fraction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub total: usize,
    /// Share of entries carrying each tag.
    pub concept_shares: BTreeMap<String, f64>,
    /// Tags whose share exceeds the policy maximum.
    pub violations: Vec<String>,
    pub real_fraction: f64,
    pub synthetic_fraction: f64,
    pub warnings: Vec<String>,
    pub ok: bool,
}

pub fn validate_mix(manifest: &DatasetManifest, policy: &MixPolicy) -> Result<MixReport> {
    let total = manifest.entries.len();
    if total == 0 {
        return Err(Error::invalid("manifest has no entries"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &manifest.entries {
        // a tag repeated on one entry still counts that entry once
        let tags: BTreeSet<&String> = e.concept_tags.iter().collect();
        for t in tags {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let n = total as f64;
    let concept_shares: BTreeMap<String, f64> = counts.iter().map(|(t, &c)| (t.clone(), c as f64 / n)).collect();
    // compare in integers: count / total > max  <=>  count > max * total
    let violations: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| (c as f64) > policy.max_concept_share * n + 1e-9)
        .map(|(t, _)| t.clone())
        .collect();
    let real = manifest.entries.iter().filter(|e| e.source == Source::Real).count() as f64;
    let real_fraction = real / n;

    let mut warnings = Vec::new();
    let untagged_synthetic = manifest
        .entries
        .iter()
        .filter(|e| e.source == Source::Synthetic && e.concept_tags.is_empty())
        .count();
    if counts.is_empty() || untagged_synthetic > 0 {
        warnings.push("untagged synthetic entries cannot be share-checked".to_string());
    }
    let mut ok = violations.is_empty();
    if let Some(min_real) = policy.min_real_fraction {
        if real_fraction + 1e-12 < min_real {
            warnings.push(format!(
                "real fraction {real_fraction:.3} is below the required {min_real:.3}"
            ));
            ok = false;
        }
    }
    Ok(MixReport {
        total,
        concept_shares,
        violations,
        real_fraction,
        synthetic_fraction: 1.0 - real_fraction,
        warnings,
        ok,
    })
}
