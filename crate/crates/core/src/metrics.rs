//! Distribution-alignment and distractor-diversity metrics.
//!
//! All logarithms are base 2, which is what bounds the Jensen-Shannon
//! divergence to [0, 1].

use std::collections::BTreeMap;

use crate::data::{Dataset, Distribution};
use crate::error::{Error, Result};

/// KL(p || m) in bits. Zero bins of `p` contribute nothing; a positive
/// `p` bin with zero `m` mass is an error.
pub fn kl(p: &Distribution, m: &Distribution) -> Result<f64> {
    let mut total = 0.0;
    for cat in p.joint_support(m) {
        let pi = p.weight(cat);
        if pi == 0.0 {
            continue;
        }
        let mi = m.weight(cat);
        if mi == 0.0 {
            return Err(Error::DivergenceInfinite(cat.to_string()));
        }
        total += pi * (pi / mi).log2();
    }
    Ok(total.max(0.0))
}

/// Jensen-Shannon divergence between `p` and `t`:
/// JSD = KL(p||M)/2 + KL(t||M)/2 with M = (p+t)/2. Symmetric, in [0, 1].
pub fn jsd(p: &Distribution, t: &Distribution) -> Result<f64> {
    if p.axis != t.axis {
        return Err(Error::AxisMismatch(p.axis.to_string(), t.axis.to_string()));
    }
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    for cat in p.joint_support(t) {
        weights.insert(cat.to_string(), 0.5 * (p.weight(cat) + t.weight(cat)));
    }
    let m = Distribution {
        axis: p.axis,
        weights,
    };
    let v = 0.5 * kl(p, &m)? + 0.5 * kl(t, &m)?;
    Ok(v.clamp(0.0, 1.0))
}

/// Normalized Shannon entropy of one sample's distractor-type
/// proportions, with the global mistake-type vocabulary size `k`.
fn sample_entropy(types: &[String], k: usize) -> f64 {
    let n = types.len() as f64;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in types {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h / (k as f64).log2()
}

/// Mean normalized distractor-type entropy over labeled samples.
///
/// K is the number of distinct mistake-type labels observed dataset-wide
/// so per-sample values are comparable. Samples without labels are
/// skipped; if no sample carries labels the metric is 0.
pub fn distractor_entropy(dataset: &Dataset) -> Result<f64> {
    let mut vocab: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    let mut labeled = Vec::new();
    for s in dataset.live() {
        if let Some(types) = &s.distractor_types {
            for t in types {
                vocab.insert(t.as_str());
            }
            labeled.push(types);
        }
    }
    if labeled.is_empty() {
        return Ok(0.0);
    }
    let k = vocab.len();
    if k < 2 {
        return Err(Error::UndefinedEntropy(k));
    }
    let sum: f64 = labeled.iter().map(|types| sample_entropy(types, k)).sum();
    Ok((sum / labeled.len() as f64).clamp(0.0, 1.0))
}

/// A named metric value in [0, 1].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
}
