//! Synthetic MCQ datasets with controlled topic and difficulty skew.
//!
//! Questions carry the lexical markers the offline provider keys on
//! (`[topic:X]`, `[easy]`/`[medium]`/`[hard]`), so classification and
//! rating recover the planted labels. The generator also emits the
//! provider fixtures for planted answer errors, making expected bin
//! counts and validator outcomes exactly computable in tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Band, Dataset, Provenance, QASample, Taxonomy, TopicDef};
use crate::error::{Error, Result};
use crate::provider::mock::MockFixtures;

/// Shape of a generated dataset. Topic and band weights must each sum
/// to 1; counts are apportioned by largest remainder so the empirical
/// marginals match the weights as closely as integers allow.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n: usize,
    pub topics: Vec<(String, f64)>,
    pub bands: Vec<(Band, f64)>,
    /// how many samples keep `topic: None` (recovered via classification)
    pub unlabeled: usize,
    /// how many samples get a deliberately wrong `answer_index`; the
    /// true index goes into the returned fixtures' answer key
    pub planted_errors: usize,
    pub seed: u64,
}

const FILLER: [&str; 24] = [
    "gradient", "lattice", "orbit", "tensor", "vertex", "kernel", "module",
    "quotient", "basis", "norm", "field", "ring", "graph", "cycle", "prime",
    "matrix", "series", "limit", "measure", "group", "ideal", "functor",
    "sheaf", "manifold",
];

/// Largest-remainder apportionment of `n` slots over `weights`.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    counts
}

/// Taxonomy over the given ids, all routed the same way for validation.
pub fn synth_taxonomy(ids: &[&str], route: Option<&str>) -> Result<Taxonomy> {
    Taxonomy::new(
        ids.iter()
            .map(|id| TopicDef {
                id: id.to_string(),
                name: format!("{id} questions"),
                description: format!("items about {id}"),
                validation_route: route.map(str::to_string),
            })
            .collect(),
    )
}

/// Generates the dataset plus the provider fixtures that encode the
/// planted answer errors. Both marginals are exact up to apportionment;
/// the joint (topic, band) table is a seeded random pairing.
pub fn synth_dataset(spec: &SynthSpec, taxonomy: Taxonomy) -> Result<(Dataset, MockFixtures)> {
    if spec.n == 0 {
        return Err(Error::Argument("synthetic dataset must be nonempty".into()));
    }
    for (name, sum) in [
        ("topic", spec.topics.iter().map(|(_, w)| w).sum::<f64>()),
        ("band", spec.bands.iter().map(|(_, w)| w).sum::<f64>()),
    ] {
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "{name} weights sum to {sum}, expected 1"
            )));
        }
    }
    for (t, _) in &spec.topics {
        if !taxonomy.has_topic(t) {
            return Err(Error::Argument(format!("topic `{t}` not in taxonomy")));
        }
    }
    if spec.unlabeled > spec.n || spec.planted_errors > spec.n {
        return Err(Error::Argument(
            "unlabeled / planted_errors exceed dataset size".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topic_weights: Vec<f64> = spec.topics.iter().map(|(_, w)| *w).collect();
    let band_weights: Vec<f64> = spec.bands.iter().map(|(_, w)| *w).collect();
    let mut topic_slots: Vec<&str> = Vec::with_capacity(spec.n);
    for (i, c) in apportion(spec.n, &topic_weights).into_iter().enumerate() {
        topic_slots.extend(std::iter::repeat(spec.topics[i].0.as_str()).take(c));
    }
    let mut band_slots: Vec<Band> = Vec::with_capacity(spec.n);
    for (i, c) in apportion(spec.n, &band_weights).into_iter().enumerate() {
        band_slots.extend(std::iter::repeat(spec.bands[i].0).take(c));
    }
    // shuffling one margin decouples the joint table from the order in
    // which weights were listed while preserving both marginals exactly
    band_slots.shuffle(&mut rng);

    let mut fixtures = MockFixtures::default();
    let mut samples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let topic = topic_slots[i];
        let band = band_slots[i];
        let f1 = FILLER[(i * 7 + 3) % FILLER.len()];
        let f2 = FILLER[(i * 11 + 5) % FILLER.len()];
        let question = format!(
            "synthetic item {i:04} [topic:{topic}] [{}] about the {f1} of a {f2}",
            band.as_str()
        );
        let choices: Vec<String> = (0..4)
            .map(|c| {
                if c == 0 {
                    format!("key {i} correct value")
                } else {
                    format!("alt {i} option {c}")
                }
            })
            .collect();
        let planted = i < spec.planted_errors;
        let answer_index = if planted { 1 } else { 0 };
        if planted {
            fixtures.answer_key.insert(question.clone(), 0);
        }
        samples.push(QASample {
            id: format!("syn-{i:04}"),
            correct_choice: choices[answer_index].clone(),
            question,
            choices,
            answer_index,
            topic: if i < spec.unlabeled {
                None
            } else {
                Some(topic.to_string())
            },
            difficulty: None,
            elo: None,
            provenance: Provenance::Original,
            distractor_types: None,
        });
    }
    Ok((Dataset::new(samples, taxonomy)?, fixtures))
}

/// Exact per-bin counts planted on one axis, for oracle assertions.
pub fn planted_counts<T: Clone + Ord>(n: usize, weights: &[(T, f64)]) -> BTreeMap<T, usize> {
    let w: Vec<f64> = weights.iter().map(|(_, v)| *v).collect();
    apportion(n, &w)
        .into_iter()
        .zip(weights)
        .map(|(c, (k, _))| (k.clone(), c))
        .collect()
}
