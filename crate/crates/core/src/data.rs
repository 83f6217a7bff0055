//! Data model for samples, datasets, taxonomies, and distributions,
//! plus JSONL dataset I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved bin for samples without a topic label. Empirical topic
/// distributions are always total; refinement never targets this bin.
pub const OTHER_TOPIC: &str = "OTHER";

/// The three difficulty bands, in order.
pub const BANDS: [Band; 3] = [Band::Easy, Band::Medium, Band::Hard];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Easy,
    Medium,
    Hard,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Easy => "easy",
            Band::Medium => "medium",
            Band::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Band> {
        match s {
            "easy" => Some(Band::Easy),
            "medium" => Some(Band::Medium),
            "hard" => Some(Band::Hard),
            _ => None,
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Expanded,
    Generated,
    Rewritten,
    Corrected,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Expanded => "expanded",
            Provenance::Generated => "generated",
            Provenance::Rewritten => "rewritten",
            Provenance::Corrected => "corrected",
        }
    }
}

/// One multiple-choice question with its answer choices and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    /// Redundant copy of `choices[answer_index]`, kept because the
    /// generation output format carries both fields.
    pub correct_choice: String,
    /// `None` means unlabeled; empirical distributions count it under
    /// [`OTHER_TOPIC`].
    pub topic: Option<String>,
    /// `None` means unrated.
    pub difficulty: Option<Band>,
    pub elo: Option<f64>,
    pub provenance: Provenance,
    /// Mistake-type labels parallel to the incorrect choices, when known.
    pub distractor_types: Option<Vec<String>>,
}

impl QASample {
    /// Checks all sample invariants. A `correct_choice` that disagrees
    /// with `choices[answer_index]` is auto-repaired (with a warning
    /// returned) rather than rejected.
    pub fn validate(&mut self) -> Result<Option<String>> {
        if self.choices.len() < 2 || self.choices.len() > 8 {
            return Err(Error::InvalidSample {
                id: self.id.clone(),
                msg: format!("expected 2-8 choices, got {}", self.choices.len()),
            });
        }
        if self.answer_index >= self.choices.len() {
            return Err(Error::InvalidSample {
                id: self.id.clone(),
                msg: format!(
                    "answer_index {} out of range for {} choices",
                    self.answer_index,
                    self.choices.len()
                ),
            });
        }
        let mut seen = BTreeSet::new();
        for c in &self.choices {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidSample {
                    id: self.id.clone(),
                    msg: format!("duplicate choice text {c:?}"),
                });
            }
        }
        if let Some(types) = &self.distractor_types {
            if types.len() != self.choices.len() - 1 {
                return Err(Error::InvalidSample {
                    id: self.id.clone(),
                    msg: format!(
                        "distractor_types has length {} but there are {} distractors",
                        types.len(),
                        self.choices.len() - 1
                    ),
                });
            }
        }
        let mut warning = None;
        if self.correct_choice != self.choices[self.answer_index] {
            warning = Some(format!(
                "sample `{}`: correct_choice rewritten from answer_index",
                self.id
            ));
            self.correct_choice = self.choices[self.answer_index].clone();
        }
        Ok(warning)
    }

    /// Topic bin used for empirical distributions.
    pub fn topic_bin(&self) -> &str {
        self.topic.as_deref().unwrap_or(OTHER_TOPIC)
    }

    /// The incorrect choices, in order.
    pub fn distractors(&self) -> Vec<&str> {
        self.choices
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.answer_index)
            .map(|(_, c)| c.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDef {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Optional validator routing hint: "code" or "retrieval".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_route: Option<String>,
}

/// Topic and difficulty axes the dataset is described against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub topics: Vec<TopicDef>,
}

impl Taxonomy {
    pub fn new(topics: Vec<TopicDef>) -> Result<Taxonomy> {
        if topics.is_empty() {
            return Err(Error::InvalidTaxonomy("at least one topic required".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &topics {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::InvalidTaxonomy(format!("duplicate topic id `{}`", t.id)));
            }
        }
        Ok(Taxonomy { topics })
    }

    pub fn has_topic(&self, id: &str) -> bool {
        self.topics.iter().any(|t| t.id == id)
    }

    pub fn topic(&self, id: &str) -> Option<&TopicDef> {
        self.topics.iter().find(|t| t.id == id)
    }

    pub fn topic_ids(&self) -> Vec<&str> {
        self.topics.iter().map(|t| t.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Topic,
    Difficulty,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Topic => f.write_str("topic"),
            Axis::Difficulty => f.write_str("difficulty"),
        }
    }
}

/// A probability distribution over the categories of one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub axis: Axis,
    pub weights: BTreeMap<String, f64>,
}

const SUM_TOL: f64 = 1e-9;

impl Distribution {
    pub fn new(axis: Axis, weights: BTreeMap<String, f64>) -> Result<Distribution> {
        let mut sum = 0.0;
        for (k, w) in &weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "weight for `{k}` is {w}, must be finite and nonnegative"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Distribution { axis, weights })
    }

    pub fn weight(&self, category: &str) -> f64 {
        self.weights.get(category).copied().unwrap_or(0.0)
    }

    /// Union of categories carried by `self` and `other`.
    pub fn joint_support<'a>(&'a self, other: &'a Distribution) -> BTreeSet<&'a str> {
        self.weights
            .keys()
            .chain(other.weights.keys())
            .map(|s| s.as_str())
            .collect()
    }
}

/// Target distributions the refinement steers toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub topic_target: Distribution,
    pub difficulty_target: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dataset_size: Option<usize>,
}

/// An ordered collection of samples plus the taxonomy they live in.
///
/// Removals tombstone samples rather than reindexing; tombstoned samples
/// are dropped on save. The dataset is treated as immutable once loaded:
/// refinement builds a new one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<QASample>,
    pub taxonomy: Taxonomy,
    #[serde(default)]
    tombstones: BTreeSet<String>,
}

impl Dataset {
    pub fn new(samples: Vec<QASample>, taxonomy: Taxonomy) -> Result<Dataset> {
        let mut ids = BTreeSet::new();
        for s in &samples {
            if !ids.insert(s.id.clone()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if let Some(topic) = &s.topic {
                if !taxonomy.has_topic(topic) {
                    return Err(Error::InvalidSample {
                        id: s.id.clone(),
                        msg: format!("topic `{topic}` not in taxonomy"),
                    });
                }
            }
        }
        Ok(Dataset {
            samples,
            taxonomy,
            tombstones: BTreeSet::new(),
        })
    }

    /// Live (non-tombstoned) samples in original order.
    pub fn live(&self) -> impl Iterator<Item = &QASample> {
        self.samples
            .iter()
            .filter(move |s| !self.tombstones.contains(&s.id))
    }

    pub fn len(&self) -> usize {
        self.live().count()
    }

    pub fn is_empty(&self) -> bool {
        self.live().next().is_none()
    }

    pub fn get(&self, id: &str) -> Option<&QASample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut QASample> {
        self.samples.iter_mut().find(|s| s.id == id)
    }

    pub fn is_tombstoned(&self, id: &str) -> bool {
        self.tombstones.contains(id)
    }

    /// Marks a sample as removed without reindexing.
    pub fn tombstone(&mut self, id: &str) {
        self.tombstones.insert(id.to_string());
    }

    pub fn push(&mut self, sample: QASample) -> Result<()> {
        if self.samples.iter().any(|s| s.id == sample.id) {
            return Err(Error::DuplicateId(sample.id));
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Compacts tombstones away, producing the final sample list.
    pub fn compact(&self) -> Dataset {
        Dataset {
            samples: self.live().cloned().collect(),
            taxonomy: self.taxonomy.clone(),
            tombstones: BTreeSet::new(),
        }
    }
}

/// JSONL wire record, one per line.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    question: String,
    choices: Vec<String>,
    answer: usize,
    correct_choice: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distractor_types: Option<Vec<String>>,
}

fn provenance_from_str(s: &str) -> Option<Provenance> {
    match s {
        "original" => Some(Provenance::Original),
        "expanded" => Some(Provenance::Expanded),
        "generated" => Some(Provenance::Generated),
        "rewritten" => Some(Provenance::Rewritten),
        "corrected" => Some(Provenance::Corrected),
        _ => None,
    }
}

/// Loads a JSONL dataset, enforcing all invariants. Errors carry the
/// 1-based line number of the offending record.
pub fn load_dataset(path: &Path, taxonomy: Taxonomy) -> Result<(Dataset, Vec<String>)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let difficulty = match rec.difficulty.as_deref() {
            None => None,
            Some(d) => Some(Band::parse(d).ok_or_else(|| Error::Schema {
                line: lineno,
                msg: format!("unknown difficulty band `{d}`"),
            })?),
        };
        let provenance = match rec.provenance.as_deref() {
            None => Provenance::Original,
            Some(p) => provenance_from_str(p).ok_or_else(|| Error::Schema {
                line: lineno,
                msg: format!("unknown provenance `{p}`"),
            })?,
        };
        let mut sample = QASample {
            id: rec.id,
            question: rec.question,
            choices: rec.choices,
            answer_index: rec.answer,
            correct_choice: rec.correct_choice,
            topic: rec.topic,
            difficulty,
            elo: rec.elo,
            provenance,
            distractor_types: rec.distractor_types,
        };
        if !ids.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        match sample.validate() {
            Ok(w) => {
                if let Some(w) = w {
                    warnings.push(format!("line {lineno}: {w}"));
                }
            }
            Err(Error::InvalidSample { id, msg }) => {
                return Err(Error::Schema {
                    line: lineno,
                    msg: format!("sample `{id}`: {msg}"),
                })
            }
            Err(e) => return Err(e),
        }
        samples.push(sample);
    }
    let dataset = Dataset::new(samples, taxonomy)?;
    Ok((dataset, warnings))
}

/// Saves live samples as JSONL, atomically (write + rename).
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    for s in dataset.live() {
        let rec = Record {
            id: s.id.clone(),
            question: s.question.clone(),
            choices: s.choices.clone(),
            answer: s.answer_index,
            correct_choice: s.correct_choice.clone(),
            topic: s.topic.clone(),
            difficulty: s.difficulty.map(|b| b.as_str().to_string()),
            elo: s.elo,
            provenance: Some(s.provenance.as_str().to_string()),
            distractor_types: s.distractor_types.clone(),
        };
        writeln!(tmp, "{}", serde_json::to_string(&rec)?)?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Empirical distribution of live samples along an axis. Counts are
/// normalized by the live sample count; unlabeled topics fall in the
/// `OTHER` bin. Taxonomy categories absent from the data appear with
/// weight zero so distributions are always total.
pub fn empirical_distribution(dataset: &Dataset, axis: Axis) -> Result<Distribution> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    match axis {
        Axis::Topic => {
            for t in &dataset.taxonomy.topics {
                counts.insert(t.id.clone(), 0);
            }
            for s in dataset.live() {
                *counts.entry(s.topic_bin().to_string()).or_insert(0) += 1;
            }
        }
        Axis::Difficulty => {
            for b in BANDS {
                counts.insert(b.as_str().to_string(), 0);
            }
            for s in dataset.live() {
                let band = s.difficulty.ok_or_else(|| Error::Argument(format!(
                    "sample `{}` is unrated; rate all samples before computing the difficulty distribution",
                    s.id
                )))?;
                *counts.get_mut(band.as_str()).unwrap() += 1;
            }
        }
    }
    let weights = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n as f64))
        .collect();
    Distribution::new(axis, weights)
}

/// Signed deficit per category: positive means underrepresented.
pub fn gap_vector(
    empirical: &Distribution,
    target: &Distribution,
) -> Result<BTreeMap<String, f64>> {
    if empirical.axis != target.axis {
        return Err(Error::AxisMismatch(
            empirical.axis.to_string(),
            target.axis.to_string(),
        ));
    }
    let mut gaps = BTreeMap::new();
    for cat in empirical.joint_support(target) {
        gaps.insert(cat.to_string(), target.weight(cat) - empirical.weight(cat));
    }
    Ok(gaps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy(ids: &[&str]) -> Taxonomy {
        Taxonomy::new(
            ids.iter()
                .map(|id| TopicDef {
                    id: id.to_string(),
                    name: id.to_string(),
                    description: String::new(),
                    validation_route: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn sample(id: &str, topic: &str, band: Band) -> QASample {
        QASample {
            id: id.to_string(),
            question: format!("question {id}"),
            choices: vec!["w".into(), "x".into(), "y".into(), "z".into()],
            answer_index: 1,
            correct_choice: "x".into(),
            topic: Some(topic.to_string()),
            difficulty: Some(band),
            elo: None,
            provenance: Provenance::Original,
            distractor_types: None,
        }
    }

    fn dist(axis: Axis, pairs: &[(&str, f64)]) -> Distribution {
        Distribution::new(
            axis,
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_minimal_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"s1","question":"q","choices":["a","b","c","d"],"answer":1,"correct_choice":"b"}"#,
        )
        .unwrap();
        let (ds, warnings) = load_dataset(&path, taxonomy(&["A"])).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(warnings.is_empty());
        assert_eq!(ds.samples[0].answer_index, 1);
        assert_eq!(ds.samples[0].provenance, Provenance::Original);
    }

    #[test]
    fn answer_index_out_of_range_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"s1","question":"q","choices":["a","b","c","d"],"answer":5,"correct_choice":"b"}"#,
        )
        .unwrap();
        let err = load_dataset(&path, taxonomy(&["A"])).unwrap_err();
        match err {
            Error::Schema { line, .. } => assert_eq!(line, 1),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"s1\",\"question\":\"q\",\"choices\":[\"a\",\"b\"],\"answer\":0,\"correct_choice\":\"a\"}\nnot json\n",
        )
        .unwrap();
        let err = load_dataset(&path, taxonomy(&["A"])).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn duplicate_id_is_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let line = r#"{"id":"s1","question":"q","choices":["a","b"],"answer":0,"correct_choice":"a"}"#;
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(
            load_dataset(&path, taxonomy(&["A"])).unwrap_err(),
            Error::DuplicateId(_)
        ));
    }

    #[test]
    fn correct_choice_mismatch_auto_repaired_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"s1","question":"q","choices":["a","b"],"answer":0,"correct_choice":"b"}"#,
        )
        .unwrap();
        let (ds, warnings) = load_dataset(&path, taxonomy(&["A"])).unwrap();
        assert_eq!(ds.samples[0].correct_choice, "a");
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        // Fixture-generated dataset; the generator is the counting oracle.
        let tax = taxonomy(&["A", "B", "C"]);
        let mut samples = Vec::new();
        for i in 0..100 {
            let topic = ["A", "B", "C"][i % 3];
            let band = BANDS[i % 3];
            let mut s = sample(&format!("s{i:03}"), topic, band);
            s.elo = Some(1000.0 + i as f64);
            s.distractor_types = Some(vec!["t1".into(), "t2".into(), "t3".into()]);
            s.provenance = Provenance::Expanded;
            samples.push(s);
        }
        let ds = Dataset::new(samples, tax.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let (loaded, warnings) = load_dataset(&path, tax).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(loaded.samples, ds.samples);
    }

    #[test]
    fn empirical_single_bin() {
        let tax = taxonomy(&["A"]);
        let samples = (0..4).map(|i| sample(&format!("s{i}"), "A", Band::Easy)).collect();
        let ds = Dataset::new(samples, tax).unwrap();
        let d = empirical_distribution(&ds, Axis::Topic).unwrap();
        assert_eq!(d.weight("A"), 1.0);
    }

    #[test]
    fn empirical_difficulty_counts() {
        let tax = taxonomy(&["A"]);
        let samples = vec![
            sample("s0", "A", Band::Easy),
            sample("s1", "A", Band::Easy),
            sample("s2", "A", Band::Hard),
            sample("s3", "A", Band::Hard),
        ];
        let ds = Dataset::new(samples, tax).unwrap();
        let d = empirical_distribution(&ds, Axis::Difficulty).unwrap();
        assert_eq!(d.weight("easy"), 0.5);
        assert_eq!(d.weight("medium"), 0.0);
        assert_eq!(d.weight("hard"), 0.5);
    }

    #[test]
    fn empirical_matches_fixture_proportions() {
        // 60 samples at known proportions {A:0.5, B:0.3, C:0.2}.
        let tax = taxonomy(&["A", "B", "C"]);
        let mut samples = Vec::new();
        for i in 0..60 {
            let topic = if i < 30 { "A" } else if i < 48 { "B" } else { "C" };
            samples.push(sample(&format!("s{i:02}"), topic, Band::Medium));
        }
        let ds = Dataset::new(samples, tax).unwrap();
        let d = empirical_distribution(&ds, Axis::Topic).unwrap();
        assert_eq!(d.weight("A"), 0.5);
        assert_eq!(d.weight("B"), 0.3);
        assert_eq!(d.weight("C"), 0.2);
    }

    #[test]
    fn empirical_empty_dataset_errors() {
        let ds = Dataset::new(vec![], taxonomy(&["A"])).unwrap();
        assert!(matches!(
            empirical_distribution(&ds, Axis::Topic).unwrap_err(),
            Error::EmptyDataset
        ));
    }

    #[test]
    fn unlabeled_topics_fall_in_other_bin() {
        let tax = taxonomy(&["A"]);
        let mut s = sample("s0", "A", Band::Easy);
        s.topic = None;
        let ds = Dataset::new(vec![s, sample("s1", "A", Band::Easy)], tax).unwrap();
        let d = empirical_distribution(&ds, Axis::Topic).unwrap();
        assert_eq!(d.weight(OTHER_TOPIC), 0.5);
        assert_eq!(d.weight("A"), 0.5);
    }

    #[test]
    fn gap_identity_is_zero() {
        let p = dist(Axis::Topic, &[("A", 0.5), ("B", 0.5)]);
        let gaps = gap_vector(&p, &p).unwrap();
        assert!(gaps.values().all(|g| *g == 0.0));
    }

    #[test]
    fn gap_direct_subtraction() {
        let p = dist(Axis::Topic, &[("A", 1.0), ("B", 0.0)]);
        let t = dist(Axis::Topic, &[("A", 0.5), ("B", 0.5)]);
        let gaps = gap_vector(&p, &t).unwrap();
        assert_eq!(gaps["A"], -0.5);
        assert_eq!(gaps["B"], 0.5);
        let sum: f64 = gaps.values().sum();
        assert!(sum.abs() < 1e-9);
    }

    #[test]
    fn absent_bin_gap_equals_full_target_mass() {
        // An empirical bin with zero mass gets the full target weight as gap.
        let p = dist(Axis::Topic, &[("gen", 0.6), ("org", 0.4), ("biochem", 0.0)]);
        let t = dist(Axis::Topic, &[("gen", 0.5), ("org", 0.3), ("biochem", 0.2)]);
        let gaps = gap_vector(&p, &t).unwrap();
        assert_eq!(gaps["biochem"], 0.2);
    }

    #[test]
    fn gap_axis_mismatch_is_type_error() {
        let p = dist(Axis::Topic, &[("A", 1.0)]);
        let t = dist(Axis::Difficulty, &[("easy", 1.0)]);
        assert!(matches!(
            gap_vector(&p, &t).unwrap_err(),
            Error::AxisMismatch(_, _)
        ));
    }

    #[test]
    fn gap_antisymmetry() {
        let p = dist(Axis::Topic, &[("A", 0.7), ("B", 0.3)]);
        let t = dist(Axis::Topic, &[("A", 0.2), ("B", 0.8)]);
        let g1 = gap_vector(&p, &t).unwrap();
        let g2 = gap_vector(&t, &p).unwrap();
        for (k, v) in &g1 {
            assert_eq!(*v + g2[k], 0.0);
        }
    }

    #[test]
    fn tombstones_preserve_order_until_compact() {
        let tax = taxonomy(&["A"]);
        let samples = (0..4).map(|i| sample(&format!("s{i}"), "A", Band::Easy)).collect();
        let mut ds = Dataset::new(samples, tax).unwrap();
        ds.tombstone("s1");
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.samples.len(), 4);
        let ids: Vec<_> = ds.live().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s0", "s2", "s3"]);
        let compacted = ds.compact();
        assert_eq!(compacted.samples.len(), 3);
    }

    #[test]
    fn distribution_rejects_bad_weights() {
        assert!(Distribution::new(
            Axis::Topic,
            [("A".to_string(), 0.5)].into_iter().collect()
        )
        .is_err());
        assert!(Distribution::new(
            Axis::Topic,
            [("A".to_string(), -0.2), ("B".to_string(), 1.2)]
                .into_iter()
                .collect()
        )
        .is_err());
    }
}
