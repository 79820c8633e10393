//! Interaction logs: CSV parsing, filtering, student-level splits,
//! windowing into padded batches, and a seeded synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const CSV_HEADER: &str = "student_id,skill_id,correct";

/// One `(skill, correctness)` step of a student's log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub skill: usize,
    pub correct: bool,
}

/// A single parsed CSV row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub student_id: String,
    pub skill: usize,
    pub correct: bool,
    /// Position within the student's log.
    pub order: usize,
}

/// One student's ordered log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudentSequence {
    pub student_id: String,
    pub steps: Vec<Interaction>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Mapping from raw skill ids to dense indices, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SkillVocabulary {
    raw_ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl SkillVocabulary {
    pub fn from_raw_ids(raw_ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw_ids.len());
        for (i, id) in raw_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Config(format!(
                    "duplicate skill id `{id}` in vocabulary"
                )));
            }
        }
        Ok(SkillVocabulary { raw_ids, index })
    }

    pub fn len(&self) -> usize {
        self.raw_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_ids.is_empty()
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw_id(&self, index: usize) -> &str {
        &self.raw_ids[index]
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw_ids
    }

    fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        self.raw_ids.push(raw.to_owned());
        self.index.insert(raw.to_owned(), self.raw_ids.len() - 1);
        self.raw_ids.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub sequences: Vec<StudentSequence>,
    pub vocabulary: SkillVocabulary,
}

impl Dataset {
    /// Number of distinct skills `M`.
    pub fn skill_count(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn student_count(&self) -> usize {
        self.sequences.len()
    }

    pub fn record_count(&self) -> usize {
        self.sequences.iter().map(StudentSequence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Flattened records in sequence order.
    pub fn records(&self) -> impl Iterator<Item = InteractionRecord> + '_ {
        self.sequences.iter().flat_map(|s| {
            s.steps
                .iter()
                .enumerate()
                .map(move |(order, step)| InteractionRecord {
                    student_id: s.student_id.clone(),
                    skill: step.skill,
                    correct: step.correct,
                    order,
                })
        })
    }

    /// Same vocabulary, different students.
    pub fn with_sequences(&self, sequences: Vec<StudentSequence>) -> Dataset {
        Dataset {
            sequences,
            vocabulary: self.vocabulary.clone(),
        }
    }

    /// Renders the dataset as CSV (header plus one row per record).
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
            w.write_record(CSV_HEADER.split(','))?;
            for s in &self.sequences {
                for step in &s.steps {
                    let correct = if step.correct { "1" } else { "0" };
                    w.write_record([
                        s.student_id.as_str(),
                        self.vocabulary.raw_id(step.skill),
                        correct,
                    ])?;
                }
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).expect("writing CSV to memory");
        String::from_utf8(w.into_inner().expect("flushed")).expect("CSV of UTF-8 fields")
    }

    pub fn manifest(&self, csv: &[u8]) -> DatasetManifest {
        DatasetManifest {
            skill_count: self.skill_count(),
            skills: self.vocabulary.raw_ids().to_vec(),
            students: self.student_count(),
            records: self.record_count(),
            sha256: sha256_hex(csv),
        }
    }
}

/// Sidecar written next to every CSV the tools produce: the skill
/// vocabulary (so separately stored splits share one index space), `M`, and
/// the checksum of the CSV bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub skill_count: usize,
    pub skills: Vec<String>,
    pub students: usize,
    pub records: usize,
    pub sha256: String,
}

impl DatasetManifest {
    pub fn vocabulary(&self) -> Result<SkillVocabulary> {
        if self.skills.len() != self.skill_count {
            return Err(Error::Config(format!(
                "manifest lists {} skills but declares M = {}",
                self.skills.len(),
                self.skill_count
            )));
        }
        SkillVocabulary::from_raw_ids(self.skills.clone())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Parses `student_id,skill_id,correct` CSV, building the skill vocabulary
/// in first-seen order.
///
/// Rows of one student must be contiguous and in temporal order; a student
/// id that reappears after another student's rows is a parse error.
pub fn parse_interaction_log<R: Read>(source: R) -> Result<Dataset> {
    parse_with(source, None)
}

/// Like [`parse_interaction_log`] but against a fixed vocabulary; unknown
/// skill ids are a parse error.
pub fn parse_with_vocabulary<R: Read>(source: R, vocabulary: &SkillVocabulary) -> Result<Dataset> {
    parse_with(source, Some(vocabulary))
}

fn parse_with<R: Read>(source: R, fixed: Option<&SkillVocabulary>) -> Result<Dataset> {
    let mut vocabulary = fixed.cloned().unwrap_or_default();
    let mut sequences: Vec<StudentSequence> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut saw_header = false;
    let mut record = csv::StringRecord::new();

    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line_no = record.position().map_or(0, |p| p.line() as usize);
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if record.iter().all(str::is_empty) {
            continue;
        }
        if !saw_header {
            if record.iter().ne(CSV_HEADER.split(',')) {
                let found = record.iter().collect::<Vec<_>>().join(",");
                return Err(perr(format!(
                    "expected header `{CSV_HEADER}`, found `{found}`"
                )));
            }
            saw_header = true;
            continue;
        }
        let (student, skill, correct) =
            match (record.get(0), record.get(1), record.get(2), record.len()) {
                (Some(a), Some(b), Some(c), 3) => (a, b, c),
                _ => return Err(perr(format!("expected 3 fields, found {}", record.len()))),
            };
        if student.is_empty() || skill.is_empty() {
            return Err(perr("empty student or skill id".into()));
        }
        let correct = match correct {
            "1" => true,
            "0" => false,
            other => return Err(perr(format!("correct must be 0 or 1, found `{other}`"))),
        };
        let skill = match fixed {
            Some(v) => v
                .index_of(skill)
                .ok_or_else(|| perr(format!("skill `{skill}` is not in the vocabulary")))?,
            None => vocabulary.intern(skill),
        };
        let step = Interaction { skill, correct };
        match sequences.last_mut() {
            Some(last) if last.student_id == student => last.steps.push(step),
            _ => {
                if !seen.insert(student.to_owned()) {
                    return Err(perr(format!(
                        "rows of student `{student}` are not contiguous"
                    )));
                }
                sequences.push(StudentSequence {
                    student_id: student.to_owned(),
                    steps: vec![step],
                });
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        sequences,
        vocabulary,
    })
}

/// Drops every student with two or fewer records. `M` is unchanged.
pub fn filter_short_sequences(ds: Dataset) -> Dataset {
    Dataset {
        sequences: ds.sequences.into_iter().filter(|s| s.len() > 2).collect(),
        vocabulary: ds.vocabulary,
    }
}

/// Train / validation / test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.55,
            val: 0.15,
            test: 0.30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Shuffles students with a seeded permutation, then assigns the first
/// `⌊train·N⌋` to train, the next `⌊val·N⌋` to validation and the rest to
/// test.
pub fn split_by_student(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Split> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9
        || [ratios.train, ratios.val, ratios.test]
            .iter()
            .any(|&r| r < 0.0)
    {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n = ds.student_count();
    if n < 3 {
        return Err(Error::Split { students: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split", &[]));
    // small epsilon keeps e.g. 0.55·100 from flooring to 54
    let n_train = (ratios.train * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
    let pick = |range: &[usize]| {
        ds.with_sequences(range.iter().map(|&i| ds.sequences[i].clone()).collect())
    };
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

/// A window of at most `k` consecutive steps of one student.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub student_id: String,
    /// Index of the first step within the student's full sequence.
    pub offset: usize,
    pub steps: Vec<Interaction>,
}

/// Fixed-width grid of windows; cells past a row's length are padding
/// (skill 0, correct 0, mask false).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub width: usize,
    pub skills: Vec<Vec<usize>>,
    pub correct: Vec<Vec<u8>>,
    pub valid_mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn from_windows(windows: &[Window], k: usize) -> PaddedBatch {
        let mut batch = PaddedBatch {
            width: k,
            skills: Vec::with_capacity(windows.len()),
            correct: Vec::with_capacity(windows.len()),
            valid_mask: Vec::with_capacity(windows.len()),
            lengths: Vec::with_capacity(windows.len()),
        };
        for w in windows {
            let len = w.steps.len().min(k);
            let mut skills = vec![0; k];
            let mut correct = vec![0; k];
            let mut mask = vec![false; k];
            for (t, step) in w.steps.iter().take(len).enumerate() {
                skills[t] = step.skill;
                correct[t] = u8::from(step.correct);
                mask[t] = true;
            }
            batch.skills.push(skills);
            batch.correct.push(correct);
            batch.valid_mask.push(mask);
            batch.lengths.push(len);
        }
        batch
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, r: usize) -> WindowRef<'_> {
        WindowRef {
            skills: &self.skills[r],
            correct: &self.correct[r],
            length: self.lengths[r],
        }
    }
}

/// Borrowed view of one padded window row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef<'a> {
    pub skills: &'a [usize],
    pub correct: &'a [u8],
    pub length: usize,
}

impl<'a> WindowRef<'a> {
    /// Padded width `k`.
    pub fn width(&self) -> usize {
        self.skills.len()
    }

    /// The same window without its padding.
    pub fn trimmed(&self) -> WindowRef<'a> {
        WindowRef {
            skills: &self.skills[..self.length],
            correct: &self.correct[..self.length],
            length: self.length,
        }
    }
}

/// Cuts each student's sequence into consecutive windows of at most `k`
/// steps, in dataset order.
pub fn split_windows(ds: &Dataset, k: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for s in &ds.sequences {
        for (i, chunk) in s.steps.chunks(k.max(1)).enumerate() {
            out.push(Window {
                student_id: s.student_id.clone(),
                offset: i * k,
                steps: chunk.to_vec(),
            });
        }
    }
    out
}

/// Windows of at most `k` steps grouped into batches of `batch` rows (the
/// last batch may be smaller).
pub fn window_sequences(ds: &Dataset, k: usize, batch: usize) -> Result<Vec<PaddedBatch>> {
    if k < 2 || batch == 0 {
        return Err(Error::Config(format!(
            "window width must be ≥ 2 and batch ≥ 1 (k={k}, batch={batch})"
        )));
    }
    let windows = split_windows(ds, k);
    Ok(windows
        .chunks(batch)
        .map(|c| PaddedBatch::from_windows(c, k))
        .collect())
}

/// Knobs of the synthetic response generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub students: usize,
    pub skills: usize,
    pub length: usize,
    pub seed: u64,
    /// Each student's per-attempt ability gain is drawn uniformly from
    /// `[0, max_learning_increment]`.
    pub max_learning_increment: f64,
    /// Replaces every sampled ability when set.
    pub ability_override: Option<f64>,
    /// Replaces every sampled difficulty when set.
    pub difficulty_override: Option<f64>,
}

impl SynthConfig {
    pub fn new(students: usize, skills: usize, length: usize, seed: u64) -> Self {
        SynthConfig {
            students,
            skills,
            length,
            seed,
            max_learning_increment: 0.05,
            ability_override: None,
            difficulty_override: None,
        }
    }
}

/// Seeded synthetic students under a logistic response model.
///
/// Ability `a ~ N(0,1)` per student and difficulty `d ~ N(0,1)` per skill;
/// each step practises a uniformly drawn skill, is answered correctly with
/// probability `σ(a − d)`, and then raises `a` by the student's learning
/// increment.
pub fn generate_synthetic(
    students: usize,
    skills: usize,
    length: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_with(&SynthConfig::new(students, skills, length, seed))
}

pub fn generate_with(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.students == 0 || cfg.skills == 0 || cfg.length == 0 {
        return Err(Error::Config(format!(
            "synthetic counts must be positive: {} students, {} skills, length {}",
            cfg.students, cfg.skills, cfg.length
        )));
    }
    if cfg.max_learning_increment.is_nan() || cfg.max_learning_increment < 0.0 {
        return Err(Error::Config(
            "learning increment must be non-negative".into(),
        ));
    }
    let mut skill_rng = rng::stream(cfg.seed, "synth.skills", &[]);
    let difficulty: Vec<f64> = (0..cfg.skills)
        .map(|_| {
            let d: f64 = skill_rng.sample(StandardNormal);
            cfg.difficulty_override.unwrap_or(d)
        })
        .collect();
    let width = cfg.students.to_string().len();
    let mut vocabulary = SkillVocabulary::default();
    let mut sequences = Vec::with_capacity(cfg.students);
    for s in 0..cfg.students {
        let mut r = rng::stream(cfg.seed, "synth.student", &[s as u64]);
        let sampled: f64 = r.sample(StandardNormal);
        let mut ability = cfg.ability_override.unwrap_or(sampled);
        let increment = cfg.max_learning_increment * r.random::<f64>();
        let steps = (0..cfg.length)
            .map(|_| {
                let skill_raw = r.random_range(0..cfg.skills);
                let p = crate::scalar::Scalar::sigmoid(ability - difficulty[skill_raw]);
                let correct = r.random::<f64>() < p;
                ability += increment;
                Interaction {
                    skill: vocabulary.intern(&skill_raw.to_string()),
                    correct,
                }
            })
            .collect();
        sequences.push(StudentSequence {
            student_id: format!("s{s:0width$}"),
            steps,
        });
    }
    Ok(Dataset {
        sequences,
        vocabulary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_interaction_log(s.as_bytes())
    }

    fn seq(id: &str, n: usize) -> StudentSequence {
        StudentSequence {
            student_id: id.into(),
            steps: vec![
                Interaction {
                    skill: 0,
                    correct: true
                };
                n
            ],
        }
    }

    fn dataset(seqs: Vec<StudentSequence>) -> Dataset {
        Dataset {
            sequences: seqs,
            vocabulary: SkillVocabulary::from_raw_ids(vec!["x".into()]).unwrap(),
        }
    }

    #[test]
    fn parses_three_rows() {
        let ds = parse("student_id,skill_id,correct\nA,3,1\nA,7,0\nA,3,1\n").unwrap();
        assert_eq!(ds.student_count(), 1);
        assert_eq!(ds.skill_count(), 2);
        let (i3, i7) = (
            ds.vocabulary.index_of("3").unwrap(),
            ds.vocabulary.index_of("7").unwrap(),
        );
        assert_eq!(
            ds.sequences[0].steps,
            vec![
                Interaction {
                    skill: i3,
                    correct: true
                },
                Interaction {
                    skill: i7,
                    correct: false
                },
                Interaction {
                    skill: i3,
                    correct: true
                },
            ]
        );
        let orders: Vec<_> = ds.records().map(|r| r.order).collect();
        assert_eq!(orders, vec![0, 1, 2]);
    }

    #[test]
    fn non_binary_correct_names_line() {
        let err = parse("student_id,skill_id,correct\nA,3,1\nA,3,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn wrong_arity_and_header() {
        assert!(matches!(
            parse("student_id,skill_id,correct\nA,3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("a,b,c\nA,3,1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("student_id,skill_id,correct\nA,3,1\nB,3,1\nA,3,0\n"),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse(""), Err(Error::EmptyDataset)));
        assert!(matches!(
            parse("student_id,skill_id,correct\n"),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn crlf_accepted() {
        let ds = parse("student_id,skill_id,correct\r\nA,1,0\r\n").unwrap();
        assert_eq!(ds.record_count(), 1);
    }

    #[test]
    fn quoted_ids_round_trip() {
        let ds = parse("student_id,skill_id,correct\n\"a,b\",\"frac \"\"1\"\"\",1\n").unwrap();
        assert_eq!(ds.sequences[0].student_id, "a,b");
        assert_eq!(ds.vocabulary.raw_id(0), "frac \"1\"");
        assert_eq!(parse(&ds.to_csv()).unwrap(), ds);
    }

    #[test]
    fn fixed_vocabulary_rejects_unknown_skill() {
        let vocab = SkillVocabulary::from_raw_ids(vec!["7".into(), "3".into()]).unwrap();
        let ds = parse_with_vocabulary("student_id,skill_id,correct\nA,3,1\n".as_bytes(), &vocab)
            .unwrap();
        assert_eq!(ds.sequences[0].steps[0].skill, 1);
        assert_eq!(ds.skill_count(), 2);
        assert!(
            parse_with_vocabulary("student_id,skill_id,correct\nA,9,1\n".as_bytes(), &vocab)
                .is_err()
        );
    }

    #[test]
    fn filter_examples() {
        let out = filter_short_sequences(dataset(vec![seq("A", 5), seq("B", 2)]));
        assert_eq!(
            out.sequences
                .iter()
                .map(|s| s.student_id.as_str())
                .collect::<Vec<_>>(),
            ["A"]
        );
        assert_eq!(
            filter_short_sequences(dataset(vec![seq("A", 3)])).student_count(),
            1
        );
        let empty = filter_short_sequences(dataset(vec![seq("B", 1)]));
        assert!(empty.is_empty());
        assert_eq!(empty.skill_count(), 1);
    }

    #[test]
    fn split_sizes() {
        let ds = dataset((0..100).map(|i| seq(&format!("s{i}"), 3)).collect());
        let sp = split_by_student(&ds, SplitRatios::default(), 1).unwrap();
        assert_eq!(
            (
                sp.train.student_count(),
                sp.val.student_count(),
                sp.test.student_count()
            ),
            (55, 15, 30)
        );
        let ds7 = dataset((0..7).map(|i| seq(&format!("s{i}"), 3)).collect());
        let sp7 = split_by_student(&ds7, SplitRatios::default(), 1).unwrap();
        assert_eq!(
            (
                sp7.train.student_count(),
                sp7.val.student_count(),
                sp7.test.student_count()
            ),
            (3, 1, 3)
        );
        assert_eq!(
            split_by_student(&ds, SplitRatios::default(), 1).unwrap(),
            sp
        );
        assert!(matches!(
            split_by_student(
                &dataset(vec![seq("a", 3), seq("b", 3)]),
                SplitRatios::default(),
                0
            ),
            Err(Error::Split { students: 2 })
        ));
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(split_by_student(&ds, bad, 0).is_err());
    }

    #[test]
    fn window_examples() {
        let lens = |n: usize, k: usize| -> Vec<usize> {
            let ds = dataset(vec![seq("A", n)]);
            window_sequences(&ds, k, 50)
                .unwrap()
                .iter()
                .flat_map(|b| b.lengths.clone())
                .collect()
        };
        assert_eq!(lens(5, 9), vec![5]);
        assert_eq!(lens(20, 9), vec![9, 9, 2]);
        assert_eq!(lens(3, 3), vec![3]);
        let ds = dataset(vec![seq("A", 5)]);
        let b = &window_sequences(&ds, 9, 50).unwrap()[0];
        assert_eq!(b.valid_mask[0].iter().filter(|&&m| m).count(), 5);
        assert!(
            b.skills[0][5..].iter().all(|&s| s == 0) && b.correct[0][5..].iter().all(|&c| c == 0)
        );
        assert!(window_sequences(&ds, 1, 50).is_err());
    }

    #[test]
    fn batches_group_rows() {
        let ds = dataset((0..7).map(|i| seq(&format!("s{i}"), 4)).collect());
        let batches = window_sequences(&ds, 4, 3).unwrap();
        assert_eq!(
            batches.iter().map(PaddedBatch::rows).collect::<Vec<_>>(),
            vec![3, 3, 1]
        );
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(30, 8, 12, 5).unwrap();
        let b = generate_synthetic(30, 8, 12, 5).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_ne!(
            a.to_csv(),
            generate_synthetic(30, 8, 12, 6).unwrap().to_csv()
        );
        assert_eq!(a.record_count(), 360);
        assert!(generate_synthetic(0, 8, 12, 5).is_err());
    }

    #[test]
    fn synthetic_saturates() {
        let mut cfg = SynthConfig::new(5, 4, 20, 1);
        cfg.ability_override = Some(1000.0);
        let ds = generate_with(&cfg).unwrap();
        assert!(ds
            .sequences
            .iter()
            .all(|s| s.steps.iter().all(|x| x.correct)));
    }

    #[test]
    fn synthetic_balanced_rate() {
        // Monte Carlo: with a = d = 0 and no learning, P(correct) = σ(0) = 0.5
        let mut cfg = SynthConfig::new(100, 5, 100, 3);
        cfg.ability_override = Some(0.0);
        cfg.difficulty_override = Some(0.0);
        cfg.max_learning_increment = 0.0;
        let ds = generate_with(&cfg).unwrap();
        let n = ds.record_count();
        let hits = ds.records().filter(|r| r.correct).count();
        assert_eq!(n, 10_000);
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn manifest_restores_vocabulary() {
        let ds = parse("student_id,skill_id,correct\nA,b,1\nA,a,0\nA,b,1\n").unwrap();
        let csv = ds.to_csv();
        let m = ds.manifest(csv.as_bytes());
        assert_eq!(m.skills, vec!["b", "a"]);
        assert_eq!(m.sha256.len(), 64);
        let json = serde_json::to_string(&m).unwrap();
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.vocabulary().unwrap(), ds.vocabulary);
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
