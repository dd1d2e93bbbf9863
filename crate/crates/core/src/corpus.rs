//! Labeled premise/hypothesis corpora.
//!
//! Two on-disk formats are read here, both newline-delimited JSON:
//!
//! ```text
//! NLI:  {"premise_id","premise","hypothesis","label":int,"scale":"MNLI3"|"JOCI5"}
//! COPA: {"item_id","premise","choice1","choice2","question":"cause"|"effect","label":1|2}
//! ```
//!
//! Records are grouped by explicit `premise_id`, never by premise text.
//! The module also generates seeded synthetic corpora that stand in for the
//! real NLI data at desk scale.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinal label scale of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scale {
    /// entailment 2 > neutral 1 > contradiction 0
    #[serde(rename = "MNLI3")]
    Mnli3,
    /// very likely 5 > likely 4 > plausible 3 > technically possible 2 > impossible 1
    #[serde(rename = "JOCI5")]
    Joci5,
    /// correct alternative 1 > other alternative 0
    #[serde(rename = "COPA2")]
    Copa2,
}

impl Scale {
    pub fn min_value(self) -> u8 {
        match self {
            Scale::Mnli3 | Scale::Copa2 => 0,
            Scale::Joci5 => 1,
        }
    }

    pub fn max_value(self) -> u8 {
        match self {
            Scale::Mnli3 => 2,
            Scale::Joci5 => 5,
            Scale::Copa2 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Mnli3 => "MNLI3",
            Scale::Joci5 => "JOCI5",
            Scale::Copa2 => "COPA2",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MNLI3" => Ok(Scale::Mnli3),
            "JOCI5" => Ok(Scale::Joci5),
            "COPA2" => Ok(Scale::Copa2),
            other => Err(Error::validation(format!("unknown scale `{other}`"))),
        }
    }
}

/// An ordinal plausibility judgement. Larger values are more plausible.
///
/// Levels from different scales are incomparable: `partial_cmp` returns
/// `None` for them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PlausibilityLevel {
    value: u8,
    scale: Scale,
}

impl PlausibilityLevel {
    pub fn new(value: i64, scale: Scale) -> Result<Self> {
        if value < scale.min_value() as i64 || value > scale.max_value() as i64 {
            return Err(Error::validation(format!(
                "label {value} outside {scale} range {}..={}",
                scale.min_value(),
                scale.max_value()
            )));
        }
        Ok(Self { value: value as u8, scale })
    }

    pub fn value(self) -> u8 {
        self.value
    }

    pub fn scale(self) -> Scale {
        self.scale
    }
}

impl PartialOrd for PlausibilityLevel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        (self.scale == other.scale).then(|| self.value.cmp(&other.value))
    }
}

/// One premise/hypothesis pair with its gold plausibility level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    pub premise_id: String,
    pub premise: String,
    pub hypothesis: String,
    pub level: PlausibilityLevel,
}

#[derive(Serialize, Deserialize)]
struct NliRecord {
    premise_id: String,
    premise: String,
    hypothesis: String,
    label: i64,
    scale: String,
}

/// Reads NLI-style JSONL records, one [`LabeledPair`] per non-blank line.
pub fn parse_nli_records<R: BufRead>(input: R) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    let mut premises: HashMap<String, (String, Scale)> = HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: NliRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let scale = Scale::from_str(&record.scale).map_err(|e| relocate(e, line_no))?;
        if scale == Scale::Copa2 {
            return Err(Error::validation_at(line_no, "COPA2 records belong in the COPA schema"));
        }
        let level = PlausibilityLevel::new(record.label, scale).map_err(|e| relocate(e, line_no))?;
        let premise = non_empty(&record.premise, "premise", line_no)?;
        let hypothesis = non_empty(&record.hypothesis, "hypothesis", line_no)?;
        match premises.get(&record.premise_id) {
            Some((text, known_scale)) => {
                if *text != premise {
                    return Err(Error::Consistency(format!(
                        "line {line_no}: premise_id `{}` has conflicting premise text",
                        record.premise_id
                    )));
                }
                if *known_scale != scale {
                    return Err(Error::Consistency(format!(
                        "line {line_no}: premise_id `{}` mixes scales {known_scale} and {scale}",
                        record.premise_id
                    )));
                }
            }
            None => {
                premises.insert(record.premise_id.clone(), (premise.clone(), scale));
            }
        }
        pairs.push(LabeledPair { premise_id: record.premise_id, premise, hypothesis, level });
    }
    Ok(pairs)
}

/// Writes pairs back out in the NLI JSONL schema.
pub fn write_nli_records<W: Write>(pairs: &[LabeledPair], mut out: W) -> Result<()> {
    for pair in pairs {
        let record = NliRecord {
            premise_id: pair.premise_id.clone(),
            premise: pair.premise.clone(),
            hypothesis: pair.hypothesis.clone(),
            label: pair.level.value() as i64,
            scale: pair.level.scale().as_str().to_string(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn relocate(err: Error, line: usize) -> Error {
    match err {
        Error::Validation { message, .. } => Error::validation_at(line, message),
        other => other,
    }
}

fn non_empty(text: &str, field: &str, line: usize) -> Result<String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::validation_at(line, format!("{field} is empty")));
    }
    Ok(trimmed.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopaQuestion {
    Cause,
    Effect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopaChoice {
    Alt1,
    Alt2,
}

/// A COPA-style two-alternative item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopaItem {
    pub item_id: String,
    pub given: String,
    pub alt1: String,
    pub alt2: String,
    pub question: CopaQuestion,
    pub correct: CopaChoice,
}

impl CopaItem {
    /// Returns `(correct, other)` alternatives.
    pub fn ranked_alternatives(&self) -> (&str, &str) {
        match self.correct {
            CopaChoice::Alt1 => (&self.alt1, &self.alt2),
            CopaChoice::Alt2 => (&self.alt2, &self.alt1),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CopaRecord {
    item_id: String,
    premise: String,
    choice1: String,
    choice2: String,
    question: String,
    label: i64,
}

pub fn parse_copa_records<R: BufRead>(input: R) -> Result<Vec<CopaItem>> {
    let mut items = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CopaRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let question = match record.question.as_str() {
            "cause" => CopaQuestion::Cause,
            "effect" => CopaQuestion::Effect,
            other => {
                return Err(Error::validation_at(line_no, format!("unknown question `{other}`")))
            }
        };
        let correct = match record.label {
            1 => CopaChoice::Alt1,
            2 => CopaChoice::Alt2,
            other => return Err(Error::validation_at(line_no, format!("label {other} is not 1 or 2"))),
        };
        let given = non_empty(&record.premise, "premise", line_no)?;
        let alt1 = non_empty(&record.choice1, "choice1", line_no)?;
        let alt2 = non_empty(&record.choice2, "choice2", line_no)?;
        if alt1 == alt2 {
            return Err(Error::validation_at(line_no, "choice1 and choice2 are identical"));
        }
        items.push(CopaItem { item_id: record.item_id, given, alt1, alt2, question, correct });
    }
    Ok(items)
}

pub fn write_copa_records<W: Write>(items: &[CopaItem], mut out: W) -> Result<()> {
    for item in items {
        let record = CopaRecord {
            item_id: item.item_id.clone(),
            premise: item.given.clone(),
            choice1: item.alt1.clone(),
            choice2: item.alt2.clone(),
            question: match item.question {
                CopaQuestion::Cause => "cause".into(),
                CopaQuestion::Effect => "effect".into(),
            },
            label: match item.correct {
                CopaChoice::Alt1 => 1,
                CopaChoice::Alt2 => 2,
            },
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMode {
    /// Every level draws hypothesis tokens from its own vocabulary slice.
    Separable,
    /// One high, one mid and one low hypothesis per premise. Mid hypotheses
    /// come from a pool shared by all premises; high and low hypotheses use
    /// topic slices that swap roles between neighbouring topics, so ranking
    /// needs the premise.
    AdversarialNeutral,
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_premises: usize,
    pub levels_per_premise: Vec<PlausibilityLevel>,
    pub vocab_size: usize,
    pub tokens_per_text: usize,
    pub mode: SynthMode,
}

/// Topic count for the adversarial layout.
pub const ADVERSARIAL_TOPICS: usize = 4;
/// Size of the shared mid-hypothesis pool.
pub const MID_POOL_SIZE: usize = 8;

impl SynthSpec {
    /// Three-level MNLI-scale spec with the default desk-scale vocabulary.
    pub fn mnli(n_premises: usize, mode: SynthMode) -> Self {
        let levels = [2, 1, 0]
            .iter()
            .map(|&v| PlausibilityLevel { value: v, scale: Scale::Mnli3 })
            .collect();
        Self { n_premises, levels_per_premise: levels, vocab_size: 72, tokens_per_text: 5, mode }
    }

    fn distinct_levels(&self) -> Vec<PlausibilityLevel> {
        let set: BTreeSet<u8> = self.levels_per_premise.iter().map(|l| l.value()).collect();
        let scale = self.levels_per_premise[0].scale();
        set.into_iter().map(|value| PlausibilityLevel { value, scale }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.levels_per_premise.first() else {
            return Err(Error::validation("levels_per_premise is empty"));
        };
        if self.levels_per_premise.iter().any(|l| l.scale() != first.scale()) {
            return Err(Error::validation("levels_per_premise mixes scales"));
        }
        let distinct = self.distinct_levels().len();
        if self.vocab_size < 3 * distinct {
            return Err(Error::validation(format!(
                "vocab_size {} below 3 x {distinct} distinct levels",
                self.vocab_size
            )));
        }
        if self.tokens_per_text == 0 {
            return Err(Error::validation("tokens_per_text must be at least 1"));
        }
        if self.mode == SynthMode::AdversarialNeutral
            && (distinct != 3 || self.levels_per_premise.len() != 3)
        {
            return Err(Error::validation(
                "adversarial mode needs exactly one high, one mid and one low level",
            ));
        }
        Ok(())
    }
}

fn synth_text(rng: &mut ChaCha8Rng, lo: usize, hi: usize, len: usize) -> String {
    (0..len).map(|_| format!("t{}", rng.gen_range(lo..hi))).collect::<Vec<_>>().join(" ")
}

/// Deterministic synthetic corpus with `n_premises × |levels_per_premise|` pairs.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<LabeledPair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct = spec.distinct_levels();
    let len = spec.tokens_per_text;
    let mut pairs = Vec::with_capacity(spec.n_premises * spec.levels_per_premise.len());

    match spec.mode {
        SynthMode::Separable => {
            // level rank r owns [r*slice, (r+1)*slice); premises get the rest
            let slice = spec.vocab_size / (distinct.len() + 1);
            let premise_lo = distinct.len() * slice;
            for i in 0..spec.n_premises {
                let premise_id = format!("syn-{i:05}");
                let premise = synth_text(&mut rng, premise_lo, spec.vocab_size, len);
                for level in &spec.levels_per_premise {
                    let rank = distinct.iter().position(|l| l == level).unwrap_or(0);
                    let hypothesis = synth_text(&mut rng, rank * slice, (rank + 1) * slice, len);
                    pairs.push(LabeledPair {
                        premise_id: premise_id.clone(),
                        premise: premise.clone(),
                        hypothesis,
                        level: *level,
                    });
                }
            }
        }
        SynthMode::AdversarialNeutral => {
            let topics = ADVERSARIAL_TOPICS;
            let slice = spec.vocab_size / (2 * topics + 1);
            let mid_lo = 2 * topics * slice;
            let mid_pool: Vec<String> = (0..MID_POOL_SIZE)
                .map(|_| synth_text(&mut rng, mid_lo, spec.vocab_size, len))
                .collect();
            let (low, high) = (distinct[0], distinct[2]);
            for i in 0..spec.n_premises {
                let premise_id = format!("syn-{i:05}");
                let topic = rng.gen_range(0..topics);
                let premise = synth_text(&mut rng, topic * slice, (topic + 1) * slice, len);
                let hyp_slice = |t: usize| ((topics + t) * slice, (topics + t + 1) * slice);
                let (hi_lo, hi_hi) = hyp_slice(topic);
                let (lo_lo, lo_hi) = hyp_slice((topic + 1) % topics);
                let high_text = synth_text(&mut rng, hi_lo, hi_hi, len);
                let low_text = synth_text(&mut rng, lo_lo, lo_hi, len);
                let mid_text = mid_pool.choose(&mut rng).cloned().unwrap_or_default();
                for level in &spec.levels_per_premise {
                    let hypothesis = if *level == high {
                        high_text.clone()
                    } else if *level == low {
                        low_text.clone()
                    } else {
                        mid_text.clone()
                    };
                    pairs.push(LabeledPair {
                        premise_id: premise_id.clone(),
                        premise: premise.clone(),
                        hypothesis,
                        level: *level,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// Index of the vocabulary slice a separable-mode token was drawn from.
///
/// Returns `None` for premise tokens and for strings that are not synthetic
/// tokens.
pub fn separable_slice_of(token: &str, spec: &SynthSpec) -> Option<usize> {
    let idx: usize = token.strip_prefix('t')?.parse().ok()?;
    let levels = spec.distinct_levels().len();
    let slice = spec.vocab_size / (levels + 1);
    (idx < levels * slice).then(|| idx / slice)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lvl(v: i64, s: Scale) -> PlausibilityLevel {
        PlausibilityLevel::new(v, s).unwrap()
    }

    #[test]
    fn parses_table_example_line() {
        let line = r#"{"premise_id":"p1","premise":"I just stopped where I was.","hypothesis":"I stopped in my tracks","label":2,"scale":"MNLI3"}"#;
        let pairs = parse_nli_records(line.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].level, lvl(2, Scale::Mnli3));
        assert_eq!(pairs[0].premise, "I just stopped where I was.");
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_nli_records(&b""[..]).unwrap().is_empty());
        assert!(parse_copa_records(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn label_out_of_range_names_line() {
        let input = concat!(
            r#"{"premise_id":"p1","premise":"a","hypothesis":"b","label":1,"scale":"MNLI3"}"#,
            "\n",
            r#"{"premise_id":"p1","premise":"a","hypothesis":"c","label":7,"scale":"MNLI3"}"#,
        );
        match parse_nli_records(input.as_bytes()) {
            Err(Error::Validation { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "\n{\"premise_id\": 3}\n";
        match parse_nli_records(input.as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conflicting_premise_text_is_consistency_error() {
        let input = concat!(
            r#"{"premise_id":"p1","premise":"a","hypothesis":"b","label":1,"scale":"MNLI3"}"#,
            "\n",
            r#"{"premise_id":"p1","premise":"z","hypothesis":"c","label":0,"scale":"MNLI3"}"#,
        );
        assert!(matches!(parse_nli_records(input.as_bytes()), Err(Error::Consistency(_))));
    }

    #[test]
    fn trims_outer_whitespace_only() {
        let line = r#"{"premise_id":"p","premise":"  Hello World ","hypothesis":"\tX y\n","label":3,"scale":"JOCI5"}"#;
        let pairs = parse_nli_records(line.as_bytes()).unwrap();
        assert_eq!(pairs[0].premise, "Hello World");
        assert_eq!(pairs[0].hypothesis, "X y");
    }

    #[test]
    fn blank_hypothesis_rejected() {
        let line = r#"{"premise_id":"p","premise":"a","hypothesis":"   ","label":0,"scale":"MNLI3"}"#;
        assert!(matches!(parse_nli_records(line.as_bytes()), Err(Error::Validation { .. })));
    }

    #[test]
    fn parses_copa_cause_item() {
        let line = r#"{"item_id":"c5","premise":"The girl landed in the pool.","choice1":"She jumped off the diving board.","choice2":"She ran on the pool deck.","question":"cause","label":1}"#;
        let items = parse_copa_records(line.as_bytes()).unwrap();
        assert_eq!(items[0].question, CopaQuestion::Cause);
        assert_eq!(items[0].correct, CopaChoice::Alt1);
        assert_eq!(items[0].ranked_alternatives().0, "She jumped off the diving board.");
    }

    #[test]
    fn copa_rejects_bad_question_and_identical_choices() {
        let bad_q = r#"{"item_id":"c","premise":"a","choice1":"b","choice2":"c","question":"causes","label":1}"#;
        assert!(matches!(parse_copa_records(bad_q.as_bytes()), Err(Error::Validation { .. })));
        let same = r#"{"item_id":"c","premise":"a","choice1":"b","choice2":"b","question":"effect","label":2}"#;
        assert!(matches!(parse_copa_records(same.as_bytes()), Err(Error::Validation { .. })));
    }

    #[test]
    fn levels_across_scales_are_incomparable() {
        assert_eq!(lvl(1, Scale::Mnli3).partial_cmp(&lvl(1, Scale::Joci5)), None);
        assert!(lvl(2, Scale::Mnli3) > lvl(1, Scale::Mnli3));
        assert!(PlausibilityLevel::new(0, Scale::Joci5).is_err());
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let spec = SynthSpec::mnli(2, SynthMode::Separable);
        let a = generate_synthetic_corpus(&spec, 11).unwrap();
        assert_eq!(a.len(), 6);
        for v in [0, 1, 2] {
            assert_eq!(a.iter().filter(|p| p.level.value() == v).count(), 2);
        }
        assert_eq!(a, generate_synthetic_corpus(&spec, 11).unwrap());
        assert_ne!(a, generate_synthetic_corpus(&spec, 12).unwrap());
    }

    #[test]
    fn synth_spec_vocab_invariant() {
        let mut spec = SynthSpec::mnli(3, SynthMode::Separable);
        spec.vocab_size = 8;
        assert!(generate_synthetic_corpus(&spec, 0).is_err());
        spec.vocab_size = 9;
        assert!(generate_synthetic_corpus(&spec, 0).is_ok());
    }

    #[test]
    fn adversarial_mid_hypotheses_come_from_shared_pool() {
        let spec = SynthSpec::mnli(200, SynthMode::AdversarialNeutral);
        let pairs = generate_synthetic_corpus(&spec, 3).unwrap();
        let mids: BTreeSet<&str> = pairs
            .iter()
            .filter(|p| p.level.value() == 1)
            .map(|p| p.hypothesis.as_str())
            .collect();
        assert!(mids.len() <= MID_POOL_SIZE);
        // a high-level hypothesis slice is the low-level slice of another topic
        let his: BTreeSet<&str> = pairs
            .iter()
            .filter(|p| p.level.value() == 2)
            .flat_map(|p| p.hypothesis.split(' '))
            .collect();
        let los: BTreeSet<&str> = pairs
            .iter()
            .filter(|p| p.level.value() == 0)
            .flat_map(|p| p.hypothesis.split(' '))
            .collect();
        assert!(his.intersection(&los).count() > 0);
    }

    #[test]
    fn adversarial_needs_three_levels() {
        let mut spec = SynthSpec::mnli(3, SynthMode::AdversarialNeutral);
        spec.levels_per_premise.pop();
        assert!(spec.validate().is_err());
    }
}
