//! Recasting labeled corpora as `(p, h, h')` triplet datasets.
//!
//! A triplet says `preferred` is more plausible than `dispreferred` given the
//! shared text. Premise groups are visited in order of first appearance and,
//! within a group, hypotheses in input order, so every recast is
//! deterministic.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CopaItem, CopaQuestion, LabeledPair, PlausibilityLevel, Scale};
use crate::error::{Error, Result};

/// Which slot of the scorer the shared text occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// Score as `F(shared, alternative)`.
    #[serde(rename = "SP")]
    SharedIsPremise,
    /// Score as `F(alternative, shared)`; used for COPA cause questions.
    #[serde(rename = "SH")]
    SharedIsHypothesis,
}

impl Orientation {
    /// Orders `(shared, alternative)` into `(premise, hypothesis)`.
    pub fn arrange<'a>(self, shared: &'a str, alternative: &'a str) -> (&'a str, &'a str) {
        match self {
            Orientation::SharedIsPremise => (shared, alternative),
            Orientation::SharedIsHypothesis => (alternative, shared),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Mnli1,
    Mnli2Train,
    Mnli2Dev,
    Joci1,
    Joci2,
    Copa,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Provenance::Mnli1 => "MNLI1",
            Provenance::Mnli2Train => "MNLI2_TRAIN",
            Provenance::Mnli2Dev => "MNLI2_DEV",
            Provenance::Joci1 => "JOCI1",
            Provenance::Joci2 => "JOCI2",
            Provenance::Copa => "COPA",
            Provenance::Synthetic => "SYNTHETIC",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub premise_id: String,
    pub shared: String,
    pub preferred: String,
    pub dispreferred: String,
    pub orientation: Orientation,
    pub level_hi: PlausibilityLevel,
    pub level_lo: PlausibilityLevel,
}

impl Triplet {
    /// `(premise, hypothesis)` for the preferred and dispreferred sides.
    pub fn scored_pairs(&self) -> ((&str, &str), (&str, &str)) {
        (
            self.orientation.arrange(&self.shared, &self.preferred),
            self.orientation.arrange(&self.shared, &self.dispreferred),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletDataset {
    pub triplets: Vec<Triplet>,
    pub scale: Scale,
    pub provenance: Provenance,
}

impl TripletDataset {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Subset by triplet index, keeping scale and provenance.
    pub fn select(&self, indices: &[usize]) -> TripletDataset {
        TripletDataset {
            triplets: indices.iter().map(|&i| self.triplets[i].clone()).collect(),
            scale: self.scale,
            provenance: self.provenance,
        }
    }
}

/// Hypotheses of one premise after `(text, level)` deduplication.
struct PremiseGroup<'a> {
    premise_id: &'a str,
    premise: &'a str,
    hypotheses: Vec<(&'a str, PlausibilityLevel)>,
}

fn group_by_premise<'a>(pairs: &'a [LabeledPair], scale: Scale) -> Result<Vec<PremiseGroup<'a>>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<PremiseGroup<'a>> = Vec::new();
    for pair in pairs {
        if pair.level.scale() != scale {
            return Err(Error::validation(format!(
                "premise `{}` is on scale {}, expected {scale}",
                pair.premise_id,
                pair.level.scale()
            )));
        }
        let slot = *index.entry(&pair.premise_id).or_insert_with(|| {
            groups.push(PremiseGroup {
                premise_id: &pair.premise_id,
                premise: &pair.premise,
                hypotheses: Vec::new(),
            });
            groups.len() - 1
        });
        let group = &mut groups[slot];
        if group.premise != pair.premise {
            return Err(Error::Consistency(format!(
                "premise_id `{}` has conflicting premise text",
                pair.premise_id
            )));
        }
        let entry = (pair.hypothesis.as_str(), pair.level);
        if !group.hypotheses.contains(&entry) {
            group.hypotheses.push(entry);
        }
    }
    Ok(groups)
}

fn group_triplets(group: &PremiseGroup<'_>, predicate: &dyn Fn(u8, u8) -> bool) -> Vec<Triplet> {
    let mut out = Vec::new();
    for &(hi_text, hi) in &group.hypotheses {
        for &(lo_text, lo) in &group.hypotheses {
            if hi.value() > lo.value() && hi_text != lo_text && predicate(hi.value(), lo.value()) {
                out.push(Triplet {
                    premise_id: group.premise_id.to_string(),
                    shared: group.premise.to_string(),
                    preferred: hi_text.to_string(),
                    dispreferred: lo_text.to_string(),
                    orientation: Orientation::SharedIsPremise,
                    level_hi: hi,
                    level_lo: lo,
                });
            }
        }
    }
    out
}

/// Emits one triplet per ordered hypothesis pair with a strictly higher
/// first level that `predicate(hi, lo)` accepts.
pub fn build_triplets(
    pairs: &[LabeledPair],
    scale: Scale,
    predicate: impl Fn(u8, u8) -> bool,
    orientation: Orientation,
    provenance: Provenance,
) -> Result<TripletDataset> {
    let groups = group_by_premise(pairs, scale)?;
    let mut triplets: Vec<Triplet> =
        groups.iter().flat_map(|g| group_triplets(g, &predicate)).collect();
    for t in &mut triplets {
        t.orientation = orientation;
    }
    Ok(TripletDataset { triplets, scale, provenance })
}

fn expect_scale(pairs: &[LabeledPair], scale: Scale) -> Result<()> {
    match pairs.iter().find(|p| p.level.scale() != scale) {
        Some(p) => Err(Error::validation(format!(
            "expected a {scale} corpus, premise `{}` is {}",
            p.premise_id,
            p.level.scale()
        ))),
        None => Ok(()),
    }
}

/// All 2/1, 2/0 and 1/0 comparisons.
pub fn recast_mnli1(pairs: &[LabeledPair]) -> Result<TripletDataset> {
    expect_scale(pairs, Scale::Mnli3)?;
    build_triplets(pairs, Scale::Mnli3, |_, _| true, Orientation::SharedIsPremise, Provenance::Mnli1)
}

#[derive(Clone, Debug)]
pub struct Mnli2Split {
    pub train: TripletDataset,
    pub dev: TripletDataset,
    /// Premises lacking a hypothesis at one of the three levels.
    pub skipped_premises: usize,
}

/// The adversarial split: per premise a seeded coin sends the 2/1 triplets
/// to one side and the 1/0 triplets to the other, so every neutral
/// hypothesis is preferred on one side and dispreferred on the other.
pub fn recast_mnli2_split(pairs: &[LabeledPair], seed: u64) -> Result<Mnli2Split> {
    expect_scale(pairs, Scale::Mnli3)?;
    let groups = group_by_premise(pairs, Scale::Mnli3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut skipped = 0;
    for group in &groups {
        let has = |v: u8| group.hypotheses.iter().any(|(_, l)| l.value() == v);
        if !(has(2) && has(1) && has(0)) {
            skipped += 1;
            continue;
        }
        let upper = group_triplets(group, &|hi, lo| (hi, lo) == (2, 1));
        let lower = group_triplets(group, &|hi, lo| (hi, lo) == (1, 0));
        if rng.gen_bool(0.5) {
            train.extend(upper);
            dev.extend(lower);
        } else {
            train.extend(lower);
            dev.extend(upper);
        }
    }
    Ok(Mnli2Split {
        train: TripletDataset { triplets: train, scale: Scale::Mnli3, provenance: Provenance::Mnli2Train },
        dev: TripletDataset { triplets: dev, scale: Scale::Mnli3, provenance: Provenance::Mnli2Dev },
        skipped_premises: skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JociVariant {
    /// `y_h > y_h' >= 3`
    Joci1,
    /// `(y_h, y_h')` in `{(5,4), (4,3)}`
    Joci2,
}

pub fn recast_joci(pairs: &[LabeledPair], variant: JociVariant) -> Result<TripletDataset> {
    expect_scale(pairs, Scale::Joci5)?;
    match variant {
        JociVariant::Joci1 => build_triplets(
            pairs,
            Scale::Joci5,
            |_, lo| lo >= 3,
            Orientation::SharedIsPremise,
            Provenance::Joci1,
        ),
        JociVariant::Joci2 => build_triplets(
            pairs,
            Scale::Joci5,
            |hi, lo| matches!((hi, lo), (5, 4) | (4, 3)),
            Orientation::SharedIsPremise,
            Provenance::Joci2,
        ),
    }
}

/// One triplet per item. Cause questions put the alternatives in the
/// premise slot.
pub fn recast_copa(items: &[CopaItem]) -> TripletDataset {
    let hi = PlausibilityLevel::new(1, Scale::Copa2).expect("1 is on the COPA scale");
    let lo = PlausibilityLevel::new(0, Scale::Copa2).expect("0 is on the COPA scale");
    let triplets = items
        .iter()
        .map(|item| {
            let (correct, other) = item.ranked_alternatives();
            Triplet {
                premise_id: item.item_id.clone(),
                shared: item.given.clone(),
                preferred: correct.to_string(),
                dispreferred: other.to_string(),
                orientation: copa_orientation(item.question),
                level_hi: hi,
                level_lo: lo,
            }
        })
        .collect();
    TripletDataset { triplets, scale: Scale::Copa2, provenance: Provenance::Copa }
}

fn copa_orientation(question: CopaQuestion) -> Orientation {
    match question {
        CopaQuestion::Effect => Orientation::SharedIsPremise,
        CopaQuestion::Cause => Orientation::SharedIsHypothesis,
    }
}

/// Two-column triplet-count table.
pub fn statistics_table(datasets: &[&TripletDataset]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>10}", "Dataset", "Triplets");
    for ds in datasets {
        let _ = writeln!(out, "{:<14} {:>10}", ds.provenance.to_string(), ds.len());
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    premise_id: String,
    shared: String,
    preferred: String,
    dispreferred: String,
    orientation: Orientation,
    level_hi: i64,
    level_lo: i64,
    provenance: Provenance,
}

pub fn write_triplets<W: Write>(dataset: &TripletDataset, mut out: W) -> Result<()> {
    for t in &dataset.triplets {
        let record = TripletRecord {
            premise_id: t.premise_id.clone(),
            shared: t.shared.clone(),
            preferred: t.preferred.clone(),
            dispreferred: t.dispreferred.clone(),
            orientation: t.orientation,
            level_hi: t.level_hi.value() as i64,
            level_lo: t.level_lo.value() as i64,
            provenance: dataset.provenance,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn scale_for(provenance: Provenance, max_level: i64) -> Scale {
    match provenance {
        Provenance::Mnli1 | Provenance::Mnli2Train | Provenance::Mnli2Dev => Scale::Mnli3,
        Provenance::Joci1 | Provenance::Joci2 => Scale::Joci5,
        Provenance::Copa => Scale::Copa2,
        Provenance::Synthetic if max_level > 2 => Scale::Joci5,
        Provenance::Synthetic => Scale::Mnli3,
    }
}

/// Reads a triplet JSONL file. The file must be non-empty and carry a single
/// provenance.
pub fn read_triplets<R: BufRead>(input: R) -> Result<TripletDataset> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripletRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        records.push((idx + 1, record));
    }
    let Some((_, first)) = records.first() else {
        return Err(Error::validation("triplet file holds no triplets"));
    };
    let provenance = first.provenance;
    let max_level = records.iter().map(|(_, r)| r.level_hi).max().unwrap_or(0);
    let scale = scale_for(provenance, max_level);
    let mut triplets = Vec::with_capacity(records.len());
    for (line, r) in records {
        if r.provenance != provenance {
            return Err(Error::validation_at(line, "mixed provenance in one triplet file"));
        }
        let at = |e: Error| match e {
            Error::Validation { message, .. } => Error::validation_at(line, message),
            other => other,
        };
        let level_hi = PlausibilityLevel::new(r.level_hi, scale).map_err(at)?;
        let level_lo = PlausibilityLevel::new(r.level_lo, scale).map_err(at)?;
        if level_hi.value() <= level_lo.value() {
            return Err(Error::validation_at(line, "level_hi must exceed level_lo"));
        }
        if r.preferred == r.dispreferred {
            return Err(Error::validation_at(line, "preferred equals dispreferred"));
        }
        triplets.push(Triplet {
            premise_id: r.premise_id,
            shared: r.shared,
            preferred: r.preferred,
            dispreferred: r.dispreferred,
            orientation: r.orientation,
            level_hi,
            level_lo,
        });
    }
    Ok(TripletDataset { triplets, scale, provenance })
}

/// Text-side candidate set: one shared text with ranked alternatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateGroup {
    pub premise_id: String,
    pub shared: String,
    pub orientation: Orientation,
    pub candidates: Vec<String>,
    pub levels: Vec<PlausibilityLevel>,
    pub correct_index: usize,
}

impl CandidateGroup {
    /// Every `(i, j)` with `levels[i] > levels[j]`.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.levels.len() {
            for j in 0..self.levels.len() {
                if self.levels[i].value() > self.levels[j].value() {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// All (deduplicated) hypotheses of each premise, gold = first highest level.
pub fn candidate_groups(pairs: &[LabeledPair]) -> Result<Vec<CandidateGroup>> {
    let Some(first) = pairs.first() else {
        return Ok(Vec::new());
    };
    let groups = group_by_premise(pairs, first.level.scale())?;
    Ok(groups
        .into_iter()
        .map(|g| {
            let levels: Vec<PlausibilityLevel> = g.hypotheses.iter().map(|h| h.1).collect();
            let top = levels.iter().map(|l| l.value()).max().unwrap_or(0);
            CandidateGroup {
                premise_id: g.premise_id.to_string(),
                shared: g.premise.to_string(),
                orientation: Orientation::SharedIsPremise,
                candidates: g.hypotheses.iter().map(|h| h.0.to_string()).collect(),
                correct_index: levels.iter().position(|l| l.value() == top).unwrap_or(0),
                levels,
            }
        })
        .collect())
}

pub fn copa_candidate_groups(items: &[CopaItem]) -> Vec<CandidateGroup> {
    let hi = PlausibilityLevel::new(1, Scale::Copa2).expect("1 is on the COPA scale");
    let lo = PlausibilityLevel::new(0, Scale::Copa2).expect("0 is on the COPA scale");
    items
        .iter()
        .map(|item| {
            let (correct, other) = item.ranked_alternatives();
            CandidateGroup {
                premise_id: item.item_id.clone(),
                shared: item.given.clone(),
                orientation: copa_orientation(item.question),
                candidates: vec![correct.to_string(), other.to_string()],
                levels: vec![hi, lo],
                correct_index: 0,
            }
        })
        .collect()
}

/// Candidate sets for softmax training: for each preferred alternative, the
/// set holding it (at index 0) and every alternative it beats.
pub fn ranking_groups(dataset: &TripletDataset) -> Vec<CandidateGroup> {
    let mut index: HashMap<(&str, &str, Orientation, &str), usize> = HashMap::new();
    let mut groups: Vec<CandidateGroup> = Vec::new();
    for t in &dataset.triplets {
        let key = (t.premise_id.as_str(), t.shared.as_str(), t.orientation, t.preferred.as_str());
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push(CandidateGroup {
                premise_id: t.premise_id.clone(),
                shared: t.shared.clone(),
                orientation: t.orientation,
                candidates: vec![t.preferred.clone()],
                levels: vec![t.level_hi],
                correct_index: 0,
            });
            groups.len() - 1
        });
        let group = &mut groups[slot];
        if !group.candidates[1..].contains(&t.dispreferred) {
            group.candidates.push(t.dispreferred.clone());
            group.levels.push(t.level_lo);
        }
    }
    groups
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    premise_id: String,
    shared: String,
    orientation: Orientation,
    candidates: Vec<String>,
    levels: Vec<i64>,
    scale: Scale,
    correct_index: usize,
}

/// Candidate-set JSONL, the input of `analyze`.
pub fn write_candidate_groups<W: Write>(groups: &[CandidateGroup], mut out: W) -> Result<()> {
    for g in groups {
        let record = GroupRecord {
            premise_id: g.premise_id.clone(),
            shared: g.shared.clone(),
            orientation: g.orientation,
            candidates: g.candidates.clone(),
            levels: g.levels.iter().map(|l| l.value() as i64).collect(),
            scale: g.levels.first().map(|l| l.scale()).unwrap_or(Scale::Mnli3),
            correct_index: g.correct_index,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_candidate_groups<R: BufRead>(input: R) -> Result<Vec<CandidateGroup>> {
    let mut groups = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: GroupRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if r.candidates.is_empty() || r.candidates.len() != r.levels.len() {
            return Err(Error::validation_at(line_no, "candidates and levels must be non-empty and parallel"));
        }
        if r.correct_index >= r.candidates.len() {
            return Err(Error::validation_at(line_no, "correct_index out of range"));
        }
        let levels = r
            .levels
            .iter()
            .map(|&v| PlausibilityLevel::new(v, r.scale))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Validation { message, .. } => Error::validation_at(line_no, message),
                other => other,
            })?;
        groups.push(CandidateGroup {
            premise_id: r.premise_id,
            shared: r.shared,
            orientation: r.orientation,
            candidates: r.candidates,
            levels,
            correct_index: r.correct_index,
        });
    }
    Ok(groups)
}
