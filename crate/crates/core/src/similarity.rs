//! Pairwise task similarity: a weighted sum of seven local similarities
//! (prize, registration start, submission end, type, technology,
//! platform, requirement text).
//!
//! Date and prize components are `1 - |Δ| / max`, type and platform are
//! exact-match indicators, technology is the intersection size over the
//! largest technology count in the dataset, and the requirement component
//! is the cosine of term-frequency vectors. A component whose dataset
//! maximum is zero is 1.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskRecord;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("similarity weight `{0}` must be finite and >= 0")]
    InvalidWeight(&'static str),
    #[error("similarity weights sum to zero")]
    ZeroWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Prize,
    RegistrationStart,
    SubmissionEnd,
    Type,
    Technology,
    Platform,
    RequirementText,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Prize,
        Feature::RegistrationStart,
        Feature::SubmissionEnd,
        Feature::Type,
        Feature::Technology,
        Feature::Platform,
        Feature::RequirementText,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Prize => "prize",
            Feature::RegistrationStart => "registration_start",
            Feature::SubmissionEnd => "submission_end",
            Feature::Type => "type",
            Feature::Technology => "technology",
            Feature::Platform => "platform",
            Feature::RequirementText => "requirement_text",
        }
    }
}

/// Per-feature weights, stored normalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityWeights {
    pub prize: f64,
    pub registration_start: f64,
    pub submission_end: f64,
    #[serde(rename = "type")]
    pub task_type: f64,
    pub technology: f64,
    pub platform: f64,
    pub requirement_text: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl SimilarityWeights {
    pub fn uniform() -> Self {
        Self::from_array([1.0 / 7.0; 7])
    }

    fn from_array(w: [f64; 7]) -> Self {
        SimilarityWeights {
            prize: w[0],
            registration_start: w[1],
            submission_end: w[2],
            task_type: w[3],
            technology: w[4],
            platform: w[5],
            requirement_text: w[6],
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.prize,
            self.registration_start,
            self.submission_end,
            self.task_type,
            self.technology,
            self.platform,
            self.requirement_text,
        ]
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.as_array()[f as usize]
    }

    /// Validates raw weights and rescales them to sum to one.
    pub fn normalized(&self) -> Result<Self, SimilarityError> {
        let raw = self.as_array();
        for (w, f) in raw.iter().zip(Feature::ALL) {
            if !w.is_finite() || *w < 0.0 {
                return Err(SimilarityError::InvalidWeight(f.name()));
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(SimilarityError::ZeroWeights);
        }
        Ok(Self::from_array(raw.map(|w| w / total)))
    }
}

/// Dataset-wide maxima used to normalize the prize, date, and
/// technology components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityContext {
    pub prize_max: f64,
    pub diff_tr_max: f64,
    pub diff_ts_max: f64,
    pub techs_max: f64,
}

impl SimilarityContext {
    pub fn from_tasks<'a>(tasks: impl IntoIterator<Item = &'a TaskRecord>) -> Self {
        let mut prize_max = 0.0f64;
        let (mut tr_lo, mut tr_hi) = (i64::MAX, i64::MIN);
        let (mut ts_lo, mut ts_hi) = (i64::MAX, i64::MIN);
        let mut techs_max = 0usize;
        let mut any = false;
        for t in tasks {
            any = true;
            prize_max = prize_max.max(t.actual_prize());
            tr_lo = tr_lo.min(t.registration_start);
            tr_hi = tr_hi.max(t.registration_start);
            ts_lo = ts_lo.min(t.submission_end);
            ts_hi = ts_hi.max(t.submission_end);
            techs_max = techs_max.max(t.technologies.len());
        }
        if !any {
            return SimilarityContext {
                prize_max: 0.0,
                diff_tr_max: 0.0,
                diff_ts_max: 0.0,
                techs_max: 0.0,
            };
        }
        SimilarityContext {
            prize_max,
            diff_tr_max: (tr_hi - tr_lo) as f64,
            diff_ts_max: (ts_hi - ts_lo) as f64,
            techs_max: techs_max as f64,
        }
    }
}

/// Sparse term-count vector of a requirement text, sorted by term.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequirementVector {
    terms: Vec<(Box<str>, u32)>,
    /// Sum of squared counts.
    sq_norm: u64,
}

impl RequirementVector {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, u32)> {
        self.terms.iter().map(|(t, c)| (&**t, *c))
    }

    pub fn norm(&self) -> f64 {
        (self.sq_norm as f64).sqrt()
    }

    /// Cosine similarity. Two empty vectors are identical (1); an empty
    /// vector against a non-empty one scores 0.
    pub fn cosine(&self, other: &RequirementVector) -> f64 {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let (mut i, mut j) = (0, 0);
        let mut dot = 0u64;
        while i < self.terms.len() && j < other.terms.len() {
            match self.terms[i].0.cmp(&other.terms[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    dot += u64::from(self.terms[i].1) * u64::from(other.terms[j].1);
                    i += 1;
                    j += 1;
                }
            }
        }
        (dot as f64 / ((self.sq_norm as f64) * (other.sq_norm as f64)).sqrt()).clamp(0.0, 1.0)
    }
}

/// Lowercases, drops non-alphanumeric characters, splits on whitespace
/// and counts terms.
pub fn vectorize_requirements(text: &str) -> RequirementVector {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for tok in cleaned.split_whitespace() {
        *counts.entry(tok).or_default() += 1;
    }
    let sq: u64 = counts.values().map(|&c| u64::from(c) * u64::from(c)).sum();
    RequirementVector {
        terms: counts.into_iter().map(|(t, c)| (t.into(), c)).collect(),
        sq_norm: sq,
    }
}

/// The seven local similarities, in [`Feature::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSimilarities(pub [f64; 7]);

impl LocalSimilarities {
    pub fn get(&self, f: Feature) -> f64 {
        self.0[f as usize]
    }

    /// Weighted sum, divided by the weight total so that all-ones
    /// components give exactly 1.
    pub fn weighted(&self, w: &SimilarityWeights) -> f64 {
        let w = w.as_array();
        let total: f64 = w.iter().sum();
        let acc = w.iter().zip(&self.0).fold(0.0, |acc, (wk, sk)| acc + wk * sk);
        (acc / total).clamp(0.0, 1.0)
    }
}

/// A task with its requirement text pre-tokenized.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub record: TaskRecord,
    pub requirement: RequirementVector,
}

impl PreparedTask {
    pub fn new(record: TaskRecord) -> Self {
        let requirement = vectorize_requirements(&record.requirement_text);
        PreparedTask { record, requirement }
    }
}

fn normalized_gap(a: f64, b: f64, max: f64) -> f64 {
    if max <= 0.0 {
        return 1.0;
    }
    (1.0 - (a - b).abs() / max).clamp(0.0, 1.0)
}

pub fn local_similarities_prepared(a: &PreparedTask, b: &PreparedTask, ctx: &SimilarityContext) -> LocalSimilarities {
    let (ra, rb) = (&a.record, &b.record);
    let prize = normalized_gap(ra.actual_prize(), rb.actual_prize(), ctx.prize_max);
    let tr = normalized_gap(
        ra.registration_start as f64,
        rb.registration_start as f64,
        ctx.diff_tr_max,
    );
    let ts = normalized_gap(ra.submission_end as f64, rb.submission_end as f64, ctx.diff_ts_max);
    let ty = if ra.task_type == rb.task_type { 1.0 } else { 0.0 };
    let tech = if ctx.techs_max <= 0.0 {
        1.0
    } else {
        let shared = ra.technologies.intersection(&rb.technologies).count();
        (shared as f64 / ctx.techs_max).clamp(0.0, 1.0)
    };
    let plt = if ra.platform_count == rb.platform_count {
        1.0
    } else {
        0.0
    };
    let req = a.requirement.cosine(&b.requirement);
    LocalSimilarities([prize, tr, ts, ty, tech, plt, req])
}

pub fn local_similarities(a: &TaskRecord, b: &TaskRecord, ctx: &SimilarityContext) -> LocalSimilarities {
    local_similarities_prepared(&PreparedTask::new(a.clone()), &PreparedTask::new(b.clone()), ctx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub task_i: String,
    pub task_j: String,
    pub score: f64,
    pub per_feature: LocalSimilarities,
}

pub fn pair_similarity_prepared(
    a: &PreparedTask,
    b: &PreparedTask,
    w: &SimilarityWeights,
    ctx: &SimilarityContext,
) -> PairSimilarity {
    let per_feature = local_similarities_prepared(a, b, ctx);
    PairSimilarity {
        task_i: a.record.task_id.clone(),
        task_j: b.record.task_id.clone(),
        score: per_feature.weighted(w),
        per_feature,
    }
}

pub fn pair_similarity(
    a: &TaskRecord,
    b: &TaskRecord,
    w: &SimilarityWeights,
    ctx: &SimilarityContext,
) -> PairSimilarity {
    pair_similarity_prepared(&PreparedTask::new(a.clone()), &PreparedTask::new(b.clone()), w, ctx)
}

/// Score only, without the per-feature breakdown or id copies.
#[inline]
pub fn similarity_score(a: &PreparedTask, b: &PreparedTask, w: &SimilarityWeights, ctx: &SimilarityContext) -> f64 {
    local_similarities_prepared(a, b, ctx).weighted(w)
}
