//! Synthetic marketplace generator with a planted failure function.
//!
//! Tasks arrive as a Poisson process (optionally with a sinusoidal rate
//! modulation), are grouped into projects that share type, technologies
//! and vocabulary, and fail with probability `phi(features)` where the
//! features are the task's open-task count, average similarity, prize
//! and duration on its arrival day.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::exec::Execution;
use crate::platform::{PlatformConfig, Pool};
use crate::predictor::{featurize_pool, FeatureVector};
use crate::similarity::SimilarityWeights;
use crate::task::{Dataset, TaskRecord};

const TASK_TYPES: [&str; 5] = ["development", "assembly", "first2finish", "ui-prototype", "bug-hunt"];

const BASE_TECHS: [&str; 16] = [
    "java",
    "javascript",
    "python",
    "sql",
    "html",
    "css",
    "nodejs",
    "react",
    "angular",
    "ios",
    "android",
    "dotnet",
    "php",
    "go",
    "docker",
    "aws",
];

const BASE_WORDS: [&str; 40] = [
    "build",
    "api",
    "service",
    "module",
    "component",
    "interface",
    "database",
    "schema",
    "login",
    "user",
    "page",
    "report",
    "export",
    "import",
    "test",
    "deploy",
    "mobile",
    "client",
    "server",
    "cache",
    "search",
    "filter",
    "upload",
    "payment",
    "profile",
    "notification",
    "dashboard",
    "chart",
    "layout",
    "form",
    "validation",
    "workflow",
    "queue",
    "message",
    "storage",
    "sync",
    "config",
    "migration",
    "logging",
    "admin",
];

/// Ground-truth failure probability as a function of the arrival-day
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedFailure {
    Constant {
        probability: f64,
    },
    /// `floor + (1 - 2 floor) * sigmoid(steepness * g)` with
    /// `g = w_open (n - 1) + w_sim s - w_prize p + w_dur (d^2 - 1/3) - offset`,
    /// where `n` is the open-task count over its corpus mean, `s` the
    /// standardized average similarity, `p` the log prize ratio to the
    /// median and `d` the duration offset over the spread.
    Nonlinear {
        steepness: f64,
        open_tasks_weight: f64,
        similarity_weight: f64,
        prize_weight: f64,
        duration_curvature: f64,
        offset: f64,
        floor: f64,
    },
}

impl Default for PlantedFailure {
    fn default() -> Self {
        PlantedFailure::Nonlinear {
            steepness: 6.0,
            open_tasks_weight: 8.0,
            similarity_weight: 1.5,
            prize_weight: 2.0,
            duration_curvature: 4.5,
            offset: -0.5,
            floor: 0.01,
        }
    }
}

/// Corpus statistics that put raw features on the planted function's
/// scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedScales {
    pub open_tasks_mean: f64,
    pub similarity_mean: f64,
    pub similarity_std: f64,
    pub prize_median: f64,
    pub duration_mean: f64,
    pub duration_spread: f64,
}

impl PlantedFailure {
    pub fn eval(&self, f: &FeatureVector, s: &PlantedScales) -> f64 {
        match *self {
            PlantedFailure::Constant { probability } => probability,
            PlantedFailure::Nonlinear {
                steepness,
                open_tasks_weight,
                similarity_weight,
                prize_weight,
                duration_curvature,
                offset,
                floor,
            } => {
                let n = f.open_tasks / s.open_tasks_mean.max(1e-9);
                let sim = (f.avg_similarity - s.similarity_mean) / s.similarity_std.max(1e-9);
                let p = (f.prize.max(1.0) / s.prize_median.max(1.0)).ln();
                let d = (f.duration - s.duration_mean) / s.duration_spread.max(1.0);
                let g = open_tasks_weight * (n - 1.0) + similarity_weight * sim - prize_weight * p
                    + duration_curvature * (d * d - 1.0 / 3.0)
                    - offset;
                let z = steepness * g;
                floor + (1.0 - 2.0 * floor) / (1.0 + (-z).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task_count: usize,
    /// Mean arrivals per day.
    pub arrival_rate: f64,
    /// Relative amplitude of the sinusoidal rate modulation, in [0, 1).
    pub rate_amplitude: f64,
    pub rate_period_days: f64,
    /// Mean of `submission_end - registration_start`.
    pub duration_mean: f64,
    /// Durations are uniform on `mean ± spread`.
    pub duration_spread: f64,
    /// Registration window as a share of the duration.
    pub registration_fraction: f64,
    pub prize_median: f64,
    /// Log-scale spread of the winner prize.
    pub prize_sigma: f64,
    /// Probability that a runner-up prize (half the winner's) is offered.
    pub runner_up_probability: f64,
    pub tech_vocabulary: usize,
    pub word_vocabulary: usize,
    pub words_per_requirement: usize,
    pub mean_project_size: f64,
    pub failure: PlantedFailure,
    pub weights: SimilarityWeights,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            task_count: 4908,
            arrival_rate: 13.0,
            rate_amplitude: 0.0,
            rate_period_days: 56.0,
            duration_mean: 14.0,
            duration_spread: 6.0,
            registration_fraction: 0.9,
            prize_median: 800.0,
            prize_sigma: 0.5,
            runner_up_probability: 0.6,
            tech_vocabulary: 16,
            word_vocabulary: 120,
            words_per_requirement: 12,
            mean_project_size: 12.0,
            failure: PlantedFailure::default(),
            weights: SimilarityWeights::uniform(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// The calibrated corpus used for learnability and scheduling runs.
    pub fn planted() -> Self {
        SyntheticSpec {
            rate_amplitude: 0.35,
            ..Default::default()
        }
    }

    pub fn constant(probability: f64, task_count: usize) -> Self {
        SyntheticSpec {
            task_count,
            failure: PlantedFailure::Constant { probability },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InfeasibleSpec(m.to_string()));
        if self.task_count == 0 {
            return bad("task_count must be > 0");
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad("arrival_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.rate_amplitude) {
            return bad("rate_amplitude must be in [0, 1)");
        }
        if self.rate_period_days.is_nan() || self.rate_period_days <= 0.0 {
            return bad("rate_period_days must be > 0");
        }
        if !(self.duration_mean >= 1.0 && self.duration_spread >= 0.0) {
            return bad("duration_mean must be >= 1 and duration_spread >= 0");
        }
        if !(0.0..=1.0).contains(&self.registration_fraction) {
            return bad("registration_fraction must be in [0, 1]");
        }
        if !(self.prize_median > 0.0 && self.prize_sigma >= 0.0) {
            return bad("prize_median must be > 0 and prize_sigma >= 0");
        }
        if !(0.0..=1.0).contains(&self.runner_up_probability) {
            return bad("runner_up_probability must be in [0, 1]");
        }
        if self.tech_vocabulary == 0 {
            return bad("tech_vocabulary must be > 0");
        }
        let w = self
            .weights
            .normalized()
            .map_err(|e| EvalError::InfeasibleSpec(e.to_string()))?;
        if (self.word_vocabulary == 0 || self.words_per_requirement == 0) && w.requirement_text > 0.0 {
            return bad("requirement text is weighted but the word vocabulary is empty");
        }
        if self.mean_project_size.is_nan() || self.mean_project_size < 1.0 {
            return bad("mean_project_size must be >= 1");
        }
        if let PlantedFailure::Constant { probability } = self.failure {
            if !(0.0..=1.0).contains(&probability) {
                return bad("constant failure probability must be in [0, 1]");
            }
        }
        if let PlantedFailure::Nonlinear { floor, .. } = self.failure {
            if !(0.0..0.5).contains(&floor) {
                return bad("planted floor must be in [0, 0.5)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task_id: String,
    pub phi: f64,
    pub features: FeatureVector,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: Vec<GroundTruth>,
    pub scales: PlantedScales,
}

impl SyntheticData {
    pub fn write_truth_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "task_id",
            "phi",
            "open_tasks",
            "avg_similarity",
            "prize",
            "duration",
            "failed",
        ])?;
        for t in &self.truth {
            w.write_record([
                t.task_id.clone(),
                t.phi.to_string(),
                t.features.open_tasks.to_string(),
                t.features.avg_similarity.to_string(),
                t.features.prize.to_string(),
                t.features.duration.to_string(),
                t.failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Project {
    id: String,
    task_type: &'static str,
    techs: Vec<String>,
    topic: Vec<String>,
    platform_count: u32,
}

fn vocabulary(base: &[&str], size: usize, prefix: &str) -> Vec<String> {
    (0..size)
        .map(|i| match base.get(i) {
            Some(w) => w.to_string(),
            None => format!("{prefix}{i}"),
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let techs = vocabulary(&BASE_TECHS, spec.tech_vocabulary, "tech");
    let words = vocabulary(&BASE_WORDS, spec.word_vocabulary, "term");
    let prize_dist = LogNormal::new(spec.prize_median.ln(), spec.prize_sigma)
        .map_err(|e| EvalError::InfeasibleSpec(e.to_string()))?;

    let mut projects: Vec<Project> = Vec::new();
    let mut tasks = Vec::with_capacity(spec.task_count);
    let mut day = 0i64;
    while tasks.len() < spec.task_count {
        let phase = 2.0 * std::f64::consts::PI * day as f64 / spec.rate_period_days;
        let rate = spec.arrival_rate * (1.0 + spec.rate_amplitude * phase.sin());
        let arrivals = Poisson::new(rate.max(1e-9))
            .map_err(|e| EvalError::InfeasibleSpec(e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..arrivals.min(spec.task_count - tasks.len()) {
            if projects.is_empty() || rng.random_bool(1.0 / spec.mean_project_size) {
                let n_techs = rng.random_range(1..=3.min(techs.len()));
                let topic_len = 6.min(words.len());
                projects.push(Project {
                    id: format!("P{:04}", projects.len() + 1),
                    task_type: TASK_TYPES.choose(&mut rng).copied().unwrap(),
                    techs: techs.choose_multiple(&mut rng, n_techs).cloned().collect(),
                    topic: words.choose_multiple(&mut rng, topic_len).cloned().collect(),
                    platform_count: rng.random_range(1..=3),
                });
            }
            let recent = projects.len().saturating_sub(4);
            let project = &projects[rng.random_range(recent..projects.len())];
            tasks.push(make_task(
                spec,
                &mut rng,
                &prize_dist,
                project,
                &techs,
                &words,
                day,
                tasks.len(),
            ));
        }
        day += 1;
    }

    let dataset = Dataset::new(tasks).map_err(|e| EvalError::InfeasibleSpec(e.to_string()))?;
    let pool = Pool::new(&dataset, &spec.weights, PlatformConfig::default())
        .map_err(|e| EvalError::InfeasibleSpec(e.to_string()))?;
    let features = featurize_pool(&pool, Execution::default())?;
    let scales = planted_scales(spec, &features);

    let mut tasks = dataset.into_tasks();
    let mut truth = Vec::with_capacity(tasks.len());
    for (t, f) in tasks.iter_mut().zip(&features) {
        let phi = spec.failure.eval(f, &scales);
        let failed = rng.random_bool(phi.clamp(0.0, 1.0));
        set_outcome(t, failed, &mut rng);
        truth.push(GroundTruth {
            task_id: t.task_id.clone(),
            phi,
            features: *f,
            failed,
        });
    }
    let dataset = Dataset::new(tasks).map_err(|e| EvalError::InfeasibleSpec(e.to_string()))?;
    Ok(SyntheticData { dataset, truth, scales })
}

fn planted_scales(spec: &SyntheticSpec, features: &[FeatureVector]) -> PlantedScales {
    let n = features.len() as f64;
    let open_tasks_mean = features.iter().map(|f| f.open_tasks).sum::<f64>() / n;
    let similarity_mean = features.iter().map(|f| f.avg_similarity).sum::<f64>() / n;
    let var = features
        .iter()
        .map(|f| (f.avg_similarity - similarity_mean).powi(2))
        .sum::<f64>()
        / n;
    PlantedScales {
        open_tasks_mean,
        similarity_mean,
        similarity_std: var.sqrt(),
        prize_median: spec.prize_median,
        duration_mean: spec.duration_mean,
        duration_spread: spec.duration_spread,
    }
}

#[allow(clippy::too_many_arguments)]
fn make_task(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    prize_dist: &LogNormal<f64>,
    project: &Project,
    techs: &[String],
    words: &[String],
    day: i64,
    index: usize,
) -> TaskRecord {
    let lo = (spec.duration_mean - spec.duration_spread).round().max(1.0) as i64;
    let hi = (spec.duration_mean + spec.duration_spread).round().max(lo as f64) as i64;
    let duration = rng.random_range(lo..=hi);
    let registration = ((duration as f64) * spec.registration_fraction).round() as i64;

    let winner = (prize_dist.sample(rng) / 25.0).round().max(1.0) * 25.0;
    let runner_up = if rng.random_bool(spec.runner_up_probability) {
        (winner / 2.0).round()
    } else {
        0.0
    };

    let task_type = if rng.random_bool(0.8) {
        project.task_type
    } else {
        TASK_TYPES.choose(rng).copied().unwrap()
    };
    let n_techs = rng.random_range(1..=4.min(techs.len()));
    let technologies = (0..n_techs)
        .map(|_| {
            if rng.random_bool(0.8) {
                project.techs.choose(rng).unwrap().clone()
            } else {
                techs.choose(rng).unwrap().clone()
            }
        })
        .collect();
    let platform_count = if rng.random_bool(0.8) {
        project.platform_count
    } else {
        rng.random_range(1..=3)
    };
    let requirement_text = if words.is_empty() {
        String::new()
    } else {
        (0..spec.words_per_requirement)
            .map(|_| {
                if !project.topic.is_empty() && rng.random_bool(0.6) {
                    project.topic.choose(rng).unwrap().as_str()
                } else {
                    words.choose(rng).unwrap().as_str()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    TaskRecord {
        task_id: format!("T{:05}", index + 1),
        registration_start: day,
        registration_end: day + registration,
        submission_end: day + duration,
        winner_prize: winner,
        runnerup_prize: runner_up,
        task_type: task_type.to_string(),
        technologies,
        platform_count,
        registrations: 0,
        submissions: 0,
        valid_submissions: 0,
        requirement_text,
        project_id: Some(project.id.clone()),
        cancelled: false,
    }
}

fn set_outcome(t: &mut TaskRecord, failed: bool, rng: &mut ChaCha8Rng) {
    let registrations = 1 + rng.random_range(0..12u32);
    let submissions = rng.random_range(0..=registrations);
    if failed {
        t.registrations = registrations;
        t.submissions = submissions;
        t.valid_submissions = 0;
    } else {
        let submissions = submissions.max(1);
        t.registrations = registrations;
        t.submissions = submissions;
        t.valid_submissions = rng.random_range(1..=submissions);
    }
}
