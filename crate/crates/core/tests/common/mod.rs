//! Shared generators and independent reference computations for the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use crowd_sched::task::TaskRecord;
use rand::seq::IndexedRandom;
use rand::Rng;

const TYPES: [&str; 3] = ["development", "assembly", "design"];
const TECHS: [&str; 6] = ["java", "sql", "react", "ios", "go", "css"];
const WORDS: [&str; 10] = [
    "Build",
    "api",
    "REST",
    "login",
    "page",
    "page",
    "db-schema",
    "Test!",
    "sync",
    "user",
];

pub fn random_task<R: Rng>(rng: &mut R, id: usize) -> TaskRecord {
    let tr = rng.random_range(0..60);
    let tre = tr + rng.random_range(0..15);
    let ts = tre + rng.random_range(0..6);
    let n_tech = rng.random_range(0..=4);
    let technologies: BTreeSet<String> = (0..n_tech).map(|_| TECHS.choose(rng).unwrap().to_string()).collect();
    let n_words = if rng.random_bool(0.1) {
        0
    } else {
        rng.random_range(1..10)
    };
    let requirement_text = (0..n_words)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ");
    let registrations = rng.random_range(0..10);
    let submissions = rng.random_range(0..=registrations);
    let valid_submissions = rng.random_range(0..=submissions);
    TaskRecord {
        task_id: format!("T{id:04}"),
        registration_start: tr,
        registration_end: tre,
        submission_end: ts,
        winner_prize: f64::from(rng.random_range(0..80u32)) * 25.0,
        runnerup_prize: if rng.random_bool(0.5) {
            f64::from(rng.random_range(0..40u32)) * 12.5
        } else {
            0.0
        },
        task_type: TYPES.choose(rng).unwrap().to_string(),
        technologies,
        platform_count: rng.random_range(1..=3),
        registrations,
        submissions,
        valid_submissions,
        requirement_text,
        project_id: if rng.random_bool(0.7) {
            Some(format!("P{}", rng.random_range(0..4)))
        } else {
            None
        },
        cancelled: false,
    }
}

pub fn random_corpus<R: Rng>(rng: &mut R, n: usize) -> Vec<TaskRecord> {
    (0..n).map(|i| random_task(rng, i)).collect()
}

fn term_counts(text: &str) -> HashMap<String, f64> {
    let mut m = HashMap::new();
    for raw in text.split_whitespace() {
        let tok: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        if !tok.is_empty() {
            *m.entry(tok).or_insert(0.0) += 1.0;
        }
    }
    m
}

fn gap(a: f64, b: f64, max: f64) -> f64 {
    if max == 0.0 {
        1.0
    } else {
        (1.0 - (a - b).abs() / max).max(0.0)
    }
}

/// Direct recomputation of the seven local similarities and the weighted
/// score, with every normalizing maximum taken from `corpus`.
pub fn oracle_similarity(a: &TaskRecord, b: &TaskRecord, weights: [f64; 7], corpus: &[TaskRecord]) -> (f64, [f64; 7]) {
    let prize = |t: &TaskRecord| t.winner_prize + t.runnerup_prize;
    let prize_max = corpus.iter().map(prize).fold(0.0, f64::max);
    let span = |f: fn(&TaskRecord) -> i64| {
        let v: Vec<i64> = corpus.iter().map(f).collect();
        (v.iter().max().unwrap() - v.iter().min().unwrap()) as f64
    };
    let tr_span = span(|t| t.registration_start);
    let ts_span = span(|t| t.submission_end);
    let tech_max = corpus.iter().map(|t| t.technologies.len()).max().unwrap() as f64;

    let shared = a.technologies.iter().filter(|t| b.technologies.contains(*t)).count() as f64;
    let (ca, cb) = (term_counts(&a.requirement_text), term_counts(&b.requirement_text));
    let text = match (ca.is_empty(), cb.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let dot: f64 = ca.iter().map(|(k, v)| v * cb.get(k).copied().unwrap_or(0.0)).sum();
            let na: f64 = ca.values().map(|v| v * v).sum();
            let nb: f64 = cb.values().map(|v| v * v).sum();
            dot / (na * nb).sqrt()
        }
    };
    let local = [
        gap(prize(a), prize(b), prize_max),
        gap(a.registration_start as f64, b.registration_start as f64, tr_span),
        gap(a.submission_end as f64, b.submission_end as f64, ts_span),
        if a.task_type == b.task_type { 1.0 } else { 0.0 },
        if tech_max == 0.0 { 1.0 } else { shared / tech_max },
        if a.platform_count == b.platform_count { 1.0 } else { 0.0 },
        text,
    ];
    let total: f64 = weights.iter().sum();
    let score = weights.iter().zip(&local).map(|(w, l)| w * l).sum::<f64>() / total;
    (score, local)
}
