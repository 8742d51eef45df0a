//! Seeded random search over learning rate, weight decay and batch size,
//! with an append-only trial journal that makes searches resumable.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error("all {0} trials failed")]
    AllFailed(usize),
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    /// Uniform bounds.
    pub weight_decay: (f64, f64),
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-5, 1e-3),
            weight_decay: (0.0, 0.3),
            batch_size: vec![8, 16, 32],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), HpoError> {
        let (lo, hi) = self.learning_rate;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(HpoError::Space(format!(
                "learning_rate bounds ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        let (lo, hi) = self.weight_decay;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return Err(HpoError::Space(format!(
                "weight_decay bounds ({lo}, {hi}) must satisfy 0 <= lo <= hi"
            )));
        }
        if self.batch_size.is_empty() || self.batch_size.contains(&0) {
            return Err(HpoError::Space("batch_size choices must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

/// Draws learning rate, weight decay and batch size, in that order.
pub fn sample_point(space: &SearchSpace, rng: &mut SplitMix64) -> Point {
    let (lo, hi) = space.learning_rate;
    let u = rng.next_f64();
    let learning_rate = if lo == hi {
        lo
    } else {
        (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
    };
    let (wlo, whi) = space.weight_decay;
    let weight_decay = wlo + rng.next_f64() * (whi - wlo);
    let batch_size = space.batch_size[rng.below(space.batch_size.len() as u64) as usize];
    Point {
        learning_rate,
        weight_decay,
        batch_size,
    }
}

/// The point trial `id` of a search seeded with `seed` evaluates; depends
/// only on `(seed, id)`, so trials can run in any order.
pub fn trial_point(space: &SearchSpace, seed: u64, id: usize) -> Point {
    sample_point(space, &mut SplitMix64::new(derive_seed(seed, id as u64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trial {
    pub id: usize,
    pub point: Point,
    pub metric: Option<f64>,
    pub status: TrialStatus,
    /// Where the trial's training log was written, if anywhere.
    #[serde(default)]
    pub log_ref: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

/// What an objective reports for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub metric: f64,
    pub log_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum JournalRecord {
    Trial(Trial),
    Summary {
        n_trials: usize,
        best_id: usize,
        best_point: Point,
        best_metric: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Highest finite metric among completed trials; ties go to the lower id.
pub fn best_trial(trials: &[Trial]) -> Option<&Trial> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .filter(|t| t.metric.is_some_and(f64::is_finite))
        .fold(None, |best: Option<&Trial>, t| match best {
            Some(b) if b.metric >= t.metric && (b.metric > t.metric || b.id < t.id) => Some(b),
            _ => Some(t),
        })
}

/// Parses a journal. A final line without a trailing newline that fails
/// to parse is a torn write and is dropped; any other bad line is an error.
pub fn parse_journal(text: &str) -> Result<Vec<JournalRecord>, HpoError> {
    let mut out = Vec::new();
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => {
                return Err(HpoError::Journal {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn record_line(r: &JournalRecord) -> String {
    let mut s = serde_json::to_string(r).expect("journal records serialize");
    s.push('\n');
    s
}

/// Runs trials `0..n_trials`, skipping any already in `journal` (whose
/// recorded points must match this search's points), appending each new
/// trial as it finishes and a summary at the end.
///
/// The objective receives the point, trial id and a per-trial seed
/// derived from `(seed, id)`.
pub fn search<F>(
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    journal: Option<&Path>,
    mut objective: F,
) -> Result<SearchResult, HpoError>
where
    F: FnMut(&Point, usize, u64) -> Result<TrialOutcome, String>,
{
    space.validate()?;
    if n_trials == 0 {
        return Err(HpoError::NoTrials);
    }
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |e| HpoError::Io { path: p, source: e }
    };

    let mut done: Vec<Option<Trial>> = vec![None; n_trials];
    let mut file = None;
    if let Some(path) = journal {
        let existing = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(path)(e)),
        };
        let records = parse_journal(&existing)?;
        // rewrite without any torn tail or stale summary, then append
        let mut clean = String::new();
        for r in &records {
            if let JournalRecord::Trial(t) = r {
                if t.id >= n_trials || done[t.id].is_some() {
                    continue;
                }
                if t.point != trial_point(space, seed, t.id) {
                    return Err(HpoError::Journal {
                        line: 0,
                        message: format!("trial {} was sampled from a different space or seed", t.id),
                    });
                }
                clean.push_str(&record_line(r));
                done[t.id] = Some(t.clone());
            }
        }
        std::fs::write(path, &clean).map_err(io(path))?;
        file = Some(
            std::fs::OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(io(path))?,
        );
    }

    for (id, slot) in done.iter_mut().enumerate() {
        if slot.is_some() {
            continue;
        }
        let point = trial_point(space, seed, id);
        let trial = match objective(&point, id, derive_seed(seed, id as u64)) {
            Ok(out) if out.metric.is_finite() => Trial {
                id,
                point,
                metric: Some(out.metric),
                status: TrialStatus::Completed,
                log_ref: out.log_ref,
                error: None,
            },
            Ok(out) => Trial {
                id,
                point,
                metric: None,
                status: TrialStatus::Failed,
                log_ref: out.log_ref,
                error: Some(format!("non-finite metric {}", out.metric)),
            },
            Err(e) => Trial {
                id,
                point,
                metric: None,
                status: TrialStatus::Failed,
                log_ref: None,
                error: Some(e),
            },
        };
        if let (Some(f), Some(path)) = (file.as_mut(), journal) {
            f.write_all(record_line(&JournalRecord::Trial(trial.clone())).as_bytes())
                .and_then(|_| f.flush())
                .map_err(io(path))?;
        }
        *slot = Some(trial);
    }

    let trials: Vec<Trial> = done.into_iter().map(|t| t.expect("every trial ran")).collect();
    let best = best_trial(&trials).cloned().ok_or(HpoError::AllFailed(n_trials))?;
    if let (Some(f), Some(path)) = (file.as_mut(), journal) {
        let summary = JournalRecord::Summary {
            n_trials,
            best_id: best.id,
            best_point: best.point,
            best_metric: best.metric.expect("completed trials carry a metric"),
        };
        f.write_all(record_line(&summary).as_bytes()).map_err(io(path))?;
    }
    Ok(SearchResult { best, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(p: &Point) -> f64 {
        -(p.learning_rate.log10() + 4.0).powi(2) - p.weight_decay + p.batch_size as f64 / 100.0
    }

    #[test]
    fn degenerate_space_gives_exact_point() {
        let space = SearchSpace {
            learning_rate: (3e-4, 3e-4),
            weight_decay: (0.1, 0.1),
            batch_size: vec![16],
        };
        let p = sample_point(&space, &mut SplitMix64::new(9));
        assert_eq!(
            p,
            Point {
                learning_rate: 3e-4,
                weight_decay: 0.1,
                batch_size: 16
            }
        );
    }

    #[test]
    fn batch_support_and_lr_median() {
        let space = SearchSpace::default();
        let mut rng = SplitMix64::new(1);
        let mut lrs = Vec::new();
        for _ in 0..10_000 {
            let p = sample_point(&space, &mut rng);
            assert!([8, 16, 32].contains(&p.batch_size));
            assert!((1e-5..=1e-3).contains(&p.learning_rate));
            assert!((0.0..=0.3).contains(&p.weight_decay));
            lrs.push(p.learning_rate);
        }
        lrs.sort_by(f64::total_cmp);
        let median = lrs[lrs.len() / 2];
        assert!((0.8e-4..=1.25e-4).contains(&median), "{median}");
    }

    #[test]
    fn invalid_space_is_rejected() {
        let s = SearchSpace {
            learning_rate: (0.0, 1e-3),
            ..SearchSpace::default()
        };
        assert!(s.validate().is_err());
        let mut s = SearchSpace::default();
        s.batch_size.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn search_matches_exhaustive_oracle() {
        let space = SearchSpace::default();
        let r = search(&space, 25, 4, None, |p, _, _| Ok(TrialOutcome { metric: stub(p), log_ref: None })).unwrap();
        let oracle = r
            .trials
            .iter()
            .max_by(|a, b| stub(&a.point).total_cmp(&stub(&b.point)).then(b.id.cmp(&a.id)))
            .unwrap();
        assert_eq!(r.best.id, oracle.id);
        let again = search(&space, 25, 4, None, |p, _, _| Ok(TrialOutcome { metric: stub(p), log_ref: None })).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn single_trial_and_ties() {
        let space = SearchSpace::default();
        let r = search(&space, 1, 0, None, |_, _, _| Ok(TrialOutcome { metric: 0.3, log_ref: None })).unwrap();
        assert_eq!(r.best.id, 0);
        let r = search(&space, 5, 0, None, |_, _, _| Ok(TrialOutcome { metric: 0.3, log_ref: None })).unwrap();
        assert_eq!(r.best.id, 0);
    }

    #[test]
    fn failures_are_recorded_but_never_best() {
        let space = SearchSpace::default();
        let r = search(&space, 4, 0, None, |_, id, _| {
            if id % 2 == 0 {
                Err("diverged".into())
            } else {
                Ok(TrialOutcome {
                    metric: id as f64,
                    log_ref: None,
                })
            }
        })
        .unwrap();
        assert_eq!(r.best.id, 3);
        assert_eq!(r.trials[0].status, TrialStatus::Failed);
        let all_bad = search(&space, 3, 0, None, |_, _, _| Err("x".to_string()));
        assert!(matches!(all_bad, Err(HpoError::AllFailed(3))));
    }

    #[test]
    fn resume_replays_to_the_same_best() {
        let dir = tempfile::tempdir().unwrap();
        let space = SearchSpace::default();
        let f = |p: &Point, _: usize, _: u64| Ok(TrialOutcome { metric: stub(p), log_ref: None });
        let full = search(&space, 8, 11, None, f).unwrap();
        for cut in 0..=8 {
            let path = dir.path().join(format!("j{cut}.jsonl"));
            // simulate a kill after `cut` trials
            let _ = search(&space, 8, 11, Some(&path), |p, id, s| {
                if id >= cut {
                    return Err("killed".into());
                }
                f(p, id, s)
            });
            let text = std::fs::read_to_string(&path).unwrap();
            let kept: String = text
                .lines()
                .filter(|l| l.contains("\"completed\""))
                .map(|l| format!("{l}\n"))
                .collect();
            std::fs::write(&path, format!("{kept}{{\"record\":\"tri")).unwrap();
            let resumed = search(&space, 8, 11, Some(&path), f).unwrap();
            assert_eq!(resumed.best, full.best, "cut {cut}");
            assert_eq!(resumed.trials, full.trials);
            let records = parse_journal(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(records.len(), 9);
        }
    }

    #[test]
    fn journal_rejects_foreign_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let space = SearchSpace::default();
        let f = |p: &Point, _: usize, _: u64| Ok(TrialOutcome { metric: stub(p), log_ref: None });
        search(&space, 2, 1, Some(&path), f).unwrap();
        assert!(matches!(
            search(&space, 2, 2, Some(&path), f),
            Err(HpoError::Journal { .. })
        ));
        assert!(parse_journal("garbage\n{}\n").is_err());
    }
}
