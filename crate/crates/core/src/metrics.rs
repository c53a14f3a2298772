//! Supervisor-burden accounting.
//!
//! An intervention is a maximal run of supervisor-mode steps inside one
//! episode. Each intervention costs two context switches, the hand-over and
//! the hand-back; an episode that ends in supervisor mode still pays the
//! hand-back. Episodes start in autonomous mode, so a supervisor step at
//! `t = 0` is an entry switch.
//!
//! Burden at latency `L` is `L · C + D`, with `C` the context switches and
//! `D` the supervisor-mode steps.

use serde::{Deserialize, Serialize};

use crate::meta::{Mode, StepRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// Run-wide episode index.
    pub episode: usize,
    pub epoch: usize,
    pub reset_seed: u64,
    pub records: Vec<StepRecord>,
    pub success: bool,
    pub crashed: bool,
    /// Cut by the end of the epoch's step budget rather than by the task.
    pub truncated: bool,
    pub total_reward: f64,
}

impl EpisodeLog {
    pub fn new(episode: usize, epoch: usize, reset_seed: u64) -> Self {
        EpisodeLog {
            episode,
            epoch,
            reset_seed,
            records: Vec::new(),
            success: false,
            crashed: false,
            truncated: false,
            total_reward: 0.0,
        }
    }

    pub fn push(&mut self, record: StepRecord, reward: f64) {
        self.records.push(record);
        self.total_reward += reward;
    }

    pub fn finish(&mut self, success: bool, crashed: bool, truncated: bool) {
        self.success = success;
        self.crashed = crashed;
        self.truncated = truncated;
    }

    pub fn modes(&self) -> Vec<Mode> {
        self.records.iter().map(|r| r.mode).collect()
    }

    /// Checks the structural invariants every consumer relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::MalformedLog {
            episode: self.episode,
            reason,
        };
        for w in self.records.windows(2) {
            if w[1].t <= w[0].t {
                return Err(bad(format!("timestep {} follows {}", w[1].t, w[0].t)));
            }
        }
        for r in &self.records {
            let sup = r.mode == Mode::Supervisor;
            if sup != r.supervisor_action.is_some() {
                return Err(bad(format!("supervisor action presence disagrees with mode at t={}", r.t)));
            }
            if r.supervisor_action.is_some() != r.discrepancy.is_some() {
                return Err(bad(format!("discrepancy presence disagrees with supervisor action at t={}", r.t)));
            }
        }
        Ok(())
    }
}

/// Context switches in one episode.
pub fn count_switches(modes: &[Mode]) -> usize {
    let mut prev = Mode::Autonomous;
    let mut switches = 0;
    for &m in modes {
        if m != prev {
            switches += 1;
        }
        prev = m;
    }
    if prev == Mode::Supervisor {
        switches += 1;
    }
    switches
}

/// Supervisor-mode steps.
pub fn count_supervisor_actions(modes: &[Mode]) -> usize {
    modes.iter().filter(|m| **m == Mode::Supervisor).count()
}

/// Lengths of the maximal supervisor runs, in order.
pub fn intervention_lengths(modes: &[Mode]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run = 0;
    for &m in modes {
        if m == Mode::Supervisor {
            run += 1;
        } else if run > 0 {
            out.push(run);
            run = 0;
        }
    }
    if run > 0 {
        out.push(run);
    }
    out
}

/// `B(L) = L · C + D`.
pub fn burden(context_switches: f64, supervisor_actions: f64, latency: f64) -> f64 {
    latency * context_switches + supervisor_actions
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CutoffLatency {
    Defined { value: f64 },
    Undefined { reason: String },
}

impl CutoffLatency {
    pub fn value(&self) -> Option<f64> {
        match self {
            CutoffLatency::Defined { value } => Some(*value),
            CutoffLatency::Undefined { .. } => None,
        }
    }
}

/// Latency above which the "lazy" run has the lower burden.
pub fn cutoff_latency(lazy: &BurdenTotals, safe: &BurdenTotals) -> CutoffLatency {
    let (cl, dl) = (lazy.context_switches as f64, lazy.supervisor_actions as f64);
    let (cs, ds) = (safe.context_switches as f64, safe.supervisor_actions as f64);
    if cs > cl {
        CutoffLatency::Defined {
            value: ((dl - ds) / (cs - cl)).max(0.0),
        }
    } else if cs == cl && dl < ds {
        CutoffLatency::Defined { value: 0.0 }
    } else if dl < ds {
        CutoffLatency::Undefined {
            reason: format!(
                "the first run is cheaper only below L = {}: it has more context switches ({cl} vs {cs}) but fewer supervisor actions ({dl} vs {ds})",
                (ds - dl) / (cl - cs)
            ),
        }
    } else {
        CutoffLatency::Undefined {
            reason: format!(
                "no latency makes the first run cheaper: it has at least as many context switches ({cl} vs {cs}) and supervisor actions ({dl} vs {ds})"
            ),
        }
    }
}

/// Raw counts behind a burden figure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurdenTotals {
    pub context_switches: usize,
    pub supervisor_actions: usize,
}

impl BurdenTotals {
    pub fn burden(&self, latency: f64) -> f64 {
        burden(self.context_switches as f64, self.supervisor_actions as f64, latency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenReport {
    pub totals: BurdenTotals,
    pub episodes: usize,
    pub steps: usize,
    pub interventions: usize,
    pub intervention_lengths: Vec<usize>,
    pub mean_intervention_length: Option<f64>,
    pub mean_switches_per_episode: f64,
    pub mean_supervisor_actions_per_episode: f64,
    /// Over episodes that ended on their own (not cut by the epoch budget).
    pub success_rate: Option<f64>,
    pub per_epoch: Vec<EpochBurden>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochBurden {
    pub epoch: usize,
    pub totals: BurdenTotals,
    pub episodes: usize,
}

impl BurdenReport {
    pub fn burden(&self, latency: f64) -> f64 {
        self.totals.burden(latency)
    }
}

/// Aggregates episode logs. Logs are validated first.
pub fn summarize(logs: &[EpisodeLog]) -> Result<BurdenReport> {
    let mut totals = BurdenTotals::default();
    let mut lengths = Vec::new();
    let mut steps = 0;
    let mut finished = 0usize;
    let mut successes = 0usize;
    let mut per_epoch: Vec<EpochBurden> = Vec::new();
    for log in logs {
        log.validate()?;
        let modes = log.modes();
        let c = count_switches(&modes);
        let d = count_supervisor_actions(&modes);
        totals.context_switches += c;
        totals.supervisor_actions += d;
        lengths.extend(intervention_lengths(&modes));
        steps += modes.len();
        if !log.truncated {
            finished += 1;
            successes += usize::from(log.success);
        }
        match per_epoch.last_mut() {
            Some(e) if e.epoch == log.epoch => {
                e.totals.context_switches += c;
                e.totals.supervisor_actions += d;
                e.episodes += 1;
            }
            _ => per_epoch.push(EpochBurden {
                epoch: log.epoch,
                totals: BurdenTotals {
                    context_switches: c,
                    supervisor_actions: d,
                },
                episodes: 1,
            }),
        }
    }
    let episodes = logs.len();
    let per_ep = |x: usize| if episodes == 0 { 0.0 } else { x as f64 / episodes as f64 };
    Ok(BurdenReport {
        totals,
        episodes,
        steps,
        interventions: lengths.len(),
        mean_intervention_length: (!lengths.is_empty())
            .then(|| lengths.iter().sum::<usize>() as f64 / lengths.len() as f64),
        intervention_lengths: lengths,
        mean_switches_per_episode: per_ep(totals.context_switches),
        mean_supervisor_actions_per_episode: per_ep(totals.supervisor_actions),
        success_rate: (finished > 0).then(|| successes as f64 / finished as f64),
        per_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvAction;
    use Mode::{Autonomous as A, Supervisor as S};

    #[test]
    fn switch_examples() {
        assert_eq!(count_switches(&[A, A, A]), 0);
        assert_eq!(count_switches(&[A, S, S, A]), 2);
        assert_eq!(count_switches(&[A, S, A, S]), 4);
        assert_eq!(count_switches(&[S, S]), 2);
        assert_eq!(count_switches(&[]), 0);
    }

    #[test]
    fn action_counts_and_segments() {
        assert_eq!(count_supervisor_actions(&[A, S, S, A]), 2);
        assert_eq!(count_supervisor_actions(&[A, A]), 0);
        assert_eq!(intervention_lengths(&[S, A, S, S, S, A, S]), vec![1, 3, 1]);
    }

    #[test]
    fn burden_examples() {
        for l in [0.0, 1.0, 5.0, 10.0] {
            assert_eq!(burden(4.0, 20.0, l), 4.0 * l + 20.0);
            assert_eq!(burden(20.0, 20.0, l), 20.0 * l + 20.0);
        }
        assert_eq!(burden(20.0, 20.0, 1.0), 40.0);
        assert_eq!(burden(7.0, 3.0, 0.0), 3.0);
    }

    fn totals(c: usize, d: usize) -> BurdenTotals {
        BurdenTotals {
            context_switches: c,
            supervisor_actions: d,
        }
    }

    #[test]
    fn cutoff_cases() {
        let l = cutoff_latency(&totals(21, 43), &totals(53, 34));
        assert_eq!(l.value(), Some(0.28125));
        assert_eq!(cutoff_latency(&totals(10, 5), &totals(20, 5)).value(), Some(0.0));
        assert_eq!(cutoff_latency(&totals(10, 5), &totals(20, 9)).value(), Some(0.0));
        assert!(matches!(cutoff_latency(&totals(10, 8), &totals(10, 5)), CutoffLatency::Undefined { .. }));
        assert_eq!(cutoff_latency(&totals(10, 4), &totals(10, 5)).value(), Some(0.0));
        assert!(matches!(cutoff_latency(&totals(12, 4), &totals(10, 5)), CutoffLatency::Undefined { .. }));
    }

    fn record(t: usize, mode: Mode) -> StepRecord {
        let sup = mode == S;
        StepRecord {
            t,
            mode,
            f_prediction: None,
            robot_action: EnvAction(vec![0.0]),
            executed_action: EnvAction(vec![0.0]),
            supervisor_action: sup.then(|| EnvAction(vec![0.0])),
            discrepancy: sup.then_some(0.0),
        }
    }

    fn log(episode: usize, modes: &[Mode]) -> EpisodeLog {
        let mut l = EpisodeLog::new(episode, 0, 0);
        for (t, m) in modes.iter().enumerate() {
            l.push(record(t, *m), 0.0);
        }
        l.finish(true, false, false);
        l
    }

    #[test]
    fn no_supervision_summary() {
        let r = summarize(&[log(0, &[A, A, A])]).unwrap();
        assert_eq!(r.totals, BurdenTotals::default());
        assert_eq!(r.burden(100.0), 0.0);
        assert_eq!(r.success_rate, Some(1.0));
        assert_eq!(r.mean_intervention_length, None);
    }

    #[test]
    fn malformed_logs_are_named() {
        let mut bad = log(7, &[A, S]);
        bad.records[1].supervisor_action = None;
        match summarize(&[log(0, &[A]), bad]) {
            Err(Error::MalformedLog { episode, .. }) => assert_eq!(episode, 7),
            other => panic!("unexpected {other:?}"),
        }
        let mut backwards = log(3, &[A, A]);
        backwards.records[1].t = 0;
        assert!(matches!(backwards.validate(), Err(Error::MalformedLog { episode: 3, .. })));
    }
}
