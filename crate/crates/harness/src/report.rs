//! Per-seed and aggregate reports, their CSV form, and run comparison.
//!
//! CSV schema (version [`CSV_SCHEMA`]), one row per epoch, where epoch 0 is
//! the pretrained policy:
//!
//! ```text
//! epoch,test_success_rate,mean_test_return,C_total,D_total,B_at_L<l1>,B_at_L<l2>,...
//! ```
//!
//! `C_total` and `D_total` are cumulative over the run; `B_at_L<l>` is
//! `l · C_total + D_total`.

use std::path::Path;

use lazydagger_core::metrics::{cutoff_latency, BurdenReport, BurdenTotals, CutoffLatency};
use lazydagger_core::safety::Calibration;
use serde::{Deserialize, Serialize};

use crate::config::AlgorithmId;
use crate::{read_json, HarnessError, Result};

pub const CSV_SCHEMA: u32 = 1;
pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub test_success_rate: f64,
    pub mean_test_return: f64,
    pub c_total: f64,
    pub d_total: f64,
}

impl EpochRow {
    pub fn burden(&self, latency: f64) -> f64 {
        latency * self.c_total + self.d_total
    }
}

/// Thresholds actually used, in action units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedThresholds {
    pub tau_sup: f64,
    pub tau_auto: f64,
    pub max_discrepancy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

/// Data each learner saw, for budget matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub offline_pairs: usize,
    /// Extra supervisor pairs granted to offline BC.
    pub extra_offline_pairs: usize,
    /// Pairs labelled during interactive epochs.
    pub online_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_online_pairs_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBurden {
    pub latency: f64,
    pub burden: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_budget: Option<bool>,
}

pub fn latency_table(grid: &[f64], c: f64, d: f64, budget: Option<f64>) -> Vec<LatencyBurden> {
    grid.iter()
        .map(|&latency| {
            let burden = latency * c + d;
            LatencyBurden {
                latency,
                burden,
                within_budget: budget.map(|b| burden <= b),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub schema: u32,
    pub seed: u64,
    pub algorithm: AlgorithmId,
    pub config_hash: String,
    pub thresholds: ResolvedThresholds,
    pub budget: Budget,
    /// Over all interactive episodes; empty for BC.
    pub burden: BurdenReport,
    pub burden_at: Vec<LatencyBurden>,
    pub rows: Vec<EpochRow>,
    pub final_test_success_rate: f64,
    pub final_mean_test_return: f64,
    /// Supervisor-mode steps found in test logs; always 0.
    pub test_supervisor_steps: usize,
    pub initial_policy_hash: String,
    pub final_policy_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_classifier_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_classifier_hash: Option<String>,
    /// Supervisor steps that executed neither the clean supervisor action
    /// nor the robot's action, i.e. a noisy copy.
    pub perturbed_supervisor_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBrief {
    pub seed: u64,
    pub totals: BurdenTotals,
    pub interventions: usize,
    pub mean_intervention_length: Option<f64>,
    pub final_test_success_rate: f64,
    pub online_pairs: usize,
    pub tau_sup: f64,
    pub tau_auto: f64,
}

/// Aggregate over seeds; `summary.json` at the top of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub algorithm: AlgorithmId,
    pub env_id: String,
    pub config_hash: String,
    pub latency_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Summed over seeds.
    pub totals: BurdenTotals,
    pub interventions: usize,
    /// Pooled over every intervention of every seed.
    pub mean_intervention_length: Option<f64>,
    pub final_test_success_rate: f64,
    pub mean_online_pairs: f64,
    pub burden_at: Vec<LatencyBurden>,
    /// Per-epoch means over seeds.
    pub rows: Vec<EpochRow>,
    pub per_seed: Vec<SeedBrief>,
}

impl RunSummary {
    pub fn aggregate(
        algorithm: AlgorithmId,
        env_id: &str,
        config_hash: &str,
        grid: &[f64],
        budget: Option<f64>,
        seeds: &[SeedSummary],
    ) -> Self {
        let mut totals = BurdenTotals::default();
        let mut lengths = 0usize;
        let mut interventions = 0usize;
        for s in seeds {
            totals.context_switches += s.burden.totals.context_switches;
            totals.supervisor_actions += s.burden.totals.supervisor_actions;
            interventions += s.burden.interventions;
            lengths += s.burden.intervention_lengths.iter().sum::<usize>();
        }
        let n = seeds.len().max(1) as f64;
        let n_rows = seeds.iter().map(|s| s.rows.len()).min().unwrap_or(0);
        let rows = (0..n_rows)
            .map(|i| {
                let mean = |f: fn(&EpochRow) -> f64| seeds.iter().map(|s| f(&s.rows[i])).sum::<f64>() / n;
                EpochRow {
                    epoch: seeds[0].rows[i].epoch,
                    test_success_rate: mean(|r| r.test_success_rate),
                    mean_test_return: mean(|r| r.mean_test_return),
                    c_total: mean(|r| r.c_total),
                    d_total: mean(|r| r.d_total),
                }
            })
            .collect();
        RunSummary {
            schema: SUMMARY_SCHEMA,
            algorithm,
            env_id: env_id.to_string(),
            config_hash: config_hash.to_string(),
            latency_grid: grid.to_vec(),
            seeds: seeds.iter().map(|s| s.seed).collect(),
            totals,
            interventions,
            mean_intervention_length: (interventions > 0).then(|| lengths as f64 / interventions as f64),
            final_test_success_rate: seeds.iter().map(|s| s.final_test_success_rate).sum::<f64>() / n,
            mean_online_pairs: seeds.iter().map(|s| s.budget.online_pairs as f64).sum::<f64>() / n,
            burden_at: latency_table(
                grid,
                totals.context_switches as f64,
                totals.supervisor_actions as f64,
                budget,
            ),
            rows,
            per_seed: seeds
                .iter()
                .map(|s| SeedBrief {
                    seed: s.seed,
                    totals: s.burden.totals,
                    interventions: s.burden.interventions,
                    mean_intervention_length: s.burden.mean_intervention_length,
                    final_test_success_rate: s.final_test_success_rate,
                    online_pairs: s.budget.online_pairs,
                    tau_sup: s.thresholds.tau_sup,
                    tau_auto: s.thresholds.tau_auto,
                })
                .collect(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        read_json(&run_dir.join("summary.json"))
    }
}

pub fn latency_column(l: f64) -> String {
    format!("B_at_L{l}")
}

/// Writes the per-epoch CSV. Output depends only on its inputs.
pub fn write_csv(path: &Path, rows: &[EpochRow], grid: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let mut header: Vec<String> = ["epoch", "test_success_rate", "mean_test_return", "C_total", "D_total"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(grid.iter().map(|&l| latency_column(l)));
    w.write_record(&header).map_err(|e| HarnessError::csv(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.test_success_rate.to_string(),
            r.mean_test_return.to_string(),
            r.c_total.to_string(),
            r.d_total.to_string(),
        ];
        rec.extend(grid.iter().map(|&l| r.burden(l).to_string()));
        w.write_record(&rec).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub latency: f64,
    pub burden_a: f64,
    pub burden_b: f64,
    /// `burden_a / burden_b`; absent when `burden_b` is 0.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub algorithm_a: AlgorithmId,
    pub algorithm_b: AlgorithmId,
    pub seeds: Vec<u64>,
    pub totals_a: BurdenTotals,
    pub totals_b: BurdenTotals,
    pub table: Vec<ComparisonRow>,
    /// Latency above which run A has the lower burden.
    pub cutoff_latency: CutoffLatency,
    pub switch_ratio: Option<f64>,
    pub action_ratio: Option<f64>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        (a == 0.0).then_some(1.0)
    } else {
        Some(a / b)
    }
}

/// Compares two finished runs over the same seeds.
pub fn compare(run_a: &Path, run_b: &Path, grid: &[f64]) -> Result<Comparison> {
    let a = RunSummary::load(run_a)?;
    let b = RunSummary::load(run_b)?;
    compare_summaries(&a, &b, grid, &run_a.display().to_string(), &run_b.display().to_string())
}

pub fn compare_summaries(a: &RunSummary, b: &RunSummary, grid: &[f64], name_a: &str, name_b: &str) -> Result<Comparison> {
    if a.schema != b.schema {
        return Err(HarnessError::SchemaMismatch(format!(
            "summary schema {} vs {}",
            a.schema, b.schema
        )));
    }
    if a.env_id != b.env_id {
        return Err(HarnessError::SchemaMismatch(format!(
            "environments differ: {} vs {}",
            a.env_id, b.env_id
        )));
    }
    if a.seeds != b.seeds {
        return Err(HarnessError::SchemaMismatch(format!(
            "seed lists differ: {:?} vs {:?}",
            a.seeds, b.seeds
        )));
    }
    let (ta, tb) = (a.totals, b.totals);
    Ok(Comparison {
        run_a: name_a.to_string(),
        run_b: name_b.to_string(),
        algorithm_a: a.algorithm,
        algorithm_b: b.algorithm,
        seeds: a.seeds.clone(),
        totals_a: ta,
        totals_b: tb,
        table: grid
            .iter()
            .map(|&l| {
                let (ba, bb) = (ta.burden(l), tb.burden(l));
                ComparisonRow {
                    latency: l,
                    burden_a: ba,
                    burden_b: bb,
                    ratio: ratio(ba, bb),
                }
            })
            .collect(),
        cutoff_latency: cutoff_latency(&ta, &tb),
        switch_ratio: ratio(ta.context_switches as f64, tb.context_switches as f64),
        action_ratio: ratio(ta.supervisor_actions as f64, tb.supervisor_actions as f64),
    })
}
