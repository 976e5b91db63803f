//! Seeded experiment presets and their reports.
//!
//! A preset is a list of [`Setting`]s; each setting is run for a number of
//! trials. Trial `t` of every setting uses the instance seed
//! [`trial_seed`]`(master, t)`, so settings that only differ in solver
//! parameters (for example the number of `φ` samples) see the same instances.
//! Trials run in parallel; results are collected in trial order, so the
//! report does not depend on the schedule. Timings are the only
//! nondeterministic fields.

use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{prune, PairList, PruneConfig};
use crate::error::{invalid, Error, Result};
use crate::geom::{quat_to_rotation, rotation_error_deg, rotation_to_quat, UnitQuaternion};
use crate::matching::{arcs_n_match, arcs_solve};
use crate::pipeline::ms;
use crate::refine::{build_all, refine, RefineConfig};
use crate::synth::{gen_rrs_spec, gen_srcs, purity, success_rate, RotationSpec, RrsSpec, RNG_NAME};

/// Success threshold in degrees.
pub const SUCCESS_DEG: f64 = 10.0;

/// What one trial of a setting does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Task {
    /// Noiseless clouds solved by exact norm matching. Stage `arcs`.
    Exact { m: usize, n: usize, k: usize },
    /// Candidate generation only. Stage `n`.
    Candidates { m: usize, n: usize, k: usize, sigma: f64 },
    /// Noisy clouds through the full pipeline. Stages `n`, `o`, `or`.
    Clouds { m: usize, n: usize, k: usize, sigma: f64, samples: usize },
    /// Pair lists through pruning and refinement. Stages `o`, `or`, and `r`
    /// (refinement of all pairs from the identity) when `refine_only` is set.
    Pairs { spec: RrsSpec, samples: usize, refine_only: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub label: String,
    #[serde(flatten)]
    pub task: Task,
}

impl Setting {
    pub fn new(label: impl Into<String>, task: Task) -> Self {
        Self { label: label.into(), task }
    }
}

/// One row per (setting, trial, stage).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub setting: String,
    pub trial: usize,
    pub stage: String,
    pub error_deg: Option<f64>,
    pub runtime_ms: f64,
    pub consensus_size: Option<usize>,
    pub inlier_purity: Option<f64>,
    /// Fraction of the true inliers kept by the stage.
    pub inlier_recall: Option<f64>,
    /// Set when the stage failed; the trial then counts as unsuccessful.
    pub failure: Option<String>,
}

/// Aggregates per (setting, stage).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub stage: String,
    pub trials: usize,
    pub failures: usize,
    pub mean_error_deg: Option<f64>,
    pub std_error_deg: Option<f64>,
    pub median_error_deg: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_runtime_ms: f64,
    pub mean_consensus_size: Option<f64>,
    pub mean_inlier_purity: Option<f64>,
    pub mean_inlier_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub preset: String,
    pub rng: String,
    pub seed: u64,
    pub trials: usize,
    pub full_scale: bool,
    pub settings: Vec<Setting>,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-trial rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.records)
    }

    /// One row per (setting, stage).
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.summary)
    }

    pub fn summary_for(&self, setting: &str, stage: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.setting == setting && r.stage == stage)
    }

    pub fn records_for<'a>(&'a self, setting: &'a str, stage: &'a str) -> impl Iterator<Item = &'a TrialRecord> {
        self.records.iter().filter(move |r| r.setting == setting && r.stage == stage)
    }

    /// Zeroes every timing so reports can be compared bit for bit.
    pub fn without_timings(mut self) -> Self {
        for r in &mut self.records {
            r.runtime_ms = 0.0;
        }
        for r in &mut self.summary {
            r.mean_runtime_ms = 0.0;
        }
        self
    }
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Internal(format!("CSV write failed: {e}")))?;
    }
    out.flush().map_err(|e| Error::Internal(format!("CSV write failed: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    /// Overrides the preset's trial count.
    pub trials: Option<usize>,
    pub seed: u64,
    /// Use the full-scale grid instead of the desk-scale one.
    pub full_scale: bool,
}

impl ExperimentConfig {
    pub fn new(preset: impl Into<String>, seed: u64) -> Self {
        Self { preset: preset.into(), trials: None, seed, full_scale: false }
    }
}

pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub trials: usize,
    pub full_trials: usize,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "table2",
        description: "noiseless exact matching, k = 2, m up to 1e6",
        trials: 20,
        full_trials: 100,
    },
    PresetInfo {
        name: "table3",
        description: "candidate counts from noisy norm matching",
        trials: 10,
        full_trials: 1,
    },
    PresetInfo {
        name: "table4",
        description: "consensus purity after pruning noisy candidates",
        trials: 20,
        full_trials: 20,
    },
    PresetInfo {
        name: "table5_scaled",
        description: "robust rotation search, 1% inliers (full scale: down to 0.01%)",
        trials: 20,
        full_trials: 20,
    },
    PresetInfo {
        name: "fig1_s_sweep",
        description: "pruning and refinement error versus the number of φ samples",
        trials: 50,
        full_trials: 500,
    },
    PresetInfo {
        name: "fig2_pipeline",
        description: "full pipeline on m = 1e4 clouds as the overlap shrinks",
        trials: 20,
        full_trials: 20,
    },
    PresetInfo {
        name: "fig4_phase",
        description: "error over problem size and inlier ratio",
        trials: 10,
        full_trials: 50,
    },
    PresetInfo {
        name: "fig5_sensitivity",
        description: "error versus the ground-truth angle and axis",
        trials: 5,
        full_trials: 100,
    },
    PresetInfo {
        name: "fig6_noise",
        description: "candidate count and pruning error versus noise level",
        trials: 20,
        full_trials: 100,
    },
];

pub fn preset_info(name: &str) -> Option<&'static PresetInfo> {
    PRESETS.iter().find(|p| p.name == name)
}

const SIGMA: f64 = 0.01;

fn rrs(l: usize, k: usize, sigma: f64) -> RrsSpec {
    RrsSpec { l, k, sigma, norm_constrained: true, rotation: RotationSpec::random() }
}

fn pairs_task(spec: RrsSpec, samples: usize, refine_only: bool) -> Task {
    Task::Pairs { spec, samples, refine_only }
}

/// The settings of a preset.
pub fn preset_settings(name: &str, full_scale: bool) -> Result<Vec<Setting>> {
    let clouds = |m: usize, k: usize, s: usize| Task::Clouds { m, n: m * 4 / 5, k, sigma: SIGMA, samples: s };
    let settings = match name {
        "table2" => [10_000, 100_000, 1_000_000]
            .iter()
            .map(|&m| Setting::new(format!("m={m}"), Task::Exact { m, n: m * 4 / 5, k: 2 }))
            .collect(),
        "table3" => [(1000, 200), (5000, 1000), (10_000, 2000)]
            .iter()
            .map(|&(m, k)| {
                Setting::new(format!("m={m},k={k}"), Task::Candidates { m, n: m * 4 / 5, k, sigma: SIGMA })
            })
            .collect(),
        "table4" => {
            let grid: &[(usize, usize)] = if full_scale { &[(1000, 200), (5000, 1000), (10_000, 2000)] } else { &[(1000, 200)] };
            grid.iter().map(|&(m, k)| Setting::new(format!("m={m},k={k}"), clouds(m, k, 90))).collect()
        }
        "table5_scaled" => {
            let grid: &[(usize, usize)] = if full_scale {
                &[(100_000, 1000), (1_000_000, 1000), (5_000_000, 3000), (10_000_000, 3000), (10_000_000, 1000)]
            } else {
                &[(100_000, 1000)]
            };
            grid.iter()
                .map(|&(l, k)| Setting::new(format!("l={l},k={k}"), pairs_task(rrs(l, k, SIGMA), 90, true)))
                .collect()
        }
        "fig1_s_sweep" => [10, 20, 30, 45, 60, 90, 120, 150, 180]
            .iter()
            .map(|&s| Setting::new(format!("s={s}"), pairs_task(rrs(100_000, 1000, SIGMA), s, false)))
            .collect(),
        "fig2_pipeline" => {
            let ks: &[usize] = if full_scale { &[500, 1000, 1500, 2000, 3000, 4000] } else { &[1000, 2000, 3000] };
            ks.iter().map(|&k| Setting::new(format!("k={k}"), clouds(10_000, k, 90))).collect()
        }
        "fig4_phase" => {
            let (ls, ratios): (&[usize], &[usize]) = if full_scale {
                (&[10_000, 30_000, 50_000, 70_000, 90_000], &[1, 3, 5, 7, 9])
            } else {
                (&[10_000, 50_000, 90_000], &[1, 5, 9])
            };
            let mut v = Vec::new();
            for &l in ls {
                for &pct in ratios {
                    let k = l * pct / 100;
                    v.push(Setting::new(format!("l={l},k={k}"), pairs_task(rrs(l, k, SIGMA), 90, true)));
                }
            }
            v
        }
        "fig5_sensitivity" => {
            use std::f64::consts::PI;
            let mut v = Vec::new();
            for j in 1..=7 {
                let omega = j as f64 * PI / 4.0;
                let spec = RrsSpec { rotation: RotationSpec { omega: Some(omega), ..Default::default() }, ..rrs(100_000, 1000, SIGMA) };
                v.push(Setting::new(format!("omega={j}pi/4"), pairs_task(spec, 90, false)));
            }
            for j in 0..=4 {
                let rot = RotationSpec { theta: Some(j as f64 * PI / 8.0), phi: Some(PI / 3.0), omega: Some(PI / 2.0) };
                let spec = RrsSpec { rotation: rot, ..rrs(100_000, 1000, SIGMA) };
                v.push(Setting::new(format!("theta={j}pi/8"), pairs_task(spec, 90, false)));
            }
            for j in 0..=4 {
                let rot = RotationSpec { theta: Some(PI / 4.0), phi: Some(j as f64 * PI / 4.0), omega: Some(PI / 2.0) };
                let spec = RrsSpec { rotation: rot, ..rrs(100_000, 1000, SIGMA) };
                v.push(Setting::new(format!("phi={j}pi/4"), pairs_task(spec, 90, false)));
            }
            v
        }
        "fig6_noise" => {
            let mut v: Vec<Setting> = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05]
                .iter()
                .map(|&sigma| {
                    Setting::new(format!("match,sigma={sigma}"), Task::Candidates { m: 1000, n: 800, k: 200, sigma })
                })
                .collect();
            v.extend([0.01, 0.02, 0.05, 0.1].iter().map(|&sigma| {
                Setting::new(format!("prune,sigma={sigma}"), pairs_task(rrs(1000, 100, sigma), 90, false))
            }));
            v
        }
        other => {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
            return Err(invalid(format!("unknown preset {other:?}; known presets: {}", names.join(", "))));
        }
    };
    Ok(settings)
}

/// Instance seed for trial `t`: the first output of a ChaCha8 stream keyed by
/// the master seed, on stream `t`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

/// Runs a named preset.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let settings = preset_settings(&cfg.preset, cfg.full_scale)?;
    let info = preset_info(&cfg.preset).expect("preset_settings accepted the name");
    let trials = cfg.trials.unwrap_or(if cfg.full_scale { info.full_trials } else { info.trials });
    run_settings(&cfg.preset, settings, trials, cfg.seed, cfg.full_scale)
}

/// Runs explicit settings.
pub fn run_settings(
    name: &str,
    settings: Vec<Setting>,
    trials: usize,
    seed: u64,
    full_scale: bool,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let mut records = Vec::new();
    for setting in &settings {
        let per_trial: Vec<Vec<TrialRecord>> = (0..trials)
            .into_par_iter()
            .map(|t| run_trial(setting, t, trial_seed(seed, t)))
            .collect::<Result<_>>()?;
        records.extend(per_trial.into_iter().flatten());
    }
    let summary = summarize(&settings, &records);
    Ok(ExperimentReport {
        preset: name.to_string(),
        rng: RNG_NAME.to_string(),
        seed,
        trials,
        full_scale,
        settings,
        records,
        summary,
    })
}

struct Row<'a> {
    setting: &'a str,
    trial: usize,
}

impl Row<'_> {
    fn record(&self, stage: &str, runtime_ms: f64) -> TrialRecord {
        TrialRecord {
            setting: self.setting.to_string(),
            trial: self.trial,
            stage: stage.to_string(),
            error_deg: None,
            runtime_ms,
            consensus_size: None,
            inlier_purity: None,
            inlier_recall: None,
            failure: None,
        }
    }

    fn failed(&self, stage: &str, runtime_ms: f64, e: &Error) -> TrialRecord {
        TrialRecord { failure: Some(e.to_string()), ..self.record(stage, runtime_ms) }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn run_trial(setting: &Setting, trial: usize, seed: u64) -> Result<Vec<TrialRecord>> {
    let row = Row { setting: &setting.label, trial };
    let mut out = Vec::new();
    match setting.task {
        Task::Exact { m, n, k } => {
            let inst = gen_srcs(m, n, k, 0.0, seed)?;
            let t = Instant::now();
            let res = arcs_solve(&inst.q, &inst.p);
            let elapsed = ms(t);
            out.push(match res {
                Ok((r, c)) => {
                    let hits = c.pairs().iter().filter(|&&p| inst.correspondences.contains(p)).count();
                    TrialRecord {
                        error_deg: Some(rotation_error_deg(&r, &inst.rotation)),
                        consensus_size: Some(c.len()),
                        inlier_purity: ratio(hits, c.len()),
                        inlier_recall: ratio(hits, k),
                        ..row.record("arcs", elapsed)
                    }
                }
                Err(e) => row.failed("arcs", elapsed, &e),
            });
        }
        Task::Candidates { m, n, k, sigma } => {
            let inst = gen_srcs(m, n, k, sigma, seed)?;
            let c = PruneConfig::from_sigma(sigma)?.c;
            let t = Instant::now();
            let cand = arcs_n_match(&inst.q, &inst.p, c)?;
            let elapsed = ms(t);
            let hits = inst.correspondences.pairs().iter().filter(|&&p| cand.contains(p)).count();
            out.push(TrialRecord {
                consensus_size: Some(cand.len()),
                inlier_purity: ratio(hits, cand.len()),
                inlier_recall: ratio(hits, k),
                ..row.record("n", elapsed)
            });
        }
        Task::Clouds { m, n, k, sigma, samples } => {
            let inst = gen_srcs(m, n, k, sigma, seed)?;
            let pcfg = PruneConfig::from_sigma(sigma)?.with_samples(samples);
            let t = Instant::now();
            let cand = arcs_n_match(&inst.q, &inst.p, pcfg.c)?;
            let n_ms = ms(t);
            let hits = inst.correspondences.pairs().iter().filter(|&&p| cand.contains(p)).count();
            out.push(TrialRecord {
                consensus_size: Some(cand.len()),
                inlier_purity: ratio(hits, cand.len()),
                inlier_recall: ratio(hits, k),
                ..row.record("n", n_ms)
            });
            let pairs = PairList::from_correspondences(&inst.q, &inst.p, &cand);
            let truth = &inst.correspondences;
            let is_inlier = |i: usize| truth.contains(cand.pairs()[i]);
            stages_o_or(&row, &pairs, &pcfg, &inst.rotation, k, &is_inlier, &mut out);
        }
        Task::Pairs { spec, samples, refine_only } => {
            let inst = gen_rrs_spec(&spec, seed)?;
            let pcfg = PruneConfig::from_sigma(spec.sigma)?.with_samples(samples);
            let mut mask = vec![false; spec.l];
            for &i in &inst.inliers {
                mask[i] = true;
            }
            let is_inlier = |i: usize| mask[i];
            stages_o_or(&row, &inst.pairs, &pcfg, &inst.rotation, spec.k, &is_inlier, &mut out);
            if refine_only {
                let t = Instant::now();
                let res = refine(&build_all(&inst.pairs), &UnitQuaternion::identity(), &RefineConfig::default());
                let elapsed = ms(t);
                out.push(match res {
                    Ok(r) => TrialRecord {
                        error_deg: Some(rotation_error_deg(&quat_to_rotation(&r.w), &inst.rotation)),
                        ..row.record("r", elapsed)
                    },
                    Err(e) => row.failed("r", elapsed, &e),
                });
            }
        }
    }
    Ok(out)
}

fn stages_o_or(
    row: &Row,
    pairs: &PairList,
    pcfg: &PruneConfig,
    truth: &crate::geom::RotationMatrix,
    k: usize,
    is_inlier: &dyn Fn(usize) -> bool,
    out: &mut Vec<TrialRecord>,
) {
    let t = Instant::now();
    let res = prune(pairs, pcfg);
    let o_ms = ms(t);
    let cons = match res {
        Ok(c) => c,
        Err(e) => {
            out.push(row.failed("o", o_ms, &e));
            out.push(row.failed("or", o_ms, &e));
            return;
        }
    };
    let hits = cons.consensus.iter().filter(|&&i| is_inlier(i)).count();
    let base = TrialRecord {
        consensus_size: Some(cons.cardinality()),
        inlier_purity: purity(&cons.consensus, is_inlier),
        inlier_recall: ratio(hits, k),
        ..row.record("o", o_ms)
    };
    out.push(TrialRecord { error_deg: Some(rotation_error_deg(&cons.rotation, truth)), ..base.clone() });

    let t = Instant::now();
    let ds = build_all(&pairs.subset(&cons.consensus));
    let res = refine(&ds, &rotation_to_quat(&cons.rotation), &RefineConfig::default());
    let or_ms = o_ms + ms(t);
    out.push(match res {
        Ok(r) => TrialRecord {
            stage: "or".into(),
            runtime_ms: or_ms,
            error_deg: Some(rotation_error_deg(&quat_to_rotation(&r.w), truth)),
            ..base
        },
        Err(e) => row.failed("or", or_ms, &e),
    });
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(settings: &[Setting], records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for s in settings {
        let mut stages: Vec<&str> = Vec::new();
        for r in records.iter().filter(|r| r.setting == s.label) {
            if !stages.contains(&r.stage.as_str()) {
                stages.push(&r.stage);
            }
        }
        for stage in stages {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.setting == s.label && r.stage == stage).collect();
            let errors: Vec<f64> = rs.iter().filter_map(|r| r.error_deg).collect();
            let failures = rs.iter().filter(|r| r.failure.is_some()).count();
            let mean_err = mean(&errors);
            let std = mean_err.map(|m| (errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / errors.len() as f64).sqrt());
            let median = (!errors.is_empty()).then(|| {
                let mut e = errors.clone();
                e.sort_by(f64::total_cmp);
                let n = e.len();
                if n % 2 == 1 { e[n / 2] } else { (e[n / 2 - 1] + e[n / 2]) / 2.0 }
            });
            // failed trials count as unsuccessful
            let success = if errors.is_empty() {
                None
            } else {
                let mut padded = errors.clone();
                padded.extend(std::iter::repeat(f64::INFINITY).take(failures));
                success_rate(&padded, SUCCESS_DEG).ok()
            };
            let sizes: Vec<f64> = rs.iter().filter_map(|r| r.consensus_size.map(|c| c as f64)).collect();
            let purities: Vec<f64> = rs.iter().filter_map(|r| r.inlier_purity).collect();
            let recalls: Vec<f64> = rs.iter().filter_map(|r| r.inlier_recall).collect();
            rows.push(SummaryRow {
                setting: s.label.clone(),
                stage: stage.to_string(),
                trials: rs.len(),
                failures,
                mean_error_deg: mean_err,
                std_error_deg: std,
                median_error_deg: median,
                success_rate: success,
                mean_runtime_ms: mean(&rs.iter().map(|r| r.runtime_ms).collect::<Vec<_>>()).unwrap_or(0.0),
                mean_consensus_size: mean(&sizes),
                mean_inlier_purity: mean(&purities),
                mean_inlier_recall: mean(&recalls),
            });
        }
    }
    rows
}
