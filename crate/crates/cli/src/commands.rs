use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use arcs::bench::{run_experiment, ExperimentConfig, PRESETS};
use arcs::consensus::{prune, PairList, PruneConfig, AXIS_SIGMAS, RESIDUAL_SIGMAS};
use arcs::geom::{quat_to_rotation, rotation_error_deg, rotation_to_quat, RotationMatrix, UnitQuaternion};
use arcs::matching::{arcs_n_match, arcs_solve, CorrespondenceSet, PointCloud};
use arcs::refine::{build_all, refine, RefineConfig};
use arcs::synth::{gen_rrs, gen_srcs};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::io::{self, Inliers, Truth};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "arcs", version, about = "Rotation and correspondence search between 3D point sets")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ARCS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic data with a ground-truth sidecar.
    #[command(subcommand)]
    Gen(GenKind),
    /// Norm matching between two clouds.
    Match(MatchArgs),
    /// Consensus pruning of a pair list.
    Prune(PruneArgs),
    /// Quaternion refinement over a pair list.
    Refine(RefineArgs),
    /// Any sequence of stages, or the noiseless solver.
    Pipeline(PipelineArgs),
    /// Run a benchmark preset.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    /// Two clouds with planted correspondences: Q.csv, P.csv, truth.json.
    Srcs {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// A pair list with planted inliers: pairs.csv, truth.json.
    Rrs {
        #[arg(long)]
        l: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Keep outlier norms within the inlier band.
        #[arg(long)]
        norm_constrained: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Thresholds: `--sigma` sets `c = 5.54σ` and `c̄ = 4.9σ`; `--c` and
/// `--cbar` override either.
#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub cbar: Option<f64>,
    /// Number of φ samples.
    #[arg(long, default_value_t = 90)]
    pub samples: usize,
}

impl ThresholdArgs {
    fn c(&self) -> Result<f64, CliError> {
        self.c
            .or(self.sigma.map(|s| RESIDUAL_SIGMAS * s))
            .ok_or_else(|| CliError::Usage("give --sigma or --c".into()))
    }

    fn prune_config(&self) -> Result<PruneConfig, CliError> {
        let c_bar = self
            .cbar
            .or(self.sigma.map(|s| AXIS_SIGMAS * s))
            .ok_or_else(|| CliError::Usage("give --sigma or --cbar".into()))?;
        Ok(PruneConfig::new(self.c()?, c_bar, self.samples)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RefineOpts {
    #[arg(long, default_value_t = 0.05)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 0.92)]
    pub beta: f64,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

impl RefineOpts {
    fn config(&self) -> Result<RefineConfig, CliError> {
        let cfg = RefineConfig { gamma0: self.gamma0, beta: self.beta, max_iter: self.max_iter, tol: self.tol };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub q: PathBuf,
    #[arg(long)]
    pub p: PathBuf,
    /// One-to-one matching of equal norms (noiseless data).
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Correspondence CSV (`i,j`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the matched coordinates as a pair list.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Starting quaternion `w1,w2,w3,w4` (scalar first); identity when omitted.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub init: Option<Vec<f64>>,
    #[command(flatten)]
    pub refine: RefineOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, requires = "p")]
    pub q: Option<PathBuf>,
    #[arg(long, requires = "q")]
    pub p: Option<PathBuf>,
    /// Pair list; skips norm matching.
    #[arg(long, conflicts_with_all = ["q", "p"])]
    pub pairs: Option<PathBuf>,
    /// Comma-separated stages from `n`, `o`, `r` in order, or `arcs` for
    /// the noiseless solver. Default: `n,o,r` for clouds, `o,r` for pairs.
    #[arg(long, value_delimiter = ',')]
    pub stage: Option<Vec<String>>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub refine: RefineOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth sidecar; adds `error_deg` to the output.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Print the preset catalog.
    #[arg(long)]
    pub list: bool,
    #[arg(long, required_unless_present = "list")]
    pub preset: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run the full-scale grid.
    #[arg(long)]
    pub full_scale: bool,
    /// Output directory for `<preset>.json`, `<preset>.csv` and
    /// `<preset>_summary.csv`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Gen(kind) => cmd_gen(kind),
        Command::Match(a) => cmd_match(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn emit(out: Option<&Path>, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes") + "\n";
    match out {
        Some(path) => io::write_text(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn cmd_gen(kind: GenKind) -> Result<(), CliError> {
    match kind {
        GenKind::Srcs { m, n, k, sigma, seed, out } => {
            let inst = gen_srcs(m, n, k, sigma, seed)?;
            io::write_cloud(&out.join("Q.csv"), &inst.q)?;
            io::write_cloud(&out.join("P.csv"), &inst.p)?;
            let inliers = inst.correspondences.pairs().iter().map(|&(i, j)| [i, j]).collect();
            Truth { r: inst.rotation.to_row_major(), inliers: Inliers::Correspondences(inliers), sigma, seed }
                .save(&out.join("truth.json"))?;
            println!("wrote {}, {}, {}", out.join("Q.csv").display(), out.join("P.csv").display(), out.join("truth.json").display());
        }
        GenKind::Rrs { l, k, sigma, norm_constrained, seed, out } => {
            let inst = gen_rrs(l, k, sigma, seed, norm_constrained)?;
            io::write_pairs(&out.join("pairs.csv"), &inst.pairs)?;
            Truth { r: inst.rotation.to_row_major(), inliers: Inliers::Indices(inst.inliers), sigma, seed }
                .save(&out.join("truth.json"))?;
            println!("wrote {}, {}", out.join("pairs.csv").display(), out.join("truth.json").display());
        }
    }
    Ok(())
}

pub fn cmd_match(a: MatchArgs) -> Result<(), CliError> {
    let q = io::load_cloud(&a.q)?;
    let p = io::load_cloud(&a.p)?;
    let c = if a.exact {
        arcs::matching::arcs_match(&q, &p, 0.0)?
    } else {
        arcs_n_match(&q, &p, a.thresholds.c()?)?
    };
    let mut buf = Vec::new();
    io::write_correspondences(&mut buf, &c).expect("writing to memory");
    match &a.out {
        Some(path) => io::write_text(path, std::str::from_utf8(&buf).expect("ASCII"))?,
        None => std::io::stdout().write_all(&buf).map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
    }
    if let Some(path) = &a.pairs_out {
        io::write_pairs(path, &PairList::from_correspondences(&q, &p, &c))?;
    }
    eprintln!("{} correspondences", c.len());
    Ok(())
}

fn truth_rotation(path: &Option<PathBuf>) -> Result<Option<RotationMatrix>, CliError> {
    path.as_ref()
        .map(|p| {
            let t = Truth::load(p)?;
            RotationMatrix::from_row_major(&t.r).map_err(|e| CliError::parse(p, 1, &e.to_string()))
        })
        .transpose()
}

fn rotation_fields(out: &mut Map<String, Value>, w: &UnitQuaternion, truth: &Option<RotationMatrix>) {
    let w = w.canonical();
    let r = quat_to_rotation(&w);
    out.insert("rotation".into(), json!(r.to_row_major()));
    out.insert("quaternion".into(), json!(w.to_array()));
    if let Some(t) = truth {
        out.insert("error_deg".into(), json!(rotation_error_deg(&r, t)));
    }
}

pub fn cmd_prune(a: PruneArgs) -> Result<(), CliError> {
    let pairs = io::load_pairs(&a.pairs)?;
    let cfg = a.thresholds.prune_config()?;
    let truth = truth_rotation(&a.truth)?;
    let t = Instant::now();
    let res = prune(&pairs, &cfg)?;
    let mut out = Map::new();
    out.insert("seed".into(), json!(a.seed));
    out.insert("thresholds".into(), json!(cfg));
    rotation_fields(&mut out, &rotation_to_quat(&res.rotation), &truth);
    out.insert("axis_angle".into(), json!(res.axis_angle));
    out.insert("sample".into(), json!(res.sample));
    out.insert("consensus".into(), json!(res.consensus));
    out.insert("timings_ms".into(), json!({ "prune": ms(t) }));
    emit(a.out.as_deref(), &Value::Object(out))
}

pub fn cmd_refine(a: RefineArgs) -> Result<(), CliError> {
    let pairs = io::load_pairs(&a.pairs)?;
    let cfg = a.refine.config()?;
    let truth = truth_rotation(&a.truth)?;
    let w0 = match &a.init {
        Some(v) if v.len() != 4 => {
            return Err(CliError::Usage(format!("--init needs 4 comma-separated values, got {}", v.len())))
        }
        Some(v) => UnitQuaternion::normalize(nalgebra::Vector4::from_column_slice(v))?,
        None => UnitQuaternion::identity(),
    };
    let t = Instant::now();
    let res = refine(&build_all(&pairs), &w0, &cfg)?;
    let mut out = Map::new();
    out.insert("seed".into(), json!(a.seed));
    out.insert("refine".into(), json!(cfg));
    rotation_fields(&mut out, &res.w, &truth);
    out.insert("iterations".into(), json!(res.iterations()));
    out.insert("objective".into(), json!({ "initial": res.h0, "final": res.history.last().map_or(res.h0, |s| s.h) }));
    out.insert("timings_ms".into(), json!({ "refine": ms(t) }));
    emit(a.out.as_deref(), &Value::Object(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stages {
    Exact,
    Robust { n: bool, o: bool, r: bool },
}

fn parse_stages(list: &[String]) -> Result<Stages, CliError> {
    let names: Vec<String> = list.iter().map(|s| s.trim().to_ascii_lowercase()).collect();
    if names == ["arcs"] {
        return Ok(Stages::Exact);
    }
    let order = ["n", "o", "r"];
    let mut last = None;
    for s in &names {
        let pos = order
            .iter()
            .position(|o| o == s)
            .ok_or_else(|| CliError::Usage(format!("unknown stage {s:?}; use n, o, r or arcs")))?;
        if last.is_some_and(|l| pos <= l) {
            return Err(CliError::Usage("stages must be distinct and in the order n, o, r".into()));
        }
        last = Some(pos);
    }
    if names.is_empty() {
        return Err(CliError::Usage("no stage given".into()));
    }
    let has = |x: &str| names.iter().any(|s| s == x);
    Ok(Stages::Robust { n: has("n"), o: has("o"), r: has("r") })
}

pub fn cmd_pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let clouds = match (&a.q, &a.p, &a.pairs) {
        (Some(q), Some(p), None) => Some((io::load_cloud(q)?, io::load_cloud(p)?)),
        (None, None, Some(_)) => None,
        _ => return Err(CliError::Usage("give either --q and --p, or --pairs".into())),
    };
    let default_stages = if clouds.is_some() { "n,o,r" } else { "o,r" };
    let stage_list = a.stage.clone().unwrap_or_else(|| default_stages.split(',').map(String::from).collect());
    let stages = parse_stages(&stage_list)?;
    let truth = truth_rotation(&a.truth)?;

    let mut out = Map::new();
    out.insert("seed".into(), json!(a.seed));
    out.insert("stages".into(), json!(stage_list));
    let mut timings = Map::new();

    match stages {
        Stages::Exact => {
            let (q, p) = clouds.ok_or_else(|| CliError::Usage("stage arcs needs --q and --p".into()))?;
            let t = Instant::now();
            let (r, matches) = arcs_solve(&q, &p)?;
            timings.insert("arcs".into(), json!(ms(t)));
            rotation_fields(&mut out, &rotation_to_quat(&r), &truth);
            out.insert("correspondences".into(), json!(pairs_json(&matches)));
        }
        Stages::Robust { n, o, r } => {
            let (pairs, candidates) = match (&clouds, n) {
                (Some((q, p)), true) => {
                    let (pairs, cand) = stage_n(q, p, &a.thresholds, &mut timings)?;
                    out.insert("candidates".into(), json!(cand.len()));
                    (pairs, Some(cand))
                }
                (None, false) => (io::load_pairs(a.pairs.as_ref().expect("checked above"))?, None),
                (Some(_), false) => return Err(CliError::Usage("clouds need stage n; pass --pairs to skip it".into())),
                (None, true) => return Err(CliError::Usage("stage n needs --q and --p".into())),
            };
            out.insert("thresholds".into(), threshold_echo(&a.thresholds, o)?);

            let mut subset: Option<Vec<usize>> = None;
            let mut w = None;
            if o {
                let cfg = a.thresholds.prune_config()?;
                let t = Instant::now();
                let res = prune(&pairs, &cfg)?;
                timings.insert("prune".into(), json!(ms(t)));
                out.insert("axis_angle".into(), json!(res.axis_angle));
                out.insert("sample".into(), json!(res.sample));
                out.insert("consensus".into(), json!(res.consensus));
                if let Some(c) = &candidates {
                    let kept: Vec<[usize; 2]> = res.consensus.iter().map(|&i| { let (a, b) = c.pairs()[i]; [a, b] }).collect();
                    out.insert("correspondences".into(), json!(kept));
                }
                w = Some(rotation_to_quat(&res.rotation));
                subset = Some(res.consensus);
            }
            if r {
                let cfg = a.refine.config()?;
                let ds = match &subset {
                    Some(s) => build_all(&pairs.subset(s)),
                    None => build_all(&pairs),
                };
                let t = Instant::now();
                let res = refine(&ds, &w.unwrap_or_else(UnitQuaternion::identity), &cfg)?;
                timings.insert("refine".into(), json!(ms(t)));
                out.insert("iterations".into(), json!(res.iterations()));
                w = Some(res.w);
            }
            if let Some(w) = w {
                rotation_fields(&mut out, &w, &truth);
            }
        }
    }
    let total: f64 = timings.values().filter_map(Value::as_f64).sum();
    timings.insert("total".into(), json!(total));
    out.insert("timings_ms".into(), Value::Object(timings));
    emit(a.out.as_deref(), &Value::Object(out))
}

fn stage_n(
    q: &PointCloud,
    p: &PointCloud,
    th: &ThresholdArgs,
    timings: &mut Map<String, Value>,
) -> Result<(PairList, CorrespondenceSet), CliError> {
    let t = Instant::now();
    let cand = arcs_n_match(q, p, th.c()?)?;
    timings.insert("match".into(), json!(ms(t)));
    if cand.is_empty() {
        return Err(CliError::Degenerate("norm matching produced no candidate pairs".into()));
    }
    Ok((PairList::from_correspondences(q, p, &cand), cand))
}

fn threshold_echo(th: &ThresholdArgs, prune_ran: bool) -> Result<Value, CliError> {
    if prune_ran {
        return Ok(json!(th.prune_config()?));
    }
    Ok(json!({ "c": th.c().ok(), "sigma": th.sigma }))
}

fn pairs_json(c: &CorrespondenceSet) -> Vec<[usize; 2]> {
    c.pairs().iter().map(|&(i, j)| [i, j]).collect()
}

pub fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    if a.list {
        println!("{:<18} {:>6} {:>6}  description", "preset", "trials", "full");
        for p in PRESETS {
            println!("{:<18} {:>6} {:>6}  {}", p.name, p.trials, p.full_trials, p.description);
        }
        return Ok(());
    }
    let preset = a.preset.expect("clap requires --preset without --list");
    let cfg = ExperimentConfig { preset: preset.clone(), trials: a.trials, seed: a.seed, full_scale: a.full_scale };
    let report = run_experiment(&cfg)?;
    let json_path = a.out.join(format!("{preset}.json"));
    io::write_text(&json_path, &(report.to_json() + "\n"))?;
    let mut rows = Vec::new();
    report.write_csv(&mut rows)?;
    let csv_path = a.out.join(format!("{preset}.csv"));
    io::write_text(&csv_path, std::str::from_utf8(&rows).expect("CSV is UTF-8"))?;
    let mut summary = Vec::new();
    report.write_summary_csv(&mut summary)?;
    let summary_path = a.out.join(format!("{preset}_summary.csv"));
    io::write_text(&summary_path, std::str::from_utf8(&summary).expect("CSV is UTF-8"))?;

    for row in &report.summary {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<24} {:<4} err {:>9} deg  success {:>6}  purity {:>6}  {:>10.1} ms",
            row.setting,
            row.stage,
            fmt(row.mean_error_deg),
            fmt(row.success_rate),
            fmt(row.mean_inlier_purity),
            row.mean_runtime_ms
        );
    }
    println!("wrote {}, {}, {}", json_path.display(), csv_path.display(), summary_path.display());
    Ok(())
}
