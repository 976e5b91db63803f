use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use arcs::synth::{gen_rrs, gen_srcs};
use arcs_cli::io::{load_cloud, load_pairs, Truth};
use serde_json::Value;

fn arcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arcs"))
        .args(args)
        .env_remove("ARCS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = arcs(args);
    assert!(
        out.status.success(),
        "arcs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_srcs_round_trips_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen", "srcs", "--m", "300", "--n", "200", "--k", "50", "--sigma", "0.01", "--seed", "7", "--out", s(d)]);
    }
    for f in ["Q.csv", "P.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let inst = gen_srcs(300, 200, 50, 0.01, 7).unwrap();
    assert_eq!(load_cloud(&a.join("Q.csv")).unwrap(), inst.q);
    assert_eq!(load_cloud(&a.join("P.csv")).unwrap(), inst.p);
    let truth = Truth::load(&a.join("truth.json")).unwrap();
    assert_eq!(truth.r, inst.rotation.to_row_major());
    assert_eq!(truth.seed, 7);
}

#[test]
fn gen_rrs_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "rrs", "--l", "1000", "--k", "100", "--sigma", "0.01", "--norm-constrained", "--seed", "7", "--out", s(dir.path())]);
    let inst = gen_rrs(1000, 100, 0.01, 7, true).unwrap();
    assert_eq!(load_pairs(&dir.path().join("pairs.csv")).unwrap(), inst.pairs);
    let truth = json_file(&dir.path().join("truth.json"));
    assert_eq!(truth["inliers"].as_array().unwrap().len(), 100);
    assert_eq!(truth["R"].as_array().unwrap().len(), 9);
    assert_eq!(truth["sigma"], 0.01);
}

#[test]
fn noiseless_clouds_solved_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "srcs", "--m", "5000", "--n", "4000", "--k", "2", "--seed", "3", "--out", s(d)]);
    let res = d.join("res.json");
    ok(&[
        "pipeline", "--q", s(&d.join("Q.csv")), "--p", s(&d.join("P.csv")), "--stage", "arcs",
        "--truth", s(&d.join("truth.json")), "--out", s(&res),
    ]);
    let v = json_file(&res);
    assert!(v["error_deg"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["correspondences"].as_array().unwrap().len(), 2);
    assert_eq!(v["quaternion"].as_array().unwrap().len(), 4);
}

#[test]
fn full_pipeline_on_clouds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "srcs", "--m", "10000", "--n", "8000", "--k", "2000", "--sigma", "0.01", "--seed", "11", "--out", s(d)]);
    let res = d.join("res.json");
    ok(&[
        "pipeline", "--q", s(&d.join("Q.csv")), "--p", s(&d.join("P.csv")), "--stage", "n,o,r",
        "--sigma", "0.01", "--truth", s(&d.join("truth.json")), "--out", s(&res),
    ]);
    let v = json_file(&res);
    assert!(v["error_deg"].as_f64().unwrap() < 5.0, "{v}");
    for stage in ["match", "prune", "refine", "total"] {
        assert!(v["timings_ms"][stage].is_number(), "{stage}");
    }
    assert!(v["candidates"].as_u64().unwrap() > 2000);
    assert_eq!(v["consensus"].as_array().unwrap().len(), v["correspondences"].as_array().unwrap().len());
}

#[test]
fn pipeline_on_pairs_with_one_percent_inliers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "rrs", "--l", "100000", "--k", "1000", "--sigma", "0.01", "--norm-constrained", "--seed", "5", "--out", s(d)]);
    let res = d.join("res.json");
    ok(&[
        "pipeline", "--pairs", s(&d.join("pairs.csv")), "--stage", "o,r", "--sigma", "0.01",
        "--truth", s(&d.join("truth.json")), "--out", s(&res),
    ]);
    assert!(json_file(&res)["error_deg"].as_f64().unwrap() < 0.5);
}

#[test]
fn single_stage_commands_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "rrs", "--l", "2000", "--k", "200", "--sigma", "0.01", "--norm-constrained", "--seed", "9", "--out", s(d)]);
    let pairs = d.join("pairs.csv");
    let a = d.join("a.json");
    let b = d.join("b.json");
    ok(&["prune", "--pairs", s(&pairs), "--sigma", "0.01", "--out", s(&a)]);
    // explicit thresholds equal to the σ-derived ones
    ok(&["prune", "--pairs", s(&pairs), "--c", "0.0554", "--cbar", "0.049", "--out", s(&b)]);
    let (va, vb) = (json_file(&a), json_file(&b));
    assert_eq!(va["consensus"], vb["consensus"]);
    assert!(va["consensus"].as_array().unwrap().len() >= 190);

    let q = va["quaternion"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap().to_string()).collect::<Vec<_>>().join(",");
    let r = d.join("r.json");
    ok(&["refine", "--pairs", s(&pairs), "--init", &q, "--truth", s(&d.join("truth.json")), "--out", s(&r)]);
    let vr = json_file(&r);
    assert!(vr["iterations"].as_u64().unwrap() >= 1);
    assert!(vr["error_deg"].as_f64().unwrap() < 5.0);
}

#[test]
fn match_writes_correspondences() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "srcs", "--m", "200", "--n", "150", "--k", "40", "--sigma", "0.01", "--seed", "2", "--out", s(d)]);
    let out = ok(&["match", "--q", s(&d.join("Q.csv")), "--p", s(&d.join("P.csv")), "--sigma", "0.01", "--pairs-out", s(&d.join("pairs.csv"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = text.lines().count() - 1;
    assert!(text.starts_with("i,j\n"));
    assert_eq!(load_pairs(&d.join("pairs.csv")).unwrap().len(), rows);
}

#[test]
fn loaders() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let csv = d.join("c.csv");
    fs::write(&csv, "x,y,z\n1,2,3\n\n4, 5, 6\n-7,8e-1,9\n").unwrap();
    let c = load_cloud(&csv).unwrap();
    assert_eq!(c.len(), 3);
    assert_eq!(c.points()[1], arcs::geom::Point3::new(4.0, 5.0, 6.0));
    assert_eq!(c.points()[2], arcs::geom::Point3::new(-7.0, 0.8, 9.0));

    let ply = d.join("n.ply");
    fs::write(
        &ply,
        "ply\nformat ascii 1.0\ncomment normals\nelement vertex 2\nproperty float nx\nproperty float x\n\
         property float y\nproperty float z\nproperty float ny\nelement face 1\n\
         property list uchar int vertex_indices\nend_header\n9 1 2 3 9\n9 4 5 6 9\n3 0 1 1\n",
    )
    .unwrap();
    let c = load_cloud(&ply).unwrap();
    assert_eq!(c.points(), &[arcs::geom::Point3::new(1.0, 2.0, 3.0), arcs::geom::Point3::new(4.0, 5.0, 6.0)]);

    let bad = d.join("bad.csv");
    fs::write(&bad, "1,2,3\n4,five,6\n").unwrap();
    let e = load_cloud(&bad).unwrap_err().to_string();
    assert!(e.contains(":2:"), "{e}");

    let bin = d.join("b.ply");
    let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
    bytes.extend_from_slice(&[0u8, 0, 128, 63, 0, 0, 0, 64, 0, 0, 64, 64]);
    fs::write(&bin, bytes).unwrap();
    let e = load_cloud(&bin).unwrap_err();
    assert!(matches!(e, arcs_cli::CliError::Unsupported(_)), "{e}");
}

#[test]
fn empty_cloud_warns() {
    let dir = tempfile::tempdir().unwrap();
    let (q, p) = (dir.path().join("q.csv"), dir.path().join("p.csv"));
    fs::write(&q, "").unwrap();
    fs::write(&p, "1,2,3\n").unwrap();
    let out = ok(&["match", "--q", s(&q), "--p", s(&p), "--exact"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "i,j\n");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(arcs(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(arcs(&["pipeline"]).status.code(), Some(64));
    assert_eq!(arcs(&["bench", "--preset", "table9"]).status.code(), Some(64));
    assert_eq!(arcs(&["--help"]).status.code(), Some(0));
    assert_eq!(arcs(&["prune", "--pairs", s(&d.join("missing.csv")), "--sigma", "0.01"]).status.code(), Some(74));

    // unrelated clouds: no equal norms, so the exact solver has nothing to fit
    fs::write(d.join("q.csv"), "1,0,0\n0,3,0\n").unwrap();
    fs::write(d.join("p.csv"), "0,0,2\n5,0,0\n").unwrap();
    let out = arcs(&["pipeline", "--q", s(&d.join("q.csv")), "--p", s(&d.join("p.csv")), "--stage", "arcs"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(d.join("bad.csv"), "1,2,3\nx,y\n").unwrap();
    let out = arcs(&["match", "--q", s(&d.join("bad.csv")), "--p", s(&d.join("p.csv")), "--exact"]);
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2:"));

    // output path below a regular file
    let out = arcs(&["gen", "rrs", "--l", "10", "--k", "5", "--out", s(&d.join("q.csv").join("sub"))]);
    assert_eq!(out.status.code(), Some(74));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q.csv"));

    let out = Command::new(env!("CARGO_BIN_EXE_arcs"))
        .args(["bench", "--list"])
        .env("ARCS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn bench_list_and_small_preset() {
    let out = ok(&["bench", "--list"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["table2", "table3", "table4", "table5_scaled", "fig1_s_sweep", "fig2_pipeline", "fig4_phase", "fig5_sensitivity", "fig6_noise"] {
        assert!(text.contains(name), "{name}");
    }

    let dir = tempfile::tempdir().unwrap();
    ok(&["--threads", "1", "bench", "--preset", "table3", "--trials", "2", "--seed", "1", "--out", s(dir.path())]);
    let report = json_file(&dir.path().join("table3.json"));
    assert_eq!(report["rng"], "ChaCha8");
    assert_eq!(report["trials"], 2);
    assert_eq!(report["records"].as_array().unwrap().len(), 6);
    let csv = fs::read_to_string(dir.path().join("table3.csv")).unwrap();
    assert!(csv.starts_with("setting,trial,stage,error_deg,runtime_ms,consensus_size,inlier_purity"));
}

#[test]
fn bench_table4_reports_purity() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bench", "--preset", "table4", "--trials", "20", "--seed", "1", "--out", s(dir.path())]);
    let report = json_file(&dir.path().join("table4.json"));
    let row = report["summary"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["stage"] == "o")
        .unwrap()
        .clone();
    assert!(row["mean_inlier_purity"].as_f64().unwrap() > 0.8);
    assert_eq!(row["trials"], 20);
}

#[test]
fn bench_s_sweep_has_one_row_per_s() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bench", "--preset", "fig1_s_sweep", "--trials", "1", "--out", s(dir.path())]);
    let summary = fs::read_to_string(dir.path().join("fig1_s_sweep_summary.csv")).unwrap();
    let o_rows: Vec<&str> = summary.lines().filter(|l| l.contains(",o,")).collect();
    assert_eq!(o_rows.len(), 9);
    for s_val in [10, 20, 30, 45, 60, 90, 120, 150, 180] {
        assert!(o_rows.iter().any(|l| l.starts_with(&format!("s={s_val},"))), "s={s_val}");
    }
}
