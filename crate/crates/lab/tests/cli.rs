use std::path::Path;

use rwrs_lab::output::without_timestamp;
use rwrs_lab::PlotTable;
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut full = vec!["rwrs"];
    full.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = rwrs_lab::run_cli(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn solve_example_reports_value_and_convergence() {
    let (code, out, err) = run(&["solve", "--mode", "K_Dq", "--d", "1", "--D", "0.5", "--q", "2", "--R", "4", "--m", "128"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["command"], "solve");
    assert_eq!(v["config"]["solve"]["R"], 4.0);
    assert_eq!(v["result"]["solution"]["converged"], true);
    assert!(v["result"]["solution"]["value"].as_f64().unwrap() > 1.0);
}

#[test]
fn reruns_are_identical_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    let args = ["tail", "--method", "naive", "--d", "1", "--n", "50", "--b", "0.3", "--replicates", "3000", "--seed", "9"];
    let mut full = args.to_vec();
    full.extend(["--output", p(&path)]);
    assert_eq!(run(&full).0, 0);
    let va = read_json(&path);
    assert_eq!(run(&full).0, 0);
    let vb = read_json(&path);
    assert!(va.get("timestamp").is_some());
    assert_eq!(without_timestamp(va).to_string(), without_timestamp(vb).to_string());
}

#[test]
fn worker_count_does_not_change_results() {
    let cases: [&[&str]; 3] = [
        &["tail", "--method", "cond-gaussian", "--d", "2", "--n", "4096", "--b", "auto-smalldev:0.75", "--replicates", "1000"],
        &["tail", "--method", "naive", "--d", "1", "--n", "40", "--b", "0.2", "--replicates", "2000"],
        &["simulate", "--d", "2", "--n", "100,400", "--replicates", "1500"],
    ];
    for args in cases {
        let results: Vec<String> = ["1", "3"]
            .iter()
            .map(|w| {
                let mut full = args.to_vec();
                full.extend(["--workers", w]);
                let (code, out, err) = run(&full);
                assert_eq!(code, 0, "{err}");
                let v: Value = serde_json::from_str(&out).unwrap();
                v["result"].to_string()
            })
            .collect();
        assert_eq!(results[0], results[1], "{args:?}");
    }
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let plot = dir.path().join("plot.csv");
    let cases = [
        "command = \"solve\"\nbogus = 1\n",
        "command = \"solve\"\n[solve]\nmode = \"K_Dq\"\nradius = 3\n",
        "command = \"tail\"\n[tail]\nn = 100\n",
        "command = \"tail\"\n[tail]\nn = 100\nb = \"auto-smalldev:1.2\"\n",
        "command = \"simulate\"\n[scenery]\nfamily = \"cauchy\"\n",
        "command = \"solve\"\n[solve]\nmode = \"K_Dq\"\nR = -1\n",
        "command = \"rate-table\"\n[rate-table]\nregime = \"small-dev\"\nn = [4096]\n",
        "not toml at all [",
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("c{i}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let (code, _, err) = run(&["--config", p(&cfg), "--output", p(&out), "--plot", p(&plot)]);
        assert_eq!(code, 2, "case {i}: {err}");
        assert!(!out.exists() && !plot.exists(), "case {i} left artifacts");
    }
    assert_eq!(run(&["solve", "--mode", "K_X"]).0, 2);
    assert_eq!(run(&[]).0, 2);
}

#[test]
fn io_failure_exits_4() {
    let (code, _, err) = run(&["trial-sequence", "--output", "/nonexistent-dir/x.json"]);
    assert_eq!(code, 4, "{err}");
    assert_eq!(run(&["--config", "/nonexistent-dir/c.toml"]).0, 4);
}

#[test]
fn non_convergence_exits_3_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let psi = dir.path().join("psi.csv");
    let (code, _, _) = run(&[
        "solve", "--mode", "K_Dq", "--R", "4", "--m", "128", "--max-iterations", "2", "--restarts", "1",
        "--export-minimizer", p(&psi), "--output", p(&out),
    ]);
    assert_eq!(code, 3);
    assert_eq!(read_json(&out)["converged"], false);
    let table = PlotTable::read(&psi).unwrap();
    assert_eq!(table.columns, ["x1", "psi"]);
    assert_eq!(table.rows.len(), 128);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let out = dir.path().join("r.json");
    std::fs::write(
        &cfg,
        "command = \"simulate\"\nseed = 5\n[kernel]\nsteps = [{ offset = [1], prob = 0.25 }, { offset = [-1], prob = 0.25 }, { offset = [2], prob = 0.25 }, { offset = [-2], prob = 0.25 }]\n[simulate]\nn = [64]\nreplicates = 10\n",
    )
    .unwrap();
    let (code, _, err) = run(&["--config", p(&cfg), "--seed", "6", "--output", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let v = read_json(&out);
    assert_eq!(v["seed"], 6);
    assert_eq!(v["config"]["simulate"]["replicates"], 10);
    assert_eq!(v["config"]["workers"], 1);
    assert_eq!(v["config"]["scenery"]["family"], "gaussian");
    let (code, _, _) = run(&["--config", p(&cfg), "tail", "--n", "10", "--b", "0.1"]);
    assert_eq!(code, 2, "config and command line disagree on the command");
}

#[test]
fn plot_tables_have_stable_columns() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("rt.csv");
    let (code, _, err) = run(&[
        "rate-table", "--regime", "large", "--d", "1", "--u", "0.5", "--n", "20,40,80", "--method", "naive",
        "--replicates", "2000", "--plot", p(&plot),
    ]);
    assert_eq!(code, 0, "{err}");
    let t = PlotTable::read(&plot).unwrap();
    assert_eq!(t.columns, ["n", "rate_normalized", "prediction", "stderr"]);
    assert_eq!(t.rows.len(), 3);
    assert!(t.rows.iter().all(|r| r[2].is_empty()));

    let plot = dir.path().join("box.csv");
    let (code, _, err) = run(&["box-study", "--R", "2,4", "--delta", "0.25", "--restarts", "1", "--plot", p(&plot)]);
    assert_eq!(code, 0, "{err}");
    let t = PlotTable::read(&plot).unwrap();
    assert_eq!(t.columns, ["R", "delta", "bc", "value"]);
    assert_eq!(t.rows.len(), 4);
    assert_eq!(t.rows[0][2], "dirichlet");

    let plot = dir.path().join("spec.csv");
    let (code, out, err) = run(&["spectral-check", "--alphas", "4,8", "--T", "4", "--m", "128", "--plot", p(&plot)]);
    assert_eq!(code, 0, "{err}");
    let t = PlotTable::read(&plot).unwrap();
    assert_eq!(t.columns, ["alpha", "n", "value", "lattice_eig", "continuum_eig"]);
    assert_eq!(t.rows[1][1], "256");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["result"]["continuum_eig"].as_f64().unwrap() > 1.0);
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["solve", "--help"]).0, 0);
}
