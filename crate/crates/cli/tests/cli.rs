use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn vaxmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaxmap")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    out
}

fn simulate_small(dir: &Path, out: &str) {
    ok(vaxmap(
        &["simulate", "--units", "12", "--states", "3", "--waves", "2", "--children-per-cell", "15", "--seed", "3", "--out-dir", out],
        dir,
    ));
}

const FIT_SMALL: [&str; 10] = ["--chains", "2", "--seed", "7", "--warmup", "60", "--draws", "60", "--vaccine", "mcv1"];

/// Fit exit code is 0 or 4 (short runs may not converge); anything else is a failure.
fn fit_small(dir: &Path, data: &str, out: &str) {
    let mut args = vec!["fit", "--data-dir", data, "--out-dir", out];
    args.extend(FIT_SMALL);
    let o = vaxmap(&args, dir);
    assert!(matches!(code(&o), 0 | 4), "stderr: {}", stderr(&o));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(vaxmap(&["simulate", "--units", "50", "--states", "5", "--waves", "4", "--seed", "7", "--out-dir", out], tmp.path()));
    }
    for name in ["adjacency.csv", "states.csv", "records.csv", "truth.json"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("b").join(name)).unwrap(), "{name}");
        assert!(String::from_utf8_lossy(&a).contains("config_hash"), "{name}");
    }
}

#[test]
fn simulate_rejects_infeasible_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vaxmap(&["simulate", "--units", "2", "--states", "5", "--out-dir", "x"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("5 states"), "{}", stderr(&o));
}

#[test]
fn simulate_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(vaxmap(&["simulate", "--out-dir", "d"], tmp.path()));
    assert!(stdout(&o).contains("50 units in 5 states over 4 waves (2003-2018), 8000 children"), "{}", stdout(&o));
    let states = fs::read_to_string(tmp.path().join("d/states.csv")).unwrap();
    assert_eq!(states.lines().filter(|l| !l.starts_with('#')).count(), 51);
}

#[test]
fn index_scores_and_reports_missing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    ok(vaxmap(&["simulate", "--units", "4", "--states", "1", "--waves", "2", "--respondents-per-wave", "300", "--out-dir", "d"], tmp.path()));
    let o = ok(vaxmap(&["index", "--input", "d/responses.csv", "--output", "i1.csv"], tmp.path()));
    ok(vaxmap(&["index", "--input", "d/responses.csv", "--output", "i2.csv"], tmp.path()));
    let first = fs::read(tmp.path().join("i1.csv")).unwrap();
    assert_eq!(first, fs::read(tmp.path().join("i2.csv")).unwrap());
    assert!(String::from_utf8_lossy(&first).lines().nth(1).unwrap().ends_with("dm_score,hc_score,dm_class,hc_class"));
    assert!(stdout(&o).contains("2003") && stdout(&o).contains("2008"));

    let raw = fs::read_to_string(tmp.path().join("d/responses.csv")).unwrap();
    fs::write(tmp.path().join("broken.csv"), raw.replacen("survey_year", "year", 1)).unwrap();
    let o = vaxmap(&["index", "--input", "broken.csv", "--output", "i3.csv"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("survey_year"), "{}", stderr(&o));
}

#[test]
fn fit_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "d");
    fit_small(tmp.path(), "d", "f1");
    fit_small(tmp.path(), "d", "f2");
    let a = fs::read(tmp.path().join("f1/draws.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("f2/draws.csv")).unwrap());
    assert!(!a.is_empty());
}

#[test]
fn predict_requires_fit_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "d");
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let o = vaxmap(&["predict", "--fit-dir", "empty", "--data-dir", "d"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no fit artifacts"), "{}", stderr(&o));
}

#[test]
fn predict_detects_config_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "d");
    fit_small(tmp.path(), "d", "f");
    // The fit's own effective config is accepted.
    ok(vaxmap(&["predict", "--fit-dir", "f", "--data-dir", "d", "--config", "f/config.json", "--out-dir", "p"], tmp.path()));
    fs::write(tmp.path().join("other.json"), r#"{"sampler": {"chains": 2, "seed": 8}}"#).unwrap();
    let o = vaxmap(&["predict", "--fit-dir", "f", "--data-dir", "d", "--config", "other.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("configuration mismatch"), "{}", stderr(&o));
    let o = vaxmap(&["validate", "--data-dir", "d", "--pred-dir", "p", "--out-dir", "v", "--config", "other.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("configuration mismatch"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path(), "d");
    fs::write(tmp.path().join("bad.json"), r#"{"sampler": {"chain": 2}}"#).unwrap();
    let o = vaxmap(&["fit", "--data-dir", "d", "--vaccine", "bcg", "--config", "bad.json", "--out-dir", "f"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("chain"), "{}", stderr(&o));
}

#[test]
fn maps_are_rendered_from_geojson() {
    let tmp = tempfile::tempdir().unwrap();
    ok(vaxmap(
        &["simulate", "--units", "9", "--states", "2", "--waves", "2", "--children-per-cell", "10", "--geojson", "--out-dir", "d"],
        tmp.path(),
    ));
    fit_small(tmp.path(), "d", "f");
    ok(vaxmap(&["predict", "--fit-dir", "f", "--data-dir", "d", "--geojson", "d/units.geojson", "--svg"], tmp.path()));
    let joined: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("f/predictions.geojson")).unwrap()).unwrap();
    let props = &joined["features"][0]["properties"];
    assert!(props["pi_mean_2003"].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v)));
    assert!(props["gamma_h_hc_sd_2008"].as_f64().is_some_and(|v| v > 0.0));
    let maps: Vec<_> = fs::read_dir(tmp.path().join("f/maps")).unwrap().collect();
    assert_eq!(maps.len(), 2 * 5);
    let svg = fs::read_to_string(tmp.path().join("f/maps/mcv1_2003_pi.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.matches("<path").count() == 9);
}

#[test]
fn end_to_end_desk_run() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    ok(vaxmap(&["simulate", "--seed", "7", "--out-dir", "d"], tmp.path()));
    ok(vaxmap(&["fit", "--data-dir", "d", "--vaccine", "dpt_complete", "--out-dir", "f"], tmp.path()));
    ok(vaxmap(&["predict", "--fit-dir", "f", "--data-dir", "d"], tmp.path()));
    ok(vaxmap(&["validate", "--data-dir", "d", "--pred-dir", "f", "--out-dir", "v"], tmp.path()));
    let elapsed = start.elapsed().as_secs_f64();
    let corr = fs::read_to_string(tmp.path().join("v/correlation.csv")).unwrap();
    let pooled = corr.lines().find(|l| l.contains(",pooled,")).unwrap();
    let r: f64 = pooled.rsplit(',').next().unwrap().parse().unwrap();
    println!("desk run: pooled r {r:.3}, {elapsed:.1} s");
    assert!(r >= 0.8, "pooled r {r}");
    assert!(elapsed < 600.0, "{elapsed} s");
}
