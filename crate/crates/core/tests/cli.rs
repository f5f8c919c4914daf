use std::path::Path;
use std::process::{Command, Output};

use delaydmd::analysis::{ExperimentReport, VariantName};
use delaydmd::snapshots::load;

fn delaydmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delaydmd"))
        .args(args)
        .env_remove("DELAYDMD_SEED")
        .output()
        .expect("binary runs")
}

fn small_signal<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run",
        "--problem",
        "signal-2d",
        "--nx",
        "12",
        "--ny",
        "10",
        "--out",
        out,
    ];
    v.extend_from_slice(extra);
    v
}

fn read_report(dir: &Path) -> ExperimentReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn generate_minimal_signal() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("sig");
    let o = delaydmd(&[
        "generate",
        "--problem",
        "signal-2d",
        "--nt",
        "2",
        "--out",
        stem.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let x = load::<f64>(&stem).unwrap();
    assert_eq!((x.m(), x.n()), (10_000, 2));
    assert!(dir.path().join("sig.meta.json").exists());
}

#[test]
fn generate_double_gyre_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("gyre");
    let o = delaydmd(&[
        "generate",
        "--problem",
        "double-gyre",
        "--out",
        stem.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let x = load::<f64>(&stem).unwrap();
    assert_eq!((x.m(), x.n()), (10_000, 200));
    assert_eq!(x.grid().unwrap().nx, 100);
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let stem = dir.path().join(name);
        let o = delaydmd(&[
            "generate",
            "--problem",
            "signal-2d",
            "--nx",
            "8",
            "--ny",
            "8",
            "--noise",
            "0.1",
            "--seed",
            seed,
            "--out",
            stem.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        files.push(std::fs::read(dir.path().join(format!("{name}.csv"))).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let stem = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_delaydmd"));
        cmd.args([
            "generate",
            "--problem",
            "signal-2d",
            "--nx",
            "6",
            "--ny",
            "6",
            "--noise",
            "0.1",
        ])
        .args(["--out", stem.to_str().unwrap()])
        .env_remove("DELAYDMD_SEED");
        if let Some(e) = env {
            cmd.env("DELAYDMD_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read(dir.path().join(format!("{name}.csv"))).unwrap()
    };
    let env_seed = run("env", Some("11"), None);
    assert_eq!(env_seed, run("flag", None, Some("11")));
    assert_eq!(run("both", Some("3"), Some("11")), env_seed);
}

#[test]
fn run_writes_all_artifacts_and_spectrum_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = delaydmd(&small_signal(
        out.to_str().unwrap(),
        &["--seed", "7", "--emit-modes", "0,1", "--save-modes"],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out);
    assert_eq!(report.variants.len(), 5);
    let counts: Vec<usize> = report.variants.iter().map(|v| v.measurements).collect();
    assert_eq!(counts, vec![120, 100, 50, 50, 50]);
    for v in VariantName::ALL {
        for prefix in ["errors", "spectrum", "model", "modes", "mode"] {
            let name = match prefix {
                "model" => format!("model_{v}.json"),
                "mode" => format!("mode_{v}_1_abs.csv"),
                _ => format!("{prefix}_{v}.csv"),
            };
            assert!(out.join(&name).exists(), "missing {name}");
        }
    }
    let errors = std::fs::read_to_string(out.join("errors_classic.csv")).unwrap();
    assert!(errors.starts_with("time,rel_error\n"));
    assert_eq!(errors.lines().count(), 1 + 80);
    let spectrum = std::fs::read_to_string(out.join("spectrum_krylov.csv")).unwrap();
    assert!(spectrum.starts_with("re_mu,im_mu,re_omega,im_omega,amp,circle\n"));
    let field = std::fs::read_to_string(out.join("mode_classic_0_real.csv")).unwrap();
    assert_eq!(field.lines().count(), 10);
    assert_eq!(field.lines().next().unwrap().split(',').count(), 12);

    let o = delaydmd(&[
        "spectrum",
        out.join("model_gaussian.json").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1..].iter().all(|l| l.ends_with(" on")), "{text}");
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = delaydmd(&small_signal(
            out.to_str().unwrap(),
            &["--seed", "21", "--noise", "1e-3", "--rank", "fixed:4"],
        ));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(read_report(&out).without_timing());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn single_variant_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    let o = delaydmd(&small_signal(
        out.to_str().unwrap(),
        &["--variants", "classic"],
    ));
    assert!(o.status.success());
    let report = read_report(&out);
    assert_eq!(report.variants.len(), 1);
    assert_eq!(report.variants[0].variant, VariantName::Classic);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    assert_eq!(
        delaydmd(&small_signal(out, &["--variants", ""]))
            .status
            .code(),
        Some(64)
    );
    assert_eq!(delaydmd(&["run"]).status.code(), Some(64));
    assert_eq!(delaydmd(&["bogus"]).status.code(), Some(64));
    assert_eq!(
        delaydmd(&["spectrum", "/nonexistent/model.json"])
            .status
            .code(),
        Some(74)
    );

    let failing = [
        "--variants",
        "classic,sampling",
        "--measurements",
        "sampling=1",
        "--rank",
        "fixed:4",
    ];
    let o = delaydmd(&small_signal(out, &failing));
    assert_eq!(o.status.code(), Some(0));
    let report = read_report(Path::new(out));
    assert!(report
        .variant(VariantName::Sampling)
        .unwrap()
        .error
        .as_deref()
        .unwrap()
        .contains("aq >= r"));

    let mut strict = failing.to_vec();
    strict.push("--strict");
    assert_eq!(delaydmd(&small_signal(out, &strict)).status.code(), Some(2));
}

#[test]
fn spectrum_of_static_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(
        &path,
        r#"{"variant":"classic","rank":1,"q":1,"base_m":1,"mode_rows":1,"dt":0.1,"t0":0.0,
            "eigenvalues":[{"re":1.0,"im":0.0}],"exponents":[{"re":0.0,"im":0.0}],
            "amplitudes":[{"re":2.0,"im":0.0}]}"#,
    )
    .unwrap();
    let o = delaydmd(&["spectrum", path.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let line = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(fields[3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(fields[5], "on");

    std::fs::write(&path, "{not json").unwrap();
    assert_eq!(
        delaydmd(&["spectrum", path.to_str().unwrap()])
            .status
            .code(),
        Some(74)
    );
}
