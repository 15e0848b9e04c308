use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mlcoda::sim::{generate, DgpParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlcoda"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Writes a simulated three-part data set with an extra covariate.
fn write_data(dir: &Path) -> PathBuf {
    let sim = generate(&DgpParams::default(), 15, 4, 3, 3).unwrap();
    let mut text = String::from("id,sleep,active,sedentary,y,age\n");
    for (i, r) in sim.table.rows().iter().enumerate() {
        let p = r.composition.parts();
        let id = &sim.table.cluster_ids()[r.cluster];
        text.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            p[0],
            p[1],
            p[2],
            r.outcome.unwrap(),
            20 + (i * 7) % 40
        ));
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn fit_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "fit", "--data", data, "--id", "id", "--outcome", "y", "--parts", "sleep,active,sedentary",
        "--total", "1440", "--chains", "2", "--warmup", "200", "--iter", "200", "--out", out,
    ]
}

#[test]
fn help_lists_subcommands() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["transform", "fit", "substitute", "simulate", "diagnose"] {
        assert!(text.contains(sub));
    }
    assert_eq!(code(&run(&["fit", "--help"])), 0);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let data = data.to_str().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let base = ["fit", "--data", data, "--id", "id", "--parts", "sleep,active,sedentary", "--out", out];

    let mut missing_outcome = base.to_vec();
    missing_outcome.extend(["--total", "1440"]);
    assert_eq!(code(&run(&missing_outcome)), 2);

    let mut negative = base.to_vec();
    negative.extend(["--outcome", "y", "--total", "-1"]);
    assert_eq!(code(&run(&negative)), 2);

    let mut unknown = base.to_vec();
    unknown.extend(["--outcome", "y", "--total", "1440", "--frobnicate"]);
    assert_eq!(code(&run(&unknown)), 2);

    let missing_file = ["transform", "--data", "/nonexistent.csv", "--id", "id", "--parts", "a,b", "--total", "1", "--out", out];
    assert_eq!(code(&run(&missing_file)), 2);
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let out = dir.path().join("o");
    let o = run(&[
        "transform", "--data", data.to_str().unwrap(), "--id", "id", "--parts", "sleep,nope,sedentary",
        "--total", "1440", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn transform_output_re_ingests_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let args = |input: &Path, out: &Path| {
        run(&[
            "transform", "--data", input.to_str().unwrap(), "--id", "id", "--outcome", "y",
            "--parts", "sleep,active,sedentary", "--covariates", "age", "--total", "1440",
            "--out", out.to_str().unwrap(),
        ])
    };
    let first = dir.path().join("t1");
    assert_eq!(code(&args(&data, &first)), 0);
    let coords = first.join("coordinates.csv");
    let text = std::fs::read_to_string(&coords).unwrap();
    assert!(text.starts_with("id,sleep,active,sedentary,y,age,z1,z2,z_b1,z_b2,z_w1,z_w2\n"));
    assert_eq!(text.lines().count(), 61);

    let second = dir.path().join("t2");
    assert_eq!(code(&args(&coords, &second)), 0);
    assert_eq!(text, std::fs::read_to_string(second.join("coordinates.csv")).unwrap());
    assert!(first.join("manifest.json").is_file());
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "data = {:?}\nid = \"id\"\nparts = [\"sleep\", \"active\", \"sedentary\"]\ntotal = 1440\nseed = 9\n",
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("t");
    let o = run(&["transform", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["data"]["parts"][1], "active");

    std::fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    assert_eq!(code(&run(&["transform", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn manifest_hash_tracks_config_changes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let hash = |extra: &[&str], out: &str| {
        let out = dir.path().join(out);
        let mut args = vec![
            "transform", "--data", data.to_str().unwrap(), "--id", "id", "--parts", "sleep,active,sedentary",
            "--total", "1440",
        ];
        args.extend(extra);
        args.extend(["--out", out.to_str().unwrap()]);
        assert_eq!(code(&run(&args)), 0);
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    let a = hash(&[], "h");
    assert_eq!(a, hash(&["--seed", "1"], "h"));
    assert_ne!(a, hash(&["--seed", "2"], "h"));
    assert_ne!(a, hash(&["--outcome", "y"], "h"));
    assert_eq!(a.len(), 64);
}

#[test]
fn fit_substitute_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let data = data.to_str().unwrap();
    let f1 = dir.path().join("f1");
    let f2 = dir.path().join("f2");
    for f in [&f1, &f2] {
        let o = run(&fit_args(data, f.to_str().unwrap()));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let draws = std::fs::read(f1.join("draws.csv")).unwrap();
    assert_eq!(draws, std::fs::read(f2.join("draws.csv")).unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["model"]["parts"][2], "sedentary");
    assert!(summary["diagnostics"]["parameters"].as_array().unwrap().len() > 5);

    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    for s in [&s1, &s2] {
        let o = run(&["substitute", "--fit", f1.to_str().unwrap(), "--out", s.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let table = std::fs::read_to_string(s1.join("substitution.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 3 * 2 * 30);
    assert_eq!(table, std::fs::read_to_string(s2.join("substitution.csv")).unwrap());

    let o = run(&[
        "substitute", "--fit", f1.to_str().unwrap(), "--level", "within", "--t-min", "5", "--t-max", "15",
        "--t-step", "5", "--out", s1.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let table = std::fs::read_to_string(s1.join("substitution.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 2 * 3);
    assert!(table.lines().skip(1).all(|l| l.starts_with("within,")));

    let o = run(&["substitute", "--fit", f1.to_str().unwrap(), "--ref", "file", "--out", s1.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    // 400 draws cannot reach an ESS above 400, so the thresholds are breached
    let d = dir.path().join("d");
    let o = run(&["diagnose", "--fit", f1.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("sd_cluster"));
    assert!(d.join("diagnostics.json").is_file());
}

#[test]
fn substitute_with_a_reference_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let f = dir.path().join("f");
    assert_eq!(code(&run(&fit_args(data.to_str().unwrap(), f.to_str().unwrap()))), 0);
    let r = dir.path().join("ref.csv");
    std::fs::write(&r, "sleep,active,sedentary\n480,300,660\n").unwrap();
    let s = dir.path().join("s");
    let o = run(&[
        "substitute", "--fit", f.to_str().unwrap(), "--ref", "file", "--ref-file", r.to_str().unwrap(),
        "--level", "between", "--t-max", "3", "--out", s.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(s.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["provenance"], "user-supplied");
    assert_eq!(m["reference"][0], 480.0);
}

#[test]
fn simulate_writes_study_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.toml");
    std::fs::write(
        &study,
        "seed = 3\nn_sim = 2\n[grid]\nclusters = [12]\ncluster_sizes = [3]\nparts = [3]\nvariances = [[1.0, 1.0]]\n[sampler]\nchains = 2\nwarmup = 150\niter = 150\n",
    )
    .unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--study", study.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["replications.csv", "metrics.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["study"]["n_sim"], 2);

    let conflict = run(&["simulate", "--study", study.to_str().unwrap(), "--paper-scale", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&conflict), 2);
}
