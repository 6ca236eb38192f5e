//! End-to-end tests of the binary: exit codes, error messages with config
//! line numbers, output file layout, JSON and CSV contents, flag overrides,
//! and determinism across worker counts.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

struct RunOutput {
    code: i32,
    stdout: String,
    stderr: String,
}

fn plastibite(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> RunOutput {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_plastibite"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    RunOutput {
        code: out.status.code().expect("no signal"),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

const SMALL_SUPER: &str = "[params]\ndelta = 10.0\neta = 3.0\na_dagger = 10.0\nt_end = 20.0\n\
     [mortality]\nfamily = blowup\nmu0 = 0.05\nkappa = 1.0\n\
     [fertility]\nbeta0 = 0.5\n\
     [sim]\nn_x = 16\nn_a = 40\n";

#[test]
fn spectral_json_reports_grid_tolerance_and_regime() {
    let work = tempfile::tempdir().unwrap();
    write_config(work.path(), "run.ini", SMALL_SUPER);
    let run = plastibite(work.path(), &["spectral", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    assert!(run.stdout.starts_with("lambda0 = "), "stdout: {}", run.stdout);

    let doc = read_json(&work.path().join("out/spectral.json"));
    assert_eq!(doc["n_x"], 16);
    assert_eq!(doc["n_a"], 40);
    assert_eq!(doc["tol_zero"], 1e-6);
    assert_eq!(doc["regime"], "supercritical");
    assert!(doc["lambda0"].as_f64().unwrap() > 0.0);
    assert!(doc["gamma_residual"].as_f64().unwrap() < 1e-8);
    assert!(doc["gap_epsilon"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["phi"].as_array().unwrap().len(), 16);
    assert_eq!(doc["psi"].as_array().unwrap().len(), 16);
    assert_eq!(doc["delta"], 10.0);
}

#[test]
fn vanishing_fertility_fails_validation_by_name() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.replace("beta0 = 0.5", "beta0 = 0.0");
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["spectral", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 1, "stderr: {}", run.stderr);
    assert!(run.stderr.contains("(J2)"), "stderr: {}", run.stderr);
}

#[test]
fn negative_diffusion_error_cites_the_config_line() {
    let work = tempfile::tempdir().unwrap();
    write_config(
        work.path(),
        "bad.ini",
        "[params]\ndelta = -1.0\n[fertility]\nbeta0 = 0.5\n",
    );
    let run = plastibite(work.path(), &["spectral", "--config", "bad.ini"], &[]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("bad.ini:2"), "stderr: {}", run.stderr);
}

#[test]
fn unknown_key_error_cites_the_config_line() {
    let work = tempfile::tempdir().unwrap();
    write_config(
        work.path(),
        "typo.ini",
        "[params]\nfrobnicate = 1\n[fertility]\nbeta0 = 0.5\n",
    );
    let run = plastibite(work.path(), &["spectral", "--config", "typo.ini"], &[]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("typo.ini:2"), "stderr: {}", run.stderr);
    assert!(run.stderr.contains("frobnicate"), "stderr: {}", run.stderr);
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let work = tempfile::tempdir().unwrap();
    let run = plastibite(work.path(), &["spectral"], &[]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("--config"), "stderr: {}", run.stderr);
}

#[test]
fn missing_config_file_reports_the_path() {
    let work = tempfile::tempdir().unwrap();
    let run = plastibite(work.path(), &["spectral", "--config", "absent.ini"], &[]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("absent.ini"), "stderr: {}", run.stderr);
}

#[test]
fn help_exits_zero() {
    let work = tempfile::tempdir().unwrap();
    let run = plastibite(work.path(), &["--help"], &[]);
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("spectral"));
    assert!(run.stdout.contains("simulate"));
}

#[test]
fn overflowing_simulation_exits_with_the_numerical_code() {
    let work = tempfile::tempdir().unwrap();
    // The density starts near the representable ceiling and the regime is
    // supercritical, so the field itself overflows within a few lifespans.
    let text = "[params]\ndelta = 10.0\neta = 3.0\na_dagger = 10.0\nt_end = 30.0\n\
         [mortality]\nfamily = blowup\nmu0 = 0.05\nkappa = 1.0\n\
         [fertility]\nbeta0 = 0.5\n\
         [initial]\nshape = uniform\nvalue = 1e307\n\
         [sim]\nn_x = 16\nn_a = 40\n";
    write_config(work.path(), "blowout.ini", text);
    let run = plastibite(work.path(), &["simulate", "--config", "blowout.ini"], &[]);
    assert_eq!(run.code, 2, "stderr: {}", run.stderr);
    assert!(run.stderr.starts_with("error: "), "stderr: {}", run.stderr);
}

#[test]
fn sparse_recording_keeps_first_and_final_snapshots() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.replace("t_end = 20.0", "t_end = 5.0")
        + "record_every = 1000\n";
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["simulate", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    // dt = a_dagger / n_a = 0.25, so t_end = 5 is exactly 20 steps.
    let out = work.path().join("out");
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("snapshot_"))
        .collect();
    names.sort();
    assert_eq!(names, ["snapshot_000000.csv", "snapshot_000020.csv"]);

    let trajectory = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = trajectory.lines().collect();
    assert_eq!(lines[0], "t,l2_norm,total_pop");
    assert_eq!(lines.len(), 22);
    let last: Vec<f64> = lines[21].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 5.0);
    assert!(last[1] > 0.0 && last[2] > 0.0);
}

#[test]
fn zero_initial_data_stays_extinct() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.replace("t_end = 20.0", "t_end = 5.0")
        + "[initial]\nshape = uniform\nvalue = 0.0\n";
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["simulate", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    let trajectory = std::fs::read_to_string(work.path().join("out/trajectory.csv")).unwrap();
    for line in trajectory.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols[1], 0.0, "l2 norm must stay zero: {line}");
        assert_eq!(cols[2], 0.0, "population must stay zero: {line}");
    }
}

#[test]
fn single_point_sweep_agrees_with_spectral_bit_for_bit() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.to_string()
        + "[sweep]\naxis1 = eta\naxis1_min = 3.0\naxis1_points = 1\n";
    write_config(work.path(), "run.ini", &text);

    let spectral = plastibite(
        work.path(),
        &["spectral", "--config", "run.ini", "--out", "spec"],
        &[],
    );
    assert_eq!(spectral.code, 0, "stderr: {}", spectral.stderr);
    let sweep = plastibite(
        work.path(),
        &["sweep", "--config", "run.ini", "--out", "sw"],
        &[],
    );
    assert_eq!(sweep.code, 0, "stderr: {}", sweep.stderr);
    assert_eq!(sweep.stdout, "swept 1 points\n");

    let lambda_spec = read_json(&work.path().join("spec/spectral.json"))["lambda0"]
        .as_f64()
        .unwrap();
    let csv = std::fs::read_to_string(work.path().join("sw/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eta,lambda0,regime");
    assert_eq!(lines.len(), 2);
    let cols: Vec<&str> = lines[1].split(',').collect();
    let lambda_sweep: f64 = cols[1].parse().unwrap();
    assert_eq!(
        lambda_spec.to_bits(),
        lambda_sweep.to_bits(),
        "spectral {lambda_spec:e} vs sweep {lambda_sweep:e}"
    );
    assert_eq!(cols[2], "supercritical");

    let point = read_json(&work.path().join("sw/sweep_point_00000.json"));
    assert_eq!(point["index"], 0);
    assert_eq!(point["eta"], 3.0);
    assert_eq!(point["task"], "lambda0");
    assert_eq!(point["lambda0"].as_f64().unwrap().to_bits(), lambda_spec.to_bits());
}

#[test]
fn fertility_scale_sweep_orders_the_regimes() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.replace("beta0 = 0.5", "beta0 = 0.35")
        + "[sweep]\ntask = regime\naxis1 = fertility_scale\n\
           axis1_min = 0.5\naxis1_max = 1.5\naxis1_points = 5\n";
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["sweep", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    let csv = std::fs::read_to_string(work.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fertility_scale,lambda0,regime");
    assert_eq!(lines.len(), 6);

    let rank = |name: &str| match name {
        "subcritical" => 0,
        "critical" => 1,
        "supercritical" => 2,
        other => panic!("unknown regime {other}"),
    };
    let mut ranks = Vec::new();
    let mut lambdas = Vec::new();
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        lambdas.push(cols[1].parse::<f64>().unwrap());
        ranks.push(rank(cols[2]));
    }
    assert_eq!(ranks.first(), Some(&0), "lowest fertility must be subcritical");
    assert_eq!(ranks.last(), Some(&2), "highest fertility must be supercritical");
    assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "regimes out of order: {ranks:?}");
    assert!(
        lambdas.windows(2).all(|w| w[0] < w[1]),
        "growth bound must increase with fertility: {lambdas:?}"
    );
}

#[test]
fn eta_sweep_writes_a_json_file_per_point() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.to_string()
        + "[sweep]\naxis1 = eta\naxis1_min = 1.0\naxis1_max = 6.0\naxis1_points = 4\n";
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["sweep", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);

    let csv = std::fs::read_to_string(work.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for index in 0..4 {
        let doc = read_json(&work.path().join(format!("out/sweep_point_{index:05}.json")));
        assert_eq!(doc["index"], index);
        assert!(doc["eta"].as_f64().unwrap() >= 1.0);
        assert!(doc["lambda0"].as_f64().unwrap().is_finite());
        assert!(doc["gamma_residual"].as_f64().unwrap() < 1e-8);
        assert_eq!(doc["tol_zero"], 1e-6);
    }
}

#[test]
fn sweep_outputs_are_identical_across_worker_counts() {
    let base = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.to_string()
        + "[sweep]\naxis1 = eta\naxis1_min = 2.0\naxis1_max = 4.0\naxis1_points = 2\n\
           axis2 = fertility_scale\naxis2_min = 0.8\naxis2_max = 1.2\naxis2_points = 3\n";
    write_config(base.path(), "run.ini", &text);

    let mut dirs = Vec::new();
    for (out_name, threads) in [("many", "4"), ("one", "1")] {
        let run = plastibite(
            base.path(),
            &["sweep", "--config", "run.ini", "--out", out_name],
            &[("PLASTIBITE_THREADS", threads)],
        );
        assert_eq!(run.code, 0, "stderr: {}", run.stderr);
        assert_eq!(run.stdout, "swept 6 points\n");
        dirs.push(base.path().join(out_name));
    }

    let list = |dir: &Path| {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    };
    let names = list(&dirs[0]);
    assert_eq!(names, list(&dirs[1]));
    assert_eq!(names.len(), 7, "six point files plus the index: {names:?}");
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        let b = std::fs::read(dirs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between worker counts");
    }
}

#[test]
fn render_emits_an_svg_heatmap_for_a_snapshot() {
    let work = tempfile::tempdir().unwrap();
    let text = SMALL_SUPER.replace("t_end = 20.0", "t_end = 5.0")
        + "record_every = 10\n[initial]\nshape = gaussian\na_center = 2.0\nx_center = 6.0\n";
    write_config(work.path(), "run.ini", &text);
    let sim = plastibite(work.path(), &["simulate", "--config", "run.ini"], &[]);
    assert_eq!(sim.code, 0, "stderr: {}", sim.stderr);

    let render = plastibite(
        work.path(),
        &[
            "render",
            "--config",
            "run.ini",
            "--input",
            "out/snapshot_000020.csv",
            "--out",
            "plots",
        ],
        &[],
    );
    assert_eq!(render.code, 0, "stderr: {}", render.stderr);

    let svg = std::fs::read_to_string(work.path().join("plots/snapshot_000020.svg")).unwrap();
    assert!(svg.starts_with("<svg"), "not an svg: {}", &svg[..40.min(svg.len())]);
    assert!(svg.contains("<rect"));
    assert!(svg.contains("min "));
    assert!(svg.contains("max "));
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn critical_certificate_matches_the_profile_band_minimum() {
    let work = tempfile::tempdir().unwrap();
    let text = "[params]\ndelta = 10.0\neta = 3.0\na_dagger = 10.0\n\
         [mortality]\nfamily = blowup\nmu0 = 0.05\nkappa = 1.0\n\
         [fertility]\nbeta0 = 0.35\n\
         [sim]\nn_x = 16\nn_a = 40\n\
         [steady]\nc = 1.0\ncriticalize = true\nhorizon = 30.0\n";
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["steady", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    assert!(run.stdout.starts_with("critical steady state"), "stdout: {}", run.stdout);

    let cert = read_json(&work.path().join("out/certificate.json"));
    assert_eq!(cert["regime"], "critical");
    assert_eq!(cert["c"], 1.0);
    assert_eq!(cert["a1"], 9.0);
    assert_eq!(cert["horizon"], 30.0);
    assert!(cert["lambda0"].as_f64().unwrap().abs() < 1e-6);
    assert!(cert["residual"].as_f64().unwrap() < 1e-3);
    assert!(cert["drift"].as_f64().unwrap() < 1e-2);
    let scale = cert["fertility_scale"].as_f64().unwrap();
    assert!(scale.is_finite() && scale > 0.0);
    let rho0 = cert["rho0"].as_f64().unwrap();
    assert!(rho0 > 0.0);

    // The certificate's floor is the profile minimum over ages up to a1.
    let profile = std::fs::read_to_string(work.path().join("out/steady_profile.csv")).unwrap();
    let da = 10.0 / 40.0;
    let mut band_min = f64::INFINITY;
    for (k, line) in profile.lines().skip(1).enumerate() {
        if (k as f64 + 0.5) * da > 9.0 {
            break;
        }
        for v in line.split(',') {
            band_min = band_min.min(v.parse::<f64>().unwrap());
        }
    }
    assert_eq!(
        band_min.to_bits(),
        rho0.to_bits(),
        "band minimum {band_min:e} vs certified {rho0:e}"
    );
}

#[test]
fn grid_override_flag_changes_the_reported_grid() {
    let work = tempfile::tempdir().unwrap();
    write_config(work.path(), "run.ini", SMALL_SUPER);
    let run = plastibite(
        work.path(),
        &["spectral", "--config", "run.ini", "--grid", "8", "20"],
        &[],
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let doc = read_json(&work.path().join("out/spectral.json"));
    assert_eq!(doc["n_x"], 8);
    assert_eq!(doc["n_a"], 20);
}

#[test]
fn tol_zero_flag_widens_the_critical_band() {
    let work = tempfile::tempdir().unwrap();
    write_config(work.path(), "run.ini", SMALL_SUPER);
    let run = plastibite(
        work.path(),
        &["spectral", "--config", "run.ini", "--tol-zero", "10.0"],
        &[],
    );
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    let doc = read_json(&work.path().join("out/spectral.json"));
    assert_eq!(doc["tol_zero"], 10.0);
    assert_eq!(doc["regime"], "critical");
}

#[test]
fn shipped_sample_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("ini") {
            continue;
        }
        seen += 1;
        let text = std::fs::read_to_string(&path).unwrap();
        let run = plastibite_cli::config::parse_config_str(
            &text,
            path.file_name().unwrap().to_str().unwrap(),
            &dir,
        )
        .unwrap_or_else(|e| panic!("{} failed to parse: {e}", path.display()));
        assert!(run.warnings.is_empty(), "{} warns: {:?}", path.display(), run.warnings);
    }
    assert_eq!(seen, 3, "expected the three shipped samples in {}", dir.display());
}

#[test]
fn constant_mortality_warns_but_still_runs() {
    let work = tempfile::tempdir().unwrap();
    let text = "[params]\ndelta = 1.0\neta = 3.0\na_dagger = 10.0\n\
         [mortality]\nfamily = constant\nmu0 = 0.1\n\
         [fertility]\nbeta0 = 0.5\n\
         [sim]\nn_x = 16\nn_a = 40\n";
    write_config(work.path(), "run.ini", &text);
    let run = plastibite(work.path(), &["spectral", "--config", "run.ini"], &[]);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    assert!(run.stderr.contains("warning"), "stderr: {}", run.stderr);
    assert!(run.stderr.contains("(J1)"), "stderr: {}", run.stderr);
}
