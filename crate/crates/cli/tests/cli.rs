#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::process::Command as Proc;

use rand::{Rng, SeedableRng};
use rml_cli::manifest::{Manifest, MANIFEST_NAME};
use rml_cli::snapshot::{Payload, Snapshot, SnapshotError, VERSION};
use rml_core::{Grid, MetricField, ScalarField};

fn rml(args: &[&str]) -> (i32, String) {
    let out = Proc::new(env!("CARGO_BIN_EXE_rml"))
        .args(args)
        .env_remove("RML_THREADS")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn manifest_text(dir: &Path) -> String {
    std::fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()
}

fn random_metric(grid: Grid, seed: u64) -> MetricField {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let mut data = vec![0.0; grid.cell_count() * n * n];
    for c in 0..grid.cell_count() {
        for i in 0..n {
            for j in i..n {
                let v: f64 = if i == j {
                    rng.gen_range(0.5..2.0)
                } else {
                    rng.gen_range(-0.1..0.1)
                };
                data[(c * n + i) * n + j] = v;
                data[(c * n + j) * n + i] = v;
            }
        }
    }
    MetricField::from_components(grid, data).unwrap()
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    for n in [2, 3] {
        let grid = Grid::new(n, &vec![8; n], &vec![0.3; n]).unwrap();
        let g = random_metric(grid, 11 + n as u64);
        let snap = Snapshot::metric(0.125, g.clone());
        let bytes = snap.to_bytes();
        let tri = n * (n + 1) / 2;
        let header = 4 + 4 + 4 + 16 * n + 8;
        assert_eq!(bytes.len(), header + 8 * grid.cell_count() * tri);
        let back = Snapshot::from_bytes(&bytes).unwrap();
        assert_eq!(back, snap);
        let m = back.into_metric().unwrap();
        for c in 0..grid.cell_count() {
            let a = m.at(c);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(a[i][j].to_bits(), a[j][i].to_bits());
                }
            }
        }
        assert_eq!(m.data(), g.data());
    }
}

#[test]
fn scalar_snapshots_round_trip() {
    let grid = Grid::cubic(2, 8, 1.0).unwrap();
    let s = ScalarField::from_fn(grid, |x| x[0] * 3.0 - x[1]);
    let snap = Snapshot {
        t: 2.5,
        payload: Payload::Scalar(s),
    };
    assert_eq!(Snapshot::from_bytes(&snap.to_bytes()).unwrap(), snap);
}

#[test]
fn snapshot_header_errors() {
    let grid = Grid::cubic(2, 8, 1.0).unwrap();
    let bytes = Snapshot::metric(0.0, MetricField::identity(grid)).to_bytes();
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(
        Snapshot::from_bytes(&bumped),
        Err(SnapshotError::UnsupportedVersion(v)) if v == VERSION + 1
    ));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        Snapshot::from_bytes(&magic),
        Err(SnapshotError::BadMagic)
    ));
    assert!(matches!(
        Snapshot::from_bytes(&bytes[..bytes.len() - 8]),
        Err(SnapshotError::Truncated(_))
    ));
    assert!(matches!(
        Snapshot::from_bytes(&bytes[..10]),
        Err(SnapshotError::Truncated(_))
    ));
}

const FLAT: &str = "seed = 3\n[grid]\ndim = 2\ncells = 16\n\n[flow]\nt_end = 0.05\nsnapshot_times = [0.01, 0.02]\n";

#[test]
fn flat_smoke_run_has_constant_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FLAT);
    let out = tmp.path().join("out");
    let (code, err) = rml(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let mut lines = diag.lines();
    assert_eq!(
        lines.next(),
        Some("t,dt,lambda_min,lambda_max,sup_d1,sup_d2,sup_d3,sup_d4")
    );
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(&v[2..], &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
    let m = Manifest::load(&out).unwrap().unwrap();
    assert!(m.verify(&out).unwrap().is_empty());
    for k in 0..4 {
        assert!(m.files.contains_key(&format!("snapshots/snap_{k:04}.rdfs")));
    }
    assert!(m.columns.contains_key("diagnostics.csv"));
}

const BUMP: &str = "seed = 5\n[grid]\ndim = 2\ncells = 24\n\n[initial]\nkind = \"conformal_bump\"\namplitude = 0.1\n\n[flow]\nt_end = 0.04\nsnapshot_times = [0.01, 0.02, 0.03]\n";

#[test]
fn identical_runs_give_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BUMP);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        rml(&["evolve", "--config", &cfg, "--out", a.to_str().unwrap()]).0,
        0
    );
    assert_eq!(
        rml(&[
            "evolve",
            "--config",
            &cfg,
            "--out",
            b.to_str().unwrap(),
            "--threads",
            "1"
        ])
        .0,
        0
    );
    assert_eq!(manifest_text(&a), manifest_text(&b));
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BUMP);
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(rml(&["evolve", "--config", &cfg, "--out", o]).0, 0);
    let full = manifest_text(&out);
    std::fs::remove_file(out.join("snapshots/snap_0004.rdfs")).unwrap();
    std::fs::remove_file(out.join("snapshots/snap_0003.rdfs")).unwrap();
    let (code, err) = rml(&["evolve", "--config", &cfg, "--out", o, "--resume"]);
    assert_eq!(code, 0, "{err}");
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("resumed_from = 2e-2"), "{report}");
    let resumed = manifest_text(&out);
    let strip = |m: &str| {
        m.lines()
            .filter(|l| !l.ends_with(" report.txt"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&full), strip(&resumed));
}

#[test]
fn corrupted_snapshot_on_resume_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BUMP);
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(rml(&["evolve", "--config", &cfg, "--out", o]).0, 0);
    let p = out.join("snapshots/snap_0002.rdfs");
    let mut bytes = std::fs::read(&p).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    let (code, err) = rml(&["evolve", "--config", &cfg, "--out", o, "--resume"]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &FLAT.replace("t_end = 0.05", "t_end = 0.05\ncfl = 1.5"),
    );
    let (code, err) = rml(&[
        "evolve",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("flow.cfl") && err.contains("line 8"), "{err}");
    let missing = tmp.path().join("nope.toml");
    assert_eq!(rml(&["evolve", "--config", missing.to_str().unwrap()]).0, 4);
}

#[test]
fn numerical_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let segment = CONE.replace(
        "[codim]\n",
        "[codim]\nmask = { kind = \"segment\", from = [1.0, 3.0], to = [5.0, 3.0] }\n",
    );
    let cfg = write_config(tmp.path(), &segment);
    let out = tmp.path().join("out");
    let (code, err) = rml(&["rdist", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("codimension"), "{err}");
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("status = failed"));
}

const CONE: &str = r#"seed = 1
[grid]
dim = 2
cells = 48

[initial]
kind = "hoelder_cone"
amplitude = -0.3
exponent = 0.5
centers = [[3.0, 3.0]]

[flow]
t_end = 0.02
snapshot_times = [0.005, 0.01, 0.015]
store_every = 2

[morrey]
p = 2
radii = [0.6, 1.2]

[codim]
epsilons = [0.6, 0.8, 1.0, 1.2]

[curvature]
delta = 1.0
a = -0.01
eps_list = [0.6, 0.8]
test = { kind = "bump", center = [3.0, 3.0], radius = 2.5 }

[monotone]
a = 0.0
test = { kind = "bump", center = [3.0, 3.0], radius = 1.5 }

[kernel]
sources = [[24, 24]]
times = [0.01, 0.02]

[mollify]
indices = [2, 4]
chart_radius = 1.5
overlap = 0.5
"#;

#[test]
fn every_subcommand_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONE);
    for (cmd, artifact) in [
        ("evolve", "convergence.csv"),
        ("morrey", "morrey.csv"),
        ("rdist", "removability.csv"),
        ("codim", "codim.csv"),
        ("monotone", "monotone.csv"),
        ("mollify", "mollify.csv"),
        ("kernelcheck", "kernel.csv"),
    ] {
        let out = tmp.path().join(cmd);
        let (code, err) = rml(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{cmd}: {err}");
        let m = Manifest::load(&out).unwrap().unwrap();
        assert!(m.files.contains_key(artifact), "{cmd}");
        assert!(m.files.contains_key("report.txt"));
    }
}
