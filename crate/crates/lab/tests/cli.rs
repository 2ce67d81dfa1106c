use std::path::Path;
use std::process::Command;

use stochsn::commands::{execute, Command as Cmd};
use stochsn::config::resolve;
use stochsn::io::{read_blocks, read_csv, BlockKind};
use stochsn::manifest::RunManifest;

const SMALL: &[&str] = &[
    "evolve.grid_points=201",
    "evolve.r_max=12",
    "evolve.t_final=0.5",
    "ensemble.trajectories=40",
    "ensemble.t_final=20",
    "ensemble.dt=0.5",
    "ensemble.record_every=4",
    "master.t_final=0.2",
    "master.record_every=10",
];

fn small(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stochsn"))
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn rerun_from_snapshot_is_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = resolve(None, &small(&[])).unwrap();
    let m1 = execute(Cmd::Ensemble, &cfg, a.path(), Some(2)).unwrap();
    // Re-run from the written snapshot with a different thread count.
    let text = std::fs::read_to_string(a.path().join("config.toml")).unwrap();
    let cfg2 = resolve(Some(&text), &[]).unwrap();
    let m2 = execute(Cmd::Ensemble, &cfg2, b.path(), Some(3)).unwrap();
    assert_eq!(m1.input_hash, m2.input_hash);
    assert_eq!(m1.outputs, m2.outputs);
    for f in &m1.outputs {
        assert_eq!(read(a.path(), &f.path), read(b.path(), &f.path), "{}", f.path);
    }
    let back = RunManifest::read(&a.path().join("manifest.json")).unwrap();
    assert_eq!(back.outputs, m1.outputs);
}

#[test]
fn every_output_carries_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolve(None, &small(&["evolve.mode=stochastic_linearized", "evolve.snapshot_every=50"])).unwrap();
    let m = execute(Cmd::Evolve, &cfg, dir.path(), None).unwrap();
    let hash_bytes = hex::decode(&m.input_hash).unwrap();
    for f in &m.outputs {
        let p = dir.path().join(&f.path);
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => assert_eq!(read_csv(&p).unwrap().meta("manifest_hash"), Some(m.input_hash.as_str())),
            Some("json") => assert!(std::fs::read_to_string(&p).unwrap().contains(&m.input_hash)),
            Some("bin") => {
                for b in read_blocks(&p).unwrap() {
                    assert_eq!(b.run_hash.as_slice(), hash_bytes.as_slice());
                }
            }
            _ => panic!("unexpected output {}", f.path),
        }
    }
    let noise = read_blocks(&dir.path().join("noise.bin")).unwrap();
    assert_eq!(noise[0].kind, BlockKind::Noise);
    assert_eq!(noise[0].rows, 100);
    let snaps = read_blocks(&dir.path().join("snapshots.bin")).unwrap();
    assert_eq!(snaps.len(), 3);
    assert_eq!(snaps[0].cols, 2 * 201);
}

#[test]
fn seed_changes_hash_and_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m1 = execute(Cmd::Ensemble, &resolve(None, &small(&[])).unwrap(), a.path(), None).unwrap();
    let m2 = execute(Cmd::Ensemble, &resolve(None, &small(&["seed=2"])).unwrap(), b.path(), None).unwrap();
    assert_ne!(m1.input_hash, m2.input_hash);
    assert_ne!(read(a.path(), "decay.csv"), read(b.path(), "decay.csv"));
}

#[test]
fn binary_writes_schemas_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scales");
    let st =
        bin().args(["scales", "--out-dir"]).arg(&out).args(["--set", "scales.masses=[0.5, 2.0]"]).status().unwrap();
    assert!(st.success());
    let t = read_csv(&out.join("scales.csv")).unwrap();
    assert_eq!(t.column_f64("a_c").unwrap(), [1.0, 8.0, 0.125]);
    assert_eq!(t.column_f64("m_th").unwrap(), [1.0, 1.0, 1.0]);

    let out = dir.path().join("phasevar");
    let st = bin()
        .args(["phasevar", "--seed", "4", "--out-dir"])
        .arg(&out)
        .args(["--set", "phasevar.points=3"])
        .status()
        .unwrap();
    assert!(st.success());
    let t = read_csv(&out.join("phasevar.csv")).unwrap();
    assert_eq!(t.columns, stochsn::commands::PHASEVAR_COLUMNS);
    assert_eq!(t.rows.len(), 9);
    assert_eq!(t.meta("seed"), Some("4"));

    let out = dir.path().join("master");
    let mut args = vec!["master".to_string(), "--out-dir".to_string(), out.display().to_string()];
    for s in small(&[]) {
        args.extend(["--set".to_string(), s]);
    }
    assert!(bin().args(&args).status().unwrap().success());
    let t = read_csv(&out.join("rho.csv")).unwrap();
    assert_eq!(t.columns, ["t", "i", "j", "re", "im"]);
    let d = read_csv(&out.join("master_diag.csv")).unwrap();
    assert_eq!(d.columns, ["t", "trace", "min_eig", "D"]);

    let bad = bin().args(["scales", "--set", "width=0", "--out-dir"]).arg(dir.path().join("bad")).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("width"));
    assert!(!dir.path().join("bad").exists());

    let missing = bin().args(["scales", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // A step far beyond the phase bound of the stepper.
    let st = bin()
        .args(["evolve", "--out-dir"])
        .arg(dir.path())
        .args(["--set", "evolve.mode=sn", "--set", "mass=50", "--set", "evolve.dt=0.5"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(3), "{}", String::from_utf8_lossy(&st.stderr));
}
