use stochsn::config::{apply_override, resolve, Config, ModeChoice};
use stochsn::LabError;

#[test]
fn defaults_match_unit_params() {
    let cfg = resolve(None, &[]).unwrap();
    assert_eq!(cfg, Config::default());
    let p = cfg.params();
    assert_eq!((p.mass, p.width, p.hbar, p.g), (1.0, 1.0, 1.0, 1.0));
    assert!((p.criterion_constant - std::f64::consts::PI.powi(2)).abs() < 1e-15);
}

#[test]
fn file_then_overrides() {
    let text = "mass = 2.0\nG = 0.5\n[evolve]\nmode = \"sn\"\ndt = 0.01\n";
    let cfg = resolve(Some(text), &["evolve.dt=0.002".into(), "seed=9".into()]).unwrap();
    assert_eq!(cfg.mass, 2.0);
    assert_eq!(cfg.g, 0.5);
    assert_eq!(cfg.evolve.mode, ModeChoice::Sn);
    assert_eq!(cfg.evolve.dt, 0.002);
    assert_eq!(cfg.seed, 9);
}

#[test]
fn string_override_without_quotes() {
    let cfg = resolve(None, &["noise.temporal=exponential".into(), "noise.tau_c=3".into()]).unwrap();
    assert_eq!(cfg.noise.tau_c, 3.0);
    assert!(matches!(cfg.noise.temporal_mode().unwrap(), stochsn_core::noise::TemporalMode::ExponentialMemory { .. }));
}

#[test]
fn roundtrip_through_toml() {
    let cfg = resolve(None, &["ensemble.probes=[4.0, 6.0, 9.0]".into(), "master.structure=completed".into()]).unwrap();
    let again = resolve(Some(&cfg.to_toml()), &[]).unwrap();
    assert_eq!(cfg, again);
}

fn config_error(text: Option<&str>, overrides: &[&str]) -> String {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    match resolve(text, &o) {
        Err(e @ LabError::Config(_)) => {
            assert_eq!(e.exit_code(), 2);
            e.to_string()
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn rejects_bad_input_before_running() {
    assert!(config_error(Some("mas = 1.0"), &[]).contains("mas"));
    assert!(config_error(None, &["mass=-1"]).contains("mass"));
    assert!(config_error(None, &["evolve.dt=0"]).contains("evolve.dt"));
    assert!(config_error(None, &["ensemble.pair=[0, 0]"]).contains("ensemble.pair"));
    assert!(config_error(None, &["ensemble.mode=free"]).contains("ensemble.mode"));
    assert!(config_error(None, &["sweep.key=hbar"]).contains("sweep.key"));
    assert!(config_error(None, &["evolve.grid_points=3"]).contains("grid"));
    assert!(config_error(None, &["noise.geometry=cube"]).contains("cube"));
    assert!(config_error(None, &["novalue"]).contains("key=value"));
}

#[test]
fn override_through_scalar_is_an_error() {
    let mut t = toml::Table::new();
    apply_override(&mut t, "mass=1.0").unwrap();
    assert!(apply_override(&mut t, "mass.x=1.0").is_err());
}
