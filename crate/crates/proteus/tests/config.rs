use std::fs;

use proteus::config::*;

#[test]
fn empty_document_is_the_default_run() {
    let cfg = RunConfig::parse("{}", "t").unwrap();
    assert_eq!(cfg, RunConfig::default());
    cfg.validate().unwrap();
    assert_eq!(cfg.system.n_lambda, 55);
    assert_eq!(cfg.network().unwrap().il.n_gis(), 32);
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [r#"{"bogus": 1}"#, r#"{"system": {"n_lamda": 55}}"#, r#"{"link": {"models": {"p_max": 20}}}"#] {
        match RunConfig::parse(text, "cfg.json") {
            Err(ConfigError::Parse { path, msg }) => {
                assert_eq!(path, "cfg.json");
                assert!(msg.contains("unknown field"), "{msg}");
            }
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn cross_section_consistency() {
    let cfg = RunConfig::parse(r#"{"system": {"n_lambda": 40}}"#, "t").unwrap();
    let err = cfg.validate().unwrap_err();
    assert!(err.to_string().contains("n_lambda"), "{err}");
    let cfg = RunConfig::parse(r#"{"traffic": {"packet_size_bits": 256}}"#, "t").unwrap();
    assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    let cfg = RunConfig::parse(r#"{"traffic": {"injection_rate": 0.0}}"#, "t").unwrap();
    assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
}

#[test]
fn partial_sections_keep_other_defaults() {
    let cfg = RunConfig::parse(r#"{"traffic": {"seed": 9}, "metrics": {"laser": {"wall_plug_efficiency": 0.2, "coupler_loss_db": 1.0}}}"#, "t")
        .unwrap();
    assert_eq!(cfg.traffic.seed, 9);
    assert_eq!(cfg.traffic.injection_rate, RunConfig::default().traffic.injection_rate);
    assert_eq!(cfg.metrics.laser.wall_plug_efficiency, 0.2);
    assert_eq!(cfg.search, RunConfig::default().search);
}

// Everything touching the seed variable lives in this one test so parallel
// tests never observe it.
#[test]
fn load_resolves_paths_and_applies_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("il.csv"), "n_gis,2\n0,1.5\n2.5,0\n").unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, r#"{"loss": {"il_matrix": "il.csv"}, "traffic": {"seed": 4}}"#).unwrap();

    std::env::remove_var(SEED_ENV);
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.traffic.seed, 4);
    assert_eq!(cfg.loss.il_matrix.as_deref(), Some(dir.path().join("il.csv").as_path()));
    assert_eq!(cfg.network().unwrap().il.max_entry(), 2.5);

    std::env::set_var(SEED_ENV, "77");
    assert_eq!(RunConfig::load(&path).unwrap().traffic.seed, 77);
    std::env::set_var(SEED_ENV, "seventy");
    assert!(matches!(RunConfig::load(&path), Err(ConfigError::Seed(_))));
    std::env::remove_var(SEED_ENV);

    assert!(matches!(RunConfig::load(&dir.path().join("absent.json")), Err(ConfigError::Read { .. })));
}

#[test]
fn round_trips_through_json() {
    let cfg = RunConfig::default();
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    assert_eq!(RunConfig::parse(&text, "t").unwrap(), cfg);
}
