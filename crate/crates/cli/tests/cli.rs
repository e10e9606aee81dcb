use std::path::Path;
use std::process::Command;

fn ppmx(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ppmx")).args(args).output().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn simulation_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = ppmx(&["simulate", "recurrent", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["events.csv", "subjects.csv", "truth.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn invalid_discount_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "ngg.sigma = 1.5\n").unwrap();
    let out = ppmx(&["simulate", "appendix-e", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ngg.sigma"));
}
