//! End-to-end runs of the experiment harness.

use lpcontract::harness::{run, write_outputs, ExperimentSpec, Status};
use lpcontract::Error;

const SMALL_DOUBLE_WELL: &str = r#"
kind = "contraction"
seed = 7
p = [1.0, 2.0]
times = [0.0, 1.0, 5.0]
x0 = [4.0]
y0 = [-4.0]
prefactor_pairs = 2

[model]
family = "double_well"

[certificate]
c = 0.0625
eta = 2.8284271247461903
theta = 3.0

[sim]
dt = 0.002
horizon = 5.0
n_paths = 256
record_every = 0.1

[transport]
n_assignment = 128
batches = 2
"#;

#[test]
fn same_seed_same_report() {
    let spec = ExperimentSpec::from_toml(SMALL_DOUBLE_WELL).unwrap();
    let a = run(&spec).unwrap().report.to_json().unwrap();
    let b = run(&spec).unwrap().report.to_json().unwrap();
    assert_eq!(a, b);
    let mut other = spec.clone();
    other.seed += 1;
    assert_ne!(a, run(&other).unwrap().report.to_json().unwrap());
}

#[test]
fn prefactor_validation_rows() {
    let spec = ExperimentSpec::from_toml(SMALL_DOUBLE_WELL).unwrap();
    let out = run(&spec).unwrap();
    let rows: Vec<_> = out.report.rows_for("prefactor").collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.pass && r.estimate > 0.0 && r.estimate <= 1.0), "{rows:?}");
    assert!(out.report.all_pass());
    assert!(out.report.metadata.derived["lambda"] > 0.0);
}

#[test]
fn outputs_are_written() {
    let spec = ExperimentSpec::from_toml(SMALL_DOUBLE_WELL).unwrap();
    let out = run(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    for f in ["report.csv", "report.json", "psi.csv", "certificate.json"] {
        assert!(dir.path().join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("check,t,p,estimate,estimator,ci_low,ci_high,bound,relation,pass,status\n"));
    assert!(out.report.rows.iter().all(|r| r.status != Status::Fail));
}

#[test]
fn invalid_certificate_is_rejected() {
    // κ ≤ −10 r³ is false for the double well at r = 1
    let text = SMALL_DOUBLE_WELL.replace("c = 0.0625", "c = 10.0").replace("eta = 2.8284271247461903", "eta = 1.0");
    let spec = ExperimentSpec::from_toml(&text).unwrap();
    assert!(matches!(run(&spec), Err(Error::CertificateInvalid(_))));
}

#[test]
fn unknown_keys_are_config_errors() {
    let text = format!("{SMALL_DOUBLE_WELL}\nbogus = 1\n");
    assert!(matches!(ExperimentSpec::from_toml(&text), Err(Error::Config(_))));
}
