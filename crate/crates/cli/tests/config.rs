use std::fs;

use cemm::conformal::ScoreMethod;
use cemm::mining::LambdaBase;
use cemm::report::{DirectionChoice, OutputFormat};
use cemm_cli::{parse_config, CliError, Invocation};

fn mine_config(args: &[&str]) -> Result<cemm::report::RunConfig, CliError> {
    let mut tokens = vec!["cemm", "mine"];
    tokens.extend_from_slice(args);
    match parse_config(tokens)? {
        Invocation::Mine(c) => Ok(c),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn defaults_are_filled_in() {
    let c = mine_config(&[
        "--data",
        "d.csv",
        "--schema",
        "s.txt",
        "--task",
        "classification",
        "--alpha",
        "0.1",
    ])
    .unwrap();
    assert_eq!(c.alpha, 0.1);
    assert_eq!(c.score_method, ScoreMethod::Aps);
    assert_eq!(c.calib_fraction, 0.5);
    assert_eq!(c.seed, 0);
    assert_eq!(c.direction, DirectionChoice::Both);
    assert_eq!(c.mining.depth, 2);
    assert_eq!(c.mining.beam_width, 20);
    assert_eq!(c.mining.lambda_min_pct, 5.0);
    assert_eq!(c.mining.bins, 9);
    assert_eq!(c.mining.top_k, 3);
    assert_eq!(c.mining.lambda_base, LambdaBase::Test);
    assert_eq!(c.output.format, OutputFormat::Json);
    assert!(c.output.path.is_none());
    assert!(c.predictions_path.is_none());

    let r = mine_config(&[
        "--data",
        "d.csv",
        "--schema",
        "s.txt",
        "--task",
        "regression",
    ])
    .unwrap();
    assert_eq!(r.score_method, ScoreMethod::Cqr);
}

#[test]
fn method_task_mismatch_is_rejected() {
    let err = mine_config(&[
        "--data",
        "d.csv",
        "--schema",
        "s.txt",
        "--task",
        "regression",
        "--score-method",
        "aps",
    ])
    .unwrap_err();
    assert!(err.to_string().contains("method/task mismatch"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "data = \"d.csv\"\nschema = \"s.txt\"\ntask = \"classification\"\nalpha = 0.2\nseed = 9\nlambda_base = \"full\"\n\n[classifier]\nepochs = 50\n",
    )
    .unwrap();
    let p = path.to_str().unwrap();
    let c = mine_config(&["--config", p, "--alpha", "0.05"]).unwrap();
    assert_eq!(c.alpha, 0.05);
    assert_eq!(c.seed, 9);
    assert_eq!(c.mining.lambda_base, LambdaBase::Full);
    assert_eq!(c.classifier.epochs, 50);

    let c = mine_config(&["--config", p]).unwrap();
    assert_eq!(c.alpha, 0.2);
}

#[test]
fn bad_inputs_are_reported() {
    assert!(matches!(mine_config(&["--bogus"]), Err(CliError::Usage(_))));
    assert!(matches!(
        mine_config(&["--schema", "s", "--task", "regression"]),
        Err(CliError::Missing("data"))
    ));
    assert!(matches!(
        mine_config(&["--config", "/nonexistent/run.toml"]),
        Err(CliError::ConfigRead { .. })
    ));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "alpah = 0.1\n").unwrap();
    assert!(matches!(
        mine_config(&["--config", path.to_str().unwrap()]),
        Err(CliError::ConfigParse { .. })
    ));
    for alpha in ["0", "1", "1.5"] {
        let err = mine_config(&[
            "--data",
            "d",
            "--schema",
            "s",
            "--task",
            "regression",
            "--alpha",
            alpha,
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 1, "{alpha}");
    }
}

#[test]
fn report_subcommand_takes_a_path() {
    match parse_config(["cemm", "report", "r.json", "--format", "csv"]).unwrap() {
        Invocation::Report(args) => {
            assert_eq!(args.input.to_str(), Some("r.json"));
            assert_eq!(args.format, OutputFormat::Csv);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        parse_config([
            "cemm",
            "calibrate",
            "--data",
            "d",
            "--schema",
            "s",
            "--task",
            "classification"
        ])
        .unwrap(),
        Invocation::Calibrate(_)
    ));
}
