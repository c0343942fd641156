use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use cemm::report::{
    diagnostics_csv, diagnostics_path, emit_report, mine_targets, parse_report_json,
    run_calibration, write_file, CalibrationRun, OutputFormat, Report, RunConfig,
};
use cemm_cli::{parse_config, CliError, Invocation};
use clap::error::ErrorKind;

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e))
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) =>
        {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run() -> Result<(), CliError> {
    match parse_config(std::env::args_os())? {
        Invocation::Mine(config) => mine(&config),
        Invocation::Calibrate(config) => calibrate(&config),
        Invocation::Report(args) => {
            let text = fs::read_to_string(&args.input).map_err(|e| {
                cemm::Error::Report(format!("cannot read {}: {e}", args.input.display()))
            })?;
            let report = parse_report_json(&text)?;
            print_or_write(&report, args.format, args.out.as_deref())
        }
    }
}

fn print_or_write(
    report: &Report,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(text) = emit_report(report, format, path)? {
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(text.as_bytes())
            .map_err(|e| cemm::Error::Report(format!("stdout: {e}")))?;
    }
    Ok(())
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn write_diagnostics(config: &RunConfig, run: &CalibrationRun) -> Result<(), CliError> {
    if let (true, Some(path)) = (config.output.emit_diagnostics, &config.output.path) {
        let target = diagnostics_path(path);
        write_file(&target, diagnostics_csv(&run.output)?.as_bytes())?;
        eprintln!("diagnostics written to {}", target.display());
    }
    Ok(())
}

fn mine(config: &RunConfig) -> Result<(), CliError> {
    let run = run_calibration(config)?;
    write_diagnostics(config, &run)?;
    let report = mine_targets(config, &run)?;
    print_warnings(&report.warnings);
    eprintln!("coverage {}", report.coverage);
    let t = &report.timing;
    eprintln!(
        "timing: load {:.3}s, predict {:.3}s, calibrate {:.3}s, mine {:.3}s",
        t.load, t.predict, t.calibrate, t.mine
    );
    print_or_write(&report, config.output.format, config.output.path.as_deref())
}

fn calibrate(config: &RunConfig) -> Result<(), CliError> {
    let run = run_calibration(config)?;
    print_warnings(&run.warnings);
    eprintln!(
        "q_hat {} from {} calibration scores, coverage {}",
        run.output.calibration.q_hat, run.output.calibration.n_calib, run.coverage
    );
    let csv = diagnostics_csv(&run.output)?;
    match &config.output.path {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => std::io::stdout()
            .lock()
            .write_all(csv.as_bytes())
            .map_err(|e| cemm::Error::Report(format!("stdout: {e}")))?,
    }
    Ok(())
}
