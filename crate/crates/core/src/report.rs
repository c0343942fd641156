//! Run configuration, the end-to-end pipeline, and report rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conformal::{
    conformalize, empirical_coverage, CalibrationResult, ConformalOutput, ScoreMethod,
};
use crate::data::{
    load_dataset, load_schema, split_calibration_test, ColumnKind, Dataset, SplitPair,
};
use crate::error::{Error, Result};
use crate::mining::{
    beam_search_with_floor, filter_and_rank, Direction, LambdaBase, MiningParams, Subgroup,
};
use crate::predictor::{
    fit_quantile_regressor, fit_softmax_classifier, load_external_predictions, ClassifierConfig,
    PredictionBundle, QuantileConfig, Task,
};

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`
/// so they survive JSON.
pub mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, got `{other}`"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Text,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "text" => Ok(OutputFormat::Text),
            other => Err(Error::InvalidParameter(format!(
                "unknown format `{other}` (json, csv, text)"
            ))),
        }
    }
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
            OutputFormat::Text => "text",
        }
    }
}

/// Which mining passes to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionChoice {
    Maximize,
    Minimize,
    Absolute,
    #[default]
    Both,
}

impl FromStr for DirectionChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" => Ok(DirectionChoice::Maximize),
            "minimize" => Ok(DirectionChoice::Minimize),
            "absolute" => Ok(DirectionChoice::Absolute),
            "both" => Ok(DirectionChoice::Both),
            other => Err(Error::InvalidParameter(format!(
                "unknown direction `{other}` (maximize, minimize, absolute, both)"
            ))),
        }
    }
}

impl DirectionChoice {
    pub fn directions(self) -> Vec<Direction> {
        match self {
            DirectionChoice::Maximize => vec![Direction::Maximize],
            DirectionChoice::Minimize => vec![Direction::Minimize],
            DirectionChoice::Absolute => vec![Direction::Absolute],
            DirectionChoice::Both => vec![Direction::Maximize, Direction::Minimize],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub format: OutputFormat,
    pub path: Option<PathBuf>,
    pub emit_diagnostics: bool,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub schema_path: PathBuf,
    pub predictions_path: Option<PathBuf>,
    pub task: Task,
    pub alpha: f64,
    pub score_method: ScoreMethod,
    pub calib_fraction: f64,
    pub seed: u64,
    pub direction: DirectionChoice,
    pub mining: MiningParams,
    pub classifier: ClassifierConfig,
    pub quantile: QuantileConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// A config with every default filled in.
    pub fn new(
        dataset_path: impl Into<PathBuf>,
        schema_path: impl Into<PathBuf>,
        task: Task,
    ) -> Self {
        RunConfig {
            dataset_path: dataset_path.into(),
            schema_path: schema_path.into(),
            predictions_path: None,
            task,
            alpha: 0.1,
            score_method: default_method(task),
            calib_fraction: 0.5,
            seed: 0,
            direction: DirectionChoice::Both,
            mining: MiningParams::default(),
            classifier: ClassifierConfig::default(),
            quantile: QuantileConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.score_method.check_task(self.task)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha {} not in (0,1)",
                self.alpha
            )));
        }
        if !(self.calib_fraction > 0.0 && self.calib_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "calib_fraction {} not in (0,1)",
                self.calib_fraction
            )));
        }
        if self.output.emit_diagnostics && self.output.path.is_none() {
            return Err(Error::InvalidParameter(
                "emit_diagnostics needs an output path".into(),
            ));
        }
        self.mining.validate()
    }
}

pub fn default_method(task: Task) -> ScoreMethod {
    match task {
        Task::Classification => ScoreMethod::Aps,
        Task::Regression => ScoreMethod::Cqr,
    }
}

/// `sha256:<hex>` over the byte length (u64, little endian) followed by the
/// canonical CSV: fields trimmed, comma separated, `\n` line endings.
pub fn dataset_fingerprint(csv_bytes: &[u8]) -> Result<String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .flexible(true)
        .from_writer(Vec::new());
    for record in rdr.records() {
        wtr.write_record(&record?)?;
    }
    let canonical = wtr
        .into_inner()
        .map_err(|e| Error::Report(format!("fingerprint: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update((canonical.len() as u64).to_le_bytes());
    hasher.update(&canonical);
    Ok(format!("sha256:{}", hex::encode(hasher.finalize())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub dataset_fingerprint: String,
    pub n_records: usize,
    /// Records on the calibration side of the first split.
    pub n_calibration_side: usize,
    pub n_test: usize,
    /// Baseline training records; zero with external predictions.
    pub n_train: usize,
    /// Records whose scores set the threshold.
    pub n_calibration_scores: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub rank: usize,
    pub description: String,
    pub conditions: Vec<String>,
    pub size: usize,
    pub aul: f64,
    pub raul: f64,
}

impl ReportEntry {
    fn from_subgroup(rank: usize, s: &Subgroup) -> Self {
        ReportEntry {
            rank,
            description: s.description.to_string(),
            conditions: s
                .description
                .conditions()
                .iter()
                .map(ToString::to_string)
                .collect(),
            size: s.size,
            aul: s.aul,
            raul: s.quality,
        }
    }

    pub fn text_description(&self) -> String {
        self.conditions.join(" and ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub direction: Direction,
    pub min_size: usize,
    pub subgroups: Vec<ReportEntry>,
}

/// Wall-clock seconds per stage. Not serialized, so reports stay
/// byte-identical across runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timing {
    pub load: f64,
    pub predict: f64,
    pub calibrate: f64,
    pub mine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest: Manifest,
    pub calibration: CalibrationResult,
    pub coverage: f64,
    pub global_aul: f64,
    pub results: Vec<DirectionResult>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub timing: Timing,
}

/// Output of the stages up to and including target generation.
#[derive(Clone, Debug)]
pub struct CalibrationRun {
    pub manifest: Manifest,
    pub test: Dataset,
    pub output: ConformalOutput,
    pub coverage: f64,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

fn check_label(dataset: &Dataset, task: Task) -> Result<()> {
    let label = dataset.schema().label();
    let expected = match task {
        Task::Classification => ColumnKind::LabelClass,
        Task::Regression => ColumnKind::LabelReal,
    };
    if label.kind != expected {
        return Err(Error::InvalidParameter(format!(
            "{} task needs a {} column, `{}` is {}",
            task.as_str(),
            expected.as_str(),
            label.name,
            label.kind.as_str()
        )));
    }
    Ok(())
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Loads, splits, predicts, calibrates and generates targets.
pub fn run_calibration(config: &RunConfig) -> Result<CalibrationRun> {
    config.validate().map_err(|e| e.stage("config"))?;
    let mut warnings = Vec::new();
    let mut timing = Timing::default();

    let t = Instant::now();
    let (dataset, fingerprint) = (|| {
        let schema = load_schema(&config.schema_path)?;
        let dataset = load_dataset(&config.dataset_path, &schema)?;
        check_label(&dataset, config.task)?;
        let bytes =
            fs::read(&config.dataset_path).map_err(|e| Error::io(&config.dataset_path, e))?;
        Ok((dataset, dataset_fingerprint(&bytes)?))
    })()
    .map_err(|e: Error| e.stage("load"))?;
    let split = split_calibration_test(&dataset, config.calib_fraction, config.seed)
        .map_err(|e| e.stage("split"))?;
    timing.load = seconds_since(t);

    let t = Instant::now();
    let (bundle, scoring, n_train) =
        predict(config, &dataset, &split, &mut warnings).map_err(|e| e.stage("predict"))?;
    timing.predict = seconds_since(t);

    let t = Instant::now();
    let output = conformalize(&bundle, &scoring, config.score_method, config.alpha)
        .map_err(|e| e.stage("calibrate"))?;
    let coverage =
        empirical_coverage(&output.regions, &output.truths).map_err(|e| e.stage("calibrate"))?;
    if output.calibration.q_hat.is_infinite() {
        warnings.push(format!(
            "calibration set of {} is too small for alpha {}: every set is the full label set",
            output.calibration.n_calib, config.alpha
        ));
    }
    timing.calibrate = seconds_since(t);

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        dataset_fingerprint: fingerprint,
        n_records: dataset.len(),
        n_calibration_side: split.calibration.len(),
        n_test: split.test.len(),
        n_train,
        n_calibration_scores: output.calibration.n_calib,
    };
    Ok(CalibrationRun {
        manifest,
        test: split.test,
        output,
        coverage,
        warnings,
        timing,
    })
}

/// Returns the prediction bundle, the split used for scoring, and the
/// number of baseline training records.
fn predict(
    config: &RunConfig,
    dataset: &Dataset,
    split: &SplitPair,
    warnings: &mut Vec<String>,
) -> Result<(PredictionBundle, SplitPair, usize)> {
    if let Some(path) = &config.predictions_path {
        let bundle = load_external_predictions(path, config.task)?;
        bundle.check_aligned(dataset)?;
        return Ok((bundle, split.clone(), 0));
    }
    // The baseline never sees the records its scores are calibrated on.
    let inner = split_calibration_test(&split.calibration, 0.5, config.seed.wrapping_add(1))?;
    let train = &inner.calibration;
    let calibrate = inner.test;
    let (bundle, unseen) = match config.task {
        Task::Classification => {
            let model = fit_softmax_classifier(train, &config.classifier)?;
            let (a, ua) = model.predict_dataset(&calibrate)?;
            let (b, ub) = model.predict_dataset(&split.test)?;
            (a.concat(b)?, ua + ub)
        }
        Task::Regression => {
            let half = config.alpha / 2.0;
            let model = fit_quantile_regressor(train, half, 1.0 - half, &config.quantile)?;
            let (a, ua) = model.predict_dataset(&calibrate)?;
            let (b, ub) = model.predict_dataset(&split.test)?;
            (a.concat(b)?, ua + ub)
        }
    };
    if unseen > 0 {
        warnings.push(format!(
            "{unseen} nominal values were not seen while training the baseline and encode as all-zero"
        ));
    }
    let n_train = train.len();
    let scoring = SplitPair {
        calibration: calibrate,
        test: split.test.clone(),
        seed: split.seed,
    };
    Ok((bundle, scoring, n_train))
}

/// The full pipeline: calibration followed by one mining pass per direction.
pub fn run_pipeline(config: &RunConfig) -> Result<Report> {
    let run = run_calibration(config)?;
    mine_targets(config, &run)
}

/// The mining passes over an existing calibration run.
pub fn mine_targets(config: &RunConfig, run: &CalibrationRun) -> Result<Report> {
    let manifest = run.manifest.clone();
    let mut warnings = run.warnings.clone();
    let mut timing = run.timing.clone();

    let t = Instant::now();
    let targets = &run.output.targets;
    let global_aul = targets.r.iter().sum::<f64>() / targets.r.len() as f64;
    let reference = match config.mining.lambda_base {
        LambdaBase::Test => manifest.n_test,
        LambdaBase::Full => manifest.n_records,
    };
    let mut results = Vec::new();
    for direction in config.direction.directions() {
        let params = MiningParams {
            direction,
            ..config.mining
        };
        let min_size = params.min_size(reference);
        let found = beam_search_with_floor(&run.test, targets, &params, min_size)
            .map_err(|e| e.stage("mine"))?;
        let kept = filter_and_rank(found, direction, &params);
        if kept.is_empty() {
            warnings.push(format!(
                "{} run: no subgroup meets the size floor of {min_size} records",
                direction.as_str()
            ));
        }
        results.push(DirectionResult {
            direction,
            min_size,
            subgroups: kept
                .iter()
                .enumerate()
                .map(|(i, s)| ReportEntry::from_subgroup(i + 1, s))
                .collect(),
        });
    }
    timing.mine = seconds_since(t);

    Ok(Report {
        manifest,
        calibration: run.output.calibration.clone(),
        coverage: run.coverage,
        global_aul,
        results,
        warnings,
        timing,
    })
}

/// JSON with object keys in sorted order and a trailing newline.
pub fn report_json(report: &Report) -> Result<String> {
    let value = serde_json::to_value(report).map_err(|e| Error::Report(e.to_string()))?;
    let mut text =
        serde_json::to_string_pretty(&value).map_err(|e| Error::Report(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn parse_report_json(text: &str) -> Result<Report> {
    serde_json::from_str(text).map_err(|e| Error::Report(format!("not a report: {e}")))
}

/// One row per subgroup: `rank,direction,description,size,aul,raul`.
pub fn report_csv(report: &Report) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(["rank", "direction", "description", "size", "aul", "raul"])?;
    for result in &report.results {
        for e in &result.subgroups {
            wtr.write_record([
                e.rank.to_string(),
                result.direction.as_str().to_string(),
                e.description.clone(),
                e.size.to_string(),
                e.aul.to_string(),
                e.raul.to_string(),
            ])?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Aligned plain-text tables, one per direction.
pub fn report_text(report: &Report) -> String {
    let m = &report.manifest;
    let mut out = String::new();
    let _ = writeln!(out, "dataset      {}", m.config.dataset_path.display());
    let _ = writeln!(out, "fingerprint  {}", m.dataset_fingerprint);
    let _ = writeln!(
        out,
        "records      {} (test {}, calibration scores {})",
        m.n_records, m.n_test, m.n_calibration_scores
    );
    let _ = writeln!(
        out,
        "method       {} at alpha {}, q_hat {}",
        report.calibration.method.as_str(),
        report.calibration.alpha,
        fmt_fixed(report.calibration.q_hat)
    );
    let _ = writeln!(out, "coverage     {}", fmt_fixed(report.coverage));
    let _ = writeln!(out, "global AUL   {}", fmt_fixed(report.global_aul));

    for result in &report.results {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{} (min size {})",
            result.direction.as_str(),
            result.min_size
        );
        let header = ["rank", "description", "size", "AUL", "RAUL"];
        let rows: Vec<[String; 5]> = result
            .subgroups
            .iter()
            .map(|e| {
                [
                    e.rank.to_string(),
                    e.text_description(),
                    e.size.to_string(),
                    fmt_fixed(e.aul),
                    fmt_fixed(e.raul),
                ]
            })
            .collect();
        if rows.is_empty() {
            let _ = writeln!(out, "  (no subgroups)");
            continue;
        }
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: [&str; 5]| {
            let mut s = String::from(" ");
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                // description left aligned, numbers right aligned
                if i == 1 {
                    let _ = write!(s, " {cell:<w$}");
                } else {
                    let _ = write!(s, " {cell:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(header));
        for row in &rows {
            let _ = writeln!(out, "{}", line(row.each_ref().map(String::as_str)));
        }
    }
    if !report.warnings.is_empty() {
        let _ = writeln!(out);
        for w in &report.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
    }
    out
}

fn fmt_fixed(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        v.to_string()
    }
}

pub fn render(report: &Report, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => report_json(report),
        OutputFormat::Csv => report_csv(report),
        OutputFormat::Text => Ok(report_text(report)),
    }
}

/// Writes the rendered report to `path`, or returns it for stdout when
/// `path` is `None`.
pub fn emit_report(
    report: &Report,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<Option<String>> {
    let text = render(report, format)?;
    match path {
        Some(p) => {
            write_file(p, text.as_bytes())?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

/// Per-record `record_id,r,covered` rows.
pub fn diagnostics_csv(output: &ConformalOutput) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(["record_id", "r", "covered"])?;
    let t = &output.targets;
    for ((id, r), covered) in t.record_ids.iter().zip(&t.r).zip(&t.covered) {
        wtr.write_record([
            id.to_string(),
            r.to_string(),
            u8::from(*covered).to_string(),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Coverage recomputed from a diagnostics file.
pub fn coverage_from_diagnostics(text: &str) -> Result<f64> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let (mut hits, mut total) = (0usize, 0usize);
    for record in rdr.records() {
        let record = record?;
        match record.get(2) {
            Some("1") => hits += 1,
            Some("0") => {}
            other => return Err(Error::Report(format!("bad covered flag {other:?}"))),
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::Report("empty diagnostics".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// `{path}.diagnostics.csv` next to the report.
pub fn diagnostics_path(report_path: &Path) -> PathBuf {
    let mut s = report_path.as_os_str().to_owned();
    s.push(".diagnostics.csv");
    PathBuf::from(s)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)
        .map_err(|e| Error::Report(format!("cannot write {}: {e}", path.display())))
}
