//! Typed tabular datasets: schema files, CSV loading, calibration/test
//! splitting and numeric cut points for the subgroup miner.
//!
//! A schema file lists one `name,kind` pair per line. Kinds are `binary`,
//! `nominal`, `numeric`, `label_class`, `label_real` and `prediction`
//! (carried along but never used as a descriptor). Ordinal attributes are
//! declared `numeric`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Binary,
    Nominal,
    Numeric,
    LabelClass,
    LabelReal,
    Prediction,
}

impl ColumnKind {
    pub fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "binary" => ColumnKind::Binary,
            "nominal" => ColumnKind::Nominal,
            "numeric" => ColumnKind::Numeric,
            "label_class" => ColumnKind::LabelClass,
            "label_real" => ColumnKind::LabelReal,
            "prediction" => ColumnKind::Prediction,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Binary => "binary",
            ColumnKind::Nominal => "nominal",
            ColumnKind::Numeric => "numeric",
            ColumnKind::LabelClass => "label_class",
            ColumnKind::LabelReal => "label_real",
            ColumnKind::Prediction => "prediction",
        }
    }

    pub fn is_label(self) -> bool {
        matches!(self, ColumnKind::LabelClass | ColumnKind::LabelReal)
    }

    /// Whether the column may appear in subgroup descriptions and model inputs.
    pub fn is_descriptor(self) -> bool {
        matches!(
            self,
            ColumnKind::Binary | ColumnKind::Nominal | ColumnKind::Numeric
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Observed value set for nominal and class-label columns, filled at load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new<S: Into<String>>(
        columns: impl IntoIterator<Item = (S, ColumnKind)>,
    ) -> Result<Self> {
        let columns: Vec<Column> = columns
            .into_iter()
            .map(|(name, kind)| Column {
                name: name.into(),
                kind,
                levels: Vec::new(),
            })
            .collect();
        let mut seen = BTreeSet::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::Schema {
                    line: i + 1,
                    msg: "empty column name".into(),
                });
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema {
                    line: i + 1,
                    msg: format!("duplicate column name `{}`", c.name),
                });
            }
        }
        let labels = columns.iter().filter(|c| c.kind.is_label()).count();
        match labels {
            1 => Ok(Schema { columns }),
            0 => Err(Error::Schema {
                line: 0,
                msg: "no label column (need exactly one label_class or label_real)".into(),
            }),
            _ => Err(Error::Schema {
                line: 0,
                msg: "multiple labels".into(),
            }),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cols = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line.rsplit_once(',').ok_or_else(|| Error::Schema {
                line: i + 1,
                msg: format!("expected `name,kind`, got `{line}`"),
            })?;
            let kind = kind.trim();
            let kind = ColumnKind::parse(kind).ok_or_else(|| Error::Schema {
                line: i + 1,
                msg: format!("unknown kind `{kind}`"),
            })?;
            cols.push((name.trim().to_string(), kind));
            lines.push(i + 1);
        }
        // Re-map positional errors from `new` onto file line numbers.
        Schema::new(cols).map_err(|e| match e {
            Error::Schema { line, msg } if line > 0 => Error::Schema {
                line: lines[line - 1],
                msg,
            },
            other => other,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind.is_label())
            .expect("schema invariant: exactly one label")
    }

    pub fn label(&self) -> &Column {
        &self.columns[self.label_index()]
    }

    pub fn descriptors(&self) -> impl Iterator<Item = (usize, &Column)> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind.is_descriptor())
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Schema::parse(&text)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Binary(Vec<u8>),
    /// Indices into the column's `levels`.
    Nominal(Vec<u32>),
    Numeric(Vec<f64>),
    /// Class indices into the label column's `levels`.
    Class(Vec<usize>),
}

impl ColumnData {
    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Binary(v) => ColumnData::Binary(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Nominal(v) => ColumnData::Nominal(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Class(v) => ColumnData::Class(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// A borrowed cell value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value<'a> {
    Binary(u8),
    Nominal(&'a str),
    Numeric(f64),
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<ColumnData>,
    record_ids: Vec<usize>,
}

impl Dataset {
    /// Parses CSV with a header row. Columns are matched to the schema by
    /// name, so header order is free.
    pub fn from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();

        let mut positions = vec![usize::MAX; schema.columns.len()];
        for (pos, name) in header.iter().enumerate() {
            let idx = schema.index_of(name).ok_or_else(|| Error::Dataset {
                row: 0,
                msg: format!("header mismatch: column `{name}` not in schema"),
            })?;
            if positions[idx] != usize::MAX {
                return Err(Error::Dataset {
                    row: 0,
                    msg: format!("header mismatch: column `{name}` repeated"),
                });
            }
            positions[idx] = pos;
        }
        if let Some(missing) = positions.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Dataset {
                row: 0,
                msg: format!(
                    "header mismatch: schema column `{}` absent",
                    schema.columns[missing].name
                ),
            });
        }

        let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
        for (i, rec) in rdr.records().enumerate() {
            // Row numbers are 1-based data rows; the header is row 0.
            let row = i + 1;
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Dataset {
                    row,
                    msg: format!(
                        "missing field: expected {} fields, got {}",
                        header.len(),
                        rec.len()
                    ),
                });
            }
            for (ci, &pos) in positions.iter().enumerate() {
                let field = &rec[pos];
                if field.is_empty() {
                    return Err(Error::Dataset {
                        row,
                        msg: format!("missing value in column `{}`", schema.columns[ci].name),
                    });
                }
                raw[ci].push(field.to_string());
            }
        }

        let mut schema = schema.clone();
        let mut columns = Vec::with_capacity(schema.columns.len());
        for (col, values) in schema.columns.iter_mut().zip(raw) {
            columns.push(type_column(col, values)?);
        }
        let n = match columns.first() {
            Some(c) => column_len(c),
            None => 0,
        };
        Ok(Dataset {
            schema,
            columns,
            record_ids: (0..n).collect(),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn record_ids(&self) -> &[usize] {
        &self.record_ids
    }

    pub fn column_data(&self, index: usize) -> &ColumnData {
        &self.columns[index]
    }

    pub fn value(&self, column: usize, row: usize) -> Value<'_> {
        match &self.columns[column] {
            ColumnData::Binary(v) => Value::Binary(v[row]),
            ColumnData::Nominal(v) => {
                Value::Nominal(&self.schema.columns[column].levels[v[row] as usize])
            }
            ColumnData::Numeric(v) => Value::Numeric(v[row]),
            ColumnData::Class(v) => Value::Class(v[row]),
        }
    }

    /// Numeric column values by name.
    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        let idx = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))?;
        let kind = self.schema.columns[idx].kind;
        match (&self.columns[idx], kind) {
            (ColumnData::Numeric(v), ColumnKind::Numeric) => Ok(v),
            _ => Err(Error::AttributeKind {
                name: name.to_string(),
                expected: "numeric",
                actual: kind.as_str(),
            }),
        }
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.columns[self.schema.label_index()] {
            ColumnData::Class(v) => Some(v),
            _ => None,
        }
    }

    pub fn real_labels(&self) -> Option<&[f64]> {
        let idx = self.schema.label_index();
        match (&self.columns[idx], self.schema.columns[idx].kind) {
            (ColumnData::Numeric(v), ColumnKind::LabelReal) => Some(v),
            _ => None,
        }
    }

    /// Number of classes for a classification dataset.
    pub fn num_classes(&self) -> Option<usize> {
        let label = self.schema.label();
        (label.kind == ColumnKind::LabelClass).then_some(label.levels.len())
    }

    /// Rows at the given positions, keeping their record ids.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            record_ids: rows.iter().map(|&r| self.record_ids[r]).collect(),
        }
    }
}

fn column_len(c: &ColumnData) -> usize {
    match c {
        ColumnData::Binary(v) => v.len(),
        ColumnData::Nominal(v) => v.len(),
        ColumnData::Numeric(v) => v.len(),
        ColumnData::Class(v) => v.len(),
    }
}

fn type_column(col: &mut Column, values: Vec<String>) -> Result<ColumnData> {
    match col.kind {
        ColumnKind::Binary => values
            .iter()
            .enumerate()
            .map(|(i, v)| match v.as_str() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Dataset {
                    row: i + 1,
                    msg: format!(
                        "binary column `{}` has value `{other}` outside {{0,1}}",
                        col.name
                    ),
                }),
            })
            .collect::<Result<Vec<u8>>>()
            .map(ColumnData::Binary),
        ColumnKind::Numeric | ColumnKind::LabelReal | ColumnKind::Prediction => values
            .iter()
            .enumerate()
            .map(|(i, v)| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::Dataset {
                    row: i + 1,
                    msg: format!(
                        "non-numeric or non-finite value `{v}` in column `{}`",
                        col.name
                    ),
                }),
            })
            .collect::<Result<Vec<f64>>>()
            .map(ColumnData::Numeric),
        ColumnKind::Nominal => {
            let levels: BTreeSet<&str> = values.iter().map(String::as_str).collect();
            col.levels = levels.into_iter().map(str::to_string).collect();
            let lookup: HashMap<&str, u32> = col
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32))
                .collect();
            Ok(ColumnData::Nominal(
                values.iter().map(|v| lookup[v.as_str()]).collect(),
            ))
        }
        ColumnKind::LabelClass => {
            col.levels = class_levels(&values);
            let lookup: HashMap<&str, usize> = col
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            Ok(ColumnData::Class(
                values.iter().map(|v| lookup[v.as_str()]).collect(),
            ))
        }
    }
}

/// Distinct class tokens, ordered numerically when every token is an
/// integer (so labels `0..K-1` map to themselves), lexically otherwise.
fn class_levels(values: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&str> = values.iter().map(String::as_str).collect();
    let ints: Option<Vec<(i64, &str)>> = distinct
        .iter()
        .map(|s| s.parse::<i64>().ok().map(|n| (n, *s)))
        .collect();
    match ints {
        Some(mut ints) => {
            ints.sort();
            ints.into_iter().map(|(_, s)| s.to_string()).collect()
        }
        None => distinct.into_iter().map(str::to_string).collect(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_reader(file, schema)
}

#[derive(Clone, Debug)]
pub struct SplitPair {
    pub calibration: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Uniform random partition into a calibration side of
/// `floor(calib_fraction * N)` records and a test side with the rest.
/// Both sides keep record-id order.
pub fn split_calibration_test(
    dataset: &Dataset,
    calib_fraction: f64,
    seed: u64,
) -> Result<SplitPair> {
    if !(calib_fraction > 0.0 && calib_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "calib_fraction {calib_fraction} not in (0,1)"
        )));
    }
    let n_total = dataset.len();
    // Nudge so that e.g. 0.57 * 100 lands on 57 rather than 56.
    let n_calib = ((calib_fraction * n_total as f64) + 1e-9).floor() as usize;
    let n_calib = n_calib.min(n_total);
    if n_calib < 2 || n_total - n_calib < 2 {
        return Err(Error::SideTooSmall {
            calibration: n_calib,
            test: n_total - n_calib,
        });
    }
    let mut rows: Vec<usize> = (0..n_total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let (calib, test) = rows.split_at_mut(n_calib);
    calib.sort_unstable();
    test.sort_unstable();
    Ok(SplitPair {
        calibration: dataset.subset(calib),
        test: dataset.subset(test),
        seed,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutStrategy {
    #[default]
    EqualWidth,
    EqualFrequency,
}

/// Equal-width thresholds between the observed min and max.
pub fn numeric_cut_points(dataset: &Dataset, attribute: &str, bins: usize) -> Result<Vec<f64>> {
    numeric_cut_points_with(dataset, attribute, bins, CutStrategy::EqualWidth)
}

/// Up to `bins - 1` strictly increasing thresholds strictly inside the
/// observed range. Constant columns yield no thresholds; equal-frequency
/// cuts collapse duplicates and may return fewer.
pub fn numeric_cut_points_with(
    dataset: &Dataset,
    attribute: &str,
    bins: usize,
    strategy: CutStrategy,
) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "bins must be >= 2, got {bins}"
        )));
    }
    let values = dataset.numeric(attribute)?;
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min >= max {
        return Ok(Vec::new());
    }
    let raw: Vec<f64> = match strategy {
        CutStrategy::EqualWidth => {
            let width = max - min;
            (1..bins)
                .map(|i| min + width * i as f64 / bins as f64)
                .collect()
        }
        CutStrategy::EqualFrequency => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            (1..bins)
                .map(|i| {
                    let rank = (i * n).div_ceil(bins);
                    sorted[rank.max(1) - 1]
                })
                .collect()
        }
    };
    let mut cuts: Vec<f64> = Vec::with_capacity(raw.len());
    for t in raw {
        if t > min && t < max && cuts.last().is_none_or(|&last| t > last) {
            cuts.push(t);
        }
    }
    Ok(cuts)
}
