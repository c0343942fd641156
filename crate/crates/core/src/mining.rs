//! Exceptional subgroup mining over the uncertainty target.
//!
//! A subgroup is a conjunction of attribute conditions. Its quality is the
//! relative average uncertainty loss `AUL(test) - AUL(subgroup)`: positive
//! when the model is more certain on the subgroup than overall, negative
//! when it is less certain. Subgroups are found by a levelwise beam search.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::UncertaintyTarget;
use crate::data::{numeric_cut_points_with, ColumnData, ColumnKind, CutStrategy, Dataset, Schema};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Equals,
    Leq,
    Gt,
}

impl Operator {
    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Equals => "=",
            Operator::Leq => "<=",
            Operator::Gt => ">",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionValue {
    Binary(u8),
    Level(String),
    Threshold(f64),
}

impl ConditionValue {
    fn rank(&self) -> u8 {
        match self {
            ConditionValue::Binary(_) => 0,
            ConditionValue::Level(_) => 1,
            ConditionValue::Threshold(_) => 2,
        }
    }
}

impl PartialEq for ConditionValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ConditionValue {}

impl PartialOrd for ConditionValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConditionValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ConditionValue::Binary(a), ConditionValue::Binary(b)) => a.cmp(b),
            (ConditionValue::Level(a), ConditionValue::Level(b)) => a.cmp(b),
            (ConditionValue::Threshold(a), ConditionValue::Threshold(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl std::hash::Hash for ConditionValue {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            ConditionValue::Binary(v) => (0u8, *v).hash(state),
            ConditionValue::Level(s) => (1u8, s).hash(state),
            ConditionValue::Threshold(t) => (2u8, t.to_bits()).hash(state),
        }
    }
}

impl fmt::Display for ConditionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionValue::Binary(v) => write!(f, "{v}"),
            ConditionValue::Level(s) => f.write_str(s),
            ConditionValue::Threshold(t) => f.write_str(&format_sig6(*t)),
        }
    }
}

/// Formats like C's `%g`: six significant digits, trailing zeros dropped,
/// scientific notation below 1e-4 and from 1e6 up.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A single attribute test.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub attribute: String,
    pub operator: Operator,
    pub value: ConditionValue,
}

impl Condition {
    pub fn equals_binary(attribute: impl Into<String>, value: u8) -> Self {
        Condition {
            attribute: attribute.into(),
            operator: Operator::Equals,
            value: ConditionValue::Binary(value),
        }
    }

    pub fn equals_level(attribute: impl Into<String>, level: impl Into<String>) -> Self {
        Condition {
            attribute: attribute.into(),
            operator: Operator::Equals,
            value: ConditionValue::Level(level.into()),
        }
    }

    pub fn leq(attribute: impl Into<String>, threshold: f64) -> Self {
        Condition {
            attribute: attribute.into(),
            operator: Operator::Leq,
            value: ConditionValue::Threshold(threshold),
        }
    }

    pub fn gt(attribute: impl Into<String>, threshold: f64) -> Self {
        Condition {
            attribute: attribute.into(),
            operator: Operator::Gt,
            value: ConditionValue::Threshold(threshold),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.attribute,
            self.operator.symbol(),
            self.value
        )
    }
}

/// A conjunction of conditions in canonical order, with at most one
/// condition per (attribute, operator) pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Description {
    conditions: Vec<Condition>,
}

impl Description {
    pub fn new(mut conditions: Vec<Condition>) -> Result<Self> {
        conditions.sort();
        for pair in conditions.windows(2) {
            if pair[0].attribute == pair[1].attribute && pair[0].operator == pair[1].operator {
                return Err(Error::InvalidParameter(format!(
                    "two `{}` conditions on `{}`",
                    pair[0].operator.symbol(),
                    pair[0].attribute
                )));
            }
        }
        Ok(Description { conditions })
    }

    pub fn empty() -> Self {
        Description::default()
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    fn constrains(&self, attribute: &str, operator: Operator) -> bool {
        self.conditions
            .iter()
            .any(|c| c.attribute == attribute && c.operator == operator)
    }

    /// `self AND condition`, or `None` when the pair is already constrained.
    pub fn refine(&self, condition: Condition) -> Option<Description> {
        if self.constrains(&condition.attribute, condition.operator) {
            return None;
        }
        let mut conditions = self.conditions.clone();
        let at = conditions.partition_point(|c| c < &condition);
        conditions.insert(at, condition);
        Some(Description { conditions })
    }

    /// Rendering with ` and ` separators, for tables.
    pub fn to_text(&self) -> String {
        self.join(" and ")
    }

    fn join(&self, sep: &str) -> String {
        self.conditions
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(sep)
    }
}

/// Canonical string: `attr <= v AND attr2 = x`.
impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join(" AND "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subgroup {
    pub description: Description,
    /// Test record ids, ascending.
    pub members: Vec<usize>,
    pub size: usize,
    pub aul: f64,
    /// `global_aul - aul`.
    pub quality: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
    Absolute,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Maximize => "maximize",
            Direction::Minimize => "minimize",
            Direction::Absolute => "absolute",
        }
    }

    /// The value the search maximizes.
    pub fn objective(self, quality: f64) -> f64 {
        match self {
            Direction::Maximize => quality,
            Direction::Minimize => -quality,
            Direction::Absolute => quality.abs(),
        }
    }

    /// Ranking order: objective descending, then size descending, then
    /// canonical description ascending.
    pub fn compare(self, a: &Subgroup, b: &Subgroup) -> Ordering {
        self.objective(b.quality)
            .total_cmp(&self.objective(a.quality))
            .then(b.size.cmp(&a.size))
            .then_with(|| a.description.to_string().cmp(&b.description.to_string()))
            .then_with(|| a.description.cmp(&b.description))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaBase {
    /// Size floor relative to the test set.
    #[default]
    Test,
    /// Size floor relative to the full dataset.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningParams {
    pub depth: usize,
    pub beam_width: usize,
    /// Minimum subgroup size as a percentage, in (0, 100].
    pub lambda_min_pct: f64,
    pub lambda_base: LambdaBase,
    /// Number of bins per numeric attribute (`bins - 1` cut points).
    pub bins: usize,
    pub cut_strategy: CutStrategy,
    /// Set per mining pass; runs record their directions separately.
    #[serde(skip)]
    pub direction: Direction,
    pub top_k: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            depth: 2,
            beam_width: 20,
            lambda_min_pct: 5.0,
            lambda_base: LambdaBase::Test,
            bins: 9,
            cut_strategy: CutStrategy::EqualWidth,
            direction: Direction::Maximize,
            top_k: 3,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.depth < 1 {
            return bad("depth must be >= 1".into());
        }
        if self.beam_width < 1 {
            return bad("beam_width must be >= 1".into());
        }
        if !(self.lambda_min_pct > 0.0 && self.lambda_min_pct <= 100.0) {
            return bad(format!("lambda {} not in (0,100]", self.lambda_min_pct));
        }
        if self.bins < 2 {
            return bad("bins must be >= 2".into());
        }
        if self.top_k < 1 {
            return bad("top_k must be >= 1".into());
        }
        Ok(())
    }

    /// `ceil(lambda / 100 * reference_size)`, at least 1.
    pub fn min_size(&self, reference_size: usize) -> usize {
        let raw = self.lambda_min_pct * reference_size as f64 / 100.0;
        let nearest = raw.round();
        let snapped = if (raw - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            raw.ceil()
        };
        (snapped as usize).max(1)
    }
}

/// Mean target over the given test record ids.
pub fn aul(members: &[usize], targets: &UncertaintyTarget) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptySubgroup);
    }
    let index: HashMap<usize, usize> = targets
        .record_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut sum = 0.0;
    for id in members {
        let row = index
            .get(id)
            .ok_or_else(|| Error::Misaligned(format!("record_id {id} has no target")))?;
        sum += targets.r[*row];
    }
    Ok(sum / members.len() as f64)
}

/// Relative average uncertainty loss: positive when the subgroup is more
/// certain than the baseline.
pub fn raul(subgroup_aul: f64, global_aul: f64) -> f64 {
    global_aul - subgroup_aul
}

/// Numeric cut points for every numeric descriptor of `ds`.
pub fn cut_points_for(
    ds: &Dataset,
    bins: usize,
    strategy: CutStrategy,
) -> Result<BTreeMap<String, Vec<f64>>> {
    ds.schema()
        .descriptors()
        .filter(|(_, c)| c.kind == ColumnKind::Numeric)
        .map(|(_, c)| {
            Ok((
                c.name.clone(),
                numeric_cut_points_with(ds, &c.name, bins, strategy)?,
            ))
        })
        .collect()
}

/// All single conditions the search language allows for this schema.
fn condition_pool(schema: &Schema, cutpoints: &BTreeMap<String, Vec<f64>>) -> Vec<Condition> {
    let mut pool = Vec::new();
    for (_, col) in schema.descriptors() {
        match col.kind {
            ColumnKind::Binary => {
                pool.push(Condition::equals_binary(&col.name, 0));
                pool.push(Condition::equals_binary(&col.name, 1));
            }
            ColumnKind::Nominal => {
                pool.extend(
                    col.levels
                        .iter()
                        .map(|l| Condition::equals_level(&col.name, l)),
                );
            }
            ColumnKind::Numeric => {
                for &t in cutpoints.get(&col.name).map(Vec::as_slice).unwrap_or(&[]) {
                    pool.push(Condition::leq(&col.name, t));
                    pool.push(Condition::gt(&col.name, t));
                }
            }
            _ => {}
        }
    }
    pool
}

/// Extends `base` by one condition in every allowed way: binary attributes
/// give `= 0` and `= 1`, nominal attributes one equality per level, numeric
/// attributes `<= t` and `> t` per cut point. Pairs already constrained in
/// `base` are skipped; the output is deduplicated.
pub fn generate_refinements(
    base: &Description,
    schema: &Schema,
    cutpoints: &BTreeMap<String, Vec<f64>>,
    depth: usize,
) -> Vec<Description> {
    if base.len() >= depth {
        return Vec::new();
    }
    let mut seen = HashSet::new();
    condition_pool(schema, cutpoints)
        .into_iter()
        .filter_map(|c| base.refine(c))
        .filter(|d| seen.insert(d.clone()))
        .collect()
}

/// A condition resolved against a dataset's column layout.
enum Compiled<'a> {
    Binary(&'a [u8], u8),
    Level(&'a [u32], Option<u32>),
    Leq(&'a [f64], f64),
    Gt(&'a [f64], f64),
}

impl Compiled<'_> {
    fn matches(&self, row: usize) -> bool {
        match *self {
            Compiled::Binary(v, x) => v[row] == x,
            Compiled::Level(v, code) => Some(v[row]) == code,
            Compiled::Leq(v, t) => v[row] <= t,
            Compiled::Gt(v, t) => v[row] > t,
        }
    }
}

fn compile<'a>(cond: &Condition, ds: &'a Dataset) -> Result<Compiled<'a>> {
    let schema = ds.schema();
    let idx = schema
        .index_of(&cond.attribute)
        .ok_or_else(|| Error::UnknownAttribute(cond.attribute.clone()))?;
    let col = &schema.columns()[idx];
    let mismatch = |expected| Error::AttributeKind {
        name: col.name.clone(),
        expected,
        actual: col.kind.as_str(),
    };
    match (cond.operator, &cond.value, ds.column_data(idx), col.kind) {
        (
            Operator::Equals,
            ConditionValue::Binary(x),
            ColumnData::Binary(v),
            ColumnKind::Binary,
        ) => Ok(Compiled::Binary(v, *x)),
        (
            Operator::Equals,
            ConditionValue::Level(l),
            ColumnData::Nominal(v),
            ColumnKind::Nominal,
        ) => {
            let code = col.levels.iter().position(|x| x == l).map(|p| p as u32);
            Ok(Compiled::Level(v, code))
        }
        (
            Operator::Leq,
            ConditionValue::Threshold(t),
            ColumnData::Numeric(v),
            ColumnKind::Numeric,
        ) => Ok(Compiled::Leq(v, *t)),
        (
            Operator::Gt,
            ConditionValue::Threshold(t),
            ColumnData::Numeric(v),
            ColumnKind::Numeric,
        ) => Ok(Compiled::Gt(v, *t)),
        (Operator::Equals, _, _, _) => Err(mismatch("binary or nominal with a matching value")),
        _ => Err(mismatch("numeric with a threshold")),
    }
}

/// Record ids of the test rows satisfying every condition.
pub fn evaluate_membership(description: &Description, test: &Dataset) -> Result<Vec<usize>> {
    let compiled = description
        .conditions()
        .iter()
        .map(|c| compile(c, test))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..test.len())
        .filter(|&row| compiled.iter().all(|c| c.matches(row)))
        .map(|row| test.record_ids()[row])
        .collect())
}

/// Fixed-size bit set over test rows.
#[derive(Clone, Debug)]
struct RowBits {
    words: Vec<u64>,
}

impl RowBits {
    fn from_fn(len: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut words = vec![0u64; len.div_ceil(64)];
        for row in (0..len).filter(|&r| f(r)) {
            words[row / 64] |= 1 << (row % 64);
        }
        RowBits { words }
    }

    fn and(&self, other: &RowBits) -> RowBits {
        RowBits {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + bit)
            })
        })
    }
}

struct Candidate {
    subgroup: Subgroup,
    bits: RowBits,
}

struct Search<'a> {
    test: &'a Dataset,
    r: &'a [f64],
    global_aul: f64,
    min_size: usize,
    cutpoints: BTreeMap<String, Vec<f64>>,
    condition_bits: HashMap<Condition, RowBits>,
}

impl<'a> Search<'a> {
    fn new(
        test: &'a Dataset,
        targets: &'a UncertaintyTarget,
        params: &MiningParams,
        min_size: usize,
    ) -> Result<Self> {
        if targets.record_ids != test.record_ids() {
            return Err(Error::Misaligned(
                "targets are not aligned with the test records".into(),
            ));
        }
        let cutpoints = cut_points_for(test, params.bins, params.cut_strategy)?;
        let pool = condition_pool(test.schema(), &cutpoints);
        let condition_bits = pool
            .into_par_iter()
            .map(|c| {
                let compiled = compile(&c, test)?;
                let bits = RowBits::from_fn(test.len(), |row| compiled.matches(row));
                Ok((c, bits))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Search {
            test,
            r: &targets.r,
            global_aul: targets.r.iter().sum::<f64>() / targets.r.len() as f64,
            min_size,
            cutpoints,
            condition_bits,
        })
    }

    /// Scores a description whose members are `bits`; `None` below the floor.
    fn score(&self, description: Description, bits: RowBits) -> Option<Candidate> {
        let size = bits.count();
        if size < self.min_size || size == 0 {
            return None;
        }
        let ids = self.test.record_ids();
        let mut sum = 0.0;
        let mut members = Vec::with_capacity(size);
        for row in bits.ones() {
            sum += self.r[row];
            members.push(ids[row]);
        }
        let aul = sum / size as f64;
        Some(Candidate {
            subgroup: Subgroup {
                description,
                members,
                size,
                aul,
                quality: raul(aul, self.global_aul),
            },
            bits,
        })
    }

    fn evaluate(
        &self,
        parent: Option<&RowBits>,
        description: Description,
        added: &Condition,
    ) -> Option<Candidate> {
        let own = &self.condition_bits[added];
        let bits = match parent {
            Some(p) => p.and(own),
            None => own.clone(),
        };
        self.score(description, bits)
    }
}

/// Levelwise beam search to `params.depth`.
///
/// Level 1 evaluates every single-condition description. Each level keeps
/// the `beam_width` best candidates (by the direction's ranking) among those
/// meeting the size floor, and the next level refines only those. The
/// result is every evaluated candidate that met the floor, ranked.
pub fn beam_search(
    test: &Dataset,
    targets: &UncertaintyTarget,
    params: &MiningParams,
) -> Result<Vec<Subgroup>> {
    beam_search_with_floor(test, targets, params, params.min_size(test.len()))
}

/// [`beam_search`] with an explicit minimum subgroup size.
pub fn beam_search_with_floor(
    test: &Dataset,
    targets: &UncertaintyTarget,
    params: &MiningParams,
    min_size: usize,
) -> Result<Vec<Subgroup>> {
    params.validate()?;
    if test.is_empty() {
        return Err(Error::InvalidParameter("empty test set".into()));
    }
    let search = Search::new(test, targets, params, min_size)?;
    let direction = params.direction;

    let mut seen: HashSet<Description> = HashSet::new();
    let mut results: Vec<Subgroup> = Vec::new();
    let mut beam: Vec<Candidate> = vec![];

    for level in 1..=params.depth {
        // (parent index in beam, refined description, added condition)
        let mut jobs: Vec<(Option<usize>, Description, Condition)> = Vec::new();
        let parents: Vec<Option<usize>> = if level == 1 {
            vec![None]
        } else {
            (0..beam.len()).map(Some).collect()
        };
        for parent in parents {
            let base = match parent {
                Some(i) => &beam[i].subgroup.description,
                None => &Description::default(),
            };
            if base.len() >= params.depth {
                continue;
            }
            for cond in condition_pool(test.schema(), &search.cutpoints) {
                if let Some(desc) = base.refine(cond.clone()) {
                    if seen.insert(desc.clone()) {
                        jobs.push((parent, desc, cond));
                    }
                }
            }
        }
        if jobs.is_empty() {
            break;
        }
        let mut valid: Vec<Candidate> = jobs
            .into_par_iter()
            .filter_map(|(parent, desc, cond)| {
                search.evaluate(parent.map(|i| &beam[i].bits), desc, &cond)
            })
            .collect();
        valid.sort_by(|a, b| direction.compare(&a.subgroup, &b.subgroup));
        results.extend(valid.iter().map(|c| c.subgroup.clone()));
        valid.truncate(params.beam_width);
        beam = valid;
        if beam.is_empty() {
            break;
        }
    }

    results.sort_by(|a, b| direction.compare(a, b));
    Ok(results)
}

/// Among single-condition numeric subgroups sharing (attribute, operator),
/// keeps only the first, i.e. best ranked, one. Other subgroups pass through.
pub fn numeric_best_pair_filter(results: Vec<Subgroup>) -> Vec<Subgroup> {
    let mut kept: HashSet<(String, Operator)> = HashSet::new();
    results
        .into_iter()
        .filter(|s| match s.description.conditions() {
            [c] if matches!(c.value, ConditionValue::Threshold(_)) => {
                kept.insert((c.attribute.clone(), c.operator))
            }
            _ => true,
        })
        .collect()
}

/// Final report list for one run: sign filter (maximize keeps quality >= 0,
/// minimize keeps quality <= 0), best-pair filter, then the top `top_k`.
pub fn filter_and_rank(
    results: Vec<Subgroup>,
    direction: Direction,
    params: &MiningParams,
) -> Vec<Subgroup> {
    let mut kept: Vec<Subgroup> = results
        .into_iter()
        .filter(|s| match direction {
            Direction::Maximize => s.quality >= 0.0,
            Direction::Minimize => s.quality <= 0.0,
            Direction::Absolute => true,
        })
        .collect();
    kept.sort_by(|a, b| direction.compare(a, b));
    let mut kept = numeric_best_pair_filter(kept);
    kept.truncate(params.top_k);
    kept
}
