//! Exhaustive depth <= 2 subgroup enumeration, written independently of
//! the beam search.

use std::cmp::Ordering;

use cemm::data::{numeric_cut_points, ColumnKind, Dataset, Value};
use cemm::mining::{Condition, ConditionValue, Description, Direction, Operator, Subgroup};

/// Every single condition, built straight from the schema and cut points.
fn all_conditions(ds: &Dataset, bins: usize) -> Vec<(usize, Condition)> {
    let mut out = Vec::new();
    for (idx, col) in ds.schema().columns().iter().enumerate() {
        match col.kind {
            ColumnKind::Binary => {
                out.push((idx, Condition::equals_binary(&col.name, 0)));
                out.push((idx, Condition::equals_binary(&col.name, 1)));
            }
            ColumnKind::Nominal => {
                for l in &col.levels {
                    out.push((idx, Condition::equals_level(&col.name, l)));
                }
            }
            ColumnKind::Numeric => {
                for t in numeric_cut_points(ds, &col.name, bins).unwrap() {
                    out.push((idx, Condition::leq(&col.name, t)));
                    out.push((idx, Condition::gt(&col.name, t)));
                }
            }
            _ => {}
        }
    }
    out
}

fn holds(ds: &Dataset, col: usize, cond: &Condition, row: usize) -> bool {
    match (ds.value(col, row), &cond.value) {
        (Value::Binary(v), ConditionValue::Binary(x)) => v == *x,
        (Value::Nominal(v), ConditionValue::Level(x)) => v == x,
        (Value::Numeric(v), ConditionValue::Threshold(t)) => match cond.operator {
            Operator::Leq => v <= *t,
            Operator::Gt => v > *t,
            Operator::Equals => unreachable!(),
        },
        _ => unreachable!(),
    }
}

#[derive(Debug, PartialEq)]
pub struct Row {
    pub description: String,
    pub members: Vec<usize>,
    pub aul: f64,
    pub quality: f64,
}

/// Exhaustive enumeration of canonical depth <= 2 descriptions meeting
/// the size floor, ranked by the direction's objective, then size
/// descending, then description string ascending.
pub fn exhaustive(
    ds: &Dataset,
    r: &[f64],
    direction: Direction,
    min_size: usize,
    bins: usize,
) -> Vec<Row> {
    let conds = all_conditions(ds, bins);
    let global = r.iter().sum::<f64>() / r.len() as f64;
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::new();
    let mut consider = |parts: Vec<&(usize, Condition)>| {
        let description = match Description::new(parts.iter().map(|(_, c)| c.clone()).collect()) {
            Ok(d) => d,
            Err(_) => return,
        };
        if !seen.insert(description.clone()) {
            return;
        }
        let members: Vec<usize> = (0..ds.len())
            .filter(|&row| parts.iter().all(|(col, c)| holds(ds, *col, c, row)))
            .collect();
        if members.len() < min_size || members.is_empty() {
            return;
        }
        let aul = members.iter().map(|&m| r[m]).sum::<f64>() / members.len() as f64;
        rows.push(Row {
            description: description.to_string(),
            members: members.iter().map(|&m| ds.record_ids()[m]).collect(),
            aul,
            quality: global - aul,
        });
    };
    for i in 0..conds.len() {
        consider(vec![&conds[i]]);
        for j in i + 1..conds.len() {
            consider(vec![&conds[i], &conds[j]]);
        }
    }
    let key = |q: f64| match direction {
        Direction::Maximize => q,
        Direction::Minimize => -q,
        Direction::Absolute => q.abs(),
    };
    rows.sort_by(|a, b| {
        key(b.quality)
            .partial_cmp(&key(a.quality))
            .unwrap_or(Ordering::Equal)
            .then(b.members.len().cmp(&a.members.len()))
            .then(a.description.cmp(&b.description))
    });
    rows
}

pub fn as_rows(found: &[Subgroup]) -> Vec<Row> {
    found
        .iter()
        .map(|s| Row {
            description: s.description.to_string(),
            members: s.members.clone(),
            aul: s.aul,
            quality: s.quality,
        })
        .collect()
}
