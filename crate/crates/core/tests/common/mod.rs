#![allow(dead_code)]

pub mod oracle;

use std::fmt::Write as _;

use cemm::data::{ColumnKind, Dataset, Schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(schema: &[(&str, ColumnKind)], csv: &str) -> Dataset {
    let schema = Schema::new(schema.iter().map(|(n, k)| (n.to_string(), *k))).unwrap();
    Dataset::from_reader(csv.as_bytes(), &schema).unwrap()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Four classes drawn from a softmax of a fixed linear function of two
/// Gaussian features and one binary feature.
pub fn four_class(n: usize, seed: u64) -> Dataset {
    dataset(&FOUR_CLASS_SCHEMA, &four_class_csv(n, seed))
}

pub const FOUR_CLASS_SCHEMA: [(&str, ColumnKind); 4] = [
    ("x1", ColumnKind::Numeric),
    ("x2", ColumnKind::Numeric),
    ("flag", ColumnKind::Binary),
    ("y", ColumnKind::LabelClass),
];

pub fn four_class_csv(n: usize, seed: u64) -> String {
    const W: [[f64; 3]; 4] = [
        [1.5, 0.0, 0.5],
        [-1.0, 1.2, 0.0],
        [0.0, -1.5, -0.4],
        [-0.6, 0.4, 1.0],
    ];
    const B: [f64; 4] = [0.2, 0.0, -0.1, 0.1];
    let mut r = rng(seed);
    let mut csv = String::from("x1,x2,flag,y\n");
    for _ in 0..n {
        let x1: f64 = r.sample(StandardNormal);
        let x2: f64 = r.sample(StandardNormal);
        let flag = u8::from(r.random::<bool>());
        let scores: Vec<f64> = W
            .iter()
            .zip(B)
            .map(|(w, b)| w[0] * x1 + w[1] * x2 + w[2] * f64::from(flag) + b)
            .collect();
        let p = softmax(&scores);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut y = p.len() - 1;
        for (k, pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                y = k;
                break;
            }
        }
        writeln!(csv, "{x1},{x2},{flag},{y}").unwrap();
    }
    csv
}

/// `y = x + (1 + |x|) eps` with `x ~ U(-3, 3)`, `eps ~ N(0, 1)`, and the
/// descriptor `magnitude = |x|`.
pub fn heteroscedastic(n: usize, seed: u64) -> Dataset {
    dataset(&HETERO_SCHEMA, &heteroscedastic_csv(n, seed))
}

pub const HETERO_SCHEMA: [(&str, ColumnKind); 3] = [
    ("x", ColumnKind::Numeric),
    ("magnitude", ColumnKind::Numeric),
    ("y", ColumnKind::LabelReal),
];

pub fn heteroscedastic_csv(n: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut csv = String::from("x,magnitude,y\n");
    for _ in 0..n {
        let x: f64 = r.random_range(-3.0..3.0);
        let eps: f64 = normal.sample(&mut r);
        let y = x + (1.0 + x.abs()) * eps;
        writeln!(csv, "{x},{},{y}", x.abs()).unwrap();
    }
    csv
}

/// Schema file text for a column list.
pub fn schema_text(schema: &[(&str, ColumnKind)]) -> String {
    schema
        .iter()
        .map(|(n, k)| format!("{n},{}\n", k.as_str()))
        .collect()
}

/// Regression data with the single feature `x`.
pub fn univariate(xs: &[f64], ys: &[f64]) -> Dataset {
    let mut csv = String::from("x,y\n");
    for (x, y) in xs.iter().zip(ys) {
        writeln!(csv, "{x},{y}").unwrap();
    }
    dataset(
        &[("x", ColumnKind::Numeric), ("y", ColumnKind::LabelReal)],
        &csv,
    )
}

pub const MINING_SCHEMA: [(&str, ColumnKind); 6] = [
    ("a", ColumnKind::Binary),
    ("b", ColumnKind::Nominal),
    ("c", ColumnKind::Numeric),
    ("d", ColumnKind::Binary),
    ("e", ColumnKind::Nominal),
    ("y", ColumnKind::LabelReal),
];

/// Mining fixture plus integer targets. Records with `a = 1` and `b = q`
/// get r in {3, 4}; the rest get r in {1, 2}.
pub fn planted(n: usize, seed: u64) -> (Dataset, Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut csv = String::from("a,b,c,d,e,y\n");
    let mut targets = Vec::with_capacity(n);
    let mut planted = Vec::new();
    for row in 0..n {
        let a = u8::from(r.random::<bool>());
        let b = ["p", "q", "s", "t"][r.random_range(0..4)];
        let c: f64 = (r.random_range(0.0..10.0_f64) * 100.0).round() / 100.0;
        let d = u8::from(r.random::<bool>());
        let e = ["u", "v", "w"][r.random_range(0..3)];
        let inside = a == 1 && b == "q";
        let base = if inside { 3.0 } else { 1.0 };
        targets.push(base + f64::from(u8::from(r.random::<bool>())));
        if inside {
            planted.push(row);
        }
        writeln!(csv, "{a},{b},{c},{d},{e},0").unwrap();
    }
    (dataset(&MINING_SCHEMA, &csv), targets, planted)
}

/// Random mining fixture with up to five descriptors of mixed kinds and
/// integer targets in 0..=4.
pub fn random_mining_fixture(seed: u64) -> (Dataset, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(20..=200);
    let kinds = [ColumnKind::Binary, ColumnKind::Nominal, ColumnKind::Numeric];
    let attrs = r.random_range(1..=5);
    let mut schema: Vec<(String, ColumnKind)> = (0..attrs)
        .map(|i| (format!("f{i}"), kinds[r.random_range(0..3)]))
        .collect();
    schema.push(("y".into(), ColumnKind::LabelReal));
    let mut csv = schema
        .iter()
        .map(|(n, _)| n.as_str())
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let cells: Vec<String> = schema[..attrs]
            .iter()
            .map(|(_, k)| match k {
                ColumnKind::Binary => r.random_range(0..2).to_string(),
                ColumnKind::Nominal => {
                    ["red", "green", "blue", "gray"][r.random_range(0..4)].to_string()
                }
                _ => r.random_range(0..30).to_string(),
            })
            .collect();
        writeln!(csv, "{},0", cells.join(",")).unwrap();
        targets.push(f64::from(r.random_range(0..5)));
    }
    let schema = Schema::new(schema).unwrap();
    (
        Dataset::from_reader(csv.as_bytes(), &schema).unwrap(),
        targets,
    )
}
