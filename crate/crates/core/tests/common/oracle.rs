//! Hand-built metric fixture and a brute-force oracle that works on
//! (continuous values, level ids) pairs instead of encoded vectors.

use recourse_core::data::{FeatureSchema, FeatureSpec, LabelSpec};

#[derive(Clone, Copy, Debug)]
pub struct Point {
    pub cont: [f64; 2],
    pub cat: [usize; 2],
}

const fn p(a: f64, b: f64, k: usize, m: usize) -> Point {
    Point { cont: [a, b], cat: [k, m] }
}

pub const LEVELS: [usize; 2] = [3, 2];

pub fn schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            FeatureSpec::continuous("a", Some(0.0), Some(1.0)),
            FeatureSpec::continuous("b", Some(0.0), Some(1.0)),
            FeatureSpec::categorical("k", &["x", "y", "z"]),
            FeatureSpec::categorical("m", &["u", "v"]),
        ],
        None,
        LabelSpec::default(),
    )
    .unwrap()
}

pub fn encode(pt: &Point) -> Vec<f64> {
    let mut v = pt.cont.to_vec();
    for (j, &l) in pt.cat.iter().enumerate() {
        v.extend((0..LEVELS[j]).map(|i| if i == l { 1.0 } else { 0.0 }));
    }
    v
}

/// Rows used for the MAD scales.
pub fn train_rows() -> Vec<Point> {
    vec![
        p(0.125, 0.5, 0, 0),
        p(0.25, 0.25, 1, 0),
        p(0.5, 0.75, 2, 1),
        p(0.75, 0.5, 0, 1),
        p(0.375, 0.625, 1, 1),
        p(0.625, 0.125, 2, 0),
    ]
}

pub fn instances() -> Vec<Point> {
    vec![
        p(0.125, 0.25, 0, 0),
        p(0.5, 0.5, 1, 1),
        p(0.25, 0.75, 2, 0),
        p(0.375, 0.125, 0, 1),
        p(0.875, 0.625, 1, 0),
    ]
}

/// Two or four samples per instance so per-instance means stay exact.
pub fn sets() -> Vec<Vec<Point>> {
    vec![
        vec![p(0.625, 0.25, 0, 0), p(0.125, 0.25, 0, 0), p(0.75, 0.5, 1, 0), p(0.125, 0.3125, 2, 1)],
        vec![p(0.5, 0.5, 1, 1), p(0.5625, 0.5, 1, 1)],
        vec![p(0.25, 0.75, 2, 0), p(0.0, 0.0, 0, 1), p(0.25, 0.875, 2, 0), p(1.0, 1.0, 1, 1)],
        vec![p(0.375, 0.125, 0, 1), p(0.40625, 0.1875, 2, 1)],
        vec![p(0.25, 0.625, 1, 0), p(0.875, 0.625, 0, 0)],
    ]
}

/// Hand classifier: positive iff `a > 0.5`.
pub fn positive(pt: &Point) -> bool {
    pt.cont[0] > 0.5
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mad(rows: &[Point]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (j, o) in out.iter_mut().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.cont[j]).collect();
        let m = median(col.clone());
        *o = median(col.iter().map(|v| (v - m).abs()).collect()).max(1e-6);
    }
    out
}

fn bin(v: f64) -> i64 {
    ((v * 10.0).floor() as i64).clamp(0, 9)
}

pub fn pair(a: &Point, b: &Point, mad: &[f64; 2]) -> f64 {
    let mut s = 0.0;
    for j in 0..2 {
        s += (a.cont[j] - b.cont[j]).abs() / mad[j];
    }
    for j in 0..2 {
        if a.cat[j] != b.cat[j] {
            s += 1.0;
        }
    }
    s
}

pub fn validity(sets: &[Vec<Point>]) -> f64 {
    let mut hit = 0.0;
    for s in sets {
        if s.iter().any(positive) {
            hit += 1.0;
        }
    }
    hit / sets.len() as f64
}

pub fn proximity(xs: &[Point], sets: &[Vec<Point>]) -> f64 {
    let mut total = 0.0;
    for (x, s) in xs.iter().zip(sets) {
        let mut best = f64::INFINITY;
        for c in s {
            let mut sq = 0.0;
            for j in 0..2 {
                sq += (c.cont[j] - x.cont[j]).powi(2);
            }
            // one-hot blocks differ in two coordinates per changed level
            for j in 0..2 {
                if c.cat[j] != x.cat[j] {
                    sq += 2.0;
                }
            }
            best = best.min(sq.sqrt());
        }
        total += best;
    }
    total / xs.len() as f64
}

pub fn sparsity(xs: &[Point], sets: &[Vec<Point>]) -> f64 {
    let mut total = 0.0;
    for (x, s) in xs.iter().zip(sets) {
        let mut inst = 0.0;
        for c in s {
            let mut changed = 0.0;
            for j in 0..2 {
                if bin(c.cont[j]) != bin(x.cont[j]) {
                    changed += 1.0;
                }
                if c.cat[j] != x.cat[j] {
                    changed += 1.0;
                }
            }
            inst += changed / 4.0;
        }
        total += inst / s.len() as f64;
    }
    total / xs.len() as f64
}

pub fn diversity(set: &[Point], mad: &[f64; 2]) -> f64 {
    let n = set.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i < j {
                s += pair(&set[i], &set[j], mad);
            }
        }
    }
    s / (n * n) as f64
}

pub fn cost(x: &Point, set: &[Point], mad: &[f64; 2]) -> f64 {
    let mut s = 0.0;
    for c in set {
        s += pair(x, c, mad);
    }
    s / set.len() as f64
}
