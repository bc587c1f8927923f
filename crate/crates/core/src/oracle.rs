//! Loop-based reference implementation of every matching mechanism.
//!
//! Nothing here is blocked, parallel or shared with the fast path beyond the
//! tensor types. Dot products accumulate in f64, and values are rounded to
//! f32 at the same points where the fast path stores them, so discrete
//! choices (argmax, top-K) see identical inputs and any disagreement is a
//! logic error rather than rounding noise.

use crate::error::{mismatch, Error, Result};
use crate::matching::{MatchConfig, Mechanism};
use crate::tensor::{FeatureMap, ProbMask, ScoreMap, NORM_EPS};

type Matrix = Vec<Vec<f32>>;

/// `exp(x_j - max) / sum_l exp(x_l - max)`, with the sum taken left to right.
pub fn oracle_softmax_row(row: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &x in row {
        if x > max {
            max = x;
        }
    }
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let mut total = 0.0;
    for &e in &exps {
        total += e;
    }
    exps.iter().map(|&e| e / total).collect()
}

fn pixel(f: &FeatureMap, p: usize) -> Vec<f64> {
    let (y, x) = (p / f.width(), p % f.width());
    (0..f.channels()).map(|c| f.get(c, y, x) as f64).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let mut sq = 0.0;
    for &x in &v {
        sq += x * x;
    }
    let norm = f64::sqrt(sq);
    if norm < NORM_EPS {
        return vec![0.0; v.len()];
    }
    v.into_iter().map(|x| x / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn affinity(reference: &FeatureMap, query: &FeatureMap, mechanism: Mechanism) -> Matrix {
    let mut out = Vec::with_capacity(reference.pixels());
    for p in 0..reference.pixels() {
        let mut raw = Vec::with_capacity(query.pixels());
        for q in 0..query.pixels() {
            let s = match mechanism {
                Mechanism::Equalized => dot(&pixel(reference, p), &pixel(query, q)),
                _ => {
                    let cos = dot(
                        &normalized(pixel(reference, p)),
                        &normalized(pixel(query, q)),
                    );
                    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
                }
            };
            raw.push(s);
        }
        if mechanism == Mechanism::Equalized {
            raw = oracle_softmax_row(&raw);
        }
        out.push(raw.into_iter().map(|v| v as f32).collect());
    }
    out
}

fn kernel(b: &Matrix, width: usize, sigma: f64) -> Matrix {
    let n = b[0].len();
    // Squared distance between every pair of query pixels.
    let mut dist_sq = vec![vec![0.0f64; n]; n];
    for (i, row) in dist_sq.iter_mut().enumerate() {
        for (j, d) in row.iter_mut().enumerate() {
            let dy = (i / width) as f64 - (j / width) as f64;
            let dx = (i % width) as f64 - (j % width) as f64;
            *d = dy * dy + dx * dx;
        }
    }
    b.iter()
        .map(|row| {
            let mut center = 0;
            for q in 0..n {
                if row[q] > row[center] {
                    center = q;
                }
            }
            (0..n)
                .map(|q| {
                    let w = (-dist_sq[center][q] / (2.0 * sigma * sigma)).exp();
                    (row[q] as f64 * w) as f32
                })
                .collect()
        })
        .collect()
}

fn topk(b: &Matrix, k: usize) -> Matrix {
    b.iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            // Stable sort keeps ascending index order among equal values.
            order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap());
            let mut out = vec![0.0f32; row.len()];
            for &i in order.iter().take(k) {
                out[i] = row[i];
            }
            out
        })
        .collect()
}

/// Same contract as [`crate::matching::match_frames`], computed naively.
pub fn oracle_match(
    reference: &FeatureMap,
    ref_mask: &ProbMask,
    query: &FeatureMap,
    cfg: &MatchConfig,
) -> Result<ScoreMap> {
    cfg.validate()?;
    if reference.channels() != query.channels() {
        return Err(mismatch(
            "channel count differs between reference and query",
        ));
    }
    if reference.grid() != ref_mask.grid() {
        return Err(mismatch("mask grid differs from reference grid"));
    }
    let a = affinity(reference, query, cfg.mechanism);
    let mut bg: Matrix = Vec::new();
    let mut fg: Matrix = Vec::new();
    for (p, row) in a.iter().enumerate() {
        let wb = ref_mask.background()[p];
        let wf = ref_mask.foreground()[p];
        bg.push(row.iter().map(|&v| v * wb).collect());
        fg.push(row.iter().map(|&v| v * wf).collect());
    }
    match cfg.mechanism {
        Mechanism::BijectiveKernel => {
            bg = kernel(&bg, query.width(), cfg.kernel_sigma);
            fg = kernel(&fg, query.width(), cfg.kernel_sigma);
        }
        Mechanism::BijectiveTopK => {
            bg = topk(&bg, cfg.top_k);
            fg = topk(&fg, cfg.top_k);
        }
        Mechanism::Surjective | Mechanism::Equalized => {}
    }
    let nq = query.pixels();
    let mut data = vec![0.0f32; 2 * nq];
    for q in 0..nq {
        let mut mb = bg[0][q];
        let mut mf = fg[0][q];
        for p in 1..bg.len() {
            if bg[p][q] > mb {
                mb = bg[p][q];
            }
            if fg[p][q] > mf {
                mf = fg[p][q];
            }
        }
        data[q] = mb;
        data[nq + q] = mf;
    }
    ScoreMap::new(query.height(), query.width(), data).map_err(|e| match e {
        Error::InvalidData(m) => Error::InvalidData(format!("oracle produced {m}")),
        other => other,
    })
}

/// The equalized affinity as the oracle computes it, for row-sum checks.
pub fn oracle_equalized_affinity(
    reference: &FeatureMap,
    query: &FeatureMap,
) -> Result<Vec<Vec<f32>>> {
    if reference.channels() != query.channels() {
        return Err(mismatch(
            "channel count differs between reference and query",
        ));
    }
    Ok(affinity(reference, query, Mechanism::Equalized))
}
