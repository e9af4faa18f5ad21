//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written with plain nested loops over `Vec<Vec<..>>`
//! in f64 and shares no code path with the library's forward/backward.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selar::{Classifier, FeatureMap, Matrix, PoolMethod, PoolSpace, PoolingConfig};

/// One random problem: `v[i][j][d]`, `w[l][d]`, raw attributes `a[c][l]`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub v: Vec<Vec<Vec<f64>>>,
    pub w: Vec<Vec<f64>>,
    pub attrs: Vec<Vec<f64>>,
    pub label: usize,
}

impl Instance {
    pub fn m(&self) -> usize {
        self.v.len()
    }
    pub fn d(&self) -> usize {
        self.v[0][0].len()
    }
    pub fn l(&self) -> usize {
        self.w.len()
    }
    pub fn c(&self) -> usize {
        self.attrs.len()
    }

    pub fn feature_map(&self) -> FeatureMap<f64> {
        let data = self.v.iter().flatten().flatten().copied().collect();
        FeatureMap::new(self.m(), self.d(), data).unwrap()
    }

    pub fn weights(&self) -> Matrix<f64> {
        Matrix::from_rows(&self.w).unwrap()
    }

    pub fn classifier(&self) -> Classifier<f64> {
        Classifier::joint(&Matrix::from_rows(&self.attrs).unwrap()).unwrap()
    }

    pub fn feature_map_f32(&self) -> FeatureMap<f32> {
        self.feature_map().cast()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance with the given dimensions; attribute rows are non-negative
/// with at least one strictly positive entry.
pub fn random_instance(r: &mut ChaCha8Rng, m: usize, d: usize, l: usize, c: usize) -> Instance {
    let v = (0..m)
        .map(|_| {
            (0..m)
                .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let w = (0..l)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let attrs = (0..c)
        .map(|_| {
            let mut row: Vec<f64> = (0..l)
                .map(|_| {
                    if r.random_bool(0.6) {
                        r.random_range(0.1..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let k = r.random_range(0..l);
            row[k] = r.random_range(0.1..1.0);
            row
        })
        .collect();
    let label = r.random_range(0..c);
    Instance { v, w, attrs, label }
}

pub fn random_dims(
    r: &mut ChaCha8Rng,
    m: (usize, usize),
    d: (usize, usize),
    l: (usize, usize),
    c: (usize, usize),
) -> (usize, usize, usize, usize) {
    (
        r.random_range(m.0..=m.1),
        r.random_range(d.0..=d.1),
        r.random_range(l.0..=l.1),
        r.random_range(c.0..=c.1),
    )
}

pub fn normalized_rows(attrs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    attrs
        .iter()
        .map(|row| {
            let mut s = 0.0;
            for x in row {
                s += x * x;
            }
            let n = s.sqrt();
            row.iter().map(|x| x / n).collect()
        })
        .collect()
}

fn pool_values(values: &[f64], method: PoolMethod) -> f64 {
    match method {
        PoolMethod::Gap => {
            let mut s = 0.0;
            for &x in values {
                s += x;
            }
            s / values.len() as f64
        }
        PoolMethod::Gmp => {
            let mut best = values[0];
            for &x in values {
                if x > best {
                    best = x;
                }
            }
            best
        }
    }
}

/// All pre-pooling values of the pooled stage, one list per pooled channel.
pub fn pre_pool(inst: &Instance, w: &[Vec<f64>], space: PoolSpace) -> Vec<Vec<f64>> {
    let (m, d, l) = (inst.m(), inst.d(), w.len());
    let a = normalized_rows(&inst.attrs);
    let local = |i: usize, j: usize, k: usize| -> f64 {
        let mut s = 0.0;
        for dd in 0..d {
            s += w[k][dd] * inst.v[i][j][dd];
        }
        s
    };
    match space {
        PoolSpace::Visual => (0..d)
            .map(|dd| {
                let mut vals = Vec::new();
                for i in 0..m {
                    for j in 0..m {
                        vals.push(inst.v[i][j][dd]);
                    }
                }
                vals
            })
            .collect(),
        PoolSpace::Attribute => (0..l)
            .map(|k| {
                let mut vals = Vec::new();
                for i in 0..m {
                    for j in 0..m {
                        vals.push(local(i, j, k));
                    }
                }
                vals
            })
            .collect(),
        PoolSpace::Class => (0..inst.c())
            .map(|c| {
                let mut vals = Vec::new();
                for i in 0..m {
                    for j in 0..m {
                        let mut s = 0.0;
                        for k in 0..l {
                            s += a[c][k] * local(i, j, k);
                        }
                        vals.push(s);
                    }
                }
                vals
            })
            .collect(),
    }
}

/// Brute-force compatibility logits for `w`.
pub fn oracle_logits(inst: &Instance, w: &[Vec<f64>], cfg: PoolingConfig) -> Vec<f64> {
    let a = normalized_rows(&inst.attrs);
    let pooled: Vec<f64> = pre_pool(inst, w, cfg.space)
        .iter()
        .map(|vals| pool_values(vals, cfg.method))
        .collect();
    match cfg.space {
        PoolSpace::Visual => {
            let emb: Vec<f64> = w
                .iter()
                .map(|row| {
                    let mut s = 0.0;
                    for (x, y) in row.iter().zip(&pooled) {
                        s += x * y;
                    }
                    s
                })
                .collect();
            matvec(&a, &emb)
        }
        PoolSpace::Attribute => matvec(&a, &pooled),
        PoolSpace::Class => pooled,
    }
}

fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| {
            let mut s = 0.0;
            for (p, q) in row.iter().zip(x) {
                s += p * q;
            }
            s
        })
        .collect()
}

/// `−log softmax(z)[y]` without the max shift (fine for the moderate logits used here).
pub fn oracle_ce(z: &[f64], y: usize) -> f64 {
    let mut s = 0.0;
    for &x in z {
        s += x.exp();
    }
    s.ln() - z[y]
}

/// Smallest gap between the largest and second-largest value of any pooled
/// channel; infinite when a channel has a single location.
pub fn min_top2_gap(inst: &Instance, space: PoolSpace) -> f64 {
    let mut worst = f64::INFINITY;
    for vals in pre_pool(inst, &inst.w, space) {
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted.len() > 1 {
            worst = worst.min(sorted[0] - sorted[1]);
        }
    }
    worst
}

/// Central finite differences of the CE loss with respect to every entry of `w`.
pub fn finite_difference_grad(inst: &Instance, cfg: PoolingConfig, step: f64) -> Vec<Vec<f64>> {
    let mut grad = vec![vec![0.0; inst.d()]; inst.l()];
    for l in 0..inst.l() {
        for d in 0..inst.d() {
            let mut plus = inst.w.clone();
            plus[l][d] += step;
            let mut minus = inst.w.clone();
            minus[l][d] -= step;
            let fp = oracle_ce(&oracle_logits(inst, &plus, cfg), inst.label);
            let fm = oracle_ce(&oracle_logits(inst, &minus, cfg), inst.label);
            grad[l][d] = (fp - fm) / (2.0 * step);
        }
    }
    grad
}

/// `max |a − b| / max |b|` over all entries, with the denominator floored at
/// 1e-8 so exactly-zero gradients are compared in absolute terms.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// Relative difference used for logit comparisons.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn all_configs() -> [PoolingConfig; 6] {
    PoolingConfig::all()
}
