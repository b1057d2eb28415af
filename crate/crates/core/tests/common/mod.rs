#![allow(dead_code)]

use doha::toy::{Clip, ToyModel};
use doha::ssp::SspMap;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance from `v` to the span of `basis` (modified Gram-Schmidt).
pub fn span_residual(basis: &[Vec<f64>], v: &[f64]) -> f64 {
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for q in &ortho {
            let c = dot(&u, q);
            u.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let n = norm(&u);
        if n > 1e-10 * norm(b).max(1.0) {
            ortho.push(u.iter().map(|x| x / n).collect());
        }
    }
    let mut r = v.to_vec();
    for q in &ortho {
        let c = dot(&r, q);
        r.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
    }
    norm(&r)
}

/// Largest relative gap between `analytic` and central differences of `f`.
pub fn max_rel_gap(analytic: &[f64], x: &[f64], h: f64, floor: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut p = x.to_vec();
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let up = f(&p);
        p[k] = x[k] - h;
        let down = f(&p);
        p[k] = x[k];
        let num = (up - down) / (2.0 * h);
        let gap = (analytic[k] - num).abs() / analytic[k].abs().max(num.abs()).max(floor);
        worst = worst.max(gap);
    }
    worst
}

/// Backward-vs-finite-difference gap on one tiny random instance
/// (2 channels, 12 frames, window 4, projection width 3).
pub fn tiny_backward_gap(seed: u64) -> f64 {
    use rand::Rng;
    let mut r = doha::rng::seeded(seed);
    let (c, t, l, p) = (2, 12, 4, 3);
    let mut model = ToyModel::init(c, l, p, 0.0, 1.0, 0.5, seed).unwrap();
    let bias: Vec<f64> = (0..p).map(|_| r.random_range(-0.3..0.3)).collect();
    model.bias = bias;
    let clip = Clip::new(c, t, (0..c * t).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let n = t - l + 1;
    let mut label = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = if i == j { 1.0 } else { r.random_range(-1.0..1.0) };
            label[i * n + j] = v;
            label[j * n + i] = v;
        }
    }
    let label = SspMap::from_values(n, label, l, 30.0).unwrap();
    let (_, grad) = model.backward(&clip, &label).unwrap();
    let params = model.params();
    max_rel_gap(&grad, &params, 1e-5, 1e-8, |q| {
        let mut m = model.clone();
        m.set_params(q).unwrap();
        m.loss(&clip, &label).unwrap()
    })
}

/// Symmetry, unit diagonal and range of a map.
pub fn map_invariant_violation(map: &SspMap) -> Option<String> {
    let n = map.size();
    for i in 0..n {
        if map.get(i, i) != 1.0 {
            return Some(format!("diagonal ({i},{i}) = {}", map.get(i, i)));
        }
        for j in 0..n {
            let v = map.get(i, j);
            if v != map.get(j, i) {
                return Some(format!("asymmetric at ({i},{j})"));
            }
            if !(-1.0..=1.0).contains(&v) {
                return Some(format!("({i},{j}) = {v} outside [-1, 1]"));
            }
        }
    }
    None
}
