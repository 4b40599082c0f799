//! Seeded instance generators shared by the integration suites.
#![allow(dead_code)]

use privbound::model::{Component, Problem, User};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Random joint on `nx × ny` with roughly one entry in six zeroed.
pub fn joint_rows(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> Vec<Vec<f64>> {
    loop {
        let mut w = weights(rng, nx * ny);
        for v in w.iter_mut() {
            if rng.gen_bool(1.0 / 6.0) {
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            continue;
        }
        let rows: Vec<Vec<f64>> = w.chunks(ny).map(|r| r.iter().map(|v| v / s).collect()).collect();
        // keep the declared shape: every row and column carries mass
        let cols_ok = (0..ny).all(|y| rows.iter().any(|r| r[y] > 0.0));
        if rows.iter().all(|r| r.iter().any(|&v| v > 0.0)) && cols_ok {
            return rows;
        }
    }
}

pub fn component(rng: &mut ChaCha8Rng, name: &str, max: usize) -> Component {
    let nx = rng.gen_range(2..=max);
    let ny = rng.gen_range(2..=max);
    Component::from_rows(name, &joint_rows(rng, nx, ny)).unwrap()
}

/// `X = f(Y)` with `f` onto `{0..nx}`.
pub fn deterministic_component(rng: &mut ChaCha8Rng, name: &str) -> Component {
    let ny = rng.gen_range(2..=3);
    let nx = rng.gen_range(2..=ny);
    let py = weights(rng, ny);
    let mut f: Vec<usize> = (0..ny).map(|y| if y < nx { y } else { rng.gen_range(0..nx) }).collect();
    f.shuffle(rng);
    let mut rows = vec![vec![0.0; ny]; nx];
    for y in 0..ny {
        rows[f[y]][y] = py[y];
    }
    Component::from_rows(name, &rows).unwrap()
}

pub fn users(rng: &mut ChaCha8Rng, n: usize) -> Vec<User> {
    let k = rng.gen_range(1..=3);
    (0..k)
        .map(|_| {
            let mut demands: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
            if demands.is_empty() {
                demands.push(rng.gen_range(0..n));
            }
            User::new(demands, rng.gen_range(0.1..2.0))
        })
        .collect()
}

pub fn problem(rng: &mut ChaCha8Rng, max_n: usize, max_size: usize) -> Problem {
    let n = rng.gen_range(1..=max_n);
    let comps: Vec<Component> = (0..n).map(|i| component(rng, &format!("c{i}"), max_size)).collect();
    let total: f64 = comps.iter().map(Component::mi).sum();
    let users = users(rng, n);
    let eps = rng.gen_range(0.0..0.9) * total;
    Problem::new(comps, users, eps).unwrap()
}

/// Random joint on `nx × ny` that may leave whole rows or columns empty.
pub fn joint_rows_any(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> Vec<Vec<f64>> {
    loop {
        let mut w = weights(rng, nx * ny);
        for v in w.iter_mut() {
            if rng.gen_bool(0.25) {
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.chunks(ny).map(|r| r.iter().map(|v| v / s).collect()).collect();
        }
    }
}
