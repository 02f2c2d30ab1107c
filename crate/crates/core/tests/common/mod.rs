//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use xbar_sim::numeric::{seeded_stream, Matrix};

/// Dense Gaussian elimination with partial pivoting. `a` is row-major `n × n`.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs())).unwrap();
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            b.swap(k, p);
        }
        let piv = a[k * n + k];
        assert!(piv.abs() > 0.0, "singular system");
        for r in k + 1..n {
            let f = a[r * n + k] / piv;
            if f != 0.0 {
                for c in k..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
                b[r] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k * n + c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    x
}

/// Wire network around an `m × n` array: word node `(i, j)` is unknown
/// `2(i·n + j)`, bit node is `2(i·n + j) + 1`. Sources and grounds are fixed
/// potentials reached through one segment. Requires `r_w, r_b > 0`.
struct Network {
    m: usize,
    n: usize,
    gw: f64,
    gb: f64,
    double: bool,
}

impl Network {
    fn word(&self, i: usize, j: usize) -> usize {
        2 * (i * self.n + j)
    }

    fn bit(&self, i: usize, j: usize) -> usize {
        2 * (i * self.n + j) + 1
    }

    /// Linear stamp of the wires and source/ground terminations.
    fn wires(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let size = 2 * self.m * self.n;
        let mut y = vec![0.0; size * size];
        let mut rhs = vec![0.0; size];
        let link = |y: &mut Vec<f64>, a: usize, b: usize, g: f64| {
            y[a * size + a] += g;
            y[b * size + b] += g;
            y[a * size + b] -= g;
            y[b * size + a] -= g;
        };
        for i in 0..self.m {
            for j in 0..self.n {
                if j + 1 < self.n {
                    link(&mut y, self.word(i, j), self.word(i, j + 1), self.gw);
                }
                if i + 1 < self.m {
                    link(&mut y, self.bit(i, j), self.bit(i + 1, j), self.gb);
                }
            }
        }
        let tie = |y: &mut Vec<f64>, rhs: &mut Vec<f64>, a: usize, g: f64, potential: f64| {
            y[a * size + a] += g;
            rhs[a] += g * potential;
        };
        for i in 0..self.m {
            tie(&mut y, &mut rhs, self.word(i, 0), self.gw, v[i]);
            if self.double {
                tie(&mut y, &mut rhs, self.word(i, self.n - 1), self.gw, v[i]);
            }
        }
        for j in 0..self.n {
            tie(&mut y, &mut rhs, self.bit(self.m - 1, j), self.gb, 0.0);
            if self.double {
                tie(&mut y, &mut rhs, self.bit(0, j), self.gb, 0.0);
            }
        }
        (y, rhs)
    }

    fn outputs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let mut i = x[self.bit(self.m - 1, j)] * self.gb;
                if self.double {
                    i += x[self.bit(0, j)] * self.gb;
                }
                i
            })
            .collect()
    }
}

/// Bit-line termination currents from a full dense nodal solve.
pub fn dense_kcl(g: &Matrix, v: &[f64], r_w: f64, r_b: f64, double: bool) -> Vec<f64> {
    let (m, n) = g.shape();
    let net = Network { m, n, gw: 1.0 / r_w, gb: 1.0 / r_b, double };
    let (mut y, rhs) = net.wires(v);
    let size = rhs.len();
    for i in 0..m {
        for j in 0..n {
            let (a, b) = (net.word(i, j), net.bit(i, j));
            let gij = g[(i, j)];
            y[a * size + a] += gij;
            y[b * size + b] += gij;
            y[a * size + b] -= gij;
            y[b * size + a] -= gij;
        }
    }
    net.outputs(&solve_dense(y, rhs))
}

/// Same network with sinh devices `G·V_r·sinh(γV/V_r)/sinh γ`, solved by
/// Newton's method on the full dense Jacobian.
pub fn dense_kcl_sinh(g: &Matrix, v: &[f64], r_w: f64, r_b: f64, double: bool, gamma: f64, v_read: f64) -> Vec<f64> {
    let (m, n) = g.shape();
    let net = Network { m, n, gw: 1.0 / r_w, gb: 1.0 / r_b, double };
    let (y, rhs) = net.wires(v);
    let size = rhs.len();
    let dev = |gij: f64, d: f64| gij * v_read * (gamma * d / v_read).sinh() / gamma.sinh();
    let slope = |gij: f64, d: f64| gij * gamma * (gamma * d / v_read).cosh() / gamma.sinh();
    let mut x = vec![0.0; size];
    for _ in 0..100 {
        let mut f: Vec<f64> = (0..size).map(|r| (0..size).map(|c| y[r * size + c] * x[c]).sum::<f64>() - rhs[r]).collect();
        let mut jac = y.clone();
        for i in 0..m {
            for j in 0..n {
                let (a, b) = (net.word(i, j), net.bit(i, j));
                let d = x[a] - x[b];
                let (cur, s) = (dev(g[(i, j)], d), slope(g[(i, j)], d));
                f[a] += cur;
                f[b] -= cur;
                jac[a * size + a] += s;
                jac[b * size + b] += s;
                jac[a * size + b] -= s;
                jac[b * size + a] -= s;
            }
        }
        let step = solve_dense(jac, f.clone());
        x.iter_mut().zip(&step).for_each(|(xi, s)| *xi -= s);
        if step.iter().fold(0.0f64, |a, s| a.max(s.abs())) < 1e-15 {
            break;
        }
    }
    net.outputs(&x)
}

pub fn random_matrix(m: usize, n: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut s = seeded_stream(seed, 77);
    Matrix::from_fn(m, n, |_, _| s.uniform_in(lo, hi))
}

pub fn random_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut s = seeded_stream(seed, 78);
    (0..n).map(|_| s.uniform_in(lo, hi)).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}
