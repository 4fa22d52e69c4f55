#![allow(dead_code)]

use std::path::PathBuf;

use gridmpv::grid_model::{Bus, BusKind, GridTopology, Line};
use num_complex::Complex64;
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn data(name: &str) -> PathBuf {
    data_dir().join(name)
}

/// Random tree on `n` buses: bus `j` hangs off a uniformly chosen earlier bus.
/// Bus ids are shuffled so the slack is not always first in line order.
pub fn random_radial<R: Rng>(rng: &mut R, n: usize) -> GridTopology {
    let mut buses = vec![Bus::new(0, BusKind::Slack)];
    buses.extend((1..n).map(|i| Bus::new(i, BusKind::LoadCapable)));
    let mut lines: Vec<Line> = (1..n)
        .map(|j| {
            let parent = rng.random_range(0..j);
            let r = rng.random_range(0.005..0.08);
            let x = rng.random_range(0.002..0.04);
            if rng.random_bool(0.5) {
                Line::new(parent, j, r, x, 200.0)
            } else {
                Line::new(j, parent, r, x, 200.0)
            }
        })
        .collect();
    for i in (1..lines.len()).rev() {
        lines.swap(i, rng.random_range(0..=i));
    }
    GridTopology::new(buses, lines, None)
}

pub fn random_injections<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.02..0.015)).collect();
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-0.008..0.008)).collect();
    p[0] = 0.0;
    q[0] = 0.0;
    (p, q)
}

fn solve_dense(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                let t = a[k][j];
                a[i][j] -= f * t;
            }
            let t = b[k];
            b[i] -= f * t;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let s: Complex64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Bus-injection fixed point `V = V0 + Z conj(S / V)` on the nodal admittance
/// matrix with the slack eliminated. Returns voltage magnitudes.
pub fn bim_oracle(topology: &GridTopology, p: &[f64], q: &[f64], v0: f64) -> Vec<f64> {
    let n = topology.n_buses();
    let zero = Complex64::new(0.0, 0.0);
    let mut y = vec![vec![zero; n]; n];
    let mut add = |a: usize, b: usize, r: f64, x: f64| {
        let yl = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        y[a][a] += yl;
        y[b][b] += yl;
        y[a][b] -= yl;
        y[b][a] -= yl;
    };
    for l in &topology.lines {
        add(l.from_bus, l.to_bus, l.r, l.x);
    }
    if let Some(t) = &topology.transformer {
        add(t.hv_bus, t.lv_bus, t.r, t.x);
    }
    let m = n - 1;
    let yrr: Vec<Vec<Complex64>> = (1..n).map(|i| (1..n).map(|j| y[i][j]).collect()).collect();
    let mut z = vec![vec![zero; m]; m];
    for c in 0..m {
        let mut e = vec![zero; m];
        e[c] = Complex64::new(1.0, 0.0);
        let col = solve_dense(yrr.clone(), e);
        for r in 0..m {
            z[r][c] = col[r];
        }
    }
    let vs = Complex64::new(v0, 0.0);
    let base: Vec<Complex64> = (1..n).map(|i| -y[i][0] * vs).collect();
    let w: Vec<Complex64> = (0..m).map(|r| (0..m).map(|c| z[r][c] * base[c]).sum()).collect();
    let mut v = vec![vs; m];
    for _ in 0..10_000 {
        let cur: Vec<Complex64> = (0..m)
            .map(|k| (Complex64::new(p[k + 1], q[k + 1]) / v[k]).conj())
            .collect();
        let next: Vec<Complex64> = (0..m)
            .map(|r| w[r] + (0..m).map(|c| z[r][c] * cur[c]).sum::<Complex64>())
            .collect();
        let d = next.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        v = next;
        if d < 1e-14 {
            break;
        }
    }
    std::iter::once(v0).chain(v.iter().map(|c| c.norm())).collect()
}

/// Receiving-end voltage of a two-bus line from the closed form
/// `V2^4 + (2(rP + xQ) - V1^2) V2^2 + |z|^2 (P^2 + Q^2) = 0`, upper root.
/// `p`, `q` are net injections at bus 1 (generation positive).
pub fn two_bus_closed_form(r: f64, x: f64, p: f64, q: f64, v1: f64) -> f64 {
    let (pl, ql) = (-p, -q);
    let b = 2.0 * (r * pl + x * ql) - v1 * v1;
    let c = (r * r + x * x) * (pl * pl + ql * ql);
    let disc = b * b - 4.0 * c;
    assert!(disc >= 0.0, "no real root");
    let u = (-b + disc.sqrt()) / 2.0;
    u.sqrt()
}
