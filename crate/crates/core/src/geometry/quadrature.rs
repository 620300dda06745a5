//! Reference quadrature rules: Gauss–Legendre on `[0,1]`, symmetric
//! simplex rules, tensor rules on boxes. Every rule comes with a
//! lower-order companion used as an error estimate.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Rule on the reference `k`-simplex: barycentric points and weights
/// summing to one (multiply by the simplex volume).
#[derive(Debug, Clone)]
pub struct SimplexRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

fn perms3(a: f64, b: f64) -> Vec<Vec<f64>> {
    vec![vec![a, b, b], vec![b, a, b], vec![b, b, a]]
}

impl SimplexRule {
    /// Best available rule of polynomial degree at most `order`.
    pub fn for_order(k: usize, order: usize) -> SimplexRule {
        match k {
            0 => SimplexRule { points: vec![vec![1.0]], weights: vec![1.0] },
            1 => {
                let n = order / 2 + 1;
                let (x, w) = gauss_legendre(n);
                SimplexRule {
                    points: x.iter().map(|&t| vec![1.0 - t, t]).collect(),
                    weights: w,
                }
            }
            2 => triangle_rule(order),
            3 => collapsed_tetra((order + 4) / 2),
            _ => panic!("simplex rules implemented for k <= 3"),
        }
    }

    /// Companion of lower degree used for error estimation.
    pub fn check_for_order(k: usize, order: usize) -> SimplexRule {
        match k {
            0 => Self::for_order(0, 0),
            1 => Self::for_order(1, order.saturating_sub(2)),
            2 => triangle_rule(if order >= 3 { 2 } else { 1 }),
            3 => collapsed_tetra(((order + 4) / 2 - 1).max(1)),
            _ => panic!("simplex rules implemented for k <= 3"),
        }
    }
}

fn triangle_rule(order: usize) -> SimplexRule {
    match order {
        0 | 1 => SimplexRule { points: vec![vec![1.0 / 3.0; 3]], weights: vec![1.0] },
        2 => SimplexRule { points: perms3(2.0 / 3.0, 1.0 / 6.0), weights: vec![1.0 / 3.0; 3] },
        _ => {
            let mut points = perms3(0.108103018168070, 0.445948490915965);
            points.extend(perms3(0.816847572980459, 0.091576213509771));
            let mut weights = vec![0.223381589678011; 3];
            weights.extend([0.109951743655322; 3]);
            SimplexRule { points, weights }
        }
    }
}

/// Conical product rule on the tetrahedron from an `n`-point Gauss rule.
fn collapsed_tetra(n: usize) -> SimplexRule {
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (i, &u) in x.iter().enumerate() {
        for (j, &v) in x.iter().enumerate() {
            for (l, &t) in x.iter().enumerate() {
                let l1 = u;
                let l2 = v * (1.0 - u);
                let l3 = t * (1.0 - u) * (1.0 - v);
                points.push(vec![1.0 - l1 - l2 - l3, l1, l2, l3]);
                weights.push(6.0 * w[i] * w[j] * w[l] * (1.0 - u).powi(2) * (1.0 - v));
            }
        }
    }
    SimplexRule { points, weights }
}

/// Tensor Gauss rule on the unit cube `[0,1]^k`.
#[derive(Debug, Clone)]
pub struct BoxRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl BoxRule {
    pub fn tensor(k: usize, n: usize) -> BoxRule {
        let (x, w) = gauss_legendre(n);
        let mut points = vec![vec![]];
        let mut weights = vec![1.0];
        for _ in 0..k {
            let mut np = Vec::new();
            let mut nw = Vec::new();
            for (p, pw) in points.iter().zip(&weights) {
                for (xi, wi) in x.iter().zip(&w) {
                    let mut q = p.clone();
                    q.push(*xi);
                    np.push(q);
                    nw.push(pw * wi);
                }
            }
            points = np;
            weights = nw;
        }
        BoxRule { points, weights }
    }

    /// Points per axis for polynomial degree `order`.
    pub fn points_for_order(order: usize) -> usize {
        order / 2 + 1
    }
}
