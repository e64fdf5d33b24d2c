//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use specverify::lp::LinearProgram;
use specverify::network::{Layer, Matrix, Network};
use specverify::specs::Specification;

pub fn random_net(rng: &mut impl Rng, dims: &[usize]) -> Network {
    let mut layers = Vec::new();
    for w in dims.windows(2) {
        let mut m = Matrix::zeros(w[1], w[0]);
        m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        layers.push(Layer::affine(m, (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect()));
        layers.push(Layer::Relu);
    }
    layers.pop();
    Network::new("random", dims[0], layers).unwrap()
}

pub const SPEC_KINDS: [&str; 5] = ["linear", "semantic_softmax", "digit_sum", "quadratic", "entropy"];

/// A random specification of the given kind for a network with `n` inputs
/// and `m` outputs.
pub fn random_spec(rng: &mut impl Rng, kind: &str, n: usize, m: usize) -> Specification {
    match kind {
        "linear" => Specification::Linear {
            c: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            d: rng.gen_range(-1.0..1.0),
        },
        "semantic_softmax" => {
            let truth = rng.gen_range(0..m);
            Specification::SemanticSoftmax {
                dist: (0..m).map(|j| if j == truth { 0.0 } else { rng.gen_range(0.0..1.0) }).collect(),
                epsilon: rng.gen_range(0.0..0.6),
            }
        }
        "digit_sum" => Specification::DigitSum {
            targets: vec![rng.gen_range(0..m), rng.gen_range(0..m)],
            n_labels: m,
            epsilon: rng.gen_range(0.0..1.5),
        },
        "quadratic" => {
            let k = 1 + n + m;
            let mut q = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in i..k {
                    let v = rng.gen_range(-1.0..1.0);
                    q[i][j] = v;
                    q[j][i] = v;
                }
            }
            Specification::Quadratic { q }
        }
        "entropy" => Specification::Entropy {
            floor: rng.gen_range(0.0..0.7),
        },
        other => panic!("unknown kind {other}"),
    }
}

/// Max of the objective over all vertices of a bounded LP, or `None` when
/// no vertex is feasible. Every variable must have finite bounds.
///
/// Each candidate vertex is the solution of `n` linearly independent
/// hyperplanes drawn from the rows and the variable bounds.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mut planes = Vec::new();
    for c in lp.constraints() {
        let mut a = vec![0.0; n];
        for &(v, coef) in c.terms() {
            a[v.0] += coef;
        }
        planes.push((a, c.rhs()));
    }
    for (j, v) in lp.vars().iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), v.lower));
        planes.push((e, v.upper));
    }
    let mut best: Option<f64> = None;
    let mut choice: Vec<usize> = (0..n).collect();
    loop {
        let rows: Vec<&(Vec<f64>, f64)> = choice.iter().map(|&i| &planes[i]).collect();
        if let Some(x) = solve_square(&rows) {
            if lp.max_violation(&x) <= 1e-9 {
                let val = lp.objective_value(&x);
                best = Some(best.map_or(val, |b: f64| b.max(val)));
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if choice[k] < planes.len() - n + k {
                choice[k] += 1;
                for t in k + 1..n {
                    choice[t] = choice[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn solve_square(rows: &[&(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut a: Vec<Vec<f64>> = rows.iter().map(|(r, b)| r.iter().copied().chain([*b]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for i in 0..n {
            if i != col {
                let f = a[i][col] / a[col][col];
                for k in col..=n {
                    a[i][k] -= f * a[col][k];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}
