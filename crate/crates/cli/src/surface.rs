//! Decision surface over the plane through three images.

use std::fmt::Write as _;

use specverify::network::{argmax, Network};
use specverify::{Error, Result};

/// One lattice point of the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub s: f64,
    pub t: f64,
    pub label: usize,
}

fn coordinate(k: usize, n: usize, (lo, hi): (f64, f64)) -> f64 {
    if n == 1 {
        lo
    } else if k == n - 1 {
        hi
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

/// Argmax label of `clip(a + s(b − a) + t(c − a), 0, 1)` on a `grid × grid`
/// lattice over `range²`, `s` varying slowest.
pub fn decision_surface(
    net: &Network,
    [a, b, c]: [&[f64]; 3],
    grid: usize,
    range: (f64, f64),
) -> Result<Vec<SurfacePoint>> {
    let dim = net.input_dim();
    if [a, b, c].iter().any(|img| img.len() != dim) {
        return Err(Error::InputShape(format!("surface images must have {dim} entries")));
    }
    if grid == 0 {
        return Err(Error::Config("surface grid needs at least one point".into()));
    }
    if !(range.0.is_finite() && range.1.is_finite() && range.0 <= range.1) {
        return Err(Error::Config(format!("bad surface range {range:?}")));
    }
    let mut out = Vec::with_capacity(grid * grid);
    let mut x = vec![0.0; dim];
    for i in 0..grid {
        let s = coordinate(i, grid, range);
        for j in 0..grid {
            let t = coordinate(j, grid, range);
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = (a[k] + s * (b[k] - a[k]) + t * (c[k] - a[k])).clamp(0.0, 1.0);
            }
            out.push(SurfacePoint {
                s,
                t,
                label: argmax(&net.forward(&x)?),
            });
        }
    }
    Ok(out)
}

pub fn to_csv(points: &[SurfacePoint]) -> String {
    let mut text = String::from("s,t,label\n");
    for p in points {
        let _ = writeln!(text, "{},{},{}", p.s, p.t, p.label);
    }
    text
}
