//! Interval bound propagation through a [`Network`].

use crate::error::{Error, Result};
use crate::network::{Layer, Network};

/// An axis-aligned input box, usually an ℓ∞ ball around a nominal point
/// optionally clamped to a global range such as the pixel interval `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRegion {
    center: Vec<f64>,
    delta: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputRegion {
    pub fn around(center: Vec<f64>, delta: f64) -> Result<Self> {
        Self::clipped(center, delta, None, None)
    }

    pub fn clipped(
        center: Vec<f64>,
        delta: f64,
        clip_lo: Option<f64>,
        clip_hi: Option<f64>,
    ) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("perturbation radius {delta} must be finite and >= 0")));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite region center".into()));
        }
        let lo = clip_lo.unwrap_or(f64::NEG_INFINITY);
        let hi = clip_hi.unwrap_or(f64::INFINITY);
        let lower: Vec<f64> = center.iter().map(|c| (c - delta).max(lo)).collect();
        let upper: Vec<f64> = center.iter().map(|c| (c + delta).min(hi)).collect();
        for (l, u) in lower.iter().zip(&upper) {
            if l > u {
                return Err(Error::BoundOrder { lower: *l, upper: *u });
            }
        }
        Ok(InputRegion {
            center,
            delta,
            lower,
            upper,
        })
    }

    /// A region given directly by its box; the center is the midpoint and
    /// the radius is the largest half-width.
    pub fn from_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InputShape("box bounds differ in length".into()));
        }
        let mut delta: f64 = 0.0;
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite()) {
                return Err(Error::Numeric("non-finite box bound".into()));
            }
            if l > u {
                return Err(Error::BoundOrder { lower: *l, upper: *u });
            }
            delta = delta.max((u - l) / 2.0);
        }
        let center = lower.iter().zip(&upper).map(|(l, u)| (l + u) / 2.0).collect();
        Ok(InputRegion {
            center,
            delta,
            lower,
            upper,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Exact projection onto the box.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Elementwise bounds `[l_k, u_k]` on every activation `x_k`, `k = 0..=K`.
///
/// Index 0 is the input box. For an affine layer `k` the entry `k + 1`
/// holds its output, which is the pre-activation of a following ReLU; the
/// ReLU's own entry holds the post-activation bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
}

impl LayerBounds {
    pub fn new(lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InputShape("bound lists differ in length".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if l.len() != u.len() {
                return Err(Error::InputShape("bound vectors differ in length".into()));
            }
            for (a, b) in l.iter().zip(u) {
                if !(a.is_finite() && b.is_finite()) {
                    return Err(Error::Numeric("non-finite bound".into()));
                }
                if a > b {
                    return Err(Error::BoundOrder { lower: *a, upper: *b });
                }
            }
        }
        Ok(LayerBounds { lower, upper })
    }

    /// Number of stored activation levels (`K + 1`).
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self, k: usize) -> &[f64] {
        &self.lower[k]
    }

    pub fn upper(&self, k: usize) -> &[f64] {
        &self.upper[k]
    }

    pub fn input_lower(&self) -> &[f64] {
        &self.lower[0]
    }

    pub fn input_upper(&self) -> &[f64] {
        &self.upper[0]
    }

    pub fn output_lower(&self) -> &[f64] {
        self.lower.last().expect("bounds are nonempty")
    }

    pub fn output_upper(&self) -> &[f64] {
        self.upper.last().expect("bounds are nonempty")
    }
}

/// Interval arithmetic: affine layers map the box center exactly and the
/// radius through `|W|`; ReLU clamps both ends at zero.
pub fn propagate_bounds(net: &Network, region: &InputRegion) -> Result<LayerBounds> {
    if region.dim() != net.input_dim() {
        return Err(Error::InputShape(format!(
            "region has dimension {}, network expects {}",
            region.dim(),
            net.input_dim()
        )));
    }
    let mut lower = vec![region.lower().to_vec()];
    let mut upper = vec![region.upper().to_vec()];
    for layer in net.layers() {
        let (l, u) = (lower.last().expect("nonempty"), upper.last().expect("nonempty"));
        let (nl, nu) = propagate_layer(layer, l, u);
        lower.push(nl);
        upper.push(nu);
    }
    LayerBounds::new(lower, upper)
}

pub(crate) fn propagate_layer(layer: &Layer, l: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match layer {
        Layer::Affine { weight, bias } => {
            let mid: Vec<f64> = l.iter().zip(u).map(|(a, b)| (a + b) / 2.0).collect();
            let rad: Vec<f64> = l.iter().zip(u).map(|(a, b)| (b - a) / 2.0).collect();
            let mut nl = Vec::with_capacity(bias.len());
            let mut nu = Vec::with_capacity(bias.len());
            for (i, b) in bias.iter().enumerate() {
                let row = weight.row(i);
                let c = row.iter().zip(&mid).fold(0.0, |acc, (w, m)| acc + w * m) + b;
                let r = row.iter().zip(&rad).fold(0.0, |acc, (w, r)| acc + w.abs() * r);
                nl.push(c - r);
                nu.push(c + r);
            }
            (nl, nu)
        }
        Layer::Relu => (
            l.iter().map(|v| v.max(0.0)).collect(),
            u.iter().map(|v| v.max(0.0)).collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_difference_bounds() {
        let net = Network::new(
            "d",
            2,
            vec![Layer::affine(Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap(), vec![0.0])],
        )
        .unwrap();
        let region = InputRegion::from_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = propagate_bounds(&net, &region).unwrap();
        assert_eq!(b.output_lower(), &[-1.0]);
        assert_eq!(b.output_upper(), &[1.0]);
    }

    #[test]
    fn split_relu_bounds() {
        let net = Network::new(
            "s",
            1,
            vec![
                Layer::affine(Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(), vec![0.0, 0.0]),
                Layer::Relu,
            ],
        )
        .unwrap();
        let b = propagate_bounds(&net, &InputRegion::around(vec![0.0], 1.0).unwrap()).unwrap();
        assert_eq!(b.lower(1), &[-1.0, -1.0]);
        assert_eq!(b.output_lower(), &[0.0, 0.0]);
        assert_eq!(b.output_upper(), &[1.0, 1.0]);
    }

    fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> Network {
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let mut m = Matrix::zeros(w[1], w[0]);
            m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            layers.push(Layer::affine(m, (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect()));
            layers.push(Layer::Relu);
        }
        layers.pop();
        Network::new("r", dims[0], layers).unwrap()
    }

    #[test]
    fn degenerate_box_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, &[3, 8, 8, 2]);
        let x = vec![0.3, -0.2, 0.9];
        let b = propagate_bounds(&net, &InputRegion::around(x.clone(), 0.0).unwrap()).unwrap();
        let trace = net.forward_trace(&x).unwrap();
        for (k, act) in trace.iter().enumerate() {
            assert_eq!(b.lower(k), act.as_slice());
            assert_eq!(b.upper(k), act.as_slice());
        }
    }

    #[test]
    fn sampled_soundness_and_nesting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = random_net(&mut rng, &[4, 10, 6, 3]);
        let center: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let small = propagate_bounds(&net, &InputRegion::around(center.clone(), 0.1).unwrap()).unwrap();
        let big = propagate_bounds(&net, &InputRegion::around(center.clone(), 0.3).unwrap()).unwrap();
        for k in 0..small.len() {
            for i in 0..small.lower(k).len() {
                assert!(big.lower(k)[i] <= small.lower(k)[i] && small.upper(k)[i] <= big.upper(k)[i]);
            }
        }
        for _ in 0..10_000 {
            let x: Vec<f64> = center.iter().map(|c| c + rng.gen_range(-0.1..=0.1)).collect();
            for (k, act) in net.forward_trace(&x).unwrap().iter().enumerate() {
                for (i, v) in act.iter().enumerate() {
                    assert!(*v >= small.lower(k)[i] - 1e-9 && *v <= small.upper(k)[i] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn region_construction() {
        let r = InputRegion::clipped(vec![0.05, 0.5], 0.1, Some(0.0), Some(1.0)).unwrap();
        assert_eq!(r.lower(), &[0.0, 0.4]);
        assert!((r.upper()[0] - 0.15).abs() < 1e-15);
        assert!(matches!(InputRegion::around(vec![0.0], -1.0), Err(Error::Domain(_))));
        assert!(matches!(
            InputRegion::from_box(vec![1.0], vec![0.0]),
            Err(Error::BoundOrder { .. })
        ));
        let mut x = vec![-5.0, 0.45];
        r.clamp(&mut x);
        assert_eq!(x, vec![0.0, 0.45]);
    }
}
