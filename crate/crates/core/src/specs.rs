//! Specifications `F(x, y) ≤ 0`: exact evaluation, input gradients for the
//! falsifier, and LP encodings of their convex relaxations.
//!
//! Softmax-based kinds are relaxed in denominator-cleared form. Multiplying
//! by the positive normalizer `Z = Σ_j exp(y_j)` keeps the sign of `F`, and
//! the cleared expression is linear in `exp(·)` atoms. Encodings also shift
//! the logits by a constant `c` (the largest output upper bound) so that all
//! exponentials stay in `(0, 1]`; this multiplies the cleared form by
//! `exp(−c) > 0` and so does not change its sign either.

use serde::{Deserialize, Serialize};

use crate::bounds::LayerBounds;
use crate::error::{Error, Result};
use crate::lp::{LinearConstraint, LinearProgram, VarId};
use crate::network::{log_softmax, softmax};
use crate::relax::{
    self, diagonal_relaxation, exp_relaxation, exp_relaxation_expr, mccormick, neg_zlogz_tangents, ExpSide,
    DEGENERATE_WIDTH,
};

pub const DEFAULT_SEMANTIC_EPSILON: f64 = 0.23;
pub const DEFAULT_DIGIT_SUM_EPSILON: f64 = 1.0;
pub const DEFAULT_ENTROPY_FLOOR: f64 = 0.1;
pub const MAX_DIGIT_SUM_COPIES: usize = 4;
pub const MAX_DIGIT_SUM_TERMS: usize = 10_000;

/// Digit-sum terms whose largest shifted value is below this are replaced
/// by their worst case, a constant.
pub const NEGLIGIBLE_TERM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Specification {
    /// `cᵀy + d`.
    Linear { c: Vec<f64>, d: f64 },
    /// Expected label distance under the softmax, minus `epsilon`.
    SemanticSoftmax { dist: Vec<f64>, epsilon: f64 },
    /// Expected absolute error of the summed predicted digits over
    /// `targets.len()` independent inputs, minus `epsilon`.
    DigitSum {
        targets: Vec<usize>,
        n_labels: usize,
        epsilon: f64,
    },
    /// `(1, x, y)ᵀ Q (1, x, y)`.
    Quadratic { q: Vec<Vec<f64>> },
    /// `floor + Σ p log p`: violated when the prediction entropy drops below `floor`.
    Entropy { floor: f64 },
}

/// Variables of one network copy inside an LP.
#[derive(Debug, Clone, Copy)]
pub struct CopyVars<'a> {
    pub x: &'a [VarId],
    pub y: &'a [VarId],
    pub bounds: &'a LayerBounds,
}

/// Result of [`Specification::encode`]: `z` upper-bounds
/// `exp(−shift) · cleared F` over the relaxed set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedSpec {
    pub z: VarId,
    pub shift: f64,
}

impl Specification {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Specification =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("specification: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Number of network evaluations the specification couples.
    pub fn arity(&self) -> usize {
        match self {
            Specification::DigitSum { targets, .. } => targets.len(),
            _ => 1,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Specification::Linear { .. } => "linear",
            Specification::SemanticSoftmax { .. } => "semantic_softmax",
            Specification::DigitSum { .. } => "digit_sum",
            Specification::Quadratic { .. } => "quadratic",
            Specification::Entropy { .. } => "entropy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Specification::Linear { c, d } => {
                if !c.iter().chain([d]).all(|v| v.is_finite()) {
                    return Err(Error::Schema("linear specification has non-finite entries".into()));
                }
            }
            Specification::SemanticSoftmax { dist, epsilon } => {
                if dist.is_empty() || !epsilon.is_finite() {
                    return Err(Error::Schema("semantic specification needs distances and a finite epsilon".into()));
                }
                if !dist.iter().all(|d| d.is_finite() && *d >= 0.0) {
                    return Err(Error::Schema("label distances must be finite and nonnegative".into()));
                }
                if !dist.iter().any(|d| *d == 0.0) {
                    return Err(Error::Schema("the true label must have distance 0".into()));
                }
            }
            Specification::DigitSum {
                targets,
                n_labels,
                epsilon,
            } => {
                if targets.is_empty() || targets.len() > MAX_DIGIT_SUM_COPIES {
                    return Err(Error::Config(format!(
                        "digit sum supports 1..={MAX_DIGIT_SUM_COPIES} inputs, got {}",
                        targets.len()
                    )));
                }
                if *n_labels == 0 || targets.iter().any(|t| t >= n_labels) {
                    return Err(Error::Schema("digit sum targets must be valid labels".into()));
                }
                let terms = n_labels.checked_pow(targets.len() as u32);
                if terms.map_or(true, |t| t > MAX_DIGIT_SUM_TERMS) {
                    return Err(Error::Config(format!(
                        "digit sum over {} inputs with {n_labels} labels exceeds {MAX_DIGIT_SUM_TERMS} terms",
                        targets.len()
                    )));
                }
                if !epsilon.is_finite() {
                    return Err(Error::Schema("digit sum epsilon must be finite".into()));
                }
            }
            Specification::Quadratic { q } => {
                let n = q.len();
                if n == 0 || q.iter().any(|row| row.len() != n) {
                    return Err(Error::Schema("Q must be a nonempty square matrix".into()));
                }
                for i in 0..n {
                    for j in 0..n {
                        if !q[i][j].is_finite() {
                            return Err(Error::Schema("Q has non-finite entries".into()));
                        }
                        if (q[i][j] - q[j][i]).abs() > 1e-12 * (1.0 + q[i][j].abs()) {
                            return Err(Error::Schema(format!("Q is not symmetric at ({i}, {j})")));
                        }
                    }
                }
            }
            Specification::Entropy { floor } => {
                if !floor.is_finite() {
                    return Err(Error::Schema("entropy floor must be finite".into()));
                }
            }
        }
        Ok(())
    }

    fn check_shapes(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
        if xs.len() != self.arity() || ys.len() != self.arity() {
            return Err(Error::InputShape(format!(
                "{} specification expects {} input/output pairs, got {}/{}",
                self.kind_name(),
                self.arity(),
                xs.len(),
                ys.len()
            )));
        }
        let m = ys[0].len();
        let want_m = match self {
            Specification::Linear { c, .. } => Some(c.len()),
            Specification::SemanticSoftmax { dist, .. } => Some(dist.len()),
            Specification::DigitSum { n_labels, .. } => Some(*n_labels),
            Specification::Quadratic { q } => {
                if q.len() != 1 + xs[0].len() + m {
                    return Err(Error::InputShape(format!(
                        "Q has size {} but (1, x, y) has length {}",
                        q.len(),
                        1 + xs[0].len() + m
                    )));
                }
                None
            }
            Specification::Entropy { .. } => None,
        };
        for y in ys {
            if let Some(w) = want_m {
                if y.len() != w {
                    return Err(Error::InputShape(format!("output has length {}, expected {w}", y.len())));
                }
            }
            if y.is_empty() {
                return Err(Error::InputShape("empty output".into()));
            }
        }
        Ok(())
    }

    /// Exact value of `F` at the given inputs/outputs; satisfied iff `≤ 0`.
    pub fn eval(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
        self.check_shapes(xs, ys)?;
        Ok(match self {
            Specification::Linear { c, d } => dot(c, &ys[0]) + d,
            Specification::SemanticSoftmax { dist, epsilon } => dot(&softmax(&ys[0])?, dist) - epsilon,
            Specification::DigitSum { targets, epsilon, .. } => {
                let probs = ys.iter().map(|y| softmax(y)).collect::<Result<Vec<_>>>()?;
                let total = convolve_all(&probs);
                let t: usize = targets.iter().sum();
                expected_abs_error(&total, t as f64) - epsilon
            }
            Specification::Quadratic { q } => {
                let a = stack(&xs[0], &ys[0]);
                quad_form(q, &a)
            }
            Specification::Entropy { floor } => {
                let lp = log_softmax(&ys[0])?;
                floor + lp.iter().map(|l| l.exp() * l).sum::<f64>()
            }
        })
    }

    /// Denominator-cleared value `exp(−shift)·Z·F` for softmax kinds; `F`
    /// itself for linear and quadratic kinds. This is the quantity bounded by
    /// the LP relaxation and has the same sign as [`eval`](Self::eval).
    pub fn cleared_value(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], shift: f64) -> Result<f64> {
        self.check_shapes(xs, ys)?;
        Ok(match self {
            Specification::Linear { .. } | Specification::Quadratic { .. } => self.eval(xs, ys)?,
            Specification::SemanticSoftmax { dist, epsilon } => ys[0]
                .iter()
                .zip(dist)
                .map(|(y, d)| (y - shift).exp() * (d - epsilon))
                .sum(),
            Specification::DigitSum {
                targets,
                n_labels,
                epsilon,
            } => {
                let t: i64 = targets.iter().map(|&v| v as i64).sum();
                let mut total = 0.0;
                for tuple in LabelTuples::new(*n_labels, targets.len()) {
                    let s: i64 = tuple.iter().map(|&j| j as i64).sum();
                    let logit: f64 = tuple.iter().zip(ys).map(|(&j, y)| y[j]).sum();
                    total += ((s - t).abs() as f64 - epsilon) * (logit - shift).exp();
                }
                total
            }
            Specification::Entropy { floor } => {
                let z: f64 = ys[0].iter().map(|y| (y - shift).exp()).sum();
                ys[0]
                    .iter()
                    .map(|y| (floor + y - shift) * (y - shift).exp())
                    .sum::<f64>()
                    - z * z.ln()
            }
        })
    }

    /// `(∂F/∂x_n, ∂F/∂y_n)` for every copy `n`.
    pub fn gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_shapes(xs, ys)?;
        let zeros_x = || xs.iter().map(|x| vec![0.0; x.len()]).collect::<Vec<_>>();
        Ok(match self {
            Specification::Linear { c, .. } => (zeros_x(), vec![c.clone()]),
            Specification::SemanticSoftmax { dist, .. } => {
                let p = softmax(&ys[0])?;
                (zeros_x(), vec![softmax_pullback(&p, dist)])
            }
            Specification::DigitSum { targets, .. } => {
                let probs = ys.iter().map(|y| softmax(y)).collect::<Result<Vec<_>>>()?;
                let t: usize = targets.iter().sum();
                let mut gy = Vec::with_capacity(probs.len());
                for n in 0..probs.len() {
                    let others: Vec<Vec<f64>> = probs
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != n)
                        .map(|(_, p)| p.clone())
                        .collect();
                    let rest = convolve_all(&others);
                    let dp: Vec<f64> = (0..probs[n].len())
                        .map(|k| {
                            rest.iter()
                                .enumerate()
                                .map(|(s, pr)| pr * ((s + k) as f64 - t as f64).abs())
                                .sum()
                        })
                        .collect();
                    gy.push(softmax_pullback(&probs[n], &dp));
                }
                (zeros_x(), gy)
            }
            Specification::Quadratic { q } => {
                let a = stack(&xs[0], &ys[0]);
                let g: Vec<f64> = (0..a.len())
                    .map(|i| (0..a.len()).map(|j| (q[i][j] + q[j][i]) * a[j]).sum())
                    .collect();
                let n = xs[0].len();
                (vec![g[1..1 + n].to_vec()], vec![g[1 + n..].to_vec()])
            }
            Specification::Entropy { .. } => {
                let lp = log_softmax(&ys[0])?;
                let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                let g: Vec<f64> = lp.iter().map(|l| l + 1.0).collect();
                (zeros_x(), vec![softmax_pullback(&p, &g)])
            }
        })
    }

    /// Adds the relaxation `C(F, S_in, S_out)` to `lp` and returns the
    /// variable `z` whose maximum upper-bounds the (cleared) specification.
    pub fn encode(&self, lp: &mut LinearProgram, copies: &[CopyVars<'_>], n_tangents: usize) -> Result<EncodedSpec> {
        if copies.len() != self.arity() {
            return Err(Error::InputShape(format!(
                "{} specification expects {} network copies, got {}",
                self.kind_name(),
                self.arity(),
                copies.len()
            )));
        }
        for c in copies {
            if c.bounds.is_empty() || c.bounds.output_lower().len() != c.y.len() {
                return Err(Error::Consistency("output bounds are missing for a network copy".into()));
            }
        }
        let mut objective: Vec<(VarId, f64)> = Vec::new();
        let mut constant = 0.0;
        let mut shift = 0.0;
        match self {
            Specification::Linear { c, d } => {
                if c.len() != copies[0].y.len() {
                    return Err(Error::InputShape("linear coefficients do not match the output".into()));
                }
                objective.extend(copies[0].y.iter().copied().zip(c.iter().copied()));
                constant = *d;
            }
            Specification::SemanticSoftmax { dist, epsilon } => {
                let cp = &copies[0];
                if dist.len() != cp.y.len() {
                    return Err(Error::InputShape("distance vector does not match the output".into()));
                }
                let (lo, hi) = (cp.bounds.output_lower(), cp.bounds.output_upper());
                shift = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (j, &y) in cp.y.iter().enumerate() {
                    let a = lp.add_var(format!("exp_y{j}"), f64::NEG_INFINITY, f64::INFINITY);
                    exp_relaxation_expr(&[(y, 1.0)], -shift, a, lo[j] - shift, hi[j] - shift, n_tangents, ExpSide::Both)?
                        .apply(lp);
                    objective.push((a, dist[j] - epsilon));
                }
            }
            Specification::DigitSum {
                targets,
                n_labels,
                epsilon,
            } => {
                for cp in copies {
                    if cp.y.len() != *n_labels {
                        return Err(Error::InputShape("digit sum output does not match n_labels".into()));
                    }
                }
                shift = copies
                    .iter()
                    .map(|cp| cp.bounds.output_upper().iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .sum();
                let t: i64 = targets.iter().map(|&v| v as i64).sum();
                for tuple in LabelTuples::new(*n_labels, targets.len()) {
                    let s: i64 = tuple.iter().map(|&j| j as i64).sum();
                    let weight = (s - t).abs() as f64 - epsilon;
                    if weight == 0.0 {
                        continue;
                    }
                    let arg: Vec<(VarId, f64)> = tuple.iter().zip(copies).map(|(&j, cp)| (cp.y[j], 1.0)).collect();
                    let l: f64 = tuple.iter().zip(copies).map(|(&j, cp)| cp.bounds.output_lower()[j]).sum::<f64>() - shift;
                    let u: f64 = tuple.iter().zip(copies).map(|(&j, cp)| cp.bounds.output_upper()[j]).sum::<f64>() - shift;
                    add_weighted_exp(lp, &mut objective, &mut constant, &arg, -shift, l, u, weight, n_tangents)?;
                }
            }
            Specification::Quadratic { q } => {
                let cp = &copies[0];
                let n = q.len();
                if n != 1 + cp.x.len() + cp.y.len() {
                    return Err(Error::InputShape("Q does not match (1, x, y)".into()));
                }
                let one = lp.add_var("one", 1.0, 1.0);
                let alpha: Vec<VarId> = std::iter::once(one).chain(cp.x.iter().copied()).chain(cp.y.iter().copied()).collect();
                let lo: Vec<f64> = std::iter::once(1.0)
                    .chain(cp.bounds.input_lower().iter().copied())
                    .chain(cp.bounds.output_lower().iter().copied())
                    .collect();
                let hi: Vec<f64> = std::iter::once(1.0)
                    .chain(cp.bounds.input_upper().iter().copied())
                    .chain(cp.bounds.output_upper().iter().copied())
                    .collect();
                // Products absent from Tr(QX) only appear in their own rows, so
                // leaving them out does not change the optimum.
                for i in 0..n {
                    for j in i..n {
                        let coeff = if i == j { q[i][i] } else { q[i][j] + q[j][i] };
                        if coeff == 0.0 {
                            continue;
                        }
                        if i == 0 && j == 0 {
                            constant += coeff;
                            continue;
                        }
                        if i == 0 {
                            objective.push((alpha[j], coeff));
                            continue;
                        }
                        let x = lp.add_var(format!("X{i}_{j}"), f64::NEG_INFINITY, f64::INFINITY);
                        let set = if i == j {
                            diagonal_relaxation(alpha[i], x, lo[i], hi[i], n_tangents)?
                        } else {
                            mccormick(alpha[i], alpha[j], x, (lo[i], hi[i]), (lo[j], hi[j]))?
                        };
                        set.apply(lp);
                        objective.push((x, coeff));
                    }
                }
            }
            Specification::Entropy { floor } => {
                let cp = &copies[0];
                let (lo, hi) = (cp.bounds.output_lower(), cp.bounds.output_upper());
                shift = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut alphas = Vec::with_capacity(cp.y.len());
                let (mut z_lo, mut z_hi) = (0.0, 0.0);
                for (i, &y) in cp.y.iter().enumerate() {
                    let (l, u) = (lo[i] - shift, hi[i] - shift);
                    let v = lp.add_var(format!("shifted_y{i}"), l, u);
                    lp.add_constraint(LinearConstraint::eq([(v, 1.0), (y, -1.0)], -shift));
                    let a = lp.add_var(format!("exp_y{i}"), f64::NEG_INFINITY, f64::INFINITY);
                    exp_relaxation(v, a, l, u, n_tangents)?.apply(lp);
                    let (al, au) = if u - l < DEGENERATE_WIDTH { (l.exp(), l.exp()) } else { (l.exp(), u.exp()) };
                    let p = lp.add_var(format!("y_exp_y{i}"), f64::NEG_INFINITY, f64::INFINITY);
                    mccormick(v, a, p, (l, u), (al, au))?.apply(lp);
                    objective.push((a, *floor));
                    objective.push((p, 1.0));
                    alphas.push(a);
                    z_lo += al;
                    z_hi += au;
                }
                let z = lp.add_var("partition", z_lo, z_hi);
                lp.add_constraint(LinearConstraint::eq(
                    std::iter::once((z, 1.0)).chain(alphas.iter().map(|&a| (a, -1.0))),
                    0.0,
                ));
                let t = lp.add_var("neg_z_log_z", f64::NEG_INFINITY, f64::INFINITY);
                neg_zlogz_tangents(z, t, z_lo, z_hi, n_tangents)?.apply(lp);
                objective.push((t, 1.0));
            }
        }
        let z = lp.add_var("z", f64::NEG_INFINITY, f64::INFINITY);
        lp.add_constraint(LinearConstraint::eq(
            std::iter::once((z, 1.0)).chain(objective.iter().map(|&(v, c)| (v, -c))),
            constant,
        ));
        Ok(EncodedSpec { z, shift })
    }
}

/// Adds `weight · exp(arg)` to a linear objective. Since the exponential
/// only appears in the objective, only one side of its relaxation can bind:
/// a positive weight is replaced by the secant directly, a negative one gets
/// a variable bounded below by tangent cuts.
#[allow(clippy::too_many_arguments)]
fn add_weighted_exp(
    lp: &mut LinearProgram,
    objective: &mut Vec<(VarId, f64)>,
    constant: &mut f64,
    arg: &[(VarId, f64)],
    offset: f64,
    l: f64,
    u: f64,
    weight: f64,
    n_tangents: usize,
) -> Result<()> {
    if u - l < DEGENERATE_WIDTH {
        *constant += weight * l.exp();
        return Ok(());
    }
    if u.exp() < NEGLIGIBLE_TERM {
        *constant += weight * if weight > 0.0 { u.exp() } else { l.exp() };
        return Ok(());
    }
    if weight > 0.0 {
        let (s, b) = relax::exp_secant(l, u);
        objective.extend(arg.iter().map(|&(v, c)| (v, weight * s * c)));
        *constant += weight * (s * offset + b);
    } else {
        // the variable holds exp(arg − u) so its cuts have slopes up to 1
        let a = lp.add_var("exp_sum", f64::NEG_INFINITY, f64::INFINITY);
        exp_relaxation_expr(arg, offset - u, a, l - u, 0.0, n_tangents, ExpSide::Lower)?.apply(lp);
        objective.push((a, weight * u.exp()));
    }
    Ok(())
}

/// `∂F/∂y` from `∂F/∂p` through the softmax Jacobian.
fn softmax_pullback(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let mean: f64 = dot(p, dp);
    p.iter().zip(dp).map(|(pk, gk)| pk * (gk - mean)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stack(x: &[f64], y: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(x.iter().copied()).chain(y.iter().copied()).collect()
}

fn quad_form(q: &[Vec<f64>], a: &[f64]) -> f64 {
    q.iter()
        .zip(a)
        .map(|(row, ai)| ai * row.iter().zip(a).map(|(qij, aj)| qij * aj).sum::<f64>())
        .sum()
}

/// Distribution of the sum of independent label draws.
fn convolve_all(dists: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![1.0];
    for d in dists {
        let mut next = vec![0.0; acc.len() + d.len() - 1];
        for (s, a) in acc.iter().enumerate() {
            for (k, p) in d.iter().enumerate() {
                next[s + k] += a * p;
            }
        }
        acc = next;
    }
    acc
}

fn expected_abs_error(dist: &[f64], target: f64) -> f64 {
    dist.iter()
        .enumerate()
        .map(|(s, p)| p * (s as f64 - target).abs())
        .sum()
}

/// All label tuples in `{0..n_labels}^len`, last position fastest.
pub struct LabelTuples {
    n_labels: usize,
    current: Option<Vec<usize>>,
}

impl LabelTuples {
    pub fn new(n_labels: usize, len: usize) -> Self {
        LabelTuples {
            n_labels,
            current: if n_labels == 0 { None } else { Some(vec![0; len]) },
        }
    }
}

impl Iterator for LabelTuples {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().expect("checked above");
        let mut k = cur.len();
        loop {
            if k == 0 {
                self.current = None;
                break;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < self.n_labels {
                break;
            }
            cur[k] = 0;
        }
        Some(out)
    }
}

/// Pendulum constants used by the energy specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub velocity_scale: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            mass: 1.0,
            length: 0.5,
            gravity: 9.81,
            velocity_scale: 0.1,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.length, self.gravity, self.velocity_scale];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain("pendulum parameters must be positive".into()))
        }
    }

    /// Energy of a state in network coordinates `(w, h, s·ω)` with
    /// `w = sin θ`, `h = −cos θ`.
    pub fn energy(&self, coords: &[f64]) -> f64 {
        let omega = coords[2] / self.velocity_scale;
        self.mass * self.gravity * self.length * coords[1]
            + 0.5 * self.mass * self.length * self.length * omega * omega
    }

    /// `∂E/∂(w, h, s·ω)`.
    pub fn energy_gradient(&self, coords: &[f64]) -> [f64; 3] {
        let s = self.velocity_scale;
        [
            0.0,
            self.mass * self.gravity * self.length,
            self.mass * self.length * self.length * coords[2] / (s * s),
        ]
    }

    pub fn potential_coefficient(&self) -> f64 {
        self.mass * self.gravity * self.length
    }

    pub fn kinetic_coefficient(&self) -> f64 {
        0.5 * self.mass * self.length * self.length / (self.velocity_scale * self.velocity_scale)
    }
}

/// `Q` such that `(1, x, y)ᵀ Q (1, x, y) = E(y) − E(x)` for 3-dimensional
/// pendulum states `(w, h, s·ω)`.
pub fn build_energy_q(p: &EnergyParams) -> Result<Specification> {
    p.validate()?;
    let mut q = vec![vec![0.0; 7]; 7];
    let lin = p.potential_coefficient() / 2.0;
    // h at index 2, h′ at index 5; split across the symmetric pair
    q[0][2] = -lin;
    q[2][0] = -lin;
    q[0][5] = lin;
    q[5][0] = lin;
    q[3][3] = -p.kinetic_coefficient();
    q[6][6] = p.kinetic_coefficient();
    Ok(Specification::Quadratic { q })
}

/// Label distance matrix used to build semantic specifications.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub name: String,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct DistanceFile {
    name: String,
    labels: Vec<String>,
    upper_triangle: Vec<Vec<f64>>,
}

const CIFAR10_WORDNET: &str = include_str!("../data/cifar10_wordnet_distance.json");

impl DistanceMatrix {
    /// The bundled CIFAR-10 WordNet path distance matrix.
    pub fn cifar10_wordnet() -> Self {
        Self::from_json(CIFAR10_WORDNET).expect("bundled matrix is valid")
    }

    /// Parses `{name, labels, upper_triangle}` where row `i` of the triangle
    /// lists `d(i, j)` for `j > i`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DistanceFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("distance matrix: {e}")))?;
        let n = file.labels.len();
        if file.upper_triangle.len() + 1 != n {
            return Err(Error::Schema("distance triangle has the wrong number of rows".into()));
        }
        let mut rows = vec![vec![0.0; n]; n];
        for (i, tri) in file.upper_triangle.iter().enumerate() {
            if tri.len() != n - 1 - i {
                return Err(Error::Schema(format!("distance triangle row {i} has the wrong length")));
            }
            for (k, &d) in tri.iter().enumerate() {
                let j = i + 1 + k;
                rows[i][j] = d;
                rows[j][i] = d;
            }
        }
        Ok(DistanceMatrix {
            name: file.name,
            labels: file.labels,
            rows,
        })
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.rows[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

/// A specification family instantiated per test example from its labels.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecTemplate {
    Linear {
        c: Vec<f64>,
        d: f64,
    },
    SemanticSoftmax {
        #[serde(default)]
        dist: Option<Vec<f64>>,
        #[serde(default)]
        matrix: Option<MatrixSource>,
        #[serde(default = "default_semantic_epsilon")]
        epsilon: f64,
    },
    DigitSum {
        #[serde(default)]
        targets: Option<Vec<usize>>,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default = "default_n_labels")]
        n_labels: usize,
        #[serde(default = "default_digit_epsilon")]
        epsilon: f64,
    },
    Quadratic {
        q: Vec<Vec<f64>>,
    },
    Entropy {
        #[serde(default = "default_entropy_floor")]
        floor: f64,
    },
    Energy {
        #[serde(default = "default_mass")]
        mass: f64,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
        #[serde(default = "default_velocity_scale")]
        velocity_scale: f64,
    },
}

fn default_semantic_epsilon() -> f64 {
    DEFAULT_SEMANTIC_EPSILON
}
fn default_digit_epsilon() -> f64 {
    DEFAULT_DIGIT_SUM_EPSILON
}
fn default_entropy_floor() -> f64 {
    DEFAULT_ENTROPY_FLOOR
}
fn default_n_labels() -> usize {
    10
}
fn default_mass() -> f64 {
    EnergyParams::default().mass
}
fn default_length() -> f64 {
    EnergyParams::default().length
}
fn default_gravity() -> f64 {
    EnergyParams::default().gravity
}
fn default_velocity_scale() -> f64 {
    EnergyParams::default().velocity_scale
}

impl SpecTemplate {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("specification: {e}")))
    }

    pub fn semantic(matrix: &DistanceMatrix, epsilon: f64) -> Self {
        SpecTemplate::SemanticSoftmax {
            dist: None,
            matrix: Some(MatrixSource::Rows(matrix.rows.clone())),
            epsilon,
        }
    }

    pub fn digit_sum(n: usize, epsilon: f64) -> Self {
        SpecTemplate::DigitSum {
            targets: None,
            n: Some(n),
            n_labels: 10,
            epsilon,
        }
    }

    pub fn energy(p: EnergyParams) -> Self {
        SpecTemplate::Energy {
            mass: p.mass,
            length: p.length,
            gravity: p.gravity,
            velocity_scale: p.velocity_scale,
        }
    }

    /// Number of dataset examples consumed per instance.
    pub fn arity(&self) -> usize {
        match self {
            SpecTemplate::DigitSum { targets: Some(t), .. } => t.len(),
            SpecTemplate::DigitSum { n: Some(n), .. } => *n,
            _ => 1,
        }
    }

    /// Builds the concrete specification; `labels` holds the true label of
    /// each consumed example when the dataset is labeled.
    pub fn instantiate(&self, labels: Option<&[usize]>) -> Result<Specification> {
        let need_labels = || labels.ok_or_else(|| Error::Config("this specification needs labeled examples".into()));
        let spec = match self {
            SpecTemplate::Linear { c, d } => Specification::Linear { c: c.clone(), d: *d },
            SpecTemplate::SemanticSoftmax { dist, matrix, epsilon } => {
                let dist = match (dist, matrix) {
                    (Some(d), None) => d.clone(),
                    (None, Some(src)) => {
                        let rows = match src {
                            MatrixSource::Named(name) if name == "cifar10_wordnet" => DistanceMatrix::cifar10_wordnet().rows,
                            MatrixSource::Named(name) => {
                                return Err(Error::Schema(format!("unknown distance matrix {name:?}")))
                            }
                            MatrixSource::Rows(r) => r.clone(),
                        };
                        let label = need_labels()?[0];
                        rows.get(label)
                            .cloned()
                            .ok_or_else(|| Error::Schema(format!("label {label} outside the distance matrix")))?
                    }
                    _ => return Err(Error::Schema("semantic specification needs exactly one of dist or matrix".into())),
                };
                Specification::SemanticSoftmax { dist, epsilon: *epsilon }
            }
            SpecTemplate::DigitSum {
                targets,
                n,
                n_labels,
                epsilon,
            } => {
                let targets = match (targets, n) {
                    (Some(t), None) => t.clone(),
                    (None, Some(n)) => {
                        let l = need_labels()?;
                        if l.len() != *n {
                            return Err(Error::InputShape(format!("digit sum needs {n} labels, got {}", l.len())));
                        }
                        l.to_vec()
                    }
                    _ => return Err(Error::Schema("digit sum needs exactly one of targets or n".into())),
                };
                Specification::DigitSum {
                    targets,
                    n_labels: *n_labels,
                    epsilon: *epsilon,
                }
            }
            SpecTemplate::Quadratic { q } => Specification::Quadratic { q: q.clone() },
            SpecTemplate::Entropy { floor } => Specification::Entropy { floor: *floor },
            SpecTemplate::Energy {
                mass,
                length,
                gravity,
                velocity_scale,
            } => build_energy_q(&EnergyParams {
                mass: *mass,
                length: *length,
                gravity: *gravity,
                velocity_scale: *velocity_scale,
            })?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
