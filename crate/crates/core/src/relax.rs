//! Linear relaxations of the nonlinear atoms: ReLU, `exp`, products
//! `α_i α_j` (McCormick plus diagonal secant/tangents) and the concave map
//! `Z ↦ −Z ln Z`.
//!
//! Each builder returns a [`RelaxationSet`] over caller-provided variables;
//! the set contains the graph of the atom over the given interval.

use crate::error::{Error, Result};
use crate::lp::{LinearConstraint, LinearProgram, VarId};

pub const DEFAULT_TANGENTS: usize = 5;

/// Tangent cuts of `exp` whose slope is below this fraction of `e^u` are
/// left out. Omitting a cut only enlarges the relaxed set.
pub const TANGENT_SLOPE_FLOOR: f64 = 1e-12;
pub(crate) const DEGENERATE_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarBound {
    pub var: VarId,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelaxationSet {
    pub bounds: Vec<VarBound>,
    pub constraints: Vec<LinearConstraint>,
}

impl RelaxationSet {
    pub fn extend(&mut self, other: RelaxationSet) {
        self.bounds.extend(other.bounds);
        self.constraints.extend(other.constraints);
    }

    /// Adds the constraints to `lp` and intersects the declared bounds.
    pub fn apply(self, lp: &mut LinearProgram) {
        for b in self.bounds {
            lp.tighten(b.var, b.lower, b.upper);
        }
        for c in self.constraints {
            lp.add_constraint(c);
        }
    }

    pub fn max_violation(&self, value: impl Fn(VarId) -> f64) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(&value))
            .fold(0.0, f64::max);
        self.bounds.iter().fold(rows, |acc, b| {
            let x = value(b.var);
            acc.max(b.lower - x).max(x - b.upper)
        })
    }
}

fn check_order(l: f64, u: f64) -> Result<()> {
    if !(l.is_finite() && u.is_finite()) {
        return Err(Error::Numeric(format!("non-finite interval [{l}, {u}]")));
    }
    if l > u {
        return Err(Error::BoundOrder { lower: l, upper: u });
    }
    Ok(())
}

/// `n` evenly spaced points on `[l, u]` including both endpoints; a single
/// point sits at the midpoint.
pub fn tangent_points(l: f64, u: f64, n: usize) -> Vec<f64> {
    if n <= 1 || u - l < DEGENERATE_WIDTH {
        return vec![(l + u) / 2.0];
    }
    (0..n)
        .map(|k| {
            if k == n - 1 {
                u
            } else {
                l + (u - l) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Triangle relaxation of `a = max(v, 0)` for `v ∈ [l, u]`.
pub fn relu_relaxation(v: VarId, a: VarId, l: f64, u: f64) -> Result<RelaxationSet> {
    check_order(l, u)?;
    let mut set = RelaxationSet::default();
    if l >= 0.0 {
        set.constraints.push(LinearConstraint::eq([(a, 1.0), (v, -1.0)], 0.0));
    } else if u <= 0.0 {
        set.constraints.push(LinearConstraint::eq([(a, 1.0)], 0.0));
    } else {
        let slope = u / (u - l);
        set.constraints.push(LinearConstraint::ge([(a, 1.0), (v, -1.0)], 0.0));
        set.constraints.push(LinearConstraint::ge([(a, 1.0)], 0.0));
        // a ≤ slope·(v − l)
        set.constraints
            .push(LinearConstraint::le([(a, 1.0), (v, -slope)], -slope * l));
    }
    Ok(set)
}

/// Chord of `exp` through `(l, e^l)` and `(u, e^u)` as `(slope, intercept)`.
pub fn exp_secant(l: f64, u: f64) -> (f64, f64) {
    let (el, eu) = (l.exp(), u.exp());
    let slope = (eu - el) / (u - l);
    let intercept = (u * el - l * eu) / (u - l);
    (slope, intercept)
}

/// Which halves of the `exp` relaxation to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpSide {
    Both,
    /// Secant only (the only binding side when `a` is maximized).
    Upper,
    /// Tangents only (the only binding side when `a` is minimized).
    Lower,
}

/// `a ≈ exp(y)` for `y ∈ [l, u]`: the secant from above, tangent cuts from
/// below and `a ∈ [e^l, e^u]`.
pub fn exp_relaxation(y: VarId, a: VarId, l: f64, u: f64, n_tangents: usize) -> Result<RelaxationSet> {
    exp_relaxation_expr(&[(y, 1.0)], 0.0, a, l, u, n_tangents, ExpSide::Both)
}

/// Same as [`exp_relaxation`] with the argument given as an affine
/// expression `Σ c_k v_k + offset` whose range is `[l, u]`.
pub fn exp_relaxation_expr(
    arg: &[(VarId, f64)],
    offset: f64,
    a: VarId,
    l: f64,
    u: f64,
    n_tangents: usize,
    side: ExpSide,
) -> Result<RelaxationSet> {
    check_order(l, u)?;
    if n_tangents == 0 {
        return Err(Error::Config("at least one tangent point is required".into()));
    }
    let mut set = RelaxationSet::default();
    if u - l < DEGENERATE_WIDTH {
        let v = l.exp();
        set.bounds.push(VarBound { var: a, lower: v, upper: v });
        set.constraints.push(LinearConstraint::eq([(a, 1.0)], v));
        return Ok(set);
    }
    set.bounds.push(VarBound {
        var: a,
        lower: l.exp(),
        upper: u.exp(),
    });
    let scaled = |k: f64| arg.iter().map(move |&(v, c)| (v, -k * c));
    if side != ExpSide::Lower {
        // a − s·arg ≤ s·offset + intercept
        let (s, b) = exp_secant(l, u);
        set.constraints.push(LinearConstraint::le(
            std::iter::once((a, 1.0)).chain(scaled(s)),
            s * offset + b,
        ));
    }
    if side != ExpSide::Upper {
        for eta in tangent_points(l, u, n_tangents) {
            if (eta - u).exp() < TANGENT_SLOPE_FLOOR {
                continue;
            }
            // a ≥ e^η·arg + e^η(1 − η)
            let g = eta.exp();
            set.constraints.push(LinearConstraint::ge(
                std::iter::once((a, 1.0)).chain(scaled(g)),
                g * offset + g * (1.0 - eta),
            ));
        }
    }
    Ok(set)
}

/// The four McCormick inequalities for `x ≈ α_i α_j`.
pub fn mccormick(
    ai: VarId,
    aj: VarId,
    x: VarId,
    (li, ui): (f64, f64),
    (lj, uj): (f64, f64),
) -> Result<RelaxationSet> {
    check_order(li, ui)?;
    check_order(lj, uj)?;
    let c = |x_rel: fn(_, _) -> LinearConstraint, ci: f64, cj: f64, rhs: f64| {
        x_rel(vec![(x, 1.0), (ai, -ci), (aj, -cj)], rhs)
    };
    Ok(RelaxationSet {
        bounds: Vec::new(),
        constraints: vec![
            // (α_i − l_i)(α_j − l_j) ≥ 0
            c(LinearConstraint::ge, lj, li, -li * lj),
            // (α_i − u_i)(α_j − u_j) ≥ 0
            c(LinearConstraint::ge, uj, ui, -ui * uj),
            // (α_i − l_i)(α_j − u_j) ≤ 0
            c(LinearConstraint::le, uj, li, -li * uj),
            // (α_i − u_i)(α_j − l_j) ≤ 0
            c(LinearConstraint::le, lj, ui, -ui * lj),
        ],
    })
}

/// Chord of `α²` on `[l, u]`: `(l + u)·α − u·l`.
pub fn quad_secant(alpha: f64, l: f64, u: f64) -> f64 {
    (l + u) * alpha - u * l
}

/// Relaxation of `X = α αᵀ` without the semidefinite constraint.
///
/// `x[i][j]` names the variable standing for `α_i α_j`; the map must be
/// symmetric. Off-diagonal pairs get McCormick envelopes, diagonals get the
/// secant from above and `n_tangents` tangent cuts of `α_i²` from below.
pub fn quad_relaxation(
    alpha: &[VarId],
    x: &[Vec<VarId>],
    l: &[f64],
    u: &[f64],
    n_tangents: usize,
) -> Result<RelaxationSet> {
    let n = alpha.len();
    if x.len() != n || x.iter().any(|row| row.len() != n) || l.len() != n || u.len() != n {
        return Err(Error::Schema("product matrix does not match the factor vector".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if x[i][j] != x[j][i] {
                return Err(Error::Schema(format!("product map is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut set = RelaxationSet::default();
    for i in 0..n {
        set.extend(diagonal_relaxation(alpha[i], x[i][i], l[i], u[i], n_tangents)?);
        for j in i + 1..n {
            set.extend(mccormick(alpha[i], alpha[j], x[i][j], (l[i], u[i]), (l[j], u[j]))?);
        }
    }
    Ok(set)
}

/// `x ≈ α²` for `α ∈ [l, u]`.
pub fn diagonal_relaxation(alpha: VarId, x: VarId, l: f64, u: f64, n_tangents: usize) -> Result<RelaxationSet> {
    check_order(l, u)?;
    let mut set = RelaxationSet::default();
    let sq_lo = if l <= 0.0 && u >= 0.0 { 0.0 } else { (l * l).min(u * u) };
    let sq_hi = (l * l).max(u * u);
    if u - l < DEGENERATE_WIDTH {
        let m = (l + u) / 2.0;
        set.constraints.push(LinearConstraint::eq([(x, 1.0)], m * m));
        return Ok(set);
    }
    set.bounds.push(VarBound {
        var: x,
        lower: sq_lo,
        upper: sq_hi,
    });
    // X ≤ (l + u)α − ul
    set.constraints
        .push(LinearConstraint::le([(x, 1.0), (alpha, -(l + u))], -u * l));
    for eta in tangent_points(l, u, n_tangents.max(1)) {
        // X ≥ 2ηα − η²
        set.constraints
            .push(LinearConstraint::ge([(x, 1.0), (alpha, -2.0 * eta)], -eta * eta));
    }
    Ok(set)
}

/// Upper tangent cuts `t ≤ −(ln η + 1)·Z + η` of the concave map `−Z ln Z`.
pub fn neg_zlogz_tangents(z: VarId, t: VarId, zl: f64, zu: f64, n_tangents: usize) -> Result<RelaxationSet> {
    if !(zl > 0.0) {
        return Err(Error::Domain(format!("−Z ln Z needs Z > 0, lower bound is {zl}")));
    }
    check_order(zl, zu)?;
    let mut set = RelaxationSet::default();
    for eta in tangent_points(zl, zu, n_tangents.max(1)) {
        set.constraints
            .push(LinearConstraint::le([(t, 1.0), (z, eta.ln() + 1.0)], eta));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{LinearProgram, LpStatus, Relation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(i: usize) -> VarId {
        VarId(i)
    }

    fn assert_row(c: &LinearConstraint, rel: Relation, terms: &[(usize, f64)], rhs: f64) {
        assert_eq!(c.relation(), rel);
        let mut got: Vec<(usize, f64)> = c.terms().iter().map(|(v, a)| (v.0, *a)).collect();
        got.sort_by_key(|t| t.0);
        assert_eq!(got.len(), terms.len(), "{c:?}");
        for ((gv, ga), (ev, ea)) in got.iter().zip(terms) {
            assert_eq!(gv, ev);
            assert!((ga - ea).abs() < 1e-12, "{c:?}");
        }
        assert!((c.rhs() - rhs).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn relu_cases() {
        let s = relu_relaxation(v(0), v(1), 0.2, 1.0).unwrap();
        assert_eq!(s.constraints.len(), 1);
        assert_row(&s.constraints[0], Relation::Eq, &[(0, -1.0), (1, 1.0)], 0.0);

        let s = relu_relaxation(v(0), v(1), -1.0, -0.1).unwrap();
        assert_row(&s.constraints[0], Relation::Eq, &[(1, 1.0)], 0.0);

        // a ≤ 0.5·v + 0.5
        let s = relu_relaxation(v(0), v(1), -1.0, 1.0).unwrap();
        assert_eq!(s.constraints.len(), 3);
        assert_row(&s.constraints[2], Relation::Le, &[(0, -0.5), (1, 1.0)], 0.5);

        assert!(matches!(relu_relaxation(v(0), v(1), 1.0, 0.0), Err(Error::BoundOrder { .. })));
    }

    #[test]
    fn exp_cases() {
        let s = exp_relaxation(v(0), v(1), 0.5, 0.5, 5).unwrap();
        assert_eq!(s.constraints.len(), 1);
        assert!((s.constraints[0].rhs() - 1.6487212707001282).abs() < 1e-12);

        let s = exp_relaxation(v(0), v(1), 0.0, 1.0, 5).unwrap();
        // secant a ≤ (e − 1)·y + 1
        assert_row(&s.constraints[0], Relation::Le, &[(0, -(1f64.exp() - 1.0)), (1, 1.0)], 1.0);
        // tangent at η = 0: a ≥ y + 1
        assert_row(&s.constraints[1], Relation::Ge, &[(0, -1.0), (1, 1.0)], 1.0);
        assert_eq!(s.constraints.len(), 6);

        assert!(matches!(exp_relaxation(v(0), v(1), 1.0, 0.0, 3), Err(Error::BoundOrder { .. })));

        // over [−100, 0] only the tangents at −25 and 0 are steep enough to keep
        let s = exp_relaxation(v(0), v(1), -100.0, 0.0, 5).unwrap();
        assert_eq!(s.constraints.len(), 3);
        assert!(s.max_violation(|id| [-60.0, (-60f64).exp()][id.0]) <= 1e-12);
    }

    #[test]
    fn quad_cases() {
        let s = diagonal_relaxation(v(0), v(1), -1.0, 1.0, 5).unwrap();
        // X ≤ 0·α + 1
        assert_row(&s.constraints[0], Relation::Le, &[(1, 1.0)], 1.0);

        let s = mccormick(v(0), v(1), v(2), (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert_row(&s.constraints[0], Relation::Ge, &[(2, 1.0)], 0.0);
        assert_row(&s.constraints[1], Relation::Ge, &[(0, -1.0), (1, -1.0), (2, 1.0)], -1.0);
        assert_row(&s.constraints[2], Relation::Le, &[(0, -1.0), (2, 1.0)], 0.0);
        assert_row(&s.constraints[3], Relation::Le, &[(1, -1.0), (2, 1.0)], 0.0);

        let s = diagonal_relaxation(v(0), v(1), 2.0, 2.0, 5).unwrap();
        assert_row(&s.constraints[0], Relation::Eq, &[(1, 1.0)], 4.0);

        let bad = quad_relaxation(&[v(0), v(1)], &[vec![v(2), v(3)], vec![v(4), v(5)]], &[0.0; 2], &[1.0; 2], 3);
        assert!(matches!(bad, Err(Error::Schema(_))));
    }

    #[test]
    fn neg_zlogz_cases() {
        let s = neg_zlogz_tangents(v(0), v(1), 1.0, 1.0, 3).unwrap();
        // t ≤ −Z + 1
        assert_row(&s.constraints[0], Relation::Le, &[(0, 1.0), (1, 1.0)], 1.0);

        let e = 1f64.exp();
        let s = neg_zlogz_tangents(v(0), v(1), e, e, 1).unwrap();
        // at Z = e the cut gives t ≤ −2e + e = −e
        assert!((-s.constraints[0].terms()[0].1 * e + s.constraints[0].rhs() + e).abs() < 1e-12);

        // Z = 2 between tangents at 1 and e
        let s = neg_zlogz_tangents(v(0), v(1), 1.0, e, 2).unwrap();
        let bound = s
            .constraints
            .iter()
            .map(|c| c.rhs() - c.terms()[0].1 * 2.0)
            .fold(f64::INFINITY, f64::min);
        assert!(-2.0 * 2f64.ln() <= bound);

        assert!(matches!(neg_zlogz_tangents(v(0), v(1), 0.0, 1.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn endpoint_tightness() {
        for (l, u) in [(-2.0, 0.5), (0.0, 1.0), (-0.3, -0.1)] {
            let (s, b) = exp_secant(l, u);
            assert!((s * l + b - f64::exp(l)).abs() < 1e-12);
            assert!((s * u + b - f64::exp(u)).abs() < 1e-12);
            assert!((quad_secant(l, l, u) - l * l).abs() < 1e-12);
            assert!((quad_secant(u, l, u) - u * u).abs() < 1e-12);
        }
    }

    #[test]
    fn secant_tangent_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let l = rng.gen_range(-5.0..2.0);
            let u = l + rng.gen_range(0.01..3.0);
            let (s, b) = exp_secant(l, u);
            for _ in 0..50 {
                let y: f64 = rng.gen_range(l..=u);
                for eta in tangent_points(l, u, 5) {
                    assert!(eta.exp() * (y + 1.0 - eta) <= y.exp() + 1e-12);
                }
                assert!(y.exp() <= s * y + b + 1e-12 * u.exp().max(1.0));
            }
        }
    }

    /// Refining the tangent grid (nested point sets) can only shrink `max −a`.
    #[test]
    fn refinement_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let l = rng.gen_range(-3.0..1.0);
            let u = l + rng.gen_range(0.1..3.0);
            let w = rng.gen_range(-2.0..2.0);
            let mut prev = f64::INFINITY;
            for n in [2, 3, 5, 9, 17] {
                let mut lp = LinearProgram::new();
                let y = lp.add_var("y", l, u);
                let a = lp.add_var("a", f64::NEG_INFINITY, f64::INFINITY);
                exp_relaxation(y, a, l, u, n).unwrap().apply(&mut lp);
                lp.set_objective([(a, -1.0), (y, w)], 0.0);
                let sol = lp.solve().unwrap();
                assert_eq!(sol.status, LpStatus::Optimal);
                assert!(sol.objective <= prev + 1e-9, "n={n}: {} > {prev}", sol.objective);
                prev = sol.objective;
            }
        }
    }
}
