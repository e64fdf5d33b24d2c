//! Dense linear programs and a two-phase bounded-variable primal simplex.
//!
//! Every program is a maximization. Variables carry their own (possibly
//! infinite) bounds; the solver keeps them implicit instead of turning them
//! into rows, so a box-bounded input layer costs no extra constraints.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const REDUCED_COST_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-8;
pub const BOUND_TOL: f64 = 1e-9;
pub const ITERATION_CAP: usize = 1_000_000;
/// Pivots between rebuilds of the tableau from the original rows.
pub const REFACTOR_INTERVAL: usize = 50;
const SCALING_PASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    terms: Vec<(VarId, f64)>,
    relation: Relation,
    rhs: f64,
}

impl LinearConstraint {
    /// Builds `Σ coeff·var (relation) rhs`, merging repeated variables and
    /// dropping zero coefficients.
    pub fn new(terms: impl IntoIterator<Item = (VarId, f64)>, relation: Relation, rhs: f64) -> Self {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        LinearConstraint {
            terms: merged.into_iter().filter(|(_, c)| *c != 0.0).collect(),
            relation,
            rhs,
        }
    }

    pub fn le(terms: impl IntoIterator<Item = (VarId, f64)>, rhs: f64) -> Self {
        Self::new(terms, Relation::Le, rhs)
    }

    pub fn ge(terms: impl IntoIterator<Item = (VarId, f64)>, rhs: f64) -> Self {
        Self::new(terms, Relation::Ge, rhs)
    }

    pub fn eq(terms: impl IntoIterator<Item = (VarId, f64)>, rhs: f64) -> Self {
        Self::new(terms, Relation::Eq, rhs)
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn rhs(&self) -> f64 {
        self.rhs
    }

    pub fn lhs(&self, value: impl Fn(VarId) -> f64) -> f64 {
        self.terms.iter().map(|(v, c)| c * value(*v)).sum()
    }

    /// Amount by which an assignment violates the constraint (0 when satisfied).
    pub fn violation(&self, value: impl Fn(VarId) -> f64) -> f64 {
        let lhs = self.lhs(value);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    vars: Vec<Variable>,
    constraints: Vec<LinearConstraint>,
    objective: Vec<(VarId, f64)>,
    objective_constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Largest reduced cost that still points uphill at termination.
    pub dual_infeasibility: f64,
}

impl LpSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Intersects the bounds of `v` with `[lower, upper]`.
    pub fn tighten(&mut self, v: VarId, lower: f64, upper: f64) {
        let var = &mut self.vars[v.0];
        var.lower = var.lower.max(lower);
        var.upper = var.upper.min(upper);
    }

    pub fn add_constraint(&mut self, c: LinearConstraint) {
        self.constraints.push(c);
    }

    pub fn set_objective(&mut self, terms: impl IntoIterator<Item = (VarId, f64)>, constant: f64) {
        let merged = LinearConstraint::new(terms, Relation::Eq, 0.0);
        self.objective = merged.terms;
        self.objective_constant = constant;
    }

    pub fn objective_terms(&self) -> &[(VarId, f64)] {
        &self.objective
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Largest constraint or bound violation of an assignment.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(|v| values[v.0]))
            .fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(var, x)| (var.lower - x).max(x - var.upper).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Like [`Self::max_violation`] but each row is measured against the
    /// magnitude of its terms, so long rows with large coefficients are not
    /// held to a tighter standard than short ones.
    pub fn max_relative_violation(&self, values: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| {
                let size = c.rhs.abs() + c.terms.iter().map(|(v, a)| (a * values[v.0]).abs()).sum::<f64>();
                c.violation(|v| values[v.0]) / size.max(1.0)
            })
            .fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(var, x)| (var.lower - x).max(x - var.upper).max(0.0) / x.abs().max(1.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    fn validate(&self) -> Result<()> {
        for (j, var) in self.vars.iter().enumerate() {
            if var.lower.is_nan() || var.upper.is_nan() {
                return Err(Error::Schema(format!("variable {} has a NaN bound", var.name)));
            }
            if var.lower > var.upper {
                return Err(Error::BoundOrder {
                    lower: self.vars[j].lower,
                    upper: self.vars[j].upper,
                });
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(Error::Schema(format!("constraint {i} has a non-finite right-hand side")));
            }
            for (v, a) in &c.terms {
                if v.0 >= self.vars.len() {
                    return Err(Error::Schema(format!("constraint {i} references undeclared variable {}", v.0)));
                }
                if !a.is_finite() {
                    return Err(Error::Schema(format!("constraint {i} has a non-finite coefficient")));
                }
            }
        }
        for (v, a) in &self.objective {
            if v.0 >= self.vars.len() || !a.is_finite() {
                return Err(Error::Schema("malformed objective".into()));
            }
        }
        Ok(())
    }

    /// Geometric row and column scaling with power-of-two factors. Returns
    /// the scaled program and the column factors `s` with `x = s ∘ x'`.
    fn scaled(&self) -> (LinearProgram, Vec<f64>) {
        let (m, n) = (self.constraints.len(), self.vars.len());
        let mut r = vec![1.0; m];
        let mut s = vec![1.0; n];
        let pow2 = |v: f64| if v.is_finite() && v > 0.0 { v.log2().round().exp2() } else { 1.0 };
        for _ in 0..SCALING_PASSES {
            for (i, c) in self.constraints.iter().enumerate() {
                let (lo, hi) = c
                    .terms
                    .iter()
                    .map(|(v, a)| (a * s[v.0]).abs())
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
                r[i] = pow2(1.0 / (lo * hi).sqrt());
            }
            let mut col = vec![(f64::INFINITY, 0.0f64); n];
            for (i, c) in self.constraints.iter().enumerate() {
                for (v, a) in &c.terms {
                    let x = (a * r[i]).abs();
                    let e = &mut col[v.0];
                    *e = (e.0.min(x), e.1.max(x));
                }
            }
            for (j, (lo, hi)) in col.into_iter().enumerate() {
                s[j] = pow2(1.0 / (lo * hi).sqrt());
            }
        }
        let scaled = LinearProgram {
            vars: self
                .vars
                .iter()
                .zip(&s)
                .map(|(v, sj)| Variable {
                    name: v.name.clone(),
                    lower: v.lower / sj,
                    upper: v.upper / sj,
                })
                .collect(),
            constraints: self
                .constraints
                .iter()
                .zip(&r)
                .map(|(c, ri)| LinearConstraint {
                    terms: c.terms.iter().map(|(v, a)| (*v, a * ri * s[v.0])).collect(),
                    relation: c.relation,
                    rhs: c.rhs * ri,
                })
                .collect(),
            objective: self.objective.iter().map(|(v, a)| (*v, a * s[v.0])).collect(),
            objective_constant: self.objective_constant,
        };
        (scaled, s)
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.validate()?;
        let (scaled, col) = self.scaled();
        let unscale = |x: &[f64]| -> Vec<f64> { x.iter().zip(&col).map(|(v, s)| v * s).collect() };
        let mut tab = Tableau::build(&scaled);
        let iterations_phase1 = tab.run(Phase::One)?;
        let infeasibility: f64 = tab.artificials().map(|j| tab.x[j].max(0.0)).sum();
        if infeasibility > FEASIBILITY_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective: f64::NAN,
                values: unscale(&tab.x[..self.vars.len()]),
                iterations: iterations_phase1,
                dual_infeasibility: 0.0,
            });
        }
        tab.enter_phase_two(&scaled);
        let iterations_phase2 = match tab.run(Phase::Two) {
            Ok(n) => n,
            Err(Error::Domain(_)) => {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    objective: f64::INFINITY,
                    values: unscale(&tab.x[..self.vars.len()]),
                    iterations: tab.iterations,
                    dual_infeasibility: 0.0,
                })
            }
            Err(e) => return Err(e),
        };
        let iterations = iterations_phase1 + iterations_phase2;
        let values = unscale(&tab.x[..self.vars.len()]);
        let violation = self.max_relative_violation(&values);
        if violation > FEASIBILITY_TOL {
            return Err(Error::Numeric(format!(
                "simplex returned a point violating constraints by {violation:e}"
            )));
        }
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective: self.objective_value(&values),
            values,
            iterations,
            dual_infeasibility: tab.dual_infeasibility(),
        })
    }

    /// CPLEX-style LP text, for debugging.
    pub fn to_lp_format(&self) -> String {
        fn term(out: &mut String, first: bool, c: f64, name: &str) {
            let sign = if c < 0.0 { "-" } else if first { "" } else { "+" };
            let _ = write!(out, " {sign} {} {name}", c.abs());
        }
        let name = |v: &VarId| format!("x{}_{}", v.0, sanitize(&self.vars[v.0].name));
        let mut out = String::from("\\Maximize\n obj:");
        for (k, (v, c)) in self.objective.iter().enumerate() {
            term(&mut out, k == 0, *c, &name(v));
        }
        if self.objective_constant != 0.0 {
            let _ = write!(out, " + {} constant", self.objective_constant);
        }
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{i}:");
            for (k, (v, a)) in c.terms.iter().enumerate() {
                term(&mut out, k == 0, *a, &name(v));
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            let _ = writeln!(out, " {rel} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for (j, var) in self.vars.iter().enumerate() {
            let n = name(&VarId(j));
            match (var.lower.is_finite(), var.upper.is_finite()) {
                (true, true) => {
                    let _ = writeln!(out, " {} <= {n} <= {}", var.lower, var.upper);
                }
                (true, false) => {
                    let _ = writeln!(out, " {n} >= {}", var.lower);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {n} <= {}", var.upper);
                }
                (false, false) => {
                    let _ = writeln!(out, " {n} free");
                }
            }
        }
        if self.objective_constant != 0.0 {
            out.push_str(" constant = 1\n");
        }
        out.push_str("End\n");
        out
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

/// Column layout: structural variables, one slack per row, then artificials.
struct Tableau {
    m: usize,
    ncols: usize,
    art_start: usize,
    t: Vec<f64>,
    /// Initial tableau rows and right-hand sides, kept for refactoring.
    a0: Vec<f64>,
    b0: Vec<f64>,
    /// Objective of the current phase; `cost` holds its reduced form.
    phase_cost: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    iterations: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.vars.len();
        let m = lp.constraints.len();
        let mut lo: Vec<f64> = lp.vars.iter().map(|v| v.lower).collect();
        let mut hi: Vec<f64> = lp.vars.iter().map(|v| v.upper).collect();
        let mut x: Vec<f64> = lp
            .vars
            .iter()
            .map(|v| {
                if v.lower.is_finite() {
                    v.lower
                } else if v.upper.is_finite() {
                    v.upper
                } else {
                    0.0
                }
            })
            .collect();
        for c in &lp.constraints {
            let (l, h) = match c.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(l);
            hi.push(h);
        }

        // residual each slack would need to absorb
        let residual: Vec<f64> = lp
            .constraints
            .iter()
            .map(|c| c.rhs - c.terms.iter().map(|(v, a)| a * x[v.0]).sum::<f64>())
            .collect();
        let mut needs_art = Vec::new();
        for (i, &r) in residual.iter().enumerate() {
            let (l, h) = (lo[n + i], hi[n + i]);
            if r >= l && r <= h {
                x.push(r);
            } else {
                let at = if r < l { l } else { h };
                x.push(at);
                needs_art.push((i, r - at));
            }
        }
        let art_start = n + m;
        let ncols = art_start + needs_art.len();
        for &(_, gap) in &needs_art {
            lo.push(0.0);
            hi.push(f64::INFINITY);
            x.push(gap.abs());
        }

        let mut t = vec![0.0; m * ncols];
        let mut basis = vec![0; m];
        let mut row_of = vec![None; ncols];
        let mut art_of_row = vec![None; m];
        for (k, &(i, gap)) in needs_art.iter().enumerate() {
            art_of_row[i] = Some((art_start + k, gap.signum()));
        }
        let mut b0 = vec![0.0; m];
        for (i, c) in lp.constraints.iter().enumerate() {
            let row = &mut t[i * ncols..(i + 1) * ncols];
            let sign = art_of_row[i].map_or(1.0, |(_, s)| s);
            b0[i] = c.rhs * sign;
            for (v, a) in &c.terms {
                row[v.0] = a * sign;
            }
            row[n + i] = sign;
            let b = match art_of_row[i] {
                Some((col, _)) => {
                    row[col] = 1.0;
                    col
                }
                None => n + i,
            };
            basis[i] = b;
            row_of[b] = Some(i);
        }

        let mut tab = Tableau {
            m,
            ncols,
            art_start,
            a0: t.clone(),
            t,
            b0,
            phase_cost: vec![0.0; ncols],
            cost: vec![0.0; ncols],
            lo,
            hi,
            x,
            basis,
            row_of,
            iterations: 0,
        };
        let mut c = vec![0.0; ncols];
        for j in art_start..ncols {
            c[j] = -1.0;
        }
        tab.set_costs(&c);
        tab
    }

    fn artificials(&self) -> std::ops::Range<usize> {
        self.art_start..self.ncols
    }

    /// Reduced costs `d = c − c_Bᵀ T`.
    fn set_costs(&mut self, c: &[f64]) {
        self.phase_cost = c.to_vec();
        let mut d = c.to_vec();
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for i in 0..self.m {
            d[self.basis[i]] = 0.0;
        }
        self.cost = d;
    }

    fn enter_phase_two(&mut self, lp: &LinearProgram) {
        for j in self.artificials() {
            self.hi[j] = 0.0;
            if self.row_of[j].is_none() {
                self.x[j] = 0.0;
            }
        }
        let mut c = vec![0.0; self.ncols];
        for (v, a) in &lp.objective {
            c[v.0] += a;
        }
        self.set_costs(&c);
    }

    fn can_move(&self, j: usize) -> bool {
        self.row_of[j].is_none() && self.hi[j] > self.lo[j]
    }

    /// Entering column and direction (+1 increase, −1 decrease).
    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.ncols {
            if !self.can_move(j) {
                continue;
            }
            let d = self.cost[j];
            let dir = if d > REDUCED_COST_TOL && self.x[j] < self.hi[j] {
                1.0
            } else if d < -REDUCED_COST_TOL && self.x[j] > self.lo[j] {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if best.map_or(true, |(_, _, s)| d.abs() > s) {
                best = Some((j, dir, d.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Runs simplex iterations until optimality for the current cost row,
    /// confirmed on a freshly refactored tableau. Returns `Error::Domain` on
    /// an unbounded ray.
    fn run(&mut self, phase: Phase) -> Result<usize> {
        let start = self.iterations;
        let degenerate_limit = 2 * (self.m + self.ncols);
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        let mut fresh = false;
        loop {
            if self.iterations >= ITERATION_CAP {
                return Err(Error::SolverLimit(format!("iteration cap {ITERATION_CAP} reached")));
            }
            if since_refactor >= REFACTOR_INTERVAL {
                self.refactor();
                since_refactor = 0;
            }
            let bland = degenerate_run >= degenerate_limit;
            let Some((j, dir)) = self.price(bland) else {
                if fresh || since_refactor == 0 {
                    break;
                }
                self.refactor();
                since_refactor = 0;
                fresh = true;
                continue;
            };
            fresh = false;
            self.iterations += 1;
            since_refactor += 1;

            let flip = self.hi[j] - self.lo[j];
            let leave = self.ratio_test(j, dir, flip, bland);
            let step = match leave {
                Some((_, _, limit)) => limit,
                None => flip,
            };
            if !step.is_finite() {
                if phase == Phase::One {
                    return Err(Error::Internal("phase one is bounded but the ratio test found a ray".into()));
                }
                return Err(Error::Domain("unbounded".into()));
            }

            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            // move along the edge
            for i in 0..self.m {
                let a = self.t[i * self.ncols + j];
                if a != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= a * dir * step;
                }
            }
            self.x[j] += dir * step;

            match leave {
                None => {
                    // bound flip
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some((r, target, _)) => {
                    let b = self.basis[r];
                    self.x[b] = target;
                    self.pivot(r, j);
                }
            }
        }
        Ok(self.iterations - start)
    }

    /// Two-pass (Harris) ratio test for column `j` moving in direction
    /// `dir`. Returns the leaving row, the bound it lands on and the step,
    /// or `None` when the entering variable reaches its own opposite bound
    /// first.
    fn ratio_test(&self, j: usize, dir: f64, flip: f64, bland: bool) -> Option<(usize, f64, f64)> {
        let limit_of = |i: usize, slack: f64| -> Option<(f64, f64, f64)> {
            let alpha = self.t[i * self.ncols + j] * dir;
            if alpha.abs() <= PIVOT_TOL {
                return None;
            }
            let b = self.basis[i];
            if alpha > 0.0 {
                self.lo[b]
                    .is_finite()
                    .then(|| (((self.x[b] - self.lo[b] + slack) / alpha).max(0.0), self.lo[b], alpha))
            } else {
                self.hi[b]
                    .is_finite()
                    .then(|| (((self.hi[b] - self.x[b] + slack) / -alpha).max(0.0), self.hi[b], -alpha))
            }
        };
        if bland {
            let mut best: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                if let Some((limit, target, _)) = limit_of(i, 0.0) {
                    let better = match best {
                        None => true,
                        Some((r, _, l)) => limit < l - 1e-12 || (limit <= l + 1e-12 && self.basis[i] < self.basis[r]),
                    };
                    if better {
                        best = Some((i, target, limit));
                    }
                }
            }
            return best.filter(|&(_, _, l)| l < flip);
        }
        let relaxed = (0..self.m)
            .filter_map(|i| limit_of(i, BOUND_TOL).map(|(l, _, _)| l))
            .fold(f64::INFINITY, f64::min);
        if flip <= relaxed {
            return None;
        }
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for i in 0..self.m {
            if let Some((limit, target, alpha)) = limit_of(i, 0.0) {
                if limit <= relaxed && best.map_or(true, |(_, _, _, a)| alpha > a) {
                    best = Some((i, target, limit, alpha));
                }
            }
        }
        best.map(|(i, target, limit, _)| (i, target, limit))
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let p = self.t[r * nc + j];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[j] = 1.0;
        }
        let nz: Vec<usize> = (0..nc).filter(|&k| self.t[r * nc + k] != 0.0).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&k| self.t[r * nc + k]).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * nc + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * nc..(i + 1) * nc];
            for (&k, &pv) in nz.iter().zip(&pivot_row) {
                row[k] -= f * pv;
            }
            row[j] = 0.0;
        }
        let f = self.cost[j];
        if f != 0.0 {
            for (&k, &pv) in nz.iter().zip(&pivot_row) {
                self.cost[k] -= f * pv;
            }
            self.cost[j] = 0.0;
        }
        let old = self.basis[r];
        self.row_of[old] = None;
        self.basis[r] = j;
        self.row_of[j] = Some(r);
    }

    fn dual_infeasibility(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.ncols {
            if !self.can_move(j) {
                continue;
            }
            let d = self.cost[j];
            if self.x[j] < self.hi[j] {
                worst = worst.max(d);
            }
            if self.x[j] > self.lo[j] {
                worst = worst.max(-d);
            }
        }
        worst
    }

    /// Rebuilds the tableau, basic values and reduced costs from the
    /// original rows by Gauss-Jordan elimination on `[B | A | b − N x_N]`.
    /// Leaves the state untouched if the basis looks singular.
    fn refactor(&mut self) {
        let (m, nc) = (self.m, self.ncols);
        if m == 0 {
            return;
        }
        let w = m + nc + 1;
        let mut g = vec![0.0; m * w];
        for i in 0..m {
            let orig = &self.a0[i * nc..(i + 1) * nc];
            let row = &mut g[i * w..(i + 1) * w];
            for (k, &b) in self.basis.iter().enumerate() {
                row[k] = orig[b];
            }
            row[m..m + nc].copy_from_slice(orig);
            let mut r = self.b0[i];
            for (j, &a) in orig.iter().enumerate() {
                if a != 0.0 && self.row_of[j].is_none() {
                    r -= a * self.x[j];
                }
            }
            row[m + nc] = r;
        }
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&p, &q| g[p * w + col].abs().total_cmp(&g[q * w + col].abs()))
                .unwrap_or(col);
            let p = g[piv * w + col];
            if p.abs() < 1e-12 {
                return;
            }
            if piv != col {
                for k in 0..w {
                    g.swap(piv * w + k, col * w + k);
                }
            }
            for k in 0..w {
                g[col * w + k] /= p;
            }
            let pivot_row: Vec<(usize, f64)> = (col..w)
                .map(|k| (k, g[col * w + k]))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = g[r * w + col];
                if f == 0.0 {
                    continue;
                }
                for &(k, v) in &pivot_row {
                    g[r * w + k] -= f * v;
                }
            }
        }
        for i in 0..m {
            let row = &g[i * w..(i + 1) * w];
            self.t[i * nc..(i + 1) * nc].copy_from_slice(&row[m..m + nc]);
            for (k, &b) in self.basis.iter().enumerate() {
                self.t[i * nc + b] = if k == i { 1.0 } else { 0.0 };
            }
            self.x[self.basis[i]] = row[m + nc];
        }
        let c = std::mem::take(&mut self.phase_cost);
        self.set_costs(&c);
    }
}
