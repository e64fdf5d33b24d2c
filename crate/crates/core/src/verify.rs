//! Per-example verification (bounds → relaxation → LP → attack), grid
//! oracles for low-dimensional inputs and dataset sweeps.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{propagate_bounds, propagate_layer, InputRegion, LayerBounds};
use crate::error::{Error, Result};
use crate::falsify::{evaluate, pgd_falsify, AttackConfig, Witness, DEFAULT_RESTARTS, DEFAULT_STEPS};
use crate::lp::{LinearConstraint, LinearProgram, LpStatus, VarId};
use crate::network::{Layer, Network};
use crate::relax::{relu_relaxation, DEFAULT_TANGENTS};
use crate::specs::{CopyVars, EncodedSpec, SpecTemplate, Specification};

pub const CERTIFICATION_MARGIN: f64 = 1e-6;
pub const DEFAULT_GRID_POINTS: usize = 62;
pub const MAX_GRID_DIMS: usize = 4;
const TIGHTEN_PAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub margin: f64,
    pub n_tangents: usize,
    pub tighten_bounds: bool,
    pub attack_steps: usize,
    pub attack_restarts: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            margin: CERTIFICATION_MARGIN,
            n_tangents: DEFAULT_TANGENTS,
            tighten_bounds: false,
            attack_steps: DEFAULT_STEPS,
            attack_restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

impl VerifyOptions {
    /// Attack settings for a set of regions; the step is a quarter of the
    /// largest radius.
    pub fn attack_config(&self, regions: &[InputRegion], seed: u64) -> AttackConfig {
        let delta = regions.iter().map(|r| r.delta()).fold(0.0, f64::max);
        AttackConfig {
            steps: self.attack_steps,
            restarts: self.attack_restarts,
            seed,
            ..AttackConfig::for_delta(delta, seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Verified,
    Unknown,
    Falsified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    pub status: Status,
    /// LP maximum of `z`.
    pub relaxation_optimum: f64,
    /// Logit shift used by the encoding; see [`Specification::cleared_value`].
    pub shift: f64,
    pub witness: Option<Witness>,
}

/// The assembled relaxation for one example.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub lp: LinearProgram,
    pub encoded: EncodedSpec,
    pub bounds: Vec<LayerBounds>,
}

impl Relaxation {
    /// Solves the LP and returns `max z`.
    pub fn solve(&self) -> Result<f64> {
        let sol = self.lp.solve()?;
        match sol.status {
            LpStatus::Optimal => Ok(sol.objective),
            LpStatus::Infeasible => Err(Error::Consistency(
                "relaxation is infeasible although the nominal point satisfies it".into(),
            )),
            LpStatus::Unbounded => Err(Error::Internal("relaxation is unbounded".into())),
        }
    }
}

fn check_arity(nets: &[&Network], spec: &Specification, regions: &[InputRegion]) -> Result<()> {
    if nets.len() != spec.arity() || regions.len() != spec.arity() {
        return Err(Error::InputShape(format!(
            "{} specification needs {} networks and regions, got {} and {}",
            spec.kind_name(),
            spec.arity(),
            nets.len(),
            regions.len()
        )));
    }
    Ok(())
}

/// Adds variables and constraints for `layers[..upto]` of a network copy.
/// Returns the variables of activation levels `0..=upto`.
fn add_network_copy(
    lp: &mut LinearProgram,
    layers: &[Layer],
    bounds: &LayerBounds,
    tag: &str,
    upto: usize,
) -> Result<Vec<Vec<VarId>>> {
    let level_vars = |lp: &mut LinearProgram, k: usize| -> Vec<VarId> {
        bounds
            .lower(k)
            .iter()
            .zip(bounds.upper(k))
            .enumerate()
            .map(|(i, (&l, &u))| lp.add_var(format!("{tag}x{k}_{i}"), l, u))
            .collect()
    };
    let mut levels = vec![level_vars(lp, 0)];
    for (k, layer) in layers[..upto].iter().enumerate() {
        let next = level_vars(lp, k + 1);
        let prev = &levels[k];
        match layer {
            Layer::Affine { weight, bias } => {
                for (i, &v) in next.iter().enumerate() {
                    let terms = std::iter::once((v, 1.0))
                        .chain(prev.iter().zip(weight.row(i)).map(|(&p, &w)| (p, -w)));
                    lp.add_constraint(LinearConstraint::eq(terms, bias[i]));
                }
            }
            Layer::Relu => {
                for (i, (&pre, &post)) in prev.iter().zip(&next).enumerate() {
                    relu_relaxation(pre, post, bounds.lower(k)[i], bounds.upper(k)[i])?.apply(lp);
                }
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

/// Interval bounds refined by solving, for every neuron after the first
/// affine layer, the LP relaxation of the preceding layers in both
/// directions.
pub fn tighten_bounds(net: &Network, region: &InputRegion) -> Result<LayerBounds> {
    let coarse = propagate_bounds(net, region)?;
    let mut lower = vec![coarse.lower(0).to_vec()];
    let mut upper = vec![coarse.upper(0).to_vec()];
    let mut seen_affine = false;
    for (k, layer) in net.layers().iter().enumerate() {
        let (mut nl, mut nu) = propagate_layer(layer, &lower[k], &upper[k]);
        if let Layer::Affine { weight, bias } = layer {
            if seen_affine {
                let partial = LayerBounds::new(lower.clone(), upper.clone())?;
                let mut lp = LinearProgram::new();
                let levels = add_network_copy(&mut lp, net.layers(), &partial, "", k)?;
                let x = &levels[k];
                for i in 0..bias.len() {
                    let terms: Vec<(VarId, f64)> = x.iter().copied().zip(weight.row(i).iter().copied()).collect();
                    lp.set_objective(terms.iter().copied(), bias[i]);
                    let hi = solve_optimal(&lp)?;
                    lp.set_objective(terms.iter().map(|&(v, w)| (v, -w)), -bias[i]);
                    let lo = -solve_optimal(&lp)?;
                    nl[i] = nl[i].max(lo - TIGHTEN_PAD * (1.0 + lo.abs()));
                    nu[i] = nu[i].min(hi + TIGHTEN_PAD * (1.0 + hi.abs()));
                    if nl[i] > nu[i] {
                        let mid = (nl[i] + nu[i]) / 2.0;
                        nl[i] = mid;
                        nu[i] = mid;
                    }
                }
            }
            seen_affine = true;
        }
        lower.push(nl);
        upper.push(nu);
    }
    LayerBounds::new(lower, upper)
}

fn solve_optimal(lp: &LinearProgram) -> Result<f64> {
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        other => Err(Error::Consistency(format!("bound tightening LP ended {other:?}"))),
    }
}

/// Builds the LP maximizing `z` over the relaxed input/output set.
pub fn build_relaxation(
    nets: &[&Network],
    spec: &Specification,
    regions: &[InputRegion],
    opts: &VerifyOptions,
) -> Result<Relaxation> {
    check_arity(nets, spec, regions)?;
    spec.validate()?;
    let bounds = nets
        .iter()
        .zip(regions)
        .map(|(n, r)| if opts.tighten_bounds { tighten_bounds(n, r) } else { propagate_bounds(n, r) })
        .collect::<Result<Vec<_>>>()?;
    let mut lp = LinearProgram::new();
    let mut layouts = Vec::with_capacity(nets.len());
    for (c, (net, b)) in nets.iter().zip(&bounds).enumerate() {
        let tag = if nets.len() == 1 { String::new() } else { format!("c{c}_") };
        layouts.push(add_network_copy(&mut lp, net.layers(), b, &tag, net.layers().len())?);
    }
    let copies: Vec<CopyVars<'_>> = layouts
        .iter()
        .zip(&bounds)
        .map(|(levels, b)| CopyVars {
            x: &levels[0],
            y: levels.last().expect("nonempty"),
            bounds: b,
        })
        .collect();
    let encoded = spec.encode(&mut lp, &copies, opts.n_tangents)?;
    lp.set_objective([(encoded.z, 1.0)], 0.0);
    Ok(Relaxation { lp, encoded, bounds })
}

/// Verified iff the LP optimum is below `−margin`; otherwise the attack
/// decides between Falsified and Unknown.
pub fn verify_example(
    nets: &[&Network],
    spec: &Specification,
    regions: &[InputRegion],
    opts: &VerifyOptions,
) -> Result<VerificationOutcome> {
    let relaxation = build_relaxation(nets, spec, regions, opts)?;
    let optimum = relaxation.solve()?;
    let shift = relaxation.encoded.shift;
    if optimum < -opts.margin {
        return Ok(VerificationOutcome {
            status: Status::Verified,
            relaxation_optimum: optimum,
            shift,
            witness: None,
        });
    }
    let witness = pgd_falsify(nets, spec, regions, &opts.attack_config(regions, opts.seed))?;
    Ok(VerificationOutcome {
        status: if witness.is_some() { Status::Falsified } else { Status::Unknown },
        relaxation_optimum: optimum,
        shift,
        witness,
    })
}

/// Maximum of `F` over a regular grid (corners included) of the joint
/// input box.
pub fn grid_oracle(
    nets: &[&Network],
    spec: &Specification,
    regions: &[InputRegion],
    points_per_dim: usize,
) -> Result<f64> {
    check_arity(nets, spec, regions)?;
    let dims: usize = regions.iter().map(|r| r.dim()).sum();
    if dims > MAX_GRID_DIMS {
        return Err(Error::Config(format!(
            "grid oracle supports at most {MAX_GRID_DIMS} input dimensions, got {dims}"
        )));
    }
    if points_per_dim < 2 {
        return Err(Error::Config("grid oracle needs at least 2 points per axis".into()));
    }
    let axes: Vec<Vec<f64>> = regions
        .iter()
        .flat_map(|r| r.lower().iter().zip(r.upper()))
        .map(|(&l, &u)| {
            if u > l {
                (0..points_per_dim)
                    .map(|k| {
                        if k == points_per_dim - 1 {
                            u
                        } else {
                            l + (u - l) * k as f64 / (points_per_dim - 1) as f64
                        }
                    })
                    .collect()
            } else {
                vec![l]
            }
        })
        .collect();
    let mut idx = vec![0usize; axes.len()];
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut flat = idx.iter().zip(&axes).map(|(&i, a)| a[i]);
        let xs: Vec<Vec<f64>> = regions.iter().map(|r| flat.by_ref().take(r.dim()).collect()).collect();
        best = best.max(evaluate(nets, spec, &xs)?);
        let mut k = axes.len();
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// One test example for a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    /// Global clamp applied to every region, e.g. the pixel range.
    pub clip: Option<(f64, f64)>,
    pub options: VerifyOptions,
    /// Worker count; `None` uses every available core.
    pub jobs: Option<usize>,
    /// Writes 0 for the wall-clock column so reports are reproducible.
    pub omit_timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub verification_bound: f64,
    pub adversarial_bound: f64,
    pub n_examples: usize,
    pub mean_lp_value: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

pub const REPORT_HEADER: [&str; 6] = [
    "delta",
    "verification_bound",
    "adversarial_bound",
    "n_examples",
    "mean_lp_value",
    "wall_ms",
];

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Internal(format!("csv: {e}"));
        w.write_record(REPORT_HEADER).map_err(fail)?;
        for r in &self.rows {
            w.write_record([
                format_sig(r.delta),
                format_sig(r.verification_bound),
                format_sig(r.adversarial_bound),
                r.n_examples.to_string(),
                format_sig(r.mean_lp_value),
                format_sig(r.wall_ms),
            ])
            .map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Six significant digits, trailing zeros trimmed; scientific notation
/// outside `[1e-5, 1e6)`.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Seed for one (example, delta) pair, independent of scheduling.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = seed;
    for &p in parts {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-instance result inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceResult {
    pub verified: bool,
    pub falsified: bool,
    pub lp_value: f64,
}

/// Verifies and attacks one instance. A falsified certificate is reported
/// as a consistency error.
pub fn run_instance(
    net: &Network,
    template: &SpecTemplate,
    examples: &[Example],
    delta: f64,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<InstanceResult> {
    let labels: Option<Vec<usize>> = examples.iter().map(|e| e.label).collect();
    let spec = template.instantiate(labels.as_deref())?;
    let regions = examples
        .iter()
        .map(|e| {
            let (lo, hi) = cfg.clip.map_or((None, None), |(a, b)| (Some(a), Some(b)));
            InputRegion::clipped(e.input.clone(), delta, lo, hi)
        })
        .collect::<Result<Vec<_>>>()?;
    let nets: Vec<&Network> = vec![net; examples.len()];
    let relaxation = build_relaxation(&nets, &spec, &regions, &cfg.options)?;
    let lp_value = relaxation.solve()?;
    let verified = lp_value < -cfg.options.margin;
    let witness = pgd_falsify(&nets, &spec, &regions, &cfg.options.attack_config(&regions, seed))?;
    if verified && witness.is_some() {
        return Err(Error::Consistency(format!(
            "attack falsified a certified instance at delta {delta} (lp max {lp_value})"
        )));
    }
    Ok(InstanceResult {
        verified,
        falsified: witness.is_some(),
        lp_value,
    })
}

/// Runs every δ over every instance. Instances consume `template.arity()`
/// consecutive examples; a trailing remainder is ignored.
pub fn sweep(net: &Network, template: &SpecTemplate, examples: &[Example], cfg: &SweepConfig) -> Result<SweepReport> {
    let arity = template.arity();
    let instances: Vec<&[Example]> = examples.chunks_exact(arity).collect();
    if instances.is_empty() {
        return Err(Error::Config("sweep needs at least one test instance".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut rows = Vec::with_capacity(cfg.deltas.len());
    for (di, &delta) in cfg.deltas.iter().enumerate() {
        let start = Instant::now();
        let results: Vec<InstanceResult> = pool.install(|| {
            instances
                .par_iter()
                .enumerate()
                .map(|(i, ex)| {
                    let seed = derive_seed(cfg.options.seed, &[i as u64, di as u64]);
                    run_instance(net, template, ex, delta, cfg, seed)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let n = results.len();
        let verified = results.iter().filter(|r| r.verified).count();
        let robust = results.iter().filter(|r| !r.falsified).count();
        let mean_lp = results.iter().map(|r| r.lp_value).sum::<f64>() / n as f64;
        rows.push(SweepRow {
            delta,
            verification_bound: verified as f64 / n as f64,
            adversarial_bound: robust as f64 / n as f64,
            n_examples: n,
            mean_lp_value: mean_lp,
            wall_ms: if cfg.omit_timing { 0.0 } else { start.elapsed().as_secs_f64() * 1e3 },
        });
    }
    Ok(SweepReport { rows })
}
