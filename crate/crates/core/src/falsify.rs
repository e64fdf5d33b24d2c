//! Projected gradient ascent on `F` over the input box, with restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::InputRegion;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::specs::Specification;

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub steps: usize,
    /// Initial step; decays linearly to zero over the run.
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// Defaults scaled to a perturbation radius: `η = δ/4`.
    pub fn for_delta(delta: f64, seed: u64) -> Self {
        AttackConfig {
            steps: DEFAULT_STEPS,
            step_size: (delta / 4.0).max(f64::MIN_POSITIVE),
            restarts: DEFAULT_RESTARTS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::Config("attack needs at least one step and one restart".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("attack step size {} must be positive", self.step_size)));
        }
        Ok(())
    }
}

/// A concrete input (one vector per network copy) violating the specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub inputs: Vec<Vec<f64>>,
    pub value: f64,
}

/// Evaluates `F` at the given inputs.
pub fn evaluate(nets: &[&Network], spec: &Specification, xs: &[Vec<f64>]) -> Result<f64> {
    let ys = xs
        .iter()
        .zip(nets)
        .map(|(x, n)| n.forward(x))
        .collect::<Result<Vec<_>>>()?;
    spec.eval(xs, &ys)
}

/// `(F, ∇ₓF)` with the gradient pulled back through every network copy.
pub fn value_and_gradient(nets: &[&Network], spec: &Specification, xs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let traces = xs
        .iter()
        .zip(nets)
        .map(|(x, n)| n.forward_trace(x))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<Vec<f64>> = traces.iter().map(|t| t.last().expect("nonempty").clone()).collect();
    let value = spec.eval(xs, &ys)?;
    let (mut gx, gy) = spec.gradient(xs, &ys)?;
    for ((g, (net, trace)), gyn) in gx.iter_mut().zip(nets.iter().zip(&traces)).zip(&gy) {
        let back = net.backprop_input(trace, gyn);
        for (a, b) in g.iter_mut().zip(back) {
            *a += b;
        }
    }
    if !gx.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite attack gradient".into()));
    }
    Ok((value, gx))
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
    for (n, r) in nets.iter().zip(regions) {
        if n.input_dim() != r.dim() {
            return Err(Error::InputShape(format!(
                "region has dimension {}, network expects {}",
                r.dim(),
                n.input_dim()
            )));
        }
    }
    Ok(())
}

/// Sign-gradient ascent (steepest ascent for the ℓ∞ box) with exact
/// projection. Restart 0 starts at the region centers, the others at
/// uniform random points. Returns the best iterate iff its exact `F` is
/// positive; stops after the first restart that finds one.
pub fn pgd_falsify(
    nets: &[&Network],
    spec: &Specification,
    regions: &[InputRegion],
    cfg: &AttackConfig,
) -> Result<Option<Witness>> {
    cfg.validate()?;
    check_arity(nets, spec, regions)?;
    let mut best: Option<Witness> = None;
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let mut xs: Vec<Vec<f64>> = regions
            .iter()
            .map(|r| {
                if restart == 0 {
                    let mut c = r.center().to_vec();
                    r.clamp(&mut c);
                    c
                } else {
                    r.lower()
                        .iter()
                        .zip(r.upper())
                        .map(|(&l, &u)| if u > l { rng.gen_range(l..=u) } else { l })
                        .collect()
                }
            })
            .collect();
        for i in 0..=cfg.steps {
            let (value, grad) = value_and_gradient(nets, spec, &xs)?;
            if best.as_ref().map_or(true, |b| value > b.value) {
                best = Some(Witness {
                    inputs: xs.clone(),
                    value,
                });
            }
            if i == cfg.steps {
                break;
            }
            let eta = cfg.step_size * (1.0 - i as f64 / cfg.steps as f64);
            for ((x, g), r) in xs.iter_mut().zip(&grad).zip(regions) {
                for (xi, gi) in x.iter_mut().zip(g) {
                    if *gi > 0.0 {
                        *xi += eta;
                    } else if *gi < 0.0 {
                        *xi -= eta;
                    }
                }
                r.clamp(x);
            }
        }
        if best.as_ref().is_some_and(|b| b.value > 0.0) {
            break;
        }
    }
    let Some(candidate) = best else { return Ok(None) };
    if !candidate.inputs.iter().zip(regions).all(|(x, r)| r.contains(x)) {
        return Err(Error::Internal("attack iterate left its box".into()));
    }
    let value = evaluate(nets, spec, &candidate.inputs)?;
    Ok((value > 0.0).then_some(Witness {
        inputs: candidate.inputs,
        value,
    }))
}
