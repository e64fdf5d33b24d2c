//! Damped pendulum simulator and (state, next state) dataset generator.
//!
//! Network coordinates are `(w, h, s·ω) = (sin θ, −cos θ, ω/10)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::specs::EnergyParams;

pub const CSV_HEADER: [&str; 6] = ["w", "h", "somega", "w_next", "h_next", "somega_next"];
pub const MAX_INITIAL_OMEGA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt_inner: f64,
    pub dt: f64,
    pub velocity_scale: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 0.5,
            gravity: 9.81,
            damping: 0.1,
            dt_inner: 0.001,
            dt: 0.1,
            velocity_scale: 0.1,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.mass, self.length, self.gravity, self.dt_inner, self.dt, self.velocity_scale];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Domain("pendulum mass, length, gravity and time steps must be positive".into()));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::Domain("damping must be nonnegative".into()));
        }
        if self.dt_inner > self.dt {
            return Err(Error::Domain("inner step exceeds the sample interval".into()));
        }
        Ok(())
    }

    pub fn energy_params(&self) -> EnergyParams {
        EnergyParams {
            mass: self.mass,
            length: self.length,
            gravity: self.gravity,
            velocity_scale: self.velocity_scale,
        }
    }

    fn substeps(&self) -> usize {
        ((self.dt / self.dt_inner).round() as usize).max(1)
    }
}

/// Advances one sample interval with semi-implicit Euler substeps.
pub fn step_pendulum(s: PendulumState, p: &PendulumParams) -> PendulumState {
    let h = p.dt / p.substeps() as f64;
    let (mut theta, mut omega) = (s.theta, s.omega);
    let damp = p.damping / (p.mass * p.length * p.length);
    for _ in 0..p.substeps() {
        omega += h * (-(p.gravity / p.length) * theta.sin() - damp * omega);
        theta += h * omega;
    }
    PendulumState { theta, omega }
}

/// Total energy with the height measured from the pivot.
pub fn energy(s: PendulumState, p: &PendulumParams) -> f64 {
    let h = -s.theta.cos();
    p.mass * p.gravity * p.length * h + 0.5 * p.mass * p.length * p.length * s.omega * s.omega
}

pub fn to_coords(s: PendulumState, p: &PendulumParams) -> [f64; 3] {
    [s.theta.sin(), -s.theta.cos(), p.velocity_scale * s.omega]
}

/// One (state, next state) sample in network coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumPair {
    pub input: [f64; 3],
    pub target: [f64; 3],
}

/// `θ ~ U[−π, π)`, `ω ~ U(−10, 10)`, stepped once. Pairs whose next
/// velocity leaves the sampled range are redrawn.
pub fn generate_dataset(n_pairs: usize, seed: u64, p: &PendulumParams) -> Result<Vec<PendulumPair>> {
    p.validate()?;
    if n_pairs == 0 {
        return Err(Error::Config("dataset needs at least one pair".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let limit = MAX_INITIAL_OMEGA * p.velocity_scale;
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let theta = rng.gen_range(-pi..pi);
        let omega = rng.gen_range(-MAX_INITIAL_OMEGA..MAX_INITIAL_OMEGA);
        if omega == -MAX_INITIAL_OMEGA {
            continue;
        }
        let s = PendulumState { theta, omega };
        let pair = PendulumPair {
            input: to_coords(s, p),
            target: to_coords(step_pendulum(s, p), p),
        };
        // gravity can push the next velocity past the sampled range
        if pair.target[2].abs() <= limit {
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

/// 70/30 split by index.
pub fn split_train_test(pairs: &[PendulumPair]) -> (&[PendulumPair], &[PendulumPair]) {
    pairs.split_at(pairs.len() * 7 / 10)
}

pub fn write_csv(pairs: &[PendulumPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for pair in pairs {
        let row: Vec<String> = pair.input.iter().chain(&pair.target).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            context: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}
