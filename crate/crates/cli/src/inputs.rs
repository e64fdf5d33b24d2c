//! Dataset, specification and flag-value resolution shared by the commands.

use std::path::Path;

use specverify::datasets::{load_mnist_dir, load_pendulum_csv, LabeledDataset, MnistSplit};
use specverify::physics::split_train_test;
use specverify::specs::{
    DistanceMatrix, EnergyParams, SpecTemplate, DEFAULT_DIGIT_SUM_EPSILON, DEFAULT_ENTROPY_FLOOR,
    DEFAULT_SEMANTIC_EPSILON,
};
use specverify::{Error, Result};

pub const PIXEL_RANGE: (f64, f64) = (0.0, 1.0);
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

/// A loaded dataset plus how its perturbation radii are expressed.
pub struct Data {
    pub set: LabeledDataset,
    pub images: bool,
}

impl Data {
    /// Converts a radius given on the command line into input units.
    pub fn radius(&self, delta: f64) -> f64 {
        if self.images {
            delta / PIXEL_SCALE
        } else {
            delta
        }
    }

    pub fn clip(&self) -> Option<(f64, f64)> {
        self.images.then_some(PIXEL_RANGE)
    }
}

/// A directory is read as MNIST IDX files, a file as a pendulum CSV. For
/// the pendulum the split follows the 70/30 convention.
pub fn load_data(path: &Path, split: Split) -> Result<Data> {
    if path.is_dir() {
        let s = match split {
            Split::Train => MnistSplit::Train,
            Split::Test => MnistSplit::Test,
        };
        return Ok(Data {
            set: load_mnist_dir(path, s)?,
            images: true,
        });
    }
    let pairs = load_pendulum_csv(path)?;
    let (train, test) = split_train_test(&pairs);
    let part = match split {
        Split::Train => train,
        Split::Test => test,
    };
    if part.is_empty() {
        return Err(Error::Config(format!(
            "{} has no {split:?} pairs after the 70/30 split",
            path.display()
        )));
    }
    Ok(Data {
        set: LabeledDataset::from_pairs("pendulum", part)?,
        images: false,
    })
}

/// Overrides applicable to the built-in specifications.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpecOverrides {
    pub epsilon: Option<f64>,
    pub digits: Option<usize>,
}

/// A built-in name or the path of a JSON template.
pub fn resolve_spec(arg: &str, o: SpecOverrides) -> Result<SpecTemplate> {
    match arg {
        "semantic" => Ok(SpecTemplate::semantic(
            &DistanceMatrix::cifar10_wordnet(),
            o.epsilon.unwrap_or(DEFAULT_SEMANTIC_EPSILON),
        )),
        "digit-sum" => Ok(SpecTemplate::digit_sum(
            o.digits.unwrap_or(2),
            o.epsilon.unwrap_or(DEFAULT_DIGIT_SUM_EPSILON),
        )),
        "energy" => Ok(SpecTemplate::energy(EnergyParams::default())),
        "entropy" => Ok(SpecTemplate::Entropy {
            floor: o.epsilon.unwrap_or(DEFAULT_ENTROPY_FLOOR),
        }),
        path => {
            if o.epsilon.is_some() || o.digits.is_some() {
                return Err(Error::Config(
                    "--epsilon and --digits only apply to built-in specifications".into(),
                ));
            }
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            SpecTemplate::from_json(&text)
        }
    }
}

/// Parses a comma-separated list of nonnegative reals.
pub fn parse_deltas(s: &str) -> std::result::Result<Vec<f64>, String> {
    let deltas = s
        .split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("{t:?} is not a number"))?;
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(format!("radius {v} must be finite and nonnegative"))
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(deltas)
}

pub fn parse_delta(s: &str) -> std::result::Result<f64, String> {
    match parse_deltas(s)?.as_slice() {
        [v] => Ok(*v),
        _ => Err("expected a single radius".into()),
    }
}

pub fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("{t:?} is not an index")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated indices".to_string())
}

pub fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("{t:?} is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [lo, hi] if lo.is_finite() && hi.is_finite() && lo <= hi => Ok((*lo, *hi)),
        _ => Err("expected lo,hi with lo <= hi".into()),
    }
}
