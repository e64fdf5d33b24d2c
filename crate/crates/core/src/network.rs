//! Feedforward networks built from dense affine layers and ReLUs.
//!
//! A [`Network`] is immutable once constructed; evaluation, interval
//! propagation and LP encoding all read the same layer list.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Schema(format!(
                    "matrix row {i} has length {}, expected {n_cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `W x`, accumulated left to right along each row.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| dot(self.row(i), x))
            .collect()
    }

    /// `Wᵀ g`.
    pub fn mul_transpose_vec(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * gi;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine { weight: Matrix, bias: Vec<f64> },
    Relu,
}

impl Layer {
    pub fn affine(weight: Matrix, bias: Vec<f64>) -> Self {
        Layer::Affine { weight, bias }
    }

    fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Layer::Affine { weight, .. } => weight.rows(),
            Layer::Relu => input_dim,
        }
    }

    /// Applies the layer to `x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Affine { weight, bias } => (0..weight.rows())
                .map(|i| dot(weight.row(i), x) + bias[i])
                .collect(),
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(name: impl Into<String>, input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Schema("input_dim must be positive".into()));
        }
        let mut dim = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if let Layer::Affine { weight, bias } = layer {
                if weight.cols() != dim {
                    return Err(Error::Schema(format!(
                        "layer {k}: weight has {} columns but the incoming dimension is {dim}",
                        weight.cols()
                    )));
                }
                if weight.rows() != bias.len() {
                    return Err(Error::Schema(format!(
                        "layer {k}: weight has {} rows but bias has length {}",
                        weight.rows(),
                        bias.len()
                    )));
                }
                if weight.rows() == 0 {
                    return Err(Error::Schema(format!("layer {k}: empty affine layer")));
                }
                if !weight.as_slice().iter().chain(bias).all(|v| v.is_finite()) {
                    return Err(Error::Schema(format!("layer {k}: non-finite parameter")));
                }
            }
            dim = layer.output_dim(dim);
        }
        Ok(Network {
            name: name.into(),
            input_dim,
            output_dim: dim,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Affine { weight, bias } => weight.as_slice().len() + bias.len(),
                Layer::Relu => 0,
            })
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.pop().expect("trace holds the input"))
    }

    /// Returns every activation `x_0, .., x_K` produced while evaluating `x`.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim {
            return Err(Error::InputShape(format!(
                "network {} expects {} inputs, got {}",
                self.name,
                self.input_dim,
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let next = layer.apply(trace.last().expect("nonempty"));
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite activation after layer {k}")));
            }
            trace.push(next);
        }
        Ok(trace)
    }

    /// Pulls an output cotangent back to the input through a recorded trace.
    /// The ReLU subgradient at zero is taken as zero.
    pub fn backprop_input(&self, trace: &[Vec<f64>], grad_out: &[f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            g = match layer {
                Layer::Affine { weight, .. } => weight.mul_transpose_vec(&g),
                Layer::Relu => g
                    .iter()
                    .zip(&trace[k])
                    .map(|(&gi, &pre)| if pre > 0.0 { gi } else { 0.0 })
                    .collect(),
            };
        }
        g
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "model".into(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| match l {
                LayerFile::Affine { weight, bias } => Matrix::from_rows(&weight)
                    .map(|w| Layer::affine(w, bias))
                    .map_err(|e| Error::Schema(format!("layer {k}: {e}"))),
                LayerFile::Relu => Ok(Layer::Relu),
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(file.name, file.input_dim, layers)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Affine { weight, bias } => LayerFile::Affine {
                        weight: weight.to_rows(),
                        bias: bias.clone(),
                    },
                    Layer::Relu => LayerFile::Relu,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("model serialization is infallible")
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    name: String,
    input_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LayerFile {
    Affine { weight: Vec<Vec<f64>>, bias: Vec<f64> },
    Relu,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::InputShape("softmax of an empty vector".into()));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

pub fn log_softmax(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::InputShape("softmax of an empty vector".into()));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(y.iter().map(|v| v - lse).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}
