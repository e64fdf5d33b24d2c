//! MNIST IDX and pendulum CSV loaders.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::physics::{csv_error, PendulumPair, CSV_HEADER};
use crate::verify::Example;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Vectors(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, inputs: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        let n_targets = match &targets {
            Targets::Classes(c) => c.len(),
            Targets::Vectors(v) => v.len(),
        };
        if inputs.is_empty() {
            return Err(Error::Consistency("dataset is empty".into()));
        }
        if n_targets != inputs.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {n_targets} targets",
                inputs.len()
            )));
        }
        let dim = inputs[0].len();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Consistency("inputs differ in dimension".into()));
        }
        Ok(LabeledDataset {
            name: name.into(),
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Vectors(_) => None,
        }
    }

    /// The first `n` examples (all when `n` exceeds the size).
    pub fn examples(&self, n: usize) -> Vec<Example> {
        let labels = self.labels();
        self.inputs
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, x)| Example {
                input: x.clone(),
                label: labels.map(|l| l[i]),
            })
            .collect()
    }

    pub fn from_pairs(name: impl Into<String>, pairs: &[PendulumPair]) -> Result<Self> {
        Self::new(
            name,
            pairs.iter().map(|p| p.input.to_vec()).collect(),
            Targets::Vectors(pairs.iter().map(|p| p.target.to_vec()).collect()),
        )
    }
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_header(cur: &mut Cursor<&[u8]>, path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let found = cur.read_u32::<BigEndian>().map_err(|e| Error::io(path, e))?;
    if found != magic {
        return Err(Error::Format(format!(
            "{}: IDX magic {found}, expected {magic}",
            path.display()
        )));
    }
    (0..dims)
        .map(|_| cur.read_u32::<BigEndian>().map(|v| v as usize).map_err(|e| Error::io(path, e)))
        .collect()
}

fn take_exact<'a>(cur: &mut Cursor<&'a [u8]>, path: &Path, n: usize) -> Result<&'a [u8]> {
    let start = cur.position() as usize;
    let data: &'a [u8] = cur.get_ref();
    let end = start
        .checked_add(n)
        .filter(|&e| e <= data.len())
        .ok_or_else(|| {
            Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated IDX payload"),
            )
        })?;
    cur.set_position(end as u64);
    Ok(&data[start..end])
}

/// Loads an image/label IDX pair; pixels are scaled into `[0, 1]`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let ibytes = read_maybe_gz(ipath)?;
    let lbytes = read_maybe_gz(lpath)?;
    let mut icur = Cursor::new(ibytes.as_slice());
    let idims = read_header(&mut icur, ipath, IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (idims[0], idims[1], idims[2]);
    let pixels = take_exact(&mut icur, ipath, count * rows * cols)?;
    let mut lcur = Cursor::new(lbytes.as_slice());
    let lcount = read_header(&mut lcur, lpath, LABEL_MAGIC, 1)?[0];
    if lcount != count {
        return Err(Error::Consistency(format!("{count} images but {lcount} labels")));
    }
    let labels: Vec<usize> = take_exact(&mut lcur, lpath, count)?.iter().map(|&b| b as usize).collect();
    let dim = rows * cols;
    let inputs: Vec<Vec<f64>> = pixels
        .chunks_exact(dim.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    LabeledDataset::new(
        ipath.file_name().map_or("mnist".into(), |n| n.to_string_lossy().into_owned()),
        inputs,
        Targets::Classes(labels),
    )
}

/// Which half of an MNIST directory to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

fn find_idx(dir: &Path, prefix: &str, kind: &str) -> Result<PathBuf> {
    let stem = format!("{prefix}-{kind}-idx{}-ubyte", if kind == "images" { 3 } else { 1 });
    for name in [format!("{stem}.gz"), stem.clone()] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

/// Loads `train-*` or `t10k-*` IDX files (optionally gzipped) from a directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: MnistSplit) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let mut ds = load_mnist_idx(find_idx(dir, prefix, "images")?, find_idx(dir, prefix, "labels")?)?;
    ds.name = format!("mnist-{prefix}");
    Ok(ds)
}

pub fn load_pendulum_csv(path: impl AsRef<Path>) -> Result<Vec<PendulumPair>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!("header {:?}, expected {}", header.iter().collect::<Vec<_>>(), CSV_HEADER.join(",")),
        });
    }
    let mut pairs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut v = [0.0; 6];
        for (k, cell) in rec.iter().enumerate() {
            v[k] = cell.trim().parse().map_err(|_| Error::Parse {
                context: format!("{}:{}", path.display(), line + 2),
                message: format!("column {} is not a number: {cell:?}", CSV_HEADER[k]),
            })?;
        }
        pairs.push(PendulumPair {
            input: [v[0], v[1], v[2]],
            target: [v[3], v[4], v[5]],
        });
    }
    Ok(pairs)
}
