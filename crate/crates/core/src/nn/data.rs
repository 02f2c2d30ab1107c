//! Labelled datasets: a built-in synthetic digit set and delimited-text
//! ingestion.

use std::path::Path;

use super::{argmax, MODULE};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    targets: Matrix,
    labels: Vec<usize>,
}

impl Dataset {
    /// Inputs and real-valued targets, one sample per row. Labels are the
    /// target argmax.
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(MODULE, format!("{} inputs vs {} targets", inputs.rows(), targets.rows())));
        }
        let labels = (0..targets.rows()).map(|i| argmax(targets.row(i))).collect();
        Ok(Dataset { inputs, targets, labels })
    }

    /// Class labels in `0..classes` with one-hot targets.
    pub fn classification(inputs: Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(MODULE, format!("{} inputs vs {} labels", inputs.rows(), labels.len())));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::range(MODULE, format!("sample {i} has label {l}, only {classes} classes")));
        }
        let targets = Matrix::from_fn(labels.len(), classes, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        Ok(Dataset { inputs, targets, labels: labels.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_size(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_size(&self) -> usize {
        self.targets.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], &[f64]) {
        (self.inputs.row(i), self.targets.row(i))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::range(MODULE, format!("sample index {i} beyond {} samples", self.len())));
        }
        let pick = |m: &Matrix| Matrix::from_fn(indices.len(), m.cols(), |r, c| m[(indices[r], c)]);
        Ok(Dataset {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Largest absolute input value.
    pub fn input_max(&self) -> f64 {
        self.inputs.max_abs()
    }

    /// Read comma-separated samples: feature values then an integer label on
    /// every line. A first line that does not parse as numbers is treated as a
    /// header. `classes` defaults to the largest label plus one.
    pub fn from_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(MODULE, format!("{}: {e}", path.display())))?;
        Self::from_reader(file, classes).map_err(|e| e.at(path.display()))
    }

    pub fn from_reader(reader: impl std::io::Read, classes: Option<usize>) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut features: Vec<f64> = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::io(MODULE, format!("line {}: {e}", line + 1)))?;
            if record.iter().all(str::is_empty) {
                continue;
            }
            let parsed: Option<Vec<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
            let values = match parsed {
                Some(v) => v,
                None if line == 0 => continue,
                None => return Err(Error::io(MODULE, format!("line {}: non-numeric field", line + 1))),
            };
            if values.len() < 2 {
                return Err(Error::io(MODULE, format!("line {}: need features and a label", line + 1)));
            }
            let n = values.len() - 1;
            if *width.get_or_insert(n) != n {
                return Err(Error::io(MODULE, format!("line {}: {n} features, expected {}", line + 1, width.unwrap_or(0))));
            }
            let label = values[n];
            if !(label >= 0.0 && label.fract() == 0.0) {
                return Err(Error::io(MODULE, format!("line {}: label {label} is not a class index", line + 1)));
            }
            if values[..n].iter().any(|v| !v.is_finite()) {
                return Err(Error::io(MODULE, format!("line {}: non-finite feature", line + 1)));
            }
            features.extend_from_slice(&values[..n]);
            labels.push(label as usize);
        }
        let Some(width) = width else {
            return Err(Error::io(MODULE, "no samples"));
        };
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Dataset::classification(Matrix::from_vec(labels.len(), width, features)?, &labels, classes)
    }
}

pub const DIGIT_SIDE: usize = 8;
pub const DIGIT_CLASSES: usize = 10;
const DIGIT_TRAIN: usize = 600;
const DIGIT_TEST: usize = 200;
const DIGIT_NOISE: f64 = 0.15;
const EXTRA_INK: usize = 3;

// seven-segment strokes on the 8×8 grid as (row, col) ranges
const SEGMENTS: [((usize, usize), (usize, usize)); 7] = [
    ((0, 0), (2, 5)), // a: top
    ((1, 3), (6, 6)), // b: upper right
    ((5, 6), (6, 6)), // c: lower right
    ((7, 7), (2, 5)), // d: bottom
    ((5, 6), (1, 1)), // e: lower left
    ((1, 3), (1, 1)), // f: upper left
    ((4, 4), (2, 5)), // g: middle
];

const GLYPHS: [&str; DIGIT_CLASSES] =
    ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"];

fn templates(stream: &RandomStream) -> Vec<[f64; DIGIT_SIDE * DIGIT_SIDE]> {
    GLYPHS
        .iter()
        .enumerate()
        .map(|(class, glyph)| {
            let mut t = [0.0; DIGIT_SIDE * DIGIT_SIDE];
            for seg in glyph.bytes() {
                let ((r0, r1), (c0, c1)) = SEGMENTS[(seg - b'a') as usize];
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        t[r * DIGIT_SIDE + c] = 1.0;
                    }
                }
            }
            let mut s = stream.fork(class as u64);
            for _ in 0..EXTRA_INK {
                t[s.index(DIGIT_SIDE * DIGIT_SIDE)] = 1.0;
            }
            t
        })
        .collect()
}

fn draw_digits(templates: &[[f64; DIGIT_SIDE * DIGIT_SIDE]], n: usize, stream: &RandomStream) -> Result<Dataset> {
    let side = DIGIT_SIDE as isize;
    let mut pixels = Vec::with_capacity(n * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let mut s = stream.fork(k as u64);
        let class = k % DIGIT_CLASSES;
        let (dr, dc) = (s.index(3) as isize - 1, s.index(3) as isize - 1);
        let ink = s.uniform_in(0.6, 1.0);
        for r in 0..side {
            for c in 0..side {
                let (sr, sc) = (r - dr, c - dc);
                let base = if (0..side).contains(&sr) && (0..side).contains(&sc) {
                    templates[class][(sr * side + sc) as usize] * ink
                } else {
                    0.0
                };
                pixels.push((base + DIGIT_NOISE * s.normal()).clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::classification(Matrix::from_vec(n, DIGIT_SIDE * DIGIT_SIDE, pixels)?, &labels, DIGIT_CLASSES)
}

/// Synthetic ten-class 8×8 digit set: seven-segment glyphs with a few
/// seeded extra pixels per class, randomly shifted by up to one pixel, with
/// random stroke intensity and Gaussian pixel noise. Pixel values lie in
/// `[0, 1]`. Returns `(train, test)` with 600 and 200 samples.
pub fn builtin_digits(seed: u64) -> Result<(Dataset, Dataset)> {
    let root = RandomStream::new(seed, 0);
    let t = templates(&root.fork(0));
    Ok((draw_digits(&t, DIGIT_TRAIN, &root.fork(1))?, draw_digits(&t, DIGIT_TEST, &root.fork(2))?))
}
