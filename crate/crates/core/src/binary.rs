//! ±1 matrices and layers shared by the trainer and the crossbar mapper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix whose entries are all −1 or +1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

fn check_binary(values: &[i8], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|&v| v != 1 && v != -1) {
        return Err(Error::NonBinary {
            value: values[pos] as f64,
            location: format!("{what}[{pos}]"),
        });
    }
    Ok(())
}

impl BinaryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}×{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_binary(&data, "weights")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real values that must already be exactly ±1.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v == 1.0 {
                data.push(1);
            } else if v == -1.0 {
                data.push(-1);
            } else {
                return Err(Error::NonBinary {
                    value: v,
                    location: format!("({}, {})", i / cols.max(1), i % cols.max(1)),
                });
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn filled(rows: usize, cols: usize, value: i8) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.data
    }

    /// Copies the sub-block `rows × cols`.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMatrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            data.extend_from_slice(&self.row(r)[cols.clone()]);
        }
        BinaryMatrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }
}

/// One binarized fully-connected layer: y = W·x + B with W, B ∈ {−1, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarizedLayer {
    pub weights: BinaryMatrix,
    pub biases: Vec<i8>,
}

impl BinarizedLayer {
    pub fn new(weights: BinaryMatrix, biases: Vec<i8>) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} biases for a layer with {} outputs",
                biases.len(),
                weights.rows()
            )));
        }
        check_binary(&biases, "biases")?;
        Ok(Self { weights, biases })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Binarized parameters of a whole IMAC MLP, first layer first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedParameters {
    pub layers: Vec<BinarizedLayer>,
}

impl TrainedParameters {
    pub fn new(layers: Vec<BinarizedLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("a network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} emits {} values but layer {} expects {}",
                    k + 1,
                    pair[0].outputs(),
                    k + 2,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Layer widths including the input width, e.g. `[784, 16, 10]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs()];
        dims.extend(self.layers.iter().map(|l| l.outputs()));
        dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_entries() {
        assert!(matches!(BinaryMatrix::new(1, 2, vec![1, 0]), Err(Error::NonBinary { .. })));
        assert!(BinaryMatrix::from_f64(1, 2, &[1.0, 0.5]).is_err());
        let w = BinaryMatrix::filled(2, 2, 1).unwrap();
        assert!(BinarizedLayer::new(w.clone(), vec![1, 2]).is_err());
        assert!(BinarizedLayer::new(w, vec![1]).is_err());
    }

    #[test]
    fn chained_dims() {
        let l1 = BinarizedLayer::new(BinaryMatrix::filled(3, 4, 1).unwrap(), vec![1; 3]).unwrap();
        let l2 = BinarizedLayer::new(BinaryMatrix::filled(2, 3, -1).unwrap(), vec![-1; 2]).unwrap();
        let p = TrainedParameters::new(vec![l1.clone(), l2]).unwrap();
        assert_eq!(p.dims(), vec![4, 3, 2]);
        assert!(TrainedParameters::new(vec![l1.clone(), l1]).is_err());
    }

    #[test]
    fn block_extracts_submatrix() {
        let m = BinaryMatrix::new(2, 3, vec![1, -1, 1, -1, -1, 1]).unwrap();
        let b = m.block(0..2, 1..3);
        assert_eq!(b.as_slice(), &[-1, 1, -1, 1]);
    }
}
