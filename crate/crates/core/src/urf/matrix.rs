use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Dense square matrix of pairwise similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "similarity matrix of order {n} needs {} values, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(SimilarityMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        SimilarityMatrix { n, data }
    }

    /// Fills the upper triangle with `f` and mirrors it; the diagonal is 1.
    pub fn symmetric_from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SimilarityMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Restriction to the given rows/columns, in the given order.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        SimilarityMatrix::from_fn(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    /// Writes the matrix as headerless CSV with full round-trip precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            for cell in line.split(',') {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: k as u64 + 1,
                    msg: format!("not a number: {cell:?}"),
                })?;
                data.push(v);
            }
        }
        SimilarityMatrix::new(rows, data).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}
