use nalgebra::DMatrix;

/// Non-negative item-by-dimension factor matrix; row `i` is item `i`'s
/// weight vector over the latent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub DMatrix<f64>);

impl Embedding {
    pub fn new(w: DMatrix<f64>) -> Self {
        Embedding(w)
    }

    pub fn zeros(n: usize, r: usize) -> Self {
        Embedding(DMatrix::zeros(n, r))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Reconstructed similarities `W Wᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.0.column(k).iter().copied().collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&x| x >= 0.0)
    }

    /// Columns reordered so that new column `k` is old column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Embedding {
        Embedding(DMatrix::from_fn(self.n(), perm.len(), |i, k| {
            self.0[(i, perm[k])]
        }))
    }

    /// Copy padded with zero columns up to `r` columns.
    pub fn padded(&self, r: usize) -> Embedding {
        Embedding(DMatrix::from_fn(self.n(), r.max(self.rank()), |i, k| {
            if k < self.rank() {
                self.0[(i, k)]
            } else {
                0.0
            }
        }))
    }

    pub fn rows(&self, idx: &[usize]) -> Embedding {
        Embedding(DMatrix::from_fn(idx.len(), self.rank(), |i, k| {
            self.0[(idx[i], k)]
        }))
    }
}

impl From<DMatrix<f64>> for Embedding {
    fn from(w: DMatrix<f64>) -> Self {
        Embedding(w)
    }
}
