//! Sparse direct solves (faer) and small dense helpers.

use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

pub type Triplets = Vec<(usize, usize, f64)>;

/// Square sparse system `A x = b` kept as triplets until factorization.
#[derive(Clone, Debug, Default)]
pub struct SparseSystem {
    pub n: usize,
    pub triplets: Triplets,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem {
            n,
            triplets: Vec::new(),
            rhs: vec![0.0; n],
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.triplets.push((i, j, v));
        }
    }

    /// Adds a dense block at offset (r0, c0).
    pub fn add_dense(&mut self, r0: usize, c0: usize, m: &Mat<f64>) {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                self.add(r0 + i, c0 + j, m[(i, j)]);
            }
        }
    }

    /// Row/column elimination with prescribed values; the lift moves into the rhs.
    pub fn apply_dirichlet(&mut self, constraints: &[(usize, f64)]) {
        let mut value = vec![None; self.n];
        for &(i, v) in constraints {
            value[i] = Some(v);
        }
        let mut kept = Vec::with_capacity(self.triplets.len());
        for &(i, j, v) in &self.triplets {
            match (value[i], value[j]) {
                (None, None) => kept.push((i, j, v)),
                (None, Some(x)) => self.rhs[i] -= v * x,
                _ => {}
            }
        }
        for (i, v) in value.iter().enumerate() {
            if let Some(x) = v {
                kept.push((i, i, 1.0));
                self.rhs[i] = *x;
            }
        }
        self.triplets = kept;
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        SparseFactor::lu(self.n, &self.triplets)?.solve(&self.rhs)
    }

    pub fn solve_spd(&self) -> Result<Vec<f64>> {
        SparseFactor::spd(self.n, &self.triplets)?.solve(&self.rhs)
    }
}

enum Kind {
    Llt(Llt<usize, f64>),
    Lu(Lu<usize, f64>),
}

pub struct SparseFactor {
    kind: Kind,
    n: usize,
}

fn to_csc(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::Singular(format!("matrix build: {e:?}")))
}

impl SparseFactor {
    pub fn lu(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let a = to_csc(n, triplets)?;
        let lu = a.sp_lu().map_err(|e| Error::Singular(format!("lu: {e:?}")))?;
        Ok(SparseFactor { kind: Kind::Lu(lu), n })
    }

    /// Cholesky, falling back to LU when the matrix is not numerically SPD.
    pub fn spd(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let a = to_csc(n, triplets)?;
        match a.sp_cholesky(faer::Side::Lower) {
            Ok(llt) => Ok(SparseFactor { kind: Kind::Llt(llt), n }),
            Err(_) => {
                let lu = a.sp_lu().map_err(|e| Error::Singular(format!("lu: {e:?}")))?;
                Ok(SparseFactor { kind: Kind::Lu(lu), n })
            }
        }
    }

    pub fn solve_many(&self, rhs: &Mat<f64>) -> Result<Mat<f64>> {
        use faer::prelude::Solve;
        let x = match &self.kind {
            Kind::Llt(f) => f.solve(rhs),
            Kind::Lu(f) => f.solve(rhs),
        };
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::Singular("non-finite solution".into()));
                }
            }
        }
        Ok(x)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.solve_many(&b)?;
        Ok((0..self.n).map(|i| x[(i, 0)]).collect())
    }
}

/// Factorization of a matrix whose constrained set is fixed while the
/// prescribed values and the rhs change between solves.
pub struct EliminatedSystem {
    n: usize,
    fixed: Vec<bool>,
    /// (free row, fixed column, value) entries producing the lift
    lift: Triplets,
    factor: SparseFactor,
}

impl EliminatedSystem {
    pub fn new(n: usize, triplets: &[(usize, usize, f64)], fixed_dofs: &[usize], spd: bool) -> Result<Self> {
        let mut fixed = vec![false; n];
        for &i in fixed_dofs {
            fixed[i] = true;
        }
        let mut kept = Vec::with_capacity(triplets.len());
        let mut lift = Vec::new();
        for &(i, j, v) in triplets {
            match (fixed[i], fixed[j]) {
                (false, false) => kept.push((i, j, v)),
                (false, true) => lift.push((i, j, v)),
                _ => {}
            }
        }
        kept.extend((0..n).filter(|&i| fixed[i]).map(|i| (i, i, 1.0)));
        let factor = if spd { SparseFactor::spd(n, &kept)? } else { SparseFactor::lu(n, &kept)? };
        Ok(EliminatedSystem { n, fixed, lift, factor })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `values` must cover exactly the fixed dofs; missing ones default to zero.
    pub fn solve(&self, rhs: &[f64], values: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n];
        for &(i, v) in values {
            if !self.fixed[i] {
                return Err(Error::Singular(format!("dof {i} is not in the constrained set")));
            }
            x[i] = v;
        }
        let mut b: Vec<f64> = rhs.to_vec();
        for &(i, j, v) in &self.lift {
            b[i] -= v * x[j];
        }
        for i in 0..self.n {
            if self.fixed[i] {
                b[i] = x[i];
            }
        }
        self.factor.solve(&b)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn mat_vec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for j in 0..m.ncols() {
        let x = v[j];
        if x != 0.0 {
            for (i, o) in out.iter_mut().enumerate() {
                *o += m[(i, j)] * x;
            }
        }
    }
    out
}

pub fn mat_t_vec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)] * v[i]).sum())
        .collect()
}

/// `A ⊗ I₂`: expands a scalar nodal operator to two displacement components.
pub fn kron_i2(a: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(2 * a.nrows(), 2 * a.ncols(), |i, j| if i % 2 == j % 2 { a[(i / 2, j / 2)] } else { 0.0 })
}

pub fn dense_solve(a: &Mat<f64>, b: &Mat<f64>) -> Result<Mat<f64>> {
    use faer::prelude::Solve;
    let x = a.partial_piv_lu().solve(b);
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::Singular("dense solve".into()));
            }
        }
    }
    Ok(x)
}

pub fn max_abs(m: &Mat<f64>) -> f64 {
    let mut r: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            r = r.max(m[(i, j)].abs());
        }
    }
    r
}
