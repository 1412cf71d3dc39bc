//! Block-sparse symmetric systems with 15x15 blocks and a right-looking
//! block Cholesky in natural order.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods under no_std
use nalgebra::{ComplexField, DMatrix, DVector, SMatrix, SVector};

pub const B: usize = 15;
pub type Block = SMatrix<f64, B, B>;
pub type BVec = SVector<f64, B>;

/// Symmetric block matrix; only the diagonal and the upper blocks `(i, j)`
/// with `i < j` are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub(crate) diag: Vec<Block>,
    pub(crate) upper: BTreeMap<(usize, usize), Block>,
}

impl BlockMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { diag: alloc::vec![Block::zeros(); n], upper: BTreeMap::new() }
    }

    pub fn block_count(&self) -> usize {
        self.diag.len()
    }

    /// Adds `m` to block `(i, j)` (and implicitly its transpose to `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, m: &Block) {
        if i == j {
            self.diag[i] += m;
        } else if i < j {
            *self.upper.entry((i, j)).or_insert_with(Block::zeros) += m;
        } else {
            *self.upper.entry((j, i)).or_insert_with(Block::zeros) += m.transpose();
        }
    }

    /// Block `(i, j)` if structurally present.
    pub fn block(&self, i: usize, j: usize) -> Option<Block> {
        if i == j {
            Some(self.diag[i])
        } else if i < j {
            self.upper.get(&(i, j)).copied()
        } else {
            self.upper.get(&(j, i)).map(|m| m.transpose())
        }
    }

    /// Structurally present off-diagonal pairs `(i, j)`, `i < j`.
    pub fn pattern(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.upper.keys().copied()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len() * B;
        let mut d = DMatrix::zeros(n, n);
        for (k, m) in self.diag.iter().enumerate() {
            d.fixed_view_mut::<B, B>(k * B, k * B).copy_from(m);
        }
        for (&(i, j), m) in &self.upper {
            d.fixed_view_mut::<B, B>(i * B, j * B).copy_from(m);
            d.fixed_view_mut::<B, B>(j * B, i * B).copy_from(&m.transpose());
        }
        d
    }
}

/// Dense Cholesky of one block; `None` when a pivot is not positive.
fn chol(a: &Block) -> Option<Block> {
    let mut l = Block::zeros();
    for j in 0..B {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..B {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
fn forward(l: &Block, b: &BVec) -> BVec {
    let mut x = *b;
    for i in 0..B {
        for k in 0..i {
            x[i] -= l[(i, k)] * x[k];
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Solves `L^T x = b`.
fn backward(l: &Block, b: &BVec) -> BVec {
    let mut x = *b;
    for i in (0..B).rev() {
        for k in i + 1..B {
            x[i] -= l[(k, i)] * x[k];
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Lower block Cholesky factor, stored by block column.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    diag: Vec<Block>,
    /// `cols[k]` maps row `i > k` to `L_ik`.
    cols: Vec<BTreeMap<usize, Block>>,
}

impl BlockCholesky {
    /// Factors `a`; `None` if it is not positive definite.
    pub fn factor(a: &BlockMatrix) -> Option<Self> {
        let n = a.diag.len();
        let mut diag_work = a.diag.clone();
        let mut cols: Vec<BTreeMap<usize, Block>> = alloc::vec![BTreeMap::new(); n];
        for (&(i, j), m) in &a.upper {
            cols[i].insert(j, m.transpose());
        }
        let mut diag = Vec::with_capacity(n);
        for k in 0..n {
            let lkk = chol(&diag_work[k])?;
            // L_ik = A_ik L_kk^-T, computed row by row as (L_kk^-1 A_ik^T)^T.
            let col = core::mem::take(&mut cols[k]);
            let mut done: Vec<(usize, Block)> = Vec::with_capacity(col.len());
            for (i, aik) in col {
                let at = aik.transpose();
                let mut x = Block::zeros();
                for c in 0..B {
                    x.set_column(c, &forward(&lkk, &at.column(c).into_owned()));
                }
                done.push((i, x.transpose()));
            }
            for (p, (i, lik)) in done.iter().enumerate() {
                diag_work[*i] -= lik * lik.transpose();
                for (j, ljk) in &done[p + 1..] {
                    let upd = ljk * lik.transpose();
                    *cols[*i].entry(*j).or_insert_with(Block::zeros) -= upd;
                }
            }
            cols[k] = done.into_iter().collect();
            diag.push(lkk);
        }
        Some(Self { diag, cols })
    }

    /// Number of stored off-diagonal factor blocks (fill included).
    pub fn fill(&self) -> usize {
        self.cols.iter().map(|c| c.len()).sum()
    }

    pub fn solve(&self, b: &[BVec]) -> Vec<BVec> {
        let n = self.diag.len();
        let mut y: Vec<BVec> = b.to_vec();
        for k in 0..n {
            y[k] = forward(&self.diag[k], &y[k]);
            let yk = y[k];
            for (&i, lik) in &self.cols[k] {
                y[i] -= lik * yk;
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for (&i, lik) in &self.cols[k] {
                s -= lik.transpose() * y[i];
            }
            y[k] = backward(&self.diag[k], &s);
        }
        y
    }
}

pub fn to_dense_vec(v: &[BVec]) -> DVector<f64> {
    DVector::from_iterator(v.len() * B, v.iter().flat_map(|b| b.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(rng: &mut ChaCha8Rng) -> Block {
        Block::from_fn(|_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let mut a = BlockMatrix::zeros(n);
        let links = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (0, 7), (2, 8)];
        for &(i, j) in &links {
            // J^T J contribution of a random two-block factor.
            let ji = random_block(&mut rng);
            let jj = random_block(&mut rng);
            a.add(i, i, &(ji.transpose() * ji));
            a.add(j, j, &(jj.transpose() * jj));
            a.add(i, j, &(ji.transpose() * jj));
        }
        for k in 0..n {
            a.add(k, k, &(Block::identity() * 0.1));
        }
        let b: Vec<BVec> = (0..n).map(|_| BVec::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let f = BlockCholesky::factor(&a).unwrap();
        let x = to_dense_vec(&f.solve(&b));
        let dense = a.to_dense().cholesky().unwrap().solve(&to_dense_vec(&b));
        assert!((x - dense).amax() < 1e-9);
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = BlockMatrix::zeros(2);
        a.add(0, 0, &Block::identity());
        a.add(1, 1, &Block::identity());
        a.add(0, 1, &(Block::identity() * 2.0));
        assert!(BlockCholesky::factor(&a).is_none());
    }

    #[test]
    fn add_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_block(&mut rng);
        let mut a = BlockMatrix::zeros(3);
        a.add(2, 0, &m);
        assert_eq!(a.block(0, 2), Some(m.transpose()));
        assert_eq!(a.block(2, 0), Some(m));
        assert_eq!(a.block(0, 1), None);
    }
}
