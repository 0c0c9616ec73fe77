//! Dense matrix-vector products shared by the least-squares term and the
//! power iteration.
//!
//! Every output entry is one sequential row dot product, so the parallel and
//! sequential paths produce bit-identical results.

use ndarray::{Array1, Array2, ArrayView1};

/// How batched work is scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work stealing; falls back to [`Execution::Sequential`] when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this choice actually runs on the rayon pool in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Matrices smaller than this many entries are always multiplied sequentially.
pub const PAR_MATVEC_MIN_ENTRIES: usize = 1 << 20;

/// `a * x` for a row-major `a`.
pub fn mat_vec(a: &Array2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    let exec = if a.len() >= PAR_MATVEC_MIN_ENTRIES { Execution::Parallel } else { Execution::Sequential };
    mat_vec_with(a, x, exec)
}

pub fn mat_vec_with(a: &Array2<f64>, x: ArrayView1<f64>, exec: Execution) -> Array1<f64> {
    assert_eq!(a.ncols(), x.len(), "mat_vec dimension mismatch");
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let out: Vec<f64> = (0..a.nrows()).into_par_iter().map(|i| a.row(i).dot(&x)).collect();
        return Array1::from(out);
    }
    let _ = exec;
    a.rows().into_iter().map(|row| row.dot(&x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sequential_matches_parallel_bitwise() {
        let a = Array2::from_shape_fn((37, 53), |(i, j)| ((i * 7 + j * 13) % 17) as f64 / 3.0 - 2.5);
        let x = Array1::from_shape_fn(53, |j| (j as f64).sin());
        let s = mat_vec_with(&a, x.view(), Execution::Sequential);
        let p = mat_vec_with(&a, x.view(), Execution::Parallel);
        assert_eq!(s, p);
    }

    #[test]
    fn small_product() {
        let a = array![[1.0, 2.0], [3.0, 4.0], [0.0, -1.0]];
        assert_eq!(mat_vec(&a, array![1.0, 1.0].view()), array![3.0, 7.0, -1.0]);
    }
}
