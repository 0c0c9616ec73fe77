//! Smooth loss terms and the composite problem `f(x) + lambda ||x||_p^p`.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::mat_vec;
use crate::math::{DenseVector, RegParams};

/// Default relative tolerance for [`estimate_lipschitz`].
pub const LIPSCHITZ_TOL: f64 = 1e-10;
/// Default iteration budget for [`estimate_lipschitz`].
pub const LIPSCHITZ_MAX_ITER: usize = 5000;
const POWER_ITERATION_SEED: u64 = 0x5eed_1e57;

/// A differentiable loss with Lipschitz gradient.
///
/// Implementations must be safe to evaluate concurrently from several threads.
pub trait SmoothTerm: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;
    fn value(&self, x: &DenseVector) -> f64;
    fn gradient(&self, x: &DenseVector) -> Array1<f64>;
    /// Upper bound on the Lipschitz constant of the gradient.
    fn lipschitz_constant(&self) -> f64;
}

/// `f(x) = 1/2 ||A x - y||^2`.
#[derive(Clone, Debug)]
pub struct LeastSquaresProblem {
    a: Array2<f64>,
    // Row-major copy of A^T so both products run as row dot products.
    at: Array2<f64>,
    y: Array1<f64>,
    lipschitz: f64,
}

impl LeastSquaresProblem {
    /// Builds the term and estimates `sigma_max(A)^2` by power iteration.
    pub fn new(a: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let lipschitz =
            if a.iter().all(|v| *v == 0.0) { 0.0 } else { estimate_lipschitz(&a, LIPSCHITZ_TOL, LIPSCHITZ_MAX_ITER)? };
        Self::with_lipschitz(a, y, lipschitz)
    }

    /// Builds the term with a caller-supplied Lipschitz constant.
    pub fn with_lipschitz(a: Array2<f64>, y: Array1<f64>, lipschitz: f64) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::Usage(format!("A has {} rows but y has length {}", a.nrows(), y.len())));
        }
        if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("A or y has non-finite entries".into()));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid lipschitz constant {lipschitz}")));
        }
        let at = a.t().as_standard_layout().into_owned();
        let a = a.as_standard_layout().into_owned();
        Ok(Self { a, at, y, lipschitz })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn observations(&self) -> &Array1<f64> {
        &self.y
    }

    fn residual(&self, x: &DenseVector) -> Array1<f64> {
        mat_vec(&self.a, x.view()) - &self.y
    }
}

impl SmoothTerm for LeastSquaresProblem {
    fn dimension(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DenseVector) -> f64 {
        let r = self.residual(x);
        0.5 * r.dot(&r)
    }

    fn gradient(&self, x: &DenseVector) -> Array1<f64> {
        let r = self.residual(x);
        mat_vec(&self.at, r.view())
    }

    fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }
}

/// A smooth term together with the `lp` regularizer parameters.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    smooth: Arc<dyn SmoothTerm>,
    reg: RegParams,
}

impl ProblemInstance {
    pub fn new(smooth: impl SmoothTerm + 'static, reg: RegParams) -> Result<Self> {
        Self::from_shared(Arc::new(smooth), reg)
    }

    pub fn from_shared(smooth: Arc<dyn SmoothTerm>, reg: RegParams) -> Result<Self> {
        if smooth.dimension() == 0 {
            return Err(Error::Usage("smooth term has dimension 0".into()));
        }
        Ok(Self { smooth, reg })
    }

    /// Same smooth term, different regularizer.
    pub fn with_reg(&self, reg: RegParams) -> Self {
        Self { smooth: Arc::clone(&self.smooth), reg }
    }

    pub fn smooth(&self) -> &dyn SmoothTerm {
        self.smooth.as_ref()
    }

    pub fn reg(&self) -> RegParams {
        self.reg
    }

    pub fn dimension(&self) -> usize {
        self.smooth.dimension()
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dimension() {
            return Err(Error::Usage(format!("vector has length {n}, problem has dimension {}", self.dimension())));
        }
        Ok(())
    }
}

/// Estimates `sigma_max(A)^2` by power iteration on `A^T A`.
///
/// The estimate is a Rayleigh quotient, so it approaches the true value from
/// below; it stops once successive estimates agree to relative `tol`.
pub fn estimate_lipschitz(a: &Array2<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::config("tol", format!("must be positive, got {tol}")));
    }
    if a.is_empty() || a.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidInput("power iteration needs a nonzero matrix".into()));
    }
    let at = a.t().as_standard_layout().into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v: Array1<f64> = (0..a.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
    v /= v.dot(&v).sqrt();

    let mut estimate = 0.0;
    for it in 0..max_iter {
        let av = mat_vec(a, v.view());
        let next = av.dot(&av);
        let mut w = mat_vec(&at, av.view());
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            // started in the null space; restart along a coordinate direction
            v = Array1::zeros(a.ncols());
            v[it % a.ncols()] = 1.0;
            continue;
        }
        w /= norm;
        v = w;
        if it > 0 && (next - estimate).abs() <= tol * next {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::Estimation { iterations: max_iter, last_estimate: estimate })
}

/// Largest absolute gap between a central finite difference with step `h` and
/// the analytic gradient.
pub fn grad_check(term: &dyn SmoothTerm, x: &DenseVector, h: f64) -> f64 {
    let grad = term.gradient(x);
    let mut probe = x.as_array().clone();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = term.value(&DenseVector::new(probe.clone()).expect("finite probe"));
        probe[i] = orig - h;
        let down = term.value(&DenseVector::new(probe.clone()).expect("finite probe"));
        probe[i] = orig;
        worst = worst.max(((up - down) / (2.0 * h) - grad[i]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn lipschitz_examples() {
        let l = estimate_lipschitz(&Array2::eye(5), 1e-10, 5000).unwrap();
        assert_relative_eq!(l, 1.0, max_relative = 1e-12);
        let l = estimate_lipschitz(&array![[3.0, 0.0], [0.0, 1.0]], 1e-10, 5000).unwrap();
        assert_relative_eq!(l, 9.0, max_relative = 1e-9);
        // eigenvalues of [[2,2],[2,2]] are {0, 4}
        let l = estimate_lipschitz(&Array2::ones((2, 2)), 1e-10, 5000).unwrap();
        assert_relative_eq!(l, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn lipschitz_matches_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((7, 11), |_| rng.random_range(-1.0..1.0));
        let dense = nalgebra::DMatrix::from_fn(7, 11, |i, j| a[(i, j)]);
        let gram = dense.transpose() * &dense;
        let top = gram.symmetric_eigen().eigenvalues.max();
        let est = estimate_lipschitz(&a, 1e-12, 20000).unwrap();
        assert_relative_eq!(est, top, max_relative = 1e-8);
        assert!(est <= top * (1.0 + 1e-12));
    }

    #[test]
    fn lipschitz_errors() {
        assert!(matches!(estimate_lipschitz(&Array2::zeros((2, 2)), 1e-10, 10), Err(Error::InvalidInput(_))));
        // close top eigenvalues need many iterations
        let a = array![[1.0, 0.0], [0.0, 0.999_999]];
        match estimate_lipschitz(&a, 1e-15, 3) {
            Err(Error::Estimation { iterations: 3, last_estimate }) => assert!(last_estimate > 0.99),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn least_squares_value_and_gradient() {
        let ls = LeastSquaresProblem::new(array![[1.0, 2.0], [0.0, 1.0], [1.0, 0.0]], array![1.0, 0.0, 2.0]).unwrap();
        let x = DenseVector::from_vec(vec![1.0, 1.0]).unwrap();
        // residual = (2, 1, -1)
        assert_eq!(ls.value(&x), 3.0);
        assert_eq!(ls.gradient(&x), array![1.0, 5.0]);
        assert_eq!(ls.dimension(), 2);
        assert!(LeastSquaresProblem::new(Array2::eye(2), array![1.0]).is_err());
    }

    #[test]
    fn grad_check_examples() {
        let ident = LeastSquaresProblem::new(Array2::eye(4), Array1::zeros(4)).unwrap();
        let x = DenseVector::from_vec(vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        assert!(grad_check(&ident, &x, 1e-6) <= 1e-8);
        assert!(grad_check(&ident, &DenseVector::zeros(4), 1e-6) <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Array2::from_shape_fn((5, 8), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(5, |_| rng.sample::<f64, _>(StandardNormal));
        let ls = LeastSquaresProblem::new(a, y).unwrap();
        let x = DenseVector::new(Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal))).unwrap();
        let g = ls.gradient(&x);
        let scale = 1.0 + g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(grad_check(&ls, &x, 1e-6) <= 1e-6 * scale);
    }

    #[test]
    fn least_squares_is_convex_and_lipschitz_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((6, 9), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(StandardNormal));
        let ls = LeastSquaresProblem::new(a, y).unwrap();
        for _ in 0..50 {
            let p = Array1::from_shape_fn(9, |_| rng.sample::<f64, _>(StandardNormal));
            let q = Array1::from_shape_fn(9, |_| rng.sample::<f64, _>(StandardNormal));
            let mid = DenseVector::new((&p + &q) * 0.5).unwrap();
            let (p, q) = (DenseVector::new(p).unwrap(), DenseVector::new(q).unwrap());
            assert!(ls.value(&mid) <= 0.5 * ls.value(&p) + 0.5 * ls.value(&q) + 1e-12);
            let dg = ls.gradient(&p) - ls.gradient(&q);
            assert!(dg.dot(&dg).sqrt() <= ls.lipschitz_constant() * p.distance(&q) * (1.0 + 1e-9));
        }
    }
}
