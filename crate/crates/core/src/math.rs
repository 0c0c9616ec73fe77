//! Domain vectors and the stateless kernels of the reweighted l1 iteration:
//! weights, extrapolation, the weighted-l1 proximal step and the objective
//! evaluations used by the diagnostics.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::problems::ProblemInstance;

/// Lower bound for every smoothing entry. Keeps `(|x|+eps)^(p-1)` finite once
/// the geometric schedule would otherwise underflow.
pub const EPS_FLOOR: f64 = 1e-150;

/// Cap on reweighting coefficients so that `lambda * w / beta` stays representable.
pub const W_MAX: f64 = 1e15;

fn ensure_finite(values: ArrayView1<f64>, what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

fn ensure_same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Usage(format!("dimension mismatch for {what}: {a} vs {b}")));
    }
    Ok(())
}

/// A finite real vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseVector(Array1<f64>);

impl DenseVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        ensure_finite(values.view(), "vector")?;
        Ok(Self(values))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Array1::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("owned 1-d arrays are contiguous")
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn norm2(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &DenseVector) -> f64 {
        Zip::from(&self.0).and(&other.0).fold(0.0, |acc, a, b| acc + (a - b) * (a - b)).sqrt()
    }

    /// Number of nonzero entries.
    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    pub fn sign_pattern(&self) -> SignPattern {
        SignPattern::of(self)
    }
}

/// Strictly positive smoothing parameters, one per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonVector(Array1<f64>);

impl EpsilonVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        ensure_finite(values.view(), "epsilon")?;
        if let Some(i) = values.iter().position(|v| *v < EPS_FLOOR) {
            return Err(Error::InvalidInput(format!("epsilon[{i}] = {} is below the floor {EPS_FLOOR}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(Array1::from_elem(n, value))
    }

    /// `max(mu * eps, EPS_FLOOR)` elementwise.
    pub fn decayed(&self, mu: f64) -> Self {
        Self(self.0.mapv(|e| (mu * e).max(EPS_FLOOR)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn norm1(&self) -> f64 {
        self.0.sum()
    }
}

/// Reweighting coefficients `w_i = p (|x_i| + eps_i)^(p-1)`, capped at [`W_MAX`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Array1<f64>);

impl WeightVector {
    /// Wraps raw weights; entries must be finite and in `[0, W_MAX]`.
    pub fn new(values: Array1<f64>) -> Result<Self> {
        ensure_finite(values.view(), "weight")?;
        if let Some(i) = values.iter().position(|v| *v < 0.0 || *v > W_MAX) {
            return Err(Error::InvalidInput(format!("weight[{i}] = {} outside [0, W_MAX]", values[i])));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }
}

/// Exponent and strength of the `lambda * ||x||_p^p` regularizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegParams {
    p: f64,
    lambda: f64,
}

impl RegParams {
    pub fn new(p: f64, lambda: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::config("p", format!("must lie in (0, 1), got {p}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be positive, got {lambda}")));
        }
        Ok(Self { p, lambda })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Entrywise sign of a vector with `sign(0) = 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignPattern(Vec<i8>);

impl SignPattern {
    pub fn of(x: &DenseVector) -> Self {
        Self(
            x.0.iter()
                .map(|v| {
                    if *v > 0.0 {
                        1
                    } else if *v < 0.0 {
                        -1
                    } else {
                        0
                    }
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[i8] {
        &self.0
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|s| **s != 0).count()
    }

    /// 64-bit FNV-1a over the entries mapped to bytes `{0, 1, 2}`.
    pub fn digest(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        self.0.iter().fold(OFFSET, |h, s| (h ^ (*s + 1) as u64).wrapping_mul(PRIME))
    }
}

/// `w_i = min(p (|x_i| + eps_i)^(p-1), W_MAX)`.
pub fn compute_weights(x: &DenseVector, eps: &EpsilonVector, reg: RegParams) -> Result<WeightVector> {
    ensure_same_len(x.len(), eps.len(), "x and epsilon")?;
    let p = reg.p();
    let w = Zip::from(&x.0).and(&eps.0).map_collect(|xi, ei| (p * (xi.abs() + ei).powf(p - 1.0)).min(W_MAX));
    Ok(WeightVector(w))
}

/// Momentum point `x + alpha (x - x_prev)`.
pub fn extrapolate(x: &DenseVector, x_prev: &DenseVector, alpha: f64) -> Result<DenseVector> {
    ensure_same_len(x.len(), x_prev.len(), "x and x_prev")?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("must lie in [0, 1), got {alpha}")));
    }
    Ok(DenseVector(Zip::from(&x.0).and(&x_prev.0).map_collect(|a, b| a + alpha * (a - b))))
}

/// `sign(z) * max(|z| - t, 0)`; the tie `|z| = t` lands on zero.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    let mag = z.abs() - t;
    if mag > 0.0 {
        mag.copysign(z)
    } else {
        0.0
    }
}

/// Closed-form minimizer of
/// `<grad_y, x> + beta/2 ||x - y||^2 + lambda * sum_i w_i |x_i|`.
pub fn prox_weighted_l1(
    grad_y: &DenseVector,
    y: &DenseVector,
    w: &WeightVector,
    beta: f64,
    lambda: f64,
) -> Result<DenseVector> {
    ensure_same_len(grad_y.len(), y.len(), "gradient and y")?;
    ensure_same_len(w.len(), y.len(), "weights and y")?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config("beta", format!("must be positive, got {beta}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda", format!("must be nonnegative, got {lambda}")));
    }
    let x = Zip::from(&grad_y.0)
        .and(&y.0)
        .and(&w.0)
        .map_collect(|g, yi, wi| soft_threshold(yi - g / beta, lambda * wi / beta));
    DenseVector::new(x)
}

/// `f(x) + lambda * sum_i (|x_i| + eps_i)^p`; `None` means zero smoothing.
pub fn eval_f(x: &DenseVector, eps: Option<&EpsilonVector>, problem: &ProblemInstance) -> Result<f64> {
    problem.check_dim(x.len())?;
    let p = problem.reg().p();
    let reg = match eps {
        Some(e) => {
            ensure_same_len(x.len(), e.len(), "x and epsilon")?;
            Zip::from(&x.0).and(&e.0).fold(0.0, |acc, xi, ei| acc + (xi.abs() + ei).powf(p))
        }
        None => x.0.iter().map(|xi| xi.abs().powf(p)).sum(),
    };
    Ok(problem.smooth().value(x) + problem.reg().lambda() * reg)
}

/// `F(x, eps) + beta/2 ||x - y||^2`.
pub fn eval_psi(
    x: &DenseVector,
    y: &DenseVector,
    eps: Option<&EpsilonVector>,
    beta: f64,
    problem: &ProblemInstance,
) -> Result<f64> {
    ensure_same_len(x.len(), y.len(), "x and y")?;
    let d = x.distance(y);
    Ok(eval_f(x, eps, problem)? + 0.5 * beta * d * d)
}

/// Largest violation of the support-restricted first-order condition of
/// `f(x) + lambda ||x||_p^p`:
/// `max_{x_i != 0} |grad_i f(x) + lambda p |x_i|^(p-1) sign(x_i)|`.
pub fn stationarity_residual(x: &DenseVector, problem: &ProblemInstance) -> Result<f64> {
    problem.check_dim(x.len())?;
    if x.support_size() == 0 {
        return Ok(0.0);
    }
    let grad = problem.smooth().gradient(x);
    let (p, lambda) = (problem.reg().p(), problem.reg().lambda());
    Ok(Zip::from(&x.0).and(&grad).fold(0.0_f64, |worst, xi, gi| {
        if *xi == 0.0 {
            worst
        } else {
            let r = gi + lambda * p * xi.abs().powf(p - 1.0) * xi.signum();
            worst.max(r.abs())
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{LeastSquaresProblem, ProblemInstance};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn vecd(v: &[f64]) -> DenseVector {
        DenseVector::from_vec(v.to_vec()).unwrap()
    }

    /// `f(x) = 1/2 ||x - a||^2`.
    fn shifted_quadratic(a: &[f64], p: f64, lambda: f64) -> ProblemInstance {
        let n = a.len();
        let ls = LeastSquaresProblem::new(Array2::eye(n), Array1::from(a.to_vec())).unwrap();
        ProblemInstance::new(ls, RegParams::new(p, lambda).unwrap()).unwrap()
    }

    fn zero_smooth(n: usize, p: f64, lambda: f64) -> ProblemInstance {
        let ls = LeastSquaresProblem::new(Array2::zeros((1, n)), array![0.0]).unwrap();
        ProblemInstance::new(ls, RegParams::new(p, lambda).unwrap()).unwrap()
    }

    #[test]
    fn weights_examples() {
        let r = RegParams::new(0.5, 1.0).unwrap();
        let w = compute_weights(&vecd(&[3.0, 0.0]), &EpsilonVector::uniform(2, 1.0).unwrap(), r).unwrap();
        assert_abs_diff_eq!(w.view()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.view()[1], 0.5, epsilon = 1e-15);

        let r = RegParams::new(2.0 / 3.0, 1.0).unwrap();
        let w = compute_weights(&vecd(&[0.7]), &EpsilonVector::uniform(1, 0.3).unwrap(), r).unwrap();
        assert_abs_diff_eq!(w.view()[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn weights_are_capped_at_floor_epsilon() {
        let r = RegParams::new(0.5, 1.0).unwrap();
        let w = compute_weights(&vecd(&[0.0]), &EpsilonVector::uniform(1, EPS_FLOOR).unwrap(), r).unwrap();
        assert_eq!(w.view()[0], W_MAX);
    }

    #[test]
    fn weights_reject_mismatch() {
        let r = RegParams::new(0.5, 1.0).unwrap();
        let err = compute_weights(&vecd(&[1.0, 2.0]), &EpsilonVector::uniform(3, 1.0).unwrap(), r);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn vectors_reject_non_finite() {
        assert!(matches!(DenseVector::from_vec(vec![1.0, f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(EpsilonVector::uniform(2, 0.0).is_err());
        assert!(EpsilonVector::uniform(2, 1e-200).is_err());
        assert!(RegParams::new(1.0, 0.1).is_err());
        assert!(RegParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn epsilon_decay_respects_floor() {
        let e = EpsilonVector::uniform(3, 1e-149).unwrap().decayed(0.01);
        assert!(e.view().iter().all(|v| *v == EPS_FLOOR));
        let e = EpsilonVector::uniform(2, 1.0).unwrap().decayed(0.9);
        assert_eq!(e.view()[0], 0.9);
    }

    #[test]
    fn extrapolate_examples() {
        let x = vecd(&[2.0, 0.0]);
        let y = extrapolate(&x, &vecd(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(y.as_slice(), &[2.5, -0.5]);
        assert_eq!(extrapolate(&x, &x, 0.7).unwrap(), x);
        assert_eq!(extrapolate(&x, &vecd(&[9.0, 9.0]), 0.0).unwrap(), x);
        assert!(matches!(extrapolate(&x, &x, 1.0), Err(Error::Config { field: "alpha", .. })));
        assert!(extrapolate(&x, &x, -0.1).is_err());
    }

    #[test]
    fn prox_examples() {
        // z = y - g/beta = 1.0, t = lambda w / beta = 0.3
        let out = prox_weighted_l1(
            &vecd(&[-1.0, 0.0, 0.5]),
            &vecd(&[0.5, 0.2, 2.0]),
            &WeightVector::new(array![0.3, 0.3, 0.0]).unwrap(),
            2.0,
            2.0,
        )
        .unwrap();
        assert_abs_diff_eq!(out.as_slice()[0], 0.7, epsilon = 1e-15);
        // |z| = 0.2 < 0.3
        assert_eq!(out.as_slice()[1], 0.0);
        // w = 0 leaves z = 2 - 0.25
        assert_eq!(out.as_slice()[2], 1.75);
    }

    #[test]
    fn prox_tie_maps_to_zero() {
        assert_eq!(soft_threshold(0.5, 0.5), 0.0);
        assert_eq!(soft_threshold(-0.5, 0.5), 0.0);
    }

    #[test]
    fn objective_examples() {
        let prob = shifted_quadratic(&[0.0, 0.0, 0.0], 0.5, 2.0);
        let x0 = DenseVector::zeros(3);
        let ones = EpsilonVector::uniform(3, 1.0).unwrap();
        assert_abs_diff_eq!(eval_f(&x0, Some(&ones), &prob).unwrap(), 6.0, epsilon = 1e-15);
        assert_eq!(eval_f(&x0, None, &prob).unwrap(), 0.0);

        let prob = zero_smooth(2, 0.5, 2.0);
        assert_abs_diff_eq!(eval_f(&vecd(&[4.0, 0.0]), None, &prob).unwrap(), 4.0, epsilon = 1e-15);

        let x = vecd(&[1.0, 2.0]);
        let f = eval_f(&x, Some(&EpsilonVector::uniform(2, 0.5).unwrap()), &prob).unwrap();
        let e = EpsilonVector::uniform(2, 0.5).unwrap();
        assert_eq!(eval_psi(&x, &x, Some(&e), 3.0, &prob).unwrap(), f);
        let psi = eval_psi(&x, &vecd(&[1.0, 1.0]), Some(&e), 2.0, &prob).unwrap();
        assert_abs_diff_eq!(psi, f + 1.0, epsilon = 1e-14);
    }

    #[test]
    fn stationarity_examples() {
        let prob = zero_smooth(1, 0.5, 1.0);
        assert_eq!(stationarity_residual(&DenseVector::zeros(1), &prob).unwrap(), 0.0);
        assert_abs_diff_eq!(stationarity_residual(&vecd(&[4.0]), &prob).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn stationarity_vanishes_at_scalar_root() {
        // x - a + 0.5 x^(-1/2) = 0 on the larger root, found by bisection.
        let a = 2.0_f64;
        let g = |x: f64| x - a + 0.5 / x.sqrt();
        let (mut lo, mut hi) = (0.5_f64, a);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let root = 0.5 * (lo + hi);
        let prob = shifted_quadratic(&[a], 0.5, 1.0);
        let r = stationarity_residual(&vecd(&[root]), &prob).unwrap();
        assert!(r < 1e-14, "residual {r}");
    }

    #[test]
    fn sign_digest_distinguishes_patterns() {
        let a = vecd(&[1.0, 0.0, -2.0]).sign_pattern();
        let b = vecd(&[1.0, -2.0, 0.0]).sign_pattern();
        assert_eq!(a.entries(), &[1, 0, -1]);
        assert_eq!(a.support_size(), 2);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), vecd(&[3.0, 0.0, -0.1]).sign_pattern().digest());
    }

    proptest! {
        #[test]
        fn weights_decrease_with_magnitude(
            a in -10.0..10.0f64, b in -10.0..10.0f64, e in 1e-6..2.0f64, p in 0.05..0.95f64
        ) {
            let r = RegParams::new(p, 1.0).unwrap();
            let eps = EpsilonVector::uniform(2, e).unwrap();
            let w = compute_weights(&vecd(&[a, b]), &eps, r).unwrap();
            let (wa, wb) = (w.view()[0], w.view()[1]);
            prop_assert!(wa > 0.0 && wb > 0.0);
            if a.abs() <= b.abs() {
                prop_assert!(wa >= wb);
            }
        }

        #[test]
        fn objective_monotone_in_smoothing(
            xs in proptest::collection::vec(-5.0..5.0f64, 1..8),
            e1 in 1e-8..1.0f64, de in 0.0..1.0f64, p in 0.05..0.95f64
        ) {
            let n = xs.len();
            let prob = zero_smooth(n, p, 0.7);
            let x = vecd(&xs);
            let lo = eval_f(&x, Some(&EpsilonVector::uniform(n, e1).unwrap()), &prob).unwrap();
            let hi = eval_f(&x, Some(&EpsilonVector::uniform(n, e1 + de).unwrap()), &prob).unwrap();
            let bare = eval_f(&x, None, &prob).unwrap();
            prop_assert!(bare <= lo && lo <= hi);
        }

        #[test]
        fn extrapolation_is_linear(
            x in proptest::collection::vec(-5.0..5.0f64, 4),
            xp in proptest::collection::vec(-5.0..5.0f64, 4),
            alpha in 0.0..0.999f64
        ) {
            let (xv, xpv) = (vecd(&x), vecd(&xp));
            let y = extrapolate(&xv, &xpv, alpha).unwrap();
            for i in 0..4 {
                let lhs = y.as_slice()[i] - x[i];
                let rhs = alpha * (x[i] - xp[i]);
                prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * (x[i].abs() + rhs.abs()));
            }
        }

        #[test]
        fn prox_output_satisfies_subgradient_condition(
            g in -5.0..5.0f64, y in -5.0..5.0f64, w in 0.0..3.0f64,
            beta in 0.1..10.0f64, lambda in 0.0..2.0f64
        ) {
            let x = prox_weighted_l1(
                &vecd(&[g]), &vecd(&[y]), &WeightVector::new(array![w]).unwrap(), beta, lambda
            ).unwrap().as_slice()[0];
            let smooth = g + beta * (x - y);
            let t = lambda * w;
            let tol = 1e-10 * (1.0 + g.abs() + beta * y.abs());
            if x == 0.0 {
                prop_assert!(smooth.abs() <= t + tol);
            } else {
                prop_assert!((smooth + t * x.signum()).abs() <= tol);
            }
        }
    }
}
