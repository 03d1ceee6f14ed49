//! Oracle interfaces (prox, smooth value/gradient, linear maps) and a
//! small library of concrete instances used by the solvers and tests.
//!
//! All oracles are pure: repeated calls with equal inputs return equal
//! outputs, and nothing here mutates shared state, so rayon may invoke
//! them concurrently (`Send + Sync` is part of the trait contract).

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;

/// Proximal oracle of a proper closed convex function `f`.
///
/// `prox(t, v)` returns `argmin_y f(y) + ||y - v||^2 / (2t)` for `t > 0`;
/// `value(v)` may return `f64::INFINITY` outside the domain (indicator
/// functions do).
pub trait ProxOracle: Send + Sync {
    fn prox(&self, t: f64, v: &DVector<f64>) -> DVector<f64>;
    fn value(&self, v: &DVector<f64>) -> f64;
}

/// First-order oracle of a differentiable convex function. The gradient
/// need only be locally Lipschitz on the domain; that is the whole point
/// of the backtracking solvers built on top.
pub trait SmoothOracle: Send + Sync {
    fn value(&self, v: &DVector<f64>) -> f64;
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64>;
    /// Domain membership; defaults to "value is finite".
    fn in_domain(&self, v: &DVector<f64>) -> bool {
        self.value(v).is_finite()
    }
}

/// Bounded linear map with adjoint. `operator_norm` is an upper bound on
/// `||apply(v)|| / ||v||`, exact for the members shipped here;
/// `norm_known` is false when only the norm-free linesearch variants may
/// rely on it.
pub trait LinearMap: Send + Sync {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn adjoint(&self, w: &DVector<f64>) -> DVector<f64>;
    fn operator_norm(&self) -> f64;
    fn norm_known(&self) -> bool {
        true
    }
}

/// Projection onto the nonnegative orthant. The stepsize is irrelevant
/// for an indicator but kept so every prox call site looks the same.
pub fn prox_nonneg(_t: f64, v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

/// Prox of `ind_{>=0} + (lambda/2)||.||^2` at stepsize `t`:
/// componentwise `max(0, v / (1 + lambda t))`.
pub fn prox_nonneg_l2(t: f64, lambda: f64, v: &DVector<f64>) -> DVector<f64> {
    let scale = 1.0 + lambda * t;
    v.map(|x| (x / scale).max(0.0))
}

/// Projection of a (flattened, row-major) square matrix onto the set of
/// symmetric matrices with spectrum in `[l, u]`: symmetrize, clamp the
/// eigenvalues, recompose.
pub fn proj_spectral_box(l: f64, u: f64, v: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() {
        return Err(SolverError::DimensionMismatch {
            what: "spectral box input is not a flattened square matrix",
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::DomainViolation {
            what: "spectral box projection of non-finite matrix",
        });
    }
    let m = unstack_rows(v, d, d);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|e| e.clamp(l, u));
    let proj = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok(stack_rows(&proj))
}

/// Row-major flatten of an `n x d` matrix (agent-major layout for
/// stacked variables).
pub fn stack_rows(x: &DMatrix<f64>) -> DVector<f64> {
    let (n, d) = x.shape();
    DVector::from_fn(n * d, |idx, _| x[(idx / d, idx % d)])
}

/// Inverse of [`stack_rows`].
pub fn unstack_rows(v: &DVector<f64>, n: usize, d: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), n * d, "flattened length does not match n x d");
    DMatrix::from_fn(n, d, |i, j| v[i * d + j])
}

/// The zero function; its prox is the identity.
pub struct ZeroProx;

impl ProxOracle for ZeroProx {
    fn prox(&self, _t: f64, v: &DVector<f64>) -> DVector<f64> {
        v.clone()
    }
    fn value(&self, _v: &DVector<f64>) -> f64 {
        0.0
    }
}

/// Indicator of the nonnegative orthant.
pub struct NonnegOrthant;

impl ProxOracle for NonnegOrthant {
    fn prox(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        prox_nonneg(t, v)
    }
    fn value(&self, v: &DVector<f64>) -> f64 {
        if v.iter().all(|&x| x >= -1e-12) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `ind_{>=0} + (lambda/2)||.||^2`.
pub struct NonnegL2 {
    pub lambda: f64,
}

impl ProxOracle for NonnegL2 {
    fn prox(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        prox_nonneg_l2(t, self.lambda, v)
    }
    fn value(&self, v: &DVector<f64>) -> f64 {
        if v.iter().all(|&x| x >= -1e-12) {
            0.5 * self.lambda * v.norm_squared()
        } else {
            f64::INFINITY
        }
    }
}

/// `||.||^2 / 2`; prox is the shrinkage `v / (1 + t)`.
pub struct HalfSquaredNorm;

impl ProxOracle for HalfSquaredNorm {
    fn prox(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        v / (1.0 + t)
    }
    fn value(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.norm_squared()
    }
}

/// Indicator of symmetric `d x d` matrices with spectrum in `[l, u]`,
/// acting on flattened matrices. Membership for `value` is decided with
/// a small spectral slack so projected points test as feasible.
pub struct SpectralBox {
    pub l: f64,
    pub u: f64,
    pub d: usize,
}

impl ProxOracle for SpectralBox {
    fn prox(&self, _t: f64, v: &DVector<f64>) -> DVector<f64> {
        proj_spectral_box(self.l, self.u, v).expect("spectral box prox on non-finite input")
    }
    fn value(&self, v: &DVector<f64>) -> f64 {
        let m = unstack_rows(v, self.d, self.d);
        let sym = (&m + m.transpose()) * 0.5;
        let tol = 1e-9 * self.l.abs().max(self.u.abs()).max(1.0);
        if (&m - &sym).norm() > tol {
            return f64::INFINITY;
        }
        let eig = sym.symmetric_eigen();
        let ok = eig
            .eigenvalues
            .iter()
            .all(|&e| e >= self.l - tol && e <= self.u + tol);
        if ok {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Convex quadratic `v^T Q v / 2 + b^T v` with symmetric PSD `Q`.
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Quadratic {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(q.nrows(), q.ncols());
        assert_eq!(q.nrows(), b.len());
        Self { q, b }
    }
}

impl SmoothOracle for Quadratic {
    fn value(&self, v: &DVector<f64>) -> f64 {
        0.5 * (&self.q * v).dot(v) + self.b.dot(v)
    }
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * v + &self.b
    }
}

/// Affine function `g^T v + c`; gradient constant, Lipschitz constant 0.
pub struct AffineSmooth {
    pub g: DVector<f64>,
    pub c: f64,
}

impl SmoothOracle for AffineSmooth {
    fn value(&self, v: &DVector<f64>) -> f64 {
        self.g.dot(v) + self.c
    }
    fn gradient(&self, _v: &DVector<f64>) -> DVector<f64> {
        self.g.clone()
    }
}

/// Separable quartic `sum_j v_j^4 / 4`. Its gradient `v_j^3` is locally
/// but not globally Lipschitz, the motivating case for backtracking.
pub struct Quartic;

impl SmoothOracle for Quartic {
    fn value(&self, v: &DVector<f64>) -> f64 {
        v.iter().map(|x| x.powi(4)).sum::<f64>() / 4.0
    }
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| x.powi(3))
    }
}

/// The zero smooth function.
pub struct ZeroSmooth;

impl SmoothOracle for ZeroSmooth {
    fn value(&self, _v: &DVector<f64>) -> f64 {
        0.0
    }
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(v.len())
    }
}

/// Linear map backed by an explicit dense matrix; the operator norm is
/// the largest singular value, computed once at construction.
pub struct DenseMap {
    pub a: DMatrix<f64>,
    norm: f64,
}

impl DenseMap {
    pub fn new(a: DMatrix<f64>) -> Self {
        let gram = a.transpose() * &a;
        let lmax = gram
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, &e| m.max(e));
        let norm = lmax.max(0.0).sqrt();
        Self { a, norm }
    }
}

impl LinearMap for DenseMap {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.a * v
    }
    fn adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * w
    }
    fn operator_norm(&self) -> f64 {
        self.norm
    }
}

/// Applies a symmetric `n x n` matrix across the agent axis of a stacked
/// `n x d` variable (flattened row-major). Self-adjoint by symmetry of
/// `m`; used for consensus operators and their square roots.
pub struct RowMixMap {
    pub m: DMatrix<f64>,
    pub d: usize,
    norm: f64,
    norm_known: bool,
}

impl RowMixMap {
    pub fn new(m: DMatrix<f64>, d: usize, norm: f64, norm_known: bool) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        assert!((&m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0), "RowMixMap needs a symmetric matrix");
        Self { m, d, norm, norm_known }
    }
}

impl LinearMap for RowMixMap {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let x = unstack_rows(v, self.m.nrows(), self.d);
        stack_rows(&(&self.m * x))
    }
    fn adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        self.apply(w)
    }
    fn operator_norm(&self) -> f64 {
        self.norm
    }
    fn norm_known(&self) -> bool {
        self.norm_known
    }
}

/// Block-separable prox over a stacked `n x d` variable: part `i` acts on
/// rows `i` of the flattened layout.
pub struct StackedProx {
    pub parts: Vec<std::sync::Arc<dyn ProxOracle>>,
    pub d: usize,
}

impl ProxOracle for StackedProx {
    fn prox(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (i, part) in self.parts.iter().enumerate() {
            let piece = DVector::from(v.rows(i * self.d, self.d).clone_owned());
            out.rows_mut(i * self.d, self.d).copy_from(&part.prox(t, &piece));
        }
        out
    }
    fn value(&self, v: &DVector<f64>) -> f64 {
        self.parts
            .iter()
            .enumerate()
            .map(|(i, p)| p.value(&DVector::from(v.rows(i * self.d, self.d).clone_owned())))
            .sum()
    }
}

/// Block-separable smooth sum over a stacked `n x d` variable.
pub struct StackedSmooth {
    pub parts: Vec<std::sync::Arc<dyn SmoothOracle>>,
    pub d: usize,
}

impl SmoothOracle for StackedSmooth {
    fn value(&self, v: &DVector<f64>) -> f64 {
        self.parts
            .iter()
            .enumerate()
            .map(|(i, p)| p.value(&DVector::from(v.rows(i * self.d, self.d).clone_owned())))
            .sum()
    }
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (i, part) in self.parts.iter().enumerate() {
            let piece = DVector::from(v.rows(i * self.d, self.d).clone_owned());
            out.rows_mut(i * self.d, self.d).copy_from(&part.gradient(&piece));
        }
        out
    }
    fn in_domain(&self, v: &DVector<f64>) -> bool {
        self.parts
            .iter()
            .enumerate()
            .all(|(i, p)| p.in_domain(&DVector::from(v.rows(i * self.d, self.d).clone_owned())))
    }
}
