//! Image deblurring under Poisson counting noise.
//!
//! Each agent observes the same nonnegative image through its own
//! Gaussian blur `A_i` on top of a constant background `b_i`, and the
//! data misfit is the Kullback-Leibler divergence between the
//! predicted intensity `A_i x + b_i` and the observed counts `y_i`.
//! Agents regularize with a nonnegativity constraint plus an optional
//! small quadratic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::dist::{DistAgent, DistProblem};
use crate::graph::MixingMatrix;
use crate::operators::{NonnegL2, SmoothOracle};

#[derive(Debug, Clone)]
pub struct PoissonConfig {
    /// Image is `side x side`, flattened row-major.
    pub side: usize,
    pub n_agents: usize,
    /// Intensity of the brightest ground-truth pixel.
    pub peak: f64,
    /// Constant background added to every predicted intensity; must
    /// be positive so the divergence stays finite on the orthant.
    pub background: f64,
    /// Replace sampled counts by their exact means.
    pub zero_noise: bool,
    pub seed: u64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self { side: 16, n_agents: 4, peak: 20.0, background: 0.5, zero_noise: false, seed: 7 }
    }
}

pub struct PoissonInstance {
    pub side: usize,
    pub x_true: DVector<f64>,
    pub blurs: Vec<Arc<DMatrix<f64>>>,
    pub backgrounds: Vec<DVector<f64>>,
    /// Observed counts, kept as floats; exact means in the zero-noise
    /// setting.
    pub y: Vec<DVector<f64>>,
}

/// `sum_j y_j ln(y_j / z_j) + z_j - y_j`, with `0 ln 0 = 0` and
/// infinity as soon as any predicted intensity `z_j` is nonpositive
/// or any count is negative.
pub fn kl_divergence(z: &DVector<f64>, y: &DVector<f64>) -> f64 {
    assert_eq!(z.len(), y.len());
    let mut total = 0.0;
    for j in 0..z.len() {
        let (zj, yj) = (z[j], y[j]);
        if zj <= 0.0 || yj < 0.0 {
            return f64::INFINITY;
        }
        if yj == 0.0 {
            total += zj;
            continue;
        }
        // y ln(y/z) + z - y = y (t - ln(1 + t)) with t = (z - y)/y,
        // by series for small t so each term keeps full relative
        // accuracy as z -> y (the naive log-ratio form loses the
        // whole value to cancellation there).
        let t = (zj - yj) / yj;
        total += if t.abs() < 1e-4 {
            yj * t * t * (0.5 - t / 3.0 + t * t / 4.0)
        } else {
            yj * (t - t.ln_1p())
        };
    }
    total
}

/// One agent's data term `x -> KL(A x + b, y)`.
pub struct PoissonH {
    pub a: Arc<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub y: DVector<f64>,
}

impl PoissonH {
    fn intensity(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.as_ref() * x + &self.b
    }
}

impl SmoothOracle for PoissonH {
    fn value(&self, x: &DVector<f64>) -> f64 {
        kl_divergence(&self.intensity(x), &self.y)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.intensity(x);
        // (z - y)/z rather than 1 - y/z: the difference is exact when
        // z is close to y, so the gradient keeps relative accuracy
        // near the fit.
        let inner = DVector::from_fn(z.len(), |j, _| (z[j] - self.y[j]) / z[j]);
        self.a.transpose() * inner
    }
}

/// Disc-plus-square test image with values in `[0, peak]`.
pub fn phantom(side: usize, peak: f64) -> DVector<f64> {
    let s = side as f64;
    let (cx, cy, rad) = (0.32 * s, 0.36 * s, 0.18 * s);
    let sq = (0.55 * s, 0.82 * s);
    DVector::from_fn(side * side, |idx, _| {
        let (r, c) = ((idx / side) as f64, (idx % side) as f64);
        let in_disc = (r - cy) * (r - cy) + (c - cx) * (c - cx) <= rad * rad;
        let in_square = r >= sq.0 && r <= sq.1 && c >= sq.0 && c <= sq.1;
        if in_disc {
            peak
        } else if in_square {
            0.6 * peak
        } else {
            0.0
        }
    })
}

/// Dense truncated-Gaussian blur with a small integer shift; columns
/// are normalized to unit sum so blurring preserves total intensity.
pub fn gaussian_blur(side: usize, sigma: f64, shift: (i64, i64)) -> DMatrix<f64> {
    let d = side * side;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut a = DMatrix::zeros(d, d);
    for q in 0..d {
        let (rq, cq) = ((q / side) as i64, (q % side) as i64);
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let (rp, cp) = (rq + dr + shift.0, cq + dc + shift.1);
                if rp < 0 || cp < 0 || rp >= side as i64 || cp >= side as i64 {
                    continue;
                }
                let w = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
                a[((rp * side as i64 + cp) as usize, q)] = w;
            }
        }
        let col_sum: f64 = a.column(q).sum();
        if col_sum > 0.0 {
            for p in 0..d {
                a[(p, q)] /= col_sum;
            }
        }
    }
    a
}

pub fn build(cfg: &PoissonConfig) -> PoissonInstance {
    assert!(cfg.side >= 2 && cfg.n_agents >= 1);
    assert!(cfg.background > 0.0, "background must be positive");
    let d = cfg.side * cfg.side;
    let x_true = phantom(cfg.side, cfg.peak);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blurs = Vec::new();
    let mut backgrounds = Vec::new();
    let mut y = Vec::new();
    for i in 0..cfg.n_agents {
        let sigma = 0.5 + 0.15 * i as f64;
        let shift = ((i % 2) as i64, ((i / 2) % 2) as i64);
        let a = Arc::new(gaussian_blur(cfg.side, sigma, shift));
        let b = DVector::from_element(d, cfg.background);
        let mean = a.as_ref() * &x_true + &b;
        let counts = if cfg.zero_noise {
            mean.clone()
        } else {
            DVector::from_fn(d, |j, _| {
                let lam = mean[j];
                if lam <= 0.0 {
                    0.0
                } else {
                    Poisson::new(lam).expect("positive rate").sample(&mut rng)
                }
            })
        };
        blurs.push(a);
        backgrounds.push(b);
        y.push(counts);
    }
    // Consume the generator identically in both noise settings so
    // other seeded draws downstream never shift.
    let _ = rng.gen::<u64>();
    PoissonInstance { side: cfg.side, x_true, blurs, backgrounds, y }
}

/// Backprojection start `A^T y`, rescaled so its total intensity
/// matches the observed counts.
pub fn starting_point(inst: &PoissonInstance) -> DMatrix<f64> {
    let n = inst.y.len();
    let d = inst.side * inst.side;
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let bp = inst.blurs[i].transpose() * &inst.y[i];
        let mass: f64 = bp.iter().sum();
        let target: f64 = inst.y[i].iter().sum();
        if mass > 0.0 {
            for j in 0..d {
                out[(i, j)] = bp[j] * target / mass;
            }
        }
    }
    out
}

pub fn dist_problem(inst: &PoissonInstance, mixing: MixingMatrix, lambda: f64) -> DistProblem {
    let d = inst.side * inst.side;
    let agents = (0..inst.y.len())
        .map(|i| DistAgent {
            f: Arc::new(NonnegL2 { lambda }),
            h: Arc::new(PoissonH {
                a: inst.blurs[i].clone(),
                b: inst.backgrounds[i].clone(),
                y: inst.y[i].clone(),
            }),
        })
        .collect();
    DistProblem { agents, mixing, dim: d }
}
