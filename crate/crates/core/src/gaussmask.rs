//! Gaussian positional mask and Gaussian fitting of attention rows.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::election::window_radius;
use crate::opcount;
use crate::seq2seq::EncoderStates;
use crate::{Error, Result};

/// Lower bound on fitted widths; keeps one-hot rows finite.
pub const SIGMA_FLOOR: f64 = 0.25;

/// Rows whose fit residual stays below this count as Gaussian-like.
pub const GAUSSIAN_LIKE_RMSE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMask {
    center: usize,
    sigma: f64,
    length: usize,
}

impl GaussianMask {
    pub fn new(length: usize, center: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if center >= length {
            return Err(Error::Domain(format!(
                "center {center} outside a mask of length {length}"
            )));
        }
        Ok(Self {
            center,
            sigma,
            length,
        })
    }

    pub fn weights(&self) -> Array1<f64> {
        let two_var = 2.0 * self.sigma * self.sigma;
        opcount::add(self.length);
        Array1::from_shape_fn(self.length, |i| {
            let d = i as f64 - self.center as f64;
            (-d * d / two_var).exp()
        })
    }
}

/// `w_i = exp(-(i - j)² / 2σ²)` for `i` in `0..p`; `w_j` is exactly 1.
pub fn gaussian_weights(p: usize, j: usize, sigma: f64) -> Result<Array1<f64>> {
    Ok(GaussianMask::new(p, j, sigma)?.weights())
}

/// Mask width used at inference: half the `⌊log₂ p⌋` Borda window, at least
/// 0.5, so roughly 95% of the curve falls inside the window.
pub fn default_sigma(p: usize) -> f64 {
    (window_radius(p.max(1), 2) as f64 / 2.0).max(0.5)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SigmaRule {
    /// [`default_sigma`]
    #[default]
    LogWindow,
    Fixed(f64),
}

impl SigmaRule {
    pub fn sigma(self, p: usize) -> f64 {
        match self {
            SigmaRule::LogWindow => default_sigma(p),
            SigmaRule::Fixed(s) => s,
        }
    }
}

/// Scaled encoder states `w_i · h_i` and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedStates {
    pub states: Array2<f64>,
    pub context: Array1<f64>,
}

pub fn apply_mask(enc: &EncoderStates, weights: ArrayView1<'_, f64>) -> Result<MaskedStates> {
    if weights.len() != enc.len() {
        return Err(Error::Domain(format!(
            "{} weights for {} encoder states",
            weights.len(),
            enc.len()
        )));
    }
    opcount::add(2 * enc.states.len());
    let states = &enc.states * &weights.insert_axis(Axis(1));
    let context = states.sum_axis(Axis(0));
    Ok(MaskedStates { states, context })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    /// Root-mean-square residual between the row and `exp(-(i-μ)²/2σ²)`.
    pub rmse: f64,
}

impl GaussianFit {
    pub fn is_gaussian_like(&self) -> bool {
        self.rmse < GAUSSIAN_LIKE_RMSE
    }
}

/// Fits a unit-peak Gaussian to a max-normalized row.
///
/// Because the peak is pinned at 1, `ln w_i` is a quadratic in `i` whose
/// vertex and curvature give `μ` and `σ`. The quadratic is fitted by
/// weighted least squares over the strictly positive entries, each weighted
/// by `w_i²` so that the noisy tails count less. This recovers exact
/// Gaussians regardless of how much of the curve the row truncates. Rows the
/// quadratic cannot describe (fewer than three positive entries, or an
/// upward-opening fit) fall back to the weighted mean and standard
/// deviation. `σ` is floored at [`SIGMA_FLOOR`].
pub fn fit_gaussian(row: ArrayView1<'_, f64>) -> Result<GaussianFit> {
    if row.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 entries, got {}", row.len())));
    }
    if row.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::Domain("row entries must be finite and non-negative".into()));
    }
    let total: f64 = row.sum();
    if total <= 0.0 {
        return Err(Error::Domain("cannot fit an all-zero row".into()));
    }

    let (mu, sigma) = log_quadratic_fit(row).unwrap_or_else(|| moments(row, total));
    let sigma = sigma.max(SIGMA_FLOOR);
    let two_var = 2.0 * sigma * sigma;
    let sq: f64 = row
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let d = i as f64 - mu;
            let r = (-d * d / two_var).exp() - w;
            r * r
        })
        .sum();
    Ok(GaussianFit {
        mu,
        sigma,
        rmse: (sq / row.len() as f64).sqrt(),
    })
}

fn moments(row: ArrayView1<'_, f64>, total: f64) -> (f64, f64) {
    let mu = row.iter().enumerate().map(|(i, &w)| i as f64 * w).sum::<f64>() / total;
    let var = row
        .iter()
        .enumerate()
        .map(|(i, &w)| w * (i as f64 - mu).powi(2))
        .sum::<f64>()
        / total;
    (mu, var.sqrt())
}

fn log_quadratic_fit(row: ArrayView1<'_, f64>) -> Option<(f64, f64)> {
    let points: Vec<(f64, f64, f64)> = row
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w > 0.0)
        .map(|(i, &w)| (i as f64, w.ln(), w * w))
        .collect();
    if points.len() < 3 {
        return None;
    }
    // Normal equations for ln w ≈ a + b x + c x², with x centered on the
    // weighted mean position for conditioning.
    let wsum: f64 = points.iter().map(|p| p.2).sum();
    let shift = points.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for &(x, y, w) in &points {
        let x = x - shift;
        let basis = [1.0, x, x * x];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += w * basis[r] * basis[c];
            }
            rhs[r] += w * basis[r] * y;
        }
    }
    let [_, b, c] = solve3(m, rhs)?;
    if c.is_nan() || c >= 0.0 {
        return None;
    }
    let mu = shift - b / (2.0 * c);
    let sigma = (-1.0 / (2.0 * c)).sqrt();
    (mu.is_finite() && sigma.is_finite()).then_some((mu, sigma))
}

/// Cramer's rule; `None` when the system is (numerically) singular.
fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let scale = m.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    if d.abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        *slot = det(mk) / d;
    }
    Some(out)
}
