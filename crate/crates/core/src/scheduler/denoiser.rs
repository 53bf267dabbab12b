use std::ops::Range;

use super::{LatentBlock, SchedulerError, T_MAX};

/// Opaque per-segment conditioning passed through to the denoiser.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Conditioning {
    pub segment: usize,
    /// Target frames the current block represents.
    pub frames: Range<usize>,
}

/// Single-step flow predictor. Implementations must be deterministic and
/// return one value per element of `current`.
pub trait Denoiser: Sync {
    fn name(&self) -> &str;

    fn predict(
        &self,
        current: &LatentBlock,
        history: &LatentBlock,
        conditioning: &Conditioning,
    ) -> Result<Vec<f64>, SchedulerError>;
}

/// Predicts zero flow everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn name(&self) -> &str {
        "zero"
    }

    fn predict(&self, current: &LatentBlock, _: &LatentBlock, _: &Conditioning) -> Result<Vec<f64>, SchedulerError> {
        Ok(vec![0.0; current.values().len()])
    }
}

/// `v[f, d] = mean_over_history_frames(h[·, d]) + c[f, d]`; the history
/// mean is 0 when there is no history.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearDenoiser;

impl LinearDenoiser {
    pub fn history_mean(history: &LatentBlock) -> Vec<f64> {
        let mut mean = vec![0.0; history.channels()];
        if history.frames() == 0 {
            return mean;
        }
        for f in 0..history.frames() {
            for (m, x) in mean.iter_mut().zip(history.frame(f)) {
                *m += x;
            }
        }
        let n = history.frames() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

impl Denoiser for LinearDenoiser {
    fn name(&self) -> &str {
        "linear"
    }

    fn predict(&self, current: &LatentBlock, history: &LatentBlock, _: &Conditioning) -> Result<Vec<f64>, SchedulerError> {
        let mean = Self::history_mean(history);
        let d = current.channels();
        Ok(current
            .values()
            .iter()
            .enumerate()
            .map(|(i, c)| mean[i % d] + c)
            .collect())
    }
}

/// Exact flow-matching velocity for data distributed element-wise as
/// `N(mean, std²)`. Ignores history.
///
/// With `x_σ = (1−σ)x₀ + σε` the marginal is `N((1−σ)μ, V)` with
/// `V = (1−σ)²s² + σ²`, and `v = E[ε − x₀ | x_σ]` is affine in `x`:
/// `v = (σ − (1−σ)s²)/V · (x − (1−σ)μ) − μ`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianToyDenoiser {
    pub mean: f64,
    pub std: f64,
    pub t_max: f64,
}

impl Default for GaussianToyDenoiser {
    fn default() -> Self {
        Self {
            mean: 0.5,
            std: 0.5,
            t_max: T_MAX,
        }
    }
}

impl GaussianToyDenoiser {
    /// `(slope, intercept)` of the velocity as an affine function of `x` at
    /// noise level `level`.
    pub fn coefficients(&self, level: f64) -> (f64, f64) {
        let sigma = level / self.t_max;
        let s2 = self.std * self.std;
        let var = (1.0 - sigma).powi(2) * s2 + sigma * sigma;
        let slope = (sigma - (1.0 - sigma) * s2) / var;
        (slope, -slope * (1.0 - sigma) * self.mean - self.mean)
    }
}

impl Denoiser for GaussianToyDenoiser {
    fn name(&self) -> &str {
        "gaussian-toy"
    }

    fn predict(&self, current: &LatentBlock, _: &LatentBlock, _: &Conditioning) -> Result<Vec<f64>, SchedulerError> {
        let (a, b) = self.coefficients(current.level);
        Ok(current.values().iter().map(|x| a * x + b).collect())
    }
}

/// Registered stubs: `zero`, `linear`, `gaussian-toy`.
pub fn denoiser_by_name(name: &str, t_max: f64) -> Result<Box<dyn Denoiser>, SchedulerError> {
    match name {
        "zero" => Ok(Box::new(ZeroDenoiser)),
        "linear" => Ok(Box::new(LinearDenoiser)),
        "gaussian-toy" => Ok(Box::new(GaussianToyDenoiser {
            t_max,
            ..Default::default()
        })),
        other => Err(SchedulerError::UnknownDenoiser(other.to_string())),
    }
}
