//! Gaussian-process regression over centroid history.
//!
//! Each axis gets an independent GP with a squared-exponential kernel and a
//! constant prior mean (the sample mean of the targets). Position prediction
//! is the posterior mean, velocity estimation the analytic time-derivative
//! of the posterior mean.

use crate::geom::Vec3;
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentroidSample {
    pub time: f64,
    pub position: Vec3,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GpHyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self {
            length_scale: 0.5,
            signal_variance: 1.0,
            noise_variance: 1e-4,
        }
    }
}

impl GpHyperparams {
    fn validate(&self) -> Result<()> {
        if self.length_scale <= 0.0 {
            return Err(Error::Config("length_scale must be > 0".into()));
        }
        if self.signal_variance < 0.0 || self.noise_variance < 0.0 {
            return Err(Error::Config("variances must be >= 0".into()));
        }
        if self.signal_variance + self.noise_variance <= 0.0 {
            return Err(Error::Config("signal and noise variance cannot both be 0".into()));
        }
        Ok(())
    }

    fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_variance * (-d * d / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Diagonal jitter relative to the signal variance, for factorization
/// stability when noise_variance is 0.
const JITTER: f64 = 1e-12;

struct AxisGp {
    target_mean: f64,
    /// (K + noise I)^-1 (y - mean)
    weights: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

pub struct GpModel {
    times: Vec<f64>,
    hyper: GpHyperparams,
    axes: [AxisGp; 3],
}

/// Fits one GP per axis over a shared time base.
pub fn gp_fit(history: &[CentroidSample], hyper: &GpHyperparams) -> Result<GpModel> {
    hyper.validate()?;
    if history.is_empty() {
        return Err(Error::Input("GP fit requires at least one sample".into()));
    }
    for pair in history.windows(2) {
        if pair[1].time <= pair[0].time {
            return Err(Error::Input(format!(
                "sample times must be strictly increasing ({} then {})",
                pair[0].time, pair[1].time
            )));
        }
    }
    let n = history.len();
    let times: Vec<f64> = history.iter().map(|s| s.time).collect();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = hyper.kernel(times[i], times[j]);
        }
        gram[(i, i)] += hyper.noise_variance + JITTER * hyper.signal_variance.max(1.0);
    }
    let chol_template = Cholesky::new(gram);

    let mut axes = Vec::with_capacity(3);
    for axis in 0..3 {
        let chol = chol_template
            .clone()
            .ok_or(Error::Factorization { axis })?;
        let targets: Vec<f64> = history.iter().map(|s| s.position[axis]).collect();
        let target_mean = targets.iter().sum::<f64>() / n as f64;
        let centered = DVector::from_iterator(n, targets.iter().map(|y| y - target_mean));
        let weights = chol.solve(&centered);
        axes.push(AxisGp {
            target_mean,
            weights,
            chol,
        });
    }
    let axes: [AxisGp; 3] = axes.try_into().map_err(|_| Error::Input("internal".into()))?;
    Ok(GpModel {
        times,
        hyper: *hyper,
        axes,
    })
}

impl GpModel {
    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    fn cross_kernel(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.times.len(),
            self.times.iter().map(|&ti| self.hyper.kernel(t, ti)),
        )
    }
}

/// Posterior mean and marginal variance per axis at time `t`.
pub fn gp_predict(model: &GpModel, t: f64) -> (Vec3, Vec3) {
    let k = model.cross_kernel(t);
    let mut mean = [0.0; 3];
    let mut var = [0.0; 3];
    for (axis, gp) in model.axes.iter().enumerate() {
        mean[axis] = gp.target_mean + k.dot(&gp.weights);
        let solved = gp.chol.solve(&k);
        var[axis] = (model.hyper.signal_variance - k.dot(&solved)).max(0.0);
    }
    (mean, var)
}

/// Analytic time-derivative of the posterior mean at `t`.
pub fn estimate_velocity(model: &GpModel, t: f64) -> Result<Vec3> {
    if model.times.len() < 2 {
        return Err(Error::Input("velocity estimation requires >= 2 samples".into()));
    }
    let inv_l2 = 1.0 / (model.hyper.length_scale * model.hyper.length_scale);
    // d/dt k(t, ti) = -(t - ti)/l^2 * k(t, ti)
    let dk = DVector::from_iterator(
        model.times.len(),
        model
            .times
            .iter()
            .map(|&ti| -(t - ti) * inv_l2 * model.hyper.kernel(t, ti)),
    );
    let mut v = [0.0; 3];
    for (axis, gp) in model.axes.iter().enumerate() {
        v[axis] = dk.dot(&gp.weights);
    }
    Ok(v)
}

/// Fixed-duration sliding window over centroid samples.
#[derive(Clone, Debug, Default)]
pub struct HistoryBuffer {
    samples: Vec<CentroidSample>,
}

impl HistoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn samples(&self) -> &[CentroidSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends a sample and evicts samples older than `new time - window`.
    pub fn push(&mut self, sample: CentroidSample, window: f64) -> Result<()> {
        if window <= 0.0 {
            return Err(Error::Config("window must be > 0".into()));
        }
        if let Some(last) = self.samples.last() {
            if sample.time <= last.time {
                return Err(Error::Input(format!(
                    "out-of-order sample at t={} (last t={})",
                    sample.time, last.time
                )));
            }
        }
        self.samples.push(sample);
        let cutoff = sample.time - window;
        self.samples.retain(|s| s.time >= cutoff);
        Ok(())
    }
}
