//! Diagonal Gaussian-mixture action distributions: density evaluation,
//! sampling, EM fitting, mode selection, and the two-target multimodal
//! ambiguity demonstration contrasting a unimodal mean-regression model
//! with a K=2 mixture.

use crate::seed;
use crate::tracking_control::normal;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn dim(&self) -> usize {
        self.components.first().map(|c| c.mean.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Input("mixture has no components".into()));
        }
        let dim = self.dim();
        let mut weight_sum = 0.0;
        for c in &self.components {
            if c.mean.len() != dim || c.variance.len() != dim {
                return Err(Error::Dimension { expected: dim, got: c.mean.len() });
            }
            if c.weight < 0.0 {
                return Err(Error::Input("negative component weight".into()));
            }
            if c.variance.iter().any(|&v| v < VARIANCE_FLOOR) {
                return Err(Error::Input("variance below floor".into()));
            }
            weight_sum += c.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("weights sum to {weight_sum}, not 1")));
        }
        Ok(())
    }

    /// Mixture mean, sum of weighted component means.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (mi, &ci) in m.iter_mut().zip(&c.mean) {
                *mi += c.weight * ci;
            }
        }
        m
    }
}

fn log_normal_diag(x: &[f64], mean: &[f64], variance: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(variance) {
        let d = xi - mi;
        acc += -0.5 * ((2.0 * std::f64::consts::PI * vi).ln() + d * d / vi);
    }
    acc
}

/// Log mixture density at `x` via log-sum-exp.
pub fn log_density(gmm: &GaussianMixture, x: &[f64]) -> Result<f64> {
    if x.len() != gmm.dim() {
        return Err(Error::Dimension { expected: gmm.dim(), got: x.len() });
    }
    let terms: Vec<f64> = gmm
        .components
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| c.weight.ln() + log_normal_diag(x, &c.mean, &c.variance))
        .collect();
    let max = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}

/// Draws one action: component by weight, then a diagonal Gaussian draw.
pub fn sample<R: Rng>(gmm: &GaussianMixture, rng: &mut R) -> Vec<f64> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = gmm.components.len() - 1;
    for (k, c) in gmm.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            chosen = k;
            break;
        }
    }
    let c = &gmm.components[chosen];
    c.mean
        .iter()
        .zip(&c.variance)
        .map(|(m, v)| m + v.sqrt() * normal(rng))
        .collect()
}

/// The component mean with the highest mixture density; ties break toward
/// the lowest component index.
pub fn mode_action(gmm: &GaussianMixture) -> Vec<f64> {
    let mut best = 0;
    let mut best_density = f64::NEG_INFINITY;
    for (k, c) in gmm.components.iter().enumerate() {
        let d = log_density(gmm, &c.mean).expect("component mean has mixture dimension");
        if d > best_density {
            best_density = d;
            best = k;
        }
    }
    gmm.components[best].mean.clone()
}

/// Sample mean and per-dimension maximum-likelihood variance (1/n), floored.
pub fn fit_unimodal(data: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.len() < 2 {
        return Err(Error::Input("unimodal fit requires >= 2 points".into()));
    }
    let dim = data[0].len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in data {
        for (m, xi) in mean.iter_mut().zip(x) {
            *m += xi / n;
        }
    }
    let mut variance = vec![0.0; dim];
    for x in data {
        for ((v, xi), mi) in variance.iter_mut().zip(x).zip(&mean) {
            let d = xi - mi;
            *v += d * d / n;
        }
    }
    for v in &mut variance {
        *v = v.max(VARIANCE_FLOOR);
    }
    Ok((mean, variance))
}

#[derive(Clone, Debug)]
pub struct EmReport {
    pub mixture: GaussianMixture,
    pub log_likelihoods: Vec<f64>,
    /// Indices of components that collapsed and were re-seeded.
    pub reseeded: Vec<usize>,
}

/// Diagonal-covariance EM with a k-means-style farthest-point seeding.
///
/// The per-point mean log-likelihood is non-decreasing across iterations;
/// a component losing all responsibility is re-seeded from the point that
/// is worst explained by the current model.
pub fn fit_em(
    data: &[Vec<f64>],
    k: usize,
    init_seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<EmReport> {
    if k < 1 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if data.len() < k {
        return Err(Error::Input(format!("need >= {k} points for K={k}")));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: 0 });
    }

    // K=1 has a closed form and must match fit_unimodal exactly.
    if k == 1 {
        let (mean, variance) = fit_unimodal_or_single(data);
        let mixture = GaussianMixture {
            components: vec![MixtureComponent { weight: 1.0, mean, variance }],
        };
        let ll = mean_log_likelihood(&mixture, data);
        return Ok(EmReport { mixture, log_likelihoods: vec![ll], reseeded: vec![] });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    // Seed means: one random point, then repeatedly the point farthest from
    // the chosen set.
    let mut means: Vec<Vec<f64>> = vec![data[rng.gen_range(0..data.len())].clone()];
    while means.len() < k {
        let far = data
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                let da = min_sq_dist(a, &means);
                let db = min_sq_dist(b, &means);
                da.partial_cmp(&db).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        means.push(data[far].clone());
    }
    let (_, global_var) = fit_unimodal_or_single(data);
    let mut mixture = GaussianMixture {
        components: means
            .into_iter()
            .map(|mean| MixtureComponent {
                weight: 1.0 / k as f64,
                mean,
                variance: global_var.clone(),
            })
            .collect(),
    };

    let n = data.len();
    let mut log_likelihoods = Vec::new();
    let mut reseeded = Vec::new();
    for _ in 0..max_iters {
        // E-step: responsibilities.
        let mut resp = vec![vec![0.0; k]; n];
        let mut ll_sum = 0.0;
        for (i, x) in data.iter().enumerate() {
            let terms: Vec<f64> = mixture
                .components
                .iter()
                .map(|c| {
                    if c.weight > 0.0 {
                        c.weight.ln() + log_normal_diag(x, &c.mean, &c.variance)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let max = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let total: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            ll_sum += max + total.ln();
            for (r, t) in resp[i].iter_mut().zip(&terms) {
                *r = (t - max).exp() / total;
            }
        }
        log_likelihoods.push(ll_sum / n as f64);
        if log_likelihoods.len() >= 2 {
            let len = log_likelihoods.len();
            if log_likelihoods[len - 1] - log_likelihoods[len - 2] < tol {
                break;
            }
        }

        // M-step.
        for comp in 0..k {
            let weight_sum: f64 = resp.iter().map(|r| r[comp]).sum();
            if weight_sum < 1e-12 {
                // Collapsed component: re-seed from the worst-explained point.
                let far = data
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da = log_density(&mixture, a).unwrap();
                        let db = log_density(&mixture, b).unwrap();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                mixture.components[comp].mean = data[far].clone();
                mixture.components[comp].variance = global_var.clone();
                mixture.components[comp].weight = 1.0 / n as f64;
                reseeded.push(comp);
                continue;
            }
            let mut mean = vec![0.0; dim];
            for (x, r) in data.iter().zip(&resp) {
                for (m, xi) in mean.iter_mut().zip(x) {
                    *m += r[comp] * xi / weight_sum;
                }
            }
            let mut variance = vec![0.0; dim];
            for (x, r) in data.iter().zip(&resp) {
                for ((v, xi), mi) in variance.iter_mut().zip(x).zip(&mean) {
                    let d = xi - mi;
                    *v += r[comp] * d * d / weight_sum;
                }
            }
            for v in &mut variance {
                *v = v.max(VARIANCE_FLOOR);
            }
            mixture.components[comp] = MixtureComponent {
                weight: weight_sum / n as f64,
                mean,
                variance,
            };
        }
        // Exact weight renormalization.
        let sum: f64 = mixture.components.iter().map(|c| c.weight).sum();
        for c in &mut mixture.components {
            c.weight /= sum;
        }
    }

    mixture.validate()?;
    Ok(EmReport { mixture, log_likelihoods, reseeded })
}

fn fit_unimodal_or_single(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    if data.len() >= 2 {
        fit_unimodal(data).expect("checked size")
    } else {
        (data[0].clone(), vec![VARIANCE_FLOOR; data[0].len()])
    }
}

fn min_sq_dist(x: &[f64], means: &[Vec<f64>]) -> f64 {
    means
        .iter()
        .map(|m| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn mean_log_likelihood(gmm: &GaussianMixture, data: &[Vec<f64>]) -> f64 {
    data.iter().map(|x| log_density(gmm, x).unwrap()).sum::<f64>() / data.len() as f64
}

/// Tabular stand-in for a contextual policy head: discrete context key to
/// action mixture.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ContextualPolicyTable {
    entries: BTreeMap<String, GaussianMixture>,
}

impl ContextualPolicyTable {
    pub fn insert(&mut self, key: String, mixture: GaussianMixture) -> Result<()> {
        mixture.validate()?;
        self.entries.insert(key, mixture);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&GaussianMixture> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoTargetReport {
    pub unimodal_success_rate: f64,
    pub mixture_success_rate: f64,
    /// Distance of the unimodal mean from the midpoint between the targets.
    pub unimodal_mean_offset: f64,
    pub episodes: usize,
    /// The fitted K=2 mixture behind the mode controller.
    pub mixture: GaussianMixture,
}

/// Two reachable targets at +-separation/2 on a line; demonstrations end at
/// one of them with Gaussian endpoint noise. A mean-regression controller
/// commands the demonstration mean (the midpoint), a K=2 mixture commands
/// its mode. An episode succeeds when the commanded endpoint lands within
/// 3*noise of either target.
pub fn two_target_demo(
    separation: f64,
    noise: f64,
    episodes: usize,
    base_seed: u64,
) -> Result<TwoTargetReport> {
    if separation <= 4.0 * noise {
        return Err(Error::Config(
            "separation must exceed 4x the endpoint noise".into(),
        ));
    }
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, &[0]));
    // Targets alternate so the demonstration set is exactly balanced and the
    // sample mean concentrates on the midpoint at the noise CLT rate.
    let data: Vec<Vec<f64>> = (0..episodes)
        .map(|i| {
            let target = if i % 2 == 0 { separation / 2.0 } else { -separation / 2.0 };
            vec![target + noise * normal(&mut rng)]
        })
        .collect();

    let (uni_mean, _) = fit_unimodal(&data)?;
    let em = fit_em(&data, 2, seed::derive(base_seed, &[1]), 200, 1e-10)?;
    let mixture_command = mode_action(&em.mixture)[0];
    let unimodal_command = uni_mean[0];

    let tolerance = 3.0 * noise;
    let success = |command: f64| {
        (command - separation / 2.0).abs() < tolerance
            || (command + separation / 2.0).abs() < tolerance
    };
    let unimodal_successes = (0..episodes).filter(|_| success(unimodal_command)).count();
    let mixture_successes = (0..episodes).filter(|_| success(mixture_command)).count();

    Ok(TwoTargetReport {
        unimodal_success_rate: unimodal_successes as f64 / episodes as f64,
        mixture_success_rate: mixture_successes as f64 / episodes as f64,
        unimodal_mean_offset: unimodal_command.abs(),
        episodes,
        mixture: em.mixture,
    })
}
