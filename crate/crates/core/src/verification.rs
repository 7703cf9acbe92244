//! Test-time hypothesis verification.
//!
//! The feature module scores an input by the softmax of its correlations with
//! paired real/attack hypotheses and by the spread of its real-hypothesis
//! correlations. The Gaussian module inverts the input into latent space by
//! gradient descent on the relative correlation constraint (assuming a real
//! face) and reports how far the inverted latents drift from `N(0, I)`.

use crate::autodiff::{Tape, Tensor};
use crate::constraints::{cosines, rcc_term, var_constraint};
use crate::error::{Error, Result};
use crate::models::{generate_hypotheses, Generator, HypothesisBatch, Module};
use crate::Label;

/// The three classification bases for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreTriple {
    pub softmax_mean: f64,
    pub var: f64,
    pub delta_kl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GhvmConfig {
    pub iterations: usize,
    pub step: f64,
    pub sigma_floor: f64,
}

impl Default for GhvmConfig {
    fn default() -> Self {
        GhvmConfig {
            iterations: 15,
            step: 1.0,
            sigma_floor: 1e-6,
        }
    }
}

impl GhvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("GHVM step must be positive, got {}", self.step)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma floor must be positive".to_string()));
        }
        Ok(())
    }
}

/// Mean per-dimension KL divergence of a latent set from the standard normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlSummary {
    pub kl: f64,
    /// Dimensions whose standard deviation was raised to the floor.
    pub clamped_dims: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub initial: Tensor,
    pub last: Tensor,
    pub kl_initial: KlSummary,
    pub kl_final: KlSummary,
}

impl LatentTrajectory {
    pub fn delta_kl(&self) -> f64 {
        self.kl_final.kl - self.kl_initial.kl
    }
}

/// Mean of the two-way softmax over `(cos(f, g_i), cos(f, h_i))` and the
/// variance of the real-hypothesis cosines.
pub fn fhvm_score(f: &[f64], batch: &HypothesisBatch) -> Result<(f64, f64)> {
    if batch.len() < 2 {
        return Err(Error::Config(format!(
            "feature verification needs N >= 2 hypotheses, got {}",
            batch.len()
        )));
    }
    let cg = cosines(f, &batch.real)?;
    let ch = cosines(f, &batch.attack)?;
    let softmax_mean = cg
        .iter()
        .zip(&ch)
        .map(|(a, b)| 1.0 / (1.0 + (b - a).exp()))
        .sum::<f64>()
        / cg.len() as f64;
    let var = var_constraint(f, &batch.real)?;
    Ok((softmax_mean, var))
}

/// KL divergence of `N(mu, sigma²)` from `N(0, 1)`.
pub fn kl_per_dim(mu: f64, sigma: f64) -> f64 {
    -sigma.ln() + (sigma * sigma + mu * mu) / 2.0 - 0.5
}

/// Fits a normal per latent dimension (sample mean, unbiased standard
/// deviation floored at `sigma_floor`) and averages the KL across dimensions.
pub fn kl_mean(latents: &Tensor, sigma_floor: f64) -> Result<KlSummary> {
    let (n, d) = (latents.rows(), latents.cols());
    if latents.shape().len() != 2 || n < 2 || d == 0 {
        return Err(Error::Config(format!(
            "KL needs at least 2 latents of positive dimension, got shape {:?}",
            latents.shape()
        )));
    }
    let mut total = 0.0;
    let mut clamped_dims = 0;
    for j in 0..d {
        let mu = (0..n).map(|i| latents.row(i)[j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (latents.row(i)[j] - mu).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let mut sigma = var.sqrt();
        if sigma < sigma_floor {
            sigma = sigma_floor;
            clamped_dims += 1;
        }
        total += kl_per_dim(mu, sigma);
    }
    Ok(KlSummary {
        kl: total / d as f64,
        clamped_dims,
    })
}

/// Sum over `i` of the per-latent RCC term (label real) and its gradient with
/// respect to every latent row. Generators are held fixed.
pub fn latent_rcc_gradient(
    f: &[f64],
    latents: &Tensor,
    real_gen: &Generator,
    attack_gen: &Generator,
) -> Result<(f64, Tensor)> {
    let n = latents.rows();
    let mut tape = Tape::new();
    let fv = tape.constant(Tensor::matrix(1, f.len(), f.to_vec())?);
    let z = tape.leaf(latents.clone(), true);
    let real_bound = real_gen.bind(&mut tape, false);
    let attack_bound = attack_gen.bind(&mut tape, false);
    let g = real_gen.forward(&mut tape, &real_bound, z)?;
    let h = attack_gen.forward(&mut tape, &attack_bound, z)?;
    let cg = tape.cosine(fv, g)?;
    let ch = tape.cosine(fv, h)?;
    let mean = rcc_term(&mut tape, cg, ch, &[Label::Real])?;
    let per_index_sum = tape.scale(mean, n as f64);
    let loss = tape.sum(per_index_sum);
    tape.backward(loss)?;
    let grad = tape
        .grad(z)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(latents.shape()));
    Ok((tape.value(loss).item()?, grad))
}

/// Plain gradient descent `z ← z − α·∂RCC_i/∂z_i` for `cfg.iterations` steps.
pub fn optimize_latents(
    f: &[f64],
    z0: &Tensor,
    real_gen: &Generator,
    attack_gen: &Generator,
    cfg: &GhvmConfig,
) -> Result<LatentTrajectory> {
    cfg.validate()?;
    let kl_initial = kl_mean(z0, cfg.sigma_floor)?;
    let mut z = z0.clone();
    for iteration in 0..cfg.iterations {
        let (_, grad) = latent_rcc_gradient(f, &z, real_gen, attack_gen)?;
        if !grad.all_finite() {
            return Err(Error::Optimization { iteration });
        }
        for (zi, gi) in z.data_mut().iter_mut().zip(grad.data()) {
            *zi -= cfg.step * gi;
        }
    }
    let kl_final = kl_mean(&z, cfg.sigma_floor)?;
    Ok(LatentTrajectory {
        initial: z0.clone(),
        last: z,
        kl_initial,
        kl_final,
    })
}

/// `KL⁽ᴹ⁾ − KL⁽⁰⁾` for the latents of `batch`.
pub fn ghvm_score(
    f: &[f64],
    batch: &HypothesisBatch,
    real_gen: &Generator,
    attack_gen: &Generator,
    cfg: &GhvmConfig,
) -> Result<f64> {
    Ok(optimize_latents(f, &batch.latents, real_gen, attack_gen, cfg)?.delta_kl())
}

/// Population variance of the real-hypothesis cosines, i.e. the usual
/// sampled-output estimate of epistemic uncertainty with `T = N`.
pub fn epistemic_uncertainty(f: &[f64], real: &Tensor) -> Result<f64> {
    if real.rows() < 2 {
        return Err(Error::Config(format!(
            "need N >= 2 sampled outputs, got {}",
            real.rows()
        )));
    }
    let y = cosines(f, real)?;
    let t = y.len() as f64;
    let mean = y.iter().sum::<f64>() / t;
    let mean_sq = y.iter().map(|v| v * v).sum::<f64>() / t;
    Ok((mean_sq - mean * mean).max(0.0))
}

/// All three scores for one feature, given its latent draw.
pub fn score_feature(
    f: &[f64],
    latents: &Tensor,
    real_gen: &Generator,
    attack_gen: &Generator,
    cfg: &GhvmConfig,
) -> Result<ScoreTriple> {
    let batch = generate_hypotheses(latents, real_gen, attack_gen)?;
    let (softmax_mean, var) = fhvm_score(f, &batch)?;
    let delta_kl = ghvm_score(f, &batch, real_gen, attack_gen, cfg)?;
    Ok(ScoreTriple {
        softmax_mean,
        var,
        delta_kl,
    })
}

/// Which scores take part in the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Softmax mean only.
    CrossDataset,
    /// Softmax mean, with vetoes from VAR and ΔKL.
    CrossType,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-dataset" => Ok(Mode::CrossDataset),
            "cross-type" => Ok(Mode::CrossType),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected cross-dataset or cross-type)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::CrossDataset => "cross-dataset",
            Mode::CrossType => "cross-type",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub softmax: f64,
    pub var: f64,
    pub delta_kl: f64,
}

pub fn classify(triple: &ScoreTriple, th: &Thresholds, mode: Mode) -> Label {
    let real = match mode {
        Mode::CrossDataset => triple.softmax_mean >= th.softmax,
        Mode::CrossType => {
            triple.softmax_mean >= th.softmax && triple.var <= th.var && triple.delta_kl <= th.delta_kl
        }
    };
    if real {
        Label::Real
    } else {
        Label::Attack
    }
}
