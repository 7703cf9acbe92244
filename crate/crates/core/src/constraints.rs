//! Training constraints on cosine correlations between the input feature `f`,
//! the real-face hypotheses `g_i` and the known-attack hypotheses `h_i`.
//!
//! Each constraint exists in two forms: a graph builder over batched tape
//! variables, used for training and latent inversion, and a plain function on
//! one feature vector that evaluates the same graph.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::Label;

/// Which constraints enter the overall loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    pub var: bool,
    pub rcc: bool,
    pub ddc: bool,
}

impl ConstraintSet {
    pub const ALL: ConstraintSet = ConstraintSet {
        var: true,
        rcc: true,
        ddc: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.var || self.rcc || self.ddc)
    }
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet::ALL
    }
}

/// Balance weights of the overall loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

/// Per-input loss terms and the weights that combined them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub var: f64,
    pub rcc: f64,
    pub ddc: f64,
    pub overall: f64,
    pub y_prime: Label,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    /// `(2y′ − 1)·VAR + λ1·RCC + λ2·DDC` from the stored terms.
    pub fn reconstruct(&self) -> f64 {
        combine(self.var, self.rcc, self.ddc, self.y_prime, self.lambda1, self.lambda2)
    }
}

fn combine(var: f64, rcc: f64, ddc: f64, y: Label, l1: f64, l2: f64) -> f64 {
    (2.0 * y.as_f64() - 1.0) * var + l1 * rcc + l2 * ddc
}

/// Sample variance (divisor `N − 1`) of each row of `cos_fg: B×N`.
pub fn var_term(tape: &mut Tape, cos_fg: Var) -> Result<Var> {
    let n = tape.value(cos_fg).cols();
    if n < 2 {
        return Err(Error::Config(format!(
            "variance constraint needs N >= 2 hypotheses, got {n}"
        )));
    }
    tape.row_variance(cos_fg, 1)
}

/// Per-row relative correlation constraint for `B×N` cosine matrices and one
/// label per row.
pub fn rcc_term(tape: &mut Tape, cos_fg: Var, cos_fh: Var, labels: &[Label]) -> Result<Var> {
    let (rows, n) = (tape.value(cos_fg).rows(), tape.value(cos_fg).cols());
    if tape.value(cos_fg).shape() != tape.value(cos_fh).shape() {
        return Err(Error::Contract(format!(
            "RCC needs index-aligned hypotheses: {:?} vs {:?}",
            tape.value(cos_fg).shape(),
            tape.value(cos_fh).shape()
        )));
    }
    if labels.len() != rows {
        return Err(Error::Contract(format!(
            "RCC got {} labels for {rows} inputs",
            labels.len()
        )));
    }
    let y: Vec<f64> = labels
        .iter()
        .flat_map(|l| std::iter::repeat_n(l.as_f64(), n))
        .collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = tape.constant(Tensor::matrix(rows, n, y)?);
    let not_y = tape.constant(Tensor::matrix(rows, n, not_y)?);

    let lse = tape.log_add_exp(cos_fg, cos_fh)?;
    let pick_g = tape.mul(y, cos_fg)?;
    let pick_h = tape.mul(not_y, cos_fh)?;
    let picked = tape.add(pick_g, pick_h)?;
    let terms = tape.sub(lse, picked)?;
    tape.row_mean(terms)
}

/// Distribution discrimination constraint over all `N²` hypothesis pairs.
pub fn ddc_term(tape: &mut Tape, g: Var, h: Var) -> Result<Var> {
    if tape.value(g).rows() == 0 || tape.value(h).rows() == 0 {
        return Err(Error::Contract("DDC needs nonempty hypothesis sets".to_string()));
    }
    if tape.value(g).rows() != tape.value(h).rows() {
        return Err(Error::Contract(format!(
            "DDC needs equally many hypotheses: {} vs {}",
            tape.value(g).rows(),
            tape.value(h).rows()
        )));
    }
    let gh = tape.cosine(g, h)?;
    let gg = tape.cosine(g, g)?;
    let diff = tape.sub(gh, gg)?;
    Ok(tape.mean(diff))
}

/// Tape variables of a batched overall loss.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    /// Scalar mean of the per-input overall loss.
    pub loss: Var,
    /// Per-input VAR (length B), when enabled.
    pub var: Option<Var>,
    /// Per-input RCC (length B), when enabled.
    pub rcc: Option<Var>,
    /// Scalar DDC, when enabled.
    pub ddc: Option<Var>,
}

/// Builds the batch-mean overall loss for features `f: B×C_f` against
/// hypotheses `g, h: N×C_f`. Disabled terms are left out of the graph.
pub fn batch_loss(
    tape: &mut Tape,
    f: Var,
    g: Var,
    h: Var,
    labels: &[Label],
    enabled: ConstraintSet,
    weights: LossWeights,
) -> Result<BatchLoss> {
    if enabled.is_empty() {
        return Err(Error::Config("no constraint enabled".to_string()));
    }
    let rows = tape.value(f).rows();
    if labels.len() != rows {
        return Err(Error::Contract(format!(
            "{} labels for {rows} inputs",
            labels.len()
        )));
    }
    let mut parts = Vec::new();
    let cos_fg = tape.cosine(f, g)?;

    let var = if enabled.var {
        let v = var_term(tape, cos_fg)?;
        let sign: Vec<f64> = labels.iter().map(|l| 2.0 * l.as_f64() - 1.0).collect();
        let sign = tape.constant(Tensor::vector(sign));
        let signed = tape.mul(sign, v)?;
        parts.push(tape.mean(signed));
        Some(v)
    } else {
        None
    };
    let rcc = if enabled.rcc {
        let cos_fh = tape.cosine(f, h)?;
        let r = rcc_term(tape, cos_fg, cos_fh, labels)?;
        let m = tape.mean(r);
        parts.push(tape.scale(m, weights.lambda1));
        Some(r)
    } else {
        None
    };
    let ddc = if enabled.ddc {
        let d = ddc_term(tape, g, h)?;
        parts.push(tape.scale(d, weights.lambda2));
        Some(d)
    } else {
        None
    };

    let mut loss = parts[0];
    for p in &parts[1..] {
        loss = tape.add(loss, *p)?;
    }
    Ok(BatchLoss { loss, var, rcc, ddc })
}

fn row(f: &[f64]) -> Result<Tensor> {
    Tensor::matrix(1, f.len(), f.to_vec())
}

/// Cosine similarity of two feature vectors, clamped to `[-1, 1]`.
pub fn cosine(f: &[f64], g: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(row(f)?), tape.constant(row(g)?));
    let c = tape.cosine(a, b)?;
    tape.value(c).item()
}

/// Cosines of `f` against every row of `hypotheses`.
pub fn cosines(f: &[f64], hypotheses: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(row(f)?), tape.constant(hypotheses.clone()));
    let c = tape.cosine(a, b)?;
    Ok(tape.value(c).data().to_vec())
}

/// Sample variance (divisor `N − 1`) of the cosines between `f` and each real-face hypothesis.
pub fn var_constraint(f: &[f64], real: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(row(f)?), tape.constant(real.clone()));
    let c = tape.cosine(a, b)?;
    let v = var_term(&mut tape, c)?;
    tape.value(v).item()
}

/// Relative correlation constraint for one input with label `y_prime`.
pub fn rcc(f: &[f64], real: &Tensor, attack: &Tensor, y_prime: Label) -> Result<f64> {
    if real.shape() != attack.shape() {
        return Err(Error::Contract(format!(
            "RCC needs index-aligned hypotheses: {:?} vs {:?}",
            real.shape(),
            attack.shape()
        )));
    }
    let mut tape = Tape::new();
    let fv = tape.constant(row(f)?);
    let (g, h) = (tape.constant(real.clone()), tape.constant(attack.clone()));
    let cg = tape.cosine(fv, g)?;
    let ch = tape.cosine(fv, h)?;
    let r = rcc_term(&mut tape, cg, ch, &[y_prime])?;
    tape.value(r).item()
}

/// Distribution discrimination constraint between the two hypothesis sets.
pub fn ddc(real: &Tensor, attack: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (g, h) = (tape.constant(real.clone()), tape.constant(attack.clone()));
    let d = ddc_term(&mut tape, g, h)?;
    tape.value(d).item()
}

/// All three constraints for one input and their weighted combination.
pub fn overall_loss(
    f: &[f64],
    real: &Tensor,
    attack: &Tensor,
    y_prime: Label,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    if !(weights.lambda1.is_finite() && weights.lambda2.is_finite()) {
        return Err(Error::Config(format!("non-finite loss weights {weights:?}")));
    }
    let var = var_constraint(f, real)?;
    let rcc = rcc(f, real, attack, y_prime)?;
    let ddc = ddc(real, attack)?;
    Ok(LossBreakdown {
        var,
        rcc,
        ddc,
        overall: combine(var, rcc, ddc, y_prime, weights.lambda1, weights.lambda2),
        y_prime,
        lambda1: weights.lambda1,
        lambda2: weights.lambda2,
    })
}
