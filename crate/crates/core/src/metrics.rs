//! Biometric error rates. Scores are "higher means real": an input is
//! accepted as real at threshold `θ` when `score >= θ`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::Label;

fn class_counts(scores: &[(f64, Label)]) -> Result<(usize, usize)> {
    let reals = scores.iter().filter(|(_, l)| l.is_real()).count();
    let attacks = scores.len() - reals;
    if reals == 0 || attacks == 0 {
        return Err(Error::Metric(format!(
            "both classes are required ({reals} real, {attacks} attack)"
        )));
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Metric("NaN score".to_string()));
    }
    Ok((reals, attacks))
}

fn descending(scores: &[(f64, Label)]) -> Vec<(f64, Label)> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    v
}

/// Area under the ROC curve; tied real/attack pairs count one half.
pub fn roc_auc(scores: &[(f64, Label)]) -> Result<f64> {
    let (n_real, n_attack) = class_counts(scores)?;
    let sorted = descending(scores);
    // Walk tie groups from the top. Each real in a group beats every attack
    // below the group and ties with the attacks inside it. Counting in halves
    // keeps the sum an exact integer.
    let mut attacks_above = 0u64;
    let mut twice_wins = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut r, mut a) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            match sorted[j].1 {
                Label::Real => r += 1,
                Label::Attack => a += 1,
            }
            j += 1;
        }
        let attacks_below = n_attack as u64 - attacks_above - a;
        twice_wins += r * (2 * attacks_below + a);
        attacks_above += a;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * n_real * n_attack) as f64)
}

/// False-accept and false-reject rates at `threshold`.
pub fn far_frr(scores: &[(f64, Label)], threshold: f64) -> Result<(f64, f64)> {
    let (n_real, n_attack) = class_counts(scores)?;
    let accepted_attacks = scores
        .iter()
        .filter(|(s, l)| !l.is_real() && *s >= threshold)
        .count();
    let rejected_reals = scores
        .iter()
        .filter(|(s, l)| l.is_real() && *s < threshold)
        .count();
    Ok((
        accepted_attacks as f64 / n_attack as f64,
        rejected_reals as f64 / n_real as f64,
    ))
}

/// One threshold on the ROC sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points for `θ = +∞` and then every distinct score, descending.
pub fn operating_points(scores: &[(f64, Label)]) -> Result<Vec<OperatingPoint>> {
    let (n_real, n_attack) = class_counts(scores)?;
    let sorted = descending(scores);
    let mut points = vec![OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    }];
    let (mut acc_r, mut acc_a) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                Label::Real => acc_r += 1,
                Label::Attack => acc_a += 1,
            }
            i += 1;
        }
        points.push(OperatingPoint {
            threshold: t,
            far: acc_a as f64 / n_attack as f64,
            frr: (n_real - acc_r) as f64 / n_real as f64,
        });
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub rate: f64,
    pub threshold: f64,
}

/// Equal error rate, linearly interpolated between the two operating points
/// where `FAR − FRR` changes sign.
pub fn eer(scores: &[(f64, Label)]) -> Result<Eer> {
    eer_from_points(&operating_points(scores)?)
}

/// EER on a precomputed, threshold-descending operating-point sweep.
pub fn eer_from_points(points: &[OperatingPoint]) -> Result<Eer> {
    let gap = |p: &OperatingPoint| p.far - p.frr;
    for k in 0..points.len() {
        let p = points[k];
        if gap(&p) == 0.0 {
            // Anywhere between this score and the next lower one gives the
            // same rates; report the middle of that interval.
            let threshold = match points.get(k + 1) {
                Some(next) if p.threshold.is_finite() => 0.5 * (p.threshold + next.threshold),
                _ => p.threshold,
            };
            return Ok(Eer {
                rate: p.far,
                threshold,
            });
        }
        if let Some(q) = points.get(k + 1) {
            if gap(&p) < 0.0 && gap(q) > 0.0 {
                let t = -gap(&p) / (gap(q) - gap(&p));
                let rate = p.far + t * (q.far - p.far);
                let threshold = if p.threshold.is_finite() {
                    p.threshold + t * (q.threshold - p.threshold)
                } else {
                    q.threshold
                };
                return Ok(Eer { rate, threshold });
            }
        }
    }
    Err(Error::Metric("FAR and FRR never cross".to_string()))
}

/// `(FAR(θ) + FRR(θ)) / 2`.
pub fn hter(scores: &[(f64, Label)], threshold: f64) -> Result<f64> {
    if !threshold.is_finite() {
        return Err(Error::Metric(format!("non-finite threshold {threshold}")));
    }
    let (far, frr) = far_frr(scores, threshold)?;
    Ok((far + frr) / 2.0)
}

/// `(APCER + BPCER) / 2` over `(truth, predicted)` pairs.
pub fn acer(pairs: &[(Label, Label)]) -> Result<f64> {
    let reals = pairs.iter().filter(|(t, _)| t.is_real()).count();
    let attacks = pairs.len() - reals;
    if reals == 0 || attacks == 0 {
        return Err(Error::Metric(format!(
            "both classes are required ({reals} real, {attacks} attack)"
        )));
    }
    let apcer = pairs
        .iter()
        .filter(|(t, p)| !t.is_real() && p.is_real())
        .count() as f64
        / attacks as f64;
    let bpcer = pairs
        .iter()
        .filter(|(t, p)| t.is_real() && !p.is_real())
        .count() as f64
        / reals as f64;
    Ok((apcer + bpcer) / 2.0)
}

/// One-sided Mann–Whitney rank-sum test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankSum {
    /// Pairs where the first sample exceeds the second (ties count half).
    pub u: f64,
    pub z: f64,
    /// P-value for "first sample tends to be larger", normal approximation
    /// with tie correction.
    pub p_value: f64,
}

pub fn rank_sum_greater(first: &[f64], second: &[f64]) -> Result<RankSum> {
    let (n1, n2) = (first.len(), second.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Metric("rank-sum test needs two nonempty samples".to_string()));
    }
    let mut all: Vec<(f64, bool)> = first
        .iter()
        .map(|&v| (v, true))
        .chain(second.iter().map(|&v| (v, false)))
        .collect();
    if all.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::Metric("NaN in rank-sum sample".to_string()));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let n = all.len() as f64;
    let mut rank_sum_first = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        rank_sum_first += mid_rank * all[i..j].iter().filter(|(_, f)| *f).count() as f64;
        i = j;
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let u = rank_sum_first - a * (a + 1.0) / 2.0;
    let mean = a * b / 2.0;
    let var = a * b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let z = if var > 0.0 { (u - mean) / var.sqrt() } else { 0.0 };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(RankSum {
        u,
        z,
        p_value: 1.0 - normal.cdf(z),
    })
}

/// Equal-width histogram of one score, split by class.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub real: Vec<usize>,
    pub attack: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[(f64, Label)], bins: usize) -> Result<Self> {
        if bins == 0 || values.is_empty() {
            return Err(Error::Metric("histogram needs bins and values".to_string()));
        }
        let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Metric("non-finite histogram value".to_string()));
        }
        if hi == lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let (mut real, mut attack) = (vec![0; bins], vec![0; bins]);
        for (v, l) in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            match l {
                Label::Real => real[k] += 1,
                Label::Attack => attack[k] += 1,
            }
        }
        Ok(Histogram { edges, real, attack })
    }

    pub fn total(&self) -> usize {
        self.real.iter().sum::<usize>() + self.attack.iter().sum::<usize>()
    }

    /// `bin_lo,bin_hi,real,attack` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,real,attack\n");
        for k in 0..self.real.len() {
            let _ = writeln!(
                s,
                "{:?},{:?},{},{}",
                self.edges[k],
                self.edges[k + 1],
                self.real[k],
                self.attack[k]
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub hter: f64,
    pub hter_threshold: f64,
    pub acer: f64,
    /// Softmax, VAR and ΔKL thresholds used for the ACER decisions.
    pub acer_thresholds: (f64, f64, f64),
    pub threshold_source: String,
    pub mode: String,
    pub var_histogram: Histogram,
    pub delta_kl_histogram: Histogram,
}

impl MetricsReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "threshold_source={}", self.threshold_source);
        let _ = writeln!(s, "auc={:?}", self.auc);
        let _ = writeln!(s, "eer={:?}", self.eer);
        let _ = writeln!(s, "eer_threshold={:?}", self.eer_threshold);
        let _ = writeln!(s, "hter={:?}", self.hter);
        let _ = writeln!(s, "hter_threshold={:?}", self.hter_threshold);
        let _ = writeln!(s, "acer={:?}", self.acer);
        let _ = writeln!(s, "acer_threshold_softmax={:?}", self.acer_thresholds.0);
        let _ = writeln!(s, "acer_threshold_var={:?}", self.acer_thresholds.1);
        let _ = writeln!(s, "acer_threshold_delta_kl={:?}", self.acer_thresholds.2);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}   thresholds from: {}", self.mode, self.threshold_source);
        let _ = writeln!(s, "{:<8} {:>10} {:>12}", "metric", "value(%)", "threshold");
        let _ = writeln!(s, "{:<8} {:>10.2} {:>12}", "AUC", 100.0 * self.auc, "-");
        let _ = writeln!(s, "{:<8} {:>10.2} {:>12.6}", "EER", 100.0 * self.eer, self.eer_threshold);
        let _ = writeln!(s, "{:<8} {:>10.2} {:>12.6}", "HTER", 100.0 * self.hter, self.hter_threshold);
        let _ = writeln!(s, "{:<8} {:>10.2} {:>12.6}", "ACER", 100.0 * self.acer, self.acer_thresholds.0);
        s
    }
}
