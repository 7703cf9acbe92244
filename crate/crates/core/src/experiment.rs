//! Leave-one-domain-out runs and the hypothesis-count sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::models::derive_seed;
use crate::synthdata::{Sample, SynthSpec};
use crate::train::{score_samples, train, RunConfig, ScoreOptions, TrainOutput};
use crate::verification::ScoreTriple;
use crate::Label;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub trained: TrainOutput,
    pub test: Vec<Sample>,
    pub scores: Vec<ScoreTriple>,
    /// AUC of `softmax_mean` on the held-out domain.
    pub auc: f64,
}

impl Outcome {
    pub fn labelled(&self, pick: impl Fn(&ScoreTriple) -> f64) -> Vec<(f64, Label)> {
        self.scores
            .iter()
            .zip(&self.test)
            .map(|(s, x)| (pick(s), x.y_prime))
            .collect()
    }
}

/// Trains on the training domains of `spec` and scores the held-out domain.
pub fn leave_one_out(spec: &SynthSpec, cfg: &RunConfig, with_ghvm: bool) -> Result<Outcome> {
    let (train_set, test) = spec.generate()?;
    let trained = train(cfg, &train_set)?;
    let opts = ScoreOptions {
        n_hypotheses: cfg.n_hypotheses,
        ghvm: with_ghvm.then_some(cfg.ghvm),
        seed: cfg.seed,
    };
    let scores = score_samples(&trained.checkpoint, &test, &opts)?;
    let mut out = Outcome {
        trained,
        test,
        scores,
        auc: 0.0,
    };
    out.auc = roc_auc(&out.labelled(|s| s.softmax_mean))?;
    Ok(out)
}

/// Raw-input baseline: score is the distance to the attack centroid minus
/// the distance to the real centroid, both fitted on `train`.
pub fn nearest_centroid_auc(train: &[Sample], test: &[Sample]) -> Result<f64> {
    let d = train
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| Error::Data("empty training set".to_string()))?;
    let centroid = |label: Label| {
        let mut c = vec![0.0; d];
        let mut n = 0usize;
        for s in train.iter().filter(|s| s.y_prime == label) {
            for (a, b) in c.iter_mut().zip(&s.x) {
                *a += b;
            }
            n += 1;
        }
        c.iter_mut().for_each(|a| *a /= n.max(1) as f64);
        c
    };
    let (real, attack) = (centroid(Label::Real), centroid(Label::Attack));
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scores: Vec<(f64, Label)> = test
        .iter()
        .map(|s| (dist(&s.x, &attack) - dist(&s.x, &real), s.y_prime))
        .collect();
    roc_auc(&scores)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub mean_auc: f64,
    pub min_auc: f64,
    pub max_auc: f64,
}

impl SweepRow {
    pub fn spread(&self) -> f64 {
        self.max_auc - self.min_auc
    }
}

pub const SWEEP_HEADER: &str = "n,mean_auc,min_auc,max_auc";

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:?},{:?},{:?}\n", r.n, r.mean_auc, r.min_auc, r.max_auc));
    }
    s
}

/// Repeat `r` of every cell trains with seed `derive_seed(cfg.seed, r)`, so
/// cells can run in any order.
pub fn sweep_n(spec: &SynthSpec, cfg: &RunConfig, n_values: &[usize], repeats: usize) -> Result<Vec<SweepRow>> {
    if repeats < 2 {
        return Err(Error::Config(format!("sweep needs at least 2 repeats, got {repeats}")));
    }
    if n_values.is_empty() {
        return Err(Error::Config("sweep needs at least one hypothesis count".to_string()));
    }
    let cells: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| (0..repeats).map(move |r| (n, r)))
        .collect();
    let aucs = cells
        .par_iter()
        .map(|&(n, r)| {
            let cell = RunConfig {
                n_hypotheses: n,
                seed: derive_seed(cfg.seed, r as u64),
                ..cfg.clone()
            };
            leave_one_out(spec, &cell, false).map(|o| o.auc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(n_values
        .iter()
        .zip(aucs.chunks(repeats))
        .map(|(&n, a)| SweepRow {
            n,
            mean_auc: a.iter().sum::<f64>() / a.len() as f64,
            min_auc: a.iter().copied().fold(f64::INFINITY, f64::min),
            max_auc: a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}
