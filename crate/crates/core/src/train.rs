//! Run configuration, the training loop and dataset scoring.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Param, Sgd, Tape, Tensor};
use crate::constraints::{batch_loss, ConstraintSet, LossWeights};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::models::{derive_seed, sample_latents, sample_latents_with, BinaryHead, Checkpoint, ModelConfig, Module};
use crate::synthdata::Sample;
use crate::verification::{fhvm_score, optimize_latents, GhvmConfig, ScoreTriple};
use crate::models::generate_hypotheses;
use crate::Label;

/// Which feature generation networks take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorSet {
    pub real: bool,
    pub attack: bool,
}

impl Default for GeneratorSet {
    fn default() -> Self {
        GeneratorSet {
            real: true,
            attack: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub constraints: ConstraintSet,
    pub generators: GeneratorSet,
    pub n_hypotheses: usize,
    pub ghvm: GhvmConfig,
    pub learning_rate: f64,
    pub learning_rate_after_drop: f64,
    pub lr_drop_epoch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            constraints: ConstraintSet::ALL,
            generators: GeneratorSet::default(),
            n_hypotheses: 14,
            ghvm: GhvmConfig::default(),
            learning_rate: 1e-3,
            learning_rate_after_drop: 1e-4,
            lr_drop_epoch: 50,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 20,
            batch_size: 40,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

fn list<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// True when no hypothesis constraint is active and the plain binary
    /// classifier head is trained instead.
    pub fn uses_baseline_head(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.ghvm.validate()?;
        let c = self.constraints;
        if !self.generators.attack && (c.rcc || c.ddc) {
            return Err(Error::Config(
                "RCC and DDC need the known-attack generator".to_string(),
            ));
        }
        if !self.generators.real && !c.is_empty() {
            return Err(Error::Config(
                "every constraint needs the real-face generator".to_string(),
            ));
        }
        if c.is_empty() && self.generators.real && self.generators.attack {
            return Err(Error::Config(
                "no constraint enabled while both generators are on".to_string(),
            ));
        }
        if self.n_hypotheses < 2 {
            return Err(Error::Config(format!(
                "need at least 2 hypotheses, got {}",
                self.n_hypotheses
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch size must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config(format!(
                "dev fraction must lie in [0, 1), got {}",
                self.dev_fraction
            )));
        }
        if !(self.weights.lambda1.is_finite() && self.weights.lambda2.is_finite()) {
            return Err(Error::Config("loss weights must be finite".to_string()));
        }
        if !(self.learning_rate_after_drop > 0.0) {
            return Err(Error::Config("post-drop learning rate must be positive".to_string()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_drop_epoch {
            self.learning_rate
        } else {
            self.learning_rate_after_drop
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let c = self.constraints;
        let constraints = [("var", c.var), ("rcc", c.rcc), ("ddc", c.ddc)]
            .into_iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| n);
        let g = self.generators;
        let generators = [("real", g.real), ("attack", g.attack)]
            .into_iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| n);
        let m = &self.model;
        [
            ("lambda1", format!("{:?}", self.weights.lambda1)),
            ("lambda2", format!("{:?}", self.weights.lambda2)),
            ("constraints", list(constraints)),
            ("generators", list(generators)),
            ("n_hypotheses", self.n_hypotheses.to_string()),
            ("ghvm_iterations", self.ghvm.iterations.to_string()),
            ("ghvm_step", format!("{:?}", self.ghvm.step)),
            ("sigma_floor", format!("{:?}", self.ghvm.sigma_floor)),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("learning_rate_after_drop", format!("{:?}", self.learning_rate_after_drop)),
            ("lr_drop_epoch", self.lr_drop_epoch.to_string()),
            ("momentum", format!("{:?}", self.momentum)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dev_fraction", format!("{:?}", self.dev_fraction)),
            ("seed", self.seed.to_string()),
            ("c_z", m.c_z.to_string()),
            ("gen_hidden", m.gen_hidden.to_string()),
            ("c_f", m.c_f.to_string()),
            ("slope", format!("{:?}", m.slope)),
            ("extractor_hidden", list(&m.extractor_hidden)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: {e}"))
        }
        match key {
            "lambda1" => self.weights.lambda1 = p(key, value)?,
            "lambda2" => self.weights.lambda2 = p(key, value)?,
            "constraints" => self.constraints = parse_constraints(value)?,
            "generators" => self.generators = parse_generators(value)?,
            "n_hypotheses" => self.n_hypotheses = p(key, value)?,
            "ghvm_iterations" => self.ghvm.iterations = p(key, value)?,
            "ghvm_step" => self.ghvm.step = p(key, value)?,
            "sigma_floor" => self.ghvm.sigma_floor = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "learning_rate_after_drop" => self.learning_rate_after_drop = p(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = p(key, value)?,
            "momentum" => self.momentum = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "dev_fraction" => self.dev_fraction = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "c_z" => self.model.c_z = p(key, value)?,
            "gen_hidden" => self.model.gen_hidden = p(key, value)?,
            "c_f" => self.model.c_f = p(key, value)?,
            "slope" => self.model.slope = p(key, value)?,
            "extractor_hidden" => {
                self.model.extractor_hidden = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| p(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn apply_kv(mut self, kv: &KvFile, path: &Path) -> Result<Self> {
        for e in &kv.entries {
            match self.set(&e.key, &e.value) {
                Ok(true) => {}
                Ok(false) => return Err(e.unknown(path)),
                Err(message) => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: e.line,
                        message,
                    })
                }
            }
        }
        Ok(self)
    }

    /// Rebuilds the run configuration recorded in a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut cfg = RunConfig {
            model: ck.config.clone(),
            ..RunConfig::default()
        };
        for (k, v) in &ck.echo {
            cfg.set(k, v).map_err(Error::Config)?;
        }
        cfg.model = ck.config.clone();
        Ok(cfg)
    }
}

pub fn parse_constraints(s: &str) -> std::result::Result<ConstraintSet, String> {
    let mut c = ConstraintSet {
        var: false,
        rcc: false,
        ddc: false,
    };
    for item in s.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
        match item.to_ascii_lowercase().as_str() {
            "var" => c.var = true,
            "rcc" => c.rcc = true,
            "ddc" => c.ddc = true,
            other => return Err(format!("unknown constraint {other:?}")),
        }
    }
    Ok(c)
}

pub fn parse_generators(s: &str) -> std::result::Result<GeneratorSet, String> {
    let mut g = GeneratorSet {
        real: false,
        attack: false,
    };
    for item in s.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
        match item.to_ascii_lowercase().as_str() {
            "real" => g.real = true,
            "attack" => g.attack = true,
            other => return Err(format!("unknown generator {other:?}")),
        }
    }
    Ok(g)
}

/// Per-epoch means over all training samples; NaN for disabled terms.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub var: f64,
    pub rcc: f64,
    pub ddc: f64,
    pub overall: f64,
    pub var_real: f64,
    pub var_attack: f64,
    pub rcc_real: f64,
    pub rcc_attack: f64,
    pub overall_real: f64,
    pub overall_attack: f64,
}

pub const LOG_HEADER: &str =
    "epoch,lr,var,rcc,ddc,overall,var_real,var_attack,rcc_real,rcc_attack,overall_real,overall_attack";

impl EpochLog {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.epoch,
            self.learning_rate,
            self.var,
            self.rcc,
            self.ddc,
            self.overall,
            self.var_real,
            self.var_attack,
            self.rcc_real,
            self.rcc_attack,
            self.overall_real,
            self.overall_attack
        )
    }
}

pub fn format_log(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for row in log {
        s.push_str(&row.to_csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Samples held back from training for threshold fitting.
    pub dev: Vec<Sample>,
}

/// Deterministic split of `samples` into `(fit, dev)`.
pub fn split_dev(samples: &[Sample], fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)));
    let n_dev = (samples.len() as f64 * fraction).round() as usize;
    let mut is_dev = vec![false; samples.len()];
    for &i in &idx[..n_dev] {
        is_dev[i] = true;
    }
    let (mut fit, mut dev) = (Vec::new(), Vec::new());
    for (s, d) in samples.iter().zip(is_dev) {
        if d {
            dev.push(s.clone());
        } else {
            fit.push(s.clone());
        }
    }
    (fit, dev)
}

#[derive(Default)]
struct Accum {
    sum: f64,
    n: usize,
}

impl Accum {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Which modules receive gradients under `cfg`.
struct Trainable {
    extractor: bool,
    real: bool,
    attack: bool,
    head: bool,
}

impl Trainable {
    fn of(cfg: &RunConfig) -> Self {
        let c = cfg.constraints;
        Trainable {
            extractor: c.var || c.rcc || cfg.uses_baseline_head(),
            real: !c.is_empty(),
            attack: c.rcc || c.ddc,
            head: cfg.uses_baseline_head(),
        }
    }

    fn params<'a>(&self, ck: &'a mut Checkpoint) -> Vec<&'a mut Param> {
        let mut out = Vec::new();
        if self.extractor {
            out.extend(ck.extractor.params_mut());
        }
        if self.real {
            out.extend(ck.real_gen.params_mut());
        }
        if self.attack {
            out.extend(ck.attack_gen.params_mut());
        }
        if self.head {
            if let Some(h) = ck.head.as_mut() {
                out.extend(h.params_mut());
            }
        }
        out
    }
}

/// Trains a model on `samples` (all from the training domains).
pub fn train(cfg: &RunConfig, samples: &[Sample]) -> Result<TrainOutput> {
    cfg.validate()?;
    let d_in = samples
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| Error::Data("empty training set".to_string()))?;
    if samples.iter().any(|s| s.x.len() != d_in) {
        return Err(Error::Data("training samples differ in dimension".to_string()));
    }
    let (fit, dev) = split_dev(samples, cfg.dev_fraction, cfg.seed);
    if !fit.iter().any(|s| s.y_prime.is_real()) || !fit.iter().any(|s| !s.y_prime.is_real()) {
        return Err(Error::Data("training split needs both classes".to_string()));
    }

    let model = ModelConfig {
        d_in,
        ..cfg.model.clone()
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut ck = Checkpoint::init(&mut init_rng, model)?;
    let trainable = Trainable::of(cfg);
    if trainable.head {
        ck.head = Some(BinaryHead::init(&mut init_rng, ck.config.c_f));
    }
    ck.echo = cfg.to_pairs();

    let mut opt = {
        let params = trainable.params(&mut ck);
        let refs: Vec<&Param> = params.iter().map(|p| &**p).collect();
        Sgd::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay, &refs)?
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut latent_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4));
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.learning_rate_at(epoch);
        order.shuffle(&mut order_rng);
        let mut stats: [Accum; 9] = Default::default();
        let [var, rcc, ddc, overall, var_r, var_a, rcc_r, rcc_a, ov_r] = &mut stats;
        let mut ov_a = Accum::default();

        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<Label> = chunk.iter().map(|&i| fit[i].y_prime).collect();
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| fit[i].x.as_slice()).collect();
            let x = Tensor::from_rows(&rows)?;

            let mut tape = Tape::new();
            let ex_b = ck.extractor.bind(&mut tape, trainable.extractor);
            let xv = tape.constant(x);
            let f = ck.extractor.forward(&mut tape, &ex_b, xv)?;

            if trainable.head {
                let head = ck.head.as_ref().expect("baseline head");
                let hb = head.bind(&mut tape, true);
                let z = head.logits(&mut tape, &hb, f)?;
                let y: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
                let y = tape.constant(Tensor::matrix(labels.len(), 1, y)?);
                let zero = tape.constant(Tensor::zeros(&[labels.len(), 1]));
                let sp = tape.log_add_exp(zero, z)?;
                let yz = tape.mul(y, z)?;
                let per = tape.sub(sp, yz)?;
                let loss = tape.mean(per);
                tape.backward(loss)?;
                for (k, l) in labels.iter().enumerate() {
                    let v = tape.value(per).data()[k];
                    overall.add(v);
                    if l.is_real() { ov_r.add(v) } else { ov_a.add(v) }
                }
                ck.extractor.collect_grads(&tape, &ex_b)?;
                ck.head.as_mut().expect("head").collect_grads(&tape, &hb)?;
            } else {
                let z = sample_latents_with(&mut latent_rng, cfg.n_hypotheses, ck.config.c_z)?;
                let zv = tape.constant(z);
                let rb = ck.real_gen.bind(&mut tape, trainable.real);
                let ab = ck.attack_gen.bind(&mut tape, trainable.attack);
                let g = ck.real_gen.forward(&mut tape, &rb, zv)?;
                let h = ck.attack_gen.forward(&mut tape, &ab, zv)?;
                let bl = batch_loss(&mut tape, f, g, h, &labels, cfg.constraints, cfg.weights)?;
                tape.backward(bl.loss)?;

                let ddc_v = bl.ddc.map(|d| tape.value(d).data()[0]);
                if let Some(d) = ddc_v {
                    ddc.add(d);
                }
                for (k, l) in labels.iter().enumerate() {
                    let mut o = 0.0;
                    if let Some(v) = bl.var {
                        let v = tape.value(v).data()[k];
                        var.add(v);
                        if l.is_real() { var_r.add(v) } else { var_a.add(v) }
                        o += (2.0 * l.as_f64() - 1.0) * v;
                    }
                    if let Some(r) = bl.rcc {
                        let r = tape.value(r).data()[k];
                        rcc.add(r);
                        if l.is_real() { rcc_r.add(r) } else { rcc_a.add(r) }
                        o += cfg.weights.lambda1 * r;
                    }
                    if let Some(d) = ddc_v {
                        o += cfg.weights.lambda2 * d;
                    }
                    overall.add(o);
                    if l.is_real() { ov_r.add(o) } else { ov_a.add(o) }
                }
                if trainable.extractor {
                    ck.extractor.collect_grads(&tape, &ex_b)?;
                }
                if trainable.real {
                    ck.real_gen.collect_grads(&tape, &rb)?;
                }
                if trainable.attack {
                    ck.attack_gen.collect_grads(&tape, &ab)?;
                }
            }
            let mut params = trainable.params(&mut ck);
            opt.step(&mut params)?;
        }

        log.push(EpochLog {
            epoch,
            learning_rate: opt.learning_rate,
            var: var.mean(),
            rcc: rcc.mean(),
            ddc: ddc.mean(),
            overall: overall.mean(),
            var_real: var_r.mean(),
            var_attack: var_a.mean(),
            rcc_real: rcc_r.mean(),
            rcc_attack: rcc_a.mean(),
            overall_real: ov_r.mean(),
            overall_attack: ov_a.mean(),
        });
        if !log.last().is_none_or(|l| l.overall.is_finite()) {
            return Err(Error::Optimization { iteration: epoch });
        }
    }
    Ok(TrainOutput {
        checkpoint: ck,
        log,
        dev,
    })
}

/// Scoring options shared by the CLI and the experiment harness.
#[derive(Clone, Copy, Debug)]
pub struct ScoreOptions {
    pub n_hypotheses: usize,
    /// `None` skips latent inversion and reports ΔKL as NaN.
    pub ghvm: Option<GhvmConfig>,
    pub seed: u64,
}

/// Scores every sample. Sample `i` draws its latents from stream `i` of
/// `opts.seed`, so results do not depend on scheduling.
pub fn score_samples(ck: &Checkpoint, samples: &[Sample], opts: &ScoreOptions) -> Result<Vec<ScoreTriple>> {
    if let Some(s) = samples.iter().find(|s| s.x.len() != ck.config.d_in) {
        return Err(Error::Config(format!(
            "checkpoint expects inputs of dimension {}, dataset has {}",
            ck.config.d_in,
            s.x.len()
        )));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let features = ck.extractor.extract_batch(&Tensor::from_rows(&rows)?)?;
    (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let f = features.row(i);
            let z = sample_latents(opts.n_hypotheses, ck.config.c_z, derive_seed(opts.seed, i as u64))?;
            let batch = generate_hypotheses(&z, &ck.real_gen, &ck.attack_gen)?;
            let (mut softmax_mean, var) = fhvm_score(f, &batch)?;
            if let Some(head) = &ck.head {
                softmax_mean = head.probability(f);
            }
            let delta_kl = match &opts.ghvm {
                Some(g) => optimize_latents(f, &z, &ck.real_gen, &ck.attack_gen, g)?.delta_kl(),
                None => f64::NAN,
            };
            Ok(ScoreTriple {
                softmax_mean,
                var,
                delta_kl,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::SynthSpec;

    fn tiny() -> (RunConfig, Vec<Sample>) {
        let spec = SynthSpec {
            d_in: 8,
            n_domains: 2,
            samples_per_class_per_domain: 20,
            ..SynthSpec::default()
        };
        let (train, _) = spec.generate().unwrap();
        let cfg = RunConfig {
            model: ModelConfig {
                c_z: 4,
                gen_hidden: 8,
                c_f: 6,
                extractor_hidden: vec![8],
                ..ModelConfig::default()
            },
            epochs: 2,
            n_hypotheses: 4,
            ..RunConfig::default()
        };
        (cfg, train)
    }

    #[test]
    fn config_combinations_follow_generator_ablation() {
        let mut cfg = RunConfig::default();
        cfg.generators.attack = false;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.constraints = parse_constraints("var").unwrap();
        cfg.validate().unwrap();
        cfg.generators.real = false;
        assert!(cfg.validate().is_err());
        cfg.constraints = parse_constraints("none").unwrap();
        cfg.validate().unwrap();
        assert!(cfg.uses_baseline_head());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = RunConfig {
            constraints: parse_constraints("rcc,ddc").unwrap(),
            ..RunConfig::default()
        };
        cfg.weights.lambda2 = 0.25;
        cfg.model.extractor_hidden = vec![16, 8];
        let path = Path::new("run.kv");
        let kv = KvFile::parse(&cfg.to_kv(), path).unwrap();
        assert_eq!(RunConfig::default().apply_kv(&kv, path).unwrap(), cfg);
    }

    #[test]
    fn learning_rate_drops_after_configured_epoch() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.learning_rate_at(49), 1e-3);
        assert_eq!(cfg.learning_rate_at(50), 1e-4);
    }

    #[test]
    fn training_is_deterministic_and_logs_every_epoch() {
        let (cfg, data) = tiny();
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.log.len(), 2);
        assert_eq!(format_log(&a.log), format_log(&b.log));
        assert_eq!(a.checkpoint.to_text(), b.checkpoint.to_text());
        assert_eq!(a.dev.len(), 4);
    }

    #[test]
    fn ablation_rows_train() {
        let (base, data) = tiny();
        for (c, g) in [
            ("var", "real,attack"),
            ("ddc", "real,attack"),
            ("rcc", "real,attack"),
            ("var", "real"),
            ("none", "attack"),
            ("none", "none"),
        ] {
            let cfg = RunConfig {
                constraints: parse_constraints(c).unwrap(),
                generators: parse_generators(g).unwrap(),
                ..base.clone()
            };
            let out = train(&cfg, &data).unwrap_or_else(|e| panic!("{c}/{g}: {e}"));
            assert!(out.log.iter().all(|l| l.overall.is_finite()));
            let scores = score_samples(
                &out.checkpoint,
                &data[..6],
                &ScoreOptions {
                    n_hypotheses: 4,
                    ghvm: None,
                    seed: 0,
                },
            )
            .unwrap();
            assert_eq!(scores.len(), 6);
        }
    }

    #[test]
    fn weightless_ablation_logs_var_only() {
        let (mut cfg, data) = tiny();
        cfg.weights = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
        };
        let out = train(&cfg, &data).unwrap();
        for row in &out.log {
            let reconstructed = (row.var_real * 0.0) + row.overall;
            assert!(reconstructed.is_finite());
        }
    }

    #[test]
    fn score_rejects_dimension_mismatch() {
        let (cfg, data) = tiny();
        let out = train(&cfg, &data).unwrap();
        let bad = vec![Sample {
            x: vec![0.0; 3],
            y_prime: Label::Real,
            domain_id: 0,
        }];
        let opts = ScoreOptions {
            n_hypotheses: 4,
            ghvm: None,
            seed: 0,
        };
        assert!(matches!(score_samples(&out.checkpoint, &bad, &opts), Err(Error::Config(_))));
    }
}
