//! Command-line harness: `synth`, `train`, `score`, `eval` and `sweep-n`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{format_sweep, sweep_n};
use crate::kv::KvFile;
use crate::metrics::{acer, eer, hter, roc_auc, Histogram, MetricsReport};
use crate::models::Checkpoint;
use crate::synthdata::{read_dataset, write_dataset, SynthSpec};
use crate::train::{format_log, score_samples, train, RunConfig, ScoreOptions};
use crate::verification::{classify, Mode, ScoreTriple, Thresholds};
use crate::Label;

#[derive(Parser, Debug)]
#[command(name = "fghv", version, about = "Feature generation and hypothesis verification on synthetic liveness data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a leave-one-domain-out synthetic dataset.
    Synth(SynthArgs),
    /// Train generators and extractor; writes a checkpoint and an epoch log.
    Train(TrainArgs),
    /// Score every sample of a dataset with a trained checkpoint.
    Score(ScoreArgs),
    /// Compute AUC, EER, HTER and ACER from a score file.
    Eval(EvalArgs),
    /// Train and evaluate over several hypothesis counts.
    SweepN(SweepArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct SpecArgs {
    /// Dataset spec as a key=value file.
    #[arg(long = "spec")]
    pub spec: Option<PathBuf>,
    /// Input dimension [default: 32].
    #[arg(long)]
    pub d_in: Option<usize>,
    /// Number of domains, the held-out one included [default: 4].
    #[arg(long)]
    pub n_domains: Option<usize>,
    /// Samples per class per domain [default: 250].
    #[arg(long)]
    pub samples_per_class_per_domain: Option<usize>,
    /// Weight of the shared real direction against the domain tilt [default: 0.9].
    #[arg(long)]
    pub real_coherence: Option<f64>,
    /// Offset of attack directions from the real direction [default: 0.3].
    #[arg(long)]
    pub attack_spread: Option<f64>,
    /// Per-coordinate Gaussian noise [default: 0.01].
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Attack types per domain [default: 3].
    #[arg(long)]
    pub attack_types_per_domain: Option<usize>,
    /// Weight of the training-domain attack artefact [default: 0.6].
    #[arg(long)]
    pub attack_signature: Option<f64>,
    /// Held-out domain [default: last].
    #[arg(long)]
    pub held_out_domain: Option<usize>,
    /// Data seed [default: 0].
    #[arg(long = "data-seed")]
    pub data_seed: Option<u64>,
}

impl SpecArgs {
    pub fn resolve(&self) -> Result<SynthSpec> {
        let mut spec = SynthSpec::default();
        if let Some(path) = &self.spec {
            spec = spec.apply_kv(&KvFile::read(path)?, path)?;
        }
        macro_rules! over {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { spec.$f = v; })*};
        }
        over!(d_in, n_domains, samples_per_class_per_domain, real_coherence, attack_spread, noise_sigma,
            attack_types_per_domain, attack_signature);
        if let Some(v) = self.held_out_domain {
            spec.held_out_domain = Some(v);
        }
        if let Some(v) = self.data_seed {
            spec.seed = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// Run configuration as a key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RCC weight λ1 [default: 1].
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// DDC weight λ2 [default: 1].
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Enabled constraints, comma separated from var,rcc,ddc or "none" [default: var,rcc,ddc].
    #[arg(long)]
    pub constraints: Option<String>,
    /// Enabled generators, comma separated from real,attack or "none" [default: real,attack].
    #[arg(long)]
    pub generators: Option<String>,
    /// Hypotheses per generator N [default: 14].
    #[arg(long)]
    pub n_hypotheses: Option<usize>,
    /// Latent inversion iterations M [default: 15].
    #[arg(long)]
    pub ghvm_iterations: Option<usize>,
    /// Latent inversion step α [default: 1].
    #[arg(long)]
    pub ghvm_step: Option<f64>,
    /// Floor on fitted latent standard deviations [default: 1e-6].
    #[arg(long)]
    pub sigma_floor: Option<f64>,
    /// Initial learning rate [default: 1e-3].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Learning rate after the drop [default: 1e-4].
    #[arg(long)]
    pub learning_rate_after_drop: Option<f64>,
    /// First epoch at the dropped rate [default: 50].
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    /// SGD momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight decay [default: 5e-4].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Training epochs [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Samples per batch [default: 40].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fraction of training samples held back for threshold fitting [default: 0.1].
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Training and scoring seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Latent dimension [default: 16].
    #[arg(long)]
    pub c_z: Option<usize>,
    /// Generator hidden width [default: 128].
    #[arg(long)]
    pub gen_hidden: Option<usize>,
    /// Feature dimension [default: 128].
    #[arg(long)]
    pub c_f: Option<usize>,
    /// Leaky ReLU slope [default: 0.01].
    #[arg(long)]
    pub slope: Option<f64>,
    /// Extractor hidden widths, comma separated [default: 64].
    #[arg(long)]
    pub extractor_hidden: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { out.push((stringify!($f), v.to_string())); })*};
        }
        push!(lambda1, lambda2, constraints, generators, n_hypotheses, ghvm_iterations, ghvm_step, sigma_floor,
            learning_rate, learning_rate_after_drop, lr_drop_epoch, momentum, weight_decay, epochs, batch_size,
            dev_fraction, seed, c_z, gen_hidden, c_f, slope, extractor_hidden);
        out
    }

    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        for (k, v) in self.overrides() {
            cfg.set(k, &v).map_err(|m| Error::Config(format!("--{}: {m}", k.replace('_', "-"))))?;
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg = cfg.apply_kv(&KvFile::read(path)?, path)?;
        }
        let cfg = self.apply(cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Output for the training domains.
    #[arg(long)]
    pub train_out: PathBuf,
    /// Output for the held-out domain.
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Per-epoch log output (CSV).
    #[arg(long)]
    pub log: PathBuf,
    /// Writes the held-back development split here.
    #[arg(long)]
    pub dev_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// cross-dataset uses the softmax mean only; cross-type uses all three scores.
    #[arg(long, default_value = "cross-dataset")]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    /// Hypotheses per sample [default: value stored in the checkpoint].
    #[arg(long)]
    pub n_hypotheses: Option<usize>,
    /// Latent inversion iterations [default: value stored in the checkpoint].
    #[arg(long)]
    pub ghvm_iterations: Option<usize>,
    /// Latent inversion step [default: value stored in the checkpoint].
    #[arg(long)]
    pub ghvm_step: Option<f64>,
    /// Latent seed [default: the training seed stored in the checkpoint].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Score file to evaluate.
    #[arg(long)]
    pub scores: PathBuf,
    /// Scores of the development split; thresholds are fitted here when given.
    #[arg(long)]
    pub dev_scores: Option<PathBuf>,
    /// Directory for report.txt, report.kv, hist_var.csv and hist_delta_kl.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Hypothesis counts to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "2,6,10,14")]
    pub n_values: Vec<usize>,
    /// Training repeats per count (at least 2).
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Table output (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let spec = args.spec.resolve()?;
    let (train_set, test) = spec.generate()?;
    write_dataset(&train_set, &args.train_out)?;
    write_dataset(&test, &args.test_out)?;
    Ok(format!(
        "wrote {} training and {} held-out samples (held-out domain {})\n",
        train_set.len(),
        test.len(),
        spec.held_out()
    ))
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let cfg = args.run.resolve()?;
    let data = read_dataset(&args.data)?;
    let out = train(&cfg, &data)?;
    out.checkpoint.save(&args.checkpoint)?;
    write(&args.log, &format_log(&out.log))?;
    if let Some(dev) = &args.dev_out {
        write_dataset(&out.dev, dev)?;
    }
    let last = out.log.last().expect("at least one epoch");
    Ok(format!(
        "trained {} epochs on {} samples ({} held back); final overall loss {:.6}\n",
        cfg.epochs,
        data.len() - out.dev.len(),
        out.dev.len(),
        last.overall
    ))
}

pub const SCORE_HEADER: &str = "softmax_mean,var,delta_kl,label,domain";

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRow {
    pub triple: ScoreTriple,
    pub label: Label,
    pub domain_id: usize,
}

pub fn format_scores(rows: &[ScoredRow], mode: Mode) -> String {
    let mut s = match mode {
        Mode::CrossDataset => format!("# mode={mode} unused=delta_kl\n"),
        Mode::CrossType => format!("# mode={mode}\n"),
    };
    s.push_str(SCORE_HEADER);
    s.push('\n');
    for r in rows {
        let t = &r.triple;
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{},{}",
            t.softmax_mean, t.var, t.delta_kl, r.label as u8, r.domain_id
        );
    }
    s
}

pub fn parse_scores(text: &str, path: &Path) -> Result<(Mode, Vec<ScoredRow>)> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut mode = Mode::CrossDataset;
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (no, line) in text.lines().enumerate() {
        let no = no + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for field in comment.split_whitespace() {
                if let Some(m) = field.strip_prefix("mode=") {
                    mode = m.parse().map_err(|e: Error| fail(no, e.to_string()))?;
                }
            }
            continue;
        }
        if !header_seen {
            if line != SCORE_HEADER {
                return Err(fail(no, format!("expected header {SCORE_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(fail(no, format!("expected 5 columns, got {}", cols.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cols[i].parse().map_err(|e| fail(no, format!("column {}: {e}", i + 1)))
        };
        let label = cols[3]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_digit)
            .ok_or_else(|| fail(no, format!("label must be 0 or 1, got {:?}", cols[3])))?;
        let domain_id = cols[4]
            .parse()
            .map_err(|e| fail(no, format!("domain: {e}")))?;
        rows.push(ScoredRow {
            triple: ScoreTriple {
                softmax_mean: num(0)?,
                var: num(1)?,
                delta_kl: num(2)?,
            },
            label,
            domain_id,
        });
    }
    if !header_seen {
        return Err(fail(1, "missing header".to_string()));
    }
    Ok((mode, rows))
}

pub fn read_scores(path: &Path) -> Result<(Mode, Vec<ScoredRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, path)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<String> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = RunConfig::from_checkpoint(&ck)?;
    if let Some(n) = args.n_hypotheses {
        cfg.n_hypotheses = n;
    }
    if let Some(m) = args.ghvm_iterations {
        cfg.ghvm.iterations = m;
    }
    if let Some(a) = args.ghvm_step {
        cfg.ghvm.step = a;
    }
    cfg.ghvm.validate()?;
    let data = read_dataset(&args.data)?;
    let opts = ScoreOptions {
        n_hypotheses: cfg.n_hypotheses,
        ghvm: Some(cfg.ghvm),
        seed: args.seed.unwrap_or(cfg.seed),
    };
    let triples = score_samples(&ck, &data, &opts)?;
    let rows: Vec<ScoredRow> = triples
        .into_iter()
        .zip(&data)
        .map(|(triple, s)| ScoredRow {
            triple,
            label: s.y_prime,
            domain_id: s.domain_id,
        })
        .collect();
    write(&args.out, &format_scores(&rows, args.mode))?;
    Ok(format!("scored {} samples ({})\n", rows.len(), args.mode))
}

fn column(rows: &[ScoredRow], pick: impl Fn(&ScoreTriple) -> f64) -> Vec<(f64, Label)> {
    rows.iter().map(|r| (pick(&r.triple), r.label)).collect()
}

/// Evaluates `test`. Thresholds are equal-error points fitted on `dev` when
/// given, else on `test` itself. VAR and ΔKL are "lower means real", so their
/// thresholds are fitted on the negated scores.
pub fn evaluate(test: &[ScoredRow], dev: Option<&[ScoredRow]>, mode: Mode, bins: usize) -> Result<MetricsReport> {
    let softmax = column(test, |t| t.softmax_mean);
    let auc = roc_auc(&softmax)?;
    let test_eer = eer(&softmax)?;
    let (fit, source) = match dev {
        Some(d) => (d, "dev-eer"),
        None => (test, "test-eer"),
    };
    let th_softmax = eer(&column(fit, |t| t.softmax_mean))?.threshold;
    let (th_var, th_kl) = match mode {
        Mode::CrossDataset => (f64::INFINITY, f64::INFINITY),
        Mode::CrossType => (
            -eer(&column(fit, |t| -t.var))?.threshold,
            -eer(&column(fit, |t| -t.delta_kl))?.threshold,
        ),
    };
    let th = Thresholds {
        softmax: th_softmax,
        var: th_var,
        delta_kl: th_kl,
    };
    let decisions: Vec<(Label, Label)> = test
        .iter()
        .map(|r| (r.label, classify(&r.triple, &th, mode)))
        .collect();
    Ok(MetricsReport {
        auc,
        eer: test_eer.rate,
        eer_threshold: test_eer.threshold,
        hter: hter(&softmax, th_softmax)?,
        hter_threshold: th_softmax,
        acer: acer(&decisions)?,
        acer_thresholds: (th_softmax, th_var, th_kl),
        threshold_source: source.to_string(),
        mode: mode.to_string(),
        var_histogram: Histogram::build(&column(test, |t| t.var), bins)?,
        delta_kl_histogram: Histogram::build(&column(test, |t| t.delta_kl), bins)?,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let (mode, test) = read_scores(&args.scores)?;
    let dev = match &args.dev_scores {
        Some(p) => Some(read_scores(p)?.1),
        None => None,
    };
    let report = evaluate(&test, dev.as_deref(), mode, args.bins)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let table = report.to_table();
    write(&args.out_dir.join("report.txt"), &table)?;
    write(&args.out_dir.join("report.kv"), &report.to_kv())?;
    write(&args.out_dir.join("hist_var.csv"), &report.var_histogram.to_csv())?;
    write(&args.out_dir.join("hist_delta_kl.csv"), &report.delta_kl_histogram.to_csv())?;
    Ok(table)
}

pub fn cmd_sweep_n(args: &SweepArgs) -> Result<String> {
    let cfg = args.run.resolve()?;
    let spec = args.spec.resolve()?;
    let rows = sweep_n(&spec, &cfg, &args.n_values, args.repeats)?;
    let table = format_sweep(&rows);
    write(&args.out, &table)?;
    Ok(table)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepN(a) => cmd_sweep_n(a),
    }
}
