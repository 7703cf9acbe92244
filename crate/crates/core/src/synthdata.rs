//! Synthetic multi-domain liveness data.
//!
//! Real samples of every domain lie along a shared direction, tilted per
//! domain by `1 - real_coherence`. Each domain has its own attack types whose
//! directions scatter around the real direction at an angle set by
//! `attack_spread`. Training-domain attacks also share an artefact direction
//! that held-out attacks lack, so a detector keyed on it does not transfer.
//! The last domain (or `held_out_domain`) is the test split.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::Label;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y_prime: Label,
    pub domain_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub d_in: usize,
    pub n_domains: usize,
    pub samples_per_class_per_domain: usize,
    /// 1 puts every domain's real direction on the shared one.
    pub real_coherence: f64,
    /// Tangent of the typical angle between attack and real directions.
    pub attack_spread: f64,
    pub noise_sigma: f64,
    pub attack_types_per_domain: usize,
    /// Weight of an artefact direction shared by every training-domain
    /// attack. Held-out attacks do not carry it.
    pub attack_signature: f64,
    /// Defaults to the last domain.
    pub held_out_domain: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            d_in: 32,
            n_domains: 4,
            samples_per_class_per_domain: 250,
            real_coherence: 0.9,
            attack_spread: 0.3,
            noise_sigma: 0.01,
            attack_types_per_domain: 3,
            attack_signature: 0.6,
            held_out_domain: None,
            seed: 0,
        }
    }
}

fn unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

fn blend(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

impl SynthSpec {
    pub fn held_out(&self) -> usize {
        self.held_out_domain.unwrap_or(self.n_domains.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::Config(format!(
                "need at least 2 domains for a held-out split, got {}",
                self.n_domains
            )));
        }
        if self.d_in == 0 || self.samples_per_class_per_domain == 0 || self.attack_types_per_domain == 0 {
            return Err(Error::Config("d_in, sample count and attack types must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.real_coherence) {
            return Err(Error::Config(format!(
                "real_coherence must lie in [0, 1], got {}",
                self.real_coherence
            )));
        }
        if !(self.attack_signature >= 0.0) {
            return Err(Error::Config("attack_signature must be nonnegative".to_string()));
        }
        if !(self.attack_spread > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("attack_spread must be positive and noise_sigma nonnegative".to_string()));
        }
        if self.held_out() >= self.n_domains {
            return Err(Error::Config(format!(
                "held-out domain {} does not exist",
                self.held_out()
            )));
        }
        Ok(())
    }

    /// Returns `(train, test)`; test holds only the held-out domain.
    pub fn generate(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.d_in;
        let shared = unit(&mut rng, d);
        let known_sig = unit(&mut rng, d);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for domain_id in 0..self.n_domains {
            let tilt = unit(&mut rng, d);
            let real_dir = normalize(blend(&shared, self.real_coherence, &tilt, 1.0 - self.real_coherence));
            let attack_dirs: Vec<Vec<f64>> = (0..self.attack_types_per_domain)
                .map(|_| {
                    let w = unit(&mut rng, d);
                    let sig_weight = if domain_id == self.held_out() { 0.0 } else { self.attack_signature };
                    let w = blend(&w, self.attack_spread, &known_sig, sig_weight);
                    normalize(blend(&real_dir, 1.0, &w, 1.0))
                })
                .collect();

            let out = if domain_id == self.held_out() {
                &mut test
            } else {
                &mut train
            };
            for (label, k) in [(Label::Real, None), (Label::Attack, Some(()))] {
                for i in 0..self.samples_per_class_per_domain {
                    let dir = match k {
                        None => &real_dir,
                        Some(()) => &attack_dirs[i % attack_dirs.len()],
                    };
                    let magnitude = rng.gen_range(0.5..1.5);
                    let x = dir
                        .iter()
                        .map(|v| magnitude * v + self.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    out.push(Sample {
                        x,
                        y_prime: label,
                        domain_id,
                    });
                }
            }
        }
        Ok((train, test))
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d_in={}", self.d_in);
        let _ = writeln!(s, "n_domains={}", self.n_domains);
        let _ = writeln!(s, "samples_per_class_per_domain={}", self.samples_per_class_per_domain);
        let _ = writeln!(s, "real_coherence={:?}", self.real_coherence);
        let _ = writeln!(s, "attack_spread={:?}", self.attack_spread);
        let _ = writeln!(s, "noise_sigma={:?}", self.noise_sigma);
        let _ = writeln!(s, "attack_types_per_domain={}", self.attack_types_per_domain);
        let _ = writeln!(s, "attack_signature={:?}", self.attack_signature);
        let _ = writeln!(s, "held_out_domain={}", self.held_out());
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Applies `key=value` overrides on top of `self`.
    pub fn apply_kv(mut self, kv: &KvFile, path: &Path) -> Result<Self> {
        for e in &kv.entries {
            match e.key.as_str() {
                "d_in" => self.d_in = e.parse(path)?,
                "n_domains" => self.n_domains = e.parse(path)?,
                "samples_per_class_per_domain" => self.samples_per_class_per_domain = e.parse(path)?,
                "real_coherence" => self.real_coherence = e.parse(path)?,
                "attack_spread" => self.attack_spread = e.parse(path)?,
                "noise_sigma" => self.noise_sigma = e.parse(path)?,
                "attack_types_per_domain" => self.attack_types_per_domain = e.parse(path)?,
                "attack_signature" => self.attack_signature = e.parse(path)?,
                "held_out_domain" => self.held_out_domain = Some(e.parse(path)?),
                "seed" => self.seed = e.parse(path)?,
                _ => return Err(e.unknown(path)),
            }
        }
        Ok(self)
    }
}

/// Header `label,domain,x0,..,x{D-1}`, then one row per sample with 17
/// significant digits.
pub fn format_dataset(samples: &[Sample]) -> String {
    let d = samples.first().map_or(0, |s| s.x.len());
    let mut out = String::from("label,domain");
    for j in 0..d {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{},{}", s.y_prime as u8, s.domain_id);
        for v in &s.x {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut width = None;
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        if no == 0 {
            if !line.starts_with("label,domain") {
                return Err(parse_err(lineno, "missing label,domain header".to_string()));
            }
            width = Some(line.split(',').count() - 2);
            continue;
        }
        let mut fields = line.split(',');
        let label = fields
            .next()
            .and_then(|v| v.trim().parse::<u8>().ok())
            .and_then(Label::from_digit)
            .ok_or_else(|| parse_err(lineno, "label must be 0 or 1".to_string()))?;
        let domain_id = fields
            .next()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(lineno, "bad domain id".to_string()))?;
        let x = fields
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, format!("bad feature value: {e}")))?;
        if Some(x.len()) != width {
            return Err(parse_err(
                lineno,
                format!("expected {} features, found {}", width.unwrap_or(0), x.len()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, "non-finite feature value".to_string()));
        }
        samples.push(Sample {
            x,
            y_prime: label,
            domain_id,
        });
    }
    Ok(samples)
}
