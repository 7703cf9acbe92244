//! Feature extractor, the two feature generation networks, latent sampling and
//! checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Param, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &str = "fghv-checkpoint";

/// Network dimensions shared by the extractor and both generators.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub c_z: usize,
    pub gen_hidden: usize,
    pub c_f: usize,
    pub slope: f64,
    /// Hidden widths of the extractor MLP; empty means a single affine layer.
    pub extractor_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 32,
            c_z: 16,
            gen_hidden: 128,
            c_f: 128,
            slope: 0.01,
            extractor_hidden: vec![64],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.c_z == 0 || self.gen_hidden == 0 || self.c_f == 0 {
            return Err(Error::Config(format!("zero-sized dimension in {self:?}")));
        }
        if self.extractor_hidden.contains(&0) {
            return Err(Error::Config("zero-width extractor layer".to_string()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.slope
            )));
        }
        Ok(())
    }

    fn to_line(&self) -> String {
        let hidden: Vec<String> = self.extractor_hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "d_in={} c_z={} gen_hidden={} c_f={} slope={:?} extractor_hidden={}",
            self.d_in,
            self.c_z,
            self.gen_hidden,
            self.c_f,
            self.slope,
            hidden.join(",")
        )
    }

    fn from_line(line: &str) -> std::result::Result<Self, String> {
        let mut cfg = ModelConfig {
            extractor_hidden: Vec::new(),
            ..ModelConfig::default()
        };
        for kv in line.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad field {kv:?}"))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| format!("{k}: {e}"));
            match k {
                "d_in" => cfg.d_in = num(v)?,
                "c_z" => cfg.c_z = num(v)?,
                "gen_hidden" => cfg.gen_hidden = num(v)?,
                "c_f" => cfg.c_f = num(v)?,
                "slope" => cfg.slope = v.parse().map_err(|e| format!("slope: {e}"))?,
                "extractor_hidden" => {
                    cfg.extractor_hidden = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(num)
                        .collect::<std::result::Result<_, _>>()?;
                }
                _ => return Err(format!("unknown config field {k:?}")),
            }
        }
        Ok(cfg)
    }
}

/// Splits one seed into independent, reproducible streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the combined state
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` standard-normal latents of dimension `c_z`, one per row.
pub fn sample_latents(n: usize, c_z: usize, seed: u64) -> Result<Tensor> {
    sample_latents_with(&mut ChaCha8Rng::seed_from_u64(seed), n, c_z)
}

pub fn sample_latents_with<R: Rng>(rng: &mut R, n: usize, c_z: usize) -> Result<Tensor> {
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 latent samples for a variance, got {n}"
        )));
    }
    if c_z == 0 {
        return Err(Error::Config("latent dimension must be positive".to_string()));
    }
    let data = (0..n * c_z).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(n, c_z, data)
}

fn glorot<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> Param {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Param::new(Tensor::matrix(fan_out, fan_in, data).expect("shape"))
}

fn zeros(n: usize) -> Param {
    Param::new(Tensor::zeros(&[n]))
}

/// One affine layer `y = x·Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Param,
    pub bias: Param,
}

impl Affine {
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Affine {
            weight: glorot(rng, fan_out, fan_in),
            bias: zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.rows()
    }
}

/// Parameters registered on a tape, in the order of `params()`.
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<Var>);

/// Anything with an ordered parameter list.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Registers every parameter as a leaf; `trainable = false` freezes them.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.params()
                .into_iter()
                .map(|p| tape.leaf(p.value.clone(), trainable))
                .collect(),
        )
    }

    /// Adds the tape gradients of a trainable binding into the parameters.
    fn collect_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for (p, v) in self.params_mut().into_iter().zip(&bound.0) {
            tape.accumulate_into(*v, p)?;
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

/// Feature generation network: affine, leaky ReLU, affine.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub hidden: Affine,
    pub output: Affine,
    pub slope: f64,
}

impl Generator {
    pub fn init<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        Generator {
            hidden: Affine::init(rng, cfg.c_z, cfg.gen_hidden),
            output: Affine::init(rng, cfg.gen_hidden, cfg.c_f),
            slope: cfg.slope,
        }
    }

    pub fn c_z(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn c_f(&self) -> usize {
        self.output.fan_out()
    }

    /// Forward pass for `z: N×C_z` on a tape, using a binding from [`Module::bind`].
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let p = &bound.0;
        let a = tape.linear(z, p[0], p[1])?;
        let a = tape.leaky_relu(a, self.slope);
        tape.linear(a, p[2], p[3])
    }

    /// Hypotheses for each latent row, without gradient tracking.
    pub fn generate(&self, latents: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let z = tape.constant(latents.clone());
        let out = self.forward(&mut tape, &bound, z)?;
        Ok(tape.value(out).clone())
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}

/// Stand-in backbone: MLP from raw input to the liveness feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    pub layers: Vec<Affine>,
    pub slope: f64,
}

impl Extractor {
    pub fn init<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let mut dims = vec![cfg.d_in];
        dims.extend(&cfg.extractor_hidden);
        dims.push(cfg.c_f);
        let layers = dims
            .windows(2)
            .map(|w| Affine::init(rng, w[0], w[1]))
            .collect();
        Extractor {
            layers,
            slope: cfg.slope,
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn c_f(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out()
    }

    /// Forward pass for `x: B×D_in`. Leaky ReLU sits between layers only.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, pair) in bound.0.chunks(2).enumerate() {
            if k > 0 {
                h = tape.leaky_relu(h, self.slope);
            }
            h = tape.linear(h, pair[0], pair[1])?;
        }
        Ok(h)
    }

    /// Features for a batch of raw inputs, one per row.
    pub fn extract_batch(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.d_in() {
            return Err(Error::Data(format!(
                "extractor expects inputs of dimension {}, got shape {:?}",
                self.d_in(),
                x.shape()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn extract(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.extract_batch(&batch)?.into_data())
    }
}

impl Module for Extractor {
    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Logistic head used when no hypothesis constraint is active, i.e. the
/// conventional binary classifier of the generator ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryHead(pub Affine);

impl BinaryHead {
    pub fn init<R: Rng>(rng: &mut R, c_f: usize) -> Self {
        BinaryHead(Affine::init(rng, c_f, 1))
    }

    pub fn logits(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        tape.linear(f, bound.0[0], bound.0[1])
    }

    pub fn probability(&self, f: &[f64]) -> f64 {
        let w = self.0.weight.value.data();
        let z: f64 = w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + self.0.bias.value.data()[0];
        1.0 / (1.0 + (-z).exp())
    }
}

impl Module for BinaryHead {
    fn params(&self) -> Vec<&Param> {
        vec![&self.0.weight, &self.0.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.0.weight, &mut self.0.bias]
    }
}

/// N latents and the index-aligned real-face (`real`) and known-attack
/// (`attack`) hypotheses generated from them.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisBatch {
    pub latents: Tensor,
    pub real: Tensor,
    pub attack: Tensor,
}

impl HypothesisBatch {
    pub fn len(&self) -> usize {
        self.latents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Feeds the same latent row to both generators.
pub fn generate_hypotheses(
    latents: &Tensor,
    real_gen: &Generator,
    attack_gen: &Generator,
) -> Result<HypothesisBatch> {
    if latents.shape().len() != 2 || latents.rows() == 0 {
        return Err(Error::Contract("empty latent batch".to_string()));
    }
    if real_gen.c_z() != attack_gen.c_z() || real_gen.c_f() != attack_gen.c_f() {
        return Err(Error::Config(format!(
            "generator shapes differ: real {}→{}, attack {}→{}",
            real_gen.c_z(),
            real_gen.c_f(),
            attack_gen.c_z(),
            attack_gen.c_f()
        )));
    }
    if latents.cols() != real_gen.c_z() {
        return Err(Error::Config(format!(
            "latent dimension {} does not match generator input {}",
            latents.cols(),
            real_gen.c_z()
        )));
    }
    Ok(HypothesisBatch {
        latents: latents.clone(),
        real: real_gen.generate(latents)?,
        attack: attack_gen.generate(latents)?,
    })
}

/// Everything needed to score an input.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub extractor: Extractor,
    pub real_gen: Generator,
    pub attack_gen: Generator,
    pub head: Option<BinaryHead>,
    /// Free-form `key=value` record of the run that produced the weights.
    pub echo: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn init<R: Rng>(rng: &mut R, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let extractor = Extractor::init(rng, &config);
        let real_gen = Generator::init(rng, &config);
        let attack_gen = Generator::init(rng, &config);
        Ok(Checkpoint {
            config,
            extractor,
            real_gen,
            attack_gen,
            head: None,
            echo: Vec::new(),
        })
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.extractor.layers.iter().enumerate() {
            out.push((format!("extractor.{i}.weight"), &l.weight.value));
            out.push((format!("extractor.{i}.bias"), &l.bias.value));
        }
        for (name, g) in [("real_gen", &self.real_gen), ("attack_gen", &self.attack_gen)] {
            out.push((format!("{name}.hidden.weight"), &g.hidden.weight.value));
            out.push((format!("{name}.hidden.bias"), &g.hidden.bias.value));
            out.push((format!("{name}.output.weight"), &g.output.weight.value));
            out.push((format!("{name}.output.bias"), &g.output.bias.value));
        }
        if let Some(h) = &self.head {
            out.push(("head.weight".to_string(), &h.0.weight.value));
            out.push(("head.bias".to_string(), &h.0.bias.value));
        }
        out
    }

    /// Text serialization:
    ///
    /// ```text
    /// fghv-checkpoint
    /// version 1
    /// config d_in=.. c_z=.. gen_hidden=.. c_f=.. slope=.. extractor_hidden=a,b
    /// echo key=value                    (zero or more)
    /// tensor <name> <dim>... : <hex>    (little-endian f64 bytes)
    /// end <tensor count>
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "version {CHECKPOINT_VERSION}");
        let _ = writeln!(s, "config {}", self.config.to_line());
        for (k, v) in &self.echo {
            let _ = writeln!(s, "echo {k}={v}");
        }
        let tensors = self.named_tensors();
        for (name, t) in &tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let _ = writeln!(s, "tensor {name} {} : {}", dims.join(" "), hex::encode(bytes));
        }
        let _ = writeln!(s, "end {}", tensors.len());
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Load {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| fail(format!("file ends before {what}")))
        };

        let (_, magic) = next("magic line")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fail(format!("not a checkpoint (first line {magic:?})")));
        }
        let (_, version) = next("version line")?;
        let found = version
            .strip_prefix("version ")
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| fail(format!("bad version line {version:?}")))?;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (_, cfg_line) = next("config line")?;
        let config = cfg_line
            .strip_prefix("config ")
            .ok_or_else(|| fail(format!("bad config line {cfg_line:?}")))
            .and_then(|c| ModelConfig::from_line(c).map_err(fail))?;
        config.validate().map_err(|e| fail(e.to_string()))?;

        let mut echo = Vec::new();
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        let mut ended = false;
        for (no, line) in lines {
            let lineno = no + 1;
            if let Some(rest) = line.strip_prefix("echo ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| fail(format!("line {lineno}: bad echo entry")))?;
                echo.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let (head, payload) = rest
                    .split_once(" : ")
                    .ok_or_else(|| fail(format!("line {lineno}: missing payload")))?;
                let mut parts = head.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| fail(format!("line {lineno}: missing tensor name")))?;
                let shape = parts
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| fail(format!("line {lineno}: bad dimension: {e}")))?;
                let bytes = hex::decode(payload.trim())
                    .map_err(|e| fail(format!("line {lineno}: bad payload: {e}")))?;
                if bytes.len() % 8 != 0 {
                    return Err(fail(format!("line {lineno}: payload is not whole f64s")));
                }
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                let t = Tensor::new(shape, data)
                    .map_err(|e| fail(format!("line {lineno}: tensor {name}: {e}")))?;
                tensors.push((name.to_string(), t));
            } else if let Some(rest) = line.strip_prefix("end ") {
                let count: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| fail(format!("line {lineno}: bad end marker")))?;
                if count != tensors.len() {
                    return Err(fail(format!(
                        "end marker promises {count} tensors, found {}",
                        tensors.len()
                    )));
                }
                ended = true;
                break;
            } else if !line.trim().is_empty() {
                return Err(fail(format!("line {lineno}: unrecognised record")));
            }
        }
        if !ended {
            return Err(fail("missing end marker (truncated file?)".to_string()));
        }

        let has_head = tensors.iter().any(|(n, _)| n.starts_with("head."));
        let mut take = |name: &str, shape: &[usize]| -> Result<Param> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| fail(format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape {
                return Err(fail(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(Param::new(t))
        };

        let mut dims = vec![config.d_in];
        dims.extend(&config.extractor_hidden);
        dims.push(config.c_f);
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(Affine {
                weight: take(&format!("extractor.{i}.weight"), &[w[1], w[0]])?,
                bias: take(&format!("extractor.{i}.bias"), &[w[1]])?,
            });
        }
        let mut generator = |name: &str| -> Result<Generator> {
            Ok(Generator {
                hidden: Affine {
                    weight: take(&format!("{name}.hidden.weight"), &[config.gen_hidden, config.c_z])?,
                    bias: take(&format!("{name}.hidden.bias"), &[config.gen_hidden])?,
                },
                output: Affine {
                    weight: take(&format!("{name}.output.weight"), &[config.c_f, config.gen_hidden])?,
                    bias: take(&format!("{name}.output.bias"), &[config.c_f])?,
                },
                slope: config.slope,
            })
        };
        let real_gen = generator("real_gen")?;
        let attack_gen = generator("attack_gen")?;
        let head = if has_head {
            Some(BinaryHead(Affine {
                weight: take("head.weight", &[1, config.c_f])?,
                bias: take("head.bias", &[1])?,
            }))
        } else {
            None
        };
        if let Some((name, _)) = tensors.first() {
            return Err(fail(format!("unexpected tensor {name}")));
        }
        Ok(Checkpoint {
            extractor: Extractor {
                layers,
                slope: config.slope,
            },
            real_gen,
            attack_gen,
            head,
            echo,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_in: 5,
            c_z: 4,
            gen_hidden: 6,
            c_f: 3,
            slope: 0.2,
            extractor_hidden: vec![7],
        }
    }

    #[test]
    fn latents_are_deterministic() {
        let a = sample_latents(14, 64, 7).unwrap();
        let b = sample_latents(14, 64, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[14, 64]);
        assert_ne!(a, sample_latents(14, 64, 8).unwrap());
    }

    #[test]
    fn latent_moments_match_standard_normal() {
        let z = sample_latents(10_000, 1, 3).unwrap();
        let n = z.len() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.95..1.05).contains(&var), "variance {var}");
    }

    #[test]
    fn latents_need_two_samples() {
        assert!(matches!(sample_latents(1, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn constant_generator_emits_bias() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Generator::init(&mut rng, &cfg);
        g.hidden.weight.value = Tensor::zeros(&[6, 4]);
        g.output.weight.value = Tensor::zeros(&[3, 6]);
        g.output.bias.value = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let z = sample_latents(5, 4, 1).unwrap();
        let batch = generate_hypotheses(&z, &g, &g).unwrap();
        assert_eq!(batch.len(), 5);
        for row in batch.real.row_iter().chain(batch.attack.row_iter()) {
            assert_eq!(row, &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn generator_matches_hand_forward() {
        let g = Generator {
            hidden: Affine {
                weight: Param::new(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap()),
                bias: Param::new(Tensor::vector(vec![0.5, 0.0])),
            },
            output: Affine {
                weight: Param::new(Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap()),
                bias: Param::new(Tensor::vector(vec![1.0])),
            },
            slope: 0.1,
        };
        // z = [1, 2]: hidden = [1.5, -2] → leaky → [1.5, -0.2]; out = 3 - 0.6 + 1
        let z = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let out = g.generate(&z).unwrap();
        assert!((out.data()[0] - 3.4).abs() < 1e-12);
    }

    #[test]
    fn hypotheses_are_index_aligned_and_pure() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real = Generator::init(&mut rng, &cfg);
        let attack = Generator::init(&mut rng, &cfg);
        let z = sample_latents(4, 4, 9).unwrap();
        let batch = generate_hypotheses(&z, &real, &attack).unwrap();
        assert_eq!(batch, generate_hypotheses(&z, &real, &attack).unwrap());
        for i in 0..4 {
            let zi = Tensor::matrix(1, 4, z.row(i).to_vec()).unwrap();
            assert_eq!(real.generate(&zi).unwrap().data(), batch.real.row(i));
            assert_eq!(attack.generate(&zi).unwrap().data(), batch.attack.row(i));
        }
    }

    #[test]
    fn mismatched_generators_are_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Generator::init(&mut rng, &small_config());
        let b = Generator::init(
            &mut rng,
            &ModelConfig {
                c_f: 9,
                ..small_config()
            },
        );
        let z = sample_latents(3, 4, 0).unwrap();
        assert!(matches!(generate_hypotheses(&z, &a, &b), Err(Error::Config(_))));
    }

    #[test]
    fn extractor_identity_and_errors() {
        let ex = Extractor {
            layers: vec![Affine {
                weight: Param::new(Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap()),
                bias: Param::new(Tensor::zeros(&[3])),
            }],
            slope: 0.01,
        };
        assert_eq!(ex.extract(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(matches!(ex.extract(&[1.0]), Err(Error::Data(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex = Extractor::init(&mut rng, &small_config());
        assert_eq!(ex.extract(&[0.0; 5]).unwrap(), vec![0.0; 3]);
        let x = [0.3, -0.1, 0.9, 0.0, 1.2];
        assert_eq!(ex.extract(&x).unwrap(), ex.extract(&x).unwrap());
        assert_eq!(ex.extract(&x).unwrap().len(), 3);
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig::default();
        let g = Generator::init(&mut rng, &cfg);
        let bound = (6.0 / (cfg.c_z + cfg.gen_hidden) as f64).sqrt();
        assert!(g.hidden.weight.value.data().iter().all(|w| w.abs() <= bound));
        assert!(g.hidden.bias.value.data().iter().all(|b| *b == 0.0));
    }

    fn checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut ck = Checkpoint::init(&mut rng, small_config()).unwrap();
        ck.head = Some(BinaryHead::init(&mut rng, 3));
        ck.echo.push(("seed".to_string(), "17".to_string()));
        ck
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = checkpoint();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in ck.named_tensors().iter().zip(back.named_tensors()) {
            let bits_a: Vec<u64> = a.1.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.1.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncated_checkpoint_fails_to_load() {
        let text = checkpoint().to_text();
        let cut = &text[..text.len() * 2 / 3];
        let err = Checkpoint::from_text(cut, Path::new("cut.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Load { .. }), "{err}");
    }

    #[test]
    fn future_version_is_rejected() {
        let text = checkpoint().to_text().replacen("version 1", "version 999", 1);
        let err = Checkpoint::from_text(&text, Path::new("v999.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Version { found: 999, .. }), "{err}");
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(3, 4), derive_seed(3, 4));
    }
}
