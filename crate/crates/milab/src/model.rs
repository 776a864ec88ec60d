//! MIL model definitions: per-instance featurizer, attention scorer,
//! optional self-attention mixer, and the predictor head in its two
//! compositions.
//!
//! Joint composition applies the predictor once to the pooled bag
//! representation. Additive composition applies the same-architecture
//! predictor to every attended instance representation and sums the
//! per-instance logit vectors; the pre-sum terms are the per-class,
//! per-instance contributions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Mean,
    Attention,
    SelfAttention,
}

impl Pooling {
    pub fn name(&self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
            Pooling::SelfAttention => "self-attention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    Joint,
    Additive,
}

fn default_heads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilConfig {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub attention_hidden: usize,
    pub predictor_hidden: usize,
    pub num_classes: usize,
    pub pooling: Pooling,
    pub composition: Composition,
    #[serde(default = "default_heads")]
    pub self_attention_heads: usize,
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("feature_dim", self.feature_dim),
            ("attention_hidden", self.attention_hidden),
            ("predictor_hidden", self.predictor_hidden),
        ];
        for (name, v) in dims {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.pooling == Pooling::SelfAttention {
            if self.self_attention_heads < 1 {
                return Err(Error::Config("self_attention_heads must be >= 1".into()));
            }
            if !self.feature_dim.is_multiple_of(self.self_attention_heads) {
                return Err(Error::Config(format!(
                    "feature_dim {} must be divisible by self_attention_heads {}",
                    self.feature_dim, self.self_attention_heads
                )));
            }
        }
        Ok(())
    }
}

/// One dense layer: `y = x·weight + bias` with weight stored input×output.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("init shape"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Linear {
            weight: Tensor::identity(dim),
            bias: Tensor::zeros(vec![dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Single scaled-dot-product self-attention layer with a residual
/// connection, standing in for transformer-style instance mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    pub heads: Vec<AttentionHead>,
    pub wo: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub config: MilConfig,
    /// Featurizer f: two dense layers with a ReLU between them.
    pub featurizer: [Linear; 2],
    /// Attention scorer: two-layer tanh MLP to one score per instance.
    /// Present whenever pooling uses attention weights.
    pub attention_scorer: Option<[Linear; 2]>,
    /// Predictor head: two-layer ReLU MLP to `num_classes` logits.
    pub predictor: [Linear; 2],
    pub mixer: Option<Mixer>,
}

/// Result of a forward pass on one bag.
#[derive(Debug, Clone)]
pub struct BagOutput {
    /// One logit per class.
    pub logits: Tensor,
    /// Attention weight per instance; uniform 1/N under mean pooling.
    pub attention: Vec<f64>,
    /// N×C per-instance logit contributions; present iff additive.
    pub contributions: Option<Tensor>,
}

/// Tape handles produced by a recorded forward pass, for training and
/// gradient checking.
pub struct ForwardVars {
    pub logits: Var,
    pub attention: Var,
    pub contributions: Option<Var>,
    /// Parameter vars in `named_params` order.
    pub params: Vec<Var>,
}

impl MilModel {
    /// Seeded initialization; shapes are fully determined by the config.
    pub fn init(config: MilConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.input_dim;
        let dp = config.feature_dim;
        let featurizer = [
            Linear::init(&mut rng, d, dp),
            Linear::init(&mut rng, dp, dp),
        ];
        let attention_scorer = match config.pooling {
            Pooling::Mean => None,
            _ => Some([
                Linear::init(&mut rng, dp, config.attention_hidden),
                Linear::init(&mut rng, config.attention_hidden, 1),
            ]),
        };
        let predictor = [
            Linear::init(&mut rng, dp, config.predictor_hidden),
            Linear::init(&mut rng, config.predictor_hidden, config.num_classes),
        ];
        let mixer = if config.pooling == Pooling::SelfAttention {
            let head_dim = dp / config.self_attention_heads;
            let heads = (0..config.self_attention_heads)
                .map(|_| AttentionHead {
                    wq: Linear::init(&mut rng, dp, head_dim).weight,
                    wk: Linear::init(&mut rng, dp, head_dim).weight,
                    wv: Linear::init(&mut rng, dp, head_dim).weight,
                })
                .collect();
            Some(Mixer {
                heads,
                wo: Linear::init(&mut rng, dp, dp).weight,
            })
        } else {
            None
        };
        Ok(MilModel {
            config,
            featurizer,
            attention_scorer,
            predictor,
            mixer,
        })
    }

    /// Parameters in a fixed, documented order. Checkpoints, the optimizer
    /// state and gradient collection all index by this order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.featurizer.iter().enumerate() {
            out.push((format!("featurizer.l{}.weight", i + 1), &l.weight));
            out.push((format!("featurizer.l{}.bias", i + 1), &l.bias));
        }
        if let Some(scorer) = &self.attention_scorer {
            for (i, l) in scorer.iter().enumerate() {
                out.push((format!("attention.l{}.weight", i + 1), &l.weight));
                out.push((format!("attention.l{}.bias", i + 1), &l.bias));
            }
        }
        for (i, l) in self.predictor.iter().enumerate() {
            out.push((format!("predictor.l{}.weight", i + 1), &l.weight));
            out.push((format!("predictor.l{}.bias", i + 1), &l.bias));
        }
        if let Some(mixer) = &self.mixer {
            for (h, head) in mixer.heads.iter().enumerate() {
                out.push((format!("mixer.h{h}.wq"), &head.wq));
                out.push((format!("mixer.h{h}.wk"), &head.wk));
                out.push((format!("mixer.h{h}.wv"), &head.wv));
            }
            out.push(("mixer.wo".to_string(), &mixer.wo));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.featurizer.iter_mut().enumerate() {
            out.push((format!("featurizer.l{}.weight", i + 1), &mut l.weight));
            out.push((format!("featurizer.l{}.bias", i + 1), &mut l.bias));
        }
        if let Some(scorer) = &mut self.attention_scorer {
            for (i, l) in scorer.iter_mut().enumerate() {
                out.push((format!("attention.l{}.weight", i + 1), &mut l.weight));
                out.push((format!("attention.l{}.bias", i + 1), &mut l.bias));
            }
        }
        for (i, l) in self.predictor.iter_mut().enumerate() {
            out.push((format!("predictor.l{}.weight", i + 1), &mut l.weight));
            out.push((format!("predictor.l{}.bias", i + 1), &mut l.bias));
        }
        if let Some(mixer) = &mut self.mixer {
            for (h, head) in mixer.heads.iter_mut().enumerate() {
                out.push((format!("mixer.h{h}.wq"), &mut head.wq));
                out.push((format!("mixer.h{h}.wk"), &mut head.wk));
                out.push((format!("mixer.h{h}.wv"), &mut head.wv));
            }
            out.push(("mixer.wo".to_string(), &mut mixer.wo));
        }
        out
    }

    fn check_instances(&self, instances: &Tensor) -> Result<()> {
        if instances.ndim() != 2 || instances.shape()[1] != self.config.input_dim {
            return Err(Error::dimension(
                "bag instances vs model input_dim",
                instances.shape(),
                &[self.config.input_dim],
            ));
        }
        if instances.shape()[0] < 1 {
            return Err(Error::Config("bag must contain at least one instance".into()));
        }
        Ok(())
    }

    /// Register every parameter on the tape, in `named_params` order.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect()
    }

    /// Record the full forward pass for a bag on `tape`.
    ///
    /// `fixed_alpha` bypasses the attention scorer and pins the attention
    /// weights to the given values (used by fixed-context credit
    /// assignment and locality tests).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        instances: &Tensor,
        fixed_alpha: Option<&[f64]>,
    ) -> Result<ForwardVars> {
        let params = self.register_params(tape);
        self.forward_with_vars(tape, &params, instances, fixed_alpha)
    }

    /// Record the forward pass against externally supplied parameter vars
    /// (in `named_params` order), so callers like the finite-difference
    /// harness can perturb parameters on their own tape.
    pub fn forward_with_vars(
        &self,
        tape: &mut Tape,
        param_vars: &[Var],
        instances: &Tensor,
        fixed_alpha: Option<&[f64]>,
    ) -> Result<ForwardVars> {
        self.check_instances(instances)?;
        let expected = self.named_params().len();
        if param_vars.len() != expected {
            return Err(Error::dimension(
                "parameter var count",
                &[param_vars.len()],
                &[expected],
            ));
        }
        let n = instances.shape()[0];

        let mut idx = 0usize;
        let mut next = || {
            let v = param_vars[idx];
            idx += 1;
            v
        };
        let (f1w, f1b, f2w, f2b) = (next(), next(), next(), next());
        let scorer_vars = self
            .attention_scorer
            .as_ref()
            .map(|_| (next(), next(), next(), next()));
        let (p1w, p1b, p2w, p2b) = (next(), next(), next(), next());
        let mixer_vars = self.mixer.as_ref().map(|m| {
            let heads: Vec<(Var, Var, Var)> =
                (0..m.heads.len()).map(|_| (next(), next(), next())).collect();
            (heads, next())
        });

        // Featurizer: applied row-wise, so instance i only touches row i.
        let x = tape.input(instances.clone());
        let h1 = tape.matmul(x, f1w)?;
        let h1b = tape.add_bias(h1, f1b)?;
        let h1a = tape.relu(h1b);
        let h2 = tape.matmul(h1a, f2w)?;
        let mut feats = tape.add_bias(h2, f2b)?;

        if let Some((heads, wo)) = &mixer_vars {
            feats = self.mix_on_tape(tape, feats, heads, *wo)?;
        }

        let alpha = match fixed_alpha {
            Some(values) => {
                if values.len() != n {
                    return Err(Error::dimension("fixed alpha", &[values.len()], &[n]));
                }
                tape.input(Tensor::vector(values.to_vec()))
            }
            None => match self.config.pooling {
                Pooling::Mean => tape.input(Tensor::vector(vec![1.0 / n as f64; n])),
                Pooling::Attention | Pooling::SelfAttention => {
                    let (m1w, m1b, m2w, m2b) =
                        scorer_vars.expect("scorer present for attention pooling");
                    let s1 = tape.matmul(feats, m1w)?;
                    let s1b = tape.add_bias(s1, m1b)?;
                    let s1t = tape.tanh(s1b);
                    let s2 = tape.matmul(s1t, m2w)?;
                    let scores = tape.add_bias(s2, m2b)?; // N×1
                    let sm = tape.softmax_rows(scores)?;
                    tape.reshape(sm, vec![n])?
                }
            },
        };

        // Attended per-instance representations m_i = α_i · f(x_i).
        let attended = tape.scale_rows(feats, alpha)?;

        let (logits, contributions) = match self.config.composition {
            Composition::Joint => {
                let pooled = tape.sum_axis(attended, 0)?;
                let pooled_row = tape.reshape(pooled, vec![1, self.config.feature_dim])?;
                let q1 = tape.matmul(pooled_row, p1w)?;
                let q1b = tape.add_bias(q1, p1b)?;
                let q1a = tape.relu(q1b);
                let q2 = tape.matmul(q1a, p2w)?;
                let out = tape.add_bias(q2, p2b)?;
                let logits = tape.reshape(out, vec![self.config.num_classes])?;
                (logits, None)
            }
            Composition::Additive => {
                // Same predictor weights, applied to every row of `attended`.
                let q1 = tape.matmul(attended, p1w)?;
                let q1b = tape.add_bias(q1, p1b)?;
                let q1a = tape.relu(q1b);
                let q2 = tape.matmul(q1a, p2w)?;
                let per_instance = tape.add_bias(q2, p2b)?; // N×C
                let logits = tape.sum_axis(per_instance, 0)?;
                (logits, Some(per_instance))
            }
        };

        Ok(ForwardVars {
            logits,
            attention: alpha,
            contributions,
            params: param_vars.to_vec(),
        })
    }

    fn mix_on_tape(
        &self,
        tape: &mut Tape,
        feats: Var,
        heads: &[(Var, Var, Var)],
        wo: Var,
    ) -> Result<Var> {
        let head_dim = self.config.feature_dim / self.config.self_attention_heads;
        let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(heads.len());
        for &(wq, wk, wv) in heads {
            let q = tape.matmul(feats, wq)?;
            let k = tape.matmul(feats, wk)?;
            let v = tape.matmul(feats, wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.scale(scores, inv_sqrt);
            let attn = tape.softmax_rows(scaled)?;
            head_outputs.push(tape.matmul(attn, v)?);
        }
        let merged = if head_outputs.len() == 1 {
            head_outputs[0]
        } else {
            tape.concat_cols(&head_outputs)?
        };
        let projected = tape.matmul(merged, wo)?;
        tape.add(feats, projected)
    }

    /// Value-only forward pass.
    pub fn forward(&self, instances: &Tensor) -> Result<BagOutput> {
        self.forward_values(instances, None)
    }

    /// Value-only forward pass with attention weights pinned to `alpha`.
    pub fn forward_with_alpha(&self, instances: &Tensor, alpha: &[f64]) -> Result<BagOutput> {
        self.forward_values(instances, Some(alpha))
    }

    fn forward_values(&self, instances: &Tensor, alpha: Option<&[f64]>) -> Result<BagOutput> {
        let mut tape = Tape::new();
        let vars = self.forward_on_tape(&mut tape, instances, alpha)?;
        Ok(BagOutput {
            logits: tape.value(vars.logits).clone(),
            attention: tape.value(vars.attention).data().to_vec(),
            contributions: vars.contributions.map(|c| tape.value(c).clone()),
        })
    }

    /// Per-instance feature matrix f(x) without pooling or prediction.
    pub fn featurize(&self, instances: &Tensor) -> Result<Tensor> {
        self.check_instances(instances)?;
        let mut tape = Tape::new();
        let x = tape.input(instances.clone());
        let f1w = tape.input(self.featurizer[0].weight.clone());
        let f1b = tape.input(self.featurizer[0].bias.clone());
        let f2w = tape.input(self.featurizer[1].weight.clone());
        let f2b = tape.input(self.featurizer[1].bias.clone());
        let h1 = tape.matmul(x, f1w)?;
        let h1b = tape.add_bias(h1, f1b)?;
        let h1a = tape.relu(h1b);
        let h2 = tape.matmul(h1a, f2w)?;
        let feats = tape.add_bias(h2, f2b)?;
        Ok(tape.value(feats).clone())
    }

    /// Attention weights over instances of a featurized bag.
    /// Errors under mean pooling, which has no attention module.
    pub fn attention_weights(&self, features: &Tensor) -> Result<Vec<f64>> {
        let scorer = self.attention_scorer.as_ref().ok_or(Error::UnsupportedVariant {
            pooling: self.config.pooling.name().to_string(),
        })?;
        if features.ndim() != 2 || features.shape()[1] != self.config.feature_dim {
            return Err(Error::dimension(
                "features vs model feature_dim",
                features.shape(),
                &[self.config.feature_dim],
            ));
        }
        let n = features.shape()[0];
        let mut tape = Tape::new();
        let x = tape.input(features.clone());
        let m1w = tape.input(scorer[0].weight.clone());
        let m1b = tape.input(scorer[0].bias.clone());
        let m2w = tape.input(scorer[1].weight.clone());
        let m2b = tape.input(scorer[1].bias.clone());
        let s1 = tape.matmul(x, m1w)?;
        let s1b = tape.add_bias(s1, m1b)?;
        let s1t = tape.tanh(s1b);
        let s2 = tape.matmul(s1t, m2w)?;
        let scores = tape.add_bias(s2, m2b)?;
        let sm = tape.softmax_rows(scores)?;
        let out = tape.reshape(sm, vec![n])?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Per-instance attended representations and their pooled sum.
    pub fn pool(&self, features: &Tensor, alpha: &[f64]) -> Result<(Tensor, Tensor)> {
        if features.ndim() != 2 || alpha.len() != features.shape()[0] {
            return Err(Error::dimension(
                "pool alpha vs features",
                &[alpha.len()],
                features.shape(),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.input(features.clone());
        let a = tape.input(Tensor::vector(alpha.to_vec()));
        let attended = tape.scale_rows(x, a)?;
        let pooled = tape.sum_axis(attended, 0)?;
        Ok((tape.value(attended).clone(), tape.value(pooled).clone()))
    }

    /// Apply the self-attention mixer to a featurized bag.
    pub fn self_attention_mix(&self, features: &Tensor) -> Result<Tensor> {
        let mixer = self.mixer.as_ref().ok_or(Error::UnsupportedVariant {
            pooling: self.config.pooling.name().to_string(),
        })?;
        let mut tape = Tape::new();
        let x = tape.input(features.clone());
        let heads: Vec<(Var, Var, Var)> = mixer
            .heads
            .iter()
            .map(|h| {
                (
                    tape.input(h.wq.clone()),
                    tape.input(h.wk.clone()),
                    tape.input(h.wv.clone()),
                )
            })
            .collect();
        let wo = tape.input(mixer.wo.clone());
        let out = self.mix_on_tape(&mut tape, x, &heads, wo)?;
        Ok(tape.value(out).clone())
    }
}
