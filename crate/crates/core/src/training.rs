//! MAE training with Adam, global-norm clipping and early stopping on a
//! chronological validation tail.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{chrono_split, ForecastInput, ForecastSample, Standardizer};
use crate::error::{Error, Result};
use crate::net::{Forecast, Model, ModelConfig, ModelInput, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            max_epochs: 200,
            patience: 10,
            val_fraction_of_train: 0.1,
            seed: 3407,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be nonnegative");
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch_size, patience and max_epochs must be at least 1");
        }
        if !(self.val_fraction_of_train > 0.0 && self.val_fraction_of_train < 1.0) {
            return bad("val_fraction_of_train must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be nonnegative");
        }
        Ok(())
    }
}

/// Mean absolute error over all entries.
pub fn mae_loss<T: Scalar>(yhat: &Mat<T>, y: &Mat<T>) -> Result<T> {
    if yhat.shape() != y.shape() || y.is_empty() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", yhat.shape(), y.shape())));
    }
    let s = yhat
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .fold(T::zero(), |a, (&p, &t)| a + (p - t).abs());
    Ok(s / T::from_usize_lossy(y.len()))
}

/// Bias-corrected Adam over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: ParamStore<T>,
    v: ParamStore<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn from_config(params: &ParamStore<T>, c: &TrainConfig) -> Self {
        Self::new(
            params,
            T::lit(c.learning_rate),
            T::lit(c.adam_beta1),
            T::lit(c.adam_beta2),
            T::lit(c.adam_eps),
        )
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        if grads.names() != params.names() || grads.names() != self.m.names() {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        let tensors = params.tensors_mut().iter_mut().zip(grads.tensors());
        let moments = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(moments) {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamStore<T>, max_norm: T) -> T {
    let norm = grads.global_norm();
    if max_norm > T::zero() && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.tensors_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Model variants of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoInv,
    DecOnly,
    NoAf,
    DecOnlyNoAf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoInv, Variant::DecOnly, Variant::NoAf, Variant::DecOnlyNoAf];

    /// Report label, e.g. `DecOnly w/o AF`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::NoInv => "w/o Inv",
            Variant::DecOnly => "DecOnly",
            Variant::NoAf => "w/o AF",
            Variant::DecOnlyNoAf => "DecOnly w/o AF",
        }
    }

    /// Command-line name, e.g. `dec-only-no-af`.
    pub fn flag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoInv => "no-inv",
            Variant::DecOnly => "dec-only",
            Variant::NoAf => "no-af",
            Variant::DecOnlyNoAf => "dec-only-no-af",
        }
    }

    /// `base` with this variant's flags set.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (enc, inv, af) = match self {
            Variant::Full => (true, true, true),
            Variant::NoInv => (true, false, true),
            Variant::DecOnly => (false, true, true),
            Variant::NoAf => (true, true, false),
            Variant::DecOnlyNoAf => (false, true, false),
        };
        ModelConfig {
            use_encoder: enc,
            use_inverse_embedding: inv,
            use_adaptive_fusion: af,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| t.eq_ignore_ascii_case(v.label()) || t.eq_ignore_ascii_case(v.flag()))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Default model configuration for the named variant.
pub fn make_variant(name: &str) -> Result<ModelConfig> {
    Ok(name.parse::<Variant>()?.apply(&ModelConfig::default()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub wall_time_secs: f64,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }
}

/// A trained network with the input statistics it was fit with.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model<f64>,
    pub standardizer: Standardizer,
    pub report: TrainReport,
}

impl Trained {
    pub fn forecast(&self, input: &ForecastInput) -> Result<Forecast<f64>> {
        self.model.forward(&ModelInput::prepare(input, &self.standardizer)?, None)
    }

    pub fn predict(&self, input: &ForecastInput) -> Result<Mat<f64>> {
        Ok(self.forecast(input)?.yhat)
    }
}

struct Prepared {
    input: ModelInput<f64>,
    y: Mat<f64>,
}

fn prepare(samples: &[ForecastSample], st: &Standardizer) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                input: ModelInput::prepare(&s.input, st)?,
                y: s.y.clone(),
            })
        })
        .collect()
}

fn mean_eval_loss(model: &Model<f64>, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        total += model.loss(&p.input, &p.y)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains on `samples` (the training split, in chronological order). The last
/// `val_fraction_of_train` of them, purged of target overlap, decide early stopping.
pub fn train(model_config: &ModelConfig, samples: &[ForecastSample], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    model_config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let split = chrono_split(samples.to_vec(), 1.0 - config.val_fraction_of_train)
        .map_err(|e| Error::Config(format!("cannot carve a validation tail from {} samples: {e}", samples.len())))?;
    let standardizer = Standardizer::fit(samples)?;
    let mut fit = prepare(&split.train, &standardizer)?;
    let val = prepare(&split.test, &standardizer)?;

    let start = Instant::now();
    let mut model = Model::<f64>::new(model_config.clone(), config.seed)?;
    let mut adam = Adam::from_config(model.params(), config);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(3);

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
        wall_time_secs: 0.0,
        n_train: fit.len(),
        n_val: val.len(),
    };
    let mut best: Option<(f64, ParamStore<f64>)> = None;

    for epoch in 1..=config.max_epochs {
        if config.shuffle {
            fit.shuffle(&mut order_rng);
        }
        let mut epoch_loss = 0.0;
        for (b, batch) in fit.chunks(config.batch_size).enumerate() {
            let mut grads = model.params().zeros_like();
            let mut batch_loss = 0.0;
            for p in batch {
                let (loss, g) = model
                    .loss_and_grad(&p.input, &p.y, Some(&mut dropout_rng))
                    .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
                batch_loss += loss;
                for (acc, gi) in grads.tensors_mut().iter_mut().zip(g.tensors()) {
                    acc.add_assign(gi);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: loss diverged")));
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            grads.tensors_mut().iter_mut().for_each(|g| *g = g.scale(inv));
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(model.params_mut(), &grads)?;
            if let Some(name) = model.params().first_non_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: parameter {name} became non-finite")));
            }
        }
        report.train_loss.push(epoch_loss / fit.len() as f64);
        let v = mean_eval_loss(&model, &val)?;
        report.val_loss.push(v);
        report.stopped_epoch = epoch;
        log::debug!("epoch {epoch}: train {:.4} val {v:.4}", epoch_loss / fit.len() as f64);
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, model.params().clone()));
            report.best_epoch = epoch;
        } else if epoch - report.best_epoch >= config.patience {
            break;
        }
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    let (_, params) = best.expect("at least one epoch");
    Ok(Trained {
        model: Model::from_parts(model_config.clone(), params)?,
        standardizer,
        report,
    })
}

/// Learning rates and patiences tried by [`train_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub patience: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rates: vec![1e-3, 3e-3, 1e-2],
            patience: vec![10, 50],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub trained: Trained,
    /// The winning configuration.
    pub config: TrainConfig,
    /// `(learning_rate, patience, best validation loss)` per trial, in search order.
    pub trials: Vec<(f64, usize, f64)>,
}

/// Trains one model per (learning rate, patience) pair and keeps the one
/// with the lowest validation loss; ties go to the earlier trial. Only the
/// validation tail of `samples` takes part in the choice.
pub fn train_search(
    model_config: &ModelConfig,
    samples: &[ForecastSample],
    base: &TrainConfig,
    space: &SearchSpace,
) -> Result<SearchResult> {
    let configs: Vec<TrainConfig> = space
        .learning_rates
        .iter()
        .flat_map(|&learning_rate| {
            space.patience.iter().map(move |&patience| TrainConfig {
                learning_rate,
                patience,
                ..base.clone()
            })
        })
        .collect();
    if configs.is_empty() {
        return Err(Error::Config("empty hyperparameter search space".into()));
    }
    let results: Vec<Result<Trained>> = configs.par_iter().map(|c| train(model_config, samples, c)).collect();
    let mut trials = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, Trained)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let trained = r?;
        let v = trained.report.best_val_loss();
        trials.push((configs[i].learning_rate, configs[i].patience, v));
        if best.as_ref().is_none_or(|(_, b)| v < b.report.best_val_loss()) {
            best = Some((i, trained));
        }
    }
    let (i, trained) = best.expect("nonempty search");
    log::info!(
        "search picked learning rate {} and patience {}",
        configs[i].learning_rate,
        configs[i].patience
    );
    Ok(SearchResult {
        trained,
        config: configs[i].clone(),
        trials,
    })
}
