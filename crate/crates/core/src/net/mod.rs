//! Encoder/decoder transformer over channel tokens.
//!
//! Each input channel's whole window (calendar marks included) becomes one
//! token of width `d_model`. The encoder reads past entrance counts, the
//! decoder reads reservation snapshots for the forecast days and optionally
//! cross-attends to the encoder. A learned linear map turns decoder tokens
//! back into time steps before the output head.

mod gradcheck;
mod params;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Init, ParamStore, TensorSpec};

use crate::autodiff::{Tape, Var};
use crate::dataset::{ForecastInput, Standardizer, WindowSpec};
use crate::error::{Error, Result};
use crate::fusion::{self, Decomposition, FusionVars, MlpVars, DEFAULT_KERNEL_SIZE};
use crate::scalar::Scalar;
use crate::tensor::Mat;
use crate::timegrid::MARK_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub kernel_size: usize,
    pub use_encoder: bool,
    pub use_inverse_embedding: bool,
    pub use_adaptive_fusion: bool,
    pub spec: WindowSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 16,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            ffn_dim: 64,
            dropout: 0.1,
            kernel_size: DEFAULT_KERNEL_SIZE,
            use_encoder: true,
            use_inverse_embedding: true,
            use_adaptive_fusion: true,
            spec: WindowSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.ffn_dim == 0 || self.n_dec_layers == 0 || (self.use_encoder && self.n_enc_layers == 0) {
            return bad("ffn_dim and layer counts must be positive".into());
        }
        Ok(())
    }

    pub fn c_out(&self) -> usize {
        self.spec.out_channels
    }

    pub fn c_res(&self) -> usize {
        self.spec.res_channels()
    }

    /// Value channels on each side.
    pub fn channels(&self, side: Side) -> usize {
        match side {
            Side::Encoder => self.spec.real_channels(),
            Side::Decoder => self.spec.res_channels(),
        }
    }

    /// Time steps on each side.
    pub fn steps(&self, side: Side) -> usize {
        match side {
            Side::Encoder => self.spec.enc_len(),
            Side::Decoder => self.spec.dec_len(),
        }
    }

    /// Tokens produced by the embedding.
    pub fn num_tokens(&self, side: Side) -> usize {
        if self.use_inverse_embedding {
            self.channels(side) + MARK_DIM
        } else {
            self.steps(side)
        }
    }

    /// Names, shapes and initializers of every parameter this configuration uses.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let d = self.d_model;
        let mut out = Vec::new();
        fn linear(out: &mut Vec<TensorSpec>, prefix: &str, fan_in: usize, width: usize, bias: bool) {
            out.push(TensorSpec {
                name: format!("{prefix}.w"),
                shape: (fan_in, width),
                init: Init::Uniform { fan_in },
            });
            if bias {
                out.push(TensorSpec {
                    name: format!("{prefix}.b"),
                    shape: (1, width),
                    init: Init::Uniform { fan_in },
                });
            }
        }
        fn norm(out: &mut Vec<TensorSpec>, prefix: &str, d: usize) {
            out.push(TensorSpec {
                name: format!("{prefix}.g"),
                shape: (1, d),
                init: Init::Ones,
            });
            out.push(TensorSpec {
                name: format!("{prefix}.b"),
                shape: (1, d),
                init: Init::Zeros,
            });
        }
        fn attention(out: &mut Vec<TensorSpec>, prefix: &str, d: usize) {
            linear(out, &format!("{prefix}.q"), d, d, true);
            // Key bias only shifts every score in a row by the same amount.
            linear(out, &format!("{prefix}.k"), d, d, false);
            linear(out, &format!("{prefix}.v"), d, d, true);
            linear(out, &format!("{prefix}.o"), d, d, true);
        }
        let embed_in = |side| {
            if self.use_inverse_embedding {
                self.steps(side)
            } else {
                self.channels(side) + MARK_DIM
            }
        };

        if self.use_encoder {
            linear(&mut out, "enc.embed", embed_in(Side::Encoder), d, true);
            for i in 0..self.n_enc_layers {
                norm(&mut out, &format!("enc.{i}.ln_attn"), d);
                attention(&mut out, &format!("enc.{i}.attn"), d);
                norm(&mut out, &format!("enc.{i}.ln_ffn"), d);
                linear(&mut out, &format!("enc.{i}.ffn.in"), d, self.ffn_dim, true);
                linear(&mut out, &format!("enc.{i}.ffn.out"), self.ffn_dim, d, true);
            }
            norm(&mut out, "enc.norm", d);
        }
        linear(&mut out, "dec.embed", embed_in(Side::Decoder), d, true);
        for i in 0..self.n_dec_layers {
            norm(&mut out, &format!("dec.{i}.ln_self"), d);
            attention(&mut out, &format!("dec.{i}.self_attn"), d);
            if self.use_encoder {
                norm(&mut out, &format!("dec.{i}.ln_cross"), d);
                attention(&mut out, &format!("dec.{i}.cross_attn"), d);
            }
            norm(&mut out, &format!("dec.{i}.ln_ffn"), d);
            linear(&mut out, &format!("dec.{i}.ffn.in"), d, self.ffn_dim, true);
            linear(&mut out, &format!("dec.{i}.ffn.out"), self.ffn_dim, d, true);
        }
        norm(&mut out, "dec.norm", d);
        if self.use_inverse_embedding {
            linear(&mut out, "bridge", self.num_tokens(Side::Decoder), self.steps(Side::Decoder), true);
        }
        let c_out = self.c_out();
        if self.use_adaptive_fusion {
            for branch in ["b", "r"] {
                linear(&mut out, &format!("fusion.{branch}.hidden"), d, d, true);
                linear(&mut out, &format!("fusion.{branch}.out"), d, c_out, true);
            }
            linear(&mut out, "fusion.res", self.c_res(), c_out, false);
            out.push(TensorSpec {
                name: "fusion.kernel_logits".into(),
                shape: (1, self.kernel_size),
                init: Init::Zeros,
            });
        } else {
            linear(&mut out, "head", d, c_out, true);
        }
        out
    }
}

/// Token matrix, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBlock<T> {
    pub tokens: Mat<T>,
}

impl<T: Scalar> TokenBlock<T> {
    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }
}

/// Network inputs for one sample. `x_enc` and `x_dec` are standardized,
/// `x_dec_raw` carries the same reservation features in counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub x_enc: Mat<T>,
    pub x_enc_mark: Mat<T>,
    pub x_dec: Mat<T>,
    pub x_dec_mark: Mat<T>,
    pub x_dec_raw: Mat<T>,
}

impl ModelInput<f64> {
    pub fn prepare(input: &ForecastInput, standardizer: &Standardizer) -> Result<Self> {
        let z = standardizer.apply(input)?;
        Ok(ModelInput {
            x_enc: z.x_enc,
            x_enc_mark: z.x_enc_mark,
            x_dec: z.x_dec,
            x_dec_mark: z.x_dec_mark,
            x_dec_raw: input.x_dec.clone(),
        })
    }
}

impl<T: Scalar> ModelInput<T> {
    pub fn cast<U: Scalar>(&self) -> ModelInput<U> {
        ModelInput {
            x_enc: self.x_enc.cast(),
            x_enc_mark: self.x_enc_mark.cast(),
            x_dec: self.x_dec.cast(),
            x_dec_mark: self.x_dec_mark.cast(),
            x_dec_raw: self.x_dec_raw.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap<T> {
    /// Block and head, e.g. `dec.0.cross_attn/h1`.
    pub label: String,
    pub weights: Mat<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forecast<T> {
    /// `L_dec x C_out` predicted counts.
    pub yhat: Mat<T>,
    /// Present when the adaptive fusion head is active.
    pub parts: Option<Decomposition<T>>,
    pub attention: Vec<AttentionMap<T>>,
}

/// Records one forward pass, binding parameters to tape leaves on first use.
struct Graph<'a, T> {
    tape: Tape<T>,
    cfg: &'a ModelConfig,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    rng: Option<&'a mut ChaCha8Rng>,
    attention: Vec<(String, Var)>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    fn new(cfg: &'a ModelConfig, params: &'a ParamStore<T>, rng: Option<&'a mut ChaCha8Rng>) -> Self {
        Graph {
            tape: Tape::new(),
            cfg,
            params,
            bound: vec![None; params.len()],
            rng,
            attention: Vec::new(),
        }
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        let i = self
            .params
            .position(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        if let Some(v) = self.bound[i] {
            return Ok(v);
        }
        let v = self.tape.leaf(self.params.tensors()[i].clone());
        self.bound[i] = Some(v);
        Ok(v)
    }

    fn constant(&mut self, m: &Mat<T>) -> Var {
        self.tape.leaf(m.clone())
    }

    fn dropout(&mut self, x: Var) -> Var {
        let p = self.cfg.dropout;
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if p == 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask = (0..self.tape.value(x).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.tape.mask(x, mask)
    }

    fn linear(&mut self, x: Var, prefix: &str, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let y = self.tape.matmul(x, w);
        if !bias {
            return Ok(y);
        }
        let b = self.param(&format!("{prefix}.b"))?;
        Ok(self.tape.add_row(y, b))
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.param(&format!("{prefix}.g"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let n = self.tape.layer_norm(x);
        let n = self.tape.mul_row(n, g);
        Ok(self.tape.add_row(n, b))
    }

    fn attention(&mut self, q_src: Var, kv_src: Var, prefix: &str) -> Result<Var> {
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_model / heads;
        let q = self.linear(q_src, &format!("{prefix}.q"), true)?;
        let k = self.linear(kv_src, &format!("{prefix}.k"), false)?;
        let v = self.linear(kv_src, &format!("{prefix}.v"), true)?;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let s = self.tape.matmul_t(qh, kh);
            let s = self.tape.scale(s, scale);
            let a = self.tape.softmax_rows(s);
            self.attention.push((format!("{prefix}/h{h}"), a));
            outs.push(self.tape.matmul(a, vh));
        }
        let cat = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs) };
        self.linear(cat, &format!("{prefix}.o"), true)
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(x, &format!("{prefix}.in"), true)?;
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{prefix}.out"), true)
    }

    fn residual(&mut self, x: Var, branch: Var) -> Var {
        let b = self.dropout(branch);
        self.tape.add(x, b)
    }

    fn check_finite(&self, v: Var, stage: &str) -> Result<()> {
        if self.tape.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite activations after {stage}")))
        }
    }

    fn embed(&mut self, values: &Mat<T>, marks: &Mat<T>, side: Side) -> Result<Var> {
        let cfg = self.cfg;
        let (steps, chans) = (cfg.steps(side), cfg.channels(side));
        if values.shape() != (steps, chans) || marks.shape() != (steps, MARK_DIM) {
            return Err(Error::Shape(format!(
                "{side:?} input {:?} with marks {:?}, expected ({steps}, {chans}) and ({steps}, {MARK_DIM})",
                values.shape(),
                marks.shape()
            )));
        }
        let z = Mat::concat_cols(&[values, marks]);
        let z = self.constant(&if cfg.use_inverse_embedding { z.transpose() } else { z });
        let prefix = match side {
            Side::Encoder => "enc.embed",
            Side::Decoder => "dec.embed",
        };
        let h = self.linear(z, prefix, true)?;
        Ok(self.dropout(h))
    }

    fn check_tokens(&self, x: &Mat<T>) -> Result<()> {
        if x.cols() != self.cfg.d_model || x.rows() == 0 {
            return Err(Error::Shape(format!("token block {:?} needs width {}", x.shape(), self.cfg.d_model)));
        }
        Ok(())
    }

    fn encoder(&mut self, mut x: Var) -> Result<Var> {
        for i in 0..self.cfg.n_enc_layers {
            let h = self.norm(x, &format!("enc.{i}.ln_attn"))?;
            let a = self.attention(h, h, &format!("enc.{i}.attn"))?;
            x = self.residual(x, a);
            let h = self.norm(x, &format!("enc.{i}.ln_ffn"))?;
            let f = self.ffn(h, &format!("enc.{i}.ffn"))?;
            x = self.residual(x, f);
        }
        let out = self.norm(x, "enc.norm")?;
        self.check_finite(out, "encoder")?;
        Ok(out)
    }

    fn decoder(&mut self, mut x: Var, memory: Option<Var>) -> Result<Var> {
        if memory.is_some() != self.cfg.use_encoder {
            return Err(Error::Config(format!(
                "decoder built with use_encoder={} but encoder output {}",
                self.cfg.use_encoder,
                if memory.is_some() { "given" } else { "absent" }
            )));
        }
        for i in 0..self.cfg.n_dec_layers {
            let h = self.norm(x, &format!("dec.{i}.ln_self"))?;
            let a = self.attention(h, h, &format!("dec.{i}.self_attn"))?;
            x = self.residual(x, a);
            if let Some(m) = memory {
                let h = self.norm(x, &format!("dec.{i}.ln_cross"))?;
                let a = self.attention(h, m, &format!("dec.{i}.cross_attn"))?;
                x = self.residual(x, a);
            }
            let h = self.norm(x, &format!("dec.{i}.ln_ffn"))?;
            let f = self.ffn(h, &format!("dec.{i}.ffn"))?;
            x = self.residual(x, f);
        }
        let out = self.norm(x, "dec.norm")?;
        self.check_finite(out, "decoder")?;
        Ok(out)
    }

    /// Channel tokens to `L_dec x d`. Time-step tokens pass through.
    fn to_time(&mut self, tokens: Var) -> Result<Var> {
        if !self.cfg.use_inverse_embedding {
            return Ok(tokens);
        }
        let n = self.cfg.num_tokens(Side::Decoder);
        if self.tape.value(tokens).rows() != n {
            return Err(Error::Shape(format!(
                "{} decoder tokens, bridge expects {n}",
                self.tape.value(tokens).rows()
            )));
        }
        let t = self.tape.transpose(tokens);
        let y = self.linear(t, "bridge", true)?;
        Ok(self.tape.transpose(y))
    }

    fn mlp_vars(&mut self, prefix: &str) -> Result<MlpVars> {
        Ok(MlpVars {
            w1: self.param(&format!("{prefix}.hidden.w"))?,
            b1: self.param(&format!("{prefix}.hidden.b"))?,
            w2: self.param(&format!("{prefix}.out.w"))?,
            b2: self.param(&format!("{prefix}.out.b"))?,
        })
    }

    fn head(&mut self, o_dec: Var, x_dec_raw: &Mat<T>) -> Result<(Var, Option<fusion::FusionNodes>)> {
        let want = (self.cfg.steps(Side::Decoder), self.cfg.c_res());
        if x_dec_raw.shape() != want {
            return Err(Error::Shape(format!("raw reservations {:?}, expected {want:?}", x_dec_raw.shape())));
        }
        if !self.cfg.use_adaptive_fusion {
            let w = self.param("head.w")?;
            let b = self.param("head.b")?;
            return Ok((fusion::plain_head_graph(&mut self.tape, o_dec, w, b), None));
        }
        let vars = FusionVars {
            mlp_b: self.mlp_vars("fusion.b")?,
            mlp_r: self.mlp_vars("fusion.r")?,
            w_res: self.param("fusion.res.w")?,
            kernel_logits: self.param("fusion.kernel_logits")?,
        };
        let raw = self.constant(x_dec_raw);
        let nodes = fusion::fuse_graph(&mut self.tape, o_dec, raw, &vars);
        Ok((nodes.yhat, Some(nodes)))
    }

    fn forward(&mut self, input: &ModelInput<T>) -> Result<(Var, Option<fusion::FusionNodes>)> {
        let memory = if self.cfg.use_encoder {
            let h = self.embed(&input.x_enc, &input.x_enc_mark, Side::Encoder)?;
            Some(self.encoder(h)?)
        } else {
            None
        };
        let h = self.embed(&input.x_dec, &input.x_dec_mark, Side::Decoder)?;
        let tokens = self.decoder(h, memory)?;
        let o_dec = self.to_time(tokens)?;
        let (yhat, nodes) = self.head(o_dec, &input.x_dec_raw)?;
        self.check_finite(yhat, "output head")?;
        Ok((yhat, nodes))
    }

    /// Gradients of `loss` for every parameter; unused ones are zero.
    fn param_grads(&self, loss: Var) -> ParamStore<T> {
        let mut grads = self.tape.backward(loss);
        let mut out = self.params.zeros_like();
        for (slot, bound) in out.tensors_mut().iter_mut().zip(&self.bound) {
            if let Some(g) = bound.and_then(|v| grads.take(v)) {
                *slot = g;
            }
        }
        out
    }
}

/// Network configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config.layout(), seed)?;
        Ok(Model { config, params })
    }

    /// Accepts any parameter set containing every tensor the configuration
    /// needs with the right shape; extra tensors are ignored.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        for spec in config.layout() {
            match params.get(&spec.name) {
                Some(m) if m.shape() == spec.shape => {}
                Some(m) => {
                    return Err(Error::Config(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        spec.name,
                        m.shape(),
                        spec.shape
                    )))
                }
                None => return Err(Error::Config(format!("missing parameter {}", spec.name))),
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    fn graph<'a>(&'a self, rng: Option<&'a mut ChaCha8Rng>) -> Graph<'a, T> {
        Graph::new(&self.config, &self.params, rng)
    }

    /// Full forward pass. Dropout is active only when `rng` is given.
    pub fn forward(&self, input: &ModelInput<T>, rng: Option<&mut ChaCha8Rng>) -> Result<Forecast<T>> {
        let mut g = self.graph(rng);
        let (yhat, nodes) = g.forward(input)?;
        let value = |v: Var| g.tape.value(v).clone();
        Ok(Forecast {
            yhat: value(yhat),
            parts: nodes.map(|n| Decomposition {
                baseline: value(n.baseline),
                gate: value(n.gate),
                smoothed: value(n.smoothed),
            }),
            attention: g
                .attention
                .iter()
                .map(|(label, v)| AttentionMap {
                    label: label.clone(),
                    weights: value(*v),
                })
                .collect(),
        })
    }

    pub fn predict(&self, input: &ModelInput<T>) -> Result<Mat<T>> {
        Ok(self.forward(input, None)?.yhat)
    }

    fn check_target(&self, y: &Mat<T>) -> Result<()> {
        let want = (self.config.steps(Side::Decoder), self.config.c_out());
        if y.shape() != want {
            return Err(Error::Shape(format!("target {:?}, expected {want:?}", y.shape())));
        }
        Ok(())
    }

    /// Mean absolute error and its gradient for every parameter.
    pub fn loss_and_grad(
        &self,
        input: &ModelInput<T>,
        y: &Mat<T>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, ParamStore<T>)> {
        self.check_target(y)?;
        let mut g = self.graph(rng);
        let (yhat, _) = g.forward(input)?;
        let loss = g.tape.mae(yhat, y);
        let value = g.tape.value(loss).get(0, 0);
        let grads = g.param_grads(loss);
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
        Ok((value, grads))
    }

    pub fn loss(&self, input: &ModelInput<T>, y: &Mat<T>) -> Result<T> {
        self.check_target(y)?;
        let mut g = self.graph(None);
        let (yhat, _) = g.forward(input)?;
        let loss = g.tape.mae(yhat, y);
        Ok(g.tape.value(loss).get(0, 0))
    }

    pub fn temp_embed(
        &self,
        values: &Mat<T>,
        marks: &Mat<T>,
        side: Side,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TokenBlock<T>> {
        if side == Side::Encoder && !self.config.use_encoder {
            return Err(Error::Config("model has no encoder".into()));
        }
        let mut g = self.graph(rng);
        let h = g.embed(values, marks, side)?;
        Ok(TokenBlock {
            tokens: g.tape.value(h).clone(),
        })
    }

    pub fn encoder_forward(&self, h_enc: &TokenBlock<T>, rng: Option<&mut ChaCha8Rng>) -> Result<TokenBlock<T>> {
        if !self.config.use_encoder {
            return Err(Error::Config("model has no encoder".into()));
        }
        let mut g = self.graph(rng);
        g.check_tokens(&h_enc.tokens)?;
        let x = g.constant(&h_enc.tokens);
        let out = g.encoder(x)?;
        Ok(TokenBlock {
            tokens: g.tape.value(out).clone(),
        })
    }

    pub fn decoder_forward(
        &self,
        h_dec: &TokenBlock<T>,
        o_enc: Option<&TokenBlock<T>>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TokenBlock<T>> {
        let mut g = self.graph(rng);
        g.check_tokens(&h_dec.tokens)?;
        let x = g.constant(&h_dec.tokens);
        let memory = match o_enc {
            Some(e) => {
                g.check_tokens(&e.tokens)?;
                Some(g.constant(&e.tokens))
            }
            None => None,
        };
        let out = g.decoder(x, memory)?;
        Ok(TokenBlock {
            tokens: g.tape.value(out).clone(),
        })
    }

    pub fn tokens_to_time(&self, o_dec_tokens: &TokenBlock<T>) -> Result<Mat<T>> {
        let mut g = self.graph(None);
        g.check_tokens(&o_dec_tokens.tokens)?;
        let x = g.constant(&o_dec_tokens.tokens);
        let out = g.to_time(x)?;
        Ok(g.tape.value(out).clone())
    }
}

impl Model<f64> {
    /// Finite-difference check of [`Model::loss_and_grad`] on one sample.
    pub fn grad_check(
        &self,
        input: &ModelInput<f64>,
        y: &Mat<f64>,
        eps: f64,
        min_coords: usize,
        seed: u64,
    ) -> Result<GradCheckReport> {
        let (_, analytic) = self.loss_and_grad(input, y, None)?;
        let probe = |p: &ParamStore<f64>| -> Result<f64> {
            Model {
                config: self.config.clone(),
                params: p.clone(),
            }
            .loss(input, y)
        };
        grad_check(&self.params, &analytic, probe, eps, min_coords, seed)
    }
}
