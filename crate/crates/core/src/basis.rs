//! Two-view partitioned-latent autoencoder.
//!
//! An encoder maps the views to codes `(ẑ, ŝ1, ŝ2)`. The first decoder only
//! sees `(ẑ, ŝ1)` and reconstructs `v1`; the second only sees `(ẑ, ŝ2)` and
//! reconstructs `v2`. Because each decoder physically receives only its own
//! columns, the off-partition Jacobian blocks are exactly zero.
//!
//! The same module hosts the individual-invertibility baseline (two
//! per-view autoencoders whose shared codes are tied by a penalty).

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{blob_paths, read_f64_blob, read_json, write_f64_blob, write_json, IoError};
use crate::nn::{Adam, AdamConfig, Mlp, NnError, Trace, DEFAULT_SLOPE};
use crate::stats::{derive_seed, hstack, ColumnScaler};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid basis config: {0}")]
    Config(String),
    #[error("input shape: {0}")]
    Shape(String),
    #[error("training diverged at step {step}")]
    Divergence { step: usize },
    #[error("baseline not applicable: {0}")]
    NotApplicable(String),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// What the encoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInput {
    /// Both views concatenated (the standard two-view model).
    Joint,
    /// Only the second view; the codes are then a learned summary of `v2`
    /// that must explain `v1`.
    SecondOnly,
    /// `ẑ` and `ŝ2` are read from the second view and `ŝ1` from the first.
    /// The shared code can then only hold information that `v2` carries,
    /// which pins it down even when `ŝ2` has spare capacity.
    CrossView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub d_v1: usize,
    pub d_v2: usize,
    pub d_z: usize,
    pub d_s1: usize,
    pub d_s2: usize,
    /// Number of linear layers.
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    /// Hidden width as a multiple of the total data width `d_v1 + d_v2`.
    pub encoder_width: f64,
    pub decoder_width: f64,
    pub min_width: usize,
    pub max_width: Option<usize>,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Mini-batch size; `None` trains on the full data every step.
    pub batch: Option<usize>,
    pub slope: f64,
    /// Weights of the two per-view reconstruction errors.
    pub view_weights: (f64, f64),
    pub encoder_input: EncoderInput,
    /// Weight of the code-alignment penalty in the baseline.
    pub alignment_weight: f64,
    /// Losses are averaged over windows of this many steps for the history.
    pub log_every: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            d_v1: 1,
            d_v2: 1,
            d_z: 1,
            d_s1: 0,
            d_s2: 0,
            encoder_depth: 4,
            decoder_depth: 4,
            encoder_width: 30.0,
            decoder_width: 30.0,
            min_width: 16,
            max_width: None,
            steps: 20_000,
            lr: 1e-3,
            seed: 0,
            batch: Some(256),
            slope: DEFAULT_SLOPE,
            view_weights: (1.0, 1.0),
            encoder_input: EncoderInput::Joint,
            alignment_weight: 1.0,
            log_every: 100,
        }
    }
}

impl BasisConfig {
    pub fn with_dims(mut self, d_v1: usize, d_v2: usize, d_z: usize, d_s1: usize, d_s2: usize) -> Self {
        self.d_v1 = d_v1;
        self.d_v2 = d_v2;
        self.d_z = d_z;
        self.d_s1 = d_s1;
        self.d_s2 = d_s2;
        self
    }

    pub fn code_width(&self) -> usize {
        self.d_z + self.d_s1 + self.d_s2
    }

    fn hidden(&self, multiplier: f64) -> usize {
        let w = (multiplier * (self.d_v1 + self.d_v2) as f64).ceil() as usize;
        let w = w.max(self.min_width).max(1);
        self.max_width.map_or(w, |m| w.min(m.max(1)))
    }

    pub fn encoder_hidden(&self) -> usize {
        self.hidden(self.encoder_width)
    }

    pub fn decoder_hidden(&self) -> usize {
        self.hidden(self.decoder_width)
    }

    pub fn validate(&self) -> Result<(), BasisError> {
        let fail = |m: String| Err(BasisError::Config(m));
        if self.d_v1 == 0 {
            return fail("d_v1 must be positive".into());
        }
        if self.d_v2 == 0 {
            return fail("d_v2 must be positive".into());
        }
        if self.d_z == 0 {
            return fail("d_z must be positive".into());
        }
        if self.code_width() > self.d_v1 + self.d_v2 {
            return fail(format!(
                "code width {} exceeds data width {}",
                self.code_width(),
                self.d_v1 + self.d_v2
            ));
        }
        if self.steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return fail("network depth must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch == Some(0) {
            return fail("batch size must be positive".into());
        }
        let (w1, w2) = self.view_weights;
        if !(w1 >= 0.0 && w2 >= 0.0 && w1 + w2 > 0.0) {
            return fail("view weights must be non-negative and not both zero".into());
        }
        Ok(())
    }

    fn dims(&self, input: usize, output: usize, depth: usize, hidden: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(hidden, depth - 1));
        d.push(output);
        d
    }
}

/// Encoder networks and the input each one reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Joint { net: Mlp },
    SecondOnly { net: Mlp },
    /// Baseline: one encoder per view, each producing `(ẑ, ŝ)`.
    PerView { first: Mlp, second: Mlp },
    /// `first` maps `v1` to `ŝ1`; `second` maps `v2` to `(ẑ, ŝ2)`.
    Cross { first: Mlp, second: Mlp },
}

/// A trained two-view model.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFit {
    pub config: BasisConfig,
    pub encoder: Encoder,
    pub g1: Mlp,
    pub g2: Mlp,
    pub scale1: ColumnScaler,
    pub scale2: ColumnScaler,
    /// Reconstruction loss on the full training data after the last step.
    pub final_loss: f64,
    /// Mean training loss over consecutive windows of `log_every` steps.
    pub loss_history: Vec<f64>,
    /// `ẑ` on the training inputs.
    pub z_samples: Array2<f64>,
}

fn check_views(v1: &ArrayView2<f64>, v2: &ArrayView2<f64>, cfg: &BasisConfig) -> Result<(), BasisError> {
    if v1.nrows() != v2.nrows() {
        return Err(BasisError::Shape(format!(
            "views have {} and {} rows",
            v1.nrows(),
            v2.nrows()
        )));
    }
    if v1.nrows() < 2 {
        return Err(BasisError::Shape("need at least 2 samples".into()));
    }
    if v1.ncols() != cfg.d_v1 || v2.ncols() != cfg.d_v2 {
        return Err(BasisError::Shape(format!(
            "views are {}- and {}-dimensional, config expects {} and {}",
            v1.ncols(),
            v2.ncols(),
            cfg.d_v1,
            cfg.d_v2
        )));
    }
    if v1.iter().chain(v2.iter()).any(|v| !v.is_finite()) {
        return Err(BasisError::Shape("non-finite input".into()));
    }
    Ok(())
}

/// Cycles through seeded per-epoch permutations of the rows.
struct Batches {
    order: Vec<usize>,
    at: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, size: Option<usize>, seed: u64) -> Self {
        let mut b = Batches {
            order: (0..n).collect(),
            at: n,
            size: size.unwrap_or(n).min(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if b.size == n {
            b.at = 0;
        }
        b
    }

    fn next(&mut self) -> Option<&[usize]> {
        if self.size == self.order.len() {
            // Full batch: no shuffling needed, rows in natural order.
            return None;
        }
        if self.at + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.at = 0;
        }
        let out = &self.order[self.at..self.at + self.size];
        self.at += self.size;
        Some(out)
    }
}

fn rows(x: &Array2<f64>, idx: Option<&[usize]>) -> Array2<f64> {
    match idx {
        Some(i) => x.select(Axis(0), i),
        None => x.clone(),
    }
}

fn mse(resid: &Array2<f64>) -> f64 {
    resid.iter().map(|r| r * r).sum::<f64>() / resid.len().max(1) as f64
}

/// Loss-window bookkeeping shared by both trainers.
struct History {
    every: usize,
    acc: f64,
    count: usize,
    windows: Vec<f64>,
}

impl History {
    fn new(every: usize) -> Self {
        History {
            every: every.max(1),
            acc: 0.0,
            count: 0,
            windows: Vec::new(),
        }
    }

    fn push(&mut self, loss: f64) {
        self.acc += loss;
        self.count += 1;
        if self.count == self.every {
            self.windows.push(self.acc / self.count as f64);
            self.acc = 0.0;
            self.count = 0;
        }
    }
}

struct Decoded {
    loss: f64,
    grad_codes: Array2<f64>,
}

/// Forward + backward through both decoders for a batch of codes laid out as
/// `[ẑ | ŝ1 | ŝ2]`. Each decoder is paired with its optimizer and updated
/// in place.
fn decode_step(
    codes: &Array2<f64>,
    t1: &Array2<f64>,
    t2: &Array2<f64>,
    (g1, opt1): (&mut Mlp, &mut Adam),
    (g2, opt2): (&mut Mlp, &mut Adam),
    cfg: &BasisConfig,
    step: usize,
) -> Result<Decoded, BasisError> {
    let (dz, ds1) = (cfg.d_z, cfg.d_s1);
    let b = codes.nrows();
    let (w1, w2) = cfg.view_weights;
    let mut grad_codes = Array2::zeros(codes.raw_dim());
    let mut loss = 0.0;

    if w1 > 0.0 {
        let input = codes.slice(s![.., ..dz + ds1]);
        let trace = g1.forward_trace(input)?;
        let resid = trace.output() - t1;
        loss += w1 * mse(&resid);
        let grad_out = resid * (2.0 * w1 / (b * cfg.d_v1) as f64);
        let (grads, gin) = g1.backward(&trace, grad_out.view());
        opt1.step(g1, &grads).map_err(|_| BasisError::Divergence { step })?;
        grad_codes.slice_mut(s![.., ..dz + ds1]).assign(&gin);
    }
    if w2 > 0.0 {
        let input = hstack(
            b,
            &[codes.slice(s![.., ..dz]), codes.slice(s![.., dz + ds1..])],
        );
        let trace = g2.forward_trace(input.view())?;
        let resid = trace.output() - t2;
        loss += w2 * mse(&resid);
        let grad_out = resid * (2.0 * w2 / (b * cfg.d_v2) as f64);
        let (grads, gin) = g2.backward(&trace, grad_out.view());
        opt2.step(g2, &grads).map_err(|_| BasisError::Divergence { step })?;
        {
            let mut gz = grad_codes.slice_mut(s![.., ..dz]);
            gz += &gin.slice(s![.., ..dz]);
        }
        grad_codes
            .slice_mut(s![.., dz + ds1..])
            .assign(&gin.slice(s![.., dz..]));
    }
    if !loss.is_finite() {
        return Err(BasisError::Divergence { step });
    }
    Ok(Decoded { loss, grad_codes })
}

fn encoder_trace(net: &Mlp, x: &Array2<f64>) -> Result<Trace, BasisError> {
    Ok(net.forward_trace(x.view())?)
}

/// Trains the two-view model on `(v1, v2)`.
pub fn fit_basis(v1: ArrayView2<f64>, v2: ArrayView2<f64>, cfg: &BasisConfig) -> Result<BasisFit, BasisError> {
    cfg.validate()?;
    check_views(&v1, &v2, cfg)?;
    if cfg.encoder_input == EncoderInput::CrossView && cfg.d_s1 > 0 {
        return fit_cross_view(v1, v2, cfg);
    }
    let n = v1.nrows();
    let scale1 = ColumnScaler::fit(v1);
    let scale2 = ColumnScaler::fit(v2);
    let x1 = scale1.transform(v1);
    let x2 = scale2.transform(v2);
    let enc_in = match cfg.encoder_input {
        EncoderInput::Joint => hstack(n, &[x1.view(), x2.view()]),
        EncoderInput::SecondOnly | EncoderInput::CrossView => x2.clone(),
    };

    let eh = cfg.encoder_hidden();
    let dh = cfg.decoder_hidden();
    let mut enc = Mlp::init(
        &cfg.dims(enc_in.ncols(), cfg.code_width(), cfg.encoder_depth, eh),
        cfg.slope,
        derive_seed(cfg.seed, "encoder"),
    )?;
    let mut g1 = Mlp::init(
        &cfg.dims(cfg.d_z + cfg.d_s1, cfg.d_v1, cfg.decoder_depth, dh),
        cfg.slope,
        derive_seed(cfg.seed, "decoder1"),
    )?;
    let mut g2 = Mlp::init(
        &cfg.dims(cfg.d_z + cfg.d_s2, cfg.d_v2, cfg.decoder_depth, dh),
        cfg.slope,
        derive_seed(cfg.seed, "decoder2"),
    )?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let (mut o_enc, mut o1, mut o2) = (Adam::new(&enc, adam), Adam::new(&g1, adam), Adam::new(&g2, adam));
    let mut batches = Batches::new(n, cfg.batch, derive_seed(cfg.seed, "batches"));
    let mut history = History::new(cfg.log_every);

    for step in 1..=cfg.steps {
        let idx = batches.next().map(|s| s.to_vec());
        let xb = rows(&enc_in, idx.as_deref());
        let t1 = rows(&x1, idx.as_deref());
        let t2 = rows(&x2, idx.as_deref());
        let trace = encoder_trace(&enc, &xb)?;
        let dec = decode_step(trace.output(), &t1, &t2, (&mut g1, &mut o1), (&mut g2, &mut o2), cfg, step)?;
        let (grads, _) = enc.backward(&trace, dec.grad_codes.view());
        o_enc
            .step(&mut enc, &grads)
            .map_err(|_| BasisError::Divergence { step })?;
        history.push(dec.loss);
    }

    let encoder = match cfg.encoder_input {
        EncoderInput::Joint => Encoder::Joint { net: enc },
        EncoderInput::SecondOnly | EncoderInput::CrossView => Encoder::SecondOnly { net: enc },
    };
    let mut fit = BasisFit {
        config: cfg.clone(),
        encoder,
        g1,
        g2,
        scale1,
        scale2,
        final_loss: f64::NAN,
        loss_history: history.windows,
        z_samples: Array2::zeros((0, cfg.d_z)),
    };
    fit.final_loss = fit.reconstruction_loss(v1, v2)?;
    if !fit.final_loss.is_finite() {
        return Err(BasisError::Divergence { step: cfg.steps });
    }
    fit.z_samples = fit.latent(v1, v2)?;
    Ok(fit)
}

fn fit_cross_view(v1: ArrayView2<f64>, v2: ArrayView2<f64>, cfg: &BasisConfig) -> Result<BasisFit, BasisError> {
    let n = v1.nrows();
    let scale1 = ColumnScaler::fit(v1);
    let scale2 = ColumnScaler::fit(v2);
    let x1 = scale1.transform(v1);
    let x2 = scale2.transform(v2);
    let (dz, ds1, ds2) = (cfg.d_z, cfg.d_s1, cfg.d_s2);
    let eh = cfg.encoder_hidden();
    let dh = cfg.decoder_hidden();
    let init = |inp, out, depth, hidden, label: &str| {
        Mlp::init(&cfg.dims(inp, out, depth, hidden), cfg.slope, derive_seed(cfg.seed, label))
    };
    let mut e1 = init(cfg.d_v1, ds1, cfg.encoder_depth, eh, "encoder1")?;
    let mut e2 = init(cfg.d_v2, dz + ds2, cfg.encoder_depth, eh, "encoder2")?;
    let mut g1 = init(dz + ds1, cfg.d_v1, cfg.decoder_depth, dh, "decoder1")?;
    let mut g2 = init(dz + ds2, cfg.d_v2, cfg.decoder_depth, dh, "decoder2")?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let (mut oe1, mut oe2) = (Adam::new(&e1, adam), Adam::new(&e2, adam));
    let (mut o1, mut o2) = (Adam::new(&g1, adam), Adam::new(&g2, adam));
    let mut batches = Batches::new(n, cfg.batch, derive_seed(cfg.seed, "batches"));
    let mut history = History::new(cfg.log_every);

    for step in 1..=cfg.steps {
        let idx = batches.next().map(|s| s.to_vec());
        let b1 = rows(&x1, idx.as_deref());
        let b2 = rows(&x2, idx.as_deref());
        let b = b1.nrows();
        let tr1 = e1.forward_trace(b1.view())?;
        let tr2 = e2.forward_trace(b2.view())?;
        let (c1, c2) = (tr1.output(), tr2.output());
        let codes = hstack(b, &[c2.slice(s![.., ..dz]), c1.view(), c2.slice(s![.., dz..])]);
        let dec = decode_step(&codes, &b1, &b2, (&mut g1, &mut o1), (&mut g2, &mut o2), cfg, step)?;
        let g = &dec.grad_codes;
        let gc2 = hstack(b, &[g.slice(s![.., ..dz]), g.slice(s![.., dz + ds1..])]);
        let (ge1, _) = e1.backward(&tr1, g.slice(s![.., dz..dz + ds1]));
        let (ge2, _) = e2.backward(&tr2, gc2.view());
        oe1.step(&mut e1, &ge1).map_err(|_| BasisError::Divergence { step })?;
        oe2.step(&mut e2, &ge2).map_err(|_| BasisError::Divergence { step })?;
        history.push(dec.loss);
    }

    let mut fit = BasisFit {
        config: cfg.clone(),
        encoder: Encoder::Cross { first: e1, second: e2 },
        g1,
        g2,
        scale1,
        scale2,
        final_loss: f64::NAN,
        loss_history: history.windows,
        z_samples: Array2::zeros((0, dz)),
    };
    fit.final_loss = fit.reconstruction_loss(v1, v2)?;
    if !fit.final_loss.is_finite() {
        return Err(BasisError::Divergence { step: cfg.steps });
    }
    fit.z_samples = fit.latent(v1, v2)?;
    Ok(fit)
}

/// Individual-invertibility baseline: each view has its own autoencoder and
/// the shared code halves are pulled together by a squared penalty.
pub fn fit_individual_baseline(
    v1: ArrayView2<f64>,
    v2: ArrayView2<f64>,
    cfg: &BasisConfig,
) -> Result<BasisFit, BasisError> {
    if cfg.d_v1 != cfg.d_v2 || cfg.d_s1 != cfg.d_s2 {
        return Err(BasisError::NotApplicable(format!(
            "requires equal view widths and equal private dims, got views {}/{} and private dims {}/{}",
            cfg.d_v1, cfg.d_v2, cfg.d_s1, cfg.d_s2
        )));
    }
    cfg.validate()?;
    check_views(&v1, &v2, cfg)?;
    let n = v1.nrows();
    let scale1 = ColumnScaler::fit(v1);
    let scale2 = ColumnScaler::fit(v2);
    let x1 = scale1.transform(v1);
    let x2 = scale2.transform(v2);
    let (dz, ds) = (cfg.d_z, cfg.d_s1);
    let eh = cfg.encoder_hidden();
    let dh = cfg.decoder_hidden();
    let init = |inp, out, depth, hidden, label: &str| {
        Mlp::init(&cfg.dims(inp, out, depth, hidden), cfg.slope, derive_seed(cfg.seed, label))
    };
    let mut e1 = init(cfg.d_v1, dz + ds, cfg.encoder_depth, eh, "encoder1")?;
    let mut e2 = init(cfg.d_v2, dz + ds, cfg.encoder_depth, eh, "encoder2")?;
    let mut g1 = init(dz + ds, cfg.d_v1, cfg.decoder_depth, dh, "decoder1")?;
    let mut g2 = init(dz + ds, cfg.d_v2, cfg.decoder_depth, dh, "decoder2")?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opts = [
        Adam::new(&e1, adam),
        Adam::new(&e2, adam),
        Adam::new(&g1, adam),
        Adam::new(&g2, adam),
    ];
    let mut batches = Batches::new(n, cfg.batch, derive_seed(cfg.seed, "batches"));
    let mut history = History::new(cfg.log_every);
    let lambda = cfg.alignment_weight;
    let (w1, w2) = cfg.view_weights;

    for step in 1..=cfg.steps {
        let idx = batches.next().map(|s| s.to_vec());
        let b1 = rows(&x1, idx.as_deref());
        let b2 = rows(&x2, idx.as_deref());
        let b = b1.nrows();
        let tr1 = e1.forward_trace(b1.view())?;
        let tr2 = e2.forward_trace(b2.view())?;
        let c1 = tr1.output();
        let c2 = tr2.output();

        let mut loss = 0.0;
        let mut gc1 = Array2::zeros(c1.raw_dim());
        let mut gc2 = Array2::zeros(c2.raw_dim());
        for (view, (codes, target, dec, weight, gc, opt_i)) in [
            (c1, &b1, &mut g1, w1, &mut gc1, 2usize),
            (c2, &b2, &mut g2, w2, &mut gc2, 3usize),
        ]
        .into_iter()
        .enumerate()
        {
            if weight == 0.0 {
                continue;
            }
            let trace = dec.forward_trace(codes.view())?;
            let resid = trace.output() - target;
            loss += weight * mse(&resid);
            let width = if view == 0 { cfg.d_v1 } else { cfg.d_v2 };
            let grad_out = resid * (2.0 * weight / (b * width) as f64);
            let (grads, gin) = dec.backward(&trace, grad_out.view());
            opts[opt_i]
                .step(dec, &grads)
                .map_err(|_| BasisError::Divergence { step })?;
            gc.assign(&gin);
        }
        if lambda > 0.0 {
            let diff = &c1.slice(s![.., ..dz]) - &c2.slice(s![.., ..dz]);
            loss += lambda * mse(&diff);
            let g = diff * (2.0 * lambda / (b * dz) as f64);
            {
                let mut z1 = gc1.slice_mut(s![.., ..dz]);
                z1 += &g;
            }
            let mut z2 = gc2.slice_mut(s![.., ..dz]);
            z2 -= &g;
        }
        if !loss.is_finite() {
            return Err(BasisError::Divergence { step });
        }
        let (ge1, _) = e1.backward(&tr1, gc1.view());
        let (ge2, _) = e2.backward(&tr2, gc2.view());
        opts[0]
            .step(&mut e1, &ge1)
            .map_err(|_| BasisError::Divergence { step })?;
        opts[1]
            .step(&mut e2, &ge2)
            .map_err(|_| BasisError::Divergence { step })?;
        history.push(loss);
    }

    let mut fit = BasisFit {
        config: cfg.clone(),
        encoder: Encoder::PerView { first: e1, second: e2 },
        g1,
        g2,
        scale1,
        scale2,
        final_loss: f64::NAN,
        loss_history: history.windows,
        z_samples: Array2::zeros((0, dz)),
    };
    fit.final_loss = fit.reconstruction_loss(v1, v2)?;
    if !fit.final_loss.is_finite() {
        return Err(BasisError::Divergence { step: cfg.steps });
    }
    fit.z_samples = fit.latent(v1, v2)?;
    Ok(fit)
}

impl BasisFit {
    /// Full code matrix `[ẑ | ŝ1 | ŝ2]` for raw (unstandardised) views.
    pub fn codes(&self, v1: ArrayView2<f64>, v2: ArrayView2<f64>) -> Result<Array2<f64>, BasisError> {
        check_views(&v1, &v2, &self.config)?;
        let n = v1.nrows();
        let x1 = self.scale1.transform(v1);
        let x2 = self.scale2.transform(v2);
        Ok(match &self.encoder {
            Encoder::Joint { net } => net.forward(hstack(n, &[x1.view(), x2.view()]).view())?,
            Encoder::SecondOnly { net } => net.forward(x2.view())?,
            Encoder::PerView { first, second } => {
                let dz = self.config.d_z;
                let c1 = first.forward(x1.view())?;
                let c2 = second.forward(x2.view())?;
                let z = (&c1.slice(s![.., ..dz]) + &c2.slice(s![.., ..dz])) * 0.5;
                hstack(n, &[z.view(), c1.slice(s![.., dz..]), c2.slice(s![.., dz..])])
            }
            Encoder::Cross { first, second } => {
                let dz = self.config.d_z;
                let c1 = first.forward(x1.view())?;
                let c2 = second.forward(x2.view())?;
                hstack(n, &[c2.slice(s![.., ..dz]), c1.view(), c2.slice(s![.., dz..])])
            }
        })
    }

    fn latent(&self, v1: ArrayView2<f64>, v2: ArrayView2<f64>) -> Result<Array2<f64>, BasisError> {
        let codes = self.codes(v1, v2)?;
        Ok(codes.slice(s![.., ..self.config.d_z]).to_owned())
    }

    /// First view reconstructed from `(ẑ, ŝ1)`, in the original data scale.
    pub fn decode_first<'a>(&self, z: ArrayView2<'a, f64>, s1: ArrayView2<'a, f64>) -> Result<Array2<f64>, BasisError> {
        let input = hstack(z.nrows(), &[z, s1]);
        Ok(self.scale1.inverse(self.g1.forward(input.view())?.view()))
    }

    /// Second view reconstructed from `(ẑ, ŝ2)`, in the original data scale.
    pub fn decode_second<'a>(&self, z: ArrayView2<'a, f64>, s2: ArrayView2<'a, f64>) -> Result<Array2<f64>, BasisError> {
        let input = hstack(z.nrows(), &[z, s2]);
        Ok(self.scale2.inverse(self.g2.forward(input.view())?.view()))
    }

    /// Weighted per-view mean squared error in standardised units.
    pub fn reconstruction_loss(&self, v1: ArrayView2<f64>, v2: ArrayView2<f64>) -> Result<f64, BasisError> {
        let cfg = &self.config;
        let codes = self.codes(v1, v2)?;
        let (dz, ds1) = (cfg.d_z, cfg.d_s1);
        let (w1, w2) = cfg.view_weights;
        let mut loss = 0.0;
        if w1 > 0.0 {
            let out = self.g1.forward(codes.slice(s![.., ..dz + ds1]))?;
            loss += w1 * mse(&(out - self.scale1.transform(v1)));
        }
        if w2 > 0.0 {
            let input = hstack(codes.nrows(), &[codes.slice(s![.., ..dz]), codes.slice(s![.., dz + ds1..])]);
            let out = self.g2.forward(input.view())?;
            loss += w2 * mse(&(out - self.scale2.transform(v2)));
        }
        if let Encoder::PerView { first, second } = &self.encoder {
            if cfg.alignment_weight > 0.0 {
                let c1 = first.forward(self.scale1.transform(v1).view())?;
                let c2 = second.forward(self.scale2.transform(v2).view())?;
                let diff = &c1.slice(s![.., ..dz]) - &c2.slice(s![.., ..dz]);
                loss += cfg.alignment_weight * mse(&diff);
            }
        }
        Ok(loss)
    }

    /// Writes parameters to `<base>.f64` and metadata to `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<(), BasisError> {
        let nets = self.named_nets();
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (name, net) in nets {
            let flat = net.flatten();
            entries.push(NetEntry {
                name: name.to_string(),
                dims: net.dims(),
                slope: net.slope,
                offset: blob.len(),
                len: flat.len(),
            });
            blob.extend(flat);
        }
        let meta = Checkpoint {
            config: self.config.clone(),
            encoder_kind: match self.encoder {
                Encoder::Joint { .. } => "joint",
                Encoder::SecondOnly { .. } => "second_only",
                Encoder::PerView { .. } => "per_view",
                Encoder::Cross { .. } => "cross",
            }
            .to_string(),
            nets: entries,
            scale1: self.scale1.clone(),
            scale2: self.scale2.clone(),
            final_loss: self.final_loss,
            loss_history: self.loss_history.clone(),
        };
        let (blob_path, meta_path) = blob_paths(base);
        write_f64_blob(&blob_path, &blob)?;
        write_json(&meta_path, &meta)?;
        Ok(())
    }

    /// Loads a checkpoint. Stored latents are not part of the checkpoint;
    /// recompute them with [`extract_latent`].
    pub fn load(base: &Path) -> Result<BasisFit, BasisError> {
        let (blob_path, meta_path) = blob_paths(base);
        let meta: Checkpoint = read_json(&meta_path)?;
        let blob = read_f64_blob(&blob_path)?;
        let net = |name: &str| -> Result<Mlp, BasisError> {
            let e = meta
                .nets
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| BasisError::Config(format!("checkpoint lacks network {name}")))?;
            let values = blob
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| BasisError::Config(format!("checkpoint blob too short for {name}")))?;
            Ok(Mlp::unflatten(&e.dims, e.slope, values)?)
        };
        let encoder = match meta.encoder_kind.as_str() {
            "joint" => Encoder::Joint { net: net("encoder")? },
            "second_only" => Encoder::SecondOnly { net: net("encoder")? },
            "per_view" => Encoder::PerView {
                first: net("encoder1")?,
                second: net("encoder2")?,
            },
            "cross" => Encoder::Cross {
                first: net("encoder1")?,
                second: net("encoder2")?,
            },
            other => return Err(BasisError::Config(format!("unknown encoder kind {other}"))),
        };
        Ok(BasisFit {
            encoder,
            g1: net("decoder1")?,
            g2: net("decoder2")?,
            z_samples: Array2::zeros((0, meta.config.d_z)),
            config: meta.config,
            scale1: meta.scale1,
            scale2: meta.scale2,
            final_loss: meta.final_loss,
            loss_history: meta.loss_history,
        })
    }

    fn named_nets(&self) -> Vec<(&'static str, &Mlp)> {
        let mut nets = match &self.encoder {
            Encoder::Joint { net } | Encoder::SecondOnly { net } => vec![("encoder", net)],
            Encoder::PerView { first, second } | Encoder::Cross { first, second } => {
                vec![("encoder1", first), ("encoder2", second)]
            }
        };
        nets.push(("decoder1", &self.g1));
        nets.push(("decoder2", &self.g2));
        nets
    }
}

#[derive(Serialize, Deserialize)]
struct NetEntry {
    name: String,
    dims: Vec<usize>,
    slope: f64,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: BasisConfig,
    encoder_kind: String,
    nets: Vec<NetEntry>,
    scale1: ColumnScaler,
    scale2: ColumnScaler,
    final_loss: f64,
    loss_history: Vec<f64>,
}

/// `ẑ` for fresh inputs; a pure row-wise function of the fit.
pub fn extract_latent(fit: &BasisFit, v1: ArrayView2<f64>, v2: ArrayView2<f64>) -> Result<Array2<f64>, BasisError> {
    fit.latent(v1, v2)
}

/// Result of trying every shared-latent width from 1 to `d_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSweep {
    /// `(d_z, final reconstruction loss)` per candidate.
    pub losses: Vec<(usize, f64)>,
    pub chosen: usize,
}

/// Picks the smallest `d_z` whose loss is within `tolerance` (relative) of
/// the best candidate. Private widths are taken from `cfg` and shrunk when
/// the code would exceed the data width.
pub fn sweep_latent_dim(
    v1: ArrayView2<f64>,
    v2: ArrayView2<f64>,
    cfg: &BasisConfig,
    d_max: usize,
    tolerance: f64,
) -> Result<LatentSweep, BasisError> {
    if d_max == 0 {
        return Err(BasisError::Config("d_max must be positive".into()));
    }
    let total = cfg.d_v1 + cfg.d_v2;
    let candidates: Vec<BasisConfig> = (1..=d_max.min(total))
        .map(|d| {
            let mut c = cfg.clone();
            c.d_z = d;
            c.d_s1 = c.d_s1.min(total - d);
            c.d_s2 = c.d_s2.min(total - d - c.d_s1);
            c
        })
        .collect();
    let results = crate::par::map_indexed(candidates.len(), |i| {
        fit_basis(v1, v2, &candidates[i]).map(|f| (candidates[i].d_z, f.final_loss))
    });
    let losses = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = losses.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let chosen = losses
        .iter()
        .find(|(_, l)| *l <= best * (1.0 + tolerance) + 1e-12)
        .map(|(d, _)| *d)
        .expect("best candidate qualifies");
    Ok(LatentSweep { losses, chosen })
}
