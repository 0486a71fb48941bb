//! Probabilistic regression engine: variance-preserving noise schedule,
//! forward noising, noise-prediction loss, few-step deterministic (and
//! full-step ancestral) reverse sampling, closed-form oracle denoisers for
//! Gaussian and Gaussian-mixture data, a small trainable MLP denoiser with
//! hand-derived gradients, and the deterministic pixel-MSE regression
//! baseline.
//!
//! Index conventions: `t` is reserved for frame time everywhere in this
//! crate; `i` is the diffusion step. All diffusion math runs in f64 so the
//! analytic-recursion and finite-difference oracles can pin tight
//! tolerances; latents cross the boundary as f32.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::conditioning::{ConditioningPair, Latent, LATENT_CHANNELS};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};
use crate::tensor::{Tensor, TensorArchive};

/// Variance-preserving schedule: alpha_i^2 + sigma_i^2 = 1, alpha strictly
/// decreasing from ~1 (clean) toward ~0 (pure noise).
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub steps_train: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub inference_steps: usize,
}

pub const DEFAULT_STEPS_TRAIN: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_INFERENCE_STEPS: usize = 10;

/// Linear-beta schedule; alpha_i = sqrt(prod_{j<=i}(1-beta_j)).
pub fn make_schedule(
    steps_train: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiffusionSchedule> {
    if steps_train == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(0.0..1.0).contains(&beta_start) || !(0.0..1.0).contains(&beta_end) || beta_start > beta_end
    {
        return Err(Error::config(format!(
            "betas must satisfy 0 <= beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let n = steps_train;
    let betas: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let mut alphas = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut abar = 1.0f64;
    for &b in &betas {
        abar *= 1.0 - b;
        alphas.push(abar.sqrt());
        sigmas.push((1.0 - abar).sqrt());
    }
    Ok(DiffusionSchedule { steps_train, betas, alphas, sigmas, inference_steps: DEFAULT_INFERENCE_STEPS })
}

impl DiffusionSchedule {
    /// The 1000-step linear schedule used throughout.
    pub fn standard() -> DiffusionSchedule {
        make_schedule(DEFAULT_STEPS_TRAIN, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap()
    }

    pub fn with_inference_steps(mut self, t: usize) -> DiffusionSchedule {
        self.inference_steps = t;
        self
    }
}

/// Evenly spaced reverse-pass indices, high to low, endpoints inclusive.
pub fn ddim_indices(steps_train: usize, inference_steps: usize) -> Vec<usize> {
    let hi = (steps_train - 1) as f64;
    let t = inference_steps;
    (0..t)
        .map(|k| {
            if t == 1 {
                steps_train - 1
            } else {
                (hi - hi * k as f64 / (t - 1) as f64).round() as usize
            }
        })
        .collect()
}

/// Flattened f64 view of the two conditioning signals.
#[derive(Debug, Clone)]
pub struct CondVecs {
    pub context: Vec<f64>,
    pub live: Vec<f64>,
}

impl CondVecs {
    pub fn empty() -> CondVecs {
        CondVecs { context: Vec::new(), live: Vec::new() }
    }

    pub fn from_pair(pair: &ConditioningPair) -> CondVecs {
        CondVecs {
            context: pair.context.data.iter().map(|&v| v as f64).collect(),
            live: pair.live.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Maps (Z_i, conditioning, step) to a predicted-noise vector of Z's length.
pub trait Denoiser {
    fn predict_noise(
        &self,
        z: &[f64],
        cond: &CondVecs,
        i: usize,
        alpha: f64,
        sigma: f64,
    ) -> Vec<f64>;
}

/// Forward noising: alpha_i * z + sigma_i * eps.
pub fn add_noise(z: &Latent, eps: &Latent, i: usize, schedule: &DiffusionSchedule) -> Result<Latent> {
    if eps.data.len() != z.data.len() {
        return Err(Error::config(format!(
            "noise has {} elements, latent has {}",
            eps.data.len(),
            z.data.len()
        )));
    }
    if i >= schedule.steps_train {
        return Err(Error::config(format!(
            "step {i} out of range for a {}-step schedule",
            schedule.steps_train
        )));
    }
    let (a, s) = (schedule.alphas[i] as f32, schedule.sigmas[i] as f32);
    let mut out = z.clone();
    for (o, (&zv, &ev)) in out.data.iter_mut().zip(z.data.iter().zip(&eps.data)) {
        *o = a * zv + s * ev;
    }
    Ok(out)
}

/// Mean squared error between the true noise and the denoiser's prediction
/// on the noised latent.
pub fn training_loss(
    denoiser: &dyn Denoiser,
    z: &Latent,
    cond: &ConditioningPair,
    i: usize,
    eps: &Latent,
    schedule: &DiffusionSchedule,
) -> Result<f64> {
    let noised = add_noise(z, eps, i, schedule)?;
    let zvec: Vec<f64> = noised.data.iter().map(|&v| v as f64).collect();
    let cv = CondVecs::from_pair(cond);
    let pred = denoiser.predict_noise(&zvec, &cv, i, schedule.alphas[i], schedule.sigmas[i]);
    if pred.len() != eps.data.len() {
        return Err(Error::config(format!(
            "denoiser produced {} values for a {}-element latent",
            pred.len(),
            eps.data.len()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(&eps.data)
        .map(|(&p, &e)| (p - e as f64) * (p - e as f64))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Deterministic given the seed (eta = 0).
    Ddim,
    /// Ancestral steps with the full posterior variance (eta = 1); at
    /// inference_steps = steps_train this is exact ancestral DDPM.
    Ancestral,
}

/// Reverse pass over flattened state. Returns the final clean estimate.
pub fn sample_vec(
    denoiser: &dyn Denoiser,
    cond: &CondVecs,
    numel: usize,
    schedule: &DiffusionSchedule,
    seed: u64,
    kind: SamplerKind,
) -> Result<Vec<f64>> {
    Ok(sample_vec_traced(denoiser, cond, numel, schedule, seed, kind)?.0)
}

/// As `sample_vec`, additionally returning (step index, state after the move
/// toward that index) for every intermediate re-noised state — the hook the
/// analytic-recursion checks attach to.
pub fn sample_vec_traced(
    denoiser: &dyn Denoiser,
    cond: &CondVecs,
    numel: usize,
    schedule: &DiffusionSchedule,
    seed: u64,
    kind: SamplerKind,
) -> Result<(Vec<f64>, Vec<(usize, Vec<f64>)>)> {
    let t = schedule.inference_steps;
    if t == 0 || t > schedule.steps_train {
        return Err(Error::config(format!(
            "inference_steps {t} must be in 1..={}",
            schedule.steps_train
        )));
    }
    if numel == 0 {
        return Err(Error::config("cannot sample an empty latent"));
    }
    let idx = ddim_indices(schedule.steps_train, t);
    let mut rng = rng_from(seed);
    let mut z: Vec<f64> = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
    let mut trace = Vec::new();
    for k in 0..idx.len() {
        let i = idx[k];
        let (a_i, s_i) = (schedule.alphas[i], schedule.sigmas[i]);
        let eps = denoiser.predict_noise(&z, cond, i, a_i, s_i);
        debug_assert_eq!(eps.len(), numel);
        let z0: Vec<f64> = z.iter().zip(&eps).map(|(&zv, &ev)| (zv - s_i * ev) / a_i).collect();
        if k + 1 < idx.len() {
            let j = idx[k + 1];
            let (a_j, s_j) = (schedule.alphas[j], schedule.sigmas[j]);
            match kind {
                SamplerKind::Ddim => {
                    for d in 0..numel {
                        z[d] = a_j * z0[d] + s_j * eps[d];
                    }
                }
                SamplerKind::Ancestral => {
                    // posterior variance (eta = 1); direction scaled so the
                    // marginal stays variance-preserving
                    let var = ((s_j * s_j) / (s_i * s_i) * (1.0 - (a_i * a_i) / (a_j * a_j)))
                        .max(0.0);
                    let dir = (s_j * s_j - var).max(0.0).sqrt();
                    let sd = var.sqrt();
                    for d in 0..numel {
                        let xi: f64 = rng.sample(StandardNormal);
                        z[d] = a_j * z0[d] + dir * eps[d] + sd * xi;
                    }
                }
            }
            trace.push((j, z.clone()));
        } else {
            z = z0;
        }
    }
    Ok((z, trace))
}

/// Reverse pass producing a latent shaped like the conditioning's spatial
/// grid with the standard channel count.
pub fn sample(
    denoiser: &dyn Denoiser,
    cond: &ConditioningPair,
    schedule: &DiffusionSchedule,
    seed: u64,
    kind: SamplerKind,
) -> Result<Latent> {
    let (h, w) = (cond.context.height, cond.context.width);
    let numel = h * w * LATENT_CHANNELS;
    let cv = CondVecs::from_pair(cond);
    let out = sample_vec(denoiser, &cv, numel, schedule, seed, kind)?;
    let mut z = Latent::zeros(h, w, LATENT_CHANNELS);
    z.src_height = cond.context.src_height;
    z.src_width = cond.context.src_width;
    for (o, v) in z.data.iter_mut().zip(&out) {
        *o = *v as f32;
    }
    Ok(z)
}

// ---------------------------------------------------------------------------
// Oracle denoisers

/// Exact posterior noise estimate for elementwise-Gaussian data
/// Z ~ N(mu, diag(var)).
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianOracle {
    pub fn new(mu: Vec<f64>, var: Vec<f64>) -> Result<GaussianOracle> {
        if mu.len() != var.len() || mu.is_empty() {
            return Err(Error::config("oracle mu and var must be equal-length and nonempty"));
        }
        if var.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("oracle variance must be positive"));
        }
        Ok(GaussianOracle { mu, var })
    }

    pub fn scalar(mu: f64, var: f64, numel: usize) -> Result<GaussianOracle> {
        GaussianOracle::new(vec![mu; numel], vec![var; numel])
    }
}

impl Denoiser for GaussianOracle {
    fn predict_noise(&self, z: &[f64], _cond: &CondVecs, _i: usize, a: f64, s: f64) -> Vec<f64> {
        if s == 0.0 {
            return vec![0.0; z.len()];
        }
        z.iter()
            .zip(self.mu.iter().zip(&self.var))
            .map(|(&zv, (&m, &v))| {
                let post_mean = m + (a * v / (a * a * v + s * s)) * (zv - a * m);
                (zv - a * post_mean) / s
            })
            .collect()
    }
}

/// How an equal-dimensional Gaussian mixture picks its prior mode weights.
#[derive(Debug, Clone)]
pub enum MixtureWeights {
    Fixed(Vec<f64>),
    /// Two modes; weight of the second = mean of the context vector, clamped
    /// to [0.05, 0.95]. The hook for conditioning-sensitivity checks.
    FromContextMean,
}

/// Exact posterior noise estimate for K-mode mixture data
/// Z ~ sum_k w_k N(m_k, mode_var I), via responsibility weighting.
#[derive(Debug, Clone)]
pub struct MixtureOracle {
    pub modes: Vec<Vec<f64>>,
    pub mode_var: f64,
    pub weights: MixtureWeights,
}

impl MixtureOracle {
    pub fn new(modes: Vec<Vec<f64>>, mode_var: f64, weights: MixtureWeights) -> Result<MixtureOracle> {
        if modes.is_empty() || modes[0].is_empty() {
            return Err(Error::config("mixture needs at least one nonempty mode"));
        }
        let d = modes[0].len();
        if modes.iter().any(|m| m.len() != d) {
            return Err(Error::config("mixture modes must share a dimension"));
        }
        if mode_var <= 0.0 {
            return Err(Error::config("mode variance must be positive"));
        }
        match &weights {
            MixtureWeights::Fixed(w) => {
                if w.len() != modes.len() || w.iter().any(|&x| x <= 0.0) {
                    return Err(Error::config("fixed weights must be positive, one per mode"));
                }
            }
            MixtureWeights::FromContextMean => {
                if modes.len() != 2 {
                    return Err(Error::config("context-driven weights require exactly two modes"));
                }
            }
        }
        Ok(MixtureOracle { modes, mode_var, weights })
    }

    fn prior_weights(&self, cond: &CondVecs) -> Vec<f64> {
        match &self.weights {
            MixtureWeights::Fixed(w) => {
                let total: f64 = w.iter().sum();
                w.iter().map(|&x| x / total).collect()
            }
            MixtureWeights::FromContextMean => {
                let mean = if cond.context.is_empty() {
                    0.5
                } else {
                    cond.context.iter().sum::<f64>() / cond.context.len() as f64
                };
                let w1 = mean.clamp(0.05, 0.95);
                vec![1.0 - w1, w1]
            }
        }
    }
}

impl Denoiser for MixtureOracle {
    fn predict_noise(&self, z: &[f64], cond: &CondVecs, _i: usize, a: f64, s: f64) -> Vec<f64> {
        if s == 0.0 {
            return vec![0.0; z.len()];
        }
        let w = self.prior_weights(cond);
        let var_t = a * a * self.mode_var + s * s;
        // log responsibilities via log-sum-exp over modes
        let mut ll: Vec<f64> = self
            .modes
            .iter()
            .zip(&w)
            .map(|(m, &wk)| {
                let sq: f64 = z.iter().zip(m).map(|(&zv, &mv)| {
                    let d = zv - a * mv;
                    d * d
                }).sum();
                wk.ln() - 0.5 * sq / var_t
            })
            .collect();
        let peak = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in ll.iter_mut() {
            *v = (*v - peak).exp();
            total += *v;
        }
        let gain = a * self.mode_var / var_t;
        let mut eps = vec![0.0; z.len()];
        for (m, &r) in self.modes.iter().zip(&ll) {
            let rk = r / total;
            for d in 0..z.len() {
                let post_k = m[d] + gain * (z[d] - a * m[d]);
                eps[d] += rk * post_k;
            }
        }
        for d in 0..z.len() {
            eps[d] = (z[d] - a * eps[d]) / s;
        }
        eps
    }
}

// ---------------------------------------------------------------------------
// Trainable MLP denoiser

pub const EMB_DIM: usize = 8;

/// Sinusoidal step embedding: pairs (sin, cos) of i times a geometric
/// frequency ladder 10000^(-k / (EMB_DIM/2)).
pub fn time_embedding(i: usize) -> [f64; EMB_DIM] {
    let mut e = [0.0; EMB_DIM];
    for k in 0..EMB_DIM / 2 {
        let freq = 10000f64.powf(-(k as f64) / (EMB_DIM as f64 / 2.0));
        let ang = i as f64 * freq;
        e[2 * k] = ang.sin();
        e[2 * k + 1] = ang.cos();
    }
    e
}

/// Two-layer fully connected network, tanh hidden, f64 throughout.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Row-major hidden x in.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major out x hidden.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    /// Uniform(+-1/sqrt(fan_in)) weights, zero biases.
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Mlp {
        let mut rng = rng_from(seed);
        let s1 = 1.0 / (in_dim.max(1) as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize, s: f64, rng: &mut Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-s..=s)).collect()
        };
        let w1 = draw(hidden * in_dim, s1, &mut rng);
        let w2 = draw(out_dim * hidden, s2, &mut rng);
        Mlp { in_dim, hidden, out_dim, w1, b1: vec![0.0; hidden], w2, b2: vec![0.0; out_dim] }
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Mlp {
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        }
    }

    /// Returns (output, hidden activations); the hidden vector feeds
    /// `backward`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut h = vec![0.0; self.hidden];
        for j in 0..self.hidden {
            let row = &self.w1[j * self.in_dim..(j + 1) * self.in_dim];
            let z: f64 = row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>() + self.b1[j];
            h[j] = z.tanh();
        }
        let mut out = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            out[o] = row.iter().zip(&h).map(|(&w, &v)| w * v).sum::<f64>() + self.b2[o];
        }
        (out, h)
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("w1", Tensor::from_f64(vec![self.hidden, self.in_dim], self.w1.clone()).unwrap());
        a.insert("b1", Tensor::from_f64(vec![self.hidden], self.b1.clone()).unwrap());
        a.insert("w2", Tensor::from_f64(vec![self.out_dim, self.hidden], self.w2.clone()).unwrap());
        a.insert("b2", Tensor::from_f64(vec![self.out_dim], self.b2.clone()).unwrap());
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Mlp> {
        let w1t = a.get("w1")?;
        let s = w1t.shape();
        if s.len() != 2 {
            return Err(Error::data("w1 must be rank 2"));
        }
        let (hidden, in_dim) = (s[0], s[1]);
        let w2t = a.get("w2")?;
        let s2 = w2t.shape();
        if s2.len() != 2 || s2[1] != hidden {
            return Err(Error::data("w2 must be rank 2 with hidden columns"));
        }
        let out_dim = s2[0];
        let b1 = a.get("b1")?.as_f64()?.to_vec();
        let b2 = a.get("b2")?.as_f64()?.to_vec();
        if b1.len() != hidden || b2.len() != out_dim {
            return Err(Error::data("bias shapes disagree with weight shapes"));
        }
        Ok(Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: w1t.as_f64()?.to_vec(),
            b1,
            w2: w2t.as_f64()?.to_vec(),
            b2,
        })
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Grads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Grads {
        Grads {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).chain(&mut self.b2) {
            *g *= s;
        }
    }
}

/// Accumulates exact gradients of mean((out - target)^2) over `out_dim`
/// into `grads`, returning the sample's loss. `h` must come from
/// `forward(x)` on the same parameters.
pub fn accumulate_loss_grads(
    net: &Mlp,
    x: &[f64],
    h: &[f64],
    out: &[f64],
    target: &[f64],
    grads: &mut Grads,
) -> f64 {
    let n = net.out_dim as f64;
    let mut loss = 0.0;
    let mut gh = vec![0.0; net.hidden];
    for o in 0..net.out_dim {
        let diff = out[o] - target[o];
        loss += diff * diff;
        let go = 2.0 * diff / n;
        let row = o * net.hidden;
        for j in 0..net.hidden {
            grads.w2[row + j] += go * h[j];
            gh[j] += go * net.w2[row + j];
        }
        grads.b2[o] += go;
    }
    for j in 0..net.hidden {
        let gz = gh[j] * (1.0 - h[j] * h[j]);
        let row = j * net.in_dim;
        for d in 0..net.in_dim {
            grads.w1[row + d] += gz * x[d];
        }
        grads.b1[j] += gz;
    }
    loss / n
}

/// SGD-with-momentum state (velocity per parameter).
#[derive(Debug, Clone)]
pub struct SgdState {
    v: Grads,
    pub momentum: f64,
}

impl SgdState {
    pub fn new(net: &Mlp, momentum: f64) -> SgdState {
        SgdState { v: Grads::zeros_like(net), momentum }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64) {
        let m = self.momentum;
        let pairs = [
            (&mut net.w1, &grads.w1, &mut self.v.w1),
            (&mut net.b1, &grads.b1, &mut self.v.b1),
            (&mut net.w2, &grads.w2, &mut self.v.w2),
            (&mut net.b2, &grads.b2, &mut self.v.b2),
        ];
        for (p, g, v) in pairs {
            for k in 0..p.len() {
                v[k] = m * v[k] + g[k];
                p[k] -= lr * v[k];
            }
        }
    }
}

/// Cosine decay from lr0 to lr1 over n steps.
pub fn cosine_lr(step: usize, n_steps: usize, lr0: f64, lr1: f64) -> f64 {
    if n_steps <= 1 {
        return lr0;
    }
    let t = step as f64 / n_steps as f64;
    lr1 + 0.5 * (lr0 - lr1) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// MLP noise predictor over flattened [z | context | live | embedding(i)].
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    pub net: Mlp,
    pub z_len: usize,
    pub ctx_len: usize,
    pub live_len: usize,
}

impl MlpDenoiser {
    pub fn new(z_len: usize, ctx_len: usize, live_len: usize, hidden: usize, seed: u64) -> MlpDenoiser {
        let in_dim = z_len + ctx_len + live_len + EMB_DIM;
        MlpDenoiser { net: Mlp::new(in_dim, hidden, z_len, seed), z_len, ctx_len, live_len }
    }

    /// Flattened network input for one (state, conditioning, step) triple.
    pub fn pack_input(&self, z: &[f64], cond: &CondVecs, i: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.net.in_dim);
        x.extend_from_slice(z);
        x.extend_from_slice(&cond.context);
        x.extend_from_slice(&cond.live);
        x.extend_from_slice(&time_embedding(i));
        debug_assert_eq!(x.len(), self.net.in_dim);
        x
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = self.net.to_archive();
        a.insert(
            "split",
            Tensor::from_u32(
                vec![4],
                vec![self.z_len as u32, self.ctx_len as u32, self.live_len as u32, EMB_DIM as u32],
            )
            .unwrap(),
        );
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<MlpDenoiser> {
        let net = Mlp::from_archive(a)?;
        let split = a.get("split")?.as_u32()?.to_vec();
        if split.len() != 4 {
            return Err(Error::data("split must hold [z, ctx, live, emb] lengths"));
        }
        let (z_len, ctx_len, live_len, emb) =
            (split[0] as usize, split[1] as usize, split[2] as usize, split[3] as usize);
        if emb != EMB_DIM || z_len + ctx_len + live_len + emb != net.in_dim || net.out_dim != z_len {
            return Err(Error::data("split disagrees with network shapes"));
        }
        Ok(MlpDenoiser { net, z_len, ctx_len, live_len })
    }
}

impl Denoiser for MlpDenoiser {
    fn predict_noise(&self, z: &[f64], cond: &CondVecs, i: usize, _a: f64, _s: f64) -> Vec<f64> {
        let x = self.pack_input(z, cond, i);
        self.net.forward(&x).0
    }
}

// ---------------------------------------------------------------------------
// Toy training drivers (shared by tests and the CLI's train-denoiser tasks)

/// One noise-prediction SGD step over a batch of (z0, cond, i, eps) draws.
/// Returns the batch-mean loss.
#[allow(clippy::too_many_arguments)]
pub fn noise_training_step(
    den: &mut MlpDenoiser,
    batch: &[(Vec<f64>, CondVecs, usize, Vec<f64>)],
    schedule: &DiffusionSchedule,
    state: &mut SgdState,
    lr: f64,
) -> f64 {
    let mut grads = Grads::zeros_like(&den.net);
    let mut total = 0.0;
    for (z0, cond, i, eps) in batch {
        let (a, s) = (schedule.alphas[*i], schedule.sigmas[*i]);
        let zi: Vec<f64> = z0.iter().zip(eps).map(|(&zv, &ev)| a * zv + s * ev).collect();
        let x = den.pack_input(&zi, cond, *i);
        let (out, h) = den.net.forward(&x);
        total += accumulate_loss_grads(&den.net, &x, &h, &out, eps, &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    state.step(&mut den.net, &grads, lr);
    total / batch.len() as f64
}

/// Trains a scalar denoiser on z0 ~ N(mu, 1) with no conditioning.
pub fn train_gaussian_toy(
    mu: f64,
    n_steps: usize,
    batch: usize,
    hidden: usize,
    lr: f64,
    seed: u64,
    schedule: &DiffusionSchedule,
) -> MlpDenoiser {
    let mut den = MlpDenoiser::new(1, 0, 0, hidden, seed);
    let mut st = SgdState::new(&den.net, 0.9);
    let mut rng = rng_from(seed.wrapping_add(1));
    for _ in 0..n_steps {
        let b: Vec<_> = (0..batch)
            .map(|_| {
                let z0 = mu + rng.sample::<f64, _>(StandardNormal);
                let i = rng.gen_range(0..schedule.steps_train);
                let eps: f64 = rng.sample(StandardNormal);
                (vec![z0], CondVecs::empty(), i, vec![eps])
            })
            .collect();
        noise_training_step(&mut den, &b, schedule, &mut st, lr);
    }
    den
}

/// Fresh-draw evaluation loss of a scalar denoiser on the same task.
pub fn eval_gaussian_loss(
    den: &MlpDenoiser,
    mu: f64,
    n: usize,
    seed: u64,
    schedule: &DiffusionSchedule,
) -> f64 {
    let mut rng = rng_from(seed);
    let empty = CondVecs::empty();
    let mut total = 0.0;
    for _ in 0..n {
        let z0: f64 = mu + rng.sample::<f64, _>(StandardNormal);
        let i = rng.gen_range(0..schedule.steps_train);
        let eps: f64 = rng.sample(StandardNormal);
        let (a, s) = (schedule.alphas[i], schedule.sigmas[i]);
        let zi = a * z0 + s * eps;
        let out = den.predict_noise(&[zi], &empty, i, a, s);
        total += (out[0] - eps) * (out[0] - eps);
    }
    total / n as f64
}

/// Trains a scalar denoiser on data that is `a` or `b` with equal
/// frequency (balanced batches), cosine LR decay.
#[allow(clippy::too_many_arguments)]
pub fn train_two_target_toy(
    a: f64,
    b: f64,
    n_steps: usize,
    batch_pairs: usize,
    hidden: usize,
    lr0: f64,
    lr1: f64,
    seed: u64,
    schedule: &DiffusionSchedule,
) -> MlpDenoiser {
    let mut den = MlpDenoiser::new(1, 0, 0, hidden, seed);
    let mut st = SgdState::new(&den.net, 0.9);
    let mut rng = rng_from(seed.wrapping_add(1));
    for step in 0..n_steps {
        let lr = cosine_lr(step, n_steps, lr0, lr1);
        let b_: Vec<_> = (0..2 * batch_pairs)
            .map(|k| {
                let z0 = if k % 2 == 0 { a } else { b };
                let i = rng.gen_range(0..schedule.steps_train);
                let eps: f64 = rng.sample(StandardNormal);
                (vec![z0], CondVecs::empty(), i, vec![eps])
            })
            .collect();
        noise_training_step(&mut den, &b_, schedule, &mut st, lr);
    }
    den
}

/// Single deterministic forward map from conditioning to output; the
/// pixel-MSE regression baseline (no noise input, no step embedding).
pub fn deterministic_decode(net: &Mlp, cond: &CondVecs) -> Vec<f64> {
    let mut x = Vec::with_capacity(cond.context.len() + cond.live.len());
    x.extend_from_slice(&cond.context);
    x.extend_from_slice(&cond.live);
    net.forward(&x).0
}

/// One MSE SGD step for the deterministic decoder over (cond, target) pairs.
pub fn deterministic_training_step(
    net: &mut Mlp,
    batch: &[(CondVecs, Vec<f64>)],
    state: &mut SgdState,
    lr: f64,
) -> f64 {
    let mut grads = Grads::zeros_like(net);
    let mut total = 0.0;
    for (cond, target) in batch {
        let mut x = Vec::with_capacity(cond.context.len() + cond.live.len());
        x.extend_from_slice(&cond.context);
        x.extend_from_slice(&cond.live);
        let (out, h) = net.forward(&x);
        total += accumulate_loss_grads(net, &x, &h, &out, target, &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    state.step(net, &grads, lr);
    total / batch.len() as f64
}

/// Trains the deterministic baseline on a fixed conditioning mapped to the
/// given targets in balanced batches; returns the converged network.
pub fn train_deterministic_toy(
    targets: &[f64],
    n_steps: usize,
    lr0: f64,
    lr1: f64,
    hidden: usize,
    seed: u64,
) -> Mlp {
    let mut net = Mlp::new(1, hidden, 1, seed);
    let mut st = SgdState::new(&net, 0.9);
    let cond = CondVecs { context: vec![0.0], live: vec![] };
    for step in 0..n_steps {
        let lr = cosine_lr(step, n_steps, lr0, lr1);
        let batch: Vec<_> = targets.iter().map(|&t| (cond.clone(), vec![t])).collect();
        deterministic_training_step(&mut net, &batch, &mut st, lr);
    }
    net
}
