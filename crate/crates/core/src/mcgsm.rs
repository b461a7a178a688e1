//! Mixture of conditional Gaussian scale mixtures: the per-pixel conditional
//! density `p(x | h)`.
//!
//! A softmax gate over (component, scale) pairs weighs Gaussian experts whose
//! mean is linear in the conditioning feature vector `h`:
//!
//! * gate logit for (c, s): `eta[c,s] - 0.5 * exp(alpha[c,s]) * h'K_c h`
//! * expert for (c, s): `N(x; a_c'h, exp(-alpha[c,s]))`
//!
//! `K_c` is kept positive semidefinite by construction through the factored
//! form `K_c = B_c'B_c`, so the gate stays well-defined no matter where
//! gradient updates move `B_c`. All mixture reductions go through
//! log-sum-exp with max subtraction; trained `exp(alpha)` values span many
//! orders of magnitude.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.8378770664093453;

/// Gate and expert parameters. Layouts are row-major with the scale index
/// fastest for (c, s) tables.
#[derive(Debug, Clone, PartialEq)]
pub struct McgsmParams {
    components: usize,
    scales: usize,
    rank: usize,
    feature_dim: usize,
    /// eta[c*S + s]: gate biases.
    pub gate_bias: Vec<f64>,
    /// alpha[c*S + s]: log precisions (expert variance is exp(-alpha)).
    pub log_precision: Vec<f64>,
    /// B_c, one R x D block per component; K_c = B_c'B_c.
    pub quad_factors: Vec<f64>,
    /// a_c, one length-D predictor per component.
    pub predictors: Vec<f64>,
}

impl McgsmParams {
    pub fn zeros(components: usize, scales: usize, rank: usize, feature_dim: usize) -> Self {
        assert!(
            components >= 1 && scales >= 1 && rank >= 1 && feature_dim >= 1,
            "all mixture dimensions must be at least 1"
        );
        McgsmParams {
            components,
            scales,
            rank,
            feature_dim,
            gate_bias: vec![0.0; components * scales],
            log_precision: vec![0.0; components * scales],
            quad_factors: vec![0.0; components * rank * feature_dim],
            predictors: vec![0.0; components * feature_dim],
        }
    }

    /// Random initialization. Log precisions are spread per scale so the
    /// mixture starts with experts covering several orders of magnitude of
    /// variance; the gate then only has to learn routing.
    pub fn init_random(
        components: usize,
        scales: usize,
        rank: usize,
        feature_dim: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut p = Self::zeros(components, scales, rank, feature_dim);
        let quad_scale = 1.0 / ((rank * feature_dim) as f64).sqrt();
        let pred_scale = 1.0 / (feature_dim as f64).sqrt();
        for c in 0..components {
            for s in 0..scales {
                let base = if scales > 1 {
                    6.0 * s as f64 / (scales - 1) as f64
                } else {
                    0.0
                };
                p.log_precision[c * scales + s] = base + 0.01 * rng.next_gaussian();
                p.gate_bias[c * scales + s] = 0.01 * rng.next_gaussian();
            }
        }
        for v in &mut p.quad_factors {
            *v = quad_scale * rng.next_gaussian();
        }
        for v in &mut p.predictors {
            *v = pred_scale * rng.next_gaussian();
        }
        p
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn param_count(&self) -> usize {
        self.gate_bias.len() + self.log_precision.len() + self.quad_factors.len() + self.predictors.len()
    }

    fn quad_factor(&self, c: usize) -> &[f64] {
        let n = self.rank * self.feature_dim;
        &self.quad_factors[c * n..(c + 1) * n]
    }

    fn predictor(&self, c: usize) -> &[f64] {
        &self.predictors[c * self.feature_dim..(c + 1) * self.feature_dim]
    }

    pub(crate) fn zeros_like(&self) -> McgsmParams {
        McgsmParams::zeros(self.components, self.scales, self.rank, self.feature_dim)
    }

    pub(crate) fn add_scaled(&mut self, other: &McgsmParams, scale: f64) {
        for (a, b) in self.gate_bias.iter_mut().zip(&other.gate_bias) {
            *a += scale * b;
        }
        for (a, b) in self.log_precision.iter_mut().zip(&other.log_precision) {
            *a += scale * b;
        }
        for (a, b) in self.quad_factors.iter_mut().zip(&other.quad_factors) {
            *a += scale * b;
        }
        for (a, b) in self.predictors.iter_mut().zip(&other.predictors) {
            *a += scale * b;
        }
    }

    pub(crate) fn push_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.gate_bias);
        out.extend_from_slice(&self.log_precision);
        out.extend_from_slice(&self.quad_factors);
        out.extend_from_slice(&self.predictors);
    }

    pub(crate) fn read_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for dst in [
            &mut self.gate_bias,
            &mut self.log_precision,
            &mut self.quad_factors,
            &mut self.predictors,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        off
    }

    pub fn all_finite(&self) -> bool {
        self.gate_bias.iter().all(|v| v.is_finite())
            && self.log_precision.iter().all(|v| v.is_finite())
            && self.quad_factors.iter().all(|v| v.is_finite())
            && self.predictors.iter().all(|v| v.is_finite())
    }

    fn check_feature(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.feature_dim {
            return Err(Error::shape(
                "mcgsm feature",
                format!("{}", self.feature_dim),
                format!("{}", h.len()),
            ));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mcgsm feature vector".into()));
        }
        Ok(())
    }

    /// Log-softmax over all (c, s) gate logits; `exp` of the result sums to 1.
    pub fn gate_log_probs(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_feature(h)?;
        let mut scratch = Scratch::new(self);
        self.gate_part(h, &mut scratch);
        Ok(scratch
            .gate_logits
            .iter()
            .map(|&u| u - scratch.lse_gate)
            .collect())
    }

    /// log p(x | h), reduced over all (c, s) via log-sum-exp.
    pub fn cond_log_density(&self, h: &[f64], x: f64) -> Result<f64> {
        self.check_feature(h)?;
        check_pixel(x)?;
        let mut scratch = Scratch::new(self);
        self.gate_part(h, &mut scratch);
        self.joint_part(x, &mut scratch)?;
        Ok(scratch.lse_joint - scratch.lse_gate)
    }

    /// Posterior over (c, s) given both the feature vector and the pixel.
    pub fn posterior(&self, h: &[f64], x: f64) -> Result<MixturePosterior> {
        self.check_feature(h)?;
        check_pixel(x)?;
        let mut scratch = Scratch::new(self);
        self.gate_part(h, &mut scratch);
        self.joint_part(x, &mut scratch)?;
        let probs: Vec<f64> = scratch
            .joint_logits
            .iter()
            .map(|&v| (v - scratch.lse_joint).exp())
            .collect();
        Ok(MixturePosterior {
            components: self.components,
            scales: self.scales,
            probs,
        })
    }

    /// Shannon entropy (nats) of the (c, s) posterior; lies in [0, ln(C*S)].
    pub fn posterior_entropy(&self, h: &[f64], x: f64) -> Result<f64> {
        Ok(self.posterior(h, x)?.entropy())
    }

    /// Exact gradients of `cond_log_density` with respect to the pixel, the
    /// feature vector, and every parameter.
    pub fn cond_grads(&self, h: &[f64], x: f64) -> Result<CondGrads> {
        self.check_feature(h)?;
        check_pixel(x)?;
        let mut scratch = Scratch::new(self);
        let mut dh = vec![0.0; self.feature_dim];
        let mut dparams = self.zeros_like();
        let eval = self.eval_pixel(h, x, &mut scratch, &mut dh, Some(&mut dparams))?;
        Ok(CondGrads {
            dx: eval.dx,
            dfeatures: dh,
            dparams,
        })
    }

    /// Draw (c, s) from the gate, then the pixel from the selected expert.
    pub fn sample_pixel(&self, h: &[f64], rng: &mut SeededRng) -> Result<f64> {
        self.check_feature(h)?;
        let mut scratch = Scratch::new(self);
        self.gate_part(h, &mut scratch);
        let u = rng.next_uniform();
        let mut acc = 0.0;
        let mut idx = self.components * self.scales - 1;
        for (k, &logit) in scratch.gate_logits.iter().enumerate() {
            acc += (logit - scratch.lse_gate).exp();
            if u < acc {
                idx = k;
                break;
            }
        }
        let c = idx / self.scales;
        let std = (-0.5 * self.log_precision[idx]).exp();
        Ok(scratch.mu[c] + std * rng.next_gaussian())
    }

    // Fills bh, q, mu and the gate logits for a feature vector.
    fn gate_part(&self, h: &[f64], scratch: &mut Scratch) {
        let d = self.feature_dim;
        let r = self.rank;
        for c in 0..self.components {
            let b = self.quad_factor(c);
            let bh = &mut scratch.bh[c * r..(c + 1) * r];
            let mut q = 0.0;
            for (k, out) in bh.iter_mut().enumerate() {
                let row = &b[k * d..(k + 1) * d];
                let mut acc = 0.0;
                for j in 0..d {
                    acc += row[j] * h[j];
                }
                *out = acc;
                q += acc * acc;
            }
            scratch.q[c] = q;
            let a = self.predictor(c);
            let mut mu = 0.0;
            for j in 0..d {
                mu += a[j] * h[j];
            }
            scratch.mu[c] = mu;
        }
        for c in 0..self.components {
            for s in 0..self.scales {
                let k = c * self.scales + s;
                scratch.gate_logits[k] =
                    self.gate_bias[k] - 0.5 * self.log_precision[k].exp() * scratch.q[c];
            }
        }
        scratch.lse_gate = log_sum_exp(&scratch.gate_logits);
    }

    // Adds the expert log-densities on top of gate logits; requires gate_part.
    fn joint_part(&self, x: f64, scratch: &mut Scratch) -> Result<()> {
        for c in 0..self.components {
            let resid = x - scratch.mu[c];
            for s in 0..self.scales {
                let k = c * self.scales + s;
                let alpha = self.log_precision[k];
                let expert = -0.5 * LN_2PI + 0.5 * alpha - 0.5 * alpha.exp() * resid * resid;
                scratch.joint_logits[k] = scratch.gate_logits[k] + expert;
            }
        }
        scratch.lse_joint = log_sum_exp(&scratch.joint_logits);
        if !scratch.lse_joint.is_finite() {
            return Err(Error::Degenerate(
                "all mixture weights are numerically zero at this pixel".into(),
            ));
        }
        Ok(())
    }

    /// Gradient-free log-density for callers that manage their own scratch
    /// (shape checks are the caller's responsibility).
    pub(crate) fn log_density_scratch(&self, h: &[f64], x: f64, scratch: &mut Scratch) -> Result<f64> {
        self.gate_part(h, scratch);
        self.joint_part(x, scratch)?;
        Ok(scratch.lse_joint - scratch.lse_gate)
    }

    /// Fused per-pixel evaluation used on the model's hot path: log-density,
    /// d/dx, d/dh (written into `dh_out`, overwritten), posterior entropy,
    /// and optionally parameter gradients accumulated into `dparams`.
    pub(crate) fn eval_pixel(
        &self,
        h: &[f64],
        x: f64,
        scratch: &mut Scratch,
        dh_out: &mut [f64],
        mut dparams: Option<&mut McgsmParams>,
    ) -> Result<PixelEval> {
        self.gate_part(h, scratch);
        self.joint_part(x, scratch)?;
        let d = self.feature_dim;
        let r = self.rank;
        let cs = self.components * self.scales;

        for k in 0..cs {
            scratch.post[k] = (scratch.joint_logits[k] - scratch.lse_joint).exp();
            scratch.gate[k] = (scratch.gate_logits[k] - scratch.lse_gate).exp();
        }

        let mut entropy = 0.0;
        for k in 0..cs {
            let p = scratch.post[k];
            if p > 0.0 {
                entropy -= p * (scratch.joint_logits[k] - scratch.lse_joint);
            }
        }

        dh_out.iter_mut().for_each(|v| *v = 0.0);
        let mut dx = 0.0;
        for c in 0..self.components {
            let resid = x - scratch.mu[c];
            // w_post = sum_s post * precision; w_diff the same with (post - gate).
            let mut w_post = 0.0;
            let mut w_diff = 0.0;
            for s in 0..self.scales {
                let k = c * self.scales + s;
                let lam = self.log_precision[k].exp();
                w_post += scratch.post[k] * lam;
                w_diff += (scratch.post[k] - scratch.gate[k]) * lam;
            }
            dx -= w_post * resid;

            // dh += w_post * resid * a_c - w_diff * B_c' (B_c h)
            let a = self.predictor(c);
            let coeff = w_post * resid;
            for j in 0..d {
                dh_out[j] += coeff * a[j];
            }
            let b = self.quad_factor(c);
            let bh = &scratch.bh[c * r..(c + 1) * r];
            for k in 0..r {
                let w = w_diff * bh[k];
                if w != 0.0 {
                    let row = &b[k * d..(k + 1) * d];
                    for j in 0..d {
                        dh_out[j] -= w * row[j];
                    }
                }
            }

            if let Some(dp) = dparams.as_deref_mut() {
                for s in 0..self.scales {
                    let k = c * self.scales + s;
                    let lam = self.log_precision[k].exp();
                    let diff = scratch.post[k] - scratch.gate[k];
                    dp.gate_bias[k] += diff;
                    dp.log_precision[k] += scratch.post[k]
                        * (0.5 - 0.5 * lam * resid * resid - 0.5 * lam * scratch.q[c])
                        + scratch.gate[k] * 0.5 * lam * scratch.q[c];
                }
                let da = &mut dp.predictors[c * d..(c + 1) * d];
                for j in 0..d {
                    da[j] += coeff * h[j];
                }
                let db = &mut dp.quad_factors[c * r * d..(c + 1) * r * d];
                for k in 0..r {
                    let w = w_diff * bh[k];
                    if w != 0.0 {
                        let row = &mut db[k * d..(k + 1) * d];
                        for j in 0..d {
                            row[j] -= w * h[j];
                        }
                    }
                }
            }
        }

        Ok(PixelEval {
            log_density: scratch.lse_joint - scratch.lse_gate,
            dx,
            entropy,
        })
    }
}

fn check_pixel(x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite("pixel value".into()));
    }
    Ok(())
}

/// Normalized posterior over (c, s) pairs, scale index fastest.
#[derive(Debug, Clone)]
pub struct MixturePosterior {
    components: usize,
    scales: usize,
    pub probs: Vec<f64>,
}

impl MixturePosterior {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn prob(&self, c: usize, s: usize) -> f64 {
        self.probs[c * self.scales + s]
    }

    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for &p in &self.probs {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        h
    }
}

/// Gradients of the conditional log-density.
#[derive(Debug, Clone)]
pub struct CondGrads {
    pub dx: f64,
    pub dfeatures: Vec<f64>,
    pub dparams: McgsmParams,
}

pub(crate) struct PixelEval {
    pub log_density: f64,
    pub dx: f64,
    pub entropy: f64,
}

/// Reusable per-pixel work buffers; sized once per model evaluation.
pub(crate) struct Scratch {
    bh: Vec<f64>,
    q: Vec<f64>,
    mu: Vec<f64>,
    gate_logits: Vec<f64>,
    joint_logits: Vec<f64>,
    post: Vec<f64>,
    gate: Vec<f64>,
    lse_gate: f64,
    lse_joint: f64,
}

impl Scratch {
    pub(crate) fn new(p: &McgsmParams) -> Self {
        let cs = p.components * p.scales;
        Scratch {
            bh: vec![0.0; p.components * p.rank],
            q: vec![0.0; p.components],
            mu: vec![0.0; p.components],
            gate_logits: vec![0.0; cs],
            joint_logits: vec![0.0; cs],
            post: vec![0.0; cs],
            gate: vec![0.0; cs],
            lse_gate: 0.0,
            lse_joint: 0.0,
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}
