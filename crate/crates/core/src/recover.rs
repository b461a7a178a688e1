//! MAP inference engines built on the prior gradient.
//!
//! All three engines run momentum gradient ascent on the image log-density,
//! differing in how measurements enter:
//!
//! * [`inpaint`]: prior-only ascent on the missing pixels; observed pixels
//!   are restored bit-exactly after every update.
//! * [`cs_recover`]: hard-constrained recovery; every iteration ends with the
//!   Euclidean projection onto `{x : phi x = y}`, so the final iterate always
//!   satisfies the measurements.
//! * [`cs_recover_noisy`]: soft-constrained recovery for noisy measurements;
//!   the quadratic penalty `lambda * ||y - phi x||^2` replaces the
//!   projection.
//!
//! The prior gradient can be masked by posterior entropy: pixels whose
//! mixture posterior is too spread out (entropy above the threshold) are the
//! ones the model cannot explain confidently, and ascending their gradient
//! blurs texture. Masking zeroes exactly those entries; the threshold applies
//! to the prior gradient only, never to the data term or the projection.

use crate::error::{Error, Result};
use crate::grid::{Flip, Grid2D};
use crate::mask::PixelMask;
use crate::model::{AnalysisWants, RideModel};
use crate::rng::SeededRng;
use crate::sensing::{MeasurementOperator, Measurements};

/// Where recovery starts from.
#[derive(Debug, Clone)]
pub enum Init {
    /// Uniform (0,1) pixels from a seed.
    Random { seed: u64 },
    /// Caller-provided start image.
    Provided(Grid2D),
}

#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    /// Gradient ascent step size.
    pub step_size: f64,
    /// Heavy-ball coefficient: v <- momentum*v + step*g; x <- x + v.
    pub momentum: f64,
    pub iterations: usize,
    /// Entropy mask threshold in nats; `None` disables masking.
    pub entropy_threshold: Option<f64>,
    /// Soft-constraint weight (noisy recovery only).
    pub lambda: f64,
    /// Measurement noise level this run assumes; recorded in traces/manifests.
    pub noise_sigma: f64,
    pub init: Init,
    /// Intensity clamp applied by the unconstrained engines.
    pub clamp: (f64, f64),
    /// Average the gradient over the four diagonal factorizations.
    pub four_directions: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            step_size: 5e-3,
            momentum: 0.9,
            iterations: 300,
            entropy_threshold: Some(3.5),
            lambda: 0.0,
            noise_sigma: 0.0,
            init: Init::Random { seed: 0 },
            clamp: (0.0, 1.0),
            four_directions: true,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidArg("step size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArg("momentum must lie in [0,1)".into()));
        }
        if let Some(tau) = self.entropy_threshold {
            if !(tau > 0.0) {
                return Err(Error::InvalidArg(
                    "entropy threshold must be positive when enabled".into(),
                ));
            }
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArg("lambda must be nonnegative".into()));
        }
        if !(self.clamp.0 < self.clamp.1) {
            return Err(Error::InvalidArg("clamp range is empty".into()));
        }
        Ok(())
    }

    /// Iteration default from the measurement rate: 300 at rates of 0.25 and
    /// above, 400 below.
    pub fn iterations_for_rate(rate: f64) -> usize {
        if rate >= 0.25 {
            300
        } else {
            400
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Default)]
pub struct RecoveryTrace {
    /// Log-prior of the iterate the gradient was evaluated at.
    pub log_prior: Vec<f64>,
    /// Data-fit residual ||phi x - y||_2 after the update (0 for inpainting).
    pub residual: Vec<f64>,
    /// Fraction of pixels whose prior gradient the entropy mask zeroed.
    pub masked_fraction: Vec<f64>,
}

impl RecoveryTrace {
    pub fn len(&self) -> usize {
        self.log_prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prior.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,log_prior,residual,masked_fraction")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i, self.log_prior[i], self.residual[i], self.masked_fraction[i]
            )?;
        }
        Ok(())
    }
}

pub(crate) struct PriorEval {
    pub grad: Grid2D,
    pub log_prior: f64,
    pub masked_fraction: f64,
}

/// Gradient of the log-prior with the entropy mask applied. Entropies are
/// always taken from the identity orientation, at the current pixel values.
pub(crate) fn prior_eval(
    model: &RideModel,
    image: &Grid2D,
    tau: Option<f64>,
    four_directions: bool,
) -> Result<PriorEval> {
    let identity = model.analyze(
        image,
        AnalysisWants {
            entropy: tau.is_some(),
            param_grads: false,
        },
    )?;
    let log_prior = identity.loglik;
    let entropy = identity.entropy;
    let mut grad = identity.grad_input;

    if four_directions {
        for flip in [Flip::Horizontal, Flip::Vertical, Flip::Both] {
            let flipped = flip.apply(image);
            let g = model.analyze(&flipped, AnalysisWants::grad())?.grad_input;
            let g = flip.apply(&g);
            for (a, b) in grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        for v in grad.data_mut() {
            *v *= 0.25;
        }
    }

    let mut masked_fraction = 0.0;
    if let Some(tau) = tau {
        let entropy = entropy.expect("entropy map requested");
        let mut masked = 0usize;
        for (g, &h) in grad.data_mut().iter_mut().zip(entropy.data()) {
            if h > tau {
                *g = 0.0;
                masked += 1;
            }
        }
        masked_fraction = masked as f64 / image.len() as f64;
    }

    Ok(PriorEval {
        grad,
        log_prior,
        masked_fraction,
    })
}

/// Four-direction prior gradient with entries zeroed wherever the posterior
/// entropy exceeds `tau`. `None` disables the mask.
pub fn masked_prior_grad(model: &RideModel, image: &Grid2D, tau: Option<f64>) -> Result<Grid2D> {
    if let Some(t) = tau {
        if !(t > 0.0) {
            return Err(Error::InvalidArg(
                "entropy threshold must be positive when enabled".into(),
            ));
        }
    }
    Ok(prior_eval(model, image, tau, true)?.grad)
}

fn init_image(
    init: &Init,
    rows: usize,
    cols: usize,
    fill_only_missing: Option<&PixelMask>,
    base: Option<&Grid2D>,
) -> Result<Grid2D> {
    let mut out = match base {
        Some(b) => b.clone(),
        None => Grid2D::zeros(rows, cols),
    };
    match init {
        Init::Random { seed } => {
            let mut rng = SeededRng::new(*seed);
            for r in 0..rows {
                for c in 0..cols {
                    let v = rng.next_uniform_open();
                    match fill_only_missing {
                        Some(mask) if mask.is_observed(r, c) => {}
                        _ => out.set(r, c, v),
                    }
                }
            }
        }
        Init::Provided(g) => {
            if g.rows() != rows || g.cols() != cols {
                return Err(Error::shape(
                    "recovery init",
                    format!("{rows}x{cols}"),
                    format!("{}x{}", g.rows(), g.cols()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite("provided init image".into()));
            }
            for r in 0..rows {
                for c in 0..cols {
                    match fill_only_missing {
                        Some(mask) if mask.is_observed(r, c) => {}
                        _ => out.set(r, c, g.get(r, c)),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fills the missing pixels of `observed` by masked prior ascent. Observed
/// pixels are bit-identical to the input at every iteration.
pub fn inpaint(
    model: &RideModel,
    observed: &Grid2D,
    mask: &PixelMask,
    cfg: &RecoveryConfig,
) -> Result<(Grid2D, RecoveryTrace)> {
    cfg.validate()?;
    if mask.rows() != observed.rows() || mask.cols() != observed.cols() {
        return Err(Error::shape(
            "inpaint mask",
            format!("{}x{}", observed.rows(), observed.cols()),
            format!("{}x{}", mask.rows(), mask.cols()),
        ));
    }
    for r in 0..observed.rows() {
        for c in 0..observed.cols() {
            if mask.is_observed(r, c) && !observed.get(r, c).is_finite() {
                return Err(Error::NonFinite(format!("observed pixel ({r},{c})")));
            }
        }
    }

    let (rows, cols) = (observed.rows(), observed.cols());
    let mut x = init_image(&cfg.init, rows, cols, Some(mask), Some(observed))?;
    let mut velocity = Grid2D::zeros(rows, cols);
    let mut trace = RecoveryTrace::default();

    for iteration in 0..cfg.iterations {
        let eval = prior_eval(model, &x, cfg.entropy_threshold, cfg.four_directions)?;
        let mut grad = eval.grad;
        for r in 0..rows {
            for c in 0..cols {
                if mask.is_observed(r, c) {
                    grad.set(r, c, 0.0);
                }
            }
        }
        for (v, g) in velocity.data_mut().iter_mut().zip(grad.data()) {
            *v = cfg.momentum * *v + cfg.step_size * g;
        }
        for (xv, v) in x.data_mut().iter_mut().zip(velocity.data()) {
            *xv += v;
        }
        x.clamp_in_place(cfg.clamp.0, cfg.clamp.1);
        for r in 0..rows {
            for c in 0..cols {
                if mask.is_observed(r, c) {
                    x.set(r, c, observed.get(r, c));
                }
            }
        }
        if !x.all_finite() {
            return Err(Error::Diverged {
                iteration,
                detail: "inpainting state became non-finite".into(),
            });
        }
        trace.log_prior.push(eval.log_prior);
        trace.residual.push(0.0);
        trace.masked_fraction.push(eval.masked_fraction);
    }
    Ok((x, trace))
}

/// Noiseless compressive recovery by projected momentum ascent. Every
/// iteration is the momentum step followed by the affine projection, so the
/// returned image satisfies `phi x = y` to working precision.
pub fn cs_recover(
    model: &RideModel,
    op: &MeasurementOperator,
    y: &Measurements,
    cfg: &RecoveryConfig,
) -> Result<(Grid2D, RecoveryTrace)> {
    cfg.validate()?;
    if cfg.lambda != 0.0 {
        return Err(Error::InvalidArg(
            "cs_recover enforces the hard constraint; use cs_recover_noisy for lambda > 0".into(),
        ));
    }
    if !op.is_row_orthonormal() {
        return Err(Error::NotOrthonormal);
    }
    let (rows, cols) = check_measurements(op, y)?;
    let mut x = init_image(&cfg.init, rows, cols, None, None)?;
    let mut velocity = Grid2D::zeros(rows, cols);
    let mut trace = RecoveryTrace::default();

    for iteration in 0..cfg.iterations {
        let eval = prior_eval(model, &x, cfg.entropy_threshold, cfg.four_directions)?;
        for (v, g) in velocity.data_mut().iter_mut().zip(eval.grad.data()) {
            *v = cfg.momentum * *v + cfg.step_size * g;
        }
        for (xv, v) in x.data_mut().iter_mut().zip(velocity.data()) {
            *xv += v;
        }
        x = op.project_affine(&x, y)?;
        if !x.all_finite() {
            return Err(Error::Diverged {
                iteration,
                detail: "projected iterate became non-finite".into(),
            });
        }
        trace.log_prior.push(eval.log_prior);
        trace.residual.push(residual_norm(op, &x, y)?);
        trace.masked_fraction.push(eval.masked_fraction);
    }
    Ok((x, trace))
}

/// Noisy compressive recovery: momentum ascent on
/// `log p(x) - lambda * ||y - phi x||^2`, clamped to the intensity range.
/// With `lambda == 0` the measurements are ignored entirely (degenerate but
/// well-defined: pure prior ascent).
pub fn cs_recover_noisy(
    model: &RideModel,
    op: &MeasurementOperator,
    y: &Measurements,
    cfg: &RecoveryConfig,
) -> Result<(Grid2D, RecoveryTrace)> {
    cfg.validate()?;
    let (rows, cols) = check_measurements(op, y)?;
    let mut x = init_image(&cfg.init, rows, cols, None, None)?;
    let mut velocity = Grid2D::zeros(rows, cols);
    let mut trace = RecoveryTrace::default();

    for iteration in 0..cfg.iterations {
        let eval = prior_eval(model, &x, cfg.entropy_threshold, cfg.four_directions)?;
        let mut grad = eval.grad;
        if cfg.lambda > 0.0 {
            // d/dx of -lambda*||y - phi x||^2 is 2*lambda*phi'(y - phi x).
            let mut r = op.forward(x.data())?;
            for (rv, yv) in r.iter_mut().zip(&y.values) {
                *rv = yv - *rv;
            }
            let pull = op.adjoint(&r)?;
            for (g, p) in grad.data_mut().iter_mut().zip(&pull) {
                *g += 2.0 * cfg.lambda * p;
            }
        }
        for (v, g) in velocity.data_mut().iter_mut().zip(grad.data()) {
            *v = cfg.momentum * *v + cfg.step_size * g;
        }
        for (xv, v) in x.data_mut().iter_mut().zip(velocity.data()) {
            *xv += v;
        }
        x.clamp_in_place(cfg.clamp.0, cfg.clamp.1);
        if !x.all_finite() {
            return Err(Error::Diverged {
                iteration,
                detail: "soft-constrained iterate became non-finite".into(),
            });
        }
        trace.log_prior.push(eval.log_prior);
        trace.residual.push(residual_norm(op, &x, y)?);
        trace.masked_fraction.push(eval.masked_fraction);
    }
    Ok((x, trace))
}

fn check_measurements(op: &MeasurementOperator, y: &Measurements) -> Result<(usize, usize)> {
    if y.values.len() != op.measurement_len() {
        return Err(Error::shape(
            "measurements",
            format!("{}", op.measurement_len()),
            format!("{}", y.values.len()),
        ));
    }
    if y.rows * y.cols != op.signal_len() {
        return Err(Error::shape(
            "measurement image shape",
            format!("{} pixels", op.signal_len()),
            format!("{}x{}", y.rows, y.cols),
        ));
    }
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement vector".into()));
    }
    Ok((y.rows, y.cols))
}

fn residual_norm(op: &MeasurementOperator, x: &Grid2D, y: &Measurements) -> Result<f64> {
    let fx = op.forward(x.data())?;
    Ok(fx
        .iter()
        .zip(&y.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{unit_gaussian_model, ModelConfig, RideModel};
    use crate::slstm::CausalWindow;

    fn textured_model(seed: u64) -> RideModel {
        let cfg = ModelConfig {
            components: 3,
            scales: 2,
            rank: Some(3),
            hidden: 6,
            window: CausalWindow::default_four(),
            dequantize: false,
        };
        let mut m = RideModel::new(&cfg, seed);
        let mut rng = SeededRng::new(seed ^ 0x5a5a);
        for v in &mut m.mcgsm.predictors {
            *v = 0.4 * rng.next_gaussian();
        }
        for v in &mut m.mcgsm.quad_factors {
            *v = 0.3 * rng.next_gaussian();
        }
        m
    }

    fn random_image(rows: usize, cols: usize, seed: u64) -> Grid2D {
        let mut rng = SeededRng::new(seed);
        Grid2D::from_vec(rows, cols, (0..rows * cols).map(|_| rng.next_uniform()).collect()).unwrap()
    }

    #[test]
    fn disabled_threshold_matches_plain_gradient() {
        let m = textured_model(1);
        let img = random_image(6, 6, 2);
        let masked = masked_prior_grad(&m, &img, None).unwrap();
        let plain = m.grad_log_likelihood_4dir(&img).unwrap();
        assert_eq!(masked, plain);
    }

    #[test]
    fn tiny_threshold_masks_everything() {
        let m = textured_model(2);
        let img = random_image(6, 6, 3);
        // Posterior entropy of a random finite mixture is strictly positive
        // everywhere, so a near-zero threshold masks every pixel.
        let e = m.entropy_map(&img).unwrap();
        assert!(e.data().iter().all(|&h| h > 1e-9));
        let g = masked_prior_grad(&m, &img, Some(1e-12)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_agrees_with_independent_entropy_map() {
        let m = textured_model(3);
        let img = random_image(8, 8, 4);
        let e = m.entropy_map(&img).unwrap();
        // Median entropy as threshold: some masked, some not.
        let mut vals: Vec<f64> = e.data().to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tau = vals[vals.len() / 2];
        let g = masked_prior_grad(&m, &img, Some(tau)).unwrap();
        let plain = m.grad_log_likelihood_4dir(&img).unwrap();
        let mut masked_any = false;
        for i in 0..img.len() {
            if e.data()[i] > tau {
                assert_eq!(g.data()[i], 0.0);
                masked_any = true;
            } else {
                assert_eq!(g.data()[i], plain.data()[i]);
            }
        }
        assert!(masked_any);
    }

    #[test]
    fn invalid_threshold_rejected() {
        let m = textured_model(4);
        let img = random_image(4, 4, 5);
        assert!(masked_prior_grad(&m, &img, Some(0.0)).is_err());
        assert!(masked_prior_grad(&m, &img, Some(-1.0)).is_err());
    }

    #[test]
    fn inpaint_all_observed_is_identity() {
        let m = textured_model(5);
        let img = random_image(6, 6, 6);
        let mask = PixelMask::all_observed(6, 6);
        for iters in [0, 3] {
            let cfg = RecoveryConfig {
                iterations: iters,
                entropy_threshold: None,
                ..RecoveryConfig::default()
            };
            let (out, trace) = inpaint(&m, &img, &mask, &cfg).unwrap();
            assert_eq!(out, img);
            assert_eq!(trace.len(), iters);
        }
    }

    #[test]
    fn inpaint_zero_iterations_returns_init_in_holes() {
        let m = textured_model(6);
        let img = random_image(6, 6, 7);
        let mask = PixelMask::random(6, 6, 0.5, &mut SeededRng::new(8)).unwrap();
        let cfg = RecoveryConfig {
            iterations: 0,
            init: Init::Random { seed: 42 },
            ..RecoveryConfig::default()
        };
        let (out, _) = inpaint(&m, &img, &mask, &cfg).unwrap();
        let (out2, _) = inpaint(&m, &img, &mask, &cfg).unwrap();
        assert_eq!(out, out2);
        for r in 0..6 {
            for c in 0..6 {
                if mask.is_observed(r, c) {
                    assert_eq!(out.get(r, c), img.get(r, c));
                } else {
                    assert!(out.get(r, c) > 0.0 && out.get(r, c) < 1.0);
                    assert_ne!(out.get(r, c), img.get(r, c));
                }
            }
        }
    }

    #[test]
    fn inpaint_observed_pixels_stay_bit_identical() {
        let m = textured_model(7);
        let img = random_image(8, 8, 9);
        let mask = PixelMask::random(8, 8, 0.4, &mut SeededRng::new(10)).unwrap();
        for iters in [1, 2, 5, 9] {
            let cfg = RecoveryConfig {
                iterations: iters,
                step_size: 0.05,
                entropy_threshold: None,
                ..RecoveryConfig::default()
            };
            let (out, _) = inpaint(&m, &img, &mask, &cfg).unwrap();
            for r in 0..8 {
                for c in 0..8 {
                    if mask.is_observed(r, c) {
                        assert_eq!(out.get(r, c).to_bits(), img.get(r, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn single_missing_pixel_converges_to_prior_mode() {
        let m = unit_gaussian_model(4);
        let img = Grid2D::filled(6, 6, 0.0);
        let mut flags = vec![true; 36];
        flags[3 * 6 + 3] = false;
        let mask = PixelMask::from_flags(6, 6, flags).unwrap();
        let cfg = RecoveryConfig {
            iterations: 200,
            step_size: 0.1,
            entropy_threshold: None,
            init: Init::Random { seed: 11 },
            ..RecoveryConfig::default()
        };
        let (out, _) = inpaint(&m, &img, &mask, &cfg).unwrap();
        // The prior mode of the context-free unit Gaussian is 0.
        assert!(out.get(3, 3).abs() < 1e-3, "pixel {}", out.get(3, 3));
    }

    #[test]
    fn square_system_recovers_exactly_in_one_iteration() {
        let m = textured_model(8);
        let truth = random_image(5, 5, 12);
        let op = MeasurementOperator::gaussian(25, 25, 13).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(14)).unwrap();
        let cfg = RecoveryConfig {
            iterations: 1,
            entropy_threshold: None,
            init: Init::Random { seed: 15 },
            ..RecoveryConfig::default()
        };
        let (out, trace) = cs_recover(&m, &op, &y, &cfg).unwrap();
        let max_err = out
            .data()
            .iter()
            .zip(truth.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-8, "max err {max_err}");
        assert!(trace.residual[0] < 1e-10);
    }

    #[test]
    fn zero_step_size_freezes_after_first_projection() {
        let m = textured_model(9);
        let truth = random_image(6, 6, 16);
        let op = MeasurementOperator::gaussian(36, 14, 17).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(18)).unwrap();
        let run = |iters| {
            let cfg = RecoveryConfig {
                iterations: iters,
                step_size: 1e-300, // step_size must be positive; this is a frozen run
                momentum: 0.0,
                entropy_threshold: None,
                init: Init::Random { seed: 19 },
                ..RecoveryConfig::default()
            };
            cs_recover(&m, &op, &y, &cfg).unwrap().0
        };
        let one = run(1);
        let three = run(3);
        let max_diff = one
            .data()
            .iter()
            .zip(three.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-10, "iterates moved by {max_diff}");
    }

    #[test]
    fn one_iteration_is_momentum_step_then_projection() {
        let m = textured_model(10);
        let truth = random_image(6, 6, 20);
        let op = MeasurementOperator::gaussian(36, 15, 21).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(22)).unwrap();
        let x0 = random_image(6, 6, 23);
        let cfg = RecoveryConfig {
            iterations: 1,
            step_size: 4e-3,
            momentum: 0.9,
            entropy_threshold: None,
            lambda: 0.0,
            init: Init::Provided(x0.clone()),
            ..RecoveryConfig::default()
        };
        let (got, _) = cs_recover(&m, &op, &y, &cfg).unwrap();

        // Hand-composed: gradient step (fresh momentum) then projection.
        let g = m.grad_log_likelihood_4dir(&x0).unwrap();
        let mut stepped = x0.clone();
        for (xv, gv) in stepped.data_mut().iter_mut().zip(g.data()) {
            *xv += 0.9 * 0.0 + 4e-3 * gv;
        }
        let want = op.project_affine(&stepped, &y).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn momentum_zero_equals_plain_ascent_loop() {
        let m = textured_model(11);
        let truth = random_image(5, 5, 24);
        let op = MeasurementOperator::gaussian(25, 10, 25).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(26)).unwrap();
        let x0 = random_image(5, 5, 27);
        let cfg = RecoveryConfig {
            iterations: 4,
            step_size: 3e-3,
            momentum: 0.0,
            entropy_threshold: None,
            init: Init::Provided(x0.clone()),
            ..RecoveryConfig::default()
        };
        let (got, _) = cs_recover(&m, &op, &y, &cfg).unwrap();

        let mut x = x0;
        for _ in 0..4 {
            let g = m.grad_log_likelihood_4dir(&x).unwrap();
            for (xv, gv) in x.data_mut().iter_mut().zip(g.data()) {
                *xv += 0.0 * 0.0 + 3e-3 * gv;
            }
            x = op.project_affine(&x, &y).unwrap();
        }
        assert_eq!(got, x);
    }

    #[test]
    fn hard_constraint_residual_holds_every_iteration() {
        let m = textured_model(12);
        let truth = random_image(6, 6, 28);
        let op = MeasurementOperator::fwht(64, 26, 29).unwrap();
        let img64 = random_image(8, 8, 30);
        let y = op.measure(&img64, 0.0, &mut SeededRng::new(31)).unwrap();
        let _ = truth;
        let cfg = RecoveryConfig {
            iterations: 7,
            step_size: 2e-3,
            entropy_threshold: Some(3.5),
            init: Init::Random { seed: 32 },
            ..RecoveryConfig::default()
        };
        let (out, trace) = cs_recover(&m, &op, &y, &cfg).unwrap();
        assert!(trace.residual.iter().all(|&r| r < 1e-8), "{:?}", trace.residual);
        let final_residual: f64 = op
            .forward(out.data())
            .unwrap()
            .iter()
            .zip(&y.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(final_residual < 1e-8);
    }

    #[test]
    fn cs_recover_rejects_lambda_and_non_orthonormal() {
        let m = textured_model(13);
        let op = MeasurementOperator::gaussian(16, 8, 33).unwrap();
        let y = op
            .measure(&random_image(4, 4, 34), 0.0, &mut SeededRng::new(35))
            .unwrap();
        let cfg = RecoveryConfig {
            lambda: 1.0,
            ..RecoveryConfig::default()
        };
        assert!(cs_recover(&m, &op, &y, &cfg).is_err());
    }

    /// A prior whose gradient is numerically negligible: one expert with a
    /// gigantic variance. The soft-constrained engine then reduces to plain
    /// least squares on the measurements.
    fn flat_prior_model() -> RideModel {
        let mut m = unit_gaussian_model(4);
        m.mcgsm.log_precision[0] = -40.0;
        m
    }

    #[test]
    fn large_lambda_flat_prior_drives_down_the_residual() {
        let m = flat_prior_model();
        let truth = random_image(6, 6, 36);
        let op = MeasurementOperator::gaussian(36, 14, 37).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(38)).unwrap();
        let cfg = RecoveryConfig {
            iterations: 120,
            step_size: 5e-3,
            momentum: 0.0,
            lambda: 50.0,
            entropy_threshold: None,
            init: Init::Random { seed: 39 },
            ..RecoveryConfig::default()
        };
        let (_, trace) = cs_recover_noisy(&m, &op, &y, &cfg).unwrap();
        // Plain ascent on a quadratic: the residual decreases monotonically.
        for w in trace.residual.windows(2).skip(trace.len() / 2) {
            assert!(w[1] <= w[0] + 1e-12, "late residual rose: {} -> {}", w[0], w[1]);
        }
        assert!(trace.residual.last().unwrap() < &(0.05 * trace.residual[0]));
    }

    #[test]
    fn lambda_zero_ignores_measurements() {
        let m = textured_model(14);
        let op = MeasurementOperator::gaussian(25, 10, 40).unwrap();
        let img = random_image(5, 5, 41);
        let y1 = op.measure(&img, 0.0, &mut SeededRng::new(42)).unwrap();
        let mut y2 = y1.clone();
        for v in &mut y2.values {
            *v += 1.0;
        }
        let cfg = RecoveryConfig {
            iterations: 3,
            lambda: 0.0,
            entropy_threshold: None,
            init: Init::Random { seed: 43 },
            ..RecoveryConfig::default()
        };
        let (a, _) = cs_recover_noisy(&m, &op, &y1, &cfg).unwrap();
        let (b, _) = cs_recover_noisy(&m, &op, &y2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entropy_mask_never_touches_the_data_term() {
        // Threshold so small every prior gradient is masked; the data pull
        // must still move the iterate toward the measurements.
        let m = textured_model(15);
        let truth = random_image(5, 5, 44);
        let op = MeasurementOperator::gaussian(25, 12, 45).unwrap();
        let y = op.measure(&truth, 0.0, &mut SeededRng::new(46)).unwrap();
        let cfg = RecoveryConfig {
            iterations: 60,
            step_size: 5e-3,
            momentum: 0.0,
            lambda: 30.0,
            entropy_threshold: Some(1e-12),
            init: Init::Random { seed: 47 },
            ..RecoveryConfig::default()
        };
        let (_, trace) = cs_recover_noisy(&m, &op, &y, &cfg).unwrap();
        assert!(trace.masked_fraction.iter().all(|&f| f == 1.0));
        assert!(trace.residual.last().unwrap() < &(0.5 * trace.residual[0]));
    }

    #[test]
    fn trace_csv_shape() {
        let m = textured_model(16);
        let img = random_image(6, 6, 48);
        let mask = PixelMask::random(6, 6, 0.3, &mut SeededRng::new(49)).unwrap();
        let cfg = RecoveryConfig {
            iterations: 2,
            ..RecoveryConfig::default()
        };
        let (_, trace) = inpaint(&m, &img, &mask, &cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "iteration,log_prior,residual,masked_fraction");
    }
}
