//! Annealed Langevin predictor-corrector sampling in the frequency domain,
//! plus the deviation-identity and orthogonal-equivalence diagnostics.

use rand_chacha::ChaCha12Rng;

use crate::error::{CoreError, Result};
use crate::fft::{fft2c, ifft2c};
use crate::freq::FreqOperator;
use crate::grid::ComplexGrid;
use crate::rng::{noise_grid, substream};
use crate::score::{NoiseSchedule, ScoreModel};

pub const DEFAULT_STEP_RATIO: f64 = 0.075;

/// Sampler settings. The corrector step size at level i is
/// `step_ratio * (sigma_i / sigma_1)^2`, a constant per-level
/// signal-to-noise fraction, so the configured ratio is usable directly.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub step_ratio: f64,
    pub corrector_steps: usize,
    pub rng_seed: u64,
    /// Reverse-diffusion (variance-exploding) step between levels. Disable
    /// for a pure annealed-Langevin chain.
    pub predictor: bool,
    /// Run the correctors before instead of after the predictor per level.
    pub corrector_first: bool,
    /// Keep every n-th state when recording a trajectory.
    pub thinning: usize,
}

impl SamplerConfig {
    pub fn new(schedule: NoiseSchedule, rng_seed: u64) -> Self {
        Self {
            schedule,
            step_ratio: DEFAULT_STEP_RATIO,
            corrector_steps: 1,
            rng_seed,
            predictor: true,
            corrector_first: false,
            thinning: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_ratio > 0.0) {
            return Err(CoreError::InvalidInput("step_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Corrector step size at a level; positive and nonincreasing in i.
    pub fn eps(&self, level: usize) -> f64 {
        let s = self.schedule.sigma(level) / self.schedule.sigma(0);
        self.step_ratio * s * s
    }
}

/// Recorded chain states and the noise draws that produced them, thinned.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<ComplexGrid>,
    pub noises: Vec<ComplexGrid>,
    pub thinning: usize,
}

/// One Euler-Langevin update k + (eps/2) * score + sqrt(eps) * z.
pub fn langevin_step(
    k: &ComplexGrid,
    score: &dyn ScoreModel,
    sigma: f64,
    eps: f64,
    z: &ComplexGrid,
) -> Result<ComplexGrid> {
    if eps < 0.0 {
        return Err(CoreError::InvalidInput("negative step size".into()));
    }
    let s = score.evaluate(k, sigma);
    if !s.is_finite() {
        return Err(CoreError::Numerical(format!(
            "score output non-finite at sigma {sigma}"
        )));
    }
    Ok(k.axpy(0.5 * eps, &s).axpy(eps.sqrt(), z))
}

/// Reverse-diffusion predictor between adjacent levels.
fn predictor_step(
    k: &ComplexGrid,
    score: &dyn ScoreModel,
    sigma_from: f64,
    sigma_to: f64,
    z: &ComplexGrid,
) -> Result<ComplexGrid> {
    let delta = sigma_from * sigma_from - sigma_to * sigma_to;
    let s = score.evaluate(k, sigma_from);
    if !s.is_finite() {
        return Err(CoreError::Numerical(format!(
            "score output non-finite at sigma {sigma_from}"
        )));
    }
    Ok(k.axpy(delta, &s).axpy(delta.sqrt(), z))
}

fn check_tag(score: &dyn ScoreModel, operator: &FreqOperator) -> Result<()> {
    if let Some(tag) = score.operator_tag() {
        let expected = operator.tag();
        if *tag != expected {
            return Err(CoreError::TagMismatch(format!(
                "model trained under {tag:?} but sampling under {expected:?}"
            )));
        }
    }
    Ok(())
}

/// Run the annealed chain on an existing state with an explicit RNG.
/// `on_level` is called after each level completes.
pub(crate) fn anneal_chain(
    mut k: ComplexGrid,
    score: &dyn ScoreModel,
    cfg: &SamplerConfig,
    rng: &mut ChaCha12Rng,
    mut record: Option<&mut Trajectory>,
) -> Result<ComplexGrid> {
    cfg.validate()?;
    let (h, w) = k.shape();
    let sched = &cfg.schedule;
    let mut step_count = 0usize;
    let push = |state: &ComplexGrid, z: &ComplexGrid, count: &mut usize, rec: &mut Option<&mut Trajectory>| {
        if let Some(tr) = rec.as_deref_mut() {
            if *count % cfg.thinning.max(1) == 0 {
                tr.states.push(state.clone());
                tr.noises.push(z.clone());
            }
            *count += 1;
        }
    };
    for level in 0..sched.len() {
        let sigma = sched.sigma(level);
        let corrector = |k: &ComplexGrid, rng: &mut ChaCha12Rng, count: &mut usize, rec: &mut Option<&mut Trajectory>| -> Result<ComplexGrid> {
            let mut state = k.clone();
            for _ in 0..cfg.corrector_steps {
                let z = noise_grid(rng, h, w);
                state = langevin_step(&state, score, sigma, cfg.eps(level), &z)?;
                push(&state, &z, count, rec);
            }
            Ok(state)
        };
        if cfg.corrector_first {
            k = corrector(&k, rng, &mut step_count, &mut record)?;
            if cfg.predictor && level + 1 < sched.len() {
                let z = noise_grid(rng, h, w);
                k = predictor_step(&k, score, sigma, sched.sigma(level + 1), &z)?;
                push(&k, &z, &mut step_count, &mut record);
            }
        } else {
            if cfg.predictor && level > 0 {
                let z = noise_grid(rng, h, w);
                k = predictor_step(&k, score, sched.sigma(level - 1), sigma, &z)?;
                push(&k, &z, &mut step_count, &mut record);
            }
            k = corrector(&k, rng, &mut step_count, &mut record)?;
        }
        if !k.is_finite() {
            return Err(CoreError::Numerical(format!(
                "chain state non-finite at level {level} (sigma {sigma})"
            )));
        }
    }
    Ok(k)
}

/// Anneal from sigma_1 to sigma_N with M corrector steps per level, in the
/// domain of the given operator. The score's operator tag must match.
pub fn sample(
    init: &ComplexGrid,
    score: &dyn ScoreModel,
    cfg: &SamplerConfig,
    operator: &FreqOperator,
) -> Result<ComplexGrid> {
    check_tag(score, operator)?;
    let mut rng = substream(cfg.rng_seed, "sample");
    anneal_chain(init.clone(), score, cfg, &mut rng, None)
}

/// Like [`sample`] but records a thinned trajectory (initial state first).
pub fn sample_with_trajectory(
    init: &ComplexGrid,
    score: &dyn ScoreModel,
    cfg: &SamplerConfig,
    operator: &FreqOperator,
) -> Result<(ComplexGrid, Trajectory)> {
    check_tag(score, operator)?;
    let mut rng = substream(cfg.rng_seed, "sample");
    let mut tr = Trajectory {
        states: vec![init.clone()],
        noises: Vec::new(),
        thinning: cfg.thinning,
    };
    let out = anneal_chain(init.clone(), score, cfg, &mut rng, Some(&mut tr))?;
    Ok((out, tr))
}

/// Run the image-domain chain and the k-space chain with shared noise draws
/// and an image-domain score model; the k-space score is obtained through
/// the transform (score_k = F score_img F^-1) and the injected noise
/// through F[z]. Returns the max over steps of ||fft2c(x_t) - k_t||_inf,
/// which vanishes to rounding because the transform is unitary.
pub fn verify_orthogonal_equivalence(
    score_img: &dyn ScoreModel,
    shape: (usize, usize),
    steps: usize,
    sigma: f64,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    let (h, w) = shape;
    let mut rng = substream(seed, "appendix-a");
    let x0 = noise_grid(&mut rng, h, w);
    let mut x = x0.clone();
    let mut k = fft2c(&x0);
    let mut max_dev: f64 = fft2c(&x).linf_distance(&k);
    for _ in 0..steps {
        let z = noise_grid(&mut rng, h, w);
        x = langevin_step(&x, score_img, sigma, eps, &z)?;
        // k-space update with the transformed score and F[z].
        let s_k = fft2c(&score_img.evaluate(&ifft2c(&k), sigma));
        k = k.axpy(0.5 * eps, &s_k).axpy(eps.sqrt(), &fft2c(&z));
        max_dev = max_dev.max(fft2c(&x).linf_distance(&k));
    }
    Ok(max_dev)
}

/// Monte-Carlo estimates of the terms of the single-step deviation
/// identity: E||K* - K^{t-1}||^2 = C1 + eps E||z||^2 - 2 sqrt(eps) E<K*, z>.
#[derive(Debug, Clone, Copy)]
pub struct DeviationTerms {
    /// Mean squared deviation of the updated state from the target.
    pub lhs: f64,
    /// ||K* - K - (eps/2) s(K)||^2, the z-independent term.
    pub c1_term: f64,
    /// eps * mean ||z||^2.
    pub noise_term: f64,
    /// 2 sqrt(eps) * mean Re<K*, z>.
    pub corr_term: f64,
}

impl DeviationTerms {
    pub fn rhs_sum(&self) -> f64 {
        self.c1_term + self.noise_term - self.corr_term
    }
}

/// Estimate the deviation decomposition at a fixed state for a batch of
/// noise draws (which may be constructed correlated with the target).
pub fn deviation_decomposition(
    target: &ComplexGrid,
    state: &ComplexGrid,
    score: &dyn ScoreModel,
    sigma: f64,
    eps: f64,
    noise_draws: &[ComplexGrid],
) -> Result<DeviationTerms> {
    if noise_draws.is_empty() {
        return Err(CoreError::InvalidInput("deviation needs a nonempty noise batch".into()));
    }
    if target.shape() != state.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: target.shape(),
            got: state.shape(),
        });
    }
    let s = score.evaluate(state, sigma);
    let drifted = state.axpy(0.5 * eps, &s);
    let c1_term = target.sub(&drifted).norm_sqr();
    let n = noise_draws.len() as f64;
    let mut lhs = 0.0;
    let mut noise_power = 0.0;
    let mut corr = 0.0;
    for z in noise_draws {
        if z.shape() != state.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: state.shape(),
                got: z.shape(),
            });
        }
        let next = drifted.axpy(eps.sqrt(), z);
        lhs += target.sub(&next).norm_sqr();
        noise_power += z.norm_sqr();
        corr += target.inner_re(z);
    }
    Ok(DeviationTerms {
        lhs: lhs / n,
        c1_term,
        noise_term: eps * noise_power / n,
        corr_term: 2.0 * eps.sqrt() * corr / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::GaussianScoreOracle;

    fn oracle(h: usize, w: usize, v: f64, seed: u64) -> GaussianScoreOracle {
        let mut rng = substream(seed, "sampler-test-mean");
        GaussianScoreOracle::new(noise_grid(&mut rng, h, w), v).unwrap()
    }

    #[test]
    fn zero_eps_and_zero_inputs_are_identity() {
        let orc = oracle(4, 4, 0.5, 1);
        let mut rng = substream(2, "sampler-zero");
        let k = noise_grid(&mut rng, 4, 4);
        let z = noise_grid(&mut rng, 4, 4);
        let out = langevin_step(&k, &orc, 0.3, 0.0, &z).unwrap();
        assert!(out.linf_distance(&k) < 1e-15);

        struct Zero;
        impl ScoreModel for Zero {
            fn evaluate(&self, k: &ComplexGrid, _s: f64) -> ComplexGrid {
                ComplexGrid::zeros(k.height(), k.width())
            }
        }
        let zgrid = ComplexGrid::zeros(4, 4);
        let out = langevin_step(&k, &Zero, 0.3, 0.1, &zgrid).unwrap();
        assert!(out.linf_distance(&k) < 1e-15);
    }

    #[test]
    fn update_is_affine_in_score_and_noise() {
        // Superposition: the update with (a+b) noise equals update with a
        // plus the noise contribution of b.
        let orc = oracle(4, 4, 0.5, 3);
        let mut rng = substream(4, "sampler-affine");
        let k = noise_grid(&mut rng, 4, 4);
        let za = noise_grid(&mut rng, 4, 4);
        let zb = noise_grid(&mut rng, 4, 4);
        let eps = 0.02;
        let out_ab = langevin_step(&k, &orc, 0.3, eps, &za.add(&zb)).unwrap();
        let out_a = langevin_step(&k, &orc, 0.3, eps, &za).unwrap();
        let expect = out_a.axpy(eps.sqrt(), &zb);
        assert!(out_ab.linf_distance(&expect) < 1e-12);
    }

    #[test]
    fn fixed_sigma_chain_reaches_analytic_stationary_variance() {
        // Discretized Langevin chain at fixed sigma targets variance
        // V / (1 - eps/(4V)) per real component, V = v + sigma^2.
        let v = 0.09;
        let sigma = 0.4;
        let vtot = v + sigma * sigma;
        let eps = 0.5 * vtot;
        let mean = ComplexGrid::zeros(1, 2);
        let orc = GaussianScoreOracle::new(mean, v).unwrap();
        let mut rng = substream(9, "sampler-stationary");
        let mut k = ComplexGrid::zeros(1, 2);
        let burn = 500;
        let steps = 10_000;
        let mut acc = 0.0;
        for step in 0..burn + steps {
            let z = noise_grid(&mut rng, 1, 2);
            k = langevin_step(&k, &orc, sigma, eps, &z).unwrap();
            if step >= burn {
                acc += k.norm_sqr();
            }
        }
        let var = acc / (steps as f64 * 4.0); // 4 real components
        let expect = vtot / (1.0 - eps / (4.0 * vtot));
        assert!(
            (var - expect).abs() / expect < 0.05,
            "variance {var} vs {expect}"
        );
    }

    #[test]
    fn single_level_no_corrector_returns_init() {
        // N=1 is below the schedule minimum, so emulate with a 2-level
        // schedule, no predictor, zero corrector steps.
        let sched = NoiseSchedule::geometric(1.0, 0.5, 2).unwrap();
        let mut cfg = SamplerConfig::new(sched, 7);
        cfg.predictor = false;
        cfg.corrector_steps = 0;
        let orc = oracle(4, 4, 0.2, 5);
        let mut rng = substream(6, "sampler-noop");
        let init = noise_grid(&mut rng, 4, 4);
        let out = sample(&init, &orc, &cfg, &FreqOperator::Identity).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn sampling_is_seed_reproducible() {
        let sched = NoiseSchedule::geometric(1.0, 0.01, 30).unwrap();
        let cfg = SamplerConfig::new(sched, 11);
        let orc = oracle(6, 6, 0.1, 8);
        let mut rng = substream(7, "sampler-repro");
        let init = noise_grid(&mut rng, 6, 6);
        let a = sample(&init, &orc, &cfg, &FreqOperator::Identity).unwrap();
        let b = sample(&init, &orc, &cfg, &FreqOperator::Identity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annealed_mean_matches_oracle_mean() {
        // 40 replicas at modest size; the acceptance suite runs the full
        // 200-replica version.
        let v = 0.04;
        let orc = oracle(4, 4, v, 21);
        let sched = NoiseSchedule::geometric(1.0, 0.01, 60).unwrap();
        let replicas = 40;
        let mut acc = ComplexGrid::zeros(4, 4);
        for r in 0..replicas {
            let mut rng = substream(1000 + r, "sampler-mean");
            let init = noise_grid(&mut rng, 4, 4);
            let cfg = SamplerConfig::new(sched.clone(), 2000 + r);
            let out = sample(&init, &orc, &cfg, &FreqOperator::Identity).unwrap();
            acc = acc.add(&out);
        }
        let mean = acc.scale(1.0 / replicas as f64);
        // Component SE ~ sqrt((v + sigma_min^2) / replicas).
        let se = ((v + 0.0001) / replicas as f64).sqrt();
        let dev = mean.linf_distance(&orc.mean);
        assert!(dev < 4.0 * se, "deviation {dev} vs SE {se}");
    }

    #[test]
    fn trajectory_thinning_counts() {
        let sched = NoiseSchedule::geometric(1.0, 0.1, 10).unwrap();
        let mut cfg = SamplerConfig::new(sched, 3);
        cfg.thinning = 4;
        let orc = oracle(4, 4, 0.2, 9);
        let mut rng = substream(8, "sampler-traj");
        let init = noise_grid(&mut rng, 4, 4);
        let (_, tr) = sample_with_trajectory(&init, &orc, &cfg, &FreqOperator::Identity).unwrap();
        // Total updates: 9 predictors + 10 correctors = 19; every 4th kept,
        // plus the initial state.
        assert_eq!(tr.states.len(), 1 + 5);
        assert_eq!(tr.noises.len(), 5);
    }

    #[test]
    fn tag_mismatch_rejected() {
        use crate::freq::{CenterMask, OperatorTag};
        struct Tagged(OperatorTag);
        impl ScoreModel for Tagged {
            fn evaluate(&self, k: &ComplexGrid, _s: f64) -> ComplexGrid {
                ComplexGrid::zeros(k.height(), k.width())
            }
            fn operator_tag(&self) -> Option<&OperatorTag> {
                Some(&self.0)
            }
        }
        let sched = NoiseSchedule::geometric(1.0, 0.1, 5).unwrap();
        let cfg = SamplerConfig::new(sched, 0);
        let model = Tagged(OperatorTag::Mask { window: 8 });
        let init = ComplexGrid::zeros(8, 8);
        let op = FreqOperator::Mask(CenterMask::new(4, 8, 8).unwrap());
        assert!(matches!(
            sample(&init, &model, &cfg, &op),
            Err(CoreError::TagMismatch(_))
        ));
        let op_ok = FreqOperator::Mask(CenterMask::new(8, 8, 8).unwrap());
        assert!(sample(&init, &model, &cfg, &op_ok).is_ok());
    }

    #[test]
    fn orthogonal_equivalence_zero_steps() {
        let orc = oracle(8, 8, 0.2, 10);
        let dev = verify_orthogonal_equivalence(&orc, (8, 8), 0, 0.5, 0.01, 4).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn orthogonal_equivalence_hundred_steps() {
        let orc = oracle(8, 8, 0.2, 11);
        let dev = verify_orthogonal_equivalence(&orc, (8, 8), 100, 0.5, 0.02, 5).unwrap();
        assert!(dev < 1e-10, "deviation {dev}");
    }

    #[test]
    fn equivalence_invariant_under_mean_translation() {
        use num_complex::Complex64;
        // Translating the oracle mean moves both chains consistently.
        let mut rng = substream(12, "sampler-translate");
        let mean = noise_grid(&mut rng, 6, 6);
        let a = GaussianScoreOracle::new(mean.clone(), 0.3).unwrap();
        let shifted = GaussianScoreOracle::new(mean.map(|v| v + Complex64::new(2.0, -1.0)), 0.3)
            .unwrap();
        let d1 = verify_orthogonal_equivalence(&a, (6, 6), 50, 0.4, 0.02, 6).unwrap();
        let d2 = verify_orthogonal_equivalence(&shifted, (6, 6), 50, 0.4, 0.02, 6).unwrap();
        assert!(d1 < 1e-10 && d2 < 1e-10);
    }

    #[test]
    fn deviation_identity_holds_for_iid_draws() {
        let mut rng = substream(13, "sampler-dev");
        let target = noise_grid(&mut rng, 4, 4);
        let state = target.scale(0.5);
        let orc = GaussianScoreOracle::new(target.clone(), 0.04).unwrap();
        let draws: Vec<ComplexGrid> = (0..20_000).map(|_| noise_grid(&mut rng, 4, 4)).collect();
        let terms =
            deviation_decomposition(&target, &state, &orc, 0.5, 0.05, &draws).unwrap();
        let rel = (terms.lhs - terms.rhs_sum()).abs() / terms.lhs;
        assert!(rel < 0.01, "lhs {} rhs {}", terms.lhs, terms.rhs_sum());
        // corr term ~ 0 within 3 SE for independent draws.
        let se = 2.0 * 0.05_f64.sqrt() * target.norm_sqr().sqrt() / (draws.len() as f64).sqrt();
        assert!(terms.corr_term.abs() < 3.0 * se);
    }

    #[test]
    fn correlated_noise_reduces_deviation() {
        let mut rng = substream(14, "sampler-corr");
        let target = noise_grid(&mut rng, 4, 4);
        let state = target.scale(0.5);
        let orc = GaussianScoreOracle::new(target.clone(), 0.04).unwrap();
        let d = (2 * 4 * 4) as f64;
        let unit_target = target.scale(1.0 / target.norm_sqr().sqrt());
        let mut lhs_prev = f64::INFINITY;
        for alpha in [0.0, 0.3, 0.6] {
            let draws: Vec<ComplexGrid> = (0..5000)
                .map(|_| {
                    let xi = noise_grid(&mut rng, 4, 4);
                    unit_target
                        .scale(alpha * d.sqrt())
                        .axpy((1.0 - alpha * alpha).sqrt(), &xi)
                })
                .collect();
            let terms =
                deviation_decomposition(&target, &state, &orc, 0.5, 0.05, &draws).unwrap();
            if alpha > 0.0 {
                assert!(terms.corr_term > 0.0);
            }
            assert!(
                terms.lhs < lhs_prev,
                "alpha {alpha}: lhs {} not decreasing from {lhs_prev}",
                terms.lhs
            );
            lhs_prev = terms.lhs;
        }
    }

    #[test]
    fn empty_noise_batch_rejected() {
        let target = ComplexGrid::zeros(4, 4);
        let orc = GaussianScoreOracle::new(target.clone(), 0.1).unwrap();
        assert!(deviation_decomposition(&target, &target, &orc, 0.5, 0.1, &[]).is_err());
    }

    #[test]
    fn eps_sequence_nonincreasing_positive() {
        let sched = NoiseSchedule::geometric(1.0, 0.01, 100).unwrap();
        let cfg = SamplerConfig::new(sched, 0);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let e = cfg.eps(i);
            assert!(e > 0.0 && e <= prev);
            prev = e;
        }
        assert!((cfg.eps(0) - DEFAULT_STEP_RATIO).abs() < 1e-15);
    }
}
