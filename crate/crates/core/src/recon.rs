//! Full reconstruction: dual-branch frequency-domain sampling with
//! serial/parallel combination, data consistency, and Hankel low-rank
//! projection applied per noise level.

use ndarray::Array2;
use num_complex::Complex64;
use rand_chacha::ChaCha12Rng;

use crate::error::{CoreError, Result};
use crate::fft::ifft2c_stack;
use crate::freq::{apply_highpass, apply_weight, unapply_weight, CenterMask, FreqOperator, WeightMatrix};
use crate::grid::{sos_combine, CoilStack, ComplexGrid, Domain, RealGrid};
use crate::hankel::hankel_project;
use crate::mask::SamplingMask;
use crate::rng::{noise_grid, substream};
use crate::sampler::{langevin_step, SamplerConfig};
use crate::score::ScoreModel;

/// How the two high-frequency branches are merged each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// Weight branch output, unweighted and re-extracted by the center
    /// mask, feeds the mask branch; the mask branch output is the merge.
    Serial,
    /// Convex combination of the two branch outputs.
    Parallel,
}

#[derive(Debug, Clone)]
pub struct ReconConfig {
    pub mode: CombineMode,
    pub mu1: f64,
    pub mu2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Data-consistency weight; infinity replaces measured entries exactly.
    pub dc_lambda: f64,
    pub hankel_window: (usize, usize),
    pub hankel_rank: usize,
    /// Annealing levels; must equal the sampler schedule length.
    pub outer_iters: usize,
    /// Apply combine + DC + Hankel every level instead of only at the end.
    pub interleaved: bool,
    /// Serial mode as a pure operator composition (no mask-branch
    /// refinement of the re-extracted input).
    pub serial_operator_only: bool,
}

impl ReconConfig {
    /// Defaults scaled from the 64x64 reference: window (6,6), rank 24.
    pub fn default_for(height: usize, width: usize) -> Self {
        let side = height.min(width);
        let win = ((6.0 * side as f64 / 64.0).round() as usize).max(2);
        let rank = ((win * win) as f64 * 2.0 / 3.0).round() as usize;
        Self {
            mode: CombineMode::Serial,
            mu1: 1.0,
            mu2: 1.0,
            lambda1: 0.5,
            lambda2: 0.5,
            dc_lambda: f64::INFINITY,
            hankel_window: (win, win),
            hankel_rank: rank.max(1),
            outer_iters: 100,
            interleaved: true,
            serial_operator_only: false,
        }
    }

    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        let (h, w) = shape;
        let (a, b) = self.hankel_window;
        if a == 0 || b == 0 || a > h || b > w {
            return Err(CoreError::InvalidInput(format!(
                "hankel window {a}x{b} invalid for grid {h}x{w}"
            )));
        }
        let min_dim = (a * b).min((h - a + 1) * (w - b + 1));
        if self.hankel_rank == 0 || self.hankel_rank > min_dim {
            return Err(CoreError::InvalidInput(format!(
                "hankel rank {} outside [1, {min_dim}]",
                self.hankel_rank
            )));
        }
        if self.mode == CombineMode::Parallel
            && (self.lambda1 + self.lambda2 - 1.0).abs() > 1e-9
        {
            return Err(CoreError::InvalidInput(format!(
                "parallel weights must sum to 1, got {} + {}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.dc_lambda > 0.0) {
            return Err(CoreError::InvalidInput(
                "dc_lambda must be positive (or infinity)".into(),
            ));
        }
        if self.outer_iters == 0 {
            return Err(CoreError::InvalidInput("outer_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Acquired k-space values (zero off the sampling set) with their mask.
#[derive(Debug, Clone)]
pub struct Measurement {
    f: CoilStack,
    mask: SamplingMask,
}

impl Measurement {
    pub fn new(f: CoilStack, mask: SamplingMask) -> Result<Self> {
        if f.domain() != Domain::KSpace {
            return Err(CoreError::DomainMisuse(
                "measurement stack must be k-space tagged".into(),
            ));
        }
        if f.grid_shape() != mask.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: mask.shape(),
                got: f.grid_shape(),
            });
        }
        for coil in f.coils() {
            for (v, &m) in coil.array().iter().zip(mask.omega.iter()) {
                if !m && (v.re != 0.0 || v.im != 0.0) {
                    return Err(CoreError::InvalidInput(
                        "measurement has nonzero values off the sampling set".into(),
                    ));
                }
            }
        }
        Ok(Self { f, mask })
    }

    /// Acquire an image-domain stack: transform to k-space and under-sample.
    pub fn from_image(stack: &CoilStack, mask: SamplingMask) -> Result<Self> {
        if stack.domain() != Domain::Image {
            return Err(CoreError::DomainMisuse(
                "from_image expects an image-domain stack".into(),
            ));
        }
        let full = crate::fft::fft2c_stack(stack);
        let coils = full
            .coils()
            .iter()
            .map(|c| {
                let mut data = c.array().clone();
                data.zip_mut_with(&mask.omega, |v, &m| {
                    if !m {
                        *v = Complex64::new(0.0, 0.0);
                    }
                });
                ComplexGrid::from_array(data)
            })
            .collect();
        Ok(Self {
            f: CoilStack::new(coils, Domain::KSpace)?,
            mask,
        })
    }

    pub fn stack(&self) -> &CoilStack {
        &self.f
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.f.grid_shape()
    }
}

/// Inverse transform of the measurement with unmeasured entries left zero.
pub fn zero_filled(meas: &Measurement) -> Result<(CoilStack, RealGrid)> {
    let images = ifft2c_stack(meas.stack());
    let sos = sos_combine(&images)?;
    Ok((images, sos))
}

/// Eq-16 style merge of the two branch outputs. Serial is the pure operator
/// reading (mu2 * highpass(mu1 * kw)); the full pipeline instead feeds the
/// re-extracted input through the mask-branch sampler.
pub fn combine(
    kw: &ComplexGrid,
    km: &ComplexGrid,
    mask: &CenterMask,
    cfg: &ReconConfig,
) -> Result<ComplexGrid> {
    if kw.shape() != km.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: kw.shape(),
            got: km.shape(),
        });
    }
    match cfg.mode {
        CombineMode::Serial => apply_highpass(&kw.scale(cfg.mu1), mask).map(|g| g.scale(cfg.mu2)),
        CombineMode::Parallel => Ok(kw.scale(cfg.lambda1).axpy(cfg.lambda2, km)),
    }
}

/// Pull measured entries toward the acquisition; off the sampling set the
/// input passes through untouched. Infinite weight replaces exactly.
pub fn data_consistency(
    k: &ComplexGrid,
    f: &ComplexGrid,
    omega: &Array2<bool>,
    dc_lambda: f64,
) -> Result<ComplexGrid> {
    if !(dc_lambda > 0.0) {
        return Err(CoreError::InvalidInput(
            "dc_lambda must be positive (or infinity)".into(),
        ));
    }
    if k.shape() != f.shape() || omega.dim() != k.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: k.shape(),
            got: f.shape(),
        });
    }
    let mut out = k.array().clone();
    if dc_lambda.is_infinite() {
        for ((v, &m), fv) in out.iter_mut().zip(omega.iter()).zip(f.array().iter()) {
            if m {
                *v = *fv;
            }
        }
    } else {
        let denom = 1.0 + dc_lambda;
        for ((v, &m), fv) in out.iter_mut().zip(omega.iter()).zip(f.array().iter()) {
            if m {
                *v = (*v + fv * dc_lambda) / denom;
            }
        }
    }
    Ok(ComplexGrid::from_array(out))
}

/// Final outputs in the measurement's original units.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub kspace: CoilStack,
    pub images: CoilStack,
    pub sos: RealGrid,
}

/// Per-level callback with the current per-coil k-space estimates
/// (original units).
pub type ReconObserver<'a> = &'a mut dyn FnMut(usize, &[ComplexGrid]);

enum Branches<'a> {
    Dual {
        score_w: &'a dyn ScoreModel,
        wm: WeightMatrix,
        score_m: &'a dyn ScoreModel,
        cm: CenterMask,
    },
    Single {
        score: &'a dyn ScoreModel,
        op: FreqOperator,
    },
}

struct CoilState {
    k: ComplexGrid,
    weight_state: ComplexGrid,
    mask_state: ComplexGrid,
    rng_w: ChaCha12Rng,
    rng_m: ChaCha12Rng,
}

fn check_model_shape(score: &dyn ScoreModel, shape: (usize, usize)) -> Result<()> {
    if let Some(s) = score.expected_shape() {
        if s != shape {
            return Err(CoreError::ShapeMismatch {
                expected: s,
                got: shape,
            });
        }
    }
    Ok(())
}

/// Predictor (between levels) plus M corrector steps at the level.
fn level_update(
    state: ComplexGrid,
    score: &dyn ScoreModel,
    level: usize,
    scfg: &SamplerConfig,
    rng: &mut ChaCha12Rng,
) -> Result<ComplexGrid> {
    let (h, w) = state.shape();
    let sched = &scfg.schedule;
    let sigma = sched.sigma(level);
    let mut k = state;
    if scfg.predictor && level > 0 {
        let from = sched.sigma(level - 1);
        let delta = from * from - sigma * sigma;
        let s = score.evaluate(&k, from);
        if !s.is_finite() {
            return Err(CoreError::Numerical(format!(
                "score output non-finite at sigma {from}"
            )));
        }
        let z = noise_grid(rng, h, w);
        k = k.axpy(delta, &s).axpy(delta.sqrt(), &z);
    }
    for _ in 0..scfg.corrector_steps {
        let z = noise_grid(rng, h, w);
        k = langevin_step(&k, score, sigma, scfg.eps(level), &z)?;
    }
    Ok(k)
}

fn run_chain(
    meas: &Measurement,
    branches: &Branches,
    cfg: &ReconConfig,
    scfg: &SamplerConfig,
    mut observer: Option<ReconObserver>,
) -> Result<Reconstruction> {
    let shape = meas.grid_shape();
    cfg.validate(shape)?;
    scfg.validate()?;
    if scfg.schedule.len() != cfg.outer_iters {
        return Err(CoreError::InvalidInput(format!(
            "outer_iters {} disagrees with the sampler schedule length {}",
            cfg.outer_iters,
            scfg.schedule.len()
        )));
    }
    match branches {
        Branches::Dual { score_w, score_m, .. } => {
            check_model_shape(*score_w, shape)?;
            check_model_shape(*score_m, shape)?;
        }
        Branches::Single { score, .. } => check_model_shape(*score, shape)?,
    }

    let (h, w) = shape;
    let omega = &meas.mask().omega;
    let scale = {
        let m = meas.stack().max_abs();
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let sigma_init = scfg.schedule.sigma(0);

    let mut coils: Vec<CoilState> = meas
        .stack()
        .coils()
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let mut rng_init = substream(scfg.rng_seed, &format!("recon/coil{c}/init"));
            CoilState {
                k: f.scale(1.0 / scale),
                weight_state: noise_grid(&mut rng_init, h, w).scale(sigma_init),
                mask_state: noise_grid(&mut rng_init, h, w).scale(sigma_init),
                rng_w: substream(scfg.rng_seed, &format!("recon/coil{c}/weight")),
                rng_m: substream(scfg.rng_seed, &format!("recon/coil{c}/mask")),
            }
        })
        .collect();
    let f_norm: Vec<ComplexGrid> = meas
        .stack()
        .coils()
        .iter()
        .map(|f| f.scale(1.0 / scale))
        .collect();

    let levels = scfg.schedule.len();
    for level in 0..levels {
        for (state, f) in coils.iter_mut().zip(&f_norm) {
            let combined = match branches {
                Branches::Dual {
                    score_w,
                    wm,
                    score_m,
                    cm,
                } => {
                    state.weight_state =
                        level_update(state.weight_state.clone(), *score_w, level, scfg, &mut state.rng_w)?;
                    let kw = unapply_weight(&state.weight_state, wm)?;
                    match cfg.mode {
                        CombineMode::Serial => {
                            if cfg.serial_operator_only {
                                combine(&kw, &state.mask_state, cm, cfg)?
                            } else {
                                // Re-extraction feeds the mask-branch sampler.
                                let mut km = apply_highpass(&kw.scale(cfg.mu1), cm)?;
                                let sigma = scfg.schedule.sigma(level);
                                for _ in 0..scfg.corrector_steps {
                                    let z = noise_grid(&mut state.rng_m, h, w);
                                    km = langevin_step(&km, *score_m, sigma, scfg.eps(level), &z)?;
                                }
                                state.mask_state = km.clone();
                                km.scale(cfg.mu2)
                            }
                        }
                        CombineMode::Parallel => {
                            state.mask_state =
                                level_update(state.mask_state.clone(), *score_m, level, scfg, &mut state.rng_m)?;
                            kw.scale(cfg.lambda1).axpy(cfg.lambda2, &state.mask_state)
                        }
                    }
                }
                Branches::Single { score, op } => {
                    state.weight_state =
                        level_update(state.weight_state.clone(), *score, level, scfg, &mut state.rng_w)?;
                    match op {
                        FreqOperator::Weight(wm) => unapply_weight(&state.weight_state, wm)?,
                        _ => state.weight_state.clone(),
                    }
                }
            };
            if cfg.interleaved || level + 1 == levels {
                let k = data_consistency(&combined, f, omega, cfg.dc_lambda)?;
                let projected = hankel_project(&k, cfg.hankel_window, cfg.hankel_rank)?;
                state.k = data_consistency(&projected, f, omega, cfg.dc_lambda)?;
                if !state.k.is_finite() {
                    return Err(CoreError::Numerical(format!(
                        "reconstruction state non-finite at level {level}"
                    )));
                }
                // Refresh the chains from the corrected estimate.
                match branches {
                    Branches::Dual { wm, cm, .. } => {
                        state.weight_state = apply_weight(&state.k, wm)?;
                        if cfg.mode == CombineMode::Parallel {
                            state.mask_state = apply_highpass(&state.k, cm)?;
                        }
                    }
                    Branches::Single { op, .. } => {
                        state.weight_state = op.apply(&state.k)?;
                    }
                }
            }
        }
        if let Some(obs) = observer.as_deref_mut() {
            let snapshot: Vec<ComplexGrid> = coils.iter().map(|s| s.k.scale(scale)).collect();
            obs(level, &snapshot);
        }
    }

    // Back to original units; the last data-consistency pass runs against
    // the original measurement so sampled entries are bit-exact at
    // dc_lambda = infinity.
    let final_coils: Vec<ComplexGrid> = coils
        .iter()
        .zip(meas.stack().coils())
        .map(|(state, f_orig)| data_consistency(&state.k.scale(scale), f_orig, omega, cfg.dc_lambda))
        .collect::<Result<_>>()?;
    let kspace = CoilStack::new(final_coils, Domain::KSpace)?;
    let images = ifft2c_stack(&kspace);
    let sos = sos_combine(&images)?;
    Ok(Reconstruction {
        kspace,
        images,
        sos,
    })
}

fn dual_branches<'a>(
    meas: &Measurement,
    score_w: &'a dyn ScoreModel,
    score_m: &'a dyn ScoreModel,
) -> Result<Branches<'a>> {
    let (h, w) = meas.grid_shape();
    let wtag = score_w.operator_tag().ok_or_else(|| {
        CoreError::TagMismatch("weight-branch model carries no operator tag".into())
    })?;
    if !wtag.is_weight() {
        return Err(CoreError::TagMismatch(format!(
            "weight-branch model is tagged {wtag:?}"
        )));
    }
    let mtag = score_m.operator_tag().ok_or_else(|| {
        CoreError::TagMismatch("mask-branch model carries no operator tag".into())
    })?;
    if !mtag.is_mask() {
        return Err(CoreError::TagMismatch(format!(
            "mask-branch model is tagged {mtag:?}"
        )));
    }
    let wm = match FreqOperator::from_tag(wtag, h, w)? {
        FreqOperator::Weight(wm) => wm,
        _ => unreachable!(),
    };
    let cm = match FreqOperator::from_tag(mtag, h, w)? {
        FreqOperator::Mask(cm) => cm,
        _ => unreachable!(),
    };
    Ok(Branches::Dual {
        score_w,
        wm,
        score_m,
        cm,
    })
}

/// Full dual-branch reconstruction. Operators are rebuilt from the models'
/// checkpoint tags, which must pair a weight-tagged and a mask-tagged model.
pub fn reconstruct(
    meas: &Measurement,
    score_w: &dyn ScoreModel,
    score_m: &dyn ScoreModel,
    cfg: &ReconConfig,
    sampler_cfg: &SamplerConfig,
) -> Result<Reconstruction> {
    let branches = dual_branches(meas, score_w, score_m)?;
    run_chain(meas, &branches, cfg, sampler_cfg, None)
}

/// [`reconstruct`] with a per-level observer (convergence studies).
pub fn reconstruct_with_observer(
    meas: &Measurement,
    score_w: &dyn ScoreModel,
    score_m: &dyn ScoreModel,
    cfg: &ReconConfig,
    sampler_cfg: &SamplerConfig,
    observer: ReconObserver,
) -> Result<Reconstruction> {
    let branches = dual_branches(meas, score_w, score_m)?;
    run_chain(meas, &branches, cfg, sampler_cfg, Some(observer))
}

/// Single-operator ablation chain (weight-only, mask-only, or raw k-space).
/// The model's tag, when present, must match the operator.
pub fn reconstruct_single(
    meas: &Measurement,
    score: &dyn ScoreModel,
    operator: &FreqOperator,
    cfg: &ReconConfig,
    sampler_cfg: &SamplerConfig,
    observer: Option<ReconObserver>,
) -> Result<Reconstruction> {
    if let Some(tag) = score.operator_tag() {
        if *tag != operator.tag() {
            return Err(CoreError::TagMismatch(format!(
                "model trained under {tag:?} but reconstructing under {:?}",
                operator.tag()
            )));
        }
    }
    let branches = Branches::Single {
        score,
        op: operator.clone(),
    };
    run_chain(meas, &branches, cfg, sampler_cfg, observer)
}
