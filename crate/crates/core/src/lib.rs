//! Multi-frequency diffusion reconstruction of under-sampled MRI k-space.
//!
//! The crate provides the pieces of a frequency-domain annealed-Langevin
//! reconstruction pipeline: centered unitary FFTs and coil handling,
//! high-frequency prior extractors (radial weighting and center masking),
//! a noise-conditional score interface with an exact Gaussian oracle and a
//! small trainable denoiser, predictor-corrector sampling in k-space,
//! serial/parallel prior combination with data consistency and Hankel
//! low-rank projection, plus phantom/mask generation, metrics, and
//! portable array serialization for the batch CLI.

pub mod denoiser;
pub mod error;
pub mod fft;
pub mod freq;
pub mod grid;
pub mod hankel;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampler;
pub mod score;

pub use error::{CoreError, Result};
pub use fft::{dc_index, fft2c, fft2c_stack, ifft2c, ifft2c_stack};
pub use freq::{
    apply_highpass, apply_weight, correlation, feature_map, unapply_weight, CenterMask,
    CoordScale, FreqOperator, OperatorTag, WeightMatrix,
};
pub use grid::{sos_combine, CoilStack, ComplexGrid, Domain, RealGrid};
pub use hankel::{hankel_lift, hankel_project, hankel_unlift, lift_singular_values};
pub use mask::{make_mask, MaskPattern, SamplingMask};
pub use denoiser::{dsm_loss, train, ScheduleSpec, TrainConfig, TrainReport, TrainableScore};
pub use io::{
    append_metrics, read_array, read_mask, write_array, write_mask, write_pgm, ArrayFile,
    MetricsRow, METRICS_CSV_HEADER,
};
pub use metrics::{mse, psnr, ssim, ssim_with_range};
pub use phantom::{coil_sensitivities, make_phantom, PhantomConfig, PhantomKind};
pub use recon::{
    combine, data_consistency, reconstruct, reconstruct_single, reconstruct_with_observer,
    zero_filled, CombineMode, Measurement, ReconConfig, ReconObserver, Reconstruction,
};
pub use sampler::{
    deviation_decomposition, langevin_step, sample, sample_with_trajectory,
    verify_orthogonal_equivalence, DeviationTerms, SamplerConfig, Trajectory,
};
pub use score::{GaussianScoreOracle, NoiseSchedule, ScoreModel};
