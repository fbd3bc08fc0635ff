//! Shallow diffusion in normalised log-mel space.
//!
//! Restoration starts from the degraded mel noised to an intermediate step
//! `T < K` and runs deterministic DDIM updates back to step 0 with a small
//! conditional ε-predictor.

mod checkpoint;
mod cond;
mod denoiser;
mod loss;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_VERSION};
pub use cond::{Conditioning, MelNorm};
pub use denoiser::{DenoiserCache, DenoiserConfig, DenoiserParams};
pub use loss::{aux_losses, diffusion_loss, total_loss, LossParts, MelF0Estimator};
pub use sampler::{
    ddim_step, forward_noise, gaussian, predict_x0, restore, restore_traced, shallow_init, timesteps, EpsModel,
    OracleDenoiser,
};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use train::{Adam, TrainConfig, TrainExample, TrainItem, Trainer};
