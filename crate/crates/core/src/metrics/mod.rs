//! Objective quality and similarity measures for shifted or restored audio.

mod corpus;
mod kernel;
mod pairwise;
mod report;

pub use corpus::{aggregate, evaluate_dirs, CorpusReport, PairReport, Summary};
pub use kernel::{kid_poly, mmd_rbf, mmd_rbf_biased, poly_kernel, rbf_kernel};
pub use pairwise::{
    f0_rmse_cents, log_f0_rmse, lsd, mel_mfcc_distance, mel_spectral_convergence, mfcc_distance, si_sdr,
    spectral_convergence, vuv_error, N_MFCC, SI_SDR_CAP_DB,
};
pub use report::{evaluate_pair, EvalConfig, MetricsReport};
