"""Desk-scale diffusion-inversion laboratory.

Implements dual-guided inversion (reference-guided noise correction
interleaved with fixed-point latent refinement) next to naive DDIM and
Picard fixed-point baselines, over analytically tractable denoisers,
and quantifies the latent-noise gap and the reconstruction gap.
"""

from .errors import (ContractError, DualinvError, InversionError,
                     NumericError, ParameterError, SamplingError, ShapeError,
                     TrainingError)
from .latent import Latent, check_same_shape
from .schedule import (NoiseSchedule, coeffs, ddim_invert_step_naive,
                       ddim_step, make_linear_schedule)
from .denoiser import (Conditioning, GaussianMixtureDenoiser, MlpDenoiser,
                       NULL, cfg_predict, cfg_predict_vjp, finite_diff_vjp,
                       init_mlp_denoiser, label_cond, load_mlp_denoiser,
                       predict, predict_vjp, save_mlp_denoiser,
                       timestep_embedding, train_mlp_denoiser)
from .inversion import (InversionConfig, InversionReport, ReferenceNoise,
                        TimestepRecord, dci_invert, ddim_invert,
                        edit_condition_swap, extract_reference,
                        fixed_point_loss, fixed_point_refine, picard_invert,
                        reconstruct, reference_correction, reference_loss)
from .metrics import GapSummary, gap_summary, noise_gap, psnr, recon_error, ssim
from .harness import (DatasetSpec, ExperimentConfig, Instance, ResultRow,
                      TrainSpec, config_from_mapping, emit_plots, load_config,
                      make_mixture, parse_config_file, renoise_with_trace,
                      run_edit_demo, run_experiment, run_sweep, synth_dataset)

__version__ = "0.1.0"
