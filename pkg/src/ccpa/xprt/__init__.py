from .config import ExperimentConfig, load_config
from .experiments import (allocate, build_spec, ccdf, ccdf_knee, load_channels, papr_samples,
                          run_decoder_exit, run_exit_surface, run_fit_j, run_optimize, run_papr,
                          run_sweep, run_trajectory)
