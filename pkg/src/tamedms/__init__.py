"""Tamed Milstein-type scheme for SDEs with Markovian switching."""
from .chain import (ChainPath, GeneratorMatrix, interval_jump_info, jump_count_statistics,
                    sample_chain_path, state_at, validate_generator)
from .convergence import (ConvergenceReport, ExperimentConfig, ablation_study, fit_order,
                          run_diagnostics, run_experiment)
from .model import ModelSpec, get_model, tamed_drift
from .noise import BrownianGrid, coarse_increment, generate_brownian, iterated_integrals, value_at
from .scheme import (StepInputs, Trajectory, reference_solution, simulate, tamed_milstein_step)

__version__ = "0.1.0"
