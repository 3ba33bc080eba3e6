"""XY rotors under infinite-temperature diffusion on the circle.

Heat kernel, two-layer energies, conditioned ground states, Metropolis
sampling and a conditional-density probe, plus a CSV-emitting runner.
"""
__version__ = "0.1.0"

from .circle_kernel import (KernelEval, expansion, kernel, kernel_table, log_kernel, rest_constant,
                            sample_step, wrap)
from .lattice import (LatticeConfig, ModelParams, dynamical_energy, initial_energy, local_energy_delta,
                      mode_energy, read_snapshot, restricted_energy, write_snapshot, y_spec)
from .ground_state import (SitePotential, closed_form_window, find_maximizers, transition_window)
from .mc import ChainSpec, blocked, derive_seed, run_chain, symmetry_breaking_scan
from .probe import Region, badness_scan, conditional_density, exact_site_marginal

__all__ = [
    "KernelEval", "expansion", "kernel", "kernel_table", "log_kernel", "rest_constant", "sample_step", "wrap",
    "LatticeConfig", "ModelParams", "dynamical_energy", "initial_energy", "local_energy_delta", "mode_energy",
    "read_snapshot", "restricted_energy", "write_snapshot", "y_spec",
    "SitePotential", "closed_form_window", "find_maximizers", "transition_window",
    "ChainSpec", "blocked", "derive_seed", "run_chain", "symmetry_breaking_scan",
    "Region", "badness_scan", "conditional_density", "exact_site_marginal",
]
