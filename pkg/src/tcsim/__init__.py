"""Pulse-level simulator and calibration toolkit for a tunable-coupler circuit.

Two fixed-frequency-operated Xmon qubits exchange excitations both directly
and through a flux-tunable coupler mode; the competition between the two
paths lets the net coupling be tuned through zero.  This package reproduces
that physics at desk scale: closed-form coupling and ZZ-crosstalk formulas,
exact diagonalization, master-equation pulse simulation, controlled-phase
gate construction in the dynamically decoupled regime, process tomography,
randomized benchmarking and derivative-free pulse optimization.
"""

from .device import DeviceParams, load_device, paper_device
from .model import (
    FrequencyConfig,
    build_hamiltonian,
    dispersive_shift,
    dressed_frequencies,
    effective_coupling,
    find_coupler_off,
    zz_exact,
    zz_perturbative,
)
from .pulse import ChannelWaveform, DragParams, PulseSchedule
from .qspace import ModeLayout, SystemState

__version__ = "0.1.0"

__all__ = [
    "DeviceParams",
    "load_device",
    "paper_device",
    "FrequencyConfig",
    "build_hamiltonian",
    "dispersive_shift",
    "dressed_frequencies",
    "effective_coupling",
    "find_coupler_off",
    "zz_exact",
    "zz_perturbative",
    "ChannelWaveform",
    "DragParams",
    "PulseSchedule",
    "ModeLayout",
    "SystemState",
    "__version__",
]
