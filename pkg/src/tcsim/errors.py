"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for all tcsim-specific failures."""


class ConfigError(SimulationError):
    """Invalid device parameters or configuration file."""


class PulseError(SimulationError):
    """Waveform or schedule construction failed (bad duration, grid mismatch)."""


class DdrInfeasibleError(PulseError):
    """No coupler frequency above both qubits can null the effective coupling."""


class ResonanceError(SimulationError):
    """A closed-form expression hit a vanishing detuning denominator."""


class NoOffPointError(SimulationError):
    """The requested search bracket contains no coupling zero crossing."""


class StateIdentificationError(SimulationError):
    """Dressed-state assignment by maximum overlap was ambiguous."""


class IntegratorError(SimulationError):
    """Fixed-step integration became unstable (norm or trace drift)."""


class CalibrationError(SimulationError):
    """A calibration loop failed to converge or had too little contrast."""


class NonadiabaticError(SimulationError):
    """Trajectory left the regime where phase bookkeeping is meaningful."""


class TomographyError(SimulationError):
    """Tomographic reconstruction hit a singular or mismatched system."""
