"""Static device constants, flux-to-frequency maps and flux-line crosstalk.

All frequencies are ordinary frequencies in GHz (anharmonicities negative),
coherence times in microseconds, flux in units of the flux quantum.  Angular
2*pi factors appear only inside the dynamics integrator.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

MODE_INDEX = {"q1": 0, "c": 1, "q2": 2}


@dataclass(frozen=True)
class DeviceParams:
    """Single source of truth for the circuit constants.

    Per-mode tuples are ordered (Q1, C, Q2).  ``crosstalk_inv`` is the
    flux-line orthogonalization matrix in channel order (Q1, Q2, C); the raw
    crosstalk matrix is its inverse.
    """

    omega_max: tuple[float, float, float]
    eta: tuple[float, float, float]
    g1c: float
    g2c: float
    g12: float
    t1_us: tuple[float, float, float]
    t2_us: tuple[float, float, float]
    crosstalk_inv: np.ndarray = field(
        default_factory=lambda: np.eye(3)
    )
    readout_f_ground: tuple[float, float] = (0.95, 0.95)
    readout_f_excited: tuple[float, float] = (0.90, 0.90)
    gc_flux_scaling: bool = False

    def __post_init__(self):
        object.__setattr__(self, "omega_max", tuple(float(x) for x in self.omega_max))
        object.__setattr__(self, "eta", tuple(float(x) for x in self.eta))
        object.__setattr__(self, "t1_us", tuple(float(x) for x in self.t1_us))
        object.__setattr__(self, "t2_us", tuple(float(x) for x in self.t2_us))
        object.__setattr__(
            self, "crosstalk_inv", np.array(self.crosstalk_inv, dtype=float)
        )
        self.validate()

    def validate(self):
        problems = self.check()
        if problems:
            raise ConfigError("; ".join(problems))

    def check(self) -> list[str]:
        """Return a list of invariant violations (empty when valid)."""
        problems = []
        if any(w <= 0 for w in self.omega_max):
            problems.append("all maximum frequencies must be positive")
        if any(e >= 0 for e in self.eta):
            problems.append("anharmonicities must be negative")
        if self.g1c <= 0 or self.g2c <= 0 or self.g12 <= 0:
            problems.append("coupling strengths must be positive")
        for name, t1, t2 in zip(("Q1", "C", "Q2"), self.t1_us, self.t2_us):
            if t1 <= 0 or t2 <= 0:
                problems.append(f"{name}: coherence times must be positive")
            elif t2 > 2 * t1 + 1e-12:
                problems.append(f"{name}: T2={t2} exceeds 2*T1={2 * t1}")
        if self.crosstalk_inv.shape != (3, 3):
            problems.append("crosstalk_inv must be 3x3")
        elif abs(np.linalg.det(self.crosstalk_inv)) <= 1e-6:
            problems.append("crosstalk_inv is numerically singular")
        for f in (*self.readout_f_ground, *self.readout_f_excited):
            if not 0.5 < f <= 1.0:
                problems.append(f"readout fidelity {f} outside (0.5, 1]")
        return problems

    @property
    def couplings(self) -> dict[str, float]:
        return {"g1c": self.g1c, "g2c": self.g2c, "g12": self.g12}

    def sweet_spots(self) -> tuple[float, float, float]:
        return self.omega_max

    def to_dict(self) -> dict:
        return {
            "omega_max": list(self.omega_max),
            "eta": list(self.eta),
            "g1c": self.g1c,
            "g2c": self.g2c,
            "g12": self.g12,
            "t1_us": list(self.t1_us),
            "t2_us": list(self.t2_us),
            "crosstalk_inv": [list(row) for row in self.crosstalk_inv],
            "readout_f_ground": list(self.readout_f_ground),
            "readout_f_excited": list(self.readout_f_excited),
            "gc_flux_scaling": self.gc_flux_scaling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceParams":
        known = {
            "omega_max", "eta", "g1c", "g2c", "g12", "t1_us", "t2_us",
            "crosstalk_inv", "readout_f_ground", "readout_f_excited",
            "gc_flux_scaling",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown device keys: {sorted(unknown)}")
        missing = {"omega_max", "eta", "g1c", "g2c", "g12", "t1_us", "t2_us"} - set(d)
        if missing:
            raise ConfigError(f"missing device keys: {sorted(missing)}")
        return cls(**d)

    def with_overrides(self, **kwargs) -> "DeviceParams":
        return replace(self, **kwargs)


def load_device(source: str | Path) -> DeviceParams:
    """Load device parameters from a preset name or a YAML file path."""
    path = Path(source)
    if not path.exists():
        res = importlib.resources.files("tcsim") / "presets" / f"{source}.yaml"
        if not res.is_file():
            raise ConfigError(f"no device preset or file named {source!r}")
        text = res.read_text()
    else:
        text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse device config: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("device config must be a mapping")
    return DeviceParams.from_dict(data)


def save_device(params: DeviceParams, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(params.to_dict(), sort_keys=False))


def paper_device() -> DeviceParams:
    """The bundled preset mirroring the measured device table."""
    return load_device("paper_device")


def freq_from_flux(phi: float, omega_max: float, eta: float) -> float:
    """Mode frequency at flux bias ``phi`` (units of Phi0) on the main branch.

    Symmetric-junction transmon approximation with the anharmonicity standing
    in for the charging-energy offset:

        omega(phi) = (omega_max - eta) * sqrt(|cos(pi phi)|) + eta

    so omega(0) = omega_max and the map is strictly decreasing in |phi| on
    |phi| < 0.5.
    """
    phi = float(phi)
    if not np.isfinite(phi) or abs(phi) >= 0.5:
        raise ValueError(f"flux {phi} outside the monotone branch |phi| < 0.5")
    return (omega_max - eta) * np.sqrt(np.cos(np.pi * phi)) + eta


def flux_from_freq(target: float, omega_max: float, eta: float) -> float:
    """Positive-branch inverse of :func:`freq_from_flux`."""
    if not eta < target <= omega_max:
        raise ValueError(
            f"target {target} GHz unreachable; must satisfy {eta} < target <= {omega_max}"
        )
    r = (target - eta) / (omega_max - eta)
    return float(np.arccos(r * r) / np.pi)


def apply_crosstalk_correction(desired, crosstalk_inv) -> np.ndarray:
    """Physical flux commands realizing the desired per-channel fluxes.

    ``physical = crosstalk_inv @ desired``; sending ``physical`` through the
    raw crosstalk matrix (the inverse) recovers ``desired``.
    """
    m = np.asarray(crosstalk_inv, dtype=float)
    if m.shape != (3, 3):
        raise ConfigError("crosstalk matrix must be 3x3")
    if abs(np.linalg.det(m)) <= 1e-6:
        raise ConfigError("crosstalk matrix is numerically singular")
    return m @ np.asarray(desired, dtype=float)


def crosstalk_forward(physical, crosstalk_inv) -> np.ndarray:
    """Apply the raw crosstalk map (inverse of the orthogonalization)."""
    m = np.asarray(crosstalk_inv, dtype=float)
    return np.linalg.solve(m, np.asarray(physical, dtype=float))
