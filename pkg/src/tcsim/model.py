"""Multilevel Hamiltonian and closed-form quantities of the coupled circuit.

Covers the full three-mode Hamiltonian, the dispersive-regime formulas for
the dressed frequencies and the effective qubit-qubit coupling, the 2nd/3rd/
4th-order ZZ-crosstalk perturbation series, the exact-diagonalization ZZ, the
qubit-coupler dispersive shift and the coupler off-point search.

All returned energies are ordinary frequencies in GHz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import DeviceParams
from .errors import NoOffPointError, ResonanceError, StateIdentificationError
from .qspace import ModeLayout, embedded_ops

_MIN_DETUNING = 1e-9


@dataclass(frozen=True)
class FrequencyConfig:
    """Instantaneous mode frequencies (omega_1, omega_c, omega_2) in GHz."""

    omega: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if not all(np.isfinite(self.omega)):
            raise ValueError(f"non-finite frequencies {self.omega}")

    @property
    def omega_1(self) -> float:
        return self.omega[0]

    @property
    def omega_c(self) -> float:
        return self.omega[1]

    @property
    def omega_2(self) -> float:
        return self.omega[2]


def _freqs(freqs) -> FrequencyConfig:
    if isinstance(freqs, FrequencyConfig):
        return freqs
    return FrequencyConfig(tuple(freqs))


@dataclass(frozen=True)
class DetuningSet:
    """Pairwise detunings delta_1c, delta_2c, delta_12 in GHz."""

    delta_1c: float
    delta_2c: float
    delta_12: float

    @classmethod
    def from_freqs(cls, freqs) -> "DetuningSet":
        f = _freqs(freqs)
        return cls(
            delta_1c=f.omega_1 - f.omega_c,
            delta_2c=f.omega_2 - f.omega_c,
            delta_12=f.omega_1 - f.omega_2,
        )


def coupler_scaled_gs(params: DeviceParams, omega_c: float) -> tuple[float, float]:
    """Qubit-coupler couplings, optionally scaled with sqrt(omega_c/omega_c_max)."""
    if params.gc_flux_scaling:
        s = np.sqrt(max(omega_c, 0.0) / params.omega_max[1])
        return params.g1c * s, params.g2c * s
    return params.g1c, params.g2c


def build_hamiltonian(
    params: DeviceParams, freqs, layout: ModeLayout | None = None
) -> np.ndarray:
    """Full multilevel Hamiltonian, in GHz, on the composite space.

    H = sum_i [w_i n_i + (eta_i/2) n_i (n_i - 1)]
        + g_1c (a1+ ac + h.c.) + g_2c (a2+ ac + h.c.) + g_12 (a1+ a2 + h.c.)

    The vacuum energy is exactly zero and total excitation number commutes
    with H.
    """
    layout = layout or ModeLayout()
    f = _freqs(freqs)
    ops = embedded_ops(layout)
    dim = layout.dim
    h = np.zeros((dim, dim), dtype=complex)
    for m in range(3):
        _, _, n = ops[m]
        h += f.omega[m] * n + 0.5 * params.eta[m] * (n @ n - n)
    g1c, g2c = coupler_scaled_gs(params, f.omega_c)
    pairs = ((0, 1, g1c), (2, 1, g2c), (0, 2, params.g12))
    for i, j, g in pairs:
        ai, _, _ = ops[i]
        aj, _, _ = ops[j]
        h += g * (ai.conj().T @ aj + aj.conj().T @ ai)
    return h


def effective_coupling(params: DeviceParams, freqs) -> float:
    """Net qubit-qubit exchange strength in GHz.

    g_eff = g12 + (g1c g2c / 2) (1/Delta_1c + 1/Delta_2c); negative below the
    off point, positive above it when the coupler sits above both qubits.
    """
    f = _freqs(freqs)
    d = DetuningSet.from_freqs(f)
    if abs(d.delta_1c) < _MIN_DETUNING or abs(d.delta_2c) < _MIN_DETUNING:
        raise ResonanceError("qubit-coupler detuning vanishes; formula is singular")
    g1c, g2c = coupler_scaled_gs(params, f.omega_c)
    return params.g12 + 0.5 * g1c * g2c * (1.0 / d.delta_1c + 1.0 / d.delta_2c)


def dressed_frequencies(params: DeviceParams, freqs) -> tuple[float, float]:
    """Coupler-dressed qubit frequencies w_i + g_ic^2 / Delta_ic in GHz."""
    f = _freqs(freqs)
    d = DetuningSet.from_freqs(f)
    if abs(d.delta_1c) < _MIN_DETUNING or abs(d.delta_2c) < _MIN_DETUNING:
        raise ResonanceError("qubit-coupler detuning vanishes; formula is singular")
    g1c, g2c = coupler_scaled_gs(params, f.omega_c)
    return (
        f.omega_1 + g1c**2 / d.delta_1c,
        f.omega_2 + g2c**2 / d.delta_2c,
    )


@dataclass(frozen=True)
class ZZOrders:
    """Perturbative ZZ-crosstalk contributions in GHz."""

    xi2: float
    xi3: float
    xi4: float

    @property
    def total(self) -> float:
        return self.xi2 + self.xi3 + self.xi4


def zz_perturbative(params: DeviceParams, freqs) -> ZZOrders:
    """2nd, 3rd and 4th-order ZZ crosstalk between the detuned qubits.

    The direct-coupling term is dropped from the 4th order (g12 << g_ic).
    Raises :class:`ResonanceError` naming the offending denominator when a
    term hits a resonance.
    """
    f = _freqs(freqs)
    eta1, etac, eta2 = params.eta
    g1c, g2c = coupler_scaled_gs(params, f.omega_c)
    g12 = params.g12
    d = DetuningSet.from_freqs(f)
    d12, d21 = d.delta_12, -d.delta_12
    d1c, d2c = d.delta_1c, d.delta_2c

    denominators = {
        "Delta_12 + eta_1": d12 + eta1,
        "Delta_12 - eta_2": d12 - eta2,
        "Delta_21 - eta_1": d21 - eta1,
        "Delta_12": d12,
        "Delta_1c": d1c,
        "Delta_2c": d2c,
        "Delta_1c + Delta_2c - eta_c": d1c + d2c - etac,
    }
    for name, value in denominators.items():
        if abs(value) < _MIN_DETUNING:
            raise ResonanceError(f"perturbation series singular: {name} = 0")

    xi2 = 2.0 * g12**2 * (eta1 + eta2) / ((d12 + eta1) * (d12 - eta2))
    xi3 = 2.0 * g12 * g1c * g2c * (
        (2.0 / (d21 - eta1) - 1.0 / d21) / d2c
        + (2.0 / (d12 - eta2) - 1.0 / d12) / d1c
    )
    gg = (g1c * g2c) ** 2
    xi4 = (
        2.0 * gg / (d1c + d2c - etac) * (1.0 / d1c + 1.0 / d2c) ** 2
        + gg / d1c**2 * (2.0 / (d12 - eta2) - 1.0 / d12 - 1.0 / d2c)
        + gg / d2c**2 * (2.0 / (d21 - eta1) - 1.0 / d21 - 1.0 / d1c)
    )
    return ZZOrders(xi2=xi2, xi3=xi3, xi4=xi4)


def _dressed_energy(evals, evecs, layout: ModeLayout, labels, min_overlap=0.5):
    idx = layout.basis_index(labels)
    weights = np.abs(evecs[idx, :]) ** 2
    best = int(np.argmax(weights))
    if weights[best] < min_overlap:
        raise StateIdentificationError(
            f"dressed state for {labels} ambiguous (max overlap {weights[best]:.3f})"
        )
    return evals[best]


def zz_exact(params: DeviceParams, freqs, layout: ModeLayout | None = None) -> float:
    """Exact ZZ crosstalk E(101) - E(100) - E(001) + E(000) in GHz.

    Dressed eigenstates are identified by maximum overlap with the bare basis
    states (coupler in its ground state); ambiguous assignments raise
    :class:`StateIdentificationError`.
    """
    layout = layout or ModeLayout()
    h = build_hamiltonian(params, freqs, layout)
    evals, evecs = np.linalg.eigh(h)
    e101 = _dressed_energy(evals, evecs, layout, (1, 0, 1))
    e100 = _dressed_energy(evals, evecs, layout, (1, 0, 0))
    e001 = _dressed_energy(evals, evecs, layout, (0, 0, 1))
    e000 = _dressed_energy(evals, evecs, layout, (0, 0, 0))
    return float(e101 - e100 - e001 + e000)


def exact_swap_coupling(
    params: DeviceParams, freqs, layout: ModeLayout | None = None
) -> float:
    """Signed half-splitting of the dressed single-excitation qubit pair.

    On qubit-qubit resonance the dressed states are the symmetric and
    antisymmetric combinations of |100> and |001>; their half energy
    difference is the exact exchange coupling that the dispersive formula
    approximates.
    """
    layout = layout or ModeLayout()
    h = build_hamiltonian(params, freqs, layout)
    evals, evecs = np.linalg.eigh(h)
    i100 = layout.basis_index((1, 0, 0))
    i001 = layout.basis_index((0, 0, 1))
    sym = np.zeros(layout.dim, dtype=complex)
    sym[i100] = sym[i001] = 1.0 / np.sqrt(2.0)
    anti = np.zeros(layout.dim, dtype=complex)
    anti[i100], anti[i001] = 1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0)
    w_sym = np.abs(evecs.conj().T @ sym) ** 2
    w_anti = np.abs(evecs.conj().T @ anti) ** 2
    k_sym = int(np.argmax(w_sym))
    k_anti = int(np.argmax(w_anti))
    if k_sym == k_anti or w_sym[k_sym] < 0.5 or w_anti[k_anti] < 0.5:
        raise StateIdentificationError("symmetric/antisymmetric assignment ambiguous")
    return float(0.5 * (evals[k_sym] - evals[k_anti]))


def dispersive_shift(params: DeviceParams, freqs, qubit_index: int) -> float:
    """Frequency shift of qubit ``qubit_index`` (0 or 1) per coupler excitation.

    chi_ic = g_ic^2 (eta_i + eta_c) / [2 (Delta_ic - eta_c)(Delta_ic + eta_i)]
    """
    f = _freqs(freqs)
    if qubit_index not in (0, 1):
        raise ValueError("qubit_index must be 0 (Q1) or 1 (Q2)")
    mode = 0 if qubit_index == 0 else 2
    eta_i = params.eta[mode]
    eta_c = params.eta[1]
    g1c, g2c = coupler_scaled_gs(params, f.omega_c)
    g = g1c if qubit_index == 0 else g2c
    delta = f.omega[mode] - f.omega_c
    if abs(delta - eta_c) < _MIN_DETUNING or abs(delta + eta_i) < _MIN_DETUNING:
        raise ResonanceError("dispersive-shift formula hits a pole")
    return g**2 * (eta_i + eta_c) / (2.0 * (delta - eta_c) * (delta + eta_i))


def find_coupler_off(
    params: DeviceParams,
    qubit_freqs: tuple[float, float],
    criterion: str = "swap",
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-6,
    layout: ModeLayout | None = None,
) -> float:
    """Coupler frequency that nulls the chosen coupling measure, by bisection.

    criterion:
        "swap"       -- dispersive-formula effective coupling (closed form)
        "swap-exact" -- exact single-excitation splitting (resonant qubits)
        "zz-exact"   -- exact-diagonalization ZZ crosstalk

    ``tol`` is the frequency resolution in GHz (default 1 kHz).
    """
    w1, w2 = qubit_freqs
    if bracket is None:
        bracket = (max(w1, w2) + 0.3, params.omega_max[1])
    lo, hi = bracket
    if not lo < hi:
        raise NoOffPointError(f"empty bracket {bracket}")

    if criterion == "swap":
        func = lambda wc: effective_coupling(params, (w1, wc, w2))
    elif criterion == "swap-exact":
        func = lambda wc: exact_swap_coupling(params, (w1, wc, w2), layout)
    elif criterion == "zz-exact":
        func = lambda wc: zz_exact(params, (w1, wc, w2), layout)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")

    f_lo, f_hi = func(lo), func(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoOffPointError(
            f"no sign change of {criterion} coupling on [{lo:.4f}, {hi:.4f}] GHz"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = func(mid)
        if f_mid == 0.0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)
