"""Fixed-step RK4 integration cores for Schrodinger and Lindblad dynamics.

Two interchangeable backends provide the same three entry points:

* ``rk4_schrodinger(h_const, h_terms, coeffs, psi0, dt, record_idx)``
* ``rk4_lindblad(h_const, h_terms, coeffs, rho0, c_ops, dt, record_idx)``
* ``rk4_schrodinger_states(...)`` (records the full state at every node)

``h_const`` and the ``h_terms`` stack are constant Hermitian matrices in
angular units (rad/ns); ``coeffs[k, j]`` holds the dimensionless scalar of
term k at substep j, sampled at t = j*dt/2 (nodes at even j, midpoints at odd
j), so one RK4 step consumes two substeps.  Collapse operators carry their
rates folded in (L = sqrt(gamma) * A, gamma in 1/ns).

The default backend compiles the loops with numba (``cache=True`` and
``nogil=True`` so sweep columns can run on threads).  Set the environment
variable ``TCSIM_KERNELS=numpy`` to force the pure-numpy fallback, or
``TCSIM_KERNELS=numba`` to fail loudly when numba is unavailable;
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

_ENV_VAR = "TCSIM_KERNELS"


# ---------------------------------------------------------------------------
# pure-numpy fallback
# ---------------------------------------------------------------------------

def _np_build_h(h_const, h_terms, coeffs, j):
    if h_terms.shape[0] == 0:
        return h_const
    return h_const + np.tensordot(coeffs[:, j], h_terms, axes=(0, 0))


def _np_rk4_schrodinger(h_const, h_terms, coeffs, psi0, dt, record_idx):
    nsteps = (coeffs.shape[1] - 1) // 2 if coeffs.shape[1] else 0
    psi = psi0.copy()
    pops = np.empty((nsteps + 1, record_idx.size))
    pops[0] = np.abs(psi[record_idx]) ** 2
    h_t = _np_build_h(h_const, h_terms, coeffs, 0)
    for s in range(nsteps):
        h_m = _np_build_h(h_const, h_terms, coeffs, 2 * s + 1)
        h_n = _np_build_h(h_const, h_terms, coeffs, 2 * s + 2)
        k1 = -1j * (h_t @ psi)
        k2 = -1j * (h_m @ (psi + (0.5 * dt) * k1))
        k3 = -1j * (h_m @ (psi + (0.5 * dt) * k2))
        k4 = -1j * (h_n @ (psi + dt * k3))
        psi += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        pops[s + 1] = np.abs(psi[record_idx]) ** 2
        h_t = h_n
    return psi, pops


def _np_rk4_schrodinger_states(h_const, h_terms, coeffs, psi0, dt):
    nsteps = (coeffs.shape[1] - 1) // 2 if coeffs.shape[1] else 0
    psi = psi0.copy()
    states = np.empty((nsteps + 1, psi.size), dtype=np.complex128)
    states[0] = psi
    h_t = _np_build_h(h_const, h_terms, coeffs, 0)
    for s in range(nsteps):
        h_m = _np_build_h(h_const, h_terms, coeffs, 2 * s + 1)
        h_n = _np_build_h(h_const, h_terms, coeffs, 2 * s + 2)
        k1 = -1j * (h_t @ psi)
        k2 = -1j * (h_m @ (psi + (0.5 * dt) * k1))
        k3 = -1j * (h_m @ (psi + (0.5 * dt) * k2))
        k4 = -1j * (h_n @ (psi + dt * k3))
        psi += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        states[s + 1] = psi
        h_t = h_n
    return psi, states


def _np_lindblad_rhs(h, rho, c_ops, c_dags, s_half):
    out = -1j * (h @ rho - rho @ h)
    out -= s_half @ rho + rho @ s_half
    for m in range(c_ops.shape[0]):
        out += c_ops[m] @ rho @ c_dags[m]
    return out


def _np_rk4_lindblad(h_const, h_terms, coeffs, rho0, c_ops, dt, record_idx):
    nsteps = (coeffs.shape[1] - 1) // 2 if coeffs.shape[1] else 0
    rho = rho0.copy()
    c_dags = np.ascontiguousarray(c_ops.conj().transpose(0, 2, 1))
    s_half = np.zeros_like(h_const)
    for m in range(c_ops.shape[0]):
        s_half += 0.5 * (c_dags[m] @ c_ops[m])
    pops = np.empty((nsteps + 1, record_idx.size))
    pops[0] = rho[record_idx, record_idx].real
    h_t = _np_build_h(h_const, h_terms, coeffs, 0)
    for s in range(nsteps):
        h_m = _np_build_h(h_const, h_terms, coeffs, 2 * s + 1)
        h_n = _np_build_h(h_const, h_terms, coeffs, 2 * s + 2)
        k1 = _np_lindblad_rhs(h_t, rho, c_ops, c_dags, s_half)
        k2 = _np_lindblad_rhs(h_m, rho + (0.5 * dt) * k1, c_ops, c_dags, s_half)
        k3 = _np_lindblad_rhs(h_m, rho + (0.5 * dt) * k2, c_ops, c_dags, s_half)
        k4 = _np_lindblad_rhs(h_n, rho + dt * k3, c_ops, c_dags, s_half)
        rho += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        pops[s + 1] = rho[record_idx, record_idx].real
        h_t = h_n
    return rho, pops


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

def _compile_numba():
    from numba import njit

    opts = dict(cache=True, nogil=True)

    @njit(**opts)
    def fill_h(h_const, h_terms, coeffs, j, out):
        d = h_const.shape[0]
        for a in range(d):
            for b in range(d):
                out[a, b] = h_const[a, b]
        for k in range(h_terms.shape[0]):
            c = coeffs[k, j]
            if c != 0.0:
                hk = h_terms[k]
                for a in range(d):
                    for b in range(d):
                        out[a, b] += c * hk[a, b]

    @njit(**opts)
    def rk4_schrodinger(h_const, h_terms, coeffs, psi0, dt, record_idx):
        d = h_const.shape[0]
        nsteps = (coeffs.shape[1] - 1) // 2 if coeffs.shape[1] else 0
        psi = psi0.copy()
        pops = np.empty((nsteps + 1, record_idx.size))
        for r in range(record_idx.size):
            c = psi[record_idx[r]]
            pops[0, r] = c.real * c.real + c.imag * c.imag
        h_t = np.empty((d, d), np.complex128)
        h_m = np.empty((d, d), np.complex128)
        h_n = np.empty((d, d), np.complex128)
        fill_h(h_const, h_terms, coeffs, 0, h_t)
        for s in range(nsteps):
            fill_h(h_const, h_terms, coeffs, 2 * s + 1, h_m)
            fill_h(h_const, h_terms, coeffs, 2 * s + 2, h_n)
            k1 = -1j * np.dot(h_t, psi)
            k2 = -1j * np.dot(h_m, psi + (0.5 * dt) * k1)
            k3 = -1j * np.dot(h_m, psi + (0.5 * dt) * k2)
            k4 = -1j * np.dot(h_n, psi + dt * k3)
            psi += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            for r in range(record_idx.size):
                c = psi[record_idx[r]]
                pops[s + 1, r] = c.real * c.real + c.imag * c.imag
            h_t, h_n = h_n, h_t
        return psi, pops

    @njit(**opts)
    def rk4_schrodinger_states(h_const, h_terms, coeffs, psi0, dt):
        d = h_const.shape[0]
        nsteps = (coeffs.shape[1] - 1) // 2 if coeffs.shape[1] else 0
        psi = psi0.copy()
        states = np.empty((nsteps + 1, d), np.complex128)
        states[0] = psi
        h_t = np.empty((d, d), np.complex128)
        h_m = np.empty((d, d), np.complex128)
        h_n = np.empty((d, d), np.complex128)
        fill_h(h_const, h_terms, coeffs, 0, h_t)
        for s in range(nsteps):
            fill_h(h_const, h_terms, coeffs, 2 * s + 1, h_m)
            fill_h(h_const, h_terms, coeffs, 2 * s + 2, h_n)
            k1 = -1j * np.dot(h_t, psi)
            k2 = -1j * np.dot(h_m, psi + (0.5 * dt) * k1)
            k3 = -1j * np.dot(h_m, psi + (0.5 * dt) * k2)
            k4 = -1j * np.dot(h_n, psi + dt * k3)
            psi += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            states[s + 1] = psi
            h_t, h_n = h_n, h_t
        return psi, states

    @njit(**opts)
    def lindblad_rhs(h, rho, c_ops, c_dags, s_half):
        out = -1j * (np.dot(h, rho) - np.dot(rho, h))
        out -= np.dot(s_half, rho) + np.dot(rho, s_half)
        for m in range(c_ops.shape[0]):
            out += np.dot(np.dot(c_ops[m], rho), c_dags[m])
        return out

    @njit(**opts)
    def rk4_lindblad(h_const, h_terms, coeffs, rho0, c_ops, dt, record_idx):
        d = h_const.shape[0]
        nsteps = (coeffs.shape[1] - 1) // 2 if coeffs.shape[1] else 0
        rho = rho0.copy()
        n_c = c_ops.shape[0]
        c_dags = np.empty_like(c_ops)
        s_half = np.zeros((d, d), np.complex128)
        for m in range(n_c):
            c_dags[m] = c_ops[m].conj().T.copy()
            s_half += 0.5 * np.dot(c_dags[m], c_ops[m])
        pops = np.empty((nsteps + 1, record_idx.size))
        for r in range(record_idx.size):
            pops[0, r] = rho[record_idx[r], record_idx[r]].real
        h_t = np.empty((d, d), np.complex128)
        h_m = np.empty((d, d), np.complex128)
        h_n = np.empty((d, d), np.complex128)
        fill_h(h_const, h_terms, coeffs, 0, h_t)
        for s in range(nsteps):
            fill_h(h_const, h_terms, coeffs, 2 * s + 1, h_m)
            fill_h(h_const, h_terms, coeffs, 2 * s + 2, h_n)
            k1 = lindblad_rhs(h_t, rho, c_ops, c_dags, s_half)
            k2 = lindblad_rhs(h_m, rho + (0.5 * dt) * k1, c_ops, c_dags, s_half)
            k3 = lindblad_rhs(h_m, rho + (0.5 * dt) * k2, c_ops, c_dags, s_half)
            k4 = lindblad_rhs(h_n, rho + dt * k3, c_ops, c_dags, s_half)
            rho += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            for r in range(record_idx.size):
                pops[s + 1, r] = rho[record_idx[r], record_idx[r]].real
            h_t, h_n = h_n, h_t
        return rho, pops

    return {
        "rk4_schrodinger": rk4_schrodinger,
        "rk4_schrodinger_states": rk4_schrodinger_states,
        "rk4_lindblad": rk4_lindblad,
    }


def _select_backend():
    requested = os.environ.get(_ENV_VAR, "").strip().lower() or "numba"
    if requested not in ("numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", None
    try:
        return "numba", _compile_numba()
    except ImportError:
        if os.environ.get(_ENV_VAR, "").strip().lower() == "numba":
            raise
        warnings.warn("numba unavailable; falling back to numpy kernels")
        return "numpy", None


BACKEND, _numba_fns = _select_backend()


def backend_name() -> str:
    """Active kernel backend, 'numba' or 'numpy'."""
    return BACKEND


def _prep(h_const, h_terms, coeffs):
    h_const = np.ascontiguousarray(h_const, dtype=np.complex128)
    d = h_const.shape[0]
    terms = np.asarray(h_terms, dtype=np.complex128)
    if terms.size == 0:
        terms = np.zeros((0, d, d), np.complex128)
    terms = np.ascontiguousarray(terms.reshape(-1, d, d))
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != terms.shape[0]:
        raise ValueError(
            f"coeffs must be (n_terms, n_substeps), got {coeffs.shape} for "
            f"{terms.shape[0]} terms"
        )
    return h_const, terms, np.ascontiguousarray(coeffs)


def rk4_schrodinger(h_const, h_terms, coeffs, psi0, dt, record_idx):
    """Integrate i dpsi/dt = H(t) psi; returns (final psi, node populations)."""
    h_const, terms, coeffs = _prep(h_const, h_terms, coeffs)
    psi0 = np.ascontiguousarray(psi0, dtype=np.complex128)
    idx = np.ascontiguousarray(record_idx, dtype=np.int64)
    if BACKEND == "numba":
        return _numba_fns["rk4_schrodinger"](h_const, terms, coeffs, psi0, float(dt), idx)
    return _np_rk4_schrodinger(h_const, terms, coeffs, psi0, float(dt), idx)


def rk4_schrodinger_states(h_const, h_terms, coeffs, psi0, dt):
    """Like :func:`rk4_schrodinger` but stores the full state at every node."""
    h_const, terms, coeffs = _prep(h_const, h_terms, coeffs)
    psi0 = np.ascontiguousarray(psi0, dtype=np.complex128)
    if BACKEND == "numba":
        return _numba_fns["rk4_schrodinger_states"](h_const, terms, coeffs, psi0, float(dt))
    return _np_rk4_schrodinger_states(h_const, terms, coeffs, psi0, float(dt))


def rk4_lindblad(h_const, h_terms, coeffs, rho0, c_ops, dt, record_idx):
    """Integrate the Lindblad equation; returns (final rho, node populations)."""
    h_const, terms, coeffs = _prep(h_const, h_terms, coeffs)
    rho0 = np.ascontiguousarray(rho0, dtype=np.complex128)
    d = h_const.shape[0]
    c_arr = np.ascontiguousarray(
        np.asarray(c_ops, dtype=np.complex128).reshape(len(c_ops), d, d)
        if len(c_ops)
        else np.zeros((0, d, d), np.complex128)
    )
    idx = np.ascontiguousarray(record_idx, dtype=np.int64)
    if BACKEND == "numba":
        return _numba_fns["rk4_lindblad"](h_const, terms, coeffs, rho0, c_arr, float(dt), idx)
    return _np_rk4_lindblad(h_const, terms, coeffs, rho0, c_arr, float(dt), idx)
