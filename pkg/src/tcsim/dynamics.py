"""Time evolution of the circuit under sampled pulse schedules.

The integrator is a fixed-step 4th-order Runge-Kutta scheme taking one step
per waveform sample interval, with midpoint control values linearly
interpolated between nodes.  Gate simulations run by default in the rotating
frame of each mode's idle frequency (an exact interaction picture: coupling
terms acquire cos/sin coefficients at the idle detunings), so recorded
single- and two-qubit phases are directly the calibration phases.  A lab
frame is available for cross-checks and single-mode drive studies; it needs
a finer dt because absolute GHz phases must be resolved.

Populations are recorded at every node; the full state trajectory can be
kept for phase bookkeeping (pure evolution only).
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .device import DeviceParams
from .errors import CalibrationError, IntegratorError
from .pulse import DEFAULT_DT, PulseSchedule, cosine_flat_top, schedule_from
from .qspace import ModeLayout, SystemState, embedded_ops, parse_label, qubit_rotation

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ModeSystem:
    """Hamiltonian skeleton: truncations, anharmonicities and couplings.

    ``freq_channels`` names the frequency channel of each mode (or None for a
    mode pinned to its idle frequency); ``xy_channels`` maps drive channels to
    mode indices.  The standard device maps to the three-mode system; reduced
    one- and two-mode systems reuse the same machinery for drive calibration
    and the direct-coupling comparison scenario.
    """

    layout: ModeLayout
    etas: tuple[float, ...]
    couplings: tuple[tuple[int, int, float], ...]
    freq_channels: tuple[str | None, ...]
    xy_channels: dict[str, int] = field(default_factory=dict)
    gc_flux_scaling: bool = False
    coupler_mode: int | None = None
    omega_c_max: float | None = None

    def __post_init__(self):
        if len(self.etas) != self.layout.n_modes:
            raise ValueError("one anharmonicity per mode required")
        if len(self.freq_channels) != self.layout.n_modes:
            raise ValueError("one frequency channel per mode required")


def system_from_device(params: DeviceParams, layout: ModeLayout | None = None) -> ModeSystem:
    """Standard three-mode (Q1, C, Q2) system from the device constants."""
    layout = layout or ModeLayout()
    if layout.n_modes != 3:
        raise ValueError("device system needs a three-mode layout")
    return ModeSystem(
        layout=layout,
        etas=params.eta,
        couplings=((0, 1, params.g1c), (1, 2, params.g2c), (0, 2, params.g12)),
        freq_channels=("freq_q1", "freq_c", "freq_q2"),
        xy_channels={"xy_q1": 0, "xy_q2": 2},
        gc_flux_scaling=params.gc_flux_scaling,
        coupler_mode=1,
        omega_c_max=params.omega_max[1],
    )


def two_qubit_system(eta1: float, eta2: float, g: float, dims=(3, 3)) -> ModeSystem:
    """Directly coupled qubit pair (no coupler), for comparison scenarios."""
    return ModeSystem(
        layout=ModeLayout(tuple(dims)),
        etas=(eta1, eta2),
        couplings=((0, 1, g),),
        freq_channels=("freq_q1", "freq_q2"),
        xy_channels={"xy_q1": 0, "xy_q2": 1},
    )


def single_mode_system(eta: float, dim: int = 3) -> ModeSystem:
    """One driven anharmonic mode, for DRAG calibration."""
    return ModeSystem(
        layout=ModeLayout((dim,)),
        etas=(eta,),
        couplings=(),
        freq_channels=("freq_q1",),
        xy_channels={"xy_q1": 0},
    )


def _resolve_system(params, layout):
    if isinstance(params, ModeSystem):
        return params
    if isinstance(params, DeviceParams):
        return system_from_device(params, layout)
    raise TypeError(f"expected DeviceParams or ModeSystem, got {type(params)}")


@dataclass
class CollapseSet:
    """Stack of collapse operators with decay rates folded in (units 1/sqrt(ns))."""

    ops: np.ndarray
    labels: tuple[str, ...] = ()

    @property
    def n_ops(self) -> int:
        return self.ops.shape[0]


def static_hamiltonian(system: ModeSystem, freqs) -> np.ndarray:
    """Lab-frame Hamiltonian (GHz) of the system at fixed mode frequencies."""
    lay = system.layout
    emb = embedded_ops(lay)
    h = np.zeros((lay.dim, lay.dim), dtype=complex)
    for m in range(lay.n_modes):
        n_op = emb[m][2]
        h += freqs[m] * n_op + 0.5 * system.etas[m] * (n_op @ n_op - n_op)
    for i, j, g in system.couplings:
        cross = emb[i][0].conj().T @ emb[j][0]
        h += g * (cross + cross.conj().T)
    return h


class DressedFrame:
    """Adiabatic (idle-Hamiltonian eigen-) basis bookkeeping.

    The physical qubits of the experiment are the dressed eigenstates of the
    static idle Hamiltonian, not the bare oscillator levels; preparing and
    measuring in this basis removes the few-percent static hybridization
    from populations and the associated beats from phases.  Amplitudes are
    referenced so an identity schedule maps every dressed state to itself
    with zero phase, which mirrors the experimental frame calibration.
    """

    def __init__(self, system: ModeSystem, idle_freqs):
        self.system = system
        self.layout = system.layout
        self.idle_freqs = tuple(float(w) for w in idle_freqs)
        evals, evecs = np.linalg.eigh(static_hamiltonian(system, self.idle_freqs))
        dim = self.layout.dim
        order = np.full(dim, -1, dtype=int)
        taken = np.zeros(dim, dtype=bool)
        # assign eigenvectors to bare labels by descending overlap
        weights = np.abs(evecs) ** 2  # [bare, eig]
        pairs = sorted(
            ((weights[b, k], b, k) for b in range(dim) for k in range(dim)),
            reverse=True,
        )
        for w, b, k in pairs:
            if order[b] < 0 and not taken[k]:
                order[b] = k
                taken[k] = True
        self.vectors = evecs[:, order]  # column b = dressed state for bare label b
        self.energies = evals[order]
        # fix the gauge: largest bare component real positive
        for b in range(dim):
            phase = self.vectors[np.argmax(np.abs(self.vectors[:, b])), b]
            self.vectors[:, b] *= np.exp(-1j * np.angle(phase))
        self.frame_energies = np.array(
            [
                sum(self.idle_freqs[m] * lab[m] for m in range(self.layout.n_modes))
                for lab in self.layout.all_labels()
            ]
        )

    def index(self, labels) -> int:
        return self.layout.basis_index(labels)

    def state(self, labels) -> np.ndarray:
        """Dressed basis state for the given bare occupation labels."""
        return self.vectors[:, self.index(labels)].copy()

    def amplitudes(self, psi_idle_frame: np.ndarray, t: float) -> np.ndarray:
        """Referenced dressed amplitudes of an idle-frame state at time t.

        Entry b is the overlap with the dressed state that started as bare
        label b, rotated to time t and referenced so that idle evolution
        gives exactly the initial amplitudes.
        """
        u0 = np.exp(-1j * TWO_PI * self.frame_energies * t)
        raw = self.vectors.conj().T @ (u0 * psi_idle_frame)
        return raw * np.exp(1j * TWO_PI * self.energies * t)

    def projectors(self, t: float, indices=None) -> np.ndarray:
        """Columns w(t) such that w(t)^dag psi gives referenced amplitudes."""
        indices = np.arange(self.layout.dim) if indices is None else np.asarray(indices)
        u0_conj = np.exp(1j * TWO_PI * self.frame_energies * t)
        return (u0_conj[:, None] * self.vectors[:, indices]) * np.exp(
            -1j * TWO_PI * self.energies[indices] * t
        )[None, :]

    def density_block(self, rho_idle_frame: np.ndarray, t: float, indices) -> np.ndarray:
        """Referenced dressed-basis density sub-block at time t."""
        w = self.projectors(t, indices)
        return w.conj().T @ rho_idle_frame @ w

    def operator(self, bare_operator: np.ndarray) -> np.ndarray:
        """Lift an operator defined on bare labels into the dressed basis."""
        return self.vectors @ bare_operator @ self.vectors.conj().T


def collapse_ops(
    layout: ModeLayout,
    t1_us,
    t2_us,
    modes=None,
    names=None,
) -> CollapseSet:
    """Relaxation sqrt(1/T1) a and pure dephasing sqrt(2/Tphi) n per mode.

    1/Tphi = 1/T2 - 1/(2 T1); a T2 of exactly 2 T1 gives pure relaxation.
    Rates are converted from microseconds to 1/ns.  ``None`` entries in the
    time lists disable the corresponding channel.
    """
    modes = range(layout.n_modes) if modes is None else modes
    names = names or tuple(f"m{m}" for m in range(layout.n_modes))
    ops_list, labels = [], []
    emb = embedded_ops(layout)
    for m in modes:
        a, _, n = emb[m]
        gamma1 = 1e-3 / t1_us[m] if t1_us[m] else 0.0
        gamma2 = 1e-3 / t2_us[m] if t2_us[m] else 0.0
        gamma_phi = max(gamma2 - 0.5 * gamma1, 0.0)
        if gamma1 > 0:
            ops_list.append(np.sqrt(gamma1) * a)
            labels.append(f"relax_{names[m]}")
        if gamma_phi > 0:
            ops_list.append(np.sqrt(2.0 * gamma_phi) * n)
            labels.append(f"dephase_{names[m]}")
    stack = (
        np.array(ops_list)
        if ops_list
        else np.zeros((0, layout.dim, layout.dim), complex)
    )
    return CollapseSet(ops=stack, labels=tuple(labels))


def collapse_from_device(
    params: DeviceParams,
    layout: ModeLayout | None = None,
    modes=(0, 1, 2),
) -> CollapseSet:
    """Device-table collapse set on the three-mode layout."""
    layout = layout or ModeLayout()
    return collapse_ops(
        layout, params.t1_us, params.t2_us, modes=modes, names=("q1", "c", "q2")
    )


def _substep_values(node_values: np.ndarray) -> np.ndarray:
    """Interleave node samples with linear midpoints: values at t = j*dt/2."""
    n = node_values.shape[0]
    out = np.empty(2 * n - 1, dtype=node_values.dtype)
    out[0::2] = node_values
    out[1::2] = 0.5 * (node_values[:-1] + node_values[1:])
    return out


def _coupling_pair_ops(system: ModeSystem, i: int, j: int):
    emb = embedded_ops(system.layout)
    ai = emb[i][0]
    aj = emb[j][0]
    cross = ai.conj().T @ aj
    g_re = cross + cross.conj().T
    g_im = 1j * cross - 1j * cross.conj().T
    return g_re, g_im


def assemble_terms(system: ModeSystem, schedule: PulseSchedule, frame: str = "idle"):
    """Build (h_const, h_terms, coeffs) in rad/ns for the RK4 kernels.

    frame="idle" rotates each mode at its schedule idle frequency; "lab"
    keeps absolute frequencies (and drives become real carrier products
    including the counter-rotating part).
    """
    if frame not in ("idle", "lab"):
        raise ValueError(f"frame must be 'idle' or 'lab', got {frame!r}")
    layout = system.layout
    dim = layout.dim
    n_nodes = schedule.n_samples
    n_sub = 2 * n_nodes - 1
    t_sub = np.arange(n_sub) * (0.5 * schedule.dt)
    emb = embedded_ops(layout)

    idle = schedule.idle_freqs
    frame_freqs = idle if frame == "idle" else tuple(0.0 for _ in idle)

    h_const = np.zeros((dim, dim), dtype=complex)
    terms: list[np.ndarray] = []
    coeffs: list[np.ndarray] = []

    # per-mode anharmonicity (time independent)
    for m in range(layout.n_modes):
        n_op = emb[m][2]
        h_const += 0.5 * system.etas[m] * (n_op @ n_op - n_op)

    # per-mode frequency relative to the frame
    mode_freq_sub = []
    for m in range(layout.n_modes):
        ch = system.freq_channels[m]
        if ch is not None and ch in schedule.waveforms:
            w_sub = _substep_values(schedule.channel_samples(ch))
        else:
            w_sub = np.full(n_sub, idle[m])
        mode_freq_sub.append(w_sub)
        rel = w_sub - frame_freqs[m]
        n_op = emb[m][2]
        if np.all(rel == rel[0]):
            if rel[0] != 0.0:
                h_const += rel[0] * n_op
        else:
            terms.append(n_op)
            coeffs.append(rel)

    # exchange couplings, with frame phases at the idle detunings
    for i, j, g in system.couplings:
        g_sub = np.full(n_sub, float(g))
        if (
            system.gc_flux_scaling
            and system.coupler_mode is not None
            and system.coupler_mode in (i, j)
        ):
            wc = mode_freq_sub[system.coupler_mode]
            g_sub = g * np.sqrt(np.clip(wc, 0.0, None) / system.omega_c_max)
        delta_f = frame_freqs[i] - frame_freqs[j]
        g_re, g_im = _coupling_pair_ops(system, i, j)
        if delta_f == 0.0:
            if np.all(g_sub == g_sub[0]):
                h_const += g_sub[0] * g_re
            else:
                terms.append(g_re)
                coeffs.append(g_sub)
        else:
            theta = TWO_PI * delta_f * t_sub
            terms.append(g_re)
            coeffs.append(g_sub * np.cos(theta))
            terms.append(g_im)
            coeffs.append(g_sub * np.sin(theta))

    # XY drives
    for ch, m in system.xy_channels.items():
        if ch not in schedule.waveforms:
            continue
        s_sub = _substep_values(schedule.channel_samples(ch).astype(complex))
        a_op = emb[m][0]
        x_op = a_op + a_op.conj().T
        if frame == "lab":
            u = s_sub * np.exp(1j * TWO_PI * idle[m] * t_sub)
            terms.append(x_op)
            coeffs.append(u.real)
        else:
            y_op = 1j * (a_op.conj().T - a_op)
            terms.append(x_op)
            coeffs.append(0.5 * s_sub.real)
            terms.append(y_op)
            coeffs.append(0.5 * s_sub.imag)

    h_const_ang = TWO_PI * h_const
    terms_ang = TWO_PI * np.array(terms) if terms else np.zeros((0, dim, dim), complex)
    coeff_arr = (
        np.array(coeffs, dtype=float) if coeffs else np.zeros((0, n_sub))
    )
    return h_const_ang, terms_ang, coeff_arr


@dataclass
class TrajectoryRecord:
    """Time-indexed populations (and optionally states) of one evolution."""

    times: np.ndarray
    populations: dict[str, np.ndarray]
    final_state: SystemState
    metadata: dict = field(default_factory=dict)
    states: np.ndarray | None = None

    def to_csv(self, path: str | Path) -> None:
        labels = sorted(self.populations)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_ns"] + [f"pop_{lab}" for lab in labels])
            for k, t in enumerate(self.times):
                writer.writerow(
                    [f"{t:.6f}"] + [repr(float(self.populations[lab][k])) for lab in labels]
                )

    def to_json(self, path: str | Path) -> None:
        payload = {
            "times_ns": [float(t) for t in self.times],
            "populations": {k: [float(x) for x in v] for k, v in self.populations.items()},
            "metadata": self.metadata,
        }
        Path(path).write_text(json.dumps(payload, indent=1))


def _params_hash(params) -> str:
    if isinstance(params, DeviceParams):
        blob = json.dumps(params.to_dict(), sort_keys=True)
    else:
        blob = repr(params)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evolve(
    schedule: PulseSchedule,
    initial,
    params,
    layout: ModeLayout | None = None,
    collapse: CollapseSet | None = None,
    record=None,
    frame: str = "idle",
    record_states: bool = False,
    drift_tol: float = 1e-4,
) -> TrajectoryRecord:
    """Integrate the schedule from the initial state.

    Pure initial states without collapse operators evolve under the
    Schrodinger equation; a density matrix or a :class:`CollapseSet` selects
    the Lindblad master equation (pure inputs are promoted).  ``record``
    lists basis labels (``"101"`` or tuples) whose populations are stored at
    every node.  Norm (or trace) drift beyond 1e-4 raises
    :class:`IntegratorError` suggesting a smaller dt.
    """
    system = _resolve_system(params, layout)
    layout = system.layout

    if isinstance(initial, SystemState):
        state = initial
    else:
        arr = np.asarray(initial, dtype=complex)
        state = SystemState.pure(arr) if arr.ndim == 1 else SystemState.density(arr)
    if state.dim != layout.dim:
        raise ValueError(f"initial state dim {state.dim} != layout dim {layout.dim}")

    use_lindblad = collapse is not None and collapse.n_ops > 0
    if state.kind == "density":
        use_lindblad = True
        if collapse is None:
            collapse = CollapseSet(ops=np.zeros((0, layout.dim, layout.dim), complex))

    record = record or []
    record_labels = [parse_label(lab, layout) for lab in record]
    record_keys = ["".join(str(n) for n in lab) for lab in record_labels]
    record_idx = np.array(
        [layout.basis_index(lab) for lab in record_labels], dtype=np.int64
    )

    h_const, h_terms, coeffs = assemble_terms(system, schedule, frame)

    states = None
    if use_lindblad:
        if record_states:
            raise ValueError("state recording is only supported for pure evolution")
        rho0 = state.to_density()
        final, pops = kernels.rk4_lindblad(
            h_const, h_terms, coeffs, rho0, collapse.ops, schedule.dt, record_idx
        )
        drift = abs(np.trace(final).real - np.trace(rho0).real)
        final_state = SystemState.density(final)
    else:
        psi0 = state.data
        if record_states:
            final, states = kernels.rk4_schrodinger_states(
                h_const, h_terms, coeffs, psi0, schedule.dt
            )
            pops = np.abs(states[:, record_idx]) ** 2 if record_idx.size else np.zeros(
                (states.shape[0], 0)
            )
        else:
            final, pops = kernels.rk4_schrodinger(
                h_const, h_terms, coeffs, psi0, schedule.dt, record_idx
            )
        drift = abs(np.linalg.norm(final) - np.linalg.norm(psi0))
        final_state = SystemState.pure(final)

    if drift > drift_tol:
        raise IntegratorError(
            f"norm/trace drifted by {drift:.2e}; the fixed-step integrator is "
            "unstable here, use a smaller dt"
        )

    populations = {key: pops[:, k] for k, key in enumerate(record_keys)}
    metadata = {
        "schedule_hash": schedule.content_hash(),
        "params_hash": _params_hash(params),
        "frame": frame,
        "dt_ns": schedule.dt,
        "backend": kernels.backend_name(),
    }
    return TrajectoryRecord(
        times=schedule.times.copy(),
        populations=populations,
        final_state=final_state,
        metadata=metadata,
        states=states,
    )


def expectation_energy_series(
    schedule: PulseSchedule, states: np.ndarray, params, layout=None, frame="idle"
) -> np.ndarray:
    """Instantaneous <psi|H(t)|psi> at every node, in GHz, in the given frame."""
    system = _resolve_system(params, layout)
    h_const, h_terms, coeffs = assemble_terms(system, schedule, frame)
    node_coeffs = coeffs[:, 0::2] if coeffs.size else coeffs
    e = np.einsum("ti,ij,tj->t", states.conj(), h_const, states).real
    if h_terms.shape[0]:
        mats = np.einsum("kt,kij->tij", node_coeffs, h_terms)
        e = e + np.einsum("ti,tij,tj->t", states.conj(), mats, states).real
    return e / TWO_PI


def lab_energy_series(
    schedule: PulseSchedule, states: np.ndarray, params, layout=None
) -> np.ndarray:
    """Lab-frame <psi|H(t)|psi> at every node, in GHz.

    Adds the frame generator expectation sum_m omega_idle_m <n_m> back onto
    the idle-frame series; the lab energies are the ones whose conditional
    combination gives the physical dynamical phase (frame terms cancel).
    """
    system = _resolve_system(params, layout)
    layout = system.layout
    e = expectation_energy_series(schedule, states, system)
    emb = embedded_ops(layout)
    pops = np.abs(states) ** 2
    for m in range(layout.n_modes):
        n_diag = np.real(np.diag(emb[m][2]))
        e = e + schedule.idle_freqs[m] * (pops @ n_diag)
    return e


# ---------------------------------------------------------------------------
# derived experiments
# ---------------------------------------------------------------------------


@dataclass
class ChevronMap:
    """Swap-oscillation map: Q2 population vs coupler frequency and time."""

    coupler_freqs: np.ndarray
    times: np.ndarray
    populations: np.ndarray  # (n_freqs, n_times)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["coupler_freq_ghz", "time_ns", "pop_q2"])
            for i, wc in enumerate(self.coupler_freqs):
                for j, t in enumerate(self.times):
                    writer.writerow(
                        [repr(float(wc)), f"{t:.4f}", repr(float(self.populations[i, j]))]
                    )


def swap_chevron(
    params: DeviceParams,
    coupler_freqs,
    times,
    layout: ModeLayout | None = None,
    collapse: CollapseSet | None = None,
    edge: float = 3.0,
    idle_coupler: float | None = None,
    dt: float = DEFAULT_DT,
    jobs: int = 1,
) -> ChevronMap:
    """Population of Q2 versus coupler frequency and interaction time.

    Q1 is pulsed onto Q2's idle frequency with a short cosine edge (sudden
    rectangular steps would excite the fast qubit-coupler dressing beats),
    the coupler is pulsed to each grid frequency, and the initial state is
    one excitation in Q2.  Columns are independent and may run on worker
    threads; results are assembled in grid order so the map is identical for
    any job count.
    """
    from .model import find_coupler_off  # local import to avoid cycles

    layout = layout or ModeLayout()
    coupler_freqs = np.asarray(coupler_freqs, dtype=float)
    times = np.asarray(times, dtype=float)
    if coupler_freqs.size == 0 or times.size == 0:
        raise ValueError("coupler frequency and time grids must be non-empty")
    w1_idle, _, w2_idle = params.omega_max
    if idle_coupler is None:
        idle_coupler = find_coupler_off(params, (w2_idle, w2_idle), criterion="swap")
    idle = (w1_idle, idle_coupler, w2_idle)
    t_max = float(times.max())

    def run_column(wc: float) -> np.ndarray:
        wfs = [
            cosine_flat_top("freq_q1", w1_idle, w2_idle, edge, t_max, dt),
            cosine_flat_top("freq_c", idle_coupler, wc, edge, t_max, dt),
        ]
        sched = schedule_from(wfs, idle, dt)
        rec = evolve(
            sched,
            SystemState.from_labels((0, 0, 1), layout),
            params,
            layout,
            collapse=collapse,
            record=[(0, 0, 1)],
        )
        pop = rec.populations["001"]
        # interaction time 0 is the end of the entry edge
        sample_t = rec.times - edge
        return np.interp(times, sample_t, pop)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            columns = list(pool.map(run_column, coupler_freqs))
    else:
        columns = [run_column(wc) for wc in coupler_freqs]
    return ChevronMap(
        coupler_freqs=coupler_freqs, times=times, populations=np.array(columns)
    )


def oscillation_frequency(times: np.ndarray, values: np.ndarray) -> float:
    """Dominant oscillation frequency (GHz for times in ns) via windowed FFT."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    dt = times[1] - times[0]
    x = values - values.mean()
    x = x * np.hanning(x.size)
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, d=dt)
    k = int(np.argmax(spec[1:])) + 1
    if 1 <= k < spec.size - 1:
        # parabolic interpolation around the peak bin
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        return float((k + shift) * (freqs[1] - freqs[0]))
    return float(freqs[k])


_SQ2 = 1.0 / np.sqrt(2.0)


def half_pi_rotation(axis_angle: float) -> np.ndarray:
    """Ideal pi/2 rotation about the equatorial axis at ``axis_angle``."""
    return np.array(
        [
            [_SQ2, -1j * _SQ2 * np.exp(-1j * axis_angle)],
            [-1j * _SQ2 * np.exp(1j * axis_angle), _SQ2],
        ]
    )


def excited_population(
    state: SystemState, mode: int, layout: ModeLayout, ground_modes=()
) -> float:
    """Probability that ``mode`` holds exactly one excitation.

    ``ground_modes`` restricts the sum to basis states where those modes sit
    in their ground state (used to emulate qubit-only readout).
    """
    idx = [
        layout.basis_index(lab)
        for lab in layout.all_labels()
        if lab[mode] == 1 and all(lab[g] == 0 for g in ground_modes)
    ]
    if state.kind == "pure":
        return float(np.sum(np.abs(state.data[idx]) ** 2))
    return float(np.sum(np.diag(state.data)[idx]).real)


def ramsey_phase(
    schedule: PulseSchedule,
    params,
    target,
    layout: ModeLayout | None = None,
    control=None,
    control_excited: bool = False,
    collapse: CollapseSet | None = None,
    n_phases: int = 16,
    frame: str = "idle",
) -> float:
    """Phase accumulated by the target qubit across the schedule, in rad.

    Simulates pi/2 -- schedule -- pi/2(phi) and fits the excited-state
    population versus the second pulse's axis angle to a sinusoid.  State
    preparation and readout use the dressed (idle-Hamiltonian eigen-) basis
    with the idle precession referenced away, like the experimental frame
    calibration: an identity schedule reads exactly zero, and a qubit parked
    a detuning delta above idle for a time t reads +2*pi*delta*t.  Raises
    :class:`CalibrationError` when the fringe contrast is below 0.1.
    """
    system = _resolve_system(params, layout)
    target = _mode_of(target, system)
    labels_g = [0] * system.layout.n_modes
    if control is not None and control_excited:
        labels_g[_mode_of(control, system)] = 1
    labels_e = list(labels_g)
    labels_e[target] = 1

    dressed = DressedFrame(system, schedule.idle_freqs)
    ig, ie = dressed.index(labels_g), dressed.index(labels_e)
    psi0 = (dressed.state(labels_g) + dressed.state(labels_e)) / np.sqrt(2.0)
    state0 = SystemState.pure(psi0)
    if collapse is not None and collapse.n_ops > 0:
        state0 = SystemState.density(state0.to_density())
    rec = evolve(schedule, state0, system, collapse=collapse, frame=frame)

    t_end = schedule.duration
    if rec.final_state.kind == "pure":
        amps = dressed.amplitudes(rec.final_state.data, t_end)
        pair = np.array([amps[ig], amps[ie]])
        rho2 = np.outer(pair, pair.conj())
    else:
        rho2 = dressed.density_block(rec.final_state.data, t_end, [ig, ie])

    phis = np.linspace(0.0, 2.0 * np.pi, n_phases, endpoint=False)
    p1 = np.empty(n_phases)
    for k, phi in enumerate(phis):
        u = half_pi_rotation(phi)
        p1[k] = np.real((u @ rho2 @ u.conj().T)[1, 1])
    design = np.column_stack([np.ones(n_phases), np.cos(phis), np.sin(phis)])
    (_, c_cos, c_sin), *_ = np.linalg.lstsq(design, p1, rcond=None)
    contrast = 2.0 * np.hypot(c_cos, c_sin)
    if contrast < 0.1:
        raise CalibrationError(
            f"Ramsey fringe contrast {contrast:.3f} too low to extract a phase"
        )
    return float(np.arctan2(c_cos, c_sin))


def _mode_of(which, system: ModeSystem) -> int:
    if isinstance(which, str):
        channel = f"freq_{which}"
        for m, name in enumerate(system.freq_channels):
            if name == channel:
                return m
        raise ValueError(f"mode {which!r} not present in this system")
    return int(which)
