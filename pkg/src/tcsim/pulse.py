"""Sampled control waveforms and pulse schedules.

Channels are named ``freq_q1``, ``freq_c``, ``freq_q2`` (absolute mode
frequency in GHz) and ``xy_q1``, ``xy_q2`` (complex Rabi-rate envelope in
GHz, carrier at the mode idle frequency).  Samples live on a shared uniform
grid with nodes at t = i*dt, so a waveform with n samples lasts (n-1)*dt.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .device import DeviceParams
from .errors import DdrInfeasibleError, PulseError

FREQ_CHANNELS = ("freq_q1", "freq_c", "freq_q2")
XY_CHANNELS = ("xy_q1", "xy_q2")
CHANNEL_MODE = {"freq_q1": 0, "freq_c": 1, "freq_q2": 2, "xy_q1": 0, "xy_q2": 2}

DEFAULT_DT = 0.1  # ns; resolves GHz-scale coupling phases with >=10 samples/period


def idle_slot(channel: str, n_idle: int) -> int:
    """Index into the idle-frequency tuple for a channel.

    Full three-mode schedules use the (Q1, C, Q2) order; reduced one- and
    two-mode systems drop the coupler slot.
    """
    if n_idle == 3:
        return CHANNEL_MODE[channel]
    if n_idle == 2:
        return {"freq_q1": 0, "xy_q1": 0, "freq_q2": 1, "xy_q2": 1}[channel]
    return 0


def n_samples(duration: float, dt: float) -> int:
    """Node count of a waveform of the given duration (endpoints included)."""
    if duration <= 0:
        raise PulseError(f"duration must be positive, got {duration}")
    if dt <= 0:
        raise PulseError(f"dt must be positive, got {dt}")
    steps = int(round(duration / dt))
    if steps < 1:
        raise PulseError(f"duration {duration} ns shorter than one sample at dt={dt}")
    return steps + 1


@dataclass
class ChannelWaveform:
    """Uniformly sampled control values on one channel."""

    channel: str
    samples: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if self.channel not in CHANNEL_MODE:
            raise PulseError(f"unknown channel {self.channel!r}")
        dtype = complex if self.channel in XY_CHANNELS else float
        self.samples = np.asarray(self.samples, dtype=dtype)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise PulseError("samples must be a non-empty 1-D array")
        if self.dt <= 0:
            raise PulseError(f"dt must be positive, got {self.dt}")

    @property
    def duration(self) -> float:
        return (self.samples.size - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.channel in XY_CHANNELS:
                writer.writerow(["time_ns", "re", "im"])
                for t, s in zip(self.times, self.samples):
                    writer.writerow([f"{t:.6f}", repr(s.real), repr(s.imag)])
            else:
                writer.writerow(["time_ns", "value_ghz"])
                for t, s in zip(self.times, self.samples):
                    writer.writerow([f"{t:.6f}", repr(float(s))])


@dataclass
class PulseSchedule:
    """Aligned waveforms on a shared grid plus the idle frequencies.

    Channels without a waveform sit at the idle value (frequency channels) or
    at zero drive (XY channels) for the whole duration.
    """

    idle_freqs: tuple[float, float, float]
    dt: float = DEFAULT_DT
    waveforms: dict[str, ChannelWaveform] = field(default_factory=dict)

    def __post_init__(self):
        self.idle_freqs = tuple(float(w) for w in self.idle_freqs)
        lengths = {wf.samples.size for wf in self.waveforms.values()}
        if len(lengths) > 1:
            raise PulseError(f"waveform lengths differ: {sorted(lengths)}")
        for name, wf in self.waveforms.items():
            if wf.channel != name:
                raise PulseError(f"waveform for {name!r} labelled {wf.channel!r}")
            if abs(wf.dt - self.dt) > 1e-12:
                raise PulseError("waveform dt does not match schedule dt")

    @property
    def n_samples(self) -> int:
        if not self.waveforms:
            return 1
        return next(iter(self.waveforms.values())).samples.size

    @property
    def duration(self) -> float:
        return (self.n_samples - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def channel_samples(self, channel: str) -> np.ndarray:
        """Samples for any channel, filling absent channels with idle values."""
        if channel in self.waveforms:
            return self.waveforms[channel].samples
        n = self.n_samples
        if channel in XY_CHANNELS:
            return np.zeros(n, dtype=complex)
        return np.full(n, self.idle_freqs[idle_slot(channel, len(self.idle_freqs))])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.idle_freqs).encode())
        h.update(repr(self.dt).encode())
        for name in sorted(self.waveforms):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.waveforms[name].samples).tobytes())
        return h.hexdigest()[:16]


def schedule_from(waveforms, idle_freqs, dt: float = DEFAULT_DT) -> PulseSchedule:
    """Bundle waveforms (padded to the longest) into a schedule."""
    wfs = list(waveforms)
    if not wfs:
        return PulseSchedule(idle_freqs=tuple(idle_freqs), dt=dt)
    n = max(wf.samples.size for wf in wfs)
    padded = {}
    for wf in wfs:
        if wf.channel in padded:
            raise PulseError(f"duplicate channel {wf.channel!r}")
        samples = wf.samples
        if samples.size < n:
            fill = samples[-1]
            samples = np.concatenate([samples, np.full(n - samples.size, fill)])
        padded[wf.channel] = ChannelWaveform(wf.channel, samples, dt)
    return PulseSchedule(idle_freqs=tuple(idle_freqs), dt=dt, waveforms=padded)


def concat(*schedules: PulseSchedule) -> PulseSchedule:
    """Concatenate schedules; absent channels are padded with idle values.

    The junction node takes the left schedule's sample, so durations add
    exactly.  All inputs must share dt and idle frequencies.
    """
    schedules = [s for s in schedules if s.n_samples > 1]
    if not schedules:
        raise PulseError("nothing to concatenate")
    first = schedules[0]
    for s in schedules[1:]:
        if abs(s.dt - first.dt) > 1e-12:
            raise PulseError("cannot concatenate schedules with different dt")
        if s.idle_freqs != first.idle_freqs:
            raise PulseError("cannot concatenate schedules with different idle points")
    channels = sorted({ch for s in schedules for ch in s.waveforms})
    out = {}
    for ch in channels:
        parts = [schedules[0].channel_samples(ch)]
        for s in schedules[1:]:
            parts.append(s.channel_samples(ch)[1:])
        out[ch] = ChannelWaveform(ch, np.concatenate(parts), first.dt)
    return PulseSchedule(idle_freqs=first.idle_freqs, dt=first.dt, waveforms=out)


def rectangular(
    channel: str, level, duration: float, dt: float = DEFAULT_DT
) -> ChannelWaveform:
    """Constant waveform at ``level`` for ``duration`` ns."""
    n = n_samples(duration, dt)
    return ChannelWaveform(channel, np.full(n, level), dt)


def identity_like(schedule: PulseSchedule) -> PulseSchedule:
    """A schedule of the same grid and idle point with every channel idle."""
    n = schedule.n_samples
    wf = ChannelWaveform(
        "freq_q1", np.full(n, schedule.idle_freqs[0]), schedule.dt
    )
    return PulseSchedule(
        idle_freqs=schedule.idle_freqs,
        dt=schedule.dt,
        waveforms={"freq_q1": wf},
    )


def cosine_ramp_samples(start: float, stop: float, ramp: float, dt: float) -> np.ndarray:
    """Node samples of a one-way (1-cos)/2 ramp from start to stop."""
    if ramp < 2 * dt:
        raise PulseError(f"ramp {ramp} ns too fast for dt={dt} (need >= 2*dt)")
    n_ramp = int(round(ramp / dt))
    t = np.arange(n_ramp + 1) * dt
    return start + (stop - start) * 0.5 * (1.0 - np.cos(np.pi * t / (n_ramp * dt)))


def cosine_flat_top(
    channel: str,
    start: float,
    plateau: float,
    ramp: float,
    hold: float,
    dt: float = DEFAULT_DT,
) -> ChannelWaveform:
    """Cosine ramp start->plateau, hold, and symmetric return to start.

    The (1-cos)/2 edges make the first differences continuous at the
    junctions and pin both endpoints exactly to ``start``.
    """
    if ramp < 2 * dt:
        raise PulseError(f"ramp {ramp} ns too fast for dt={dt} (need >= 2*dt)")
    if hold < 0:
        raise PulseError(f"hold must be non-negative, got {hold}")
    n_ramp = int(round(ramp / dt))
    n_hold = int(round(hold / dt))
    t_up = np.arange(n_ramp + 1) * dt
    up = start + (plateau - start) * 0.5 * (1.0 - np.cos(np.pi * t_up / (n_ramp * dt)))
    samples = np.concatenate([up, np.full(n_hold, plateau), up[::-1][1:]])
    return ChannelWaveform(channel, samples, dt)


@dataclass(frozen=True)
class DragParams:
    """Gaussian DRAG pulse parameters.

    ``beta`` multiplies the envelope time-derivative on the quadrature to
    cancel leakage into the second excited state; total length defaults to
    4*sigma.
    """

    amplitude: float
    sigma: float
    beta: float = 0.0
    detuning: float = 0.0  # GHz offset of the carrier from the mode idle
    axis_angle: float = 0.0  # rad; 0 is an X rotation
    length: float | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise PulseError(f"sigma must be positive, got {self.sigma}")

    @property
    def total_length(self) -> float:
        return self.length if self.length is not None else 4.0 * self.sigma


def drag(channel: str, params: DragParams, dt: float = DEFAULT_DT) -> ChannelWaveform:
    """Complex DRAG waveform: baseline-subtracted Gaussian plus beta * d/dt.

    The in-phase envelope starts and ends exactly at zero; the quadrature is
    the analytic derivative of the subtracted envelope, which integrates to
    zero by symmetry.  A carrier detuning appears as a sampled phase ramp.
    """
    total = params.total_length
    if params.sigma < 2 * dt:
        raise PulseError(f"sigma {params.sigma} ns too short for dt={dt}")
    n = n_samples(total, dt)
    t = np.arange(n) * dt
    tc = 0.5 * (n - 1) * dt
    gauss = np.exp(-0.5 * ((t - tc) / params.sigma) ** 2)
    base = np.exp(-0.5 * (tc / params.sigma) ** 2)
    env = params.amplitude * (gauss - base) / (1.0 - base)
    denv = params.amplitude * gauss * (-(t - tc) / params.sigma**2) / (1.0 - base)
    s = (env + 1j * params.beta * denv) * np.exp(1j * params.axis_angle)
    if params.detuning:
        s = s * np.exp(1j * 2.0 * np.pi * params.detuning * t)
    return ChannelWaveform(channel, s, dt)


def ddr_track_values(omega1, omega2, params: DeviceParams) -> np.ndarray:
    """Coupler frequency nulling the effective coupling, per sample.

    Solves g12 x^2 - [g12 (w1 + w2) + g1c g2c] x
           + g12 w1 w2 + (g1c g2c / 2)(w1 + w2) = 0
    and keeps the root above both qubit frequencies.
    """
    w1, w2 = np.broadcast_arrays(
        np.asarray(omega1, dtype=float), np.asarray(omega2, dtype=float)
    )
    gg = params.g1c * params.g2c
    a = params.g12
    b = -(a * (w1 + w2) + gg)
    c = a * w1 * w2 + 0.5 * gg * (w1 + w2)
    disc = b * b - 4.0 * a * c
    if np.any(disc < 0):
        raise DdrInfeasibleError("decoupling quadratic has no real root")
    root = (-b + np.sqrt(disc)) / (2.0 * a)
    if np.any(root <= np.maximum(w1, w2)):
        raise DdrInfeasibleError("decoupling root not above both qubit frequencies")
    return root


def ddr_coupler_track(
    omega1: float, omega2_waveform: ChannelWaveform, params: DeviceParams
) -> ChannelWaveform:
    """Coupler-frequency waveform keeping the qubit-qubit coupling off.

    For each sample of the Q2 frequency trajectory, places the coupler at
    the decoupling root above both qubits, so the effective coupling is zero
    (within root-solve precision) at every sample.
    """
    roots = ddr_track_values(omega1, omega2_waveform.samples, params)
    return ChannelWaveform("freq_c", roots, omega2_waveform.dt)


def fast_adiabatic(
    coefficients,
    duration: float,
    omega2_idle: float,
    crossing: float,
    coupling: float,
    dt: float = DEFAULT_DT,
) -> ChannelWaveform:
    """Fourier-parametrized control-angle trajectory mapped to a Q2 detuning.

    theta(t) = theta_idle + sum_k c_k (1 - cos(2 pi k t / T)) with
    tan(theta) = 2*coupling / (omega2 - crossing).  The (1-cos) basis pins
    both endpoints to the idle frequency; theta = pi/2 corresponds to zero
    detuning (sitting exactly on the avoided crossing).
    """
    coeffs = np.asarray(coefficients, dtype=float)
    if coeffs.size < 1:
        raise PulseError("need at least one Fourier coefficient")
    n = n_samples(duration, dt)
    t = np.arange(n) * dt
    total = (n - 1) * dt
    delta_idle = omega2_idle - crossing
    theta_idle = np.arctan2(2.0 * coupling, delta_idle)
    theta = theta_idle * np.ones(n)
    for k, ck in enumerate(coeffs, start=1):
        theta = theta + ck * (1.0 - np.cos(2.0 * np.pi * k * t / total))
    if np.any(theta <= 0.0) or np.any(theta >= np.pi):
        raise PulseError("control angle left (0, pi); trajectory invalid")
    with np.errstate(divide="ignore"):
        delta = 2.0 * coupling / np.tan(theta)
    delta[np.abs(theta - 0.5 * np.pi) < 1e-12] = 0.0
    return ChannelWaveform("freq_q2", crossing + delta, dt)
