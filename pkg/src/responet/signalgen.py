"""Synthetic band-limited ground motions and paired response datasets.

Replaces recorded accelerograms with seeded band-pass filtered noise,
reproduces the usual preprocessing chain (zero-phase Butterworth filter,
resampling, peak rescaling), builds input/response pairs with one of the
solvers from :mod:`responet.lindyn`, and computes corpus statistics
(peak, trough, peak magnitude, energy).

Dataset directory layout (see ``save_dataset``):

* ``meta`` - text key/value: dt, m, count, solver, seed, units, ...
* ``inputs.csv`` / ``outputs.csv`` - one row per sample: integer id,
  then m values printed with 17 significant digits (lossless for
  float64, so save/load round-trips bit-exactly).
* ``stats.csv`` (optional) - corpus statistics table.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from . import lindyn

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """A dataset directory failed validation on load."""


@dataclass
class Signal:
    """A uniformly sampled acceleration (or response) trace."""

    dt: float
    samples: np.ndarray
    units: str = "m/s^2"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise ValueError("samples must be a nonempty vector")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite value in signal")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return self.dt * (len(self.samples) - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.dt


@dataclass
class ResponseDataset:
    """Paired ground accelerations and single-DOF responses on one grid."""

    inputs: list
    outputs: list
    dt: float
    m: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs must pair up")
        for sig in list(self.inputs) + list(self.outputs):
            if len(sig) != self.m or sig.dt != self.dt:
                raise ValueError("all signals must share dt and length")
        for out in self.outputs:
            if out.samples[0] != 0.0:
                raise ValueError("responses must start at rest (x[0] = 0)")

    def __len__(self):
        return len(self.inputs)

    def input_matrix(self) -> np.ndarray:
        return np.array([s.samples for s in self.inputs])

    def output_matrix(self) -> np.ndarray:
        return np.array([s.samples for s in self.outputs])


@dataclass
class FieldStats:
    min: float
    max: float
    mean: float
    sd: float

    def __post_init__(self):
        tol = 1e-12 * max(1.0, abs(self.min), abs(self.max))
        if self.mean < self.min - tol or self.mean > self.max + tol:
            raise ValueError("inconsistent statistics")


@dataclass
class CorpusStats:
    """Per-corpus min/max/mean/SD of the four per-record quantities.

    ``energy`` is the plain sum of squared samples (no dt factor), so
    values are only comparable across corpora sharing a sampling rate.
    SD uses the population convention (divide by count).
    """

    pga: FieldStats
    max_acc: FieldStats
    min_acc: FieldStats
    energy: FieldStats


def butterworth_bandpass(signal: Signal, f_low: float, f_high: float, order: int = 4) -> Signal:
    """Zero-phase digital Butterworth band-pass.

    Analog prototype mapped by the bilinear transform with frequency
    pre-warping, run forward then backward (effective order doubles,
    phase cancels).  Output length equals input length.
    """
    nyquist = 0.5 / signal.dt
    if not (0.0 < f_low < f_high < nyquist):
        raise ValueError("band edge at or above Nyquist frequency")
    # second-order sections: the flat (b, a) form of a band-pass with a low
    # corner far below Nyquist is numerically ill-conditioned
    sos = scipy.signal.butter(order, [f_low, f_high], btype="bandpass", fs=1.0 / signal.dt, output="sos")
    # edge padding must cover the slow transient of the low corner
    padlen = min(len(signal.samples) - 2, max(6 * order, int(3.0 / (f_low * signal.dt))))
    return replace(signal, samples=scipy.signal.sosfiltfilt(sos, signal.samples, padlen=padlen))


def resample(signal: Signal, new_dt: float) -> Signal:
    """Linear interpolation onto a new uniform grid spanning the same duration."""
    if new_dt <= 0:
        raise ValueError("new_dt must be positive")
    duration = signal.duration
    m_new = int(np.floor(duration / new_dt + 1e-9)) + 1
    new_t = np.arange(m_new) * new_dt
    samples = np.interp(new_t, signal.times, signal.samples)
    return replace(signal, dt=new_dt, samples=samples)


def pga_rescale(signal: Signal, target_pga: float) -> Signal:
    """Scale so the peak absolute sample equals the target exactly."""
    if target_pga <= 0:
        raise ValueError("target PGA must be positive")
    peak = np.abs(signal.samples).max()
    if peak == 0.0:
        raise ValueError("cannot rescale an all-zero signal")
    return replace(signal, samples=signal.samples * (target_pga / peak))


def _envelope(m: int) -> np.ndarray:
    # trapezoid: 10% ramp, 50% plateau, 40% decay
    ramp = int(round(0.1 * m))
    plateau = int(round(0.5 * m))
    decay = m - ramp - plateau
    return np.concatenate(
        [
            np.linspace(0.0, 1.0, ramp, endpoint=False),
            np.ones(plateau),
            np.linspace(1.0, 0.0, decay),
        ]
    )


def synth_ground_motion(
    seed: int,
    duration: float,
    dt: float,
    band: tuple[float, float],
    pga: float,
    units: str = "m/s^2",
) -> Signal:
    """Seeded band-limited noise shaped by a trapezoidal envelope.

    White Gaussian noise -> order-4 zero-phase band-pass -> envelope
    (10/50/40 ramp/plateau/decay) -> peak rescaling.  Deterministic in
    the seed; ``duration/dt`` must be an integer sample count.
    """
    m_float = duration / dt
    m = int(round(m_float))
    if abs(m_float - m) > 1e-9 or m < 10:
        raise ValueError("duration/dt must give an integer sample count (>= 10)")
    rng = np.random.default_rng(seed)
    noise = Signal(dt=dt, samples=rng.standard_normal(m), units=units)
    shaped = butterworth_bandpass(noise, band[0], band[1], order=4)
    shaped = replace(shaped, samples=shaped.samples * _envelope(m))
    return pga_rescale(shaped, pga)


_SOLVERS = ("duhamel", "newmark", "nonclassical")


def build_dataset(model, dof: int, signals, solver: str, meta: dict | None = None) -> ResponseDataset:
    """Solve every input at one DOF and pair the trajectories.

    ``model`` is a ``ClassicalModes`` for the duhamel solver, an
    ``MdofSystem`` for newmark, or ``NonClassicalModes`` for the
    complex-mode solver.  By convention DOF 0 is the monitored roof
    motion.  All inputs must share dt and length.
    """
    if solver not in _SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    signals = list(signals)
    if signals:
        dt0, m0 = signals[0].dt, len(signals[0])
        for sig in signals:
            if sig.dt != dt0 or len(sig) != m0:
                raise ValueError("mixed dt or length across signals")
    else:
        dt0, m0 = 1.0, 0
    outputs = []
    for sig in signals:
        if solver == "duhamel":
            out = lindyn.duhamel_response(model, dof, sig)
        elif solver == "nonclassical":
            out = lindyn.nonclassical_response(model, dof, sig)
        else:
            traj = lindyn.newmark_response(model, sig)
            out = replace(sig, samples=traj[dof])
        outputs.append(replace(out, units="m"))
    info = {"solver": solver, "dof": dof}
    if meta:
        info.update(meta)
    if not signals:
        return ResponseDataset(inputs=[], outputs=[], dt=dt0, m=m0, meta=info)
    return ResponseDataset(inputs=signals, outputs=outputs, dt=dt0, m=m0, meta=info)


def compute_stats(signals) -> CorpusStats:
    """Corpus statistics over per-record peak/trough/PGA/energy."""
    signals = list(signals)
    if not signals:
        raise ValueError("need at least one signal")
    rows = np.array(
        [
            (
                np.abs(s.samples).max(),
                s.samples.max(),
                s.samples.min(),
                float(np.sum(s.samples**2)),
            )
            for s in signals
        ]
    )

    def stats(col):
        return FieldStats(
            min=float(col.min()),
            max=float(col.max()),
            mean=float(col.mean()),
            sd=float(col.std()),  # population convention
        )

    return CorpusStats(
        pga=stats(rows[:, 0]),
        max_acc=stats(rows[:, 1]),
        min_acc=stats(rows[:, 2]),
        energy=stats(rows[:, 3]),
    )


def save_stats(stats: CorpusStats, path) -> None:
    with open(path, "w") as fh:
        fh.write("quantity,min,max,mean,sd\n")
        for name in ("pga", "max_acc", "min_acc", "energy"):
            fs = getattr(stats, name)
            fh.write(f"{name},{fs.min:.17g},{fs.max:.17g},{fs.mean:.17g},{fs.sd:.17g}\n")


def _write_rows(path, rows):
    with open(path, "w") as fh:
        for i, row in enumerate(rows):
            fh.write(str(i) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def save_dataset(ds: ResponseDataset, directory) -> None:
    """Write meta + inputs.csv + outputs.csv (+ stats.csv) to a directory."""
    os.makedirs(directory, exist_ok=True)
    units_in = ds.inputs[0].units if ds.inputs else "m/s^2"
    units_out = ds.outputs[0].units if ds.outputs else "m"
    with open(os.path.join(directory, "meta"), "w") as fh:
        fh.write(f"dt {ds.dt:.17g}\n")
        fh.write(f"m {ds.m}\n")
        fh.write(f"count {len(ds)}\n")
        fh.write(f"units_in {units_in}\n")
        fh.write(f"units_out {units_out}\n")
        for key, val in sorted(ds.meta.items()):
            fh.write(f"{key} {val}\n")
    _write_rows(os.path.join(directory, "inputs.csv"), (s.samples for s in ds.inputs))
    _write_rows(os.path.join(directory, "outputs.csv"), (s.samples for s in ds.outputs))
    if ds.inputs:
        save_stats(compute_stats(ds.inputs), os.path.join(directory, "stats.csv"))


def _read_rows(path, count, m):
    rows = np.zeros((count, m))
    with open(path) as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if len(lines) != count:
        raise DatasetFormatError(f"length mismatch: expected {count} rows in {os.path.basename(path)}")
    for i, line in enumerate(lines):
        parts = line.split(",")
        if len(parts) != m + 1:
            raise DatasetFormatError(f"length mismatch: row {i} in {os.path.basename(path)}")
        if int(parts[0]) != i:
            raise DatasetFormatError(f"malformed header: bad row id at row {i}")
        rows[i] = [float(v) for v in parts[1:]]
    if not np.all(np.isfinite(rows)):
        raise DatasetFormatError("non-finite value in dataset")
    return rows


def load_dataset(directory, trim: tuple[float, float] | None = None) -> ResponseDataset:
    """Load a dataset directory; optionally trim every record to a time window.

    ``trim=(t0, t1)`` keeps samples with t0 <= t <= t1 and reports the
    retained input-energy fraction in ``meta['trim_energy_retained']``
    (also logged), mirroring the bookkeeping done when long records are
    cut down.
    """
    meta_path = os.path.join(directory, "meta")
    try:
        with open(meta_path) as fh:
            pairs = [ln.strip().split(None, 1) for ln in fh if ln.strip()]
        meta = {k: v for k, v in pairs}
        dt = float(meta.pop("dt"))
        m = int(meta.pop("m"))
        count = int(meta.pop("count"))
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetFormatError(f"malformed header: {exc}") from exc
    units_in = meta.pop("units_in", "m/s^2")
    units_out = meta.pop("units_out", "m")
    u = _read_rows(os.path.join(directory, "inputs.csv"), count, m)
    x = _read_rows(os.path.join(directory, "outputs.csv"), count, m)
    if trim is not None:
        t0, t1 = trim
        j0 = max(0, int(np.ceil(t0 / dt - 1e-9)))
        j1 = min(m - 1, int(np.floor(t1 / dt + 1e-9)))
        if j1 <= j0:
            raise ValueError("trim window is empty")
        total = float(np.sum(u**2))
        u = u[:, j0 : j1 + 1]
        x = x[:, j0 : j1 + 1]
        retained = float(np.sum(u**2)) / total if total > 0 else 1.0
        meta["trim_energy_retained"] = f"{retained:.6f}"
        log.info("trim [%g, %g] s retains %.3f%% of input energy", t0, t1, 100 * retained)
        m = j1 + 1 - j0
        if trim[0] > 0:
            # responses no longer start at zero; re-zero the window origin
            x = x - x[:, :1]
    inputs = [Signal(dt=dt, samples=u[i], units=units_in) for i in range(count)]
    outputs = [Signal(dt=dt, samples=x[i], units=units_out) for i in range(count)]
    return ResponseDataset(inputs=inputs, outputs=outputs, dt=dt, m=m, meta=meta)
