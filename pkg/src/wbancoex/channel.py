"""Link-gain traces for on-body and inter-body channels.

All gains are power gains in dB. Conversion to linear power only happens
inside the SINR arithmetic of :mod:`wbancoex.link`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import DegenerateInputError, ParameterError, TraceParseError

SHADOW_LEVELS = ("none", "partial", "full")
COHERENCE_LEVEL = 0.7
TRACE_HEADER = "time_s,gain_db"
DT_REL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ChannelTrace:
    """Uniformly sampled link gain in dB.

    Sample ``k`` sits at ``t0 + k * dt``.
    """

    link_id: tuple[str, str]
    t0: float
    dt: float
    samples: np.ndarray
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if not self.dt > 0 or not math.isfinite(self.dt):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if samples.ndim != 1 or samples.size == 0:
            raise ParameterError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples must be finite")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "link_id", (str(self.link_id[0]), str(self.link_id[1])))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) * self.dt

    @property
    def t_end(self) -> float:
        """End of the time support (exclusive)."""
        return self.t0 + self.samples.size * self.dt

    def replace(self, **changes) -> "ChannelTrace":
        kw = dict(link_id=self.link_id, t0=self.t0, dt=self.dt,
                  samples=self.samples, meta=self.meta)
        kw.update(changes)
        return ChannelTrace(**kw)

    def index_at(self, t):
        """Block-fading lookup: index of the sample whose interval holds ``t``."""
        return np.floor((np.asarray(t, dtype=float) - self.t0) / self.dt + 1e-9).astype(np.int64)


@dataclass(frozen=True)
class FadingSpec:
    doppler_hz: float = 2.0
    path_loss_exponent: float = 2.0
    shadow_offset_db: float = -40.0
    reference_gain_db: float = -40.0

    def __post_init__(self):
        if not self.doppler_hz > 0:
            raise ParameterError(f"doppler_hz must be positive, got {self.doppler_hz}")
        if not self.path_loss_exponent >= 0:
            raise ParameterError("path_loss_exponent must be non-negative")
        if self.shadow_offset_db > 0:
            raise ParameterError("shadow_offset_db must be <= 0")


def _n_samples(duration, dt):
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if not duration > 0 or duration < dt * (1 - 1e-12):
        raise ParameterError(f"duration must be >= dt > 0, got duration={duration}, dt={dt}")
    return max(1, math.ceil(duration / dt - 1e-9))


def jakes_fading(doppler_hz: float, n: int, dt: float, seed: int, n_paths: int = 128) -> np.ndarray:
    """Complex sum-of-sinusoids Rayleigh fading with unit mean power.

    Arrival angles are equally spaced with a random common rotation, each
    path gets an independent uniform phase. The time autocorrelation tends
    to J0(2*pi*doppler_hz*tau).
    """
    if not doppler_hz > 0:
        raise ParameterError(f"doppler_hz must be positive, got {doppler_hz}")
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if n < 1 or n_paths < 1:
        raise ParameterError("n and n_paths must be >= 1")
    rng = np.random.default_rng(seed)
    rotation = rng.uniform(-np.pi, np.pi)
    phases = rng.uniform(-np.pi, np.pi, size=n_paths)
    alpha = (2 * np.pi * np.arange(n_paths) + rotation) / n_paths
    w = 2 * np.pi * doppler_hz * np.cos(alpha)
    # block evaluation: phasors inside a block are a fixed matrix times per-block path phases
    block = min(n, 2048)
    within = np.exp(1j * np.outer(np.arange(block) * dt, w))
    h = np.empty(n, dtype=complex)
    for start in range(0, n, block):
        stop = min(start + block, n)
        coeff = np.exp(1j * (w * (start * dt) + phases))
        h[start:stop] = within[: stop - start] @ coeff
    return h / np.sqrt(n_paths)


def _power_db(p):
    return 10.0 * np.log10(np.maximum(p, np.finfo(float).tiny))


def gen_small_scale(spec: FadingSpec, duration: float, dt: float, seed: int,
                    link_id=("", "")) -> ChannelTrace:
    """Rayleigh small-scale power gain (dB, 0 dB mean linear power)."""
    n = _n_samples(duration, dt)
    h = jakes_fading(spec.doppler_hz, n, dt, seed)
    return ChannelTrace(link_id, 0.0, dt, _power_db(np.abs(h) ** 2),
                        {"kind": "small_scale", "doppler_hz": repr(spec.doppler_hz)})


def path_loss_db(distance, spec: FadingSpec):
    """Mean path gain in dB at ``distance`` metres (1 m reference)."""
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0)):
        raise ParameterError("distance must be positive")
    out = spec.reference_gain_db - 10.0 * spec.path_loss_exponent * np.log10(d)
    return float(out) if out.ndim == 0 else out


def shadow_offset_db(level: str, spec: FadingSpec) -> float:
    # "partial" is half the full offset in dB; the level is not quantified elsewhere
    if level == "none":
        return 0.0
    if level == "partial":
        return spec.shadow_offset_db / 2.0
    if level == "full":
        return spec.shadow_offset_db
    raise ParameterError(f"unknown shadowing level {level!r}; expected one of {SHADOW_LEVELS}")


def apply_shadowing(trace: ChannelTrace, level: str, spec: FadingSpec) -> ChannelTrace:
    offset = shadow_offset_db(level, spec)
    if offset == 0.0:
        return trace
    return trace.replace(samples=trace.samples + offset)


def gen_interbody(distance_m, dt: float, spec: FadingSpec, level: str, seed: int,
                  link_id=("", "")) -> ChannelTrace:
    """Simulated body-to-body gain: path loss + shadowing + Rayleigh fading.

    ``distance_m`` holds one inter-subject distance per output sample.
    """
    d = np.asarray(distance_m, dtype=float)
    mean = path_loss_db(d, spec) + shadow_offset_db(level, spec)
    h = jakes_fading(spec.doppler_hz, d.size, dt, seed)
    return ChannelTrace(link_id, 0.0, dt, mean + _power_db(np.abs(h) ** 2),
                        {"kind": "interbody", "shadowing": level})


def gen_onbody(mean_db: float, sigma_db: float, coherence_s: float, duration: float,
               dt: float, seed: int, link_id=("", "")) -> ChannelTrace:
    """Synthetic on-body gain: Gaussian AR(1) in dB around ``mean_db``.

    The lag-one coefficient is chosen so the autocorrelation decays to 0.7
    after ``coherence_s`` seconds.
    """
    n = _n_samples(duration, dt)
    if sigma_db < 0 or not coherence_s > 0:
        raise ParameterError("sigma_db must be >= 0 and coherence_s > 0")
    rho = COHERENCE_LEVEL ** (dt / coherence_s)
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    e[1:] *= math.sqrt(1 - rho * rho)
    x = lfilter([1.0], [1.0, -rho], e)
    return ChannelTrace(link_id, 0.0, dt, mean_db + sigma_db * x, {"kind": "onbody"})


def resample(trace: ChannelTrace, target_dt: float) -> ChannelTrace:
    """Block-mean down-sampling (dB domain); a trailing partial block is dropped."""
    if not target_dt > 0 or target_dt < trace.dt * (1 - 1e-9):
        raise ParameterError(f"target_dt {target_dt} must be >= trace dt {trace.dt}")
    ratio = target_dt / trace.dt
    if abs(ratio - 1.0) < 1e-9:
        return trace
    n = len(trace)
    block = np.floor(np.arange(n) / ratio + 1e-9).astype(np.int64)
    n_blocks = int(math.floor(n / ratio + 1e-9))
    if n_blocks == 0:
        raise ParameterError("trace shorter than one target block")
    keep = block < n_blocks
    sums = np.bincount(block[keep], weights=trace.samples[keep], minlength=n_blocks)
    counts = np.bincount(block[keep], minlength=n_blocks)
    return trace.replace(dt=float(target_dt), samples=sums / counts)


def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Biased sample autocorrelation coefficients r_0..r_max_lag (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = n - 1
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    if acov[0] <= 0:
        raise DegenerateInputError("zero variance")
    return acov / acov[0]


def coherence_time(trace: ChannelTrace) -> float:
    """Smallest positive lag (s) where the autocorrelation drops below 0.7."""
    if len(trace) < 3:
        raise ParameterError("coherence_time needs at least 3 samples")
    if np.ptp(trace.samples) == 0:
        raise DegenerateInputError("constant trace has no coherence time")
    r = autocorrelation(trace.samples)
    below = np.nonzero(r[1:] < COHERENCE_LEVEL)[0]
    if below.size == 0:
        raise DegenerateInputError("autocorrelation never drops below 0.7 within the trace")
    return float(below[0] + 1) * trace.dt


def moving_average(x, k: int) -> np.ndarray:
    """Centred moving average over ``k`` samples with truncated edge windows."""
    x = np.asarray(x, dtype=float)
    n = x.size
    left = (k - 1) // 2
    right = k - 1 - left
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right + 1, n)
    return (c[hi] - c[lo]) / (hi - lo)


def extract_large_scale(trace: ChannelTrace, window: float | None = None) -> ChannelTrace:
    """Large-scale (shadowing) component as a centred moving average in dB.

    ``window`` defaults to twice the trace's coherence time.
    """
    if window is None:
        window = 2.0 * coherence_time(trace)
    if window < trace.dt * (1 - 1e-9):
        raise ParameterError(f"window {window} shorter than dt {trace.dt}")
    k = max(1, int(round(window / trace.dt)))
    if k == 1:
        return trace
    return trace.replace(samples=moving_average(trace.samples, k))


def _same_dt(a: ChannelTrace, b: ChannelTrace):
    return abs(a.dt - b.dt) <= DT_REL_TOL * max(a.dt, b.dt)


def overlay(interbody: ChannelTrace, onbody_shadow: ChannelTrace) -> ChannelTrace:
    """dB sum of two traces over their overlapping time support."""
    if not _same_dt(interbody, onbody_shadow):
        raise ParameterError(
            f"dt mismatch ({interbody.dt} vs {onbody_shadow.dt}); resample first")
    dt = interbody.dt
    start = max(interbody.t0, onbody_shadow.t0)
    ia = int(round((start - interbody.t0) / dt))
    ib = int(round((start - onbody_shadow.t0) / dt))
    length = min(len(interbody) - ia, len(onbody_shadow) - ib)
    if length <= 0:
        raise ParameterError("traces do not overlap in time")
    samples = interbody.samples[ia:ia + length] + onbody_shadow.samples[ib:ib + length]
    return ChannelTrace(interbody.link_id, interbody.t0 + ia * dt, dt, samples,
                        {**interbody.meta, "overlay": "1"})


def split_trace(trace: ChannelTrace, sample_index: int) -> tuple[ChannelTrace, ChannelTrace]:
    """Split into samples ``[0, idx)`` and ``[idx, end)``."""
    if not 0 < sample_index < len(trace):
        raise ParameterError(f"split index {sample_index} outside (0, {len(trace)})")
    head = trace.replace(samples=trace.samples[:sample_index])
    tail = trace.replace(t0=trace.t0 + sample_index * trace.dt,
                         samples=trace.samples[sample_index:])
    return head, tail


# --- trace CSV ------------------------------------------------------------

def format_meta(meta: Mapping[str, object]) -> str:
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


def save_trace(trace: ChannelTrace, path, extra_meta: Mapping[str, object] | None = None):
    meta = {"link_src": trace.link_id[0], "link_dst": trace.link_id[1],
            "t0": repr(trace.t0), "dt": repr(trace.dt)}
    meta.update({k: v for k, v in trace.meta.items() if k not in meta})
    if extra_meta:
        meta.update(extra_meta)
    lines = [format_meta(meta), TRACE_HEADER, "\n"]
    times = trace.times
    lines.extend(f"{t!r},{g!r}\n" for t, g in zip(times.tolist(), trace.samples.tolist()))
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def read_commented_csv(path, header: str):
    """Yield ``(meta, rows)`` from a ``# key=value``-prefixed CSV.

    Rows are lists of strings paired with their 1-based line number.
    """
    meta: dict[str, str] = {}
    rows = []
    seen_header = False
    with open(path, encoding="utf-8", newline=None) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not seen_header:
                if line.startswith("#"):
                    key, sep, value = line[1:].strip().partition("=")
                    if not sep:
                        raise TraceParseError("metadata line must be '# key=value'", path, lineno)
                    meta[key.strip()] = value.strip()
                    continue
                if line.strip() == "":
                    continue
                if line.strip() != header:
                    raise TraceParseError(f"expected header {header!r}, got {line!r}", path, lineno)
                seen_header = True
                continue
            if line.strip() == "":
                continue
            rows.append((lineno, line.split(",")))
    if not seen_header:
        raise TraceParseError(f"missing header {header!r}", path)
    return meta, rows


def load_trace(path, link_id: Sequence[str] | None = None) -> ChannelTrace:
    meta, rows = read_commented_csv(path, TRACE_HEADER)
    if not rows:
        raise TraceParseError("trace has no samples", path)
    times = np.empty(len(rows))
    gains = np.empty(len(rows))
    for i, (lineno, cols) in enumerate(rows):
        if len(cols) != 2:
            raise TraceParseError(f"expected 2 columns, got {len(cols)}", path, lineno)
        try:
            times[i] = float(cols[0])
            gains[i] = float(cols[1])
        except ValueError as exc:
            raise TraceParseError(f"non-numeric value: {exc}", path, lineno) from None
        if not (math.isfinite(times[i]) and math.isfinite(gains[i])):
            raise TraceParseError("non-finite value", path, lineno)
    if "dt" in meta:
        dt = float(meta["dt"])
    elif len(rows) > 1:
        dt = times[1] - times[0]
    else:
        raise TraceParseError("single-sample trace needs a '# dt=' header", path)
    if not dt > 0:
        raise TraceParseError(f"non-positive time step {dt}", path)
    if len(rows) > 1:
        steps = np.diff(times)
        bad = np.nonzero(np.abs(steps - dt) > DT_REL_TOL * dt)[0]
        if bad.size:
            lineno = rows[bad[0] + 1][0]
            raise TraceParseError(f"time step {steps[bad[0]]!r} differs from {dt!r}", path, lineno)
    if link_id is None:
        if "link_src" not in meta or "link_dst" not in meta:
            raise TraceParseError("no link_id given and no link_src/link_dst metadata", path)
        link_id = (meta["link_src"], meta["link_dst"])
    t0 = float(meta["t0"]) if "t0" in meta else float(times[0])
    return ChannelTrace(tuple(link_id), t0, dt, gains, meta)


def load_traces(paths: Iterable) -> dict[tuple[str, str], ChannelTrace]:
    out = {}
    for p in paths:
        tr = load_trace(p)
        out[tr.link_id] = tr
    return out
