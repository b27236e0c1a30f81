"""PMU record conditioning: resampling, noising, windowing, tensor assembly.

The conditioning chain mirrors a realistic acquisition pipeline: records are
captured at a high device rate, downsampled to the analysis rate, corrupted
with Gaussian measurement noise calibrated to a target SNR, cropped to a
feature window, flattened into fixed-layout tensors and min/max normalized
into [0, 1].

Tensor layout is feature-major, then bus, then time, so a record with 10
monitored buses, a 1 s window at 200 Hz and two selected channels flattens
to 200 * 2 * 10 = 4000 values.
"""

from __future__ import annotations

import enum
import math
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import PmuRecordSet

__all__ = [
    "Feature",
    "FeatureSet",
    "Dataset",
    "NormalizationStats",
    "resample",
    "resample_record",
    "add_noise",
    "measured_snr",
    "extract_window",
    "assemble_features",
    "compute_normalization",
    "apply_normalization",
    "minmax_normalize",
    "replace_with_noise",
]

DATASET_MAGIC = b"INRDSET1"


class Feature(enum.IntEnum):
    """Candidate PMU channels, in canonical order."""

    SPEED = 0  # rotor speed deviation
    ROCOF = 1  # speed derivative
    ANGLE = 2  # voltage-phasor angle deviation

    @property
    def channel(self):
        return ("speed", "rocof", "angle")[self.value]


_FEATURE_BY_NAME = {f.channel: f for f in Feature}


@dataclass(frozen=True)
class FeatureSet:
    """Non-empty, duplicate-free channel selection in canonical order."""

    members: tuple

    def __init__(self, members):
        feats = []
        for m in members:
            feats.append(m if isinstance(m, Feature) else _FEATURE_BY_NAME[str(m)])
        if not feats:
            raise ValueError("feature set must not be empty")
        if len(set(feats)) != len(feats):
            raise ValueError(f"duplicate features in {feats}")
        object.__setattr__(self, "members", tuple(sorted(feats)))

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, item):
        return item in self.members

    @property
    def bitmask(self):
        return sum(1 << f.value for f in self.members)

    @classmethod
    def from_bitmask(cls, mask):
        return cls([f for f in Feature if mask & (1 << f.value)])

    def names(self):
        return tuple(f.channel for f in self.members)

    def __str__(self):
        return "+".join(self.names())


def resample(series, src_rate, target_rate):
    """Downsample a uniform series with a 4-tap anti-alias prefilter.

    The moving-average prefilter is phase-compensated (its half-sample group
    delay is accounted for in the interpolation grid) and the series is
    extended by linear extrapolation before filtering, so affine signals are
    reproduced exactly.  Output length is ``floor(duration * target_rate)``.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or len(series) < 2:
        raise ValueError("series must be 1-D with at least 2 samples")
    if target_rate > src_rate:
        raise ValueError(
            f"upsampling not supported: {src_rate} Hz -> {target_rate} Hz"
        )
    n = len(series)
    first_step = series[1] - series[0]
    last_step = series[-1] - series[-2]
    padded = np.concatenate(
        (
            [series[0] - 2.0 * first_step, series[0] - first_step],
            series,
            [series[-1] + last_step],
        )
    )
    # filtered[j] averages source samples j-2 .. j+1: center at (j - 0.5)/src
    filt = (padded[:-3] + padded[1:-2] + padded[2:-1] + padded[3:]) / 4.0

    out_len = int(math.floor(n * float(target_rate) / float(src_rate) + 1e-12))
    pos = np.arange(out_len) * (float(src_rate) / float(target_rate)) + 0.5
    idx = np.clip(np.floor(pos).astype(np.intp), 0, n - 2)
    frac = pos - idx
    return filt[idx] * (1.0 - frac) + filt[idx + 1] * frac


def resample_record(record, target_rate):
    """Apply :func:`resample` to every channel of a record set."""
    chans = {
        name: np.stack(
            [resample(row, record.rate, target_rate) for row in record.channel(name)]
        )
        for name in PmuRecordSet.CHANNELS
    }
    return replace(record, rate=float(target_rate), **chans)


def measured_snr(clean, noisy):
    """Observed signal-to-noise ratio in dB; +inf for a zero residual."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape or clean.size < 2:
        raise ValueError("series must have equal length >= 2")
    resid_power = np.mean((noisy - clean) ** 2)
    if resid_power == 0.0:
        return math.inf
    signal_power = np.mean(clean**2)
    if signal_power == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal_power / resid_power)


def add_noise(record, snr_db, seed):
    """Add zero-mean Gaussian noise at ``snr_db`` to every channel.

    Noise variance is per (channel, bus) series: signal power divided by
    ``10**(snr_db / 10)``.  ``snr_db = inf`` disables noising.  All-zero
    series are left untouched with a warning since no noise scale is
    definable for them.  Deterministic for a given seed.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return record
    powers = [
        np.mean(record.channel(name) ** 2, axis=1) for name in PmuRecordSet.CHANNELS
    ]
    if not any(p.any() for p in powers):
        raise ValueError("record has no channel with nonzero power")
    rng = np.random.default_rng(seed)
    ratio = 10.0 ** (snr_db / 10.0)
    out = {}
    for name, power in zip(PmuRecordSet.CHANNELS, powers):
        data = record.channel(name).copy()
        for row, p in enumerate(power):
            if p == 0.0:
                warnings.warn(
                    f"channel {name}/bus {record.bus_ids[row]} is all-zero; "
                    "noise skipped",
                    stacklevel=2,
                )
                continue
            data[row] += rng.normal(0.0, math.sqrt(p / ratio), data.shape[1])
        out[name] = data
    return replace(record, **out)


def extract_window(record, t_start, t_stop):
    """Crop all channels to ``[t_start, t_stop)``."""
    if not 0.0 <= t_start < t_stop:
        raise ValueError(f"need 0 <= t_start < t_stop, got [{t_start}, {t_stop})")
    if t_stop > record.duration + 1e-9:
        raise ValueError(
            f"window [{t_start}, {t_stop}) exceeds record duration {record.duration}"
        )
    i0 = round(record.rate * t_start)
    count = round(record.rate * (t_stop - t_start))
    if i0 + count > record.n_samples:
        raise ValueError("window exceeds record bounds")
    chans = {
        name: record.channel(name)[:, i0 : i0 + count].copy()
        for name in PmuRecordSet.CHANNELS
    }
    return replace(record, **chans)


def assemble_features(record, features):
    """Flatten selected channels into one vector (feature, bus, time order)."""
    features = features if isinstance(features, FeatureSet) else FeatureSet(features)
    parts = [record.channel(f.channel) for f in features]
    if len({p.shape for p in parts}) != 1:
        raise ValueError("record channels disagree on shape")
    return np.concatenate([p.ravel() for p in parts])


def replace_with_noise(record, feature, seed):
    """Swap one channel for seeded unit-variance Gaussian noise.

    Used to build control datasets in which a candidate feature carries no
    information about the label.
    """
    feature = feature if isinstance(feature, Feature) else _FEATURE_BY_NAME[str(feature)]
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(record.channel(feature.channel).shape)
    return replace(record, **{feature.channel: noise})


@dataclass(frozen=True)
class NormalizationStats:
    """Per (feature, bus) channel extrema used by min/max scaling."""

    minima: np.ndarray
    maxima: np.ndarray

    @property
    def n_channels(self):
        return len(self.minima)


def _channel_view(batch, n_channels):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("batch must be a non-empty [n_samples, length] array")
    if batch.shape[1] % n_channels:
        raise ValueError(
            f"tensor length {batch.shape[1]} not divisible into {n_channels} channels"
        )
    return batch.reshape(batch.shape[0], n_channels, -1)


def compute_normalization(batch, n_channels):
    """Channel-wise extrema over a whole batch of flattened tensors."""
    view = _channel_view(batch, n_channels)
    return NormalizationStats(
        minima=view.min(axis=(0, 2)), maxima=view.max(axis=(0, 2))
    )


def apply_normalization(batch, stats):
    """Scale each channel into [0, 1]; constant channels map to zero."""
    view = _channel_view(batch, stats.n_channels)
    span = stats.maxima - stats.minima
    safe = np.where(span > 0.0, span, 1.0)
    scaled = (view - stats.minima[None, :, None]) / safe[None, :, None]
    scaled[:, span == 0.0, :] = 0.0
    return scaled.reshape(view.shape[0], -1)


def minmax_normalize(batch, n_channels):
    """Convenience wrapper: compute stats on ``batch`` and apply them."""
    stats = compute_normalization(batch, n_channels)
    return apply_normalization(batch, stats), stats


@dataclass
class Dataset:
    """Normalized training corpus: tensors, labels and pipeline provenance.

    ``tensors`` is [n_samples, length] float64 whose values have been
    canonicalized through float32 so that in-memory data matches a
    save/load round trip bit for bit.
    """

    tensors: np.ndarray
    labels: np.ndarray
    features: FeatureSet
    window: tuple
    snr_db: float
    n_buses: int
    stats: NormalizationStats
    amplitudes: np.ndarray | None = None  # per-sample probe amplitude, if known

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.tensors.shape[0] != self.labels.shape[0]:
            raise ValueError("tensors and labels disagree on sample count")

    def __len__(self):
        return self.tensors.shape[0]

    @property
    def tensor_length(self):
        return self.tensors.shape[1]

    def subset(self, indices):
        amps = None if self.amplitudes is None else self.amplitudes[indices]
        return Dataset(
            tensors=self.tensors[indices],
            labels=self.labels[indices],
            features=self.features,
            window=self.window,
            snr_db=self.snr_db,
            n_buses=self.n_buses,
            stats=self.stats,
            amplitudes=amps,
        )

    def to_bytes(self):
        """Serialize to the documented little-endian container."""
        head = struct.pack(
            "<QQIIdddQ",
            len(self),
            self.tensor_length,
            self.features.bitmask,
            self.n_buses,
            float(self.window[0]),
            float(self.window[1]),
            float(self.snr_db),
            self.stats.n_channels,
        )
        blobs = [
            DATASET_MAGIC,
            head,
            np.asarray(self.stats.minima, dtype="<f8").tobytes(),
            np.asarray(self.stats.maxima, dtype="<f8").tobytes(),
        ]
        values = np.ascontiguousarray(self.tensors, dtype="<f4")
        for label, row in zip(self.labels, values):
            blobs.append(struct.pack("<d", label))
            blobs.append(row.tobytes())
        return b"".join(blobs)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def header_from_bytes(cls, blob):
        if blob[: len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise ValueError("not a dataset file: bad magic")
        fmt = "<QQIIdddQ"
        fields = struct.unpack_from(fmt, blob, len(DATASET_MAGIC))
        n, length, mask, n_buses, t0, t1, snr_db, n_chan = fields
        return {
            "n_samples": n,
            "tensor_length": length,
            "features": str(FeatureSet.from_bitmask(mask)),
            "n_buses": n_buses,
            "window": (t0, t1),
            "snr_db": snr_db,
            "n_channels": n_chan,
        }

    @classmethod
    def from_bytes(cls, blob):
        if blob[: len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise ValueError("not a dataset file: bad magic")
        fmt = "<QQIIdddQ"
        off = len(DATASET_MAGIC)
        n, length, mask, n_buses, t0, t1, snr_db, n_chan = struct.unpack_from(
            fmt, blob, off
        )
        off += struct.calcsize(fmt)
        minima = np.frombuffer(blob, dtype="<f8", count=n_chan, offset=off).copy()
        off += 8 * n_chan
        maxima = np.frombuffer(blob, dtype="<f8", count=n_chan, offset=off).copy()
        off += 8 * n_chan
        labels = np.empty(n)
        tensors = np.empty((n, length), dtype=np.float32)
        for i in range(n):
            (labels[i],) = struct.unpack_from("<d", blob, off)
            off += 8
            tensors[i] = np.frombuffer(blob, dtype="<f4", count=length, offset=off)
            off += 4 * length
        return cls(
            tensors=tensors.astype(np.float64),
            labels=labels,
            features=FeatureSet.from_bitmask(mask),
            window=(t0, t1),
            snr_db=snr_db,
            n_buses=n_buses,
            stats=NormalizationStats(minima=minima, maxima=maxima),
        )

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
