"""Synthetic pitch-catch guided-wave acquisitions and their image encoding.

The propagation model is intentionally small: a Hann-windowed tone burst
travels at one group velocity with geometric and exponential attenuation,
picks up a single first-order boundary echo, and, when damage is present,
a scattered arrival via the damage site. Different "materials" are
different (velocity, attenuation) pairs.

Units: distances in mm, velocity in mm/us, attenuation in 1/mm,
frequencies in Hz.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .dataset import PLATE_DIMS, DomainDataset

# Sensor and damage coordinates (mm) of the reference plates.
SENSORS = {
    "PZT1": (100.0, 230.0), "PZT2": (43.0, 207.0), "PZT3": (20.0, 150.0),
    "PZT4": (43.0, 94.0), "PZT5": (100.0, 70.0), "PZT6": (157.0, 94.0),
    "PZT7": (180.0, 150.0), "PZT8": (157.0, 207.0), "PZT9": (20.0, 30.0),
    "PZT10": (20.0, 270.0), "PZT11": (100.0, 270.0), "PZT12": (180.0, 270.0),
    "PZT13": (180.0, 30.0), "PZT14": (100.0, 30.0),
}

DAMAGES = {
    "D1": (35.0, 255.0), "D2": (65.0, 255.0), "D3": (125.0, 255.0), "D4": (155.0, 255.0),
    "D5": (35.0, 225.0), "D6": (65.0, 225.0), "D7": (125.0, 225.0), "D8": (155.0, 225.0),
    "D9": (65.0, 195.0), "D10": (95.0, 195.0), "D11": (125.0, 195.0), "D12": (35.0, 165.0),
    "D13": (65.0, 165.0), "D14": (95.0, 165.0), "D15": (125.0, 165.0), "D16": (155.0, 165.0),
    "D17": (35.0, 135.0), "D18": (65.0, 135.0), "D19": (95.0, 135.0), "D20": (125.0, 135.0),
    "D21": (155.0, 135.0), "D22": (65.0, 105.0), "D23": (95.0, 105.0), "D24": (125.0, 105.0),
    "D25": (35.0, 75.0), "D26": (65.0, 75.0), "D27": (125.0, 75.0), "D28": (155.0, 75.0),
    "D29": (35.0, 45.0), "D30": (65.0, 45.0), "D31": (125.0, 45.0), "D32": (155.0, 45.0),
}

NETWORKS = {
    "circular": {
        "transducers": tuple(f"PZT{i}" for i in range(1, 9)),
        "damages": tuple(f"D{i}" for i in range(9, 25)),
    },
    "rectangular": {
        "transducers": ("PZT3", "PZT7", "PZT9", "PZT10", "PZT11", "PZT12", "PZT13", "PZT14"),
        "damages": tuple(f"D{i}" for i in range(1, 33)),
    },
}


def worker_count() -> int:
    """Worker cap from ``TDA_THREADS``; results do not depend on it."""
    try:
        return max(1, int(os.environ.get("TDA_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ToneBurstConfig:
    f0: float = 150e3
    cycles: int = 5
    fs: float = 4e6
    n_samples: int = 1321
    amplitude: float = 1.0

    def __post_init__(self):
        if self.f0 <= 0 or self.fs <= 0 or self.cycles < 1 or self.n_samples < 1:
            raise ValueError("tone burst parameters must be positive")
        if not self.f0 < self.fs / 2:
            raise ValueError(f"f0={self.f0} must be below Nyquist {self.fs / 2}")
        if self.cycles * self.fs / self.f0 > self.n_samples:
            raise ValueError("burst does not fit in n_samples")

    @property
    def duration(self) -> float:
        return self.cycles / self.f0


def burst_waveform(t: np.ndarray, cfg: ToneBurstConfig) -> np.ndarray:
    """Evaluate the windowed burst at times ``t`` (seconds); zero outside [0, T)."""
    t = np.asarray(t, dtype=np.float64)
    inside = (t >= 0) & (t < cfg.duration)
    w = 0.5 * (1.0 - np.cos(2 * np.pi * cfg.f0 * t / cfg.cycles))
    out = cfg.amplitude * w * np.sin(2 * np.pi * cfg.f0 * t)
    return np.where(inside, out, 0.0)


def tone_burst(cfg: ToneBurstConfig = ToneBurstConfig()) -> np.ndarray:
    return burst_waveform(np.arange(cfg.n_samples) / cfg.fs, cfg)


def butterworth_bandpass(x, lo: float = 50e3, hi: float = 250e3, order: int = 4,
                         fs: float = 4e6, axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward application)."""
    if not 0 < lo < hi < fs / 2:
        raise ValueError(f"invalid band ({lo}, {hi}) for fs={fs}")
    sos = sps.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=axis)


def median_stack(repeats) -> np.ndarray:
    if len(repeats) == 0:
        raise ValueError("need at least one acquisition")
    lengths = {len(r) for r in repeats}
    if len(lengths) != 1:
        raise ValueError(f"ragged acquisitions: lengths {sorted(lengths)}")
    return np.median(np.asarray(repeats, dtype=np.float64), axis=0)


@dataclass(frozen=True)
class PlateScenario:
    group_velocity: float = 5.0
    attenuation_coeff: float = 0.002
    scatter_amplitude: float = 0.3
    boundary_reflection: float = 0.5
    rng_seed: int = 0
    noise_level: float = 0.0  # acquisition noise std, relative to burst amplitude
    repeats: int = 20
    material: str = "M1"
    plate_dims: tuple[float, float] = PLATE_DIMS
    sensors: dict = field(default_factory=lambda: dict(SENSORS))
    damage_sites: dict = field(default_factory=lambda: dict(DAMAGES))
    burst: ToneBurstConfig = ToneBurstConfig()

    def __post_init__(self):
        if self.group_velocity <= 0:
            raise ValueError("group_velocity must be positive")
        if not 0 <= self.scatter_amplitude <= 1:
            raise ValueError("scatter_amplitude must lie in [0, 1]")
        if self.attenuation_coeff < 0 or self.noise_level < 0 or self.repeats < 1:
            raise ValueError("attenuation, noise level and repeats must be nonnegative/positive")
        w, h = self.plate_dims
        for name, table in (("sensor", self.sensors), ("damage", self.damage_sites)):
            for key, (x, y) in table.items():
                if not (0 <= x <= w and 0 <= y <= h):
                    raise ValueError(f"{name} {key} at ({x}, {y}) lies outside the plate")


def _amplitude(dist: float, alpha: float) -> float:
    return math.exp(-alpha * dist) / math.sqrt(max(dist, 1.0))


def _echo_length(src, dst, plate_dims) -> float:
    # shortest image-source path via one of the four edges
    (sx, sy), (dx, dy) = src, dst
    w, h = plate_dims
    mirrors = [(-sx, sy), (2 * w - sx, sy), (sx, -sy), (sx, 2 * h - sy)]
    return min(math.hypot(mx - dx, my - dy) for mx, my in mirrors)


def sensing_ids(network: str, actuator_id: str) -> list[str]:
    return [s for s in NETWORKS[network]["transducers"] if s != actuator_id]


def synth_acquisition(scenario: PlateScenario, damage_id: str | None, actuator_id: str,
                      network: str = "circular") -> np.ndarray:
    """Noise-free signals at every sensing transducer, shape (n_sens, n_samples)."""
    if network not in NETWORKS:
        raise ValueError(f"unknown network {network!r}")
    if actuator_id not in NETWORKS[network]["transducers"] or actuator_id not in scenario.sensors:
        raise KeyError(f"unknown actuator {actuator_id!r} for {network} network")
    if damage_id is not None and damage_id not in scenario.damage_sites:
        raise KeyError(f"unknown damage site {damage_id!r}")
    cfg = scenario.burst
    t = np.arange(cfg.n_samples) / cfg.fs
    v = scenario.group_velocity * 1e6  # mm/s
    alpha = scenario.attenuation_coeff
    act = scenario.sensors[actuator_id]

    out = []
    for sid in sensing_ids(network, actuator_id):
        sen = scenario.sensors[sid]
        d = math.dist(act, sen)
        x = _amplitude(d, alpha) * burst_waveform(t - d / v, cfg)
        if scenario.boundary_reflection:
            de = _echo_length(act, sen, scenario.plate_dims)
            x = x + scenario.boundary_reflection * _amplitude(de, alpha) * burst_waveform(t - de / v, cfg)
        if damage_id is not None and scenario.scatter_amplitude:
            dam = scenario.damage_sites[damage_id]
            ds = math.dist(act, dam) + math.dist(dam, sen)
            x = x + scenario.scatter_amplitude * _amplitude(ds, alpha) * burst_waveform(t - ds / v, cfg)
        out.append(x)
    return np.array(out)


@dataclass(frozen=True)
class SignalSet:
    series: np.ndarray  # (n_act, n_sens, n_samples)

    def __post_init__(self):
        s = np.asarray(self.series, dtype=np.float64)
        if s.ndim != 3:
            raise ValueError(f"series must be (n_act, n_sens, n_samples), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("series must be finite")
        object.__setattr__(self, "series", s)

    @property
    def n_act(self) -> int:
        return self.series.shape[0]

    @property
    def n_sens(self) -> int:
        return self.series.shape[1]

    @property
    def n_samples(self) -> int:
        return self.series.shape[2]


@dataclass(frozen=True)
class GrayscaleImage:
    values: np.ndarray  # (n_sens, n_act * n_samples), in [-1, 1]
    label: tuple[float, float]
    n_samples: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] % self.n_samples:
            raise ValueError(f"image columns {v.shape} not a multiple of {self.n_samples}")
        if np.any(np.abs(v) > 1.0):
            raise ValueError("grayscale values must lie in [-1, 1]")
        object.__setattr__(self, "values", v)

    def block(self, actuator: int, sensor: int) -> np.ndarray:
        ns = self.n_samples
        return self.values[sensor, actuator * ns:(actuator + 1) * ns]


def encode_grayscale(sigset: SignalSet, normalizer: float, label=(0.0, 0.0)) -> GrayscaleImage:
    """Row j, column block i holds the actuator-i to sensor-j series / normalizer."""
    if not normalizer > 0:
        raise ValueError("normalizer must be positive")
    s = sigset.series
    img = np.transpose(s, (1, 0, 2)).reshape(sigset.n_sens, sigset.n_act * sigset.n_samples)
    img = np.clip(img / normalizer, -1.0, 1.0)
    return GrayscaleImage(img, (float(label[0]), float(label[1])), sigset.n_samples)


def add_snr_noise(values: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    p_signal = float(np.mean(values ** 2))
    if p_signal <= 0:
        raise ValueError("signal power is zero; SNR undefined")
    sigma = math.sqrt(p_signal / 10 ** (snr_db / 10))
    return values + rng.normal(0.0, sigma, size=values.shape)


def augment(img: GrayscaleImage, copies: int, snr_min_db: float = 20.0, snr_max_db: float = 40.0,
            rng: np.random.Generator | None = None) -> list[GrayscaleImage]:
    """Noisy copies with per-copy SNR drawn uniformly in [snr_min_db, snr_max_db]."""
    if copies < 1:
        raise ValueError("copies must be >= 1")
    if not snr_min_db <= snr_max_db:
        raise ValueError(f"invalid SNR bounds ({snr_min_db}, {snr_max_db})")
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for _ in range(copies):
        snr = rng.uniform(snr_min_db, snr_max_db)
        noisy = np.clip(add_snr_noise(img.values, snr, rng), -1.0, 1.0)
        out.append(GrayscaleImage(noisy, img.label, img.n_samples))
    return out


def acquire(scenario: PlateScenario, damage_id: str, network: str, site_index: int) -> SignalSet:
    """Repeated noisy acquisitions per actuator, median-stacked and band-passed."""
    cfg = scenario.burst
    series = []
    for a_idx, act in enumerate(NETWORKS[network]["transducers"]):
        clean = synth_acquisition(scenario, damage_id, act, network)
        if scenario.noise_level > 0:
            rng = np.random.default_rng([scenario.rng_seed, 0, site_index, a_idx])
            noise = rng.normal(0.0, scenario.noise_level * cfg.amplitude,
                               size=(scenario.repeats,) + clean.shape)
            clean = np.median(clean[None] + noise, axis=0)
        series.append(butterworth_bandpass(clean, fs=cfg.fs))
    return SignalSet(np.array(series))


def build_domain(scenario: PlateScenario, network: str, copies: int,
                 snr_range: tuple[float, float] = (20.0, 40.0)) -> DomainDataset:
    """One encoded image per damage site of ``network``, each augmented ``copies`` times.

    Images are normalised by the domain-wide max-abs of the clean
    acquisitions and rounded to float32 resolution (the on-disk precision).
    """
    if network not in NETWORKS:
        raise ValueError(f"unknown network tag {network!r}; expected circular or rectangular")
    if copies < 1:
        raise ValueError("copies must be >= 1")
    sites = NETWORKS[network]["damages"]

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        sigsets = list(pool.map(lambda i: acquire(scenario, sites[i], network, i), range(len(sites))))
    normalizer = max(float(np.abs(s.series).max()) for s in sigsets)

    def encode_site(i):
        img = encode_grayscale(sigsets[i], normalizer, scenario.damage_sites[sites[i]])
        return [
            augment(img, 1, *snr_range, rng=np.random.default_rng([scenario.rng_seed, 1, i, c]))[0]
            for c in range(copies)
        ]

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        per_site = list(pool.map(encode_site, range(len(sites))))

    images = np.array([im.values for site in per_site for im in site], dtype=np.float32)
    labels = np.array([im.label for site in per_site for im in site])
    groups = tuple(sites[i] for i, site in enumerate(per_site) for _ in site)
    return DomainDataset(
        images.astype(np.float64), labels, groups,
        material=scenario.material, network=network, stage="raw",
        meta={"normalizer": normalizer, "n_samples": scenario.burst.n_samples},
    )
