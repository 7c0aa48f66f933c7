"""Synthetic wind and PV parks with NWP-style forecast features.

This is a stand-in for proprietary park data: a mean-reverting weather process
per park, a forecast feature that equals the true weather plus Gaussian error,
and a park-specific power curve.  Output power is already divided by the
nominal capacity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from .dataset import TimeSeriesDataset
from .seeding import derive_seed

START = np.datetime64("2019-01-01T00:00:00", "s")

WIND_FEATURES = ("wind_speed", "wind_direction", "pressure")
PV_FEATURES = ("radiation", "temperature", "cloud_cover")


@dataclass(frozen=True)
class WindParkSpec:
    v0: float = 7.5
    steepness: float = 1.0
    noise_sd: float = 1.0
    drop_prob: float = 0.0
    nominal_power: float = 10000.0
    seed: int = 0
    mean_speed: float = 7.5
    speed_sd: float = 3.0

    def __post_init__(self):
        if not self.steepness > 0:
            raise ValueError("steepness must be positive")
        if not 0 <= self.drop_prob < 1:
            raise ValueError("drop_prob must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if not self.nominal_power > 0:
            raise ValueError("nominal_power must be positive")


@dataclass(frozen=True)
class PvParkSpec:
    amplitude: float = 0.9
    peak_hour: float = 12.5
    width: float = 2.5
    noise_sd: float = 0.2
    gain: float = 1.0
    nominal_power: float = 5000.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.amplitude <= 1:
            raise ValueError("amplitude must lie in (0, 1]")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if not 0 < self.gain <= 1:
            raise ValueError("gain must lie in (0, 1]")


def wind_power_curve(v, v0: float, steepness: float) -> np.ndarray:
    """Logistic power curve, normalized to [0, 1]."""
    v = np.asarray(v, dtype=float)
    return np.clip(1.0 / (1.0 + np.exp(-steepness * (v - v0))), 0.0, 1.0)


def clear_sky(hour, amplitude: float, peak_hour: float, width: float) -> np.ndarray:
    """Gaussian diurnal cycle; zero outside ``peak_hour +- 3 width``."""
    hour = np.asarray(hour, dtype=float)
    rad = amplitude * np.exp(-((hour - peak_hour) ** 2) / (2.0 * width**2))
    return np.where(np.abs(hour - peak_hour) < 3.0 * width, rad, 0.0)


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    """Stationary unit-variance AR(1) path."""
    eps = rng.standard_normal(n) * np.sqrt(1.0 - phi**2)
    eps[0] = rng.standard_normal()
    return lfilter([1.0], [1.0, -phi], eps)


def _time_axis(n_days: int, samples_per_day: int):
    step = 86400 // samples_per_day
    n = n_days * samples_per_day
    ts = START + np.arange(n, dtype=np.int64) * np.timedelta64(step, "s")
    hour = (np.arange(n) % samples_per_day) * (24.0 / samples_per_day)
    doy = np.arange(n) / samples_per_day
    return ts, hour, doy


def gen_wind(spec: WindParkSpec, n_days: int, samples_per_day: int = 96,
             park_id: str = "wind") -> TimeSeriesDataset:
    if n_days < 1:
        raise ValueError("n_days must be at least 1")
    rng = np.random.default_rng(spec.seed)
    ts, _, doy = _time_axis(n_days, samples_per_day)
    n = len(ts)
    hours_per_sample = 24.0 / samples_per_day
    phi = np.exp(-hours_per_sample / 8.0)

    # windier winters
    level = spec.mean_speed + 1.5 * np.cos(2 * np.pi * (doy - 15.0) / 365.25)
    v_true = np.maximum(level + spec.speed_sd * _ar1(rng, n, phi), 0.0)
    v_fc = np.maximum(v_true + spec.noise_sd * rng.standard_normal(n), 0.0)
    direction = np.mod(200.0 + 60.0 * _ar1(rng, n, phi) + 30.0 * rng.standard_normal(n), 360.0)
    pressure = 1013.0 - 0.8 * (v_true - level) + 6.0 * _ar1(rng, n, phi ** 0.5)

    power = wind_power_curve(v_true, spec.v0, spec.steepness)
    drop_day = rng.random(n_days) < spec.drop_prob
    lengths = rng.integers(8, 33, size=n_days)
    starts = rng.random(n_days)
    for d in np.flatnonzero(drop_day):
        length = min(int(lengths[d]), samples_per_day)
        start = int(starts[d] * (samples_per_day - length + 1))
        lo = d * samples_per_day + start
        power[lo:lo + length] = 0.0

    return TimeSeriesDataset(
        park_id=park_id,
        timestamps=ts,
        features=np.column_stack([v_fc, direction, pressure]),
        power=power,
        feature_names=WIND_FEATURES,
        samples_per_day=samples_per_day,
        nominal_power=spec.nominal_power,
        normalized=True,
        meta={"kind": "wind", **asdict(spec)},
    )


def gen_pv(spec: PvParkSpec, n_days: int, samples_per_day: int = 96,
           park_id: str = "pv") -> TimeSeriesDataset:
    if n_days < 1:
        raise ValueError("n_days must be at least 1")
    rng = np.random.default_rng(spec.seed)
    ts, hour, doy = _time_axis(n_days, samples_per_day)
    n = len(ts)
    sky = clear_sky(hour, spec.amplitude, spec.peak_hour, spec.width)
    daylight = sky > 0

    # cloudier winters; daily attenuation plus a forecast error on it
    cloudiness = 0.5 + 0.5 * np.cos(2 * np.pi * (doy[::samples_per_day] - 15.0) / 365.25)
    atten_day = np.clip(1.0 - np.abs(rng.standard_normal(n_days)) * spec.noise_sd * (1 + cloudiness), 0.05, 1.0)
    atten = np.repeat(atten_day, samples_per_day)
    intraday = np.clip(1.0 + 0.5 * spec.noise_sd * rng.standard_normal(n), 0.05, 1.2)
    rad_true = sky * np.clip(atten * intraday, 0.0, 1.0)
    fc_atten = np.clip(atten + spec.noise_sd * rng.standard_normal(n), 0.05, 1.0)
    rad_fc = np.where(daylight, sky * fc_atten, 0.0)

    temperature = 10.0 - 8.0 * np.cos(2 * np.pi * (doy - 15.0) / 365.25) + 6.0 * rad_fc + rng.standard_normal(n)
    cloud_cover = np.where(daylight, 1.0 - fc_atten, 0.5)
    power = np.clip(spec.gain * rad_true, 0.0, 1.0)

    return TimeSeriesDataset(
        park_id=park_id,
        timestamps=ts,
        features=np.column_stack([rad_fc, temperature, cloud_cover]),
        power=power,
        feature_names=PV_FEATURES,
        samples_per_day=samples_per_day,
        nominal_power=spec.nominal_power,
        normalized=True,
        meta={"kind": "pv", **asdict(spec)},
    )


def sample_wind_spec(seed: int) -> WindParkSpec:
    rng = np.random.default_rng(seed)
    return WindParkSpec(
        v0=float(rng.uniform(5.0, 10.0)),
        steepness=float(rng.uniform(0.6, 1.6)),
        noise_sd=float(rng.uniform(0.8, 1.6)),
        drop_prob=float(rng.uniform(0.0, 0.1)),
        nominal_power=float(np.round(rng.uniform(2000.0, 20000.0), 1)),
        seed=seed,
    )


def sample_pv_spec(seed: int) -> PvParkSpec:
    rng = np.random.default_rng(seed)
    return PvParkSpec(
        amplitude=float(rng.uniform(0.6, 1.0)),
        peak_hour=float(rng.uniform(11.5, 13.5)),
        width=float(rng.uniform(2.0, 3.2)),
        noise_sd=float(rng.uniform(0.1, 0.3)),
        gain=float(rng.uniform(0.6, 1.0)),
        nominal_power=float(np.round(rng.uniform(500.0, 8000.0), 1)),
        seed=seed,
    )


def gen_hub(kind: str, n_parks: int, n_days: int, master_seed: int,
            samples_per_day: int = 96) -> list[TimeSeriesDataset]:
    """Heterogeneous hub; park ``i`` is seeded by ``derive_seed(master_seed, i)``."""
    if n_parks < 2:
        raise ValueError("a hub needs at least 2 parks")
    hub = []
    for i in range(n_parks):
        seed = derive_seed(master_seed, kind, i)
        if kind == "wind":
            hub.append(gen_wind(sample_wind_spec(seed), n_days, samples_per_day, f"wind_{i:03d}"))
        elif kind == "pv":
            hub.append(gen_pv(sample_pv_spec(seed), n_days, samples_per_day, f"pv_{i:03d}"))
        else:
            raise ValueError(f"unknown hub kind {kind!r}")
    return hub
