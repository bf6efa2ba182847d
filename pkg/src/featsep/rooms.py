"""Shoebox room simulation via the image-source method.

Walls are indexed per axis as (low, high): [x0, x1, y0, y1, z0, z1].
Reflection amplitude per wall hit is sqrt(1 - absorption); propagation gain
is 1/distance. Microphones form a uniform circular array in the horizontal
plane around the array center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio import DEFAULT_SINC_HALF_WIDTH, MultiChannelSignal, fft_convolve, sinc_kernel


class ConfigurationError(RuntimeError):
    """Scene sampling constraints cannot be satisfied."""


@dataclass(frozen=True)
class RoomScene:
    room_dims: tuple
    wall_absorption: tuple          # 6 values in [0, 1]
    mic_positions: np.ndarray       # [n_mics, 3] meters
    source_positions: np.ndarray    # [2, 3] meters
    speed_of_sound: float = 343.0
    max_reflection_order: int = 2

    def __post_init__(self):
        dims = tuple(float(v) for v in self.room_dims)
        absorb = tuple(float(a) for a in np.broadcast_to(self.wall_absorption, (6,)))
        mics = np.asarray(self.mic_positions, dtype=np.float64).reshape(-1, 3)
        srcs = np.asarray(self.source_positions, dtype=np.float64).reshape(-1, 3)
        if any(d <= 0 for d in dims):
            raise ValueError(f"room dimensions must be positive: {dims}")
        if any(not 0.0 <= a <= 1.0 for a in absorb):
            raise ValueError(f"wall absorption must lie in [0, 1]: {absorb}")
        for label, pts in (("microphone", mics), ("source", srcs)):
            for p in pts:
                if not all(0.0 < p[i] < dims[i] for i in range(3)):
                    raise ValueError(f"{label} position {p} outside room {dims}")
        object.__setattr__(self, "room_dims", dims)
        object.__setattr__(self, "wall_absorption", absorb)
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "source_positions", srcs)

    @property
    def array_center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    @property
    def source_angle_deg(self) -> float:
        return angle_between(self.array_center, self.source_positions[0], self.source_positions[1])

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "wall_absorption": list(self.wall_absorption),
            "mic_positions": self.mic_positions.tolist(),
            "source_positions": self.source_positions.tolist(),
            "speed_of_sound": self.speed_of_sound,
            "max_reflection_order": self.max_reflection_order,
        }

    @staticmethod
    def from_dict(d: dict) -> "RoomScene":
        return RoomScene(
            room_dims=tuple(d["room_dims"]),
            wall_absorption=tuple(d["wall_absorption"]),
            mic_positions=np.asarray(d["mic_positions"]),
            source_positions=np.asarray(d["source_positions"]),
            speed_of_sound=float(d["speed_of_sound"]),
            max_reflection_order=int(d["max_reflection_order"]),
        )

    def with_sources(self, positions) -> "RoomScene":
        return RoomScene(self.room_dims, self.wall_absorption, self.mic_positions,
                         np.asarray(positions), self.speed_of_sound, self.max_reflection_order)


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.taps, dtype=np.float64)
        if arr.size < 1 or not np.all(np.isfinite(arr)):
            raise ValueError("impulse response must be non-empty and finite")
        object.__setattr__(self, "taps", arr)

    @property
    def energy(self) -> float:
        return float(np.sum(self.taps ** 2))


def angle_between(center, p1, p2) -> float:
    """Angle in degrees subtended by p1 and p2 at `center`, in [0, 180]."""
    center = np.asarray(center, dtype=np.float64)
    v1 = np.asarray(p1, dtype=np.float64) - center
    v2 = np.asarray(p2, dtype=np.float64) - center
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("point coincides with the array center")
    cosang = np.clip(np.dot(v1, v2) / (n1 * n2), -1.0, 1.0)
    return math.degrees(math.acos(cosang))


def enumerate_images(scene: RoomScene, source_index: int, order: int):
    """All mirror images with at most `order` reflections.

    Returns a list of (position [3], amplitude_gain) pairs; the direct source
    appears with gain 1. Per axis, image q,m sits at (-1)^q x + 2 m L and
    hits the low wall |m - q| times and the high wall |m| times.
    """
    if order < 0:
        raise ValueError("reflection order must be non-negative")
    src = scene.source_positions[source_index]
    dims = scene.room_dims
    beta = [math.sqrt(1.0 - a) for a in scene.wall_absorption]

    per_axis = []
    for ax in range(3):
        entries = []
        m_span = order // 2 + 1
        for q in (0, 1):
            for m in range(-m_span, m_span + 1):
                n_lo = abs(m - q)
                n_hi = abs(m)
                n_total = n_lo + n_hi
                if n_total > order:
                    continue
                pos = (1 - 2 * q) * src[ax] + 2 * m * dims[ax]
                gain = (beta[2 * ax] ** n_lo) * (beta[2 * ax + 1] ** n_hi)
                entries.append((pos, gain, n_total))
        per_axis.append(entries)

    images = []
    for px, gx, nx in per_axis[0]:
        for py, gy, ny in per_axis[1]:
            if nx + ny > order:
                continue
            for pz, gz, nz in per_axis[2]:
                if nx + ny + nz > order:
                    continue
                images.append((np.array([px, py, pz]), gx * gy * gz))
    return images


def compute_rir(scene: RoomScene, source_index: int, mic_index: int, sample_rate: int,
                half_width: int = DEFAULT_SINC_HALF_WIDTH) -> ImpulseResponse:
    """Impulse response from one source to one microphone.

    One windowed-sinc tap per image at delay distance/c * fs with amplitude
    reflection_gain / distance.
    """
    mic = scene.mic_positions[mic_index]
    images = enumerate_images(scene, source_index, scene.max_reflection_order)
    c = scene.speed_of_sound
    arrivals = []
    for pos, gain in images:
        dist = float(np.linalg.norm(pos - mic))
        if dist == 0.0:
            raise ValueError("source image coincides with microphone (zero distance)")
        if gain == 0.0:
            continue
        arrivals.append((dist / c * sample_rate, gain / dist))
    max_delay = max(a[0] for a in arrivals)
    length = int(math.ceil(max_delay)) + 2 * half_width + 2
    taps = np.zeros(length)
    for delay, amp in arrivals:
        di = int(math.floor(delay))
        df = delay - di
        if df == 0.0:
            taps[di] += amp
        else:
            kernel = amp * sinc_kernel(df, half_width)
            lo = di - (half_width - 1)
            hi = di + half_width + 1
            k_lo = max(0, -lo)
            taps[max(lo, 0):hi] += kernel[k_lo:]
    return ImpulseResponse(taps, sample_rate)


def spatialize(scene: RoomScene, dry_sources) -> list[MultiChannelSignal]:
    """Render each dry mono source to the microphone array.

    Returns one multi-channel signal per source, truncated to the dry length
    so renders of equal-length sources can be summed exactly.
    """
    if len(dry_sources) != scene.source_positions.shape[0]:
        raise ValueError("one dry signal per scene source is required")
    rates = {s.sample_rate for s in dry_sources}
    if len(rates) != 1:
        raise ValueError(f"dry sources disagree on sample rate: {sorted(rates)}")
    rate = rates.pop()
    n_mics = scene.mic_positions.shape[0]
    rendered = []
    for si, dry in enumerate(dry_sources):
        if dry.n_channels != 1:
            raise ValueError("dry sources must be mono")
        x = dry.channel(0)
        out = np.zeros((n_mics, dry.n_frames))
        for mi in range(n_mics):
            rir = compute_rir(scene, si, mi, rate)
            out[mi] = fft_convolve(x, rir.taps)[:dry.n_frames]
        rendered.append(MultiChannelSignal(out, rate))
    return rendered


def circular_array(center, radius: float, n_mics: int = 6) -> np.ndarray:
    center = np.asarray(center, dtype=np.float64)
    angles = 2.0 * np.pi * np.arange(n_mics) / n_mics
    offsets = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n_mics)], axis=1)
    return center + offsets


@dataclass
class SceneSamplingSpec:
    """Randomized scene model: fixed room and array, random source placement
    with the inter-source angle drawn uniformly from angle_range_deg."""

    room_dims: tuple = (6.0, 5.0, 3.0)
    absorption: float = 0.7
    array_center: tuple = (3.0, 2.5, 1.5)
    array_radius: float = 0.05
    n_mics: int = 6
    source_range: tuple = (0.5, 1.2)
    angle_range_deg: tuple = (0.0, 180.0)
    wall_margin: float = 0.2
    max_reflection_order: int = 2
    speed_of_sound: float = 343.0
    max_attempts: int = 200

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "absorption": self.absorption,
            "array_center": list(self.array_center),
            "array_radius": self.array_radius,
            "n_mics": self.n_mics,
            "source_range": list(self.source_range),
            "angle_range_deg": list(self.angle_range_deg),
            "wall_margin": self.wall_margin,
            "max_reflection_order": self.max_reflection_order,
            "speed_of_sound": self.speed_of_sound,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSamplingSpec":
        spec = SceneSamplingSpec()
        for key, value in d.items():
            if not hasattr(spec, key):
                raise ConfigurationError(f"unknown scene spec field {key!r}")
            current = getattr(spec, key)
            setattr(spec, key, tuple(value) if isinstance(current, tuple) else type(current)(value))
        return spec


def _inside(p, dims, margin) -> bool:
    return all(margin < p[i] < dims[i] - margin for i in range(3))


def _random_unit(rng) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-9:
            return v / n


def _rotate_by_angle(u, theta_rad, rng) -> np.ndarray:
    # random direction at exactly theta from u
    while True:
        v = rng.normal(size=3)
        perp = v - np.dot(v, u) * u
        n = np.linalg.norm(perp)
        if n > 1e-9:
            perp /= n
            return math.cos(theta_rad) * u + math.sin(theta_rad) * perp


def sample_scene(rng, spec: SceneSamplingSpec, angle_range_deg=None) -> RoomScene:
    """Draw a random scene. The inter-source angle at the array center is
    uniform over the configured (or overridden) range."""
    dims = spec.room_dims
    center = np.asarray(spec.array_center, dtype=np.float64)
    mics = circular_array(center, spec.array_radius, spec.n_mics)
    lo, hi = angle_range_deg if angle_range_deg is not None else spec.angle_range_deg
    r_lo, r_hi = spec.source_range
    for _ in range(spec.max_attempts):
        theta = math.radians(rng.uniform(lo, hi))
        u0 = _random_unit(rng)
        u1 = _rotate_by_angle(u0, theta, rng)
        p0 = center + rng.uniform(r_lo, r_hi) * u0
        p1 = center + rng.uniform(r_lo, r_hi) * u1
        if _inside(p0, dims, spec.wall_margin) and _inside(p1, dims, spec.wall_margin):
            return RoomScene(dims, spec.absorption, mics, np.stack([p0, p1]),
                             spec.speed_of_sound, spec.max_reflection_order)
    raise ConfigurationError(
        f"could not place sources after {spec.max_attempts} attempts "
        f"(room {dims}, source range {spec.source_range}, margin {spec.wall_margin})")
