"""Point-target FMCW scene simulator.

Renders raw ADC frame cubes for in-distribution scenes (sitting, standing,
walking people) and out-of-distribution movers (table fan, swinging curtain,
remote-controlled toy car).  Targets are point scatterers with prescribed range
trajectories; the IF signal per chirp is a cosine whose beat frequency encodes
range (f_b = 2*B*R / (c*T_c)) and whose start phase 4*pi*R/lambda advances
across chirps with radial motion, which is what the doppler FFT picks up.
Additive white Gaussian noise and small per-chirp phase jitter are independent
per rx channel.

Physical parameter defaults (breathing amplitude, sway, fan rotation, oscillation
bands) are simulator commitments chosen to give the classes distinguishable
micro-doppler signatures; all are exposed on SceneSpec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .dsp import SPEED_OF_LIGHT, RadarConfig, RawFrameCube
from .errors import ConfigurationError

ID_SCENARIOS = ("sit", "stand", "walk")
OOD_SCENARIOS = ("fan", "curtain", "toy_car")
ALL_SCENARIOS = ID_SCENARIOS + OOD_SCENARIOS + ("none",)

_RENDER_CHUNK_FRAMES = 64


@dataclass(frozen=True)
class SceneSpec:
    """One recorded scene: a scenario plus its kinematic and noise parameters."""

    scenario: str
    base_range: float = 3.0
    n_frames: int = 400
    seed: int = 0
    reflectivity: float = 1.0
    noise_snr: float = 20.0  # dB relative to a unit-reflectivity return; inf = noiseless
    # breathing (sit / stand)
    breathing_rate: float = 16.0  # breaths per minute
    breathing_amplitude: float = 0.004
    # standing sway
    sway_amplitude: float = 0.01
    sway_freq: float = 0.1
    # walking
    walk_speed: float = 1.0
    walk_bounds: tuple[float, float] = (1.0, 5.0)
    gait_freq: float = 2.0
    gait_amplitude: float = 0.02
    limb_offset: float = 0.2
    limb_reflectivity: float = 0.3
    limb_gait_amplitude: float = 0.05
    # fan
    fan_rotation_hz: float = 20.0
    fan_tip_speed: float = 2.0
    fan_blades: int = 3
    # curtain / swinging cloth
    osc_amplitude: float = 0.10
    osc_freq: float = 0.7
    # toy car
    car_speed_range: tuple[float, float] = (0.8, 2.5)
    car_turn_interval: tuple[float, float] = (0.3, 1.0)
    rx_phase_jitter: float = 0.005

    def __post_init__(self) -> None:
        if self.scenario not in ALL_SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}; expected {ALL_SCENARIOS}")
        if self.n_frames < 1:
            raise ConfigurationError("n_frames must be >= 1")
        if self.scenario in ("sit", "stand") and not 12.0 <= self.breathing_rate <= 20.0:
            raise ConfigurationError(
                f"breathing_rate must lie in [12, 20] breaths/min, got {self.breathing_rate}"
            )
        if self.reflectivity < 0:
            raise ConfigurationError("reflectivity must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["walk_bounds"] = list(self.walk_bounds)
        d["car_speed_range"] = list(self.car_speed_range)
        d["car_turn_interval"] = list(self.car_turn_interval)
        d["noise_snr"] = None if math.isinf(self.noise_snr) else self.noise_snr
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if d.get("noise_snr") is None:
            d["noise_snr"] = math.inf
        for key in ("walk_bounds", "car_speed_range", "car_turn_interval"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class TargetTrajectory:
    """Radial range of one scatterer at every chirp instant, plus reflectivity."""

    ranges_m: np.ndarray  # [n_frames, n_chirps]
    reflectivity: float

    @property
    def frame_ranges(self) -> np.ndarray:
        return self.ranges_m.mean(axis=1)

    def frame_velocities(self, cfg: RadarConfig) -> np.ndarray:
        """Per-frame radial velocity estimated over each frame's chirp span."""
        span = (cfg.n_chirps - 1) * cfg.chirp_time
        return (self.ranges_m[:, -1] - self.ranges_m[:, 0]) / span


def chirp_times(cfg: RadarConfig, n_frames: int) -> np.ndarray:
    """Start time of every chirp, [n_frames, n_chirps]."""
    frames = np.arange(n_frames)[:, None] * cfg.frame_period
    chirps = np.arange(cfg.n_chirps)[None, :] * cfg.chirp_time
    return frames + chirps


def _fold(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect an unbounded coordinate into [lo, hi] (triangle fold)."""
    span = hi - lo
    return lo + np.abs(((u - lo) % (2.0 * span)) - span)


def _breathing_displacement(t: np.ndarray, rate_bpm: float, amplitude: float,
                            phase01: float) -> np.ndarray:
    """Chest displacement over time.

    Real breathing is asymmetric (inhale faster than exhale); a time-warped sine
    keeps the dominant spectral component of the chest's speed at the breathing
    rate itself rather than at its second harmonic, which is what a symmetric
    sine would produce.
    """
    tau = (rate_bpm / 60.0) * t + phase01
    warped = tau + 0.22 * np.sin(2 * np.pi * tau)
    return amplitude * np.sin(2 * np.pi * warped)


def _traj_sit(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
              t: np.ndarray) -> list[TargetTrajectory]:
    breath = _breathing_displacement(t, spec.breathing_rate, spec.breathing_amplitude,
                                     rng.uniform(0.0, 1.0))
    return [TargetTrajectory(spec.base_range + breath, spec.reflectivity)]


def _traj_stand(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
                t: np.ndarray) -> list[TargetTrajectory]:
    breath = _breathing_displacement(t, spec.breathing_rate, spec.breathing_amplitude,
                                     rng.uniform(0.0, 1.0))
    phase_s = rng.uniform(0.0, 2.0 * np.pi)
    sway = spec.sway_amplitude * np.sin(2 * np.pi * spec.sway_freq * t + phase_s)
    return [TargetTrajectory(spec.base_range + breath + sway, spec.reflectivity)]


def _traj_walk(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
               t: np.ndarray) -> list[TargetTrajectory]:
    lo, hi = spec.walk_bounds
    start = rng.uniform(lo, hi)
    direction = rng.choice((-1.0, 1.0))
    base = _fold(start + direction * spec.walk_speed * t, lo, hi)
    phase_g = rng.uniform(0.0, 2.0 * np.pi)
    torso = base + spec.gait_amplitude * np.sin(2 * np.pi * spec.gait_freq * t + phase_g)
    trajs = [TargetTrajectory(torso, spec.reflectivity)]
    if spec.limb_reflectivity > 0:
        for sign in (-1.0, 1.0):
            limb = (
                base
                + sign * spec.limb_offset
                + spec.limb_gait_amplitude
                * np.sin(2 * np.pi * spec.gait_freq * t + phase_g + (sign + 1) * np.pi / 2)
            )
            trajs.append(TargetTrajectory(limb, spec.limb_reflectivity))
    return trajs


def _traj_fan(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
              t: np.ndarray) -> list[TargetTrajectory]:
    # blade-tip radial speed swings +-fan_tip_speed at the rotation rate
    amp = spec.fan_tip_speed / (2 * np.pi * spec.fan_rotation_hz)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    trajs = []
    for i in range(spec.fan_blades):
        phase = phase0 + 2 * np.pi * i / spec.fan_blades
        ranges = spec.base_range + amp * np.sin(2 * np.pi * spec.fan_rotation_hz * t + phase)
        trajs.append(TargetTrajectory(ranges, spec.reflectivity))
    return trajs


def _traj_curtain(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
                  t: np.ndarray) -> list[TargetTrajectory]:
    phase = rng.uniform(0.0, 2.0 * np.pi)
    trajs = []
    for k, offset in enumerate((-0.05, 0.05)):
        amp = spec.osc_amplitude * (1.0 + 0.2 * rng.uniform(-1.0, 1.0))
        ranges = spec.base_range + offset + amp * np.sin(
            2 * np.pi * spec.osc_freq * t + phase + 0.3 * k
        )
        trajs.append(TargetTrajectory(ranges, spec.reflectivity))
    return trajs


def _traj_toy_car(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
                  t: np.ndarray) -> list[TargetTrajectory]:
    lo, hi = spec.walk_bounds
    total_time = float(t.max()) + cfg.chirp_time
    segments = []
    elapsed = 0.0
    sign = rng.choice((-1.0, 1.0))
    while elapsed < total_time:
        duration = rng.uniform(*spec.car_turn_interval)
        speed = rng.uniform(*spec.car_speed_range)
        segments.append((elapsed, sign * speed))
        elapsed += duration
        sign = -sign
    starts = np.asarray([s for s, _ in segments])
    speeds = np.asarray([v for _, v in segments])

    flat_t = t.reshape(-1)
    seg_idx = np.searchsorted(starts, flat_t, side="right") - 1
    v = speeds[seg_idx]
    dt = np.diff(flat_t, prepend=flat_t[0])
    u = rng.uniform(lo, hi) + np.cumsum(v * dt)
    ranges = _fold(u, lo, hi).reshape(t.shape)
    return [TargetTrajectory(ranges, spec.reflectivity)]


def _traj_none(spec: SceneSpec, cfg: RadarConfig, rng: np.random.Generator,
               t: np.ndarray) -> list[TargetTrajectory]:
    return []


_SCENARIOS: dict[str, Callable] = {
    "sit": _traj_sit,
    "stand": _traj_stand,
    "walk": _traj_walk,
    "fan": _traj_fan,
    "curtain": _traj_curtain,
    "toy_car": _traj_toy_car,
    "none": _traj_none,
}


def build_trajectories(spec: SceneSpec, cfg: RadarConfig,
                       rng: np.random.Generator) -> list[TargetTrajectory]:
    t = chirp_times(cfg, spec.n_frames)
    return _SCENARIOS[spec.scenario](spec, cfg, rng, t)


def render_trajectories(trajectories: list[TargetTrajectory], cfg: RadarConfig,
                        n_frames: int, noise_std: float,
                        rng: np.random.Generator,
                        rx_phase_jitter: float = 0.0) -> np.ndarray:
    """Raw ADC cubes [n_frames, n_rx, n_chirps, n_samples] for point scatterers."""
    for traj in trajectories:
        r = traj.ranges_m
        if r.shape != (n_frames, cfg.n_chirps):
            raise ConfigurationError(
                f"trajectory shape {r.shape} != ({n_frames}, {cfg.n_chirps})"
            )
        if not np.isfinite(r).all() or (r <= 0).any():
            raise ValueError("trajectory ranges must be finite and > 0")
        if (r >= cfg.max_unambiguous_range_m).any():
            raise ValueError(
                f"trajectory exceeds the unambiguous range "
                f"({cfg.max_unambiguous_range_m:.2f} m)"
            )

    sample_t = np.arange(cfg.n_samples) * (cfg.chirp_time / cfg.n_samples)
    beat_scale = 2.0 * cfg.bandwidth / (SPEED_OF_LIGHT * cfg.chirp_time)
    phase_scale = 4.0 * np.pi / cfg.wavelength

    rx_phases = rng.uniform(0.0, 2.0 * np.pi, cfg.n_rx)
    if rx_phase_jitter > 0:
        jitter = rng.normal(0.0, rx_phase_jitter, (cfg.n_rx, n_frames, cfg.n_chirps))
    else:
        jitter = np.zeros((cfg.n_rx, n_frames, cfg.n_chirps))

    out = np.zeros((n_frames, cfg.n_rx, cfg.n_chirps, cfg.n_samples))
    for start in range(0, n_frames, _RENDER_CHUNK_FRAMES):
        stop = min(start + _RENDER_CHUNK_FRAMES, n_frames)
        chunk = out[start:stop]
        for traj in trajectories:
            r = traj.ranges_m[start:stop]  # [K, M]
            beat = 2.0 * np.pi * beat_scale * r[..., None] * sample_t  # [K, M, S]
            base = np.exp(1j * (beat + phase_scale * r[..., None]))
            rx_rot = np.exp(1j * (rx_phases[:, None, None] + jitter[:, start:stop]))
            # [K, R, M, S] = Re( base[K,1,M,S] * rot[1,R,M,1] )
            chunk += traj.reflectivity * (
                base[:, None, :, :] * rx_rot.transpose(1, 0, 2)[:, :, :, None]
            ).real
        if noise_std > 0:
            chunk += rng.normal(0.0, noise_std, chunk.shape)
    return out


def noise_std_from_snr(snr_db: float) -> float:
    if math.isinf(snr_db):
        return 0.0
    return 10.0 ** (-snr_db / 20.0)


def simulate_array(spec: SceneSpec, cfg: RadarConfig) -> np.ndarray:
    """Deterministic scene rendering: [n_frames, n_rx, n_chirps, n_samples]."""
    if not 0 < spec.base_range < cfg.max_unambiguous_range_m:
        raise ValueError(
            f"base_range {spec.base_range} m outside the unambiguous range "
            f"(0, {cfg.max_unambiguous_range_m:.2f}) m"
        )
    rng = np.random.default_rng(spec.seed)
    trajectories = build_trajectories(spec, cfg, rng)
    return render_trajectories(
        trajectories, cfg, spec.n_frames,
        noise_std=noise_std_from_snr(spec.noise_snr),
        rng=rng, rx_phase_jitter=spec.rx_phase_jitter,
    )


def simulate(spec: SceneSpec, cfg: RadarConfig) -> list[RawFrameCube]:
    """Scene as a list of per-frame cubes."""
    data = simulate_array(spec, cfg)
    return [RawFrameCube(data=data[k], frame_index=k) for k in range(len(data))]


# -- dataset recipes -----------------------------------------------------------

DEFAULT_RECIPE = {
    "scenes_per_id_class": 30,
    "scenes_per_ood_type": 10,
    "frames_per_scene": 400,
    "noise_snr": 20.0,
    "seed": 7,
}


def default_recipe(scenes_per_id_class: int = 30, scenes_per_ood_type: int = 10,
                   frames_per_scene: int = 400, noise_snr: float = 20.0,
                   seed: int = 7) -> list[SceneSpec]:
    """Desk-scale scene list with per-scene parameter variation.

    Ranges stay inside the 1-5 m band; breathing rates span the healthy-adult
    12-20 breaths/min band; oscillating OOD movers are parameterized outside it.
    """
    rng = np.random.default_rng(seed)
    specs: list[SceneSpec] = []

    def scene_seed() -> int:
        return int(rng.integers(0, 2**31 - 1))

    for scenario in ID_SCENARIOS:
        for _ in range(scenes_per_id_class):
            common = dict(
                scenario=scenario,
                n_frames=frames_per_scene,
                noise_snr=noise_snr,
                base_range=float(rng.uniform(1.2, 4.8)),
                seed=scene_seed(),
            )
            if scenario in ("sit", "stand"):
                specs.append(SceneSpec(
                    breathing_rate=float(rng.uniform(12.0, 20.0)),
                    breathing_amplitude=float(rng.uniform(0.003, 0.006)),
                    **common,
                ))
            else:
                specs.append(SceneSpec(
                    walk_speed=float(rng.uniform(0.6, 1.4)),
                    **common,
                ))
    for scenario in OOD_SCENARIOS:
        for _ in range(scenes_per_ood_type):
            common = dict(
                scenario=scenario,
                n_frames=frames_per_scene,
                noise_snr=noise_snr,
                base_range=float(rng.uniform(1.2, 4.8)),
                seed=scene_seed(),
            )
            if scenario == "fan":
                specs.append(SceneSpec(
                    fan_rotation_hz=float(rng.uniform(15.0, 25.0)),
                    fan_tip_speed=float(rng.uniform(1.5, 2.8)),
                    **common,
                ))
            elif scenario == "curtain":
                specs.append(SceneSpec(
                    osc_freq=float(rng.uniform(0.5, 0.9)),
                    osc_amplitude=float(rng.uniform(0.06, 0.14)),
                    **common,
                ))
            else:
                specs.append(SceneSpec(**common))
    return specs


def assign_splits(specs: list[SceneSpec], fractions: tuple[float, float, float],
                  seed: int) -> list[str]:
    """Scene-level train/val/test assignment; OOD scenes always land in test.

    Fractions apply per ID scenario so every class is represented in every
    split; no scene (hence no frame) ever belongs to two splits.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be 3 non-negative numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    splits = ["test"] * len(specs)
    for scenario in ID_SCENARIOS:
        idx = [i for i, s in enumerate(specs) if s.scenario == scenario]
        if not idx:
            continue
        order = rng.permutation(len(idx))
        n = len(idx)
        n_val = int(round(fractions[1] * n))
        n_test = int(round(fractions[2] * n))
        n_train = n - n_val - n_test
        names = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
        for pos, split in zip(order, names):
            splits[idx[pos]] = split
    return splits


def build_dataset(specs: list[SceneSpec], cfg: RadarConfig,
                  split_fractions: tuple[float, float, float], out_dir,
                  log=None) -> dict:
    """Render every scene to disk and write the manifest; returns the manifest."""
    from . import io  # local import: io has no reason to depend on the simulator
    from pathlib import Path

    out_dir = Path(out_dir)
    splits = assign_splits(specs, split_fractions, seed=_split_seed(specs))
    scenes = []
    for i, (spec, split) in enumerate(zip(specs, splits)):
        rel = f"scenes/scene_{i:04d}.mcrd"
        data = simulate_array(spec, cfg).astype(np.float32)
        io.write_tensor(out_dir / rel, data)
        scenes.append({
            "id": i,
            "file": rel,
            "scenario": spec.scenario,
            "is_id": spec.scenario in ID_SCENARIOS,
            "split": split,
            "n_frames": spec.n_frames,
            "frame_range": [0, spec.n_frames],
            "params": spec.to_dict(),
        })
        if log is not None and (i + 1) % 10 == 0:
            log(f"rendered {i + 1}/{len(specs)} scenes")
    manifest = {
        "format": "raw-frames",
        "format_version": 1,
        "radar_config": {
            "n_tx": cfg.n_tx, "n_rx": cfg.n_rx, "n_chirps": cfg.n_chirps,
            "n_samples": cfg.n_samples, "frame_period": cfg.frame_period,
            "chirp_time": cfg.chirp_time, "bandwidth": cfg.bandwidth,
            "carrier_freq": cfg.carrier_freq, "window": cfg.window,
        },
        "split_fractions": list(split_fractions),
        "scenes": scenes,
    }
    io.write_manifest(out_dir, manifest)
    return manifest


def _split_seed(specs: list[SceneSpec]) -> int:
    # derive the shuffle seed from the scene seeds so a recipe splits reproducibly
    return int(np.asarray([s.seed for s in specs], dtype=np.uint64).sum() % (2**31 - 1))


def radar_config_from_manifest(manifest: dict) -> RadarConfig:
    return RadarConfig(**manifest["radar_config"])
