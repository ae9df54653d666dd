"""Scene simulator against analytic FMCW oracles."""

import math

import numpy as np
import pytest

from radarood import dsp, synth
from radarood.errors import ConfigurationError
from radarood.respd import FrameWindowConfig, RdiSequence, respd_transform

CFG = dsp.RadarConfig()


def rdi_stack(cubes, cfg=CFG):
    state = dsp.MtiState()
    frames = []
    for cube in cubes:
        rdi, state = dsp.make_rdi(cube, state, cfg)
        frames.append(rdi.data)
    return np.stack(frames)


class TestSceneSpec:
    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigurationError):
            synth.SceneSpec(scenario="dog")

    def test_breathing_band_enforced_for_humans(self):
        with pytest.raises(ConfigurationError):
            synth.SceneSpec(scenario="sit", breathing_rate=30.0)
        synth.SceneSpec(scenario="fan", breathing_rate=30.0)  # irrelevant for fans

    def test_roundtrip_including_infinite_snr(self):
        spec = synth.SceneSpec(scenario="walk", noise_snr=math.inf, seed=5)
        back = synth.SceneSpec.from_dict(spec.to_dict())
        assert back == spec


class TestSimulate:
    def test_none_scene_infinite_snr_is_silent(self):
        spec = synth.SceneSpec(scenario="none", n_frames=3, noise_snr=math.inf)
        data = synth.simulate_array(spec, CFG)
        assert data.shape == (3, 3, 64, 128)
        assert np.all(data == 0)

    def test_output_shape_and_determinism(self):
        spec = synth.SceneSpec(scenario="fan", n_frames=4, seed=11)
        a = synth.simulate_array(spec, CFG)
        b = synth.simulate_array(spec, CFG)
        assert a.shape == (4, 3, 64, 128)
        assert np.array_equal(a, b)

    def test_out_of_bounds_range_rejected(self):
        spec = synth.SceneSpec(scenario="sit", base_range=12.0, n_frames=2)
        with pytest.raises(ValueError, match="unambiguous"):
            synth.simulate_array(spec, CFG)

    def test_static_target_beat_bin_and_mti_null(self):
        # a perfectly still point target: range FFT peaks at 2*B*R/c, and the
        # static return must survive no further than 1e-6 of itself through MTI
        r0 = 3.0
        traj = synth.TargetTrajectory(np.full((2, CFG.n_chirps), r0), reflectivity=1.0)
        data = synth.render_trajectories([traj], CFG, 2, noise_std=0.0,
                                         rng=np.random.default_rng(0))
        frame = dsp.RawFrameCube(data=data[0], frame_index=0)
        profile = dsp.range_fft(frame, CFG)
        mags = np.abs(profile.data[0, 0])
        expected_bin = round(CFG.range_to_bin(r0))
        assert mags.argmax() == expected_bin
        filtered = dsp.mti_filter([profile])[0]
        assert np.abs(filtered.data).max() <= 1e-6 * mags.max()

    def test_constant_velocity_rdi_argmax(self):
        # pure 1 m/s recession from 3 m: doppler bin = center + round(2*v*fc/c / bin_hz)
        v, r0 = 1.0, 3.0
        t = synth.chirp_times(CFG, 1)
        traj = synth.TargetTrajectory(r0 + v * t, reflectivity=1.0)
        data = synth.render_trajectories([traj], CFG, 1, noise_std=0.0,
                                         rng=np.random.default_rng(1))
        rdi, _ = dsp.make_rdi(dsp.RawFrameCube(data[0], 0), dsp.MtiState(), CFG)
        d, r = np.unravel_index(rdi.data.argmax(), rdi.data.shape)
        assert r == round(CFG.range_to_bin(r0))
        assert d == CFG.n_doppler_bins // 2 + round(CFG.velocity_to_doppler_bin(v))

    def test_walk_scenario_rdi_argmax_matches_doppler_formula(self):
        spec = synth.SceneSpec(scenario="walk", base_range=3.0, walk_speed=1.0,
                               gait_amplitude=0.0, limb_reflectivity=0.0,
                               noise_snr=math.inf, n_frames=1, seed=21)
        data = synth.simulate_array(spec, CFG)
        rdi, _ = dsp.make_rdi(dsp.RawFrameCube(data[0], 0), dsp.MtiState(), CFG)
        d, r = np.unravel_index(rdi.data.argmax(), rdi.data.shape)
        traj = synth.build_trajectories(spec, CFG, np.random.default_rng(spec.seed))[0]
        v_actual = traj.frame_velocities(CFG)[0]
        r_actual = traj.frame_ranges[0]
        assert abs(d - (32 + CFG.velocity_to_doppler_bin(v_actual))) <= 1.0
        assert abs(r - CFG.range_to_bin(r_actual)) <= 1.0


class TestScenarioSignatures:
    def test_sit_breathing_band(self):
        # the strongest off-center RDI cell of a sitting scene must pulse at the
        # breathing rate: dominant non-DC temporal component inside 0.2-0.34 Hz
        spec = synth.SceneSpec(scenario="sit", base_range=2.5, breathing_rate=16.0,
                               noise_snr=40.0, n_frames=400, seed=33)
        frames = rdi_stack(synth.simulate(spec, CFG))
        spectra = np.abs(np.fft.rfft(frames, axis=0))
        freqs = np.fft.rfftfreq(len(frames), d=CFG.frame_period)
        energy = spectra[1:].sum(axis=0)
        cell = np.unravel_index(energy.argmax(), energy.shape)
        dominant = freqs[1:][spectra[1:, cell[0], cell[1]].argmax()]
        assert 0.2 - 0.03 <= dominant <= 0.34 + 0.03

    def test_curtain_outside_breathing_band(self):
        spec = synth.SceneSpec(scenario="curtain", base_range=2.5, osc_freq=0.7,
                               noise_snr=40.0, n_frames=400, seed=34)
        frames = rdi_stack(synth.simulate(spec, CFG))
        spectra = np.abs(np.fft.rfft(frames, axis=0))
        freqs = np.fft.rfftfreq(len(frames), d=CFG.frame_period)
        energy = spectra[1:].sum(axis=0)
        cell = np.unravel_index(energy.argmax(), energy.shape)
        dominant = freqs[1:][spectra[1:, cell[0], cell[1]].argmax()]
        assert not (0.2 <= dominant <= 0.34)

    def test_respd_amplifies_sit_target_cell(self):
        spec = synth.SceneSpec(scenario="sit", base_range=2.5, noise_snr=30.0,
                               n_frames=120, seed=35)
        frames = rdi_stack(synth.simulate(spec, CFG))
        summed = respd_transform(
            RdiSequence(frames=frames, frame_indices=np.arange(len(frames))),
            FrameWindowConfig(window_size=50),
        ).frames
        mean_energy = frames.mean(axis=0)
        cell = np.unravel_index(mean_energy.argmax(), mean_energy.shape)
        amplification = summed[:, cell[0], cell[1]].mean() / frames[:, cell[0], cell[1]].mean()
        assert amplification > 10.0


class TestRecipeAndSplits:
    def test_default_recipe_counts(self):
        specs = synth.default_recipe(scenes_per_id_class=3, scenes_per_ood_type=2,
                                     frames_per_scene=10, seed=1)
        by_kind = {}
        for s in specs:
            by_kind[s.scenario] = by_kind.get(s.scenario, 0) + 1
        assert by_kind == {"sit": 3, "stand": 3, "walk": 3, "fan": 2, "curtain": 2, "toy_car": 2}
        assert all(s.n_frames == 10 for s in specs)
        # per-scene parameter variation actually varies
        assert len({s.base_range for s in specs}) > 5
        assert len({s.seed for s in specs}) == len(specs)

    def test_recipe_deterministic(self):
        a = synth.default_recipe(seed=7, scenes_per_id_class=2, scenes_per_ood_type=1,
                                 frames_per_scene=5)
        b = synth.default_recipe(seed=7, scenes_per_id_class=2, scenes_per_ood_type=1,
                                 frames_per_scene=5)
        assert a == b

    def test_all_in_train_when_fraction_one(self):
        specs = [synth.SceneSpec(scenario="sit", seed=i, n_frames=4) for i in range(5)]
        splits = synth.assign_splits(specs, (1.0, 0.0, 0.0), seed=0)
        assert splits == ["train"] * 5

    def test_ood_always_in_test(self):
        specs = [synth.SceneSpec(scenario=s, seed=i, n_frames=4)
                 for i, s in enumerate(["sit", "fan", "curtain", "toy_car", "walk"])]
        splits = synth.assign_splits(specs, (1.0, 0.0, 0.0), seed=0)
        assert splits[1] == splits[2] == splits[3] == "test"

    def test_fractions_validated(self):
        specs = [synth.SceneSpec(scenario="sit", n_frames=4)]
        with pytest.raises(ValueError):
            synth.assign_splits(specs, (0.5, 0.2, 0.2), seed=0)

    def test_build_dataset_writes_scene_files_and_manifest(self, tmp_path):
        specs = synth.default_recipe(scenes_per_id_class=1, scenes_per_ood_type=1,
                                     frames_per_scene=3, seed=2)
        manifest = synth.build_dataset(specs, CFG, (1.0, 0.0, 0.0), tmp_path / "ds")
        from radarood import io as rio
        loaded = rio.load_manifest(tmp_path / "ds")
        assert loaded == manifest
        assert len(loaded["scenes"]) == 6
        for entry in loaded["scenes"]:
            data = rio.load_scene(tmp_path / "ds", entry)
            assert data.shape == (3, 3, 64, 128)
            assert data.dtype == np.float32
            if entry["scenario"] in synth.OOD_SCENARIOS:
                assert entry["split"] == "test"
            else:
                assert entry["split"] == "train"
        cfg2 = synth.radar_config_from_manifest(loaded)
        assert cfg2 == CFG

    def test_scene_level_split_disjoint(self):
        specs = synth.default_recipe(scenes_per_id_class=10, scenes_per_ood_type=2,
                                     frames_per_scene=4, seed=3)
        splits = synth.assign_splits(specs, (0.7, 0.15, 0.15), seed=1)
        # every scene belongs to exactly one split, every split non-empty for ID
        assert len(splits) == len(specs)
        for name in ("train", "val", "test"):
            assert name in splits
