"""Candidate generation, seed fan-out, manifests, and the simulated selector."""

import numpy as np
import pytest
from scipy import stats

from prefdn.errors import InputError, MissingDataError
from prefdn.image import write_image
from prefdn.pyramid import DEFAULT_BOUNDS, PyramidParams, decompose, denoise
from prefdn.scenario import (
    CandidateSet,
    OracleUser,
    ParamSampler,
    ScenarioResolver,
    build_manifest,
    build_session,
    choice_seed,
    generate_candidate_set,
    load_manifest,
    oracle_choose,
    sample_params,
    save_manifest,
    scenario_seed,
    simulate_choices,
    synthetic_phantom,
)

CENTER = PyramidParams((1.0, 2.0, 4.0), (0.02, 0.05, 0.1))


class TestParamSampler:
    def test_zero_spread_returns_center(self):
        sampler = ParamSampler(center=CENTER, spread=0.0)
        params = sample_params(sampler, seed=123)
        assert params == CENTER

    def test_deterministic_per_seed(self):
        sampler = ParamSampler(center=CENTER, spread=0.6)
        assert sample_params(sampler, 5) == sample_params(sampler, 5)
        assert sample_params(sampler, 5) != sample_params(sampler, 6)

    def test_samples_respect_bounds(self):
        # a huge spread would leave the box; the clamp must catch it
        sampler = ParamSampler(center=CENTER, spread=5.0)
        b = sampler.bounds
        for seed in range(200):
            p = sample_params(sampler, seed)
            for s in p.sigmas:
                assert b.sigma_min <= s <= b.sigma_max
            for e in p.epsilons:
                assert 0.0 <= e <= b.eps_max

    def test_sample_mean_near_center(self):
        sampler = ParamSampler(center=CENTER, spread=0.5)
        draws = np.array(
            [sample_params(sampler, seed).as_vector() for seed in range(2000)]
        )
        np.testing.assert_allclose(draws.mean(axis=0), CENTER.as_vector(), rtol=0.05)

    def test_negative_spread_rejected(self):
        with pytest.raises(InputError):
            ParamSampler(center=CENTER, spread=-0.1)


class TestCandidateGeneration:
    def test_regeneration_is_bitwise(self):
        img = synthetic_phantom(24, 24, seed=1)
        sampler = ParamSampler(center=CENTER, spread=0.75)
        a = generate_candidate_set(img, "f", sampler, q=4, seed=99)
        b = generate_candidate_set(img, "f", sampler, q=4, seed=99)
        assert a.gen_params == b.gen_params
        for ca, cb in zip(a.candidates, b.candidates):
            np.testing.assert_array_equal(ca, cb)

    def test_different_seeds_differ(self):
        img = synthetic_phantom(24, 24, seed=1)
        sampler = ParamSampler(center=CENTER, spread=0.75)
        a = generate_candidate_set(img, "f", sampler, q=4, seed=1)
        b = generate_candidate_set(img, "f", sampler, q=4, seed=2)
        assert a.gen_params != b.gen_params

    def test_candidates_match_their_parameters(self):
        img = synthetic_phantom(20, 20, seed=3)
        sampler = ParamSampler(center=CENTER, spread=0.75)
        cset = generate_candidate_set(img, "f", sampler, q=4, seed=7)
        assert cset.num_candidates == 4
        for cand, params in zip(cset.candidates, cset.gen_params):
            np.testing.assert_array_equal(cand, denoise(img, params))

    def test_candidates_are_distinct(self):
        img = synthetic_phantom(20, 20, seed=3)
        sampler = ParamSampler(center=CENTER, spread=0.75)
        cset = generate_candidate_set(img, "f", sampler, q=4, seed=11)
        assert len({p for p in cset.gen_params}) == 4

    def test_needs_two_candidates(self):
        img = synthetic_phantom(8, 8)
        with pytest.raises(InputError):
            generate_candidate_set(img, "f", ParamSampler(), q=1)


class TestOracleUser:
    @staticmethod
    def _cset(seed=5):
        img = synthetic_phantom(24, 24, seed=2)
        sampler = ParamSampler(center=CENTER, spread=0.75)
        return generate_candidate_set(img, "frame-0000", sampler, q=4, seed=seed)

    def test_picks_its_own_rendering(self):
        cset = self._cset()
        for target_index in range(4):
            oracle = OracleUser(hidden_params=cset.gen_params[target_index])
            rec = oracle_choose(cset, oracle, seed=0)
            assert rec.selected == target_index

    def test_noise_free_choice_ignores_seed(self):
        cset = self._cset()
        oracle = OracleUser(hidden_params=CENTER)
        picks = {oracle_choose(cset, oracle, seed=s).selected for s in range(10)}
        assert len(picks) == 1

    def test_record_fields(self):
        cset = self._cset()
        oracle = OracleUser(hidden_params=CENTER, user_id="sim-3")
        rec = oracle_choose(cset, oracle, seed=4, timestamp=17.5)
        assert rec.frame_id == "frame-0000"
        assert rec.num_candidates == 4
        assert rec.user_id == "sim-3"
        assert rec.timestamp == 17.5

    def test_ties_break_to_lowest_index(self):
        img = synthetic_phantom(16, 16, seed=0)
        cand = denoise(img, CENTER)
        cset = CandidateSet(
            frame_id="t",
            source=img,
            candidates=(cand, cand.copy(), cand.copy()),
            gen_params=(CENTER, CENTER, CENTER),
            seed=0,
        )
        rec = oracle_choose(cset, OracleUser(hidden_params=CENTER), seed=9)
        assert rec.selected == 0

    def test_full_noise_is_uniform(self):
        cset = self._cset()
        oracle = OracleUser(hidden_params=CENTER, decision_noise=1.0)
        picks = [oracle_choose(cset, oracle, seed=s).selected for s in range(400)]
        counts = np.bincount(picks, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_noise_validated(self):
        with pytest.raises(InputError):
            OracleUser(hidden_params=CENTER, decision_noise=1.5)


class TestSeedFanOut:
    def test_deterministic_and_distinct(self):
        seeds = [scenario_seed(42, i) for i in range(50)]
        assert seeds == [scenario_seed(42, i) for i in range(50)]
        assert len(set(seeds)) == 50
        assert all(0 <= s < 2**64 for s in seeds)

    def test_choice_stream_is_separate(self):
        assert scenario_seed(42, 0) != choice_seed(42, 0)
        assert choice_seed(42, 3) != choice_seed(42, 4)
        assert choice_seed(42, 3) != choice_seed(43, 3)


class TestBuildSession:
    def test_counts_and_frame_ids(self):
        images = [synthetic_phantom(12, 12, seed=s) for s in range(5)]
        sets = build_session(images, 4, ParamSampler(center=CENTER), q=3, master_seed=0)
        assert len(sets) == 20
        assert [c.frame_id for c in sets[:3]] == ["frame-0000", "frame-0001", "frame-0002"]
        assert len({c.frame_id for c in sets}) == 20
        assert len({c.seed for c in sets}) == 20
        assert all(c.num_candidates == 3 for c in sets)

    def test_prefix(self):
        images = [synthetic_phantom(8, 8)]
        sets = build_session(images, 2, ParamSampler(), frame_prefix="s01")
        assert [c.frame_id for c in sets] == ["s01-0000", "s01-0001"]

    def test_input_validation(self):
        with pytest.raises(InputError):
            build_session([], 4, ParamSampler())
        with pytest.raises(InputError):
            build_session([synthetic_phantom(8, 8)], 0, ParamSampler())


class TestManifest:
    @staticmethod
    def _images_on_disk(tmp_path, n=3):
        paths = []
        for i in range(n):
            path = tmp_path / f"img{i}.png"
            write_image(path, synthetic_phantom(20, 20, seed=i))
            paths.append(path)
        return paths

    def test_json_round_trip(self, tmp_path):
        paths = self._images_on_disk(tmp_path)
        manifest = build_manifest(
            paths, 2, ParamSampler(center=CENTER, spread=0.6), q=4, master_seed=77
        )
        mpath = tmp_path / "manifest.json"
        save_manifest(manifest, mpath)
        again = load_manifest(mpath)
        assert again.q == manifest.q
        assert again.master_seed == manifest.master_seed
        assert again.sampler == manifest.sampler
        assert again.scenarios == manifest.scenarios

    def test_resolver_matches_direct_generation(self, tmp_path):
        paths = self._images_on_disk(tmp_path)
        sampler = ParamSampler(center=CENTER, spread=0.75)
        manifest = build_manifest(paths, 2, sampler, q=4, master_seed=5)
        resolver = ScenarioResolver(manifest)
        from prefdn.image import read_image

        for ref in manifest.scenarios:
            cset = resolver(ref.frame_id)
            direct = generate_candidate_set(
                read_image(ref.image_path), ref.frame_id, sampler, 4, ref.seed
            )
            assert cset.gen_params == direct.gen_params
            for a, b in zip(cset.candidates, direct.candidates):
                np.testing.assert_array_equal(a, b)

    def test_two_resolvers_agree_bitwise(self, tmp_path):
        paths = self._images_on_disk(tmp_path)
        manifest = build_manifest(paths, 3, ParamSampler(center=CENTER), master_seed=9)
        mpath = tmp_path / "manifest.json"
        save_manifest(manifest, mpath)
        r1 = ScenarioResolver(load_manifest(mpath))
        r2 = ScenarioResolver(load_manifest(mpath))
        for fid in manifest.frame_ids():
            for a, b in zip(r1(fid).candidates, r2(fid).candidates):
                np.testing.assert_array_equal(a, b)

    def test_resolver_caches_and_validates(self, tmp_path):
        paths = self._images_on_disk(tmp_path, n=1)
        manifest = build_manifest(paths, 1, ParamSampler(center=CENTER))
        resolver = ScenarioResolver(manifest)
        fid = manifest.frame_ids()[0]
        assert fid in resolver
        assert "frame-9999" not in resolver
        assert resolver(fid) is resolver(fid)
        with pytest.raises(MissingDataError):
            resolver("frame-9999")

    def test_relative_paths_use_base_dir(self, tmp_path):
        self._images_on_disk(tmp_path, n=1)
        manifest = build_manifest(["img0.png"], 1, ParamSampler(center=CENTER))
        resolver = ScenarioResolver(manifest, base_dir=tmp_path)
        cset = resolver(manifest.frame_ids()[0])
        assert cset.source.shape == (20, 20)


class TestSimulateChoices:
    def test_deterministic_and_matches_per_frame(self, tmp_path):
        paths = TestManifest._images_on_disk(tmp_path)
        manifest = build_manifest(paths, 2, ParamSampler(center=CENTER), master_seed=3)
        resolver = ScenarioResolver(manifest)
        oracle = OracleUser(hidden_params=CENTER, user_id="sim")
        records = simulate_choices(resolver, manifest.frame_ids(), oracle, master_seed=3)
        again = simulate_choices(resolver, manifest.frame_ids(), oracle, master_seed=3)
        assert records == again
        assert [r.frame_id for r in records] == manifest.frame_ids()
        assert all(r.timestamp == 0.0 for r in records)
        for index, rec in enumerate(records):
            direct = oracle_choose(resolver(rec.frame_id), oracle, choice_seed(3, index))
            assert rec == direct


class TestSyntheticPhantom:
    def test_shape_and_range(self):
        img = synthetic_phantom(32, 20, seed=0)
        assert img.shape == (20, 32)
        assert img.min() >= 0.02 and img.max() <= 0.98

    def test_deterministic(self):
        np.testing.assert_array_equal(
            synthetic_phantom(16, 16, seed=4), synthetic_phantom(16, 16, seed=4)
        )
        assert not np.array_equal(
            synthetic_phantom(16, 16, seed=4), synthetic_phantom(16, 16, seed=5)
        )

    def test_has_energy_at_every_scale(self):
        # each band of the decomposition should see real structure,
        # otherwise some parameters would have no observable effect
        img = synthetic_phantom(64, 64, seed=8)
        dec = decompose(img, (1.0, 2.0, 4.0))
        for band in dec.bandpass:
            assert float(np.abs(band).max()) > 1e-3

    def test_size_validated(self):
        with pytest.raises(InputError):
            synthetic_phantom(0, 8)
