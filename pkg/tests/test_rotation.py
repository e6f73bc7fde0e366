"""Grid rotation maps, spectral concentration, and the angle search."""

import numpy as np
import pytest

from rankscope import fields, rotation
from rankscope.completion import complete_nuclear_norm, default_nuclear_reg
from rankscope.exceptions import DimensionError, InputError, UndefinedRatioError
from rankscope.matrix_core import DenseMatrix, ObservationSet, mask_project


def uniform_field_obs(n, sensors, sources, seed, noise=0.01):
    cfg = fields.FieldConfig(n=n, sensor_count=sensors)
    f = fields.isotropic_field(sources, cfg)
    return fields.sample_observations(f, sensors, noise, seed)


class TestRotationMap:
    def test_identity(self):
        rot = rotation.rotation_map(6, 0.0)
        assert rot.coverage == 1.0
        for i in range(6):
            for j in range(6):
                assert rot.target(i, j) == (i, j)

    def test_quarter_turn_2x2_cycle(self):
        rot = rotation.rotation_map(2, np.pi / 2)
        assert rot.coverage == 1.0
        # counter-clockwise about the center
        assert rot.target(0, 0) == (1, 0)
        assert rot.target(1, 0) == (1, 1)
        assert rot.target(1, 1) == (0, 1)
        assert rot.target(0, 1) == (0, 0)

    def test_quarter_turn_is_permutation(self):
        rot = rotation.rotation_map(9, np.pi / 2)
        assert rot.coverage == 1.0
        targets = sorted(rot.targets.tolist())
        assert targets == list(range(81))

    def test_pi_sixth_coverage(self):
        # the overlap of a square with its 30-degree rotation has area
        # fraction 1/(cos + sin) ~= 0.732; nearest-neighbor rounding lands a
        # shade above that
        rot = rotation.rotation_map(100, np.pi / 6)
        assert rot.coverage == pytest.approx(0.7336, abs=1e-4)
        assert rot.coverage > 1.0 / (np.cos(np.pi / 6) + np.sin(np.pi / 6)) - 0.005

    def test_generic_angle_clips_corners(self):
        rot = rotation.rotation_map(30, 0.4)
        assert rot.target(0, 0) is None
        assert rot.coverage < 1.0

    def test_collision_smaller_source_wins(self):
        rot = rotation.rotation_map(15, 0.3)
        seen = {}
        for src, t in enumerate(rot.targets):
            if t >= 0:
                assert t not in seen
                seen[int(t)] = src

    def test_domain(self):
        with pytest.raises(InputError):
            rotation.rotation_map(1, 0.1)
        with pytest.raises(InputError):
            rotation.rotation_map(5, np.nan)


class TestApplyRotation:
    def obs(self, rng, n=12, m=60):
        lin = rng.choice(n * n, size=m, replace=False)
        a = DenseMatrix.from_array(rng.normal(size=(n, n)))
        return mask_project(a, [(int(k) // n, int(k) % n) for k in lin])

    def test_identity_round_trip(self, rng):
        obs = self.obs(rng)
        out = rotation.apply_rotation(obs, rotation.rotation_map(12, 0.0))
        np.testing.assert_array_equal(out.ii, obs.ii)
        np.testing.assert_array_equal(out.jj, obs.jj)
        np.testing.assert_array_equal(out.values, obs.values)

    def test_four_quarter_turns_restore(self, rng):
        obs = self.obs(rng)
        rot = rotation.rotation_map(12, np.pi / 2)
        out = obs
        for _ in range(4):
            out = rotation.apply_rotation(out, rot)
        assert sorted(out.samples) == sorted(obs.samples)

    def test_never_grows(self, rng):
        obs = self.obs(rng)
        for theta in (0.0, 0.2, 0.7, np.pi / 2):
            out = rotation.apply_rotation(obs, rotation.rotation_map(12, theta))
            assert len(out) <= len(obs)
        # permutation angle preserves the count and the value multiset
        out = rotation.apply_rotation(obs, rotation.rotation_map(12, np.pi / 2))
        assert len(out) == len(obs)
        np.testing.assert_allclose(np.sort(out.values), np.sort(obs.values))

    def test_grid_mismatch(self, rng):
        with pytest.raises(DimensionError):
            rotation.apply_rotation(self.obs(rng), rotation.rotation_map(10, 0.1))


class TestSpectralConcentration:
    def test_rank_one(self, rng):
        u = rng.normal(size=7)
        v = rng.normal(size=5)
        m = DenseMatrix.from_array(np.outer(u, v))
        assert rotation.spectral_concentration(m) == pytest.approx(1.0)

    def test_identity_spectrum(self):
        assert rotation.spectral_concentration(
            DenseMatrix.from_array(np.eye(4))
        ) == pytest.approx(0.25)

    def test_two_value_spectrum(self):
        m = DenseMatrix.from_array(np.diag([3.0, 4.0]))
        assert rotation.spectral_concentration(m) == pytest.approx(0.64)

    def test_zero_matrix(self):
        with pytest.raises(UndefinedRatioError):
            rotation.spectral_concentration(DenseMatrix.from_array(np.zeros((3, 3))))

    def test_bounds(self, rng):
        for _ in range(20):
            m = DenseMatrix.from_array(rng.normal(size=(6, 9)))
            rho = rotation.spectral_concentration(m)
            assert 1.0 / 6 <= rho <= 1.0


class TestFindThetaOpt:
    def test_centered_source_near_invariant(self):
        obs = uniform_field_obs(
            40, 900, [fields.SourceSpec(7.5, 7.5)], seed=21)
        prof = rotation.find_theta_opt(obs)
        hi = float(np.nanmax(prof.rho))
        lo = float(np.nanmin(prof.rho))
        assert (hi - lo) / hi < 0.2

    def test_colinear_row_breaks_degeneracy(self):
        srcs = [fields.SourceSpec(3.0, 7.3), fields.SourceSpec(7.5, 7.3),
                fields.SourceSpec(12.0, 7.3)]
        obs = uniform_field_obs(40, 900, srcs, seed=22)
        prof = rotation.find_theta_opt(obs)
        assert prof.theta_opt != 0.0
        assert float(np.nanmin(prof.rho)) < prof.rho[0]
        # the third direction only becomes visible after rotating off the row
        reg = default_nuclear_reg(obs)
        ratios = {}
        for theta in (0.0, prof.theta_opt):
            rotated = rotation.apply_rotation(obs, rotation.rotation_map(40, theta))
            comp = complete_nuclear_norm(rotated, reg)
            s = np.linalg.svd(comp.data, compute_uv=False)
            ratios[theta] = s[2] / s[0]
        assert ratios[prof.theta_opt] > ratios[0.0] + 0.1

    def test_profile_argmin_consistency(self):
        obs = uniform_field_obs(30, 500, [fields.SourceSpec(5.0, 9.0)], seed=23)
        prof = rotation.find_theta_opt(obs)
        k = int(np.nanargmin(prof.rho))
        assert prof.theta_opt == prof.thetas[k]
        assert np.all(prof.rho[k] <= prof.rho[~np.isnan(prof.rho)])
        assert prof.theta_max == prof.thetas[int(np.nanargmax(prof.rho))]

    def test_needs_two_angles(self):
        obs = uniform_field_obs(20, 200, [fields.SourceSpec(7.5, 7.5)], seed=24)
        with pytest.raises(InputError):
            rotation.find_theta_opt(obs, angles=np.array([0.3]))

    def test_square_grid_required(self):
        obs = ObservationSet(4, 6, np.array([0, 1]), np.array([2, 3]),
                             np.array([1.0, 2.0]))
        with pytest.raises(DimensionError):
            rotation.find_theta_opt(obs)


class TestDefaultAngleGrid:
    def test_matches_paper_grid(self):
        grid = rotation.default_angle_grid(20)
        np.testing.assert_allclose(grid, np.arange(20) * np.pi / 40)
        assert grid[0] == 0.0
        assert grid[-1] < np.pi / 2


class TestProfileExport:
    def test_csv_round_trip(self, tmp_path):
        prof = rotation.RotationProfile(
            thetas=np.array([0.0, 0.3, 0.6]),
            rho=np.array([0.9, 0.5, 0.7]),
            theta_opt=0.3,
            theta_max=0.0,
        )
        path = tmp_path / "profile.csv"
        rotation.save_rotation_profile(prof, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "theta,rho"
        back = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(back[:, 0], prof.thetas)
        np.testing.assert_allclose(back[:, 1], prof.rho)
