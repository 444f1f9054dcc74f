"""Scene and mode-set file formats: round trips and parse errors."""

import numpy as np
import pytest

from u2traj.data import Bounds, Scene, generate_scene
from u2traj.errors import (
    FormatVersionError,
    MalformedRecordError,
    TruncatedFileError,
)
from u2traj.sampling import ModeSet, PosteriorField
from u2traj.sceneio import read_modeset, read_scene, write_modeset, write_scene


@pytest.fixture()
def scene(rng):
    sc = generate_scene(6, 3, rng=rng)
    mask = np.ones((6, 3))
    mask[3:, 1] = 0.0
    sc.mask = mask
    sc.meta["manifest"] = "cfg:abc;seed:1"
    return sc


@pytest.fixture()
def modeset(rng):
    fields = [
        PosteriorField(
            mean=rng.normal(size=(4, 2, 2)), var=rng.uniform(0.0, 0.3, size=(4, 2, 2))
        )
        for _ in range(3)
    ]
    e = rng.dirichlet(np.ones(3))
    return ModeSet(fields=fields, e=e)


class TestSceneRoundTrip:
    def test_round_trip_positions_and_mask(self, tmp_path, scene):
        path = tmp_path / "scene.u2s"
        write_scene(path, scene)
        back = read_scene(path)
        np.testing.assert_allclose(back.x, scene.x, atol=1e-9)
        np.testing.assert_array_equal(back.mask, scene.mask)
        assert back.dt == pytest.approx(scene.dt, abs=1e-9)
        assert back.bounds.x_max == pytest.approx(scene.bounds.x_max, abs=1e-9)
        assert back.meta["manifest"] == "cfg:abc;seed:1"
        assert back.meta["units"] == "court"

    def test_bad_mask_value_names_line(self, tmp_path, scene):
        path = tmp_path / "scene.u2s"
        write_scene(path, scene)
        lines = path.read_text().splitlines()
        parts = lines[4].split()
        parts[4] = "2"
        lines[4] = " ".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedRecordError) as err:
            read_scene(path)
        assert err.value.line == 5

    def test_truncation_detected(self, tmp_path, scene):
        path = tmp_path / "scene.u2s"
        write_scene(path, scene)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-3]) + "\n")
        with pytest.raises(TruncatedFileError):
            read_scene(path)

    def test_version_mismatch(self, tmp_path, scene):
        path = tmp_path / "scene.u2s"
        write_scene(path, scene)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace("U2SCENE 1", "U2SCENE 9")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatVersionError):
            read_scene(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.u2s"
        path.write_text("NOTASCENE 1 T=1 N=1\n1 1 0 0 1\n")
        with pytest.raises(FormatVersionError):
            read_scene(path)

    def test_malformed_record(self, tmp_path, scene):
        path = tmp_path / "scene.u2s"
        write_scene(path, scene)
        lines = path.read_text().splitlines()
        lines[2] = "1 2 oops 0.0 1"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedRecordError) as err:
            read_scene(path)
        assert err.value.line == 3


class TestModesetRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path, modeset):
        mask = np.zeros((4, 2))
        mask[0] = 1.0
        path = tmp_path / "m.u2m"
        write_modeset(path, modeset, mask, dt=0.2, bounds=Bounds(0, 10, 0, 5))
        back, back_mask, meta = read_modeset(path)
        assert back.K == 3
        np.testing.assert_array_equal(back_mask, mask)
        for a, b in zip(back.fields, modeset.fields):
            # 17 significant digits round-trip float64 exactly
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.var, b.var)
        np.testing.assert_array_equal(back.e, modeset.e)
        assert meta["bounds"].x_max == pytest.approx(10.0)

    def test_rank_input_round_trip_bit_exact(self, tmp_path, modeset):
        from u2traj.ranknn import build_rank_input

        mask = np.zeros((4, 2))
        mask[0] = 1.0
        before = build_rank_input(modeset, mask)
        path = tmp_path / "m.u2m"
        write_modeset(path, modeset, mask)
        back, back_mask, _ = read_modeset(path)
        after = build_rank_input(back, back_mask)
        np.testing.assert_array_equal(before, after)

    def test_e_vector_optional(self, tmp_path, modeset):
        modeset.e = None
        path = tmp_path / "m.u2m"
        write_modeset(path, modeset, np.zeros((4, 2)))
        back, _, _ = read_modeset(path)
        assert back.e is None

    def test_truncation(self, tmp_path, modeset):
        path = tmp_path / "m.u2m"
        write_modeset(path, modeset, np.zeros((4, 2)))
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(TruncatedFileError):
            read_modeset(path)

    def test_negative_variance_rejected(self, tmp_path, modeset):
        path = tmp_path / "m.u2m"
        write_modeset(path, modeset, np.zeros((4, 2)))
        lines = path.read_text().splitlines()
        parts = lines[-1].split()
        parts[4] = "-1.0"
        lines[-1] = " ".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedRecordError):
            read_modeset(path)

    def test_missing_mode_marker(self, tmp_path, modeset):
        path = tmp_path / "m.u2m"
        write_modeset(path, modeset, np.zeros((4, 2)))
        text = path.read_text().replace("mode 2", "mode 7")
        path.write_text(text)
        with pytest.raises(MalformedRecordError):
            read_modeset(path)
