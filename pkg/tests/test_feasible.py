import numpy as np
import pytest

from sipgains import Box, InconsistentHistory, InvalidInputError, export_cloud, feasible_box, read_cloud, sample_feasible
from sipgains.errors import SamplingStalled
from sipgains.feasible import box_sidecar_path, history_box, inflate, read_box
from sipgains.model import measurement_residual


@pytest.fixture(scope="module")
def boxes(toy2d):
    return feasible_box(toy2d, 0), feasible_box(toy2d, 1)


@pytest.fixture(scope="module")
def cloud(toy2d):
    return sample_feasible(toy2d, 1, 2000, np.random.default_rng(7))


def test_toy_box_step1(boxes):
    np.testing.assert_allclose(boxes[1].lo, [-1, 0], atol=1e-3)
    np.testing.assert_allclose(boxes[1].hi, [3, 4], atol=1e-3)


def test_toy_box_step0(boxes):
    np.testing.assert_allclose(boxes[0].lo, [-2, -2], atol=1e-3)
    np.testing.assert_allclose(boxes[0].hi, [2, 2], atol=1e-3)


def test_exact_measurement_box_collapses(singleton2d):
    b0, b1 = feasible_box(singleton2d, 0), feasible_box(singleton2d, 1)
    np.testing.assert_allclose(b0.lo, 0, atol=1e-8)
    np.testing.assert_allclose(b0.hi, 0, atol=1e-8)
    np.testing.assert_allclose(b1.lo, 1, atol=1e-8)
    np.testing.assert_allclose(b1.hi, 1, atol=1e-8)


def test_step_out_of_window(toy2d):
    with pytest.raises(InvalidInputError):
        feasible_box(toy2d, 2)


def test_inconsistent_history(toy2d):
    bad = toy2d.replace(Y0=np.array([[0.0, 0.0], [10.0, 10.0]]))
    with pytest.raises(InconsistentHistory):
        feasible_box(bad, 1)


def test_samples_in_disk(cloud):
    d = np.linalg.norm(cloud.states - np.array([1.0, 2.0]), axis=1)
    assert len(cloud.states) == 2000
    assert d.max() <= 2 + 1e-9
    assert 0 < cloud.acceptance_rate <= 1


def test_box_is_tight(cloud):
    shrunk = Box([-1 + 0.4, 0 + 0.4], [3 - 0.4, 4 - 0.4])
    assert not np.all(shrunk.contains(cloud.states))


def test_samples_inside_box(cloud, boxes):
    b = boxes[1]
    assert np.all(cloud.states >= b.lo - 1e-6) and np.all(cloud.states <= b.hi + 1e-6)


def test_sample_soundness(toy2d, cloud):
    """Implied noise reproduces the measurements and stays in its set."""
    for X, V in zip(cloud.X_past[:50], cloud.V_past[:50]):
        r = measurement_residual(toy2d.model, X, np.zeros(0), V, toy2d.Y0)
        assert np.max(np.abs(r)) <= 1e-12
    assert np.all(toy2d.uncertainty.v_set.contains(cloud.V_past, 1e-9))


def test_singleton_samples_identical(singleton2d):
    s = sample_feasible(singleton2d, 1, 50, np.random.default_rng(0),
                        proposal_box=Box([0, 0], [0, 0]))
    assert np.all(s.states == s.states[0])
    np.testing.assert_array_equal(s.states[0], [1.0, 1.0])


def test_sampling_stalls(toy2d):
    # a proposal box far from the feasible disk never yields a hit
    with pytest.raises(SamplingStalled):
        sample_feasible(toy2d, 1, 1, np.random.default_rng(0), proposal_box=Box([50, 50], [51, 51]))


def test_conservatism_ratio():
    rng = np.random.default_rng(3)
    pts = Box([-1, 0], [3, 4]).sample(rng, 100_000)
    frac = np.mean(np.sum((pts - np.array([1.0, 2.0])) ** 2, axis=1) <= 4.0)
    assert abs(frac - np.pi / 4) <= 0.02


def test_same_seed_same_samples(toy2d):
    a = sample_feasible(toy2d, 1, 100, np.random.default_rng(11))
    b = sample_feasible(toy2d, 1, 100, np.random.default_rng(11))
    np.testing.assert_array_equal(a.states, b.states)


def test_history_box_inflated(toy2d, boxes):
    hb = history_box(toy2d)
    np.testing.assert_allclose(hb.lo, boxes[0].lo - 0.1, atol=1e-6)
    np.testing.assert_allclose(inflate(Box([0], [1]), 0.1).hi, [1.05])


def test_export_three_rows(tmp_path):
    pts = np.array([[0.1, 0.2], [1 / 3, np.pi], [-1e-300, 2.5e10]])
    p = export_cloud(pts, Box([0, 0], [1, 1]), tmp_path / "c.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 4 and lines[0] == "x1,x2,accepted"
    data, flags = read_cloud(p)
    np.testing.assert_array_equal(data, pts)
    assert np.all(flags == 1)
    np.testing.assert_array_equal(read_box(box_sidecar_path(p)).hi, [1, 1])


def test_export_without_box_has_no_sidecar(tmp_path):
    p = tmp_path / "c.csv"
    export_cloud([[1.0, 2.0]], Box([0, 0], [1, 1]), p)
    export_cloud([[1.0, 2.0]], None, p)
    assert not box_sidecar_path(p).exists()


def test_export_empty_rejected(tmp_path):
    with pytest.raises(InvalidInputError):
        export_cloud(np.zeros((0, 2)), None, tmp_path / "c.csv")


def test_export_unwritable(tmp_path):
    with pytest.raises(OSError):
        export_cloud([[1.0]], None, tmp_path / "missing" / "c.csv")
