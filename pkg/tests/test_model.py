import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtdrot import model
from mtdrot.basis import build_basis, random_coeffs, render_image, steer
from mtdrot.model import MeasurementConfig, PlacementError, TargetSignal1D, rotate1d


def test_rotate1d_examples():
    spike = TargetSignal1D([0, 0, 1, 0])  # x = -2..1, spike at 0
    np.testing.assert_array_equal(rotate1d(spike, 1).values, [0, 1, 0, 0])
    F = TargetSignal1D([1, 2, 3, 4])
    np.testing.assert_array_equal(rotate1d(F, 0).values, F.values)
    np.testing.assert_array_equal(rotate1d(F, 2).values, [3, 4, 1, 2])
    assert rotate1d(spike, 1).at(-1) == 1.0
    assert spike.at(5) == 0.0


@given(st.integers(1, 6), st.data())
def test_rotate1d_composes(n, data):
    F = TargetSignal1D(np.arange(2 * n, dtype=float))
    a = data.draw(st.integers(-n, n - 1))
    b = data.draw(st.integers(-n, n - 1))
    c = (a + b + n) % (2 * n) - n
    np.testing.assert_array_equal(rotate1d(rotate1d(F, a), b).values, rotate1d(F, c).values)


def test_rotate1d_rejects_bad_shift():
    with pytest.raises(ValueError):
        rotate1d(TargetSignal1D([1, 2]), 2)
    with pytest.raises(ValueError):
        rotate1d(TargetSignal1D([1, 2]), -2)


def test_target_validation():
    with pytest.raises(ValueError):
        TargetSignal1D([1, 2, 3])
    with pytest.raises(ValueError):
        TargetSignal1D([1, np.inf])


def test_config_validation_and_density():
    with pytest.raises(ValueError):
        MeasurementConfig(m=10, n=2, p=1)
    with pytest.raises(ValueError):
        MeasurementConfig(m=100, n=2, p=1, sigma=-1)
    cfg = MeasurementConfig(m=1000, n=10, gamma=0.1)
    assert cfg.p == 10 and math.isclose(cfg.density, 0.1)
    cfg2 = MeasurementConfig(m=1000, n=10, gamma=0.05, dim=2)
    assert cfg2.p == 500


def test_infeasible_density_is_a_placement_error():
    # p * (4n)^2 = 5536 * 68^2 far exceeds 4000^2
    with pytest.raises(PlacementError):
        MeasurementConfig(m=4000, n=17, gamma=0.1, dim=2)


def _check_1d(pos, m, n):
    for a, b in itertools.combinations(pos, 2):
        d = abs(int(a) - int(b))
        assert d >= 4 * n and m - d > 4 * n
    assert np.all((pos >= n + 1) & (pos <= m - n + 1))


def test_place_1d_separation(rng):
    cfg = MeasurementConfig(m=40, n=2, p=2)
    for _ in range(50):
        _check_1d(model.place_targets(cfg, rng), 40, 2)
    cfg = MeasurementConfig(m=5000, n=5, gamma=0.15)
    _check_1d(model.place_targets(cfg, rng), 5000, 5)


def test_place_1d_pigeonhole_failure(rng):
    with pytest.raises(PlacementError):
        model.place_targets(MeasurementConfig(m=16, n=2, p=3, dim=1), rng)
    # passes the counting bound but no two positions satisfy both separations
    with pytest.raises(PlacementError) as info:
        model.place_targets(MeasurementConfig(m=16, n=2, p=2, dim=1), rng)
    assert info.value.requested == 2 and info.value.placed == 1


def test_place_2d_separation(rng):
    cfg = MeasurementConfig(m=300, n=5, p=40, dim=2)
    pos = model.place_targets(cfg, rng)
    assert pos.shape == (40, 2)
    assert np.all((pos >= 6) & (pos <= 295))
    d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 20


def test_synthesize_1d_cases(rng):
    F = TargetSignal1D(rng.standard_normal(8))
    M = model.synthesize_1d(MeasurementConfig(m=64, n=4, p=0), F, rng)
    assert not M.pixels.any()
    cfg = MeasurementConfig(m=200, n=4, p=5)
    M = model.synthesize_1d(cfg, F, model.stream(1))
    residual = M.pixels.copy()
    for x, tau in zip(M.placement.positions, M.placement.shifts):
        window = residual[x - 5 : x + 3]
        np.testing.assert_array_equal(window, rotate1d(F, int(tau)).values)
        residual[x - 5 : x + 3] -= rotate1d(F, int(tau)).values
    assert not residual.any()
    assert math.isclose(M.pixels.sum(), 5 * F.values.sum(), rel_tol=1e-12)


def test_synthesize_1d_noise_statistics():
    m, sigma = 10**6, 0.7
    M = model.synthesize_1d(MeasurementConfig(m=m, n=4, p=0, sigma=sigma), TargetSignal1D(np.ones(8)), model.stream(9))
    assert abs(M.pixels.mean()) < 4 * sigma / math.sqrt(m)
    assert abs(M.pixels.var() / sigma**2 - 1) < 0.1


def test_synthesis_is_deterministic():
    F = TargetSignal1D(np.arange(6.0))
    cfg = MeasurementConfig(m=300, n=3, p=10, sigma=1.0)
    a = model.synthesize_1d(cfg, F, model.stream(5, 2)).pixels
    b = model.synthesize_1d(cfg, F, model.stream(5, 2)).pixels
    c = model.synthesize_1d(cfg, F, model.stream(5, 3)).pixels
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


def test_synthesize_2d_single_copy(rng):
    n = 4
    basis = build_basis(n, count=10)
    v = random_coeffs(basis, rng)
    cfg = MeasurementConfig(m=64, n=n, p=1, dim=2)
    assert not model.synthesize_2d(MeasurementConfig(m=64, n=n, p=0, dim=2), v, basis, rng).pixels.any()
    M = model.synthesize_2d(cfg, v, basis, model.stream(4))
    (x, y), phi = M.placement.positions[0], M.placement.angles[0]
    img = render_image(steer(v, phi, basis), basis)
    # pixel (x, y) (1-based) holds the image centre
    window = M.pixels[x - 1 - 2 * n : x - 1 + 2 * n, y - 1 - 2 * n : y - 1 + 2 * n]
    np.testing.assert_allclose(window, img, atol=1e-14)
    assert math.isclose(M.pixels.sum(), img.sum(), rel_tol=1e-12, abs_tol=1e-12)


def test_snr_formulas():
    n = 3
    F = np.ones(2 * n)
    assert model.snr(F, 1.0, n) == pytest.approx(1.0)
    assert model.snr(F, 2.0, n) == pytest.approx(0.25)
    F2 = np.full(10, math.sqrt(math.pi * n * n / 10))
    assert model.snr(F2, 1.0, n, dim=2) == pytest.approx(1.0)
    assert model.snr(F, 0.0, n) == math.inf
    sigma = model.sigma_for_snr(F2, 1e-2, n, dim=2)
    assert model.snr(F2, sigma, n, dim=2) == pytest.approx(1e-2)
