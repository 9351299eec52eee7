import numpy as np
import pytest

from mtdrot import model
from mtdrot.basis import build_basis, from_real, random_coeffs, steer, to_real
from mtdrot.invariants import AngularDesign, auto3_V, bin_map, bin_reduce, pair_table, s_hat_forward
from mtdrot.recover import (
    BinnedCost,
    InversionError,
    OptimizerOptions,
    UnbinnedCost,
    align_2d,
    align_error_1d,
    align_error_2d,
    bispectrum_direct,
    bispectrum_from_V,
    cost_binned,
    cost_unbinned,
    dft_coefficients,
    grad_binned,
    grad_unbinned,
    invert_bispectrum,
    minimize,
    recover_2d,
)


def _nonvanishing(n, rng, floor=0.1):
    while True:
        F = rng.standard_normal(2 * n)
        if np.min(np.abs(dft_coefficients(F))) > floor:
            return model.TargetSignal1D(F)


# ---------------------------------------------------------------------------
# 1D


def test_dft_coefficients_convention(rng):
    F = rng.standard_normal(6)
    x = np.arange(-3, 3)
    for k in range(-3, 3):
        assert dft_coefficients(F)[k + 3] == pytest.approx(np.sum(F * np.exp(-2j * np.pi * k * x / 6)))


def test_bispectrum_examples(rng):
    n = 3
    delta = np.zeros(2 * n)
    delta[n] = 1.0
    assert np.allclose(bispectrum_from_V(auto3_V(delta)), 1.0)
    c = 0.7
    B = bispectrum_from_V(auto3_V(np.full(2 * n, c)))
    assert B[n, n] == pytest.approx((2 * n * c) ** 3)
    B[n, n] = 0
    assert np.max(np.abs(B)) < 1e-12
    F = rng.standard_normal(8)
    direct = bispectrum_direct(F)
    assert np.max(np.abs(bispectrum_from_V(auto3_V(F)) - direct)) < 1e-10 * np.abs(direct).max()


def test_bispectrum_symmetries(rng):
    n = 4
    B = bispectrum_direct(rng.standard_normal(2 * n))
    assert np.allclose(B, B.T)
    k = np.arange(2 * n) - n
    k3 = (-k[:, None] - k[None, :] + n) % (2 * n)
    assert np.allclose(B[k3, np.arange(2 * n)[None, :]], B)
    assert abs(B[n, n].imag) < 1e-12


def test_invert_flat_spectrum_gives_spike():
    F = invert_bispectrum(np.ones((8, 8), dtype=complex))
    vals = np.sort(np.abs(F.values))
    assert vals[-1] == pytest.approx(1.0)
    assert np.allclose(vals[:-1], 0, atol=1e-12)


def test_invert_round_trip(rng):
    for _ in range(10):
        F = _nonvanishing(6, rng)
        assert align_error_1d(invert_bispectrum(bispectrum_direct(F)), F) <= 1e-8


def test_invert_homogeneity(rng):
    F = _nonvanishing(5, rng)
    B = bispectrum_direct(F)
    base = invert_bispectrum(B).values
    for c in (2.0, -0.5):
        scaled = invert_bispectrum(c**3 * B).values
        assert align_error_1d(scaled, c * base) < 1e-10


def test_invert_rejects_vanishing_coefficient():
    F = np.array([1.0, 1.0, 1.0, 1.0])  # only a_0 is nonzero
    with pytest.raises(InversionError):
        invert_bispectrum(bispectrum_direct(F))
    with pytest.raises(InversionError):
        invert_bispectrum(np.zeros((4, 4)))


def test_invert_rejects_inconsistent(rng):
    B = np.exp(2j * np.pi * rng.random((8, 8)))
    B[4, 4] = 1.0
    with pytest.raises(InversionError):
        invert_bispectrum(B)


def test_theorem_round_trip_through_V(rng):
    for _ in range(30):
        F = _nonvanishing(int(rng.integers(3, 9)), rng, floor=0.05)
        assert align_error_1d(invert_bispectrum(bispectrum_from_V(auto3_V(F))), F) <= 1e-8


def test_align_error_1d(rng):
    F = model.TargetSignal1D(rng.standard_normal(12))
    assert align_error_1d(model.rotate1d(F, 5), F) == 0.0
    with pytest.raises(ValueError):
        align_error_1d(np.ones(4), np.zeros(4))


# ---------------------------------------------------------------------------
# 2D alignment


@pytest.fixture(scope="module")
def b3():
    basis = build_basis(3, count=9)
    return basis, AngularDesign(basis)


def test_align_2d_examples(b3, rng):
    basis, _ = b3
    v = random_coeffs(basis, rng)
    err, phi, flipped = align_2d(steer(v, 1.234, basis), v, basis)
    assert err <= 1e-6 and not flipped
    assert steer(np.ones(basis.d), phi, basis) == pytest.approx(steer(np.ones(basis.d), -1.234, basis), abs=1e-6)
    a = np.zeros(basis.d, dtype=complex)
    b = np.zeros(basis.d, dtype=complex)
    a[basis.index.index((0, 1))] = 1.0
    b[basis.index.index((0, 2))] = 1.0
    assert align_error_2d(a, b, basis) == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        align_error_2d(a, np.zeros(basis.d), basis)


def test_align_2d_reflection(b3, rng):
    from mtdrot.basis import mirror

    basis, _ = b3
    v = random_coeffs(basis, rng)
    w = steer(mirror(v, basis), 0.4, basis)
    assert align_error_2d(w, v, basis) > 1e-3
    err, _, flipped = align_2d(w, v, basis, reflections=True)
    assert err < 1e-6 and flipped


# ---------------------------------------------------------------------------
# Costs


def test_unbinned_cost_examples(b3, rng):
    basis, design = b3
    v = random_coeffs(basis, rng)
    S = s_hat_forward(v, design)
    assert cost_unbinned(v, S, design) == pytest.approx(0, abs=1e-12 * np.sum(np.abs(S) ** 2))
    assert np.max(np.abs(grad_unbinned(v, S, design))) < 1e-9 * np.abs(S).max() ** (5 / 3)
    w = random_coeffs(basis, rng)
    Sw = s_hat_forward(w, design)
    assert cost_unbinned(w, np.zeros_like(S), design) == pytest.approx(0.5 * np.sum(np.abs(Sw) ** 2), rel=1e-12)
    # arbitrary complex target: value equals the literal sum
    T = rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape)
    assert cost_unbinned(w, T, design) == pytest.approx(0.5 * np.sum(np.abs(Sw - T) ** 2), rel=1e-10)


def _fd_check(cost, basis, rng, probes=20):
    for _ in range(probes):
        theta = rng.standard_normal(basis.d)
        direc = rng.standard_normal(basis.d)
        eps = 1e-5
        fd = (cost.value(from_real(theta + eps * direc, basis)) - cost.value(from_real(theta - eps * direc, basis))) / (2 * eps)
        an = cost.gradient(from_real(theta, basis)) @ direc
        assert abs(an - fd) <= 1e-6 * max(abs(fd), 1e-12)


def test_cost_gradients_finite_differences(b3, rng):
    basis, design = b3
    S = s_hat_forward(random_coeffs(basis, rng), design)
    S = S + 0.1 * np.abs(S).max() * rng.standard_normal(S.shape)
    _fd_check(UnbinnedCost(design, S), basis, rng)
    bm = bin_map(3)
    _fd_check(BinnedCost(design, bm, bin_reduce(S, bm)), basis, rng)
    bm = bin_map(3, kmax=4.0)
    _fd_check(BinnedCost(design, bm, bin_reduce(S, bm)), basis, rng)


def test_cost_gauge_invariance(b3, rng):
    basis, design = b3
    S = s_hat_forward(random_coeffs(basis, rng), design)
    bm = bin_map(3)
    unb, bnd = UnbinnedCost(design, S), BinnedCost(design, bm, bin_reduce(S, bm))
    v = random_coeffs(basis, rng)
    for phi in rng.uniform(0, 2 * np.pi, 5):
        w = steer(v, phi, basis)
        assert unb.value(w) == pytest.approx(unb.value(v), rel=1e-10)
        assert bnd.value(w) == pytest.approx(bnd.value(v), rel=1e-10)


def test_binned_cost_examples(b3, rng):
    basis, design = b3
    bm = bin_map(3)
    v = random_coeffs(basis, rng)
    S = s_hat_forward(v, design)
    tb = bin_reduce(S, bm)
    assert cost_binned(v, tb, design, bm) == pytest.approx(0, abs=1e-12 * np.sum(np.abs(tb) ** 2))
    assert np.max(np.abs(grad_binned(v, tb, design, bm))) < 1e-8 * np.abs(tb).max()
    with pytest.raises(ValueError):
        cost_binned(v, tb[:-1], design, bm)
    with pytest.raises(ValueError):
        BinnedCost(design, bin_map(2), tb)


def test_binned_cauchy_schwarz(b3, rng):
    basis, design = b3
    S = s_hat_forward(random_coeffs(basis, rng), design)
    for b1, b2 in [(1.0, 6 / np.pi), (0.5, 1.0), (3.0, 10.0)]:
        bm = bin_map(3, b1, b2)
        tb = bin_reduce(S, bm)
        for _ in range(3):
            w = random_coeffs(basis, rng)
            gb = cost_binned(w, tb, design, bm)
            g = cost_unbinned(w, S, design)
            assert gb <= bm.sizes.max() * g * (1 + 1e-12)


def test_binned_gradient_is_per_bin_residual_times_bin_gradient(rng):
    from mtdrot.invariants import s_hat_gradient

    basis = build_basis(2, count=5)
    design = AngularDesign(basis)
    bm = bin_map(2)
    S = s_hat_forward(random_coeffs(basis, rng), design)
    tb = bin_reduce(S, bm)
    v = random_coeffs(basis, rng)
    resid = bin_reduce(s_hat_forward(v, design), bm) - tb
    G = s_hat_gradient(v, design).reshape(-1, basis.d)
    gbin = np.zeros((bm.count, basis.d), dtype=complex)
    np.add.at(gbin, bm.labels, G)
    dv = np.conj(resid) @ gbin  # holomorphic: d(1/2 |r|^2) = Re(conj(r) dr)
    from mtdrot.basis import real_gradient

    assert np.allclose(grad_binned(v, tb, design, bm), real_gradient(dv, basis), rtol=1e-8, atol=1e-10)


# ---------------------------------------------------------------------------
# Optimizer


def test_minimize_quadratic(rng):
    c = rng.standard_normal(7)

    def fun(x):
        r = x - c
        return float(r @ r), 2 * r

    x, rep = minimize(fun, rng.standard_normal(7), OptimizerOptions(gtol=1e-12, restarts=1))
    assert np.max(np.abs(x - c)) < 1e-10
    assert rep.restarts == 1 and rep.probe_error < 1e-6


def test_minimize_rejects_inconsistent_gradient(rng):
    def fun(x):
        return float(x @ x), 3 * x

    with pytest.raises(ValueError):
        minimize(fun, rng.standard_normal(4), OptimizerOptions(restarts=1))


def test_options_validation():
    with pytest.raises(ValueError):
        OptimizerOptions(gtol=0)
    with pytest.raises(ValueError):
        OptimizerOptions(restarts=0)
    assert OptimizerOptions.noisy().gtol == 1e-6
    assert OptimizerOptions.noiseless().gtol == 1e-9


def test_recover_noiseless_small(b3):
    basis, design = b3
    v = random_coeffs(basis, np.random.default_rng(2))
    S = s_hat_forward(v, design)
    vh, rep = recover_2d(S, basis, OptimizerOptions(restarts=5), design=design, truth=v)
    assert rep["aligned_error"] <= 1e-6
    for key in ("cost", "iterations", "restarts", "wall_seconds", "starts", "cost_unnormalized"):
        assert key in rep


def test_recover_gauge(b3):
    # steered truth: identical invariant target, identical error against it
    basis, design = b3
    v = random_coeffs(basis, np.random.default_rng(2))
    w = steer(v, 2.1, basis)
    Sv, Sw = s_hat_forward(v, design), s_hat_forward(w, design)
    assert np.max(np.abs(Sv - Sw)) < 1e-10 * np.abs(Sv).max()
    opts = OptimizerOptions(restarts=2)
    _, rv = recover_2d(Sv, basis, opts, design=design, truth=v)
    _, rw = recover_2d(Sw, basis, opts, design=design, truth=w)
    assert rv["aligned_error"] <= 1e-6 and rw["aligned_error"] <= 1e-6
    cost = UnbinnedCost(design, Sv)
    probe = random_coeffs(basis, np.random.default_rng(6))
    assert cost.value(steer(probe, 2.1, basis)) == pytest.approx(cost.value(probe), rel=1e-12)


def test_recover_binned_noisy_history_monotone(b3):
    basis, design = b3
    rng = np.random.default_rng(9)
    v = random_coeffs(basis, rng)
    bm = bin_map(3)
    tb = bin_reduce(s_hat_forward(v, design), bm)
    tb = tb + 0.01 * np.abs(tb).max() * rng.standard_normal(tb.shape)
    vh, rep = recover_2d(tb, basis, OptimizerOptions.noisy(restarts=2), bmap=bm, design=design,
                         truth=v, reflections=True)
    for start in rep["starts"]:
        h = np.array(start["history"])
        assert h.size > 0 and np.all(np.diff(h) <= 1e-12 * h[0])
    assert rep["aligned_error"] < 0.2


def test_recover_warm_start_and_table(b3):
    basis, design = b3
    v = random_coeffs(basis, np.random.default_rng(5))
    S = s_hat_forward(v, design)
    table = pair_table(3)
    vh, rep = recover_2d(S, basis, OptimizerOptions(restarts=1), design=design, table=table,
                         truth=v, v0=steer(v, 0.3, basis) * 1.01)
    assert rep["aligned_error"] < 1e-6
    assert np.allclose(to_real(from_real(to_real(vh, basis), basis), basis), to_real(vh, basis))


def test_recover_staged(b3):
    basis, design = b3
    v = random_coeffs(basis, np.random.default_rng(4))
    S = s_hat_forward(v, design)
    bm = bin_map(3)
    vh, rep = recover_2d(S, basis, OptimizerOptions(restarts=3), bmap=bm, design=design, truth=v,
                         reflections=True, staged=True, v0=random_coeffs(basis, np.random.default_rng(5)))
    assert rep["aligned_error"] <= 1e-6
    assert rep["unbinned_stage"]["cost"] <= 1e-12
    assert rep["warm_start_won"] in (True, False)
    with pytest.raises(ValueError):
        recover_2d(bin_reduce(S, bm), basis, bmap=bm, design=design, staged=True)
