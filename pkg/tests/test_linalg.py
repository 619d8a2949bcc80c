import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointsl.errors import InvalidInput, NotPSD
from jointsl.linalg import (_eigh, as_sym, extrapolation_control, psd_power, regularized_control,
                            spectral_decompose, symmetrize)


def random_psd(rng, d, rank=None):
    rank = d if rank is None else rank
    a = rng.standard_normal((d, rank))
    return a @ a.T


def test_symmetrize_exact():
    a = np.random.default_rng(0).standard_normal((4, 4))
    s = symmetrize(a)
    assert np.array_equal(s, s.T)


def test_as_sym_rejects_bad_input():
    with pytest.raises(InvalidInput):
        as_sym(np.ones((2, 3)))
    with pytest.raises(InvalidInput):
        as_sym(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_spectral_identity():
    dec = spectral_decompose(np.eye(3))
    assert np.allclose(dec.eigenvalues, 1.0)


def test_spectral_diagonal():
    dec = spectral_decompose(np.diag([1.0, 4.0]))
    assert np.allclose(dec.eigenvalues, [4.0, 1.0])
    assert np.allclose(np.abs(dec.eigenvectors), [[0, 1], [1, 0]])


def test_spectral_reconstruction_random():
    rng = np.random.default_rng(5)
    s = symmetrize(rng.standard_normal((5, 5)))
    dec = spectral_decompose(s)
    v = dec.eigenvectors
    # oracle: V diag(lam) V^T assembled by hand
    rec = sum(dec.eigenvalues[i] * np.outer(v[:, i], v[:, i]) for i in range(5))
    assert np.max(np.abs(rec - s)) < 1e-10 * (1 + np.abs(s).max())
    assert np.max(np.abs(v.T @ v - np.eye(5))) < 1e-10
    assert np.all(np.diff(dec.eigenvalues) <= 0)


def test_spectral_rejects_nonfinite():
    with pytest.raises(InvalidInput):
        spectral_decompose(np.array([[np.inf, 0], [0, 1.0]]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-6, 1e6), rank=st.integers(0, 2))
def test_closed_form_2x2_eigh_matches_lapack(seed, scale, rank):
    rng = np.random.default_rng(seed)
    x = scale * rng.standard_normal((50, 2, rank))
    s = np.concatenate([x @ np.swapaxes(x, 1, 2), scale * np.eye(2)[None]])
    lam, v = _eigh(s)
    ref, _ = np.linalg.eigh(s)
    tol = 1e-14 * (scale ** 2 * 4 + scale)
    assert np.all(np.abs(lam - ref) <= tol)
    assert np.all(np.abs((v * lam[:, None, :]) @ np.swapaxes(v, 1, 2) - s) <= 4 * tol)
    assert np.all(np.abs(np.swapaxes(v, 1, 2) @ v - np.eye(2)) <= 1e-14)
    assert np.all(np.diff(lam, axis=-1) >= 0)


def test_psd_power_examples():
    assert np.allclose(psd_power(np.eye(3), 0.5), np.eye(3))
    assert np.allclose(psd_power(np.diag([4.0, 9.0]), 0.5), np.diag([2.0, 3.0]))
    assert np.allclose(psd_power(np.diag([1.0, 0.0]), -1), np.diag([1.0, 0.0]))


def test_psd_power_identity_power():
    s = random_psd(np.random.default_rng(1), 4)
    assert np.max(np.abs(psd_power(s, 1, 0.0) - s)) < 1e-12 * (1 + np.abs(s).max())


def test_psd_power_pseudoinverse_matches_pinv():
    s = random_psd(np.random.default_rng(2), 5, rank=3)
    assert np.allclose(psd_power(s, -1), np.linalg.pinv(s, hermitian=True), atol=1e-8)


def test_psd_power_rejects_negative_fractional():
    with pytest.raises(NotPSD):
        psd_power(np.diag([1.0, -1.0]), 0.5)
    # integer powers of indefinite matrices are fine
    assert np.allclose(psd_power(np.diag([2.0, -1.0]), 2), np.diag([4.0, 1.0]))


def test_psd_power_bad_args():
    with pytest.raises(InvalidInput):
        psd_power(np.eye(2), np.inf)
    with pytest.raises(InvalidInput):
        psd_power(np.eye(2), 1.0, clip_tol=-1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6), scale=st.floats(1e-3, 1e3))
def test_sqrt_then_square_recovers(seed, d, scale):
    s = scale * random_psd(np.random.default_rng(seed), d)
    back = psd_power(psd_power(s, 0.5), 2, 0.0)
    assert np.max(np.abs(back - s)) <= 1e-8 * (1 + np.abs(s).max())


def test_regularized_control_examples():
    s = np.random.default_rng(0).standard_normal((3, 3))
    assert np.array_equal(regularized_control(s @ s.T, 0.0, 0.5), np.eye(3))
    assert np.allclose(regularized_control(np.zeros((2, 2)), 0.5, 0.1), 10 * np.eye(2))
    c = regularized_control(np.diag([1.0, 0.0]), 0.5, 0.1)
    # scalar oracle per eigenvalue: (1 + 0.01)^-1/2 and (0 + 0.01)^-1/2
    assert np.allclose(c, np.diag([0.9950371902099893, 10.0]), rtol=1e-12)


def test_regularized_control_alpha_one():
    sig = np.array([0.5, 2.0, 0.0])
    c = regularized_control(np.diag(sig), 1.0, 0.01)
    assert np.allclose(np.diag(c), 1.0 / (sig + 0.01))


def test_regularized_control_errors():
    with pytest.raises(InvalidInput):
        regularized_control(np.eye(2), 0.5, 0.0)
    with pytest.raises(InvalidInput):
        regularized_control(np.eye(2), 1.5, 0.1)
    with pytest.raises(NotPSD):
        regularized_control(np.diag([1.0, -1.0]), 0.5, 0.1)


def test_regularized_control_tiny_delta_no_overflow():
    # delta**(1/alpha) underflows for small alpha; result must stay finite
    c = regularized_control(np.diag([1.0, 0.0]), 0.1, 1e-3)
    assert np.all(np.isfinite(c))
    assert np.linalg.norm(c, 2) <= 1e3 * (1 + 1e-12)


def test_regularized_control_norm_bound_many():
    rng = np.random.default_rng(11)
    alphas = np.round(np.arange(0.1, 1.01, 0.1), 10)
    sigmas = []
    for i in range(1000):
        d = int(rng.integers(1, 5))
        sigmas.append(random_psd(rng, d, rank=int(rng.integers(0, d + 1))) * 10 ** rng.uniform(-4, 2))
    for i, s in enumerate(sigmas):
        alpha = alphas[i % len(alphas)]
        delta = 10 ** rng.uniform(-3, 0)
        c = regularized_control(s, alpha, delta)
        assert np.array_equal(c, c.T)
        lam = np.linalg.eigvalsh(c)
        assert lam.max() <= (1 / delta) * (1 + 1e-10)
        assert lam.min() > 0


def test_regularized_control_batched_matches_single():
    rng = np.random.default_rng(3)
    stack = np.stack([random_psd(rng, 3) for _ in range(5)])
    batched = regularized_control(stack, 0.5, 0.01)
    for k in range(5):
        assert np.allclose(batched[k], regularized_control(stack[k], 0.5, 0.01), atol=1e-13)


def test_extrapolation_identical_isotropic():
    c, d = extrapolation_control(np.eye(2), np.eye(2), 1e-9)
    assert np.allclose(c, np.eye(2)) and np.allclose(d, np.eye(2))
    c, d = extrapolation_control(np.eye(2), np.eye(2), 0.0, pseudoinverse=True)
    assert np.allclose(c, np.eye(2)) and np.allclose(d, np.eye(2))


def test_extrapolation_scalar_case():
    _, d = extrapolation_control(np.eye(2), 4 * np.eye(2), 1e-9)
    assert np.allclose(d, 0.5 * np.eye(2))


def test_extrapolation_commuting_diagonals():
    rng = np.random.default_rng(7)
    sig = rng.uniform(0.2, 3.0, 4)
    lam = rng.uniform(0.2, 3.0, 4)
    c, d = extrapolation_control(np.diag(sig), np.diag(lam), 1e-6)
    # scalar oracle: sigma^1/2 / (sigma lam)^1/2 and sigma^-1/2
    assert np.allclose(np.diag(d), np.sqrt(sig) / np.sqrt(sig * lam), atol=1e-4)
    assert np.allclose(np.diag(c), 1 / np.sqrt(sig), atol=1e-4)
    assert np.allclose(d, d.T)


def test_extrapolation_equal_inputs_converge():
    s = random_psd(np.random.default_rng(8), 3) + 0.1 * np.eye(3)
    c, d = extrapolation_control(s, s, 1e-7)
    assert np.allclose(c, d, atol=1e-5)


def test_extrapolation_noncommuting_is_nonsymmetric():
    s = np.array([[2.0, 0.5], [0.5, 1.0]])
    l = np.diag([1.0, 3.0])
    _, d = extrapolation_control(s, l, 1e-6)
    assert not np.allclose(d, d.T)
    # D S^{1/2} = S^{1/2} (S^{1/2} L S^{1/2})^{-1/2} S^{1/2} is symmetric
    root = psd_power(s, 0.5)
    m = d @ root
    assert np.allclose(m, m.T, atol=1e-6)


def test_extrapolation_dimension_mismatch():
    with pytest.raises(InvalidInput):
        extrapolation_control(np.eye(2), np.eye(3), 0.1)
