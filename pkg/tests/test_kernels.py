import math
import os
import subprocess
import sys

import numpy as np
import pytest

from rhyme_mimic import kernels


def random_mixture(rng, n=64, k=4, d=16):
    x = rng.normal(0, 3, (n, d))
    means = rng.normal(0, 3, (k, d))
    variances = rng.uniform(0.1, 4.0, (k, d))
    return x, means, variances


def test_diag_log_density_matches_scalar_formula(rng):
    x, means, variances = random_mixture(rng, n=8, k=3, d=4)
    out = kernels.component_log_densities_diag(x, means, variances)
    for i in range(8):
        for j in range(3):
            expected = sum(
                -0.5 * (math.log(2 * math.pi * variances[j, m]) + (x[i, m] - means[j, m]) ** 2 / variances[j, m])
                for m in range(4)
            )
            assert math.isclose(out[i, j], expected, rel_tol=0, abs_tol=1e-10)


def test_backends_agree(rng):
    impls = kernels.implementations()
    if "numba" not in impls:
        pytest.skip("numba backend not active")
    x, means, variances = random_mixture(rng)
    a = impls["numpy"]["component_log_densities_diag"](x, means, variances)
    b = impls["numba"]["component_log_densities_diag"](x, means, variances)
    np.testing.assert_allclose(a, b, atol=1e-10)

    resp = rng.uniform(0, 1, (x.shape[0], means.shape[0]))
    resp /= resp.sum(axis=1, keepdims=True)
    for got, want in zip(
        impls["numba"]["weighted_moments_diag"](x, resp),
        impls["numpy"]["weighted_moments_diag"](x, resp),
    ):
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_weighted_moments_one_hot_recovers_cluster_stats(rng):
    x = rng.normal(0, 1, (30, 5))
    resp = np.zeros((30, 2))
    resp[:20, 0] = 1.0
    resp[20:, 1] = 1.0
    nk, means, variances = kernels.weighted_moments_diag(x, resp)
    np.testing.assert_allclose(nk, [20, 10])
    np.testing.assert_allclose(means[0], x[:20].mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(variances[1], x[20:].var(axis=0), atol=1e-12)


def test_logsumexp_rows_stable():
    a = np.array([[1000.0, 1000.0], [-2000.0, -2000.0], [0.0, -np.inf]])
    out = kernels.logsumexp_rows(a)
    np.testing.assert_allclose(out[0], 1000.0 + math.log(2))
    np.testing.assert_allclose(out[1], -2000.0 + math.log(2))
    np.testing.assert_allclose(out[2], 0.0)
    assert np.all(np.isfinite(out))


def test_env_flag_forces_numpy_backend():
    env = dict(os.environ, RHYME_MIMIC_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from rhyme_mimic import kernels; print(kernels.backend())"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_numba_when_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        pytest.skip("numba not installed")
    if os.environ.get("RHYME_MIMIC_NO_NUMBA", "").strip() in ("", "0"):
        assert kernels.backend() == "numba"
