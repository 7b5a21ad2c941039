"""Hot numeric kernels for the mixture classifier.

Per-frame classification and every EM iteration funnel through two dense
loops: component log-densities over (samples x components x dims), and the
responsibility-weighted moment accumulation of the M step.  Both carry a
numba @njit implementation with a pure-numpy twin; set RHYME_MIMIC_NO_NUMBA=1
to force the numpy path (or run without numba installed).

benchmarks/bench_kernels.py compares the two backends.
"""
from __future__ import annotations

import math
import os

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)

_NUMBA_DISABLED = os.environ.get("RHYME_MIMIC_NO_NUMBA", "").strip() not in ("", "0")


def _np_component_log_densities_diag(x, means, variances):
    """log N(x_n; mu_k, diag(v_k)) for all n, k.

    x: (N, D), means: (K, D), variances: (K, D) all float64.  Returns (N, K).
    """
    diff = x[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    logdet = np.sum(np.log(variances), axis=1)
    return -0.5 * (x.shape[1] * _LOG_2PI + logdet[None, :] + quad)


def _np_weighted_moments_diag(x, resp):
    """Responsibility-weighted counts, means and (biased) variances.

    x: (N, D), resp: (N, K).  Returns nk (K,), means (K, D), variances (K, D);
    variances are unfloored, the caller applies its floor.
    """
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, 1e-300)
    means = (resp.T @ x) / safe[:, None]
    diff = x[:, None, :] - means[None, :, :]
    variances = np.einsum("nk,nkd->kd", resp, diff * diff) / safe[:, None]
    return nk, means, variances


try:
    if _NUMBA_DISABLED:
        raise ImportError("numba disabled via RHYME_MIMIC_NO_NUMBA")
    from numba import njit

    HAS_NUMBA = True

    @njit(cache=True)
    def _nb_component_log_densities_diag(x, means, variances):  # pragma: no cover - jitted
        n, d = x.shape
        k = means.shape[0]
        out = np.empty((n, k), dtype=np.float64)
        logdet = np.empty(k, dtype=np.float64)
        for j in range(k):
            acc = 0.0
            for m in range(d):
                acc += np.log(variances[j, m])
            logdet[j] = acc
        for i in range(n):
            for j in range(k):
                quad = 0.0
                for m in range(d):
                    delta = x[i, m] - means[j, m]
                    quad += delta * delta / variances[j, m]
                out[i, j] = -0.5 * (d * _LOG_2PI + logdet[j] + quad)
        return out

    @njit(cache=True)
    def _nb_weighted_moments_diag(x, resp):  # pragma: no cover - jitted
        n, d = x.shape
        k = resp.shape[1]
        nk = np.zeros(k, dtype=np.float64)
        means = np.zeros((k, d), dtype=np.float64)
        variances = np.zeros((k, d), dtype=np.float64)
        for i in range(n):
            for j in range(k):
                nk[j] += resp[i, j]
        for i in range(n):
            for j in range(k):
                r = resp[i, j]
                for m in range(d):
                    means[j, m] += r * x[i, m]
        for j in range(k):
            safe = nk[j] if nk[j] > 1e-300 else 1e-300
            for m in range(d):
                means[j, m] /= safe
        for i in range(n):
            for j in range(k):
                r = resp[i, j]
                for m in range(d):
                    delta = x[i, m] - means[j, m]
                    variances[j, m] += r * delta * delta
        for j in range(k):
            safe = nk[j] if nk[j] > 1e-300 else 1e-300
            for m in range(d):
                variances[j, m] /= safe
        return nk, means, variances

except ImportError:
    HAS_NUMBA = False
    _nb_component_log_densities_diag = None
    _nb_weighted_moments_diag = None


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if HAS_NUMBA else "numpy"


def implementations() -> dict:
    """Both backends' kernels, for equivalence tests and the benchmark."""
    impls = {
        "numpy": {
            "component_log_densities_diag": _np_component_log_densities_diag,
            "weighted_moments_diag": _np_weighted_moments_diag,
        }
    }
    if HAS_NUMBA:
        impls["numba"] = {
            "component_log_densities_diag": _nb_component_log_densities_diag,
            "weighted_moments_diag": _nb_weighted_moments_diag,
        }
    return impls


def component_log_densities_diag(x: np.ndarray, means: np.ndarray, variances: np.ndarray):
    x = np.ascontiguousarray(x, dtype=np.float64)
    means = np.ascontiguousarray(means, dtype=np.float64)
    variances = np.ascontiguousarray(variances, dtype=np.float64)
    if HAS_NUMBA:
        return _nb_component_log_densities_diag(x, means, variances)
    return _np_component_log_densities_diag(x, means, variances)


def weighted_moments_diag(x: np.ndarray, resp: np.ndarray):
    x = np.ascontiguousarray(x, dtype=np.float64)
    resp = np.ascontiguousarray(resp, dtype=np.float64)
    if HAS_NUMBA:
        return _nb_weighted_moments_diag(x, resp)
    return _np_weighted_moments_diag(x, resp)


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Stable log(sum(exp(row))) per row of a 2-D array."""
    peak = np.max(a, axis=1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    return (peak + np.log(np.sum(np.exp(a - peak), axis=1, keepdims=True))).ravel()
