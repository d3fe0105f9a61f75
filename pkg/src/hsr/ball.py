"""Gyrovector arithmetic on the Poincare ball of curvature c.

Points live in the open ball {x : c * ||x||^2 < 1} of radius 1/sqrt(c).
All functions are pure, operate on float64 arrays along the last axis,
and accept arbitrary leading (batch) dimensions.  Every ball-valued
result is clipped back to norm (1 - BALL_EPS) / sqrt(c) so downstream
atanh calls stay inside their domain.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

# Stability margins (64-bit). MIN_NORM guards divisions by vector norms;
# ATANH_MAX keeps atanh finite; TANH_BOUND keeps tanh away from +-1 exactly.
BALL_EPS = 1e-5
MIN_NORM = 1e-15
ATANH_MAX = 1.0 - 1e-15
TANH_BOUND = 15.0


def _as64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def tanh(x: np.ndarray) -> np.ndarray:
    """tanh with the argument clamped to [-TANH_BOUND, TANH_BOUND]."""
    return np.tanh(np.clip(x, -TANH_BOUND, TANH_BOUND))


def atanh(x: np.ndarray) -> np.ndarray:
    """atanh with the argument clamped to [0, ATANH_MAX] (norms are >= 0)."""
    return np.arctanh(np.clip(x, 0.0, ATANH_MAX))


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1, keepdims=True)


def _check_dims(x: np.ndarray, y: np.ndarray, op: str) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"{op}: dimension mismatch ({x.shape[-1]} vs {y.shape[-1]})")


def project(x, c: float, eps: float = BALL_EPS) -> np.ndarray:
    """Clip x to the stability shell of the curvature-c ball.

    Points with c * ||x||^2 >= (1 - eps)^2 are rescaled to norm
    (1 - eps) / sqrt(c); interior points pass through unchanged.
    """
    x = _as64(x)
    if not np.isfinite(x).all():
        raise NumericError("project: non-finite input")
    max_norm = (1.0 - eps) / np.sqrt(c)
    norm = np.maximum(_norm(x), MIN_NORM)
    return np.where(norm >= max_norm, x * (max_norm / norm), x)


def in_ball(x, c: float) -> bool:
    """True when every point satisfies the strict ball bound c * ||x||^2 < 1."""
    x = _as64(x)
    return bool(np.all(c * np.sum(x * x, axis=-1) < 1.0))


def conformal_factor(x, c: float) -> np.ndarray:
    """lambda_x = 2 / (1 - c * ||x||^2), shape (..., 1)."""
    x = _as64(x)
    return 2.0 / np.maximum(1.0 - c * np.sum(x * x, axis=-1, keepdims=True), MIN_NORM)


def mobius_add(x, y, c: float) -> np.ndarray:
    """Mobius addition x (+)_c y.

        ((1 + 2c<x,y> + c||y||^2) x + (1 - c||x||^2) y)
        / (1 + 2c<x,y> + c^2 ||x||^2 ||y||^2)

    Non-commutative and non-associative.
    """
    x, y = _as64(x), _as64(y)
    _check_dims(x, y, "mobius_add")
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    denom = np.maximum(1.0 + 2.0 * c * xy + c * c * x2 * y2, MIN_NORM)
    return project(num / denom, c)


def mobius_scalar(r: float, x, c: float) -> np.ndarray:
    """Mobius scalar multiplication r (x)_c x.

        tanh(r * atanh(sqrt(c) ||x||)) * x / (sqrt(c) ||x||)

    with r (x)_c 0 = 0.
    """
    x = _as64(x)
    sc = np.sqrt(c)
    norm = _norm(x)
    safe = np.maximum(norm, MIN_NORM)
    scaled = tanh(r * atanh(sc * safe)) / (sc * safe)
    return project(np.where(norm > MIN_NORM, scaled * x, np.zeros_like(x)), c)


def mobius_matvec(mat, x, c: float) -> np.ndarray:
    """Mobius matrix-vector multiplication M (x)_c x for M of shape (d_out, d_in).

        tanh((||Mx|| / ||x||) * atanh(sqrt(c) ||x||)) * Mx / (sqrt(c) ||Mx||)

    Returns the origin of the output ball when Mx = 0 (in particular for x = 0).
    """
    mat, x = _as64(mat), _as64(x)
    if mat.shape[-1] != x.shape[-1]:
        raise ValueError(f"mobius_matvec: matrix columns {mat.shape[-1]} != point dim {x.shape[-1]}")
    mx = x @ mat.T
    sc = np.sqrt(c)
    xn = np.maximum(_norm(x), MIN_NORM)
    mxn = _norm(mx)
    safe_mxn = np.maximum(mxn, MIN_NORM)
    scaled = tanh((safe_mxn / xn) * atanh(sc * xn)) / (sc * safe_mxn)
    return project(np.where(mxn > MIN_NORM, scaled * mx, np.zeros_like(mx)), c)


def exp0(v, c: float) -> np.ndarray:
    """Exponential map at the origin: tanh(sqrt(c) ||v||) * v / (sqrt(c) ||v||)."""
    v = _as64(v)
    sc = np.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    scaled = tanh(sc * safe) / (sc * safe)
    return project(np.where(norm > MIN_NORM, scaled * v, v), c)


def log0(x, c: float) -> np.ndarray:
    """Logarithmic map at the origin: atanh(sqrt(c) ||x||) * x / (sqrt(c) ||x||)."""
    x = _as64(x)
    sc = np.sqrt(c)
    norm = _norm(x)
    safe = np.maximum(norm, MIN_NORM)
    scaled = atanh(sc * safe) / (sc * safe)
    return np.where(norm > MIN_NORM, scaled * x, x)


def exp_at(x, v, c: float) -> np.ndarray:
    """Exponential map at base point x:

        x (+)_c ( tanh(sqrt(c) lambda_x ||v|| / 2) * v / (sqrt(c) ||v||) )
    """
    x, v = _as64(x), _as64(v)
    _check_dims(x, v, "exp_at")
    sc = np.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    lam = conformal_factor(x, c)
    second = tanh(sc * lam * safe / 2.0) / (sc * safe) * v
    second = np.where(norm > MIN_NORM, second, np.zeros_like(v))
    return mobius_add(x, second, c)


def log_at(x, y, c: float) -> np.ndarray:
    """Logarithmic map at base point x:

        (2 / (sqrt(c) lambda_x)) * atanh(sqrt(c) ||-x (+)_c y||) * unit(-x (+)_c y)
    """
    x, y = _as64(x), _as64(y)
    _check_dims(x, y, "log_at")
    sc = np.sqrt(c)
    w = mobius_add(-x, y, c)
    norm = _norm(w)
    safe = np.maximum(norm, MIN_NORM)
    lam = conformal_factor(x, c)
    scaled = (2.0 / (sc * lam)) * atanh(sc * safe) / safe
    return np.where(norm > MIN_NORM, scaled * w, np.zeros_like(w))


def dist(x, y, c: float) -> np.ndarray:
    """Geodesic distance (2 / sqrt(c)) * atanh(sqrt(c) ||-x (+)_c y||), shape (...,)."""
    x, y = _as64(x), _as64(y)
    _check_dims(x, y, "dist")
    sc = np.sqrt(c)
    norm = _norm(mobius_add(-x, y, c))
    return np.squeeze(2.0 / sc * atanh(sc * norm), axis=-1)


def dist0(x, c: float) -> np.ndarray:
    """Geodesic distance to the origin: (2 / sqrt(c)) * atanh(sqrt(c) ||x||)."""
    x = _as64(x)
    sc = np.sqrt(c)
    return np.squeeze(2.0 / sc * atanh(sc * _norm(x)), axis=-1)
