"""Differentiable geometry kernels used by the model's forward pass.

Each geometry exposes the same small surface over tape variables holding
row-batches of points (shape (n, d)):

  * to_tangent / from_tangent -- maps between the space and the shared
    tangent space at the origin (identity maps in the Euclidean twin),
  * linear -- the geometry's matrix-vector product,
  * pair_dist -- rowwise distance, shape (n, 1).

Everything is composed from autodiff primitives; the adjoints come for
free from the tape, matching the non-differentiable reference formulas
in `ball` (cross-checked by tests).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .ball import MIN_NORM


def _safe_row_norm(x: Var) -> Var:
    return ad.clip(ad.row_norm(x), MIN_NORM, None)


class Hyperbolic:
    """Poincare-ball kernels at curvature c > 0."""

    def __init__(self, c: float):
        if c <= 0:
            raise ValueError(f"curvature must be positive, got {c}")
        self.c = float(c)
        self.sqrt_c = float(np.sqrt(c))

    def to_tangent(self, x: Var) -> Var:
        """log0: atanh(sqrt(c) ||x||) * x / (sqrt(c) ||x||) per row."""
        sn = _safe_row_norm(x)
        arg = self.sqrt_c * sn
        return x * (ad.atanh(arg) / arg)

    def from_tangent(self, v: Var) -> Var:
        """exp0: tanh(sqrt(c) ||v||) * v / (sqrt(c) ||v||) per row."""
        sn = _safe_row_norm(v)
        arg = self.sqrt_c * sn
        return v * (ad.tanh(arg) / arg)

    def linear(self, x: Var, mat: Var) -> Var:
        """Mobius matrix-vector product of each row of x with mat (d_out, d_in)."""
        mx = ad.matmul_t(x, mat)
        xn = _safe_row_norm(x)
        mxn = _safe_row_norm(mx)
        scale = ad.tanh((mxn / xn) * ad.atanh(self.sqrt_c * xn)) / (self.sqrt_c * mxn)
        return mx * scale

    def add(self, x: Var, y: Var) -> Var:
        """Rowwise Mobius addition (formula-exact, no stability projection)."""
        c = self.c
        x2 = ad.row_sum(x * x)
        y2 = ad.row_sum(y * y)
        xy = ad.row_sum(x * y)
        num = (1.0 + (2.0 * c) * xy + c * y2) * x + (1.0 - c * x2) * y
        denom = ad.clip(1.0 + (2.0 * c) * xy + (c * c) * (x2 * y2), MIN_NORM, None)
        return num / denom

    def pair_dist(self, x: Var, y: Var) -> Var:
        """Rowwise geodesic distance (2 / sqrt(c)) * atanh(sqrt(c) ||-x (+) y||)."""
        w = self.add(-x, y)
        return (2.0 / self.sqrt_c) * ad.atanh(self.sqrt_c * ad.row_norm(w))


class Euclidean:
    """Flat-space twin: maps are identities, products and distances ordinary."""

    def to_tangent(self, x: Var) -> Var:
        return x

    def from_tangent(self, v: Var) -> Var:
        return v

    def linear(self, x: Var, mat: Var) -> Var:
        return ad.matmul_t(x, mat)

    def add(self, x: Var, y: Var) -> Var:
        return x + y

    def pair_dist(self, x: Var, y: Var) -> Var:
        return ad.row_norm(x - y)


def make_geometry(geometry: str, c: float):
    if geometry == "hyperbolic":
        return Hyperbolic(c)
    if geometry == "euclidean":
        return Euclidean()
    raise ValueError(f"unknown geometry {geometry!r}")
