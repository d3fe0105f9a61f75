"""Hyperbolic social recommender.

Poincare-ball gyrovector arithmetic, a tape-based reverse-mode autodiff
engine, attention-weighted social aggregation with a Euclidean twin,
joint recommendation + social-relation training under Riemannian SGD,
and CTR / top-K evaluation tooling.
"""

__version__ = "0.1.0"
