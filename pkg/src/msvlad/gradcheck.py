"""Finite-difference verification of every analytic gradient.

Central differences are the reference: they touch none of the backward
code, so agreement is evidence rather than tautology. Errors are reported
per parameter group as max absolute deviation over the scale of the
numeric gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netvlad, pooling
from .netvlad import VladParams
from .pooling import PoolingMode
from .rng import stream
from .tensor_io import FeatureMap
from .trainer import triplet_loss

TOLERANCES = {
    "netvlad_centers": 1e-5,
    "netvlad_weights": 1e-5,
    "netvlad_biases": 1e-5,
    "netvlad_columns": 1e-5,
    "triplet_grad_q": 1e-7,
    "triplet_grad_p": 1e-7,
    "triplet_grad_n": 1e-7,
    "pooling_backward": 1e-6,
}


def finite_difference(func, x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy()
    for i in range(base.size):
        probe = base.reshape(-1)
        original = probe[i]
        probe[i] = original + step
        upper = func(base)
        probe[i] = original - step
        lower = func(base)
        probe[i] = original
        flat[i] = (upper - lower) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(float(np.abs(n).max(initial=0.0)), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_netvlad(seed: int = 0, instances: int = 20, n: int = 7, d: int = 5,
                  k: int = 3, step: float = 1e-6) -> dict:
    """Gradients of a random linear functional of the descriptor.

    Instances alternate between the plain and power-normalized forward
    path so both backward branches are covered.
    """
    worst = {"netvlad_centers": 0.0, "netvlad_weights": 0.0,
             "netvlad_biases": 0.0, "netvlad_columns": 0.0}
    for i in range(instances):
        rng = stream(seed, f"gradcheck/netvlad/{i}")
        columns = rng.normal(size=(n, d))
        params = VladParams(
            rng.normal(size=(k, d)), rng.normal(size=(k, d)), 0.5 * rng.normal(size=k)
        )
        ghat = rng.normal(size=k * d)
        power_norm = i % 2 == 1

        desc, cache = netvlad.vlad_forward(columns, params, power_norm)
        grads, grad_columns = netvlad.vlad_backward(cache, params, ghat)

        def loss(centers, weights, biases, cols):
            p = VladParams(centers, weights, biases)
            return float(ghat @ netvlad.vlad_forward(cols, p, power_norm)[0].values)

        pieces = {
            "netvlad_centers": (
                grads.centers,
                finite_difference(
                    lambda c: loss(c, params.weights, params.biases, columns),
                    params.centers, step),
            ),
            "netvlad_weights": (
                grads.weights,
                finite_difference(
                    lambda w: loss(params.centers, w, params.biases, columns),
                    params.weights, step),
            ),
            "netvlad_biases": (
                grads.biases,
                finite_difference(
                    lambda b: loss(params.centers, params.weights, b, columns),
                    params.biases, step),
            ),
            "netvlad_columns": (
                grad_columns,
                finite_difference(
                    lambda c: loss(params.centers, params.weights, params.biases, c),
                    columns, step),
            ),
        }
        for name, (analytic, numeric) in pieces.items():
            worst[name] = max(worst[name], max_relative_error(analytic, numeric))
    return worst


def check_triplet_loss(seed: int = 0, instances: int = 20, dim: int = 32,
                       margin: float = 0.1, step: float = 1e-6) -> dict:
    """Gradients of the hinge loss, sampled away from the kink."""
    worst = {"triplet_grad_q": 0.0, "triplet_grad_p": 0.0, "triplet_grad_n": 0.0}
    for i in range(instances):
        rng = stream(seed, f"gradcheck/triplet/{i}")
        while True:
            q, p, n = rng.normal(size=(3, dim))
            hinge = margin + ((q - p) ** 2).sum() - ((q - n) ** 2).sum()
            if abs(hinge) > 1e-3:
                break

        def loss(qv, pv, nv):
            return triplet_loss(
                netvlad.Descriptor(qv), netvlad.Descriptor(pv), netvlad.Descriptor(nv), margin
            )[0]

        _, gq, gp, gn = triplet_loss(
            netvlad.Descriptor(q), netvlad.Descriptor(p), netvlad.Descriptor(n), margin
        )
        pieces = {
            "triplet_grad_q": (gq, finite_difference(lambda v: loss(v, p, n), q, step)),
            "triplet_grad_p": (gp, finite_difference(lambda v: loss(q, v, n), p, step)),
            "triplet_grad_n": (gn, finite_difference(lambda v: loss(q, p, v), n, step)),
        }
        for name, (analytic, numeric) in pieces.items():
            worst[name] = max(worst[name], max_relative_error(analytic, numeric))
    return worst


def _distinct_map(rng: np.random.Generator, h: int, w: int, c: int) -> FeatureMap:
    # Distinct entries with spacing well above the probe step keep the
    # per-window argmax stable under perturbation.
    values = np.linspace(0.0, 1.0, h * w * c)
    return FeatureMap(rng.permutation(values).reshape(h, w, c))


def check_pooling(seed: int = 0, instances: int = 6, step: float = 1e-5) -> dict:
    """Backward routing of multi-scale pooling vs finite differences."""
    worst = 0.0
    modes = list(PoolingMode)
    for i in range(instances):
        rng = stream(seed, f"gradcheck/pooling/{i}")
        h, w, c = rng.integers(3, 7), rng.integers(3, 7), rng.integers(1, 4)
        mode = modes[i % len(modes)]
        fmap = _distinct_map(rng, int(h), int(w), int(c))
        upstream = rng.normal(size=(pooling.column_count(mode, int(h), int(w)), int(c)))

        analytic = pooling.multiscale_backward(fmap, upstream, mode)

        def loss(values):
            cols = pooling.multiscale_columns(FeatureMap(values), mode)
            return float((upstream * cols.values).sum())

        numeric = finite_difference(loss, fmap.values, step)
        worst = max(worst, max_relative_error(analytic, numeric))
    return {"pooling_backward": worst}


@dataclass
class GradcheckReport:
    checks: dict
    tolerances: dict
    ok: bool


def run_all(seed: int = 0, netvlad_instances: int = 20, triplet_instances: int = 20,
            pooling_instances: int = 6) -> GradcheckReport:
    checks = {}
    checks.update(check_netvlad(seed, netvlad_instances))
    checks.update(check_triplet_loss(seed, triplet_instances))
    checks.update(check_pooling(seed, pooling_instances))
    ok = all(checks[name] < TOLERANCES[name] for name in checks)
    return GradcheckReport(checks, dict(TOLERANCES), ok)
