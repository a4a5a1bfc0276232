"""Central finite-difference verification of network gradients."""

from __future__ import annotations

import copy

import numpy as np

from .errors import NumericError, ParameterError
from .layers import Network


def finite_diff_check(
    net: Network, batch, labels, epsilon=1e-4, max_coords=500, seed=0
) -> float:
    """Compare analytic gradients against central finite differences.

    Every parameter coordinate is checked when the total count is at most
    ``max_coords``; otherwise a seeded random subset of that size is used.
    Returns the maximum relative error |a - b| / max(|a|, |b|, 1e-12).

    Requires float64 parameters; the dropout generator state is replayed
    before every forward pass so stochastic layers see identical masks, and
    batch-norm running statistics are restored afterwards.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ParameterError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    params = net.parameters()
    for _, _, arr in params:
        if arr.dtype != np.float64:
            raise ParameterError("finite-difference check requires float64 parameters")

    rng_state = copy.deepcopy(net.rng.bit_generator.state)
    stats_backup = [
        {k: v.copy() for k, v in layer.stats.items()} for layer in net.layers
    ]

    def run_loss():
        net.rng.bit_generator.state = copy.deepcopy(rng_state)
        net.forward(batch)
        loss = net.loss(labels)
        if not np.isfinite(loss):
            raise NumericError("non-finite loss during finite-difference check")
        return loss

    try:
        net.rng.bit_generator.state = copy.deepcopy(rng_state)
        net.forward(batch)
        _, _ = net.backward(labels)
        analytic = [(i, n, g.copy()) for i, n, g in net.gradients()]

        coords = []
        for slot, (_, _, arr) in enumerate(params):
            coords.extend((slot, flat) for flat in range(arr.size))
        if len(coords) > max_coords:
            pick = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
            coords = [coords[i] for i in pick]

        worst = 0.0
        for slot, flat in coords:
            arr = params[slot][2]
            orig = arr.flat[flat]
            arr.flat[flat] = orig + epsilon
            loss_plus = run_loss()
            arr.flat[flat] = orig - epsilon
            loss_minus = run_loss()
            arr.flat[flat] = orig
            fd = (loss_plus - loss_minus) / (2 * epsilon)
            an = analytic[slot][2].flat[flat]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
            worst = max(worst, rel)
        return worst
    finally:
        net.rng.bit_generator.state = rng_state
        for layer, backup in zip(net.layers, stats_backup):
            for k, v in backup.items():
                layer.stats[k] = v
