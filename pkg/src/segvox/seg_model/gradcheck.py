"""Central finite-difference check of :func:`loss_and_gradients`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from segvox.seg_model.model import Batch, ModelParams, loss_and_gradients, relu_gates

# gradients smaller than this are compared on an absolute scale
ABS_FLOOR = 1e-6


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    n_checked: int
    n_kink: int


def relative_error(analytic, numeric, floor: float = ABS_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(params: ModelParams, batch: Batch, step: float = 1e-4,
                    seed: int | None = None, dropout_step: int = 0) -> list[TensorCheck]:
    """Compare analytic and finite-difference gradients element by element.

    Runs in float64 on a copy of ``params``. An element whose +/- ``step``
    stencil flips any ReLU gate straddles a kink, where a finite difference
    does not estimate the derivative; such elements are counted in
    ``n_kink`` and left out of ``max_rel_error``.
    """
    params = params.astype(np.float64)
    batch = Batch(batch.features.astype(np.float64), batch.lengths, batch.labels,
                  batch.mask.astype(np.float64))
    _, grads = loss_and_gradients(params, batch, seed=seed, step=dropout_step)
    base_gates = relu_gates(params, batch)
    results = []
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        numeric = np.empty(flat.size)
        kink = np.zeros(flat.size, dtype=bool)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp, _ = loss_and_gradients(params, batch, seed=seed, step=dropout_step)
            gp = relu_gates(params, batch)
            flat[i] = old - step
            lm, _ = loss_and_gradients(params, batch, seed=seed, step=dropout_step)
            gm = relu_gates(params, batch)
            flat[i] = old
            numeric[i] = (lp - lm) / (2 * step)
            kink[i] = not (np.array_equal(gp, base_gates) and np.array_equal(gm, base_gates))
        err = relative_error(grads[name].reshape(-1), numeric)[~kink]
        results.append(TensorCheck(name, float(err.max(initial=0.0)), int((~kink).sum()),
                                   int(kink.sum())))
    return results
