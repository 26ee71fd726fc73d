"""Shared oracles for the test suite."""

import numpy as np

from tf2dnn.adaptation import UbmModel
from tf2dnn.network import autoencoder_specs, backward, forward, init_params
from tf2dnn.numeric import Rng
from tf2dnn.regression_head import RegressionHead, accumulate_stats, augment, posterior
from tf2dnn.trainer import LatentFactors


def random_net(seed, input_dim=6, encoder=(4,), bottleneck=3, decoder=(4,), r1=2, r2=3, tf2_layers=None,
               dropout_p=0.0, stddev=0.5):
    specs = autoencoder_specs(input_dim, encoder, bottleneck, decoder,
                              tf2_layers=() if r1 == r2 == 0 else tf2_layers, dropout_p=dropout_p)
    params = init_params(specs, r1, r2, stddev, Rng(seed))
    rng = np.random.default_rng(seed)
    for l in range(params.n_layers):
        params.arrays[f"b{l}"] = rng.normal(scale=0.3, size=params.arrays[f"b{l}"].shape)
    return params


def frame_cost(params, x, z1, z2, masks=None):
    """Sum over frames of per-frame MSE (||out - x||^2 / D)."""
    out = forward(params, x, z1, z2, masks).output
    return float(np.sum((out - x) ** 2)) / x.shape[1]


def analytic_grads(params, x, z1, z2, masks=None):
    acts = forward(params, x, z1, z2, masks)
    return backward(params, acts, 2.0 * (acts.output - x) / x.shape[1])


def fd_max_error(params, x, z1, z2, masks=None, h=1e-5, floor=1.0):
    """Largest relative error (denominator max(floor, |analytic|, |numeric|))
    between analytic gradients and central differences of ``frame_cost``."""
    g = analytic_grads(params, x, z1, z2, masks)
    worst = 0.0

    def cost():
        return frame_cost(params, x, z1, z2, masks)

    for name, arr in params.arrays.items():
        flat = arr.reshape(-1)
        ana = g.params[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = cost()
            flat[i] = old - h
            down = cost()
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - ana[i]) / max(floor, abs(ana[i]), abs(num)))
    for z, dz in ((z1, g.dz1), (z2, g.dz2)):
        if z is None or z.shape[1] == 0:
            continue
        for t in range(z.shape[0]):
            for k in range(z.shape[1]):
                old = z[t, k]
                z[t, k] = old + h
                up = cost()
                z[t, k] = old - h
                down = cost()
                z[t, k] = old
                num = (up - down) / (2 * h)
                worst = max(worst, abs(num - dz[t, k]) / max(floor, abs(dz[t, k]), abs(num)))
    return worst


def brute_operating_points(tgt, non):
    """(p_miss, p_fa) at each distinct score and +inf, by direct counting."""
    thresholds = sorted(set(list(tgt) + list(non))) + [float("inf")]
    points = []
    for th in thresholds:
        miss = sum(1 for s in tgt if s < th) / len(tgt)
        fa = sum(1 for s in non if s >= th) / len(non)
        points.append((miss, fa))
    return points


def brute_eer(tgt, non):
    """Walk the operating points until P_miss first reaches P_fa and
    intersect the two error curves on that segment."""
    points = brute_operating_points(tgt, non)
    for i, (miss, fa) in enumerate(points):
        if miss >= fa:
            if miss == fa or i == 0:
                return (miss + fa) / 2
            m0, f0 = points[i - 1]
            # miss(s) = m0 + s*(miss-m0), fa(s) = f0 + s*(fa-f0); solve equal
            s = (f0 - m0) / ((miss - m0) - (fa - f0))
            return m0 + s * (miss - m0)
    raise AssertionError("error curves never cross")


def brute_min_dcf(tgt, non, c_miss, c_fa, p_target):
    best = min(c_miss * p_target * miss + c_fa * (1 - p_target) * fa for miss, fa in brute_operating_points(tgt, non))
    return best / min(c_miss * p_target, c_fa * (1 - p_target))


def stats_ubm(y, x, lam0=1.0, psi=None):
    """A UbmModel whose head and stats come straight from regressor rows."""
    stats = accumulate_stats(augment(y), x)
    psi = np.ones(x.shape[1]) if psi is None else psi
    head = RegressionHead(np.zeros((y.shape[1] + 1, x.shape[1])), psi, lam0)
    head = head.with_weights(posterior(stats, lam0, head.beta).mean)
    params = random_net(0, input_dim=x.shape[1], r1=0, r2=0)
    return UbmModel(params, head, stats, LatentFactors(np.zeros((0, 0)), np.zeros((0, 0))))
