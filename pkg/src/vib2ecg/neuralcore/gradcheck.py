import numpy as np

from .ops import weighted_sum
from .tensor import Tensor


def relative_error(analytic, numeric, atol=1e-6):
    denom = max(abs(analytic), abs(numeric), atol)
    return abs(analytic - numeric) / denom


def grad_check(network, x, eps=1e-6, n_samples=64, seed=0, atol=1e-6, wrt_input=False):
    """Worst relative error between backprop and central finite differences.

    ``network`` must expose ``parameters()`` and be callable on a Tensor,
    returning a Tensor. The scalar probed is ``sum(network(x) * r)`` with a
    fixed random ``r``, which keeps the objective smooth apart from the
    network's own kinks. ``n_samples`` scalar entries are drawn uniformly
    over all parameter elements (and the input when ``wrt_input``). Run it
    in float64; float32 finite differences are too noisy.
    """
    rng = np.random.default_rng(seed)
    params = list(network.parameters())
    xt = Tensor(np.array(x, copy=True), requires_grad=wrt_input)
    out = network(xt)
    probe = rng.standard_normal(out.shape).astype(out.data.dtype)

    for p in params:
        p.grad = None
    weighted_sum(out, probe).backward()

    targets = [(p.data, p.grad) for p in params]
    if wrt_input:
        targets.append((xt.data, xt.grad))
    sizes = np.array([t[0].size for t in targets])
    flat_ids = rng.choice(sizes.sum(), size=min(n_samples, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)

    def objective():
        return float(np.sum(network(Tensor(xt.data)).data.astype(np.float64) * probe))

    worst = 0.0
    for fid in flat_ids:
        which = int(np.searchsorted(bounds, fid, side="right"))
        offset = int(fid - (bounds[which - 1] if which else 0))
        data, grad = targets[which]
        flat = data.reshape(-1)
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[offset])
        orig = flat[offset]
        flat[offset] = orig + eps
        plus = objective()
        flat[offset] = orig - eps
        minus = objective()
        flat[offset] = orig
        numeric = (plus - minus) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric, atol))
    return worst
