"""Central finite-difference checks of the analytic gradients."""
import logging

import numpy as np

from . import tensor as T

log = logging.getLogger(__name__)


def _evaluate(f, prm):
    with T.no_grad():
        v = float(np.asarray(T.astensor(f(prm)).data).reshape(-1)[0])
    if not np.isfinite(v):
        raise ValueError(f'objective evaluated to a non-finite value ({v})')
    return v


def grad_errors(f, prm, eps=1e-3, n_samples=None, rng=None, paths=None):
    '''
    Relative gradient error per parameter path:
    max over checked entries of |analytic - numeric| / max(1, |numeric|)
    with the numeric gradient taken by central differences of step `eps`.

    Args:
      f: scalar objective taking the ParamStore and returning a Tensor.
      prm: the ParamStore; only trainable (unfrozen) paths are checked.
      n_samples: entries checked per path (all when None), drawn with `rng`.
      paths: restrict the check to these paths.
    '''
    if rng is None:
        rng = np.random.default_rng(0)
    prm.zero_grad()
    out = T.astensor(f(prm))
    if not np.all(np.isfinite(out.data)):
        raise ValueError('objective evaluated to a non-finite value')
    if out.requires_grad:
        out.backward()
    analytic = {
        k: (np.zeros(t.shape) if t.grad is None else t.grad.copy())
        for k, t in prm.trainable()}

    errs = {}
    for k in sorted(analytic):
        if paths is not None and k not in paths:
            continue
        t = prm[k]
        if n_samples is None or n_samples >= t.size:
            sel = np.arange(t.size)
        else:
            sel = np.sort(rng.choice(t.size, size=n_samples, replace=False))
        err = 0.0
        for i in sel:
            idx = np.unravel_index(i, t.shape)
            x0 = t.data[idx]
            t.data[idx] = x0 + eps
            fp = _evaluate(f, prm)
            t.data[idx] = x0 - eps
            fm = _evaluate(f, prm)
            t.data[idx] = x0
            num = (fp-fm) / (2*eps)
            err = max(err, abs(analytic[k][idx] - num) / max(1.0, abs(num)))
        errs[k] = err
        log.debug('%s: %d entries, max rel err %.3e', k, len(sel), err)
    prm.zero_grad()
    return errs


def finite_diff_check(f, prm, eps=1e-3, n_samples=None, rng=None):
    '''maximum relative gradient error over all unfrozen parameters'''
    errs = grad_errors(f, prm, eps=eps, n_samples=n_samples, rng=rng)
    return max(errs.values(), default=0.0)
