"""Named parameter store, its binary checkpoint format and the Adam optimiser."""
import logging
import struct
from os import fspath

import numpy as np

from .. import resources
from ..errs import DatasetError
from .tensor import Tensor

log = logging.getLogger(__name__)


class ParamStore:
    """
    Map of dotted paths (e.g. 'vpe.ffn.w1') to parameter tensors.
    Frozen paths are given as prefixes; iteration is sorted by path.
    """
    def __init__(self):
        self._p = {}
        self.frozen = set()

    def add(self, path, value):
        if path in self._p:
            raise KeyError(f'parameter {path} already exists')
        self._p[path] = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=path)
        return self._p[path]

    def __getitem__(self, path):
        return self._p[path]

    def __contains__(self, path):
        return path in self._p

    def __len__(self):
        return len(self._p)

    def __iter__(self):
        return iter(sorted(self._p))

    def items(self):
        return [(k, self._p[k]) for k in sorted(self._p)]

    def paths(self, prefix=''):
        return [k for k in sorted(self._p) if k.startswith(prefix)]

    def nparams(self):
        return sum(t.size for t in self._p.values())

    # ------------------------------------------------------------------
    def is_frozen(self, path):
        return any(path.startswith(f) for f in self.frozen)

    def freeze(self, prefixes):
        '''
        Set the frozen prefixes (replacing any previous set);
        frozen tensors stop requiring grad so the tape skips them.
        '''
        self.frozen = set(prefixes)
        for k, t in self._p.items():
            t.requires_grad = not self.is_frozen(k)
            t.grad = None

    def trainable(self):
        return [(k, t) for k, t in self.items() if not self.is_frozen(k)]

    def zero_grad(self):
        for t in self._p.values():
            t.grad = None

    def copy(self):
        out = ParamStore()
        for k, t in self.items():
            out.add(k, t.data)
        out.freeze(self.frozen)
        return out

    def state_bytes(self, prefix=''):
        '''raw little-endian payload of all parameters under `prefix` (for exact comparison)'''
        return b''.join(self._p[k].data.astype('<f8').tobytes() for k in self.paths(prefix))

    # ------------------------------------------------------------------
    def save(self, fpth):
        '''
        Write the store: magic, u32 version, u32 count, then per parameter
        u32 path length, UTF-8 path, u32 rank, u32 dims, little-endian f64 payload.
        '''
        items = self.items()
        with open(fspath(fpth), 'wb') as f:
            f.write(resources.PDPS_MAGIC)
            f.write(struct.pack('<II', resources.PDPS_VERSION, len(items)))
            for k, t in items:
                kb = k.encode('utf-8')
                f.write(struct.pack('<I', len(kb)))
                f.write(kb)
                f.write(struct.pack('<I', t.ndim))
                f.write(struct.pack(f'<{t.ndim}I', *t.shape))
                f.write(t.data.astype('<f8').tobytes())
        log.debug('saved %d parameters to %s', len(items), fpth)

    @classmethod
    def load(cls, fpth):
        with open(fspath(fpth), 'rb') as f:
            buf = f.read()
        if buf[:4] != resources.PDPS_MAGIC:
            raise DatasetError(f'{fpth}: not a parameter store (bad magic)')
        ver, cnt = struct.unpack_from('<II', buf, 4)
        if ver != resources.PDPS_VERSION:
            raise DatasetError(f'{fpth}: unsupported parameter store version {ver}')
        out = cls()
        off = 12
        try:
            for _ in range(cnt):
                n, = struct.unpack_from('<I', buf, off)
                off += 4
                path = buf[off:off + n].decode('utf-8')
                off += n
                rank, = struct.unpack_from('<I', buf, off)
                off += 4
                dims = struct.unpack_from(f'<{rank}I', buf, off)
                off += 4 * rank
                nb = 8 * int(np.prod(dims, dtype=np.int64))
                if off + nb > len(buf):
                    raise DatasetError(f'{fpth}: truncated payload of {path}')
                out.add(path, np.frombuffer(buf, '<f8', nb // 8, off).reshape(dims))
                off += nb
        except struct.error as exc:
            raise DatasetError(f'{fpth}: truncated parameter store ({exc})') from None
        if off != len(buf):
            raise DatasetError(f'{fpth}: {len(buf) - off} trailing bytes')
        return out


# ======================================================================
# initialisation helpers
# ----------------------------------------------------------------------


def xavier(rng, din, dout, gain=1.0):
    lim = gain * np.sqrt(6 / (din+dout))
    return rng.uniform(-lim, lim, size=(din, dout))


def init_linear(prm, path, din, dout, rng, gain=1.0):
    prm.add(path + '.w', xavier(rng, din, dout, gain))
    prm.add(path + '.b', np.zeros(dout))


def init_ln(prm, path, d):
    prm.add(path + '.g', np.ones(d))
    prm.add(path + '.b', np.zeros(d))


def init_ffn(prm, path, d, mult, rng):
    init_linear(prm, path + '.l1', d, mult * d, rng)
    init_linear(prm, path + '.l2', mult * d, d, rng)


def init_mha(prm, path, d, rng):
    for p in ('q', 'k', 'v', 'o'):
        init_linear(prm, f'{path}.{p}', d, d, rng)


# ======================================================================
# optimiser
# ----------------------------------------------------------------------


class Adam:
    """Adam over the trainable (non-frozen) parameters of a store"""
    def __init__(self, prm, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.prm = prm
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self):
        self.t += 1
        bc1 = 1 - self.b1**self.t
        bc2 = 1 - self.b2**self.t
        for k, p in self.prm.trainable():
            if p.grad is None:
                continue
            m = self.m.get(k, 0.0) * self.b1 + (1 - self.b1) * p.grad
            v = self.v.get(k, 0.0) * self.b2 + (1 - self.b2) * p.grad**2
            self.m[k], self.v[k] = m, v
            p.data -= self.lr * (m/bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(prm, max_norm):
    '''scale trainable gradients so that their global L2 norm is at most `max_norm`'''
    grads = [p.grad for _, p in prm.trainable() if p.grad is not None]
    total = float(np.sqrt(sum(float((g**2).sum()) for g in grads)))
    if max_norm and total > max_norm:
        scl = max_norm / (total+1e-12)
        for _, p in prm.trainable():
            if p.grad is not None:
                p.grad = p.grad * scl
    return total
