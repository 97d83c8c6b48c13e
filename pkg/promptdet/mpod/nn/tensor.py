"""
Dense float64 tensors with reverse-mode differentiation.

Every operation returns a new `Tensor`; when any operand requires grad the result
records its operands and a backward closure mapping the output gradient onto
gradients of the operands.  `Tensor.backward` walks this tape in reverse
topological order and accumulates gradients into the leaves.
"""
import logging
from contextlib import contextmanager
from numbers import Number

import numpy as np

from ..errs import DimensionError

log = logging.getLogger(__name__)

_GRAD = {'enabled': True}


@contextmanager
def no_grad():
    '''disable recording of the tape within the context'''
    prev = _GRAD['enabled']
    _GRAD['enabled'] = False
    try:
        yield
    finally:
        _GRAD['enabled'] = prev


def grad_enabled():
    return _GRAD['enabled']


class Tensor:
    """n-dimensional float64 value with an optional gradient"""
    __array_ufunc__ = None
    __slots__ = ('data', 'grad', 'requires_grad', '_parents', '_backward', 'name')

    def __init__(self, data, requires_grad=False, name=''):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        '''flat row-major view of the values'''
        return self.data.reshape(-1)

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        name = f", name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{name})"

    def __len__(self):
        return self.data.shape[0]

    # ------------------------------------------------------------------
    def backward(self, grad=None):
        '''
        Back-propagate `grad` (ones for a scalar when not given) through the tape
        and accumulate the result into `.grad` of all leaves requiring grad.
        '''
        if not self.requires_grad:
            raise RuntimeError('tensor does not require grad')
        if grad is None:
            if self.data.size != 1:
                raise DimensionError('backward without grad needs a scalar output')
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in _toposort(self):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # > arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _toposort(root):
    '''nodes reachable from `root` through grad-requiring parents, outputs first'''
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    '''wrap an op result, recording the tape entry when needed'''
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad, out.requires_grad, out._parents, out._backward, out.name = None, False, (), None, ''
    if _GRAD['enabled'] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    '''sum `g` over axes that were broadcast to reach its shape from `shape`'''
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _bshape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f'{op}: shapes {a.shape} and {b.shape} do not broadcast') from None


# ======================================================================
# elementwise binary
# ----------------------------------------------------------------------


def add(a, b):
    a, b = astensor(a), astensor(b)
    _bshape(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = astensor(a), astensor(b)
    _bshape(a, b, 'sub')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = astensor(a), astensor(b)
    _bshape(a, b, 'mul')

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = astensor(a), astensor(b)
    _bshape(a, b, 'div')
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward)


def maximum(a, b):
    '''elementwise maximum; on ties the gradient goes to `a`'''
    a, b = astensor(a), astensor(b)
    _bshape(a, b, 'maximum')
    pick = a.data >= b.data

    def backward(g):
        return _unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)

    return _make(np.where(pick, a.data, b.data), (a, b), backward)


def minimum(a, b):
    '''elementwise minimum; on ties the gradient goes to `a`'''
    a, b = astensor(a), astensor(b)
    _bshape(a, b, 'minimum')
    pick = a.data <= b.data

    def backward(g):
        return _unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)

    return _make(np.where(pick, a.data, b.data), (a, b), backward)


def power(x, p):
    if not isinstance(p, Number):
        raise TypeError('only scalar exponents are supported')
    x = astensor(x)

    def backward(g):
        return (g * p * x.data**(p - 1),)

    return _make(x.data**p, (x,), backward)


# ======================================================================
# elementwise unary
# ----------------------------------------------------------------------


def exp(x):
    x = astensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    x = astensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    x = astensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,))


def tanh(x):
    x = astensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1 - out**2),))


def sigmoid(x):
    x = astensor(x)
    # > split by sign so that exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1 / (1+z), z / (1+z))
    return _make(out, (x,), lambda g: (g * out * (1-out),))


def relu(x):
    x = astensor(x)
    msk = x.data > 0
    return _make(x.data * msk, (x,), lambda g: (g * msk,))


_GELU_C = np.sqrt(2 / np.pi)


def gelu(x):
    '''tanh approximation of the Gaussian error linear unit'''
    x = astensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1+t)

    def backward(g):
        du = _GELU_C * (1 + 3*0.044715 * x.data**2)
        return (g * (0.5 * (1+t) + 0.5 * x.data * (1 - t**2) * du),)

    return _make(out, (x,), backward)


def absolute(x):
    x = astensor(x)
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,))


def clip(x, lo=None, hi=None):
    '''clamp values; the gradient is zero where the clamp is active'''
    x = astensor(x)
    out = np.clip(x.data, lo, hi)
    msk = out == x.data
    return _make(out, (x,), lambda g: (g * msk,))


# ======================================================================
# reductions
# ----------------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x, axis=None, keepdims=False):
    x = astensor(x)

    def backward(g):
        return (np.array(_expand(g, x.shape, axis, keepdims)),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = astensor(x)
    if axis is None:
        n = x.data.size
    else:
        axs = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axs]))

    def backward(g):
        return (np.array(_expand(g, x.shape, axis, keepdims)) / n,)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


def amax(x, axis=-1):
    '''maximum along one axis; the gradient flows to the first maximal entry'''
    x = astensor(x)
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(np.squeeze(out, axis=axis), (x,), backward)


# ======================================================================
# shape ops
# ----------------------------------------------------------------------


def reshape(x, shape):
    x = astensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f'cannot reshape {x.shape} into {shape}') from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = astensor(x)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def _basic_index(idx):
    idx = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis
               for i in idx)


def getitem(x, idx):
    x = astensor(x)
    basic = _basic_index(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), backward)


def concat(xs, axis=0):
    xs = [astensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise DimensionError('concat: shapes ' + ', '.join(str(x.shape) for x in xs) +
                             f' do not agree off axis {axis}') from None
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, xs, backward)


def stack(xs, axis=0):
    xs = [astensor(x) for x in xs]
    return concat([reshape(x, x.shape[:axis] + (1,) + x.shape[axis:]) for x in xs], axis=axis)


# ======================================================================
# linear algebra
# ----------------------------------------------------------------------


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f'matmul needs operands of rank >= 2, got {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f'matmul: axis -1 of {a.shape} ({a.shape[-1]}) does not match'
                             f' axis -2 of {b.shape} ({b.shape[-2]})')

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward)


# ======================================================================
# fused normalisations
# ----------------------------------------------------------------------


def softmax(x, axis=-1):
    '''max-subtracted softmax along `axis`'''
    x = astensor(x)
    if x.shape[axis] < 1:
        raise DimensionError(f'softmax over an empty axis {axis} of {x.shape}')
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g*out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = astensor(x)
    if x.shape[axis] < 1:
        raise DimensionError(f'log_softmax over an empty axis {axis} of {x.shape}')
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    '''
    Normalise the last axis to zero mean and unit variance, then scale and shift.
    Rows of constant value normalise to zero, so the output is `beta`.
    '''
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f'layer_norm: width {d} of {x.shape} vs gamma {gamma.shape},'
                             f' beta {beta.shape}')
    xc = x.data - x.data.mean(axis=-1, keepdims=True)
    flat = np.ptp(x.data, axis=-1, keepdims=True) == 0
    xc = np.where(flat, 0.0, xc)
    var = (xc**2).mean(axis=-1, keepdims=True)
    rstd = 1 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        gh = g * gamma.data
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) -
                     xhat * (gh*xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g*xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (x, gamma, beta), backward)


def l2_normalize(x, axis=-1, eps=1e-12):
    '''x / max(||x||, eps) along `axis`'''
    x = astensor(x)
    nrm = np.sqrt((x.data**2).sum(axis=axis, keepdims=True))
    den = np.maximum(nrm, eps)
    out = x.data / den
    live = nrm > eps

    def backward(g):
        proj = np.where(live, (g*out).sum(axis=axis, keepdims=True), 0.0)
        return ((g - out*proj) / den,)

    return _make(out, (x,), backward)


# ======================================================================
# patches for convolutions
# ----------------------------------------------------------------------


def im2col(x, k=3, stride=1, pad=1):
    '''
    Gather k x k patches of an (H, W, C) map into rows of shape (k*k*C,),
    giving an (Ho*Wo, k*k*C) matrix; padding is zero.
    '''
    x = astensor(x)
    if x.ndim != 3:
        raise DimensionError(f'im2col expects (H, W, C), got {x.shape}')
    H, W, C = x.shape
    Ho = (H + 2*pad - k) // stride + 1
    Wo = (W + 2*pad - k) // stride + 1
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    rows = (np.arange(Ho) * stride)[:, None, None, None] + np.arange(k)[None, None, :, None]
    cols = (np.arange(Wo) * stride)[None, :, None, None] + np.arange(k)[None, None, None, :]
    patches = xp[rows, cols] # (Ho, Wo, k, k, C)

    def backward(g):
        gp = np.zeros_like(xp)
        np.add.at(gp, (rows, cols), g.reshape(Ho, Wo, k, k, C))
        return (gp[pad:pad + H, pad:pad + W],)

    return _make(patches.reshape(Ho * Wo, k*k*C), (x,), backward)
