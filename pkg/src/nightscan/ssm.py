"""State-space machinery: ZOH discretization, the selective recurrence, and
an independent LTI convolution-kernel evaluator used as a cross-check oracle.

The continuous system

    h'(t) = a h(t) + b x(t)
    y(t)  = c h(t) + d x(t)

is discretized with the zero-order hold rule

    abar = exp(delta a)
    bbar = (delta a)^-1 (exp(delta a) - 1) delta b

and then evaluated as the recurrence h[k] = abar h[k-1] + bbar x[k],
y[k] = c . h[k] + d x[k], starting from h[-1] = 0.  When parameters are
step-invariant the same map is a causal convolution with kernel
(c bbar, c abar bbar, ..., c abar^(L-1) bbar) plus the d x skip;
``lti_kernel_scan`` evaluates that form independently so the two paths can
be checked against each other.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, _accumulate, _add_macs, _record, _unbroadcast

# Below this |delta * a| the (exp(u) - 1) / u factor switches to its Taylor
# series to avoid the removable singularity at u = 0.
ZOH_TAYLOR_THRESHOLD = 1e-4


def _phi(u):
    small = np.abs(u) < ZOH_TAYLOR_THRESHOLD
    u_safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 + u / 2.0 + (u * u) / 6.0, np.expm1(u_safe) / u_safe)


def _phi_prime(u):
    small = np.abs(u) < ZOH_TAYLOR_THRESHOLD
    u_safe = np.where(small, 1.0, u)
    exact = (u_safe * np.exp(u_safe) - np.expm1(u_safe)) / (u_safe * u_safe)
    return np.where(small, 0.5 + u / 3.0 + (u * u) / 8.0, exact)


def discretize(a, b, delta):
    """Zero-order-hold discretization; inputs broadcast elementwise.

    Returns (abar, bbar).  Requires delta > 0 everywhere.
    """
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if not isinstance(delta, Tensor):
        delta = Tensor(delta)
    if np.any(delta.data <= 0.0):
        raise ContractError("discretize requires delta > 0")

    ad, bd, dd = a.data, b.data, delta.data
    u = dd * ad
    abar_data = np.exp(u)
    phi = _phi(u)
    bbar_data = phi * dd * bd

    def bwd_abar(g):
        gu = g * abar_data
        _accumulate(a, _unbroadcast(gu * dd, ad.shape))
        _accumulate(delta, _unbroadcast(gu * ad, dd.shape))

    def bwd_bbar(g):
        _accumulate(b, _unbroadcast(g * phi * dd, bd.shape))
        gphi = g * dd * bd
        gu = gphi * _phi_prime(u)
        _accumulate(a, _unbroadcast(gu * dd, ad.shape))
        _accumulate(delta, _unbroadcast(g * phi * bd + gu * ad, dd.shape))

    abar = _record(abar_data, (a, delta), bwd_abar, "discretize.abar")
    bbar = _record(bbar_data, (a, b, delta), bwd_bbar, "discretize.bbar")
    return abar, bbar


def selective_scan(x, abar, bbar, c_seq, d_skip):
    """Sequential state-space recurrence along the last axis of ``x``.

    Shapes, with G any leading shape (e.g. (channels,) or (dirs, channels)):

        x      G + (L,)
        abar   G + (L, N)
        bbar   G + (L, N)
        c_seq  broadcastable to G + (L, N) (leading axes may be 1)
        d_skip broadcastable to G

    Returns y with the shape of ``x``.  h[-1] = 0.
    """
    lead = x.data.shape[:-1]
    L = x.data.shape[-1]
    n = abar.data.shape[-1]
    want = lead + (L, n)
    if abar.data.shape != want or bbar.data.shape != want:
        raise DimensionError(f"abar/bbar must be shaped {want}, got {abar.data.shape}, {bbar.data.shape}")
    if c_seq.data.ndim != len(want) or c_seq.data.shape[-2:] != (L, n):
        raise DimensionError(f"c_seq must end in (L, N)={L, n}, got {c_seq.data.shape}")
    for have, need in zip(c_seq.data.shape[:-2], lead):
        if have not in (1, need):
            raise DimensionError(f"c_seq leading dims {c_seq.data.shape[:-2]} do not broadcast to {lead}")

    xd = x.data
    ad, bd, cd = abar.data, bbar.data, c_seq.data
    dd = np.broadcast_to(np.asarray(d_skip.data), lead)

    h_all = np.empty(want, dtype=xd.dtype)
    y = np.empty_like(xd)
    h = np.zeros(lead + (n,), dtype=xd.dtype)
    for k in range(L):
        h = ad[..., k, :] * h + bd[..., k, :] * xd[..., k, None]
        h_all[..., k, :] = h
        y[..., k] = (h * cd[..., k, :]).sum(axis=-1) + dd * xd[..., k]
    _add_macs(int(np.prod(lead, dtype=np.int64)) * L * (3 * n + 1))

    def bwd(g):
        gx = np.empty_like(xd)
        ga = np.empty_like(ad)
        gb = np.empty_like(bd)
        gc = np.zeros_like(cd)
        dh = np.zeros(lead + (n,), dtype=xd.dtype)
        for k in range(L - 1, -1, -1):
            dh = dh + g[..., k, None] * cd[..., k, :]
            gc[..., k, :] += _unbroadcast(g[..., k, None] * h_all[..., k, :], cd[..., k, :].shape)
            h_prev = h_all[..., k - 1, :] if k > 0 else 0.0
            ga[..., k, :] = dh * h_prev
            gb[..., k, :] = dh * xd[..., k, None]
            gx[..., k] = (dh * bd[..., k, :]).sum(axis=-1) + g[..., k] * dd
            dh = dh * ad[..., k, :]
        _accumulate(x, gx)
        _accumulate(abar, ga)
        _accumulate(bbar, gb)
        _accumulate(c_seq, gc)
        _accumulate(d_skip, _unbroadcast((g * xd).sum(axis=-1), d_skip.data.shape))

    return _record(y, (x, abar, bbar, c_seq, d_skip), bwd, "selective_scan")


def lti_kernel_scan(x, abar, bbar, c, d):
    """Step-invariant evaluation through the explicit convolution kernel.

    Plain-numpy oracle, independent of the recurrence path.  Parameters must
    be step-invariant: abar, bbar, c are (N,) vectors and d a scalar; passing
    anything with a step axis is a contract violation.
    """
    x = np.asarray(x, dtype=np.float64)
    abar = np.asarray(abar, dtype=np.float64)
    bbar = np.asarray(bbar, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("lti_kernel_scan input must be a 1-D sequence")
    if abar.ndim != 1 or bbar.ndim != 1 or c.ndim != 1:
        raise ContractError("lti_kernel_scan requires step-invariant (N,) parameters")
    if not np.isscalar(d) and np.asarray(d).ndim != 0:
        raise ContractError("lti_kernel_scan requires a scalar skip term")
    L = x.shape[0]
    n = abar.shape[0]
    powers = abar[None, :] ** np.arange(L, dtype=np.float64)[:, None]
    kernel = (powers * (c * bbar)[None, :]).sum(axis=1)
    y = np.convolve(x, kernel)[:L] + float(d) * x
    return y


def stable_bound(abar, bbar, x_max):
    """Worst-case |h| bound for a contracting scan: |bbar| x_max / (1 - abar)."""
    abar = np.asarray(abar, dtype=np.float64)
    bbar = np.asarray(bbar, dtype=np.float64)
    if np.any(abar >= 1.0) or np.any(abar < 0.0):
        raise ContractError("stable_bound assumes abar in [0, 1)")
    return float((np.abs(bbar) * x_max / (1.0 - abar)).max())
