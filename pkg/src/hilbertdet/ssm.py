"""State-space machinery: ZOH discretization, recurrence, kernel, selective scan.

Two computation routes coexist. The time-invariant route (discretize_zoh,
ssm_recurrence, ssm_conv_kernel) operates on plain arrays and exists so the
two formulations can be checked against each other. The selective route
(selective_scan) is the production path: per-token parameters, recorded on the
gradient tape with a fused adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import ScanOrder, apply_scan, inverse_scan
from .nnops import seq_linear
from .tensor import NumericError, ShapeError, Tensor, _record, softplus_inverse

_PHI_TAYLOR_CUTOFF = 1e-8


def _phi(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with the analytic limit below the cutoff.

    expm1 keeps the exact branch accurate arbitrarily close to zero, so the
    1e-8 cutoff introduces no visible seam.
    """
    small = np.abs(z) < _PHI_TAYLOR_CUTOFF
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _phi_prime(z: np.ndarray, e: np.ndarray | None = None) -> np.ndarray:
    """d/dz of _phi.

    The exact form (e^z (z - 1) + 1) / z^2 cancels catastrophically near zero,
    so a three-term series takes over below 1e-3; both branches agree to about
    1e-9 at the boundary.
    """
    if e is None:
        e = np.exp(z)
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    exact = (e * (safe - 1.0) + 1.0) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0 + z * z / 8.0, exact)


# ---------------------------------------------------------------------------
# time-invariant route (arrays in, arrays out)


def discretize_zoh(delta, a, b):
    """Zero-order-hold discretization for a diagonal evolution matrix.

    delta, a, b broadcast elementwise; a holds the diagonal entries. Returns
    (abar, bbar) with abar = exp(delta a) and
    bbar = (delta a)^-1 (exp(delta a) - 1) delta b, switching to the limit
    delta b when |delta a| is below the Taylor cutoff.
    """
    delta = np.asarray(delta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("discretize_zoh requires strictly positive timescales")
    z = delta * a
    abar = np.exp(z)
    bbar = _phi(z) * delta * b
    return abar, bbar


def ssm_recurrence(abar, bbar, c, u):
    """Run h(t) = abar h(t-1) + bbar u(t), y(t) = c . h(t) from h(0) = 0.

    Parameters may be constant (N,) vectors or per-token (L, N) sequences.
    u is a length-L input signal.
    """
    u = np.asarray(u, dtype=np.float64)
    abar = np.asarray(abar, dtype=np.float64)
    bbar = np.asarray(bbar, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    L = u.shape[0]
    for name, p in (("abar", abar), ("bbar", bbar), ("c", c)):
        if p.ndim == 2 and p.shape[0] != L:
            raise ShapeError(f"{name} has {p.shape[0]} steps but u has {L}")
    at = abar if abar.ndim == 2 else np.broadcast_to(abar, (L,) + abar.shape)
    bt = bbar if bbar.ndim == 2 else np.broadcast_to(bbar, (L,) + bbar.shape)
    ct = c if c.ndim == 2 else np.broadcast_to(c, (L,) + c.shape)
    h = np.zeros(at.shape[1], dtype=np.float64)
    y = np.empty(L, dtype=np.float64)
    for t in range(L):
        h = at[t] * h + bt[t] * u[t]
        y[t] = ct[t] @ h
    return y


def ssm_conv_kernel(abar, bbar, c, L: int) -> np.ndarray:
    """Global convolution kernel (c bbar, c abar bbar, ..., c abar^(L-1) bbar).

    Only valid for time-invariant parameters; per-token parameter sequences
    are rejected because the kernel form has no meaning for them.
    """
    abar = np.asarray(abar, dtype=np.float64)
    bbar = np.asarray(bbar, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if abar.ndim != 1 or bbar.ndim != 1 or c.ndim != 1:
        raise ShapeError(
            "ssm_conv_kernel is defined for time-invariant (N,) parameters; "
            "per-token parameters must use the recurrence"
        )
    powers = abar[None, :] ** np.arange(L, dtype=np.float64)[:, None]
    return (powers * (c * bbar)[None, :]).sum(axis=1)


def apply_kernel(kernel: np.ndarray, u) -> np.ndarray:
    """Causal convolution of u with the global kernel."""
    u = np.asarray(u, dtype=np.float64)
    L = u.shape[0]
    if kernel.shape[0] != L:
        raise ShapeError(f"kernel length {kernel.shape[0]} does not match signal {L}")
    return np.convolve(u, kernel)[:L]


# ---------------------------------------------------------------------------
# selective route


@dataclass
class SSMParams:
    """Per-direction selective-scan parameters.

    a_log parameterizes the diagonal evolution as a = -exp(a_log), so the
    continuous system is structurally stable; delta goes through softplus so
    timescales stay positive.
    """

    a_log: Tensor      # (D, N)
    delta_w: Tensor    # (D, D)
    delta_b: Tensor    # (D,)
    b_w: Tensor        # (D, N)
    b_b: Tensor        # (N,)
    c_w: Tensor        # (D, N)
    c_b: Tensor        # (N,)

    @property
    def channels(self) -> int:
        return self.a_log.data.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.data.shape[1]

    @classmethod
    def create(cls, channels: int, state_dim: int, rng: np.random.Generator) -> "SSMParams":
        a_log = np.tile(np.log(np.arange(1, state_dim + 1, dtype=np.float64)),
                        (channels, 1))
        bound = 1.0 / np.sqrt(channels)
        delta_w = rng.uniform(-bound, bound, size=(channels, channels))
        # Bias chosen so initial timescales land in [0.01, 0.1].
        delta_b = softplus_inverse(rng.uniform(0.01, 0.1, size=channels))
        b_w = rng.uniform(-bound, bound, size=(channels, state_dim))
        c_w = rng.uniform(-bound, bound, size=(channels, state_dim))
        zeros = np.zeros(state_dim)
        return cls(
            a_log=Tensor(a_log, requires_grad=True),
            delta_w=Tensor(delta_w, requires_grad=True),
            delta_b=Tensor(delta_b, requires_grad=True),
            b_w=Tensor(b_w, requires_grad=True),
            b_b=Tensor(zeros.copy(), requires_grad=True),
            c_w=Tensor(c_w, requires_grad=True),
            c_b=Tensor(zeros.copy(), requires_grad=True),
        )

    def named(self) -> dict[str, Tensor]:
        return {"a_log": self.a_log, "delta_w": self.delta_w, "delta_b": self.delta_b,
                "b_w": self.b_w, "b_b": self.b_b, "c_w": self.c_w, "c_b": self.c_b}


def _scan_core(u: Tensor, delta: Tensor, a: Tensor, bs: Tensor, cs: Tensor) -> Tensor:
    """Fused per-token recurrence over (B, D, L) with state width N.

    u, delta: (B, D, L); a: (D, N); bs, cs: (B, N, L). ZOH-discretizes per
    token, then runs h = abar h + bbar u and contracts with cs. The adjoint is
    hand-written (backpropagation through time) and checked against finite
    differences in the test suite.
    """
    B, D, L = u.data.shape
    N = a.data.shape[1]
    if delta.data.shape != (B, D, L):
        raise ShapeError(f"delta shape {delta.shape} does not match input {(B, D, L)}")
    if bs.data.shape != (B, N, L) or cs.data.shape != (B, N, L):
        raise ShapeError(
            f"token parameters must be (B, N, L) = {(B, N, L)}, "
            f"got {bs.shape} and {cs.shape}"
        )

    # Time-major (L, B, D, N) layout keeps every per-step slice contiguous.
    dT = np.ascontiguousarray(delta.data.transpose(2, 0, 1))[..., None]  # (L,B,D,1)
    z = dT * a.data[None, None, :, :]                                # (L, B, D, N)
    e = np.exp(z)
    phi = _phi(z)
    bsT = np.ascontiguousarray(bs.data.transpose(2, 0, 1))[:, :, None, :]  # (L,B,1,N)
    bbar = phi * dT * bsT
    uT = np.ascontiguousarray(u.data.transpose(2, 0, 1))[..., None]  # (L, B, D, 1)
    x_in = bbar * uT

    h_all = np.empty_like(x_in)
    h = np.zeros((B, D, N), dtype=np.float64)
    for t in range(L):
        h = e[t] * h + x_in[t]
        h_all[t] = h
    csT = np.ascontiguousarray(cs.data.transpose(2, 0, 1))[:, :, None, :]  # (L,B,1,N)
    y = (h_all * csT).sum(axis=3).transpose(1, 2, 0)                 # (B, D, L)

    def bwd(g):
        gT = np.ascontiguousarray(g.transpose(2, 0, 1))[..., None]   # (L, B, D, 1)
        dcs = (h_all * gT).sum(axis=2)                               # (L, B, N)
        dh_direct = gT * csT
        dh_all = np.empty_like(dh_direct)
        carry = np.zeros((B, D, N), dtype=np.float64)
        for t in range(L - 1, -1, -1):
            carry = dh_direct[t] + carry
            dh_all[t] = carry
            carry = carry * e[t]
        de = np.empty_like(dh_all)
        de[0] = 0.0
        np.multiply(dh_all[1:], h_all[:-1], out=de[1:])
        du = (dh_all * bbar).sum(axis=3)                             # (L, B, D)
        dbbar = dh_all * uT
        dphi = dbbar * (dT * bsT)
        dz = de * e
        dz += dphi * _phi_prime(z, e)
        ddelta = (dz * a.data[None, None, :, :]).sum(axis=3)
        ddelta += (dbbar * (phi * bsT)).sum(axis=3)
        dbs = (dbbar * (phi * dT)).sum(axis=2)                       # (L, B, N)
        da = (dz * dT).sum(axis=(0, 1))
        return (du.transpose(1, 2, 0), ddelta.transpose(1, 2, 0), da,
                dbs.transpose(1, 2, 0), dcs.transpose(1, 2, 0))

    return _record(y, (u, delta, a, bs, cs), bwd)


def selective_scan(x: Tensor, params: SSMParams) -> Tensor:
    """Input-dependent state-space scan over a (B, D, L) token sequence.

    Timescale, input and output projections are computed per token from x;
    the evolution matrix is shared. Output shape equals input shape. With the
    projections frozen to constants this reduces exactly to ssm_recurrence.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"selective_scan expects (B, D, L), got {x.shape}")
    if x.data.shape[1] != params.channels:
        raise ShapeError(
            f"input has {x.data.shape[1]} channels, parameters expect {params.channels}"
        )
    delta = seq_linear(x, params.delta_w, params.delta_b).softplus()
    bs = seq_linear(x, params.b_w, params.b_b)
    cs = seq_linear(x, params.c_w, params.c_b)
    for name, t in (("delta", delta), ("B", bs), ("C", cs)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite values in the {name} projection")
    a = -params.a_log.exp()
    return _scan_core(x, delta, a, bs, cs)


def ss2d(x: Tensor, scan: ScanOrder, params: list[SSMParams],
         scan_fn=selective_scan) -> Tensor:
    """Multi-directional 2D state-space mixing.

    Three steps per direction: serialize the grid along the path, run an
    independent selective scan with that direction's parameters, and place the
    result back on the grid. Directions merge by summation, so the output
    shape equals the input shape for every variant.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"ss2d expects a rank-4 tensor, got {x.shape}")
    B, C, H, W = x.data.shape
    if (H, W) != (scan.height, scan.width):
        raise ShapeError(
            f"scan order built for {scan.height}x{scan.width} cannot serve {H}x{W}"
        )
    if len(params) != scan.n_paths:
        raise ShapeError(
            f"{scan.variant} has {scan.n_paths} paths but {len(params)} "
            "parameter sets were provided"
        )
    out = None
    for path, p in zip(scan.paths, params):
        seq = apply_scan(x, path)
        mixed = scan_fn(seq, p)
        back = inverse_scan(mixed, path, H, W)
        out = back if out is None else out + back
    return out
