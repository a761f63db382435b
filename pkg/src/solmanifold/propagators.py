"""Wave propagators for radial data.

Free evolutions are computed by exact 1D d'Alembert transport on w = r*f
(odd extension through the origin), which removes numerical dispersion from
every secular-term computation.  The perturbed evolution for H = -Delta + V
is realized in the time domain by leapfrog on w; its spatial operator is the
same stencil the spectral module diagonalizes, so the discrete eigenpair
(k, g) is exact for the scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import soliton
from .grid import FOUR_PI, GridUsageError, RadialField, field_from_w, inner_product

__all__ = [
    "SpaceTimeField",
    "free_sine",
    "free_cosine",
    "free_sine_pair",
    "free_cosine_pair",
    "free_sine_traj",
    "free_cosine_traj",
    "free_duhamel",
    "evolve_linear_perturbed",
    "perturbed_sine_duhamel",
    "secular_decomposition_S",
    "secular_decomposition_C",
    "transport_energy",
]


class PropagatorError(RuntimeError):
    pass


@dataclass
class SpaceTimeField:
    """A radial field sampled on a uniform time grid t_m = m*dt.

    Trajectories that feed solvers (sources) must be sampled at the solver
    dt, which carries the unit-CFL constraint dt <= dr; that is enforced at
    the use sites so strided outputs (dt > dr) remain representable.
    """

    grid: object
    dt: float
    samples: np.ndarray = field(repr=False)  # shape (M+1, n)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != self.grid.n:
            raise GridUsageError("samples must have shape (M+1, n)")
        if not np.all(np.isfinite(self.samples)):
            raise GridUsageError("non-finite trajectory samples")

    @property
    def times(self):
        return self.dt * np.arange(self.samples.shape[0])

    @property
    def horizon(self):
        return self.dt * (self.samples.shape[0] - 1)

    def slice(self, m):
        return RadialField(self.grid, self.samples[m])

    def restricted(self, T):
        """Truncate the trajectory to [0, T]."""
        m = int(round(T / self.dt))
        return SpaceTimeField(self.grid, self.dt, self.samples[: m + 1].copy())


class _Transport:
    """Shift-evaluation machinery for w defined on [0, R], odd through 0.

    The antiderivative W is even; beyond R both w and W continue linearly
    (those values are causally invisible inside the budget, the extension
    only keeps array lookups well defined).
    """

    def __init__(self, grid, w):
        self.grid = grid
        self.r = grid.r
        self.w = np.asarray(w, dtype=float)
        dr = grid.dr
        W = np.concatenate(([0.0], np.cumsum(0.5 * (self.w[1:] + self.w[:-1]) * dr)))
        self._W = W
        # centered derivative of w (even extension of w' across the origin)
        d = np.empty_like(self.w)
        d[1:-1] = (self.w[2:] - self.w[:-2]) / (2.0 * dr)
        d[0] = (-3.0 * self.w[0] + 4.0 * self.w[1] - self.w[2]) / (2.0 * dr)
        d[-1] = (3.0 * self.w[-1] - 4.0 * self.w[-2] + self.w[-3]) / (2.0 * dr)
        self._d = d

    def W_at(self, x):
        # W is even; linear continuation beyond R with slope w(R)
        ax = np.abs(x)
        out = np.interp(ax, self.r, self._W)
        beyond = ax > self.r[-1]
        if np.any(beyond):
            out = np.where(beyond, self._W[-1] + (ax - self.r[-1]) * self.w[-1], out)
        return out

    def w_at(self, x):
        # w is odd; constant continuation beyond R
        ax = np.abs(x)
        out = np.interp(ax, self.r, self.w)
        return np.sign(x) * out

    def d_at(self, x):
        # w' is even
        return np.interp(np.abs(x), self.r, self._d)


def _budget_check(grid, t, enforce):
    if enforce:
        grid.require_budget(t)


def free_sine(f, t, enforce_budget=True):
    """sin(t sqrt(-Delta))/sqrt(-Delta) applied to f, by spherical means.

    In the radial reduction this is d'Alembert transport of w = r*f:
    v(r, t) = (W(r+t) - W(r-t))/2 with W the (even) antiderivative of the
    odd extension of w; u = v/r with u(0, t) = w(t).
    """
    if t < 0:
        raise ValueError("free evolution defined for t >= 0")
    _budget_check(f.grid, t, enforce_budget)
    tr = _Transport(f.grid, f.w())
    r = f.grid.r
    v = 0.5 * (tr.W_at(r + t) - tr.W_at(r - t))
    out = field_from_w(f.grid, v)
    vals = out.values.copy()
    vals[0] = tr.w_at(t)
    return RadialField(f.grid, vals)


def free_sine_pair(f, t, enforce_budget=True):
    """(u, du/dt) of the sine evolution; the pair feeds energy identities."""
    if t < 0:
        raise ValueError("free evolution defined for t >= 0")
    _budget_check(f.grid, t, enforce_budget)
    tr = _Transport(f.grid, f.w())
    r = f.grid.r
    v = 0.5 * (tr.W_at(r + t) - tr.W_at(r - t))
    vt = 0.5 * (tr.w_at(r + t) + tr.w_at(r - t))
    u = field_from_w(f.grid, v)
    uvals = u.values.copy()
    uvals[0] = tr.w_at(t)
    ut = field_from_w(f.grid, vt)
    utvals = ut.values.copy()
    utvals[0] = tr.d_at(t)
    return RadialField(f.grid, uvals), RadialField(f.grid, utvals)


def free_cosine(g0, t, enforce_budget=True):
    """cos(t sqrt(-Delta)) applied to g0; t = 0 returns g0 exactly."""
    if t < 0:
        raise ValueError("free evolution defined for t >= 0")
    if t == 0.0:
        return g0
    _budget_check(g0.grid, t, enforce_budget)
    tr = _Transport(g0.grid, g0.w())
    r = g0.grid.r
    v = 0.5 * (tr.w_at(r + t) + tr.w_at(r - t))
    out = field_from_w(g0.grid, v)
    vals = out.values.copy()
    vals[0] = tr.d_at(t)
    return RadialField(g0.grid, vals)


def free_cosine_pair(g0, t, enforce_budget=True):
    if t < 0:
        raise ValueError("free evolution defined for t >= 0")
    _budget_check(g0.grid, t, enforce_budget)
    tr = _Transport(g0.grid, g0.w())
    r = g0.grid.r
    v = 0.5 * (tr.w_at(r + t) + tr.w_at(r - t))
    vt = 0.5 * (tr.d_at(r + t) - tr.d_at(r - t))
    u = field_from_w(g0.grid, v)
    uvals = u.values.copy()
    uvals[0] = tr.d_at(t)
    return RadialField(g0.grid, uvals), field_from_w(g0.grid, vt)


def _traj(grid, dt, fields):
    return SpaceTimeField(grid, dt, np.stack([f.values for f in fields]))


def free_sine_traj(f, T, dt, enforce_budget=True):
    _budget_check(f.grid, T, enforce_budget)
    M = int(round(T / dt))
    return _traj(
        f.grid, dt, [free_sine(f, m * dt, enforce_budget=False) for m in range(M + 1)]
    )


def free_cosine_traj(g0, T, dt, enforce_budget=True):
    _budget_check(g0.grid, T, enforce_budget)
    M = int(round(T / dt))
    return _traj(
        g0.grid, dt, [free_cosine(g0, m * dt, enforce_budget=False) for m in range(M + 1)]
    )


def free_duhamel(F, enforce_budget=True):
    """Trapezoid-in-s superposition of sine slices: Int_0^t sin((t-s)L)/L F(s) ds."""
    grid = F.grid
    dt = F.dt
    M = F.samples.shape[0] - 1
    _budget_check(grid, F.horizon, enforce_budget)
    transports = [_Transport(grid, grid.r * F.samples[j]) for j in range(M + 1)]
    r = grid.r
    out = np.zeros_like(F.samples)
    for m in range(1, M + 1):
        acc_w = np.zeros(grid.n)
        acc_origin = 0.0
        for j in range(m + 1):
            tau = (m - j) * dt
            tr = transports[j]
            cj = 0.5 if j in (0, m) else 1.0
            acc_w += cj * 0.5 * (tr.W_at(r + tau) - tr.W_at(r - tau))
            acc_origin += cj * tr.w_at(tau)
        u = field_from_w(grid, acc_w * dt).values.copy()
        u[0] = acc_origin * dt
        out[m] = u
    return SpaceTimeField(grid, dt, out)


def _leapfrog(
    grid, w0, wdot0, T, dt, Vvals, source_w=None, stride=1, nonlinear=None, wg=None
):
    """Three-level integration of w_tt = w_rr - V w + source_w (+ nonlinear(w)).

    When wg is given (the reduced eigenvector r*g), the g-component of the
    state is removed after every step: the continuous-spectrum evolution
    commutes with that projection exactly, and without it rounding error
    reseeds the exponentially unstable mode and dominates long horizons.
    Returns the strided list of w snapshots.
    """
    if dt > grid.dr + 1e-12:
        raise GridUsageError(f"CFL violation: dt={dt} > dr={grid.dr}")
    M = int(round(T / dt))
    dr2 = grid.dr**2

    def acc(w, m):
        out = np.zeros(grid.n)
        out[1:-1] = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / dr2
        out[1:-1] -= Vvals[1:-1] * w[1:-1]
        if nonlinear is not None:
            out[1:-1] += nonlinear(w)[1:-1]
        if source_w is not None:
            out[1:-1] += source_w(m)[1:-1]
        return out

    if wg is not None:
        wg = wg / np.sqrt(np.sum(wg * wg))

    def suppress(w):
        if wg is None:
            return w
        return w - np.dot(w, wg) * wg

    w_prev = suppress(w0.copy())
    w_cur = suppress(w_prev + dt * wdot0 + 0.5 * dt * dt * acc(w_prev, 0))
    snaps = [w_prev.copy(), w_cur.copy()]
    for m in range(2, M + 1):
        w_next = suppress(2.0 * w_cur - w_prev + dt * dt * acc(w_cur, m - 1))
        w_prev, w_cur = w_cur, w_next
        snaps.append(w_cur.copy())
        if m % 64 == 0 and not np.all(np.isfinite(w_cur)):
            raise PropagatorError(f"leapfrog instability detected at t={m * dt}")
    if not np.all(np.isfinite(snaps[-1])):
        raise PropagatorError("leapfrog instability detected at final step")
    return [snaps[m] for m in range(0, M + 1, stride)]


def evolve_linear_perturbed(u0, u1, source, T, dt, a=1.0, stride=1, project_out=None):
    """Time-domain realization of the evolution generated by H = -Delta + V(a).

    source may be None or a SpaceTimeField sampled at the solver dt.
    project_out, when set to SpectralData, keeps the state in the
    continuous subspace of the scheme (see _leapfrog).  Discrete energy
    drift over [0, T] is O(dt^2).
    """
    grid = u0.grid
    Vvals = soliton.potential(grid.r, a)
    source_w = None
    if source is not None:
        if abs(source.dt - dt) > 1e-12:
            raise GridUsageError("source trajectory must be sampled at the solver dt")
        src = source.samples
        rr = grid.r

        def source_w(m):
            return rr * src[min(m, src.shape[0] - 1)]

    wg = grid.r * project_out.g.values if project_out is not None else None
    snaps = _leapfrog(
        grid, u0.w(), u1.w(), T, dt, Vvals, source_w=source_w, stride=stride, wg=wg
    )
    fields = [field_from_w(grid, w) for w in snaps]
    return _traj(grid, dt * stride, fields)


def perturbed_sine_duhamel(F, a=1.0, stride=1, project_out=None):
    """Int_0^t sin((t-s) sqrt(H))/sqrt(H) F(s) ds by leapfrog with source F."""
    grid = F.grid
    zero = grid.zeros()
    return evolve_linear_perturbed(
        zero, zero, F, F.horizon, F.dt, a=a, stride=stride, project_out=project_out
    )


def _free_pairing_series(data_field, weight_field, T, dt, kind):
    """<free evolution of data (t), weight> for t = 0..T; exact transport."""
    M = int(round(T / dt))
    grid = data_field.grid
    if kind == "sine":
        evol = lambda t: free_sine(data_field, t, enforce_budget=False)
    else:
        evol = lambda t: free_cosine(data_field, t, enforce_budget=False)
    return np.array([inner_product(evol(m * dt), weight_field) for m in range(M + 1)])


def secular_decomposition_S(f, T, dt, S, stride=1):
    """Split the perturbed sine evolution into dispersive + secular parts.

    Perturbed side: evolve data (0, P_c f) under H.  Secular side: the
    rank-one projector applied to the running time integral of the free
    sine evolution of f.  Returns (S_traj, secular_traj); their sum is the
    full perturbed evolution.
    """
    from .spectral import project_continuous_w, secular_coefficient

    grid = f.grid
    grid.require_budget(T)
    pcf = project_continuous_w(f, S)
    full = evolve_linear_perturbed(
        grid.zeros(), pcf, None, T, dt, a=S.a, stride=stride, project_out=S
    )

    q = RadialField(grid, soliton.potential(grid.r, S.a) * S.resonance.values)
    series = _free_pairing_series(f, q, T, dt, "sine")
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (series[1:] + series[:-1]) * dt)))
    coeff = -secular_coefficient(S) * cum[::stride]
    secular = SpaceTimeField(
        grid, dt * stride, np.outer(coeff, S.resonance.values)
    )
    S_traj = SpaceTimeField(grid, dt * stride, full.samples - secular.samples)
    return S_traj, secular


def secular_decomposition_C(g0, T, dt, S, stride=1):
    """Cosine mirror of secular_decomposition_S with data (P_c g0, 0)."""
    from .spectral import project_continuous_w, secular_coefficient

    grid = g0.grid
    grid.require_budget(T)
    pcg = project_continuous_w(g0, S)
    full = evolve_linear_perturbed(
        pcg, grid.zeros(), None, T, dt, a=S.a, stride=stride, project_out=S
    )

    q = RadialField(grid, soliton.potential(grid.r, S.a) * S.resonance.values)
    series = _free_pairing_series(g0, q, T, dt, "cosine")
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (series[1:] + series[:-1]) * dt)))
    coeff = -secular_coefficient(S) * cum[::stride]
    secular = SpaceTimeField(grid, dt * stride, np.outer(coeff, S.resonance.values))
    C_traj = SpaceTimeField(grid, dt * stride, full.samples - secular.samples)
    return C_traj, secular


def transport_energy(u, ut):
    """Staggered 1D wave energy 4 pi Int (v_r^2 + v_t^2) dr on w-variables.

    Exactly shift invariant for the transport propagators when t/dr is an
    integer, so free evolutions conserve it to rounding error.
    """
    grid = u.grid
    dr = grid.dr
    v = u.w()
    vt = ut.w()
    dv = np.diff(v) / dr
    vt_mid = 0.5 * (vt[1:] + vt[:-1])
    return FOUR_PI * dr * float(np.sum(dv * dv + vt_mid * vt_mid))
