"""Maximum-likelihood event localisation from multichannel arrival times.

Each microphone ``i`` reports an arrival time ``tau_i`` with Gaussian
uncertainty ``sigma_i``. With relative delays ``tau_hat_i = tau_i - tau_0``
and ``a_i(r) = |r - m_i| / c - tau_hat_i`` the negative log-likelihood,
minimised over the unknown reference propagation delay ``t0``, is

    t0*  = S2 * sum_i a_i / sigma_i^2,            S2 = 1 / sum_i sigma_i^-2
    f    = 1/2 * [ sum_i a_i^2 / sigma_i^2 - S2 * (sum_i a_i / sigma_i^2)^2 ]

i.e. half the weighted spread of the ``a_i``. The event position is the
minimiser of ``f``; the event time is ``tau_0 - t0*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from squashloc.geometry import CourtGeometry, MicArray, NamedPlane

SINGULAR_RADIUS = 1e-3
BOX_MARGIN = 0.5


class LocalizationError(RuntimeError):
    """No start point converged to an admissible solution."""

    def __init__(self, message: str, best_residual: float = float("inf")):
        super().__init__(message)
        self.best_residual = best_residual


class SingularGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class EventGroup:
    """Arrival sample indices of one physical event, keyed by channel.

    Indices may be fractional. The earliest arrival is the reference channel.
    """

    detections: Mapping[int, float]

    def __post_init__(self) -> None:
        items = sorted((int(c), float(s)) for c, s in dict(self.detections).items())
        object.__setattr__(self, "detections", dict(items))
        if not items:
            raise ValueError("empty event group")

    @property
    def channels(self) -> list[int]:
        return list(self.detections)

    @property
    def reference_channel(self) -> int:
        return min(self.detections, key=lambda c: (self.detections[c], c))

    @property
    def spread(self) -> float:
        values = self.detections.values()
        return max(values) - min(values)

    def __len__(self) -> int:
        return len(self.detections)


@dataclass
class LocalizedEvent:
    position: np.ndarray
    event_time: float
    residual: float
    iterations: int
    constrained_plane: NamedPlane | None = None
    channels: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class LocalizerOptions:
    max_iters: int = 100
    tol: float = 1e-8
    min_step: float = 1e-6
    armijo: float = 1e-4
    max_step: float = 2.0
    starts: tuple[tuple[float, float, float], ...] | None = None


# ---------------------------------------------------------------------------
# closed-form pieces


def _arrays(group: EventGroup, array: MicArray):
    chans = group.channels
    if max(chans) >= len(array):
        raise ValueError(f"group references channel {max(chans)} but array has {len(array)}")
    mics = array.positions[chans]
    weights = 1.0 / array.sigmas[chans] ** 2
    ref = group.reference_channel
    tau0 = group.detections[ref] / array.sample_rate
    tau_hat = np.array([group.detections[c] for c in chans]) / array.sample_rate - tau0
    return mics, weights, tau_hat, tau0


def _offsets(pos, mics, tau_hat, c):
    r = np.linalg.norm(np.asarray(pos, dtype=float) - mics, axis=-1)
    return r / c - tau_hat


def event_time_star(pos, group: EventGroup, array: MicArray) -> float:
    """Reference-channel propagation delay t0* (seconds) that maximises the likelihood."""
    mics, weights, tau_hat, _ = _arrays(group, array)
    a = _offsets(pos, mics, tau_hat, array.speed_of_sound)
    return float(np.sum(weights * a) / np.sum(weights))


def event_time(pos, group: EventGroup, array: MicArray) -> float:
    """Absolute emission time in seconds, on the sample clock."""
    _, _, _, tau0 = _arrays(group, array)
    return tau0 - event_time_star(pos, group, array)


def objective_f(pos, group: EventGroup, array: MicArray) -> float:
    mics, weights, tau_hat, _ = _arrays(group, array)
    a = _offsets(pos, mics, tau_hat, array.speed_of_sound)
    # the form is invariant to a common shift of the a_i; centring avoids cancellation
    a = a - a.mean()
    s2 = 1.0 / np.sum(weights)
    value = 0.5 * (np.sum(weights * a * a) - s2 * np.sum(weights * a) ** 2)
    return max(float(value), 0.0)


def objective_f_pairwise(pos, group: EventGroup, array: MicArray) -> float:
    """Same objective written through pairwise delay differences.

    f = S2^2 / 2 * sum_i w_i [ sum_j w_j ((r_i - r_j)/c - (tau_hat_i - tau_hat_j)) ]^2
    """
    mics, weights, tau_hat, _ = _arrays(group, array)
    r = np.linalg.norm(np.asarray(pos, dtype=float) - mics, axis=-1)
    c = array.speed_of_sound
    s2 = 1.0 / np.sum(weights)
    pair = (r[:, None] - r[None, :]) / c - (tau_hat[:, None] - tau_hat[None, :])
    inner = pair @ weights
    return float(0.5 * s2 * s2 * np.sum(weights * inner * inner))


def grad_f(pos, group: EventGroup, array: MicArray) -> np.ndarray:
    """Gradient of ``objective_f`` with respect to position (1/m).

    Because df/dt0 vanishes at t0*, the gradient is that of the fixed-t0
    quadratic: sum_i w_i (a_i - t0*) / c * (r - m_i) / |r - m_i|.
    """
    mics, weights, tau_hat, _ = _arrays(group, array)
    diff = np.asarray(pos, dtype=float) - mics
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r < SINGULAR_RADIUS):
        raise SingularGeometryError("position within 1 mm of a microphone")
    c = array.speed_of_sound
    a = r / c - tau_hat
    resid = a - np.sum(weights * a) / np.sum(weights)
    return ((weights * resid / (c * r)) @ diff)


# ---------------------------------------------------------------------------
# batched descent


def _batch_objective(pos, mics, weights, tau_hat, c):
    """f and grad for (m, 3) positions against (m, k) delays."""
    diff = pos[:, None, :] - mics[None, :, :]
    r = np.sqrt(np.einsum("mkd,mkd->mk", diff, diff))
    r = np.maximum(r, 1e-12)
    a = r / c - tau_hat
    t0 = (a @ weights) / weights.sum()
    resid = a - t0[:, None]
    f = 0.5 * (resid * resid) @ weights
    coef = weights * resid / (c * r)
    g = np.einsum("mk,mkd->md", coef, diff)
    return f, g


def descend(q0, origin, basis, mics, weights, tau_hat, c, opts: LocalizerOptions):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    ``q0`` are (m, d) coordinates; positions are ``origin + q @ basis``. All m
    problems advance together. Returns final coordinates, f, gradient norm
    and the number of iterations each problem used.
    """
    q = np.array(q0, dtype=float)
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (q.shape[0], 3))
    tau_hat = np.broadcast_to(tau_hat, (q.shape[0], mics.shape[0]))

    def evaluate(q_sub, idx):
        pos = origin[idx] + q_sub @ basis
        f, g = _batch_objective(pos, mics, weights, tau_hat[idx], c)
        return f, g @ basis.T

    everything = np.arange(q.shape[0])
    f, g = evaluate(q, everything)
    gnorm = np.linalg.norm(g, axis=1)
    # first trial moves half a metre
    step = 0.5 / np.maximum(gnorm, 1e-300)
    iters = np.zeros(q.shape[0], dtype=int)
    active = gnorm >= opts.tol

    for _ in range(opts.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        qa, fa, ga = q[idx], f[idx], g[idx]
        g2 = np.einsum("md,md->m", ga, ga)
        alpha = np.minimum(step[idx], opts.max_step / np.sqrt(g2))
        accepted = np.zeros(idx.size, dtype=bool)
        q_new, f_new, g_new = qa.copy(), fa.copy(), ga.copy()
        trial_alpha = alpha.copy()
        pending = np.arange(idx.size)
        for _ in range(60):
            if pending.size == 0:
                break
            qt = qa[pending] - trial_alpha[pending, None] * ga[pending]
            ft, gt = evaluate(qt, idx[pending])
            ok = ft <= fa[pending] - opts.armijo * trial_alpha[pending] * g2[pending]
            good = pending[ok]
            q_new[good], f_new[good], g_new[good] = qt[ok], ft[ok], gt[ok]
            accepted[good] = True
            pending = pending[~ok]
            trial_alpha[pending] *= 0.5

        s = q_new - qa
        y = g_new - ga
        sy = np.einsum("md,md->m", s, y)
        ss = np.einsum("md,md->m", s, s)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), trial_alpha * 2.0)
        step[idx] = bb
        q[idx], f[idx], g[idx] = q_new, f_new, g_new
        iters[idx] += 1
        moved = np.sqrt(ss)
        gn = np.linalg.norm(g_new, axis=1)
        done = (gn < opts.tol) | (moved < opts.min_step) | ~accepted
        active[idx[done]] = False
        gnorm[idx] = gn
    return q, f, gnorm, iters


def default_starts(court: CourtGeometry) -> np.ndarray:
    """Court centroid plus the centre of each named surface."""
    points = [court.centroid] + [court.surface_centroid(p.name) for p in court.surfaces]
    return np.array(points)


def _pick(pos, f, iters, court, n_problems, n_starts):
    """Lowest-f admissible start for each problem; NaN rows where none is."""
    pos = pos.reshape(n_problems, n_starts, 3)
    f = f.reshape(n_problems, n_starts)
    iters = iters.reshape(n_problems, n_starts)
    lo, hi = -BOX_MARGIN, court.extent + BOX_MARGIN
    inside = np.all((pos >= lo) & (pos <= hi), axis=2) & np.isfinite(f)
    masked = np.where(inside, f, np.inf)
    best = np.argmin(masked, axis=1)
    rows = np.arange(n_problems)
    ok = np.isfinite(masked[rows, best])
    out = pos[rows, best].copy()
    out[~ok] = np.nan
    return out, masked[rows, best], iters[rows, best], ok, np.min(f, axis=1)


def _starts(court, opts):
    return np.array(opts.starts, dtype=float) if opts.starts else default_starts(court)


def localize_3d(group: EventGroup, array: MicArray, court: CourtGeometry | None = None,
                opts: LocalizerOptions | None = None) -> LocalizedEvent:
    """Position and time of one event from at least four arrivals."""
    court = court or CourtGeometry()
    opts = opts or LocalizerOptions()
    if len(group) < 4:
        raise ValueError("3-D localisation needs at least four channels")
    mics, weights, tau_hat, tau0 = _arrays(group, array)
    starts = _starts(court, opts)
    q, f, _, iters = descend(starts, np.zeros(3), np.eye(3), mics, weights, tau_hat,
                             array.speed_of_sound, opts)
    pos, fbest, itbest, ok, fmin = _pick(q, f, iters, court, 1, len(starts))
    if not ok[0]:
        raise LocalizationError("no start converged inside the court", float(fmin[0]))
    position = pos[0]
    return LocalizedEvent(
        position=position,
        event_time=event_time(position, group, array),
        residual=max(float(fbest[0]), 0.0),
        iterations=int(itbest[0]),
        channels=group.channels,
    )


def localize_on_plane(group: EventGroup, array: MicArray, plane: NamedPlane,
                      court: CourtGeometry | None = None,
                      opts: LocalizerOptions | None = None) -> LocalizedEvent:
    """Minimise the objective over ``plane``; three arrivals suffice."""
    court = court or CourtGeometry()
    opts = opts or LocalizerOptions()
    if len(group) < 3:
        raise ValueError("plane-constrained localisation needs at least three channels")
    mics, weights, tau_hat, _ = _arrays(group, array)
    u, v = plane.basis()
    basis = np.stack([u, v])
    origin = plane.point
    starts = plane.project(_starts(court, opts))
    q0 = (starts - origin) @ basis.T
    q, f, _, iters = descend(q0, origin, basis, mics, weights, tau_hat,
                             array.speed_of_sound, opts)
    pos = origin + q @ basis
    pos, fbest, itbest, ok, fmin = _pick(pos, f, iters, court, 1, len(starts))
    if not ok[0]:
        raise LocalizationError("no start converged inside the court", float(fmin[0]))
    position = pos[0]
    return LocalizedEvent(
        position=position,
        event_time=event_time(position, group, array),
        residual=max(float(fbest[0]), 0.0),
        iterations=int(itbest[0]),
        constrained_plane=plane,
        channels=group.channels,
    )


def localize_many(arrivals, array: MicArray, court: CourtGeometry | None = None,
                  opts: LocalizerOptions | None = None):
    """Vectorised ``localize_3d`` for (P, N) arrival samples on every channel.

    Returns (P, 3) positions (NaN where no admissible solution exists) and
    the (P,) residuals.
    """
    court = court or CourtGeometry()
    opts = opts or LocalizerOptions()
    arrivals = np.atleast_2d(np.asarray(arrivals, dtype=float))
    n_problems, n_ch = arrivals.shape
    if n_ch != len(array):
        raise ValueError("arrivals must have one column per microphone")
    tau = arrivals / array.sample_rate
    tau_hat = tau - tau.min(axis=1, keepdims=True)
    weights = 1.0 / array.sigmas ** 2
    starts = _starts(court, opts)
    n_starts = len(starts)
    q0 = np.tile(starts, (n_problems, 1))
    tau_rep = np.repeat(tau_hat, n_starts, axis=0)
    q, f, _, iters = descend(q0, np.zeros(3), np.eye(3), array.positions, weights, tau_rep,
                             array.speed_of_sound, opts)
    pos, fbest, _, _, _ = _pick(q, f, iters, court, n_problems, n_starts)
    return pos, fbest
