"""Tracking optimal control on top of a decision solution.

Vehicles follow the discrete bicycle model with the rear-axle midpoint as the
reference point. The joint problem over all vehicles is solved by direct
shooting: controls are the only unknowns, states come from a forward rollout
and gradients from a reverse (adjoint) sweep. Pairwise circle separation and
``v >= 0`` enter through an augmented Lagrangian; control boxes are handled by
projection inside a Levenberg-Marquardt inner loop.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleStart, KinematicDomain, NonmonotoneTimestamps, NotConverged
from .scenario import OCPSettings

log = logging.getLogger(__name__)

VIOLATION_TARGET = 1e-4
ACCEPT_VIOLATION = 1e-3
PG_TOL = 1e-4
MAX_OUTER = 12
DOMAIN_PENALTY = 1e12


# ---------------------------------------------------------------------------
# kinematics


def f_r(v, delta, tau_s: float, b: float):
    """Rear-axle displacement over one step.

    Written as ``C + S^2 / (b + r)`` which equals ``b + C - r`` but is exact at
    ``delta = 0`` and free of cancellation for small angles.
    """
    S = tau_s * v * np.sin(delta)
    C = tau_s * v * np.cos(delta)
    r2 = b * b - S * S
    if np.any(r2 < 0):
        raise KinematicDomain(f"|tau_s v sin(delta)| exceeds the wheelbase {b}")
    return C + S * S / (b + np.sqrt(r2))


def step_kinematics(state, control, tau_s: float, b: float) -> np.ndarray:
    """One step of the discrete bicycle model; ``state=(x, y, theta, v)``, ``control=(delta, a)``."""
    x, y, th, v = (float(s) for s in state)
    delta, a = (float(c) for c in control)
    f = f_r(v, delta, tau_s, b)
    return np.array([x + f * math.cos(th), y + f * math.sin(th),
                     th + math.asin(tau_s * v * math.sin(delta) / b), v + tau_s * a])


def rollout(x0, controls, tau_s: float, b: float) -> np.ndarray:
    """States ``x_0 .. x_N`` obtained by iterating :func:`step_kinematics`."""
    xs = [np.asarray(x0, dtype=float)]
    for u in controls:
        xs.append(step_kinematics(xs[-1], u, tau_s, b))
    return np.array(xs)


def front_rear_circles(state, d_f: float, d_r: float) -> tuple[np.ndarray, np.ndarray]:
    """Centres of the front and rear circles for one state or an array of states."""
    s = np.asarray(state, dtype=float)
    p = s[..., :2]
    h = np.stack([np.cos(s[..., 2]), np.sin(s[..., 2])], axis=-1)
    return p + d_f * h, p + d_r * h


# ---------------------------------------------------------------------------
# references


@dataclass
class ReferenceTrajectory:
    vehicle: int
    states: np.ndarray          # (N+1, 4): rear-axle x, y, heading, speed
    centers: np.ndarray         # (N+1, 2) interpolated vehicle centre
    vertices: list[int]
    times: list[float]

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


def reference_point(points, times, t: float, d_b: float):
    """Interpolated centre, rear-axle point, heading and segment speed at time ``t``."""
    P = np.asarray(points, dtype=float)
    T = np.asarray(times, dtype=float)
    k = int(np.clip(np.searchsorted(T, t, side="right") - 1, 0, len(T) - 2))
    w = (t - T[k]) / (T[k + 1] - T[k])
    center = (1.0 - w) * P[k] + w * P[k + 1]
    seg = P[k + 1] - P[k]
    length = float(np.hypot(*seg))
    u = seg / length
    return center, center - d_b * u, math.atan2(u[1], u[0]), length / (T[k + 1] - T[k])


def horizon_steps(t_end: float, tau_s: float) -> int:
    return int(t_end / tau_s + 1e-9)


def decision_to_reference(decision, graph, d_b: float, tau_s: float = 0.1,
                          trim: bool = False) -> dict[int, ReferenceTrajectory]:
    """Per-step rear-axle references from the chosen paths and timestamps."""
    refs = {}
    for i in sorted(decision.vehicles):
        d = decision.vehicles[i]
        times = [float(t) for t in d.times]
        if len(times) < 2 or any(b <= a for a, b in zip(times, times[1:])):
            raise NonmonotoneTimestamps(f"vehicle {i}: timestamps {times} are not strictly increasing")
        pts = np.array([graph.vertices[v].position for v in d.vertices], dtype=float)
        n = horizon_steps(times[-1] - times[0], tau_s)
        states = np.zeros((n + 1, 4))
        centers = np.zeros((n + 1, 2))
        for k in range(n + 1):
            c, rear, h, v = reference_point(pts, times, times[0] + k * tau_s, d_b)
            centers[k] = c
            states[k] = (rear[0], rear[1], h, v)
        states[:, 2] = np.unwrap(states[:, 2])
        refs[i] = ReferenceTrajectory(i, states, centers, list(d.vertices), times)
    if trim and refs:
        n = min(r.horizon for r in refs.values())
        for r in refs.values():
            r.states, r.centers = r.states[:n + 1], r.centers[:n + 1]
    return refs


def initial_state(position, heading: float, speed: float, d_b: float) -> np.ndarray:
    """Rear-axle state of a vehicle whose centre sits at ``position``."""
    return np.array([position[0] - d_b * math.cos(heading), position[1] - d_b * math.sin(heading),
                     heading, speed])


# ---------------------------------------------------------------------------
# collision report


@dataclass
class CollisionReport:
    min_distance: float
    min_margin: float
    worst: tuple | None                  # (step, id_a, id_b, circle_a, circle_b)
    first_violation: tuple | None
    rows: list[tuple] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return self.first_violation is None


def validate_collisions(trajectories: dict[int, np.ndarray], d_safe: float,
                        d_f: float = 2.279, d_r: float = 0.126, tol: float = 0.0,
                        keep_rows: bool = False) -> CollisionReport:
    """Every circle pair of every vehicle pair at every shared step."""
    ids = sorted(trajectories)
    best = (math.inf, None)
    first = None
    rows = []
    names = ("f", "r")
    for a_n, a in enumerate(ids):
        for b in ids[a_n + 1:]:
            n = min(len(trajectories[a]), len(trajectories[b]))
            ca = front_rear_circles(trajectories[a][:n], d_f, d_r)
            cb = front_rear_circles(trajectories[b][:n], d_f, d_r)
            for ka in range(2):
                for kb in range(2):
                    dist = np.hypot(*(ca[ka] - cb[kb]).T)
                    if keep_rows:
                        rows += [(s, a, b, names[ka], names[kb], float(dist[s])) for s in range(n)]
                    s = int(np.argmin(dist))
                    if dist[s] < best[0]:
                        best = (float(dist[s]), (s, a, b, names[ka], names[kb]))
                    bad = np.flatnonzero(dist < d_safe - tol)
                    if bad.size and (first is None or bad[0] < first[0]):
                        first = (int(bad[0]), a, b, names[ka], names[kb])
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    return CollisionReport(best[0], best[0] - d_safe, best[1], first, rows)


# ---------------------------------------------------------------------------
# the joint optimal control problem


@dataclass
class TrajectorySolution:
    vehicles: list[int]
    states: dict[int, np.ndarray]
    controls: dict[int, np.ndarray]
    step_cost: dict[int, np.ndarray]
    cost: float
    report: CollisionReport
    converged: bool
    max_violation: float
    projected_gradient: float
    outer_iterations: int
    history: list[list[float]] = field(default_factory=list)
    message: str = ""

    def require(self) -> "TrajectorySolution":
        if not self.converged:
            raise NotConverged(self.message, self)
        return self


class TrackingOCP:
    """Joint tracking problem for several vehicles over padded horizons.

    The flat decision vector stacks ``(delta, a)`` for every vehicle and step
    inside its own horizon, vehicle by vehicle.
    """

    def __init__(self, refs: dict[int, np.ndarray], x0: dict[int, np.ndarray],
                 settings: OCPSettings = OCPSettings()):
        self.ids = sorted(refs)
        self.cfg = settings
        self.N = np.array([len(refs[i]) - 1 for i in self.ids])
        if np.any(self.N < 1):
            raise ValueError("every reference needs at least one step")
        self.V = len(self.ids)
        self.T = int(self.N.max())
        self.ref = np.zeros((self.T + 1, self.V, 4))
        for n, i in enumerate(self.ids):
            r = np.asarray(refs[i], dtype=float)
            self.ref[:, n] = r[-1]
            self.ref[:len(r), n] = r
        self.x0 = np.array([x0[i] for i in self.ids], dtype=float)
        steps = np.arange(self.T + 1)[:, None]
        self.state_mask = (steps <= self.N[None, :]) & (steps >= 1)
        self.ctrl_mask = np.arange(self.T)[:, None] < self.N[None, :]
        self.Q = np.asarray(settings.Q, dtype=float)
        self.R = np.asarray(settings.R, dtype=float)
        a, b = np.triu_indices(self.V, 1)
        self.pa, self.pb = a, b
        shared = np.minimum(self.N[a], self.N[b])
        self.pair_mask = (steps >= 1) & (steps <= shared[None, :])
        self.offsets = np.array([settings.d_f, settings.d_r])
        lo = np.array([-settings.delta_max, settings.a_min])
        hi = np.array([settings.delta_max, settings.a_max])
        idx = np.argwhere(self.ctrl_mask)
        self._idx = (idx[:, 0], idx[:, 1])
        order = np.lexsort((idx[:, 0], idx[:, 1]))
        self._order = order
        self.bounds = [(lo[k], hi[k]) for _ in range(len(idx)) for k in range(2)]
        self.size = 2 * len(idx)

    # -- packing
    def unpack(self, z: np.ndarray) -> np.ndarray:
        U = np.zeros((self.T, self.V, 2))
        zz = z.reshape(-1, 2)
        rows, cols = self._idx[0][self._order], self._idx[1][self._order]
        U[rows, cols] = zz
        return U

    def pack(self, U: np.ndarray) -> np.ndarray:
        rows, cols = self._idx[0][self._order], self._idx[1][self._order]
        return U[rows, cols].reshape(-1).copy()

    def split(self, X, U) -> tuple[dict, dict]:
        states = {i: X[:self.N[n] + 1, n].copy() for n, i in enumerate(self.ids)}
        controls = {i: U[:self.N[n], n].copy() for n, i in enumerate(self.ids)}
        return states, controls

    # -- dynamics
    def rollout(self, U: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        tau, b = cfg.tau_s, cfg.wheelbase
        X = np.zeros((self.T + 1, self.V, 4))
        X[0] = self.x0
        for k in range(self.T):
            x = X[k]
            th, v = x[:, 2], x[:, 3]
            d, a = U[k, :, 0], U[k, :, 1]
            f = f_r(v, d, tau, b)
            X[k + 1, :, 0] = x[:, 0] + f * np.cos(th)
            X[k + 1, :, 1] = x[:, 1] + f * np.sin(th)
            X[k + 1, :, 2] = th + np.arcsin(tau * v * np.sin(d) / b)
            X[k + 1, :, 3] = v + tau * a
        return X

    def circles(self, X: np.ndarray) -> np.ndarray:
        """(T+1, V, 2, 2): step, vehicle, circle (front, rear), xy."""
        h = np.stack([np.cos(X[..., 2]), np.sin(X[..., 2])], axis=-1)
        return X[..., None, :2] + self.offsets[None, None, :, None] * h[..., None, :]

    def constraints(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Separation residuals ``d_safe - dist`` (T+1, P, 2, 2) and ``-v`` (T+1, V)."""
        C = self.circles(X)
        diff = C[:, self.pa, :, None, :] - C[:, self.pb, None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        g_col = np.where(self.pair_mask[:, :, None, None], self.cfg.d_safe - dist, -np.inf)
        g_v = np.where(self.state_mask, -X[..., 3], -np.inf)
        return g_col, g_v

    def tracking_cost(self, X, U) -> np.ndarray:
        """Per vehicle and step: state deviation plus control effort."""
        dx = (X - self.ref) ** 2 @ self.Q
        du = (U ** 2) @ self.R
        cost = np.where(self.state_mask, dx, 0.0)
        cost[:-1] += np.where(self.ctrl_mask, du, 0.0)
        return cost

    def evaluate(self, z: np.ndarray, lam_c=None, lam_v=None, rho: float = 0.0):
        """Augmented-Lagrangian value and gradient with respect to ``z``."""
        cfg = self.cfg
        tau, b = cfg.tau_s, cfg.wheelbase
        U = self.unpack(z)
        X = self.rollout(U)
        cost = float(self.tracking_cost(X, U).sum())
        # dL/dX and dL/dU of the explicit terms
        gX = np.where(self.state_mask[..., None], 2.0 * (X - self.ref) * self.Q, 0.0)
        gU = np.where(self.ctrl_mask[..., None], 2.0 * U * self.R, 0.0)
        if rho > 0:
            C = self.circles(X)
            diff = C[:, self.pa, :, None, :] - C[:, self.pb, None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))
            g = cfg.d_safe - dist
            lc = np.zeros_like(g) if lam_c is None else lam_c
            act = np.where(self.pair_mask[:, :, None, None], np.maximum(0.0, lc + rho * g), 0.0)
            cost += float(((act ** 2 - np.where(self.pair_mask[:, :, None, None], lc, 0.0) ** 2)
                           .sum()) / (2.0 * rho))
            # d dist / d C_a = diff / dist
            w = -act / np.maximum(dist, 1e-12)
            gd = w[..., None] * diff                       # gradient w.r.t. C_a circles
            gC = np.zeros_like(C)
            np.add.at(gC, (slice(None), self.pa), gd.sum(axis=3))
            np.add.at(gC, (slice(None), self.pb), -gd.sum(axis=2))
            gX[..., :2] += gC.sum(axis=2)
            dh = np.stack([-np.sin(X[..., 2]), np.cos(X[..., 2])], axis=-1)
            gX[..., 2] += np.einsum("tvcx,c,tvx->tv", gC, self.offsets, dh)
            lv = np.zeros((self.T + 1, self.V)) if lam_v is None else lam_v
            gv = -X[..., 3]
            av = np.where(self.state_mask, np.maximum(0.0, lv + rho * gv), 0.0)
            cost += float((av ** 2 - np.where(self.state_mask, lv, 0.0) ** 2).sum() / (2.0 * rho))
            gX[..., 3] -= av
        # reverse sweep
        gZ = np.zeros_like(U)
        lam = gX[self.T].copy()
        for k in range(self.T - 1, -1, -1):
            x, u = X[k], U[k]
            th, v = x[:, 2], x[:, 3]
            d = u[:, 0]
            S = tau * v * np.sin(d)
            Cc = tau * v * np.cos(d)
            r = np.sqrt(b * b - S * S)
            f = Cc + S * S / (b + r)
            f_v = tau * np.cos(d) + tau * np.sin(d) * S / r
            f_d = -S + S * Cc / r
            th_v = tau * np.sin(d) / r
            th_d = Cc / r
            ct, st = np.cos(th), np.sin(th)
            lx, ly, lt, lv_ = lam.T
            gZ[k, :, 0] = gU[k, :, 0] + (lx * ct + ly * st) * f_d + lt * th_d
            gZ[k, :, 1] = gU[k, :, 1] + lv_ * tau
            new = gX[k].copy()
            new[:, 0] += lx
            new[:, 1] += ly
            new[:, 2] += lt + f * (-lx * st + ly * ct)
            new[:, 3] += lv_ + (lx * ct + ly * st) * f_v + lt * th_v
            lam = new
        gZ = np.where(self.ctrl_mask[..., None], gZ, 0.0)
        return cost, self.pack(gZ)

    # -- second-order model
    def sensitivities(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """``S[k, v] = d x_k / d u`` over vehicle ``v``'s own padded controls: (T+1, V, 4, 2T)."""
        tau, b = self.cfg.tau_s, self.cfg.wheelbase
        S = np.zeros((self.T + 1, self.V, 4, 2 * self.T))
        for k in range(self.T):
            th, v = X[k, :, 2], X[k, :, 3]
            d = U[k, :, 0]
            Sd = tau * v * np.sin(d)
            Cc = tau * v * np.cos(d)
            r = np.sqrt(b * b - Sd * Sd)
            f = Cc + Sd * Sd / (b + r)
            f_v = tau * np.cos(d) + tau * np.sin(d) * Sd / r
            f_d = -Sd + Sd * Cc / r
            ct, st = np.cos(th), np.sin(th)
            prev = S[k]
            nxt = prev.copy()
            nxt[:, 0] += -f[:, None] * st[:, None] * prev[:, 2] + (f_v * ct)[:, None] * prev[:, 3]
            nxt[:, 1] += f[:, None] * ct[:, None] * prev[:, 2] + (f_v * st)[:, None] * prev[:, 3]
            nxt[:, 2] += (tau * np.sin(d) / r)[:, None] * prev[:, 3]
            nxt[:, 0, 2 * k] += f_d * ct
            nxt[:, 1, 2 * k] += f_d * st
            nxt[:, 2, 2 * k] += Cc / r
            nxt[:, 3, 2 * k + 1] += tau
            S[k + 1] = nxt
        return S

    def _columns(self) -> np.ndarray:
        """Padded (vehicle, 2T) column index of every entry of the flat vector."""
        rows, cols = self._idx[0][self._order], self._idx[1][self._order]
        base = cols * 2 * self.T + 2 * rows
        return np.stack([base, base + 1], axis=1).reshape(-1)

    def gauss_newton(self, z: np.ndarray, lam_c=None, lam_v=None, rho: float = 0.0) -> np.ndarray:
        """Gauss-Newton approximation of the Hessian of :meth:`evaluate`."""
        cfg = self.cfg
        U = self.unpack(z)
        X = self.rollout(U)
        S = self.sensitivities(X, U)
        width = 2 * self.T
        H = np.zeros((self.V * width, self.V * width))
        w = np.where(self.state_mask[..., None], 2.0 * self.Q, 0.0)       # (T+1, V, 4)
        for n in range(self.V):
            Sn = S[:, n].reshape(-1, width)                               # ((T+1)*4, 2T)
            blk = (Sn * w[:, n].reshape(-1, 1)).T @ Sn
            blk[np.diag_indices(width)] += np.tile(2.0 * self.R, self.T)
            H[n * width:(n + 1) * width, n * width:(n + 1) * width] = blk
        if rho > 0:
            rows = []
            C = self.circles(X)
            diff = C[:, self.pa, :, None, :] - C[:, self.pb, None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))
            g = cfg.d_safe - dist
            lc = np.zeros_like(g) if lam_c is None else lam_c
            act = self.pair_mask[:, :, None, None] & (lc + rho * g > 0)
            dh = np.stack([-np.sin(X[..., 2]), np.cos(X[..., 2])], axis=-1)
            for k, p, ca, cb in np.argwhere(act):
                a, b = self.pa[p], self.pb[p]
                unit = diff[k, p, ca, cb] / max(dist[k, p, ca, cb], 1e-12)
                row = np.zeros(self.V * width)
                ga = np.array([-unit[0], -unit[1], -self.offsets[ca] * unit @ dh[k, a]])
                gb = np.array([unit[0], unit[1], self.offsets[cb] * unit @ dh[k, b]])
                row[a * width:(a + 1) * width] += ga @ S[k, a, :3]
                row[b * width:(b + 1) * width] += gb @ S[k, b, :3]
                rows.append(row)
            lv = np.zeros((self.T + 1, self.V)) if lam_v is None else lam_v
            for k, n in np.argwhere(self.state_mask & (lv - rho * X[..., 3] > 0)):
                row = np.zeros(self.V * width)
                row[n * width:(n + 1) * width] = -S[k, n, 3]
                rows.append(row)
            if rows:
                G = np.array(rows)
                H += rho * G.T @ G
        cols = self._columns()
        return H[np.ix_(cols, cols)]

    # -- initial guess
    def track(self, lookahead: int = 8) -> np.ndarray:
        """Pure-pursuit steering plus proportional speed control along the references."""
        cfg = self.cfg
        U = np.zeros((self.T, self.V, 2))
        x = self.x0.copy()
        cols = np.arange(self.V)
        for k in range(self.T):
            tgt = self.ref[np.minimum(k + lookahead, self.N), cols]
            dx, dy = tgt[:, 0] - x[:, 0], tgt[:, 1] - x[:, 1]
            ld = np.maximum(np.hypot(dx, dy), 1.0)
            alpha = np.arctan2(dy, dx) - x[:, 2]
            alpha = (alpha + np.pi) % (2 * np.pi) - np.pi
            delta = np.arctan(2.0 * cfg.wheelbase * np.sin(alpha) / ld)
            nxt = self.ref[np.minimum(k + 1, self.N), cols]
            along = (nxt[:, 0] - x[:, 0]) * np.cos(x[:, 2]) + (nxt[:, 1] - x[:, 1]) * np.sin(x[:, 2])
            ahead = along - x[:, 3] * cfg.tau_s
            acc = (nxt[:, 3] - x[:, 3]) / (5 * cfg.tau_s) + ahead / cfg.tau_s ** 2 * 0.2
            U[k, :, 0] = np.clip(delta, -cfg.delta_max, cfg.delta_max)
            U[k, :, 1] = np.clip(acc, cfg.a_min, cfg.a_max)
            U[k] = np.where(self.ctrl_mask[k][:, None], U[k], 0.0)
            try:
                x = self.rollout_step(x, U[k])
            except KinematicDomain:
                U[k, :, 0] = 0.0
                x = self.rollout_step(x, U[k])
        return U

    def rollout_step(self, x, u):
        tau, b = self.cfg.tau_s, self.cfg.wheelbase
        f = f_r(x[:, 3], u[:, 0], tau, b)
        return np.stack([x[:, 0] + f * np.cos(x[:, 2]), x[:, 1] + f * np.sin(x[:, 2]),
                         x[:, 2] + np.arcsin(tau * x[:, 3] * np.sin(u[:, 0]) / b),
                         x[:, 3] + tau * u[:, 1]], axis=1)


def _violation(g_col, g_v) -> float:
    worst = max(float(np.max(g_col, initial=-np.inf)), float(np.max(g_v, initial=-np.inf)))
    return max(0.0, worst)


@dataclass
class InnerResult:
    z: np.ndarray
    value: float
    projected_gradient: float
    iterations: int
    trace: list[float]


def projected_gradient(z, grad, lo, hi) -> float:
    return float(np.abs(np.clip(z - grad, lo, hi) - z).max(initial=0.0))


def minimize_box(prob: TrackingOCP, z: np.ndarray, lam_c, lam_v, rho: float,
                 max_iter: int = 100, pg_tol: float = PG_TOL) -> InnerResult:
    """Projected Levenberg-Marquardt on the augmented Lagrangian.

    Variables sitting on a bound with the gradient pushing outward are frozen
    for the step; the rest take a damped Gauss-Newton step which is then
    projected onto the box. Steps are accepted only on strict decrease, so
    the recorded values are non-increasing.
    """
    lo = np.array([b[0] for b in prob.bounds])
    hi = np.array([b[1] for b in prob.bounds])
    z = np.clip(z, lo, hi)
    f, g = prob.evaluate(z, lam_c, lam_v, rho)
    trace = [f]
    mu = 1e-3
    it = 0
    stall = 0
    pg = projected_gradient(z, g, lo, hi)
    H = None
    while it < max_iter and pg > pg_tol:
        it += 1
        if H is None:
            H = prob.gauss_newton(z, lam_c, lam_v, rho)
        frozen = ((z <= lo + 1e-12) & (g > 0)) | ((z >= hi - 1e-12) & (g < 0))
        free = ~frozen
        Hf = H[np.ix_(free, free)]
        scale = np.maximum(np.diag(Hf), 1e-8)
        step = np.zeros_like(z)
        try:
            step[free] = -np.linalg.solve(Hf + mu * np.diag(scale), g[free])
        except np.linalg.LinAlgError:
            mu *= 10.0
            continue
        cand = np.clip(z + step, lo, hi)
        try:
            f_new, g_new = prob.evaluate(cand, lam_c, lam_v, rho)
        except KinematicDomain:
            f_new = math.inf
        if f_new < f:
            stall = stall + 1 if f - f_new <= 1e-13 * max(1.0, abs(f)) else 0
            z, f, g = cand, f_new, g_new
            trace.append(f)
            H = None
            mu = max(mu / 3.0, 1e-9)
            pg = projected_gradient(z, g, lo, hi)
            if stall >= 3:
                break
        else:
            mu *= 4.0
            if mu > 1e10:
                break
    return InnerResult(z, f, pg, it, trace)


def solve_ocp(refs: dict[int, np.ndarray], x0: dict[int, np.ndarray],
              settings: OCPSettings = OCPSettings(), max_outer: int = MAX_OUTER,
              violation_target: float = VIOLATION_TARGET) -> TrajectorySolution:
    """Joint tracking OCP for all vehicles; ``refs[i]`` holds the (N_i+1, 4) reference states."""
    prob = TrackingOCP(refs, x0, settings)
    start = {i: prob.x0[n] for n, i in enumerate(prob.ids)}
    early = validate_collisions({i: s[None] for i, s in start.items()}, settings.d_safe,
                                settings.d_f, settings.d_r)
    if not early.clean:
        raise InfeasibleStart(f"initial circles {early.worst[1:3]} only {early.min_distance:.4f} m "
                              f"apart (< {settings.d_safe})")

    def plain(c):
        try:
            return prob.evaluate(c)[0]
        except KinematicDomain:
            return math.inf

    # start from the better of the tracking controller and zero controls
    lo = np.array([b[0] for b in prob.bounds])
    hi = np.array([b[1] for b in prob.bounds])
    z = min([np.clip(prob.pack(prob.track()), lo, hi), np.zeros(prob.size)], key=plain)
    lam_c = np.zeros((prob.T + 1, len(prob.pa), 2, 2))
    lam_v = np.zeros((prob.T + 1, prob.V))
    rho = 100.0
    history: list[list[float]] = []
    viol = math.inf
    pg = math.inf
    outer = 0
    for outer in range(1, max_outer + 1):
        res = minimize_box(prob, z, lam_c, lam_v, rho, max_iter=settings.max_iter)
        for a, b_ in zip(res.trace, res.trace[1:]):
            assert b_ <= a, "objective increased across accepted iterations"
        history.append(res.trace)
        z, pg = res.z, res.projected_gradient
        g_col, g_v = prob.constraints(prob.rollout(prob.unpack(z)))
        new_viol = _violation(g_col, g_v)
        log.info("outer=%d rho=%.3g inner_iter=%d value=%.6g violation=%.3e pg=%.2e",
                 outer, rho, res.iterations, res.value, new_viol, pg)
        if new_viol <= violation_target:
            viol = new_viol
            break
        lam_c = np.maximum(0.0, lam_c + rho * g_col)
        lam_v = np.maximum(0.0, lam_v + rho * g_v)
        if new_viol > 0.25 * viol:
            rho *= 10.0
        viol = new_viol

    U = prob.unpack(z)
    X = prob.rollout(U)
    _, controls = prob.split(X, U)
    # returned states are the scalar rollout of the returned controls
    states = {i: rollout(start[i], controls[i], settings.tau_s, settings.wheelbase)
              for i in prob.ids}
    costs = prob.tracking_cost(X, U)
    step_cost = {i: costs[:prob.N[n] + 1, n].copy() for n, i in enumerate(prob.ids)}
    report = validate_collisions(states, settings.d_safe, settings.d_f, settings.d_r)
    converged = viol <= ACCEPT_VIOLATION
    msg = (f"max violation {viol:.3e} m after {outer} outer iterations, "
           f"projected gradient {pg:.2e}")
    if not converged:
        log.warning("trajectory optimisation did not converge: %s", msg)
    return TrajectorySolution(prob.ids, states, controls, step_cost, float(costs.sum()), report,
                              converged, viol, pg, outer, history, msg)


def plan_trajectories(decision, scenario, settings: OCPSettings | None = None,
                      **kwargs) -> tuple[dict[int, ReferenceTrajectory], TrajectorySolution]:
    """References from a decision and the joint OCP for all vehicles of ``scenario``."""
    cfg = settings or scenario.ocp
    refs = decision_to_reference(decision, scenario.graph, cfg.d_b, cfg.tau_s, cfg.trim)
    x0 = {v.id: initial_state(v.position, v.heading, v.v_init, cfg.d_b)
          for v in scenario.vehicles}
    sol = solve_ocp({i: r.states for i, r in refs.items()}, x0, cfg, **kwargs)
    return refs, sol


def gradient_check(prob: TrackingOCP, z: np.ndarray, lam_c=None, lam_v=None,
                   rho: float = 0.0, h: float = 1e-5) -> float:
    """Relative error between the adjoint gradient and central differences."""
    _, g = prob.evaluate(z, lam_c, lam_v, rho)
    fd = np.zeros_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        fd[k] = (prob.evaluate(z + e, lam_c, lam_v, rho)[0]
                 - prob.evaluate(z - e, lam_c, lam_v, rho)[0]) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
