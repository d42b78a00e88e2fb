"""The separation diffusion of two tracked points and an explicit Lyapunov function for it.

The distance ``rho`` between two points carried by the flow solves::

    d rho = (d - 1) (1 - B_N(rho)) / rho dt + sqrt(2 (1 - B_L(rho))) dW

:func:`build_lyapunov_f` assembles a strictly increasing C^2 function ``f``
(logarithmic near 0, square-root in between, linear at infinity, glued by a
small correction ``h``) such that ``f(rho_t)`` has drift bounded below by
``(beta_N (d - 1) - beta_L) / 8`` whenever the top Lyapunov exponent is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .covariance import CorrelationFamily, lyapunov_exponents, one_minus_correlations, taylor_radius
from .seeds import derive_seed, make_rng

RADIAL_FLOOR = 1e-12
GRID_POINTS = 10_000
GRID_LOW = 1e-4


class PreconditionError(ValueError):
    """The construction needs a positive top Lyapunov exponent."""


# --------------------------------------------------------------------------
# coefficients and simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialCoefficients:
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    dimension: int = 2


def radial_coefficients(family: CorrelationFamily, d: int | None = None) -> RadialCoefficients:
    d = family.dimension if d is None else int(d)
    if d < 2:
        raise ValueError("dimension must be at least 2")

    def drift(r):
        r = np.asarray(r, dtype=float)
        _, om_n = one_minus_correlations(family, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, (d - 1) * om_n / np.where(r > 0, r, 1.0), 0.0)

    def diffusion(r):
        om_l, _ = one_minus_correlations(family, np.asarray(r, dtype=float))
        return np.sqrt(2.0 * np.clip(om_l, 0.0, None))

    return RadialCoefficients(drift, diffusion, d)


def simulate_radial(coeffs: RadialCoefficients, r0: float, horizon: float, dt: float, rng) -> np.ndarray:
    """Euler-Maruyama path ``rho_0 .. rho_N`` with ``N = round(horizon / dt)``."""
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    return simulate_radial_ensemble(coeffs, np.array([r0]), horizon, dt, rng, keep_path=True)[:, 0]


def simulate_radial_ensemble(
    coeffs: RadialCoefficients, r0, horizon: float, dt: float, rng, keep_path: bool = False
) -> np.ndarray:
    """Independent paths started from the entries of ``r0``.

    Returns final values, or the full ``(N + 1, len(r0))`` array with ``keep_path``.
    The state never drops below ``1e-12``.
    """
    rng = make_rng(rng)
    r = np.array(r0, dtype=float, copy=True).ravel()
    n_steps = int(round(horizon / dt)) if dt > 0 else 0
    sq = math.sqrt(dt) if dt > 0 else 0.0
    path = [r.copy()] if keep_path else None
    for _ in range(n_steps):
        z = rng.standard_normal(r.shape)
        r = np.maximum(r + coeffs.drift(r) * dt + coeffs.diffusion(r) * sq * z, RADIAL_FLOOR)
        if keep_path:
            path.append(r.copy())
    return np.array(path) if keep_path else r


# --------------------------------------------------------------------------
# bridge h
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BridgeH:
    """Decreasing C^2 correction on ``[c8, c9]`` with prescribed end curvatures.

    ``h''`` is a linear ramp from ``c10`` up to 0 on ``[c8, a]`` plus a ramp
    from 0 up to ``c11`` on ``[b, c9]`` (the two add if they overlap).
    """

    c8: float
    c9: float
    c10: float
    c11: float
    delta_cap: float
    eps_h: float

    @property
    def span(self) -> float:
        return self.c9 - self.c8

    @property
    def a(self) -> float:
        return self.c8 - 2 * self.eps_h * self.span / self.c10

    @property
    def b(self) -> float:
        return self.c9 - 2 * self.eps_h * self.span / self.c11

    @property
    def k1(self) -> float:
        return self.c10**2 / (2 * self.eps_h * self.span)

    @property
    def k2(self) -> float:
        return self.c11**2 / (2 * self.eps_h * self.span)

    def _parts(self, r):
        r = np.asarray(r, dtype=float)
        k1, k2 = self.k1, self.k2
        # ramp widths; offsets are taken from c8 and c9 so that the end
        # conditions come out exact to rounding
        w1 = -2 * self.eps_h * self.span / self.c10
        w2 = 2 * self.eps_h * self.span / self.c11
        plateau = -self.eps_h * self.span
        x = r - self.c8  # first ramp occupies x in [0, w1]
        on1 = x <= w1
        u = np.minimum(x, w1) - w1
        d2_1 = np.where(on1, u * k1, 0.0)
        d1_1 = np.where(on1, 0.5 * k1 * (u**2 - w1**2), plateau)
        h_w1 = k1 * (w1**3 / 6 - w1**3 / 2)
        h_1 = np.where(on1, k1 * (u**3 / 6 + w1**3 / 6 - w1**2 * x / 2), h_w1 + plateau * (x - w1))
        v = np.maximum((r - self.c9) + w2, 0.0)  # second ramp
        d2_2 = v * k2
        d1_2 = 0.5 * k2 * v**2
        h_2 = k2 * v**3 / 6
        return h_1 + h_2, d1_1 + d1_2, d2_1 + d2_2

    def value(self, r):
        return self._parts(r)[0]

    def d1(self, r):
        return self._parts(r)[1]

    def d2(self, r):
        return self._parts(r)[2]

    def to_record(self) -> dict:
        return dict(c8=self.c8, c9=self.c9, c10=self.c10, c11=self.c11,
                    delta_cap=self.delta_cap, eps_h=self.eps_h)


def build_bridge_h(c8: float, c9: float, c10: float, c11: float, delta_cap: float) -> BridgeH:
    if not 0 < c8 < c9:
        raise ValueError("need 0 < c8 < c9")
    if not c10 < 0 < c11:
        raise ValueError("need c10 < 0 < c11")
    if not delta_cap > 0:
        raise ValueError("delta_cap must be positive")
    eps_h = min(0.49 * min(c11, -c10), delta_cap / (c9 - c8))
    # keep the plateau |h'| = eps_h (c9 - c8) from exceeding the cap by an ulp
    while eps_h * (c9 - c8) > delta_cap:
        eps_h = math.nextafter(eps_h, 0.0)
    return BridgeH(float(c8), float(c9), float(c10), float(c11), float(delta_cap), float(eps_h))


# --------------------------------------------------------------------------
# the three-branch function f
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseLyapunov:
    family: CorrelationFamily
    dimension: int
    eps: float
    r_eps: float
    delta: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c8: float
    c9: float
    c10: float
    c11: float
    bridge: BridgeH

    @property
    def drift_floor(self) -> float:
        f = self.family
        return 0.125 * (f.beta_N * (self.dimension - 1) - f.beta_L)

    def _branches(self, r):
        r = np.asarray(r, dtype=float)
        low = r < self.c8
        high = r >= self.c9
        return r, low, high, ~(low | high)

    def value(self, r):
        r, low, high, mid = self._branches(r)
        safe = np.where(r > 0, r, 1.0)
        with np.errstate(divide="ignore"):
            out = np.where(low, np.log(safe) + self.c2 + self.c1, 0.0)
        out = np.where(mid, self.c3 * np.sqrt(r) + self.bridge.value(r) + self.c1, out)
        out = np.where(high, (self.c4 * r + self.c5) + self.c1, out)
        out = np.where(r > 0, out, -np.inf)
        return out if out.ndim else float(out)

    def d1(self, r):
        r, low, high, mid = self._branches(r)
        safe = np.where(r > 0, r, np.inf)
        out = np.where(low, 1.0 / safe, self.c4)
        out = np.where(mid, 1.0 / np.sqrt(self.c8 * r) + self.bridge.d1(r), out)
        return out if out.ndim else float(out)

    def d2(self, r):
        r, low, high, mid = self._branches(r)
        safe = np.where(r > 0, r, np.inf)
        out = np.where(low, -1.0 / safe**2, 0.0)
        out = np.where(mid, -1.0 / (2 * r * np.sqrt(self.c8 * r)) + self.bridge.d2(r), out)
        return out if out.ndim else float(out)

    def branch_values(self, r: float) -> dict:
        """Value and derivatives of each branch formula at ``r`` (ignoring its range)."""
        h = self.bridge
        sq = math.sqrt(self.c8 * r)
        return {
            "log": (math.log(r) + self.c2 + self.c1, 1 / r, -1 / r**2),
            "sqrt": (
                self.c3 * math.sqrt(r) + float(h.value(r)) + self.c1,
                1 / sq + float(h.d1(r)),
                -1 / (2 * r * sq) + float(h.d2(r)),
            ),
            "linear": ((self.c4 * r + self.c5) + self.c1, self.c4, 0.0),
        }

    def to_record(self) -> dict:
        rec = {k: getattr(self, k) for k in (
            "dimension", "eps", "r_eps", "delta", "c1", "c2", "c3", "c4", "c5",
            "c8", "c9", "c10", "c11")}
        rec["family"] = self.family.to_record()
        rec["bridge"] = self.bridge.to_record()
        return rec


def verification_grid(c9: float = 1.0, n: int = GRID_POINTS) -> np.ndarray:
    """``n`` points spread over ``(1e-4, 10 max(1, c9)]``."""
    return np.linspace(GRID_LOW, 10.0 * max(1.0, c9), n + 1)[1:]


def build_lyapunov_f(family: CorrelationFamily, d: int | None = None) -> PiecewiseLyapunov:
    d = family.dimension if d is None else int(d)
    bl, bn = family.beta_L, family.beta_N
    gap = bn * (d - 1) - bl
    if lyapunov_exponents(family).mu[0] <= 0 or gap <= 0:
        raise PreconditionError("the construction needs a positive top Lyapunov exponent")
    ratio = bn * (d - 1) / bl
    eps = min(
        1.0,
        gap / (8 * (d - 1)),
        gap / 24 * (bl / (bn * (d - 1))) ** (1 / 3),
        gap / 24 * ratio ** (-4 / 3),
    )
    r_eps = taylor_radius(family, eps)
    c9 = min(r_eps, 1.0)
    c8 = c9 * ratio ** (-2 / 3)
    grid = verification_grid(c9)
    sup_ratio = float(np.max(one_minus_correlations(family, grid)[1] / c8))
    delta = gap / 24 / sup_ratio / (d - 1)
    c10 = -1.0 / (2 * c8**2)
    c11 = 1.0 / (2 * c9 * math.sqrt(c8 * c9))
    bridge = build_bridge_h(c8, c9, c10, c11, delta)
    c3 = 2.0 / math.sqrt(c8)
    c2 = 2.0 - math.log(c8)
    c4 = 1.0 / math.sqrt(c8 * c9)
    c5 = math.sqrt(c9 / c8) + float(bridge.value(c9))
    c1 = -c4 - c5
    return PiecewiseLyapunov(
        family=family, dimension=d, eps=eps, r_eps=r_eps, delta=delta,
        c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, c8=c8, c9=c9, c10=c10, c11=c11, bridge=bridge,
    )


def eval_g(f: PiecewiseLyapunov, r):
    """Drift of ``f(rho_t)``: ``f'(r)(d-1)(1-B_N)/r + f''(r)(1-B_L)``."""
    r = np.asarray(r, dtype=float)
    om_l, om_n = one_minus_correlations(f.family, r)
    return f.d1(r) * (f.dimension - 1) * om_n / r + f.d2(r) * om_l


def eval_gtilde(f: PiecewiseLyapunov, r):
    """Diffusion coefficient of ``f(rho_t)``: ``f'(r) sqrt(2(1-B_L))``."""
    r = np.asarray(r, dtype=float)
    om_l, _ = one_minus_correlations(f.family, r)
    return f.d1(r) * np.sqrt(2.0 * om_l)


def gtilde_bound(f: PiecewiseLyapunov) -> float:
    """Upper bound ``sqrt(beta_L) + sqrt(2) + |f'(c8)| sup sqrt(2(1-B_L))``."""
    grid = verification_grid(f.c9)
    om_l, _ = one_minus_correlations(f.family, grid)
    return math.sqrt(f.family.beta_L) + math.sqrt(2) + abs(f.d1(f.c8)) * float(np.sqrt(2 * om_l).max())


# --------------------------------------------------------------------------
# Monte Carlo submartingale check
# --------------------------------------------------------------------------


@dataclass
class DriftEstimate:
    r0: float
    mean_increment: float
    std_error: float
    passed: bool

    def to_record(self) -> dict:
        return dict(r0=self.r0, mean_increment=self.mean_increment,
                    std_error=self.std_error, passed=self.passed)


@dataclass
class SubmartingaleReport:
    estimates: list = field(default_factory=list)
    passed: bool | None = None

    def to_record(self) -> dict:
        return {"passed": self.passed, "estimates": [e.to_record() for e in self.estimates]}


def submartingale_check(
    f: PiecewiseLyapunov,
    r0_grid: Sequence[float],
    horizon: float,
    dt: float,
    replicas: int,
    seed: int,
) -> SubmartingaleReport:
    """Estimate ``E[f(rho_T)] - f(r0)`` per starting radius; pass iff each is >= -2 SE."""
    report = SubmartingaleReport()
    if replicas <= 0:
        return report
    coeffs = radial_coefficients(f.family, f.dimension)
    for k, r0 in enumerate(r0_grid):
        start = np.full(replicas, float(r0))
        final = simulate_radial_ensemble(coeffs, start, horizon, dt, derive_seed(seed, k))
        inc = f.value(final) - f.value(float(r0))
        mean = float(inc.mean())
        se = float(inc.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("inf")
        report.estimates.append(DriftEstimate(float(r0), mean, se, mean >= -2 * se))
    report.passed = all(e.passed for e in report.estimates)
    return report
