"""Isotropic covariance tensors built from a Gaussian scalar covariance.

Every family here is written in the same closed form. With
``E = exp(-|z|^2 / 2 l^2)`` and ``s = |z| / l``::

    b(z) = E * [(1 - kN s^2) I + (kN - kL) z z^T / l^2]

so that ``B_L(r) = (1 - kL s^2) E`` and ``B_N(r) = (1 - kN s^2) E``.
The solenoidal family (stream function / divergence free) has ``kL = 0`` and
``kN = 1 / (d - 1)``; the potential (gradient) family has ``kL = 1`` and
``kN = 0``.  A mixture with solenoidal weight ``a`` interpolates both
coefficients linearly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

SOLENOIDAL = "solenoidal-gaussian"
POTENTIAL = "potential-gaussian"
MIXTURE = "mixture"
KINDS = (SOLENOIDAL, POTENTIAL, MIXTURE)

# taylor_radius search grid
TAYLOR_GRID_POINTS = 10_000
TAYLOR_GRID_SPAN = 5.0


class DomainError(ValueError):
    """Raised for arguments outside an operation's domain (e.g. r < 0)."""


class DegeneratePointError(ValueError):
    """Raised by :func:`spectrum_report` at ``z = 0``.

    The identity spectrum that applies at the origin is attached as
    ``fallback`` so callers can report it instead.
    """

    def __init__(self, message: str, fallback: "SpectrumReport"):
        super().__init__(message)
        self.fallback = fallback


@dataclass(frozen=True)
class CorrelationFamily:
    """Parametric pair of longitudinal/normal correlation functions."""

    kind: str = SOLENOIDAL
    length_scale: float = 1.0
    mix_weight: float = 0.5
    dimension: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.length_scale) and self.length_scale > 0):
            raise ValueError("length_scale must be a positive real")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError("mix_weight must lie in [0, 1]")
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ValueError("dimension must be an integer >= 2")

    # -- coefficients of the closed form --------------------------------
    @property
    def solenoidal_weight(self) -> float:
        if self.kind == SOLENOIDAL:
            return 1.0
        if self.kind == POTENTIAL:
            return 0.0
        return float(self.mix_weight)

    @property
    def k_longitudinal(self) -> float:
        return 1.0 - self.solenoidal_weight

    @property
    def k_normal(self) -> float:
        return self.solenoidal_weight / (self.dimension - 1)

    @property
    def beta_L(self) -> float:
        return (2.0 * self.k_longitudinal + 1.0) / self.length_scale**2

    @property
    def beta_N(self) -> float:
        return (2.0 * self.k_normal + 1.0) / self.length_scale**2

    def to_record(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "CorrelationFamily":
        return cls(
            kind=record.get("kind", SOLENOIDAL),
            length_scale=float(record.get("length_scale", 1.0)),
            mix_weight=float(record.get("mix_weight", 0.5)),
            dimension=int(record.get("dimension", 2)),
        )


def _profile(k: float, r: np.ndarray, ell: float):
    """Return q, q', q'' and 1 - q for q(r) = (1 - k s^2) exp(-s^2/2)."""
    s2 = (r / ell) ** 2
    e = np.exp(-0.5 * s2)
    q = (1.0 - k * s2) * e
    dq = -(r / ell**2) * e * (2.0 * k + 1.0 - k * s2)
    d2q = (e / ell**2) * (-(2.0 * k + 1.0) + (5.0 * k + 1.0) * s2 - k * s2 * s2)
    one_minus_q = -np.expm1(-0.5 * s2) + k * s2 * e
    return q, dq, d2q, one_minus_q


def _check_radius(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(~np.isfinite(r)):
        raise DomainError("correlation functions are defined for finite r >= 0")
    return r


def eval_correlations(family: CorrelationFamily, r):
    """Evaluate ``(B_L, B_L', B_L'', B_N, B_N', B_N'')`` at radius ``r``.

    ``r`` may be a scalar or an array; outputs have its shape.
    """
    r = _check_radius(r)
    ell = family.length_scale
    L = _profile(family.k_longitudinal, r, ell)
    N = _profile(family.k_normal, r, ell)
    return L[0], L[1], L[2], N[0], N[1], N[2]


def one_minus_correlations(family: CorrelationFamily, r):
    """``(1 - B_L(r), 1 - B_N(r))`` without cancellation at small ``r``."""
    r = _check_radius(r)
    ell = family.length_scale
    return (
        _profile(family.k_longitudinal, r, ell)[3],
        _profile(family.k_normal, r, ell)[3],
    )


def eval_tensor(family: CorrelationFamily, x) -> np.ndarray:
    """Covariance tensor ``b(x)``; ``x`` has shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    d = family.dimension
    if x.shape[-1] != d:
        raise ValueError(f"expected trailing dimension {d}, got shape {x.shape}")
    ell2 = family.length_scale**2
    s2 = np.sum(x * x, axis=-1) / ell2
    e = np.exp(-0.5 * s2)
    diag = (1.0 - family.k_normal * s2) * e
    cross = (family.k_normal - family.k_longitudinal) * e / ell2
    return diag[..., None, None] * np.eye(d) + cross[..., None, None] * (
        x[..., :, None] * x[..., None, :]
    )


def block_covariance(family: CorrelationFamily, points) -> np.ndarray:
    """Joint covariance of the field at ``n`` points, shape ``(n*d, n*d)``.

    Block ``(l, m)`` is ``b(x_l - x_m)``.  A leading batch axis is allowed:
    ``points`` of shape ``(B, n, d)`` gives ``(B, n*d, n*d)``.
    """
    pts = np.asarray(points, dtype=float)
    *batch, n, d = pts.shape
    diff = pts[..., :, None, :] - pts[..., None, :, :]
    blocks = eval_tensor(family, diff)  # (..., n, n, d, d)
    blocks = np.swapaxes(blocks, -3, -2)  # (..., n, d, n, d)
    return blocks.reshape(*batch, n * d, n * d)


def two_point_matrix(family: CorrelationFamily, x, y) -> np.ndarray:
    """The ``2d x 2d`` matrix ``[[I, b(x-y)], [b(x-y), I]]``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return block_covariance(family, np.stack([x, y]))


@dataclass(frozen=True)
class SpectrumReport:
    point: tuple
    eigenvalues_b: list
    eigenvalues_bbar: list

    def expanded(self, which: str = "b") -> np.ndarray:
        pairs = self.eigenvalues_b if which == "b" else self.eigenvalues_bbar
        return np.sort(np.concatenate([np.full(m, v) for v, m in pairs]))


def spectrum_report(family: CorrelationFamily, z) -> SpectrumReport:
    """Analytic spectra of ``b(z)`` and of the two-point matrix."""
    z = np.asarray(z, dtype=float)
    d = family.dimension
    r = float(np.linalg.norm(z))
    if r == 0.0:
        fallback = SpectrumReport(tuple(z), [(1.0, d)], [(2.0, d), (0.0, d)])
        raise DegeneratePointError("z = 0: b(0) is the identity", fallback)
    bl, _, _, bn, _, _ = eval_correlations(family, r)
    bl, bn = float(bl), float(bn)
    return SpectrumReport(
        point=tuple(z),
        eigenvalues_b=[(bl, 1), (bn, d - 1)],
        eigenvalues_bbar=[(1.0 + bl, 1), (1.0 - bl, 1), (1.0 + bn, d - 1), (1.0 - bn, d - 1)],
    )


@dataclass(frozen=True)
class LyapunovSpectrum:
    mu: tuple
    beta_L: float
    beta_N: float

    @property
    def top_positive(self) -> bool:
        return self.mu[0] > 0


def lyapunov_exponents(family: CorrelationFamily) -> LyapunovSpectrum:
    d = family.dimension
    bl, bn = family.beta_L, family.beta_N
    mu = tuple(0.5 * ((d - i) * bn - i * bl) for i in range(1, d + 1))
    return LyapunovSpectrum(mu=mu, beta_L=bl, beta_N=bn)


def taylor_remainder(family: CorrelationFamily, r) -> np.ndarray:
    """Normalised second-order Taylor remainder, max over B_L and B_N, over r^3."""
    r = _check_radius(r)
    om_l, om_n = one_minus_correlations(family, r)
    rem_l = np.abs(om_l - 0.5 * family.beta_L * r**2)
    rem_n = np.abs(om_n - 0.5 * family.beta_N * r**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.maximum(rem_l, rem_n) / r**3


def taylor_radius(family: CorrelationFamily, eps: float, n_grid: int = TAYLOR_GRID_POINTS) -> float:
    """Largest grid radius below which the normalised remainder stays under ``eps``.

    The grid is ``n_grid`` equally spaced points on ``(0, 5 l]``.  The returned
    value is the first grid point where the bound fails (the bound holds on
    every grid point strictly below it), or the grid's upper end.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    top = TAYLOR_GRID_SPAN * family.length_scale
    grid = np.linspace(top / n_grid, top, n_grid)
    bad = np.flatnonzero(~(taylor_remainder(family, grid) < eps))
    if bad.size == 0:
        return float(top)
    return float(grid[bad[0]])


@dataclass
class ValidationReport:
    passed: bool
    min_eigenvalues: list = field(default_factory=list)
    offending: int | None = None


def validate_family(
    family: CorrelationFamily, sample_points: Sequence, tol: float = 1e-10
) -> ValidationReport:
    """Spot-check positive semidefiniteness of the block covariance."""
    mins = []
    offending = None
    for idx, pts in enumerate(sample_points):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[0] > 64:
            raise ValueError(f"point set {idx} has {pts.shape[0]} points; at most 64 allowed")
        lam = float(np.linalg.eigvalsh(block_covariance(family, pts))[0])
        mins.append(lam)
        if lam < -tol and offending is None:
            offending = idx
    return ValidationReport(passed=offending is None, min_eigenvalues=mins, offending=offending)
