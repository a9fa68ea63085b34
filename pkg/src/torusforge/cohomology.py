"""Small-divisor solvers for the three constant-coefficient equations

    L_a f          = g        (tangent, zero-average data)
    L_a f + A f    = g        (normal relocation, A diagonalizable)
    L_a F + [A, F] = G        (straightening of the first-order dynamics)

together with the Diophantine-condition verifier.  ``L_a`` is the derivative
along the constant field ``a``; every equation is solved mode by mode in
Fourier space.  Any retained mode whose divisor falls below ``DIVISOR_FLOOR``
aborts rather than amplify noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DefectiveMatrix, ExactResonance, NonZeroAverage,
                     NonZeroDiagonalAverage, ResonantMode, SmallDivisor)
from .fourier import FourierSeries, weighted_norm

DIVISOR_FLOOR = 1e-13
ZERO_AVG_REL = 1e-13
COND_LIMIT = 1e8


# ----------------------------------------------------------------------
# Diophantine condition
# ----------------------------------------------------------------------

@dataclass
class DiophantineParams:
    """Non-resonance data: |i k.alpha + l.a| >= gamma / (1+|k|)^tau."""

    gamma: float
    tau: float
    alpha: np.ndarray
    eigs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    verified: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.eigs = np.asarray(self.eigs, dtype=complex).ravel()
        if self.gamma <= 0 or self.tau <= 0:
            raise ValueError("gamma and tau must be positive")


@dataclass
class ConditionReport:
    ok: bool
    worst_divisor: float
    worst_margin: float
    k: tuple
    l: tuple

    def to_dict(self):
        return {"ok": bool(self.ok), "worst_divisor": float(self.worst_divisor),
                "worst_margin": float(self.worst_margin),
                "k": list(self.k), "l": list(self.l)}


@dataclass
class DiophantineReport:
    conditions: dict

    @property
    def ok(self):
        return all(c.ok for c in self.conditions.values())

    def to_dict(self):
        return {name: rep.to_dict() for name, rep in self.conditions.items()}


def _lattice(n: int, kmax: int) -> np.ndarray:
    """All k in Z^n with 0 < |k|_1 <= kmax, as an (N, n) array."""
    ax = np.arange(-kmax, kmax + 1)
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    k = np.stack([g.ravel() for g in grids], axis=1)
    l1 = np.abs(k).sum(axis=1)
    return k[(l1 > 0) & (l1 <= kmax)]

def check_diophantine(p: DiophantineParams, kmax: int, *, extend_time: bool = False
                      ) -> DiophantineReport:
    """Scan 0 < |k|_1 <= kmax for the three divisor families.

    With ``extend_time`` the frequency vector is augmented to (alpha, 1),
    the convention for periodically forced systems where a rational scalar
    frequency is resonant.  Failure is a report, never an exception.
    """
    alpha = np.concatenate([p.alpha, [1.0]]) if extend_time else p.alpha
    n = alpha.shape[0]
    if kmax < 1:
        raise ValueError("kmax >= 1 required")
    k = _lattice(n, kmax)
    l1 = np.abs(k).sum(axis=1)
    ka = k @ alpha
    conditions = {}

    # |k.alpha| >= gamma / |k|^tau
    div = np.abs(ka)
    margin = div * l1**p.tau / p.gamma
    i = int(np.argmin(margin))
    conditions["tangent"] = ConditionReport(
        bool(margin[i] >= 1.0), float(div[i]), float(margin[i]),
        tuple(int(x) for x in k[i]), ())

    if p.eigs.size:
        # |i k.alpha + a_j| >= gamma / (1+|k|)^tau, k = 0 included
        k0 = np.vstack([np.zeros((1, n), dtype=int), k])
        ka0 = np.concatenate([[0.0], ka])
        l10 = np.concatenate([[0], l1])
        best = (math.inf, math.inf, (), ())
        for j, a in enumerate(p.eigs):
            div = np.abs(1j * ka0 + a)
            m = div * (1.0 + l10)**p.tau / p.gamma
            i = int(np.argmin(m))
            if m[i] < best[1]:
                lvec = tuple(1 if jj == j else 0 for jj in range(p.eigs.size))
                best = (float(div[i]), float(m[i]),
                        tuple(int(x) for x in k0[i]), lvec)
        conditions["normal"] = ConditionReport(best[1] >= 1.0, *best)

        # |i k.alpha + l.a| >= gamma / (1+|k|)^tau for |l| = 2
        ls = []
        mm = p.eigs.size
        for j1 in range(mm):
            for j2 in range(mm):
                for s1, s2 in ((1, 1), (1, -1)):
                    l = [0] * mm
                    l[j1] += s1
                    l[j2] += s2
                    if sum(map(abs, l)) == 2:
                        ls.append(tuple(l))
        best = (math.inf, math.inf, (), ())
        for l in sorted(set(ls)):
            la = np.dot(l, p.eigs)
            div = np.abs(1j * ka0 + la)
            m = div * (1.0 + l10)**p.tau / p.gamma
            keep = ~((l10 == 0) & (abs(la) == 0.0))  # (k,l) != (0,0)
            if not keep.any():
                continue
            mi = np.where(keep, m, math.inf)
            i = int(np.argmin(mi))
            if mi[i] < best[1]:
                best = (float(div[i]), float(mi[i]),
                        tuple(int(x) for x in k0[i]), l)
        conditions["first_order"] = ConditionReport(best[1] >= 1.0, *best)

    report = DiophantineReport(conditions)
    p.verified = {"kmax": kmax, "extend_time": extend_time,
                  "ok": {name: c.ok for name, c in conditions.items()}}
    return report


def estimate_gamma(alpha, tau: float, kmax: int) -> float:
    """min over 0 < |k|_1 <= kmax of |k.alpha| |k|^tau.

    Raises :class:`ExactResonance` if some k.alpha vanishes on the scan.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    k = _lattice(alpha.shape[0], kmax)
    ka = np.abs(k @ alpha)
    l1 = np.abs(k).sum(axis=1)
    floor = 1e-15 * np.maximum(1.0, l1 * np.abs(alpha).max())
    res = ka < floor
    if res.any():
        kr = k[int(np.nonzero(res)[0][0])]
        raise ExactResonance(f"k.alpha = 0 at k = {tuple(int(x) for x in kr)}")
    return float((ka * l1**tau).min())


# ----------------------------------------------------------------------
# mode-by-mode solvers
# ----------------------------------------------------------------------

def _stack_modes(gs: list[FourierSeries]):
    """Union of two-sided modes of the components, with a value matrix."""
    modes = sorted({k for g in gs for k, _ in g.items()})
    vals = np.zeros((len(modes), len(gs)), dtype=complex)
    index = {k: i for i, k in enumerate(modes)}
    for j, g in enumerate(gs):
        for k, c in g.items():
            vals[index[k], j] = c
    return modes, vals


def _series_from_columns(modes, vals, dim, order, tails):
    out = []
    for j in range(vals.shape[1]):
        coeffs = {k: vals[i, j] for i, k in enumerate(modes)}
        out.append(FourierSeries(dim, order, coeffs, tail=tails[j]))
    return out


def eigendecomposition(A):
    """Eigen data (eigs, P, Pinv) for a diagonalizable matrix, gated on cond(P)."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if A.shape[0] == 1:
        return A.ravel(), np.eye(1, dtype=complex), np.eye(1, dtype=complex)
    eigs, P = np.linalg.eig(A)
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DefectiveMatrix(f"eigenvector condition number {cond:.2e} > {COND_LIMIT:.0e}")
    return eigs, P, np.linalg.inv(P)


def solve_tangent(g: FourierSeries, alpha, *, floor: float = DIVISOR_FLOOR
                  ) -> FourierSeries:
    """Unique zero-average f with L_alpha f = g; g must be average-free."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.shape[0] != g.dim:
        raise ValueError("alpha length must match dim")
    gnorm = weighted_norm(g)
    if abs(g.average()) > ZERO_AVG_REL * max(gnorm, 1e-300):
        raise NonZeroAverage(
            f"|average| = {abs(g.average()):.2e} exceeds {ZERO_AVG_REL:.0e} x |g|_0")
    out = {}
    zero = (0,) * g.dim
    for k, c in g._c.items():
        if k == zero:
            continue  # set exactly to zero average
        ka = float(np.dot(k, alpha))
        if abs(ka) < floor:
            raise ResonantMode(f"divisor |k.alpha| = {abs(ka):.2e} at k = {k}",
                               k=k, divisor=ka)
        out[k] = c / (1j * ka)
    return FourierSeries._raw(g.dim, g.order, out, g.tail)


def solve_normal(g, alpha, A, *, floor: float = DIVISOR_FLOOR
                 ) -> list[FourierSeries]:
    """f with L_alpha f + A f = g, componentwise in the eigenbasis of A."""
    gs = [g] if isinstance(g, FourierSeries) else list(g)
    alpha = np.asarray(alpha, dtype=float).ravel()
    if np.isscalar(A) or (hasattr(A, "shape") and np.asarray(A).ndim == 0):
        A = np.array([[float(A)]])
    eigs, P, Pinv = eigendecomposition(A)
    m = len(gs)
    if eigs.shape[0] != m:
        raise ValueError("A size must match number of components")
    modes, vals = _stack_modes(gs)
    if not modes:
        return [FourierSeries.zero(gs[0].dim, gs[0].order) for _ in range(m)]
    ka = np.array([float(np.dot(k, alpha)) for k in modes])
    div = 1j * ka[:, None] + eigs[None, :]
    bad = np.abs(div) < floor
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise SmallDivisor(
            f"divisor |i k.alpha + a_{j}| = {abs(div[i, j]):.2e} at k = {modes[i]}",
            k=modes[i], divisor=div[i, j])
    ft = (vals @ Pinv.T) / div
    f = ft @ P.T
    return _series_from_columns(modes, f, gs[0].dim, gs[0].order,
                                [g_.tail for g_ in gs])


def solve_matrix(G, alpha, A, *, floor: float = DIVISOR_FLOOR
                 ) -> list[list[FourierSeries]]:
    """F with L_alpha F + [A, F] = G; conjugated diagonal entries must be
    average-free and come back normalized to zero average."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    if np.isscalar(A) or (hasattr(A, "shape") and np.asarray(A).ndim == 0):
        A = np.array([[float(A)]])
    eigs, P, Pinv = eigendecomposition(A)
    m = eigs.shape[0]
    rows = [list(r) for r in G]
    if len(rows) != m or any(len(r) != m for r in rows):
        raise ValueError("G must be m x m")
    dim, order = rows[0][0].dim, rows[0][0].order
    flat = [rows[i][j] for i in range(m) for j in range(m)]
    modes, vals = _stack_modes(flat)
    if not modes:
        return [[FourierSeries.zero(dim, order) for _ in range(m)] for _ in range(m)]
    # conjugate: Gt = Pinv G P, entrywise on mode vectors
    V = vals.reshape(len(modes), m, m)
    Vt = np.einsum("ia,kab,bj->kij", Pinv, V, P)
    ka = np.array([float(np.dot(k, alpha)) for k in modes])
    gap = eigs[:, None] - eigs[None, :]
    div = 1j * ka[:, None, None] + gap[None, :, :]
    zero_idx = modes.index((0,) * dim) if (0,) * dim in modes else None
    gscale = max(weighted_norm(s) for s in flat)
    Ft = np.zeros_like(Vt)
    for i in range(m):
        for j in range(m):
            col = Vt[:, i, j]
            d = div[:, i, j]
            if i == j:
                if zero_idx is not None and abs(col[zero_idx]) > ZERO_AVG_REL * max(gscale, 1e-300):
                    raise NonZeroDiagonalAverage(
                        f"conjugated diagonal entry ({i},{i}) has average "
                        f"{abs(col[zero_idx]):.2e}")
                sel = np.abs(ka) > 0
            else:
                sel = np.ones(len(modes), dtype=bool)
            small = sel & (np.abs(d) < floor)
            if small.any():
                ii = int(np.nonzero(small)[0][0])
                raise SmallDivisor(
                    f"divisor {abs(d[ii]):.2e} at k = {modes[ii]}, entry ({i},{j})",
                    k=modes[ii], divisor=d[ii])
            Ft[sel, i, j] = col[sel] / d[sel]
    F = np.einsum("ia,kab,bj->kij", P, Ft, Pinv)
    cols = F.reshape(len(modes), m * m)
    tails = [rows[i][j].tail for i in range(m) for j in range(m)]
    out_flat = _series_from_columns(modes, cols, dim, order, tails)
    return [[out_flat[i * m + j] for j in range(m)] for i in range(m)]
