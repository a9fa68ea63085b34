"""Truncated Fourier series on T^n and polynomial jets in the normal variables.

Conventions
-----------
The torus is ``R^n / 2pi Z^n`` and a series is ``sum_k c_k e^{i k.theta}``
with integer multi-indices ``|k|_1 <= order``.  All series represent real
functions: only the canonical half of the spectrum is stored (``k = 0`` or
first nonzero component positive), the other half being the complex
conjugate.  The weighted norm is ``|f|_s = sum_k |c_k| e^{|k|_1 s}``.

Products are computed by zero-padded FFTs large enough that the full
convolution is exact, then truncated back to the working band; the l1 mass
dropped by any truncation is accumulated in the (purely diagnostic) ``tail``
attribute.

`RJet` is a polynomial in the normal variables ``r = (r_1..r_m)`` with
`FourierSeries` coefficients; `VectorFieldJet` packages n tangent and m
normal jets, optionally tagged with the straight-dynamics data ``(alpha, A)``.
All values are immutable after construction and every operation is pure.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CompositionDivergence

PRUNE_REL = 1e-16
DEFAULT_ORDER = 32

Mode = tuple


def canonical_mode(k):
    """Canonical representative of the pair {k, -k} and a conjugation flag."""
    for kj in k:
        if kj > 0:
            return tuple(k), False
        if kj < 0:
            return tuple(-int(x) for x in k), True
    return tuple(k), False


@lru_cache(maxsize=128)
def _mode_grids(size: int, dim: int):
    ax = np.fft.fftfreq(size, 1.0 / size).astype(np.int64)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    kcols = np.stack([g.ravel() for g in grids])
    l1 = np.abs(kcols).sum(axis=0)
    canon = np.ones(kcols.shape[1], dtype=bool)
    undecided = np.ones_like(canon)
    for row in kcols:
        canon &= ~(undecided & (row < 0))
        undecided &= row == 0
    return kcols, l1, canon


class FourierSeries:
    """Real truncated Fourier series on T^dim, modes ``|k|_1 <= order``."""

    __slots__ = ("dim", "order", "tail", "_c", "_dense")

    def __init__(self, dim: int, order: int,
                 coeffs: Mapping | Iterable | None = None, *, tail: float = 0.0):
        if dim < 1 or order < 0:
            raise ValueError("need dim >= 1 and order >= 0")
        self.dim = int(dim)
        self.order = int(order)
        self.tail = float(tail)
        self._dense = None
        buckets: dict[Mode, list] = {}
        items = coeffs.items() if isinstance(coeffs, Mapping) else (coeffs or ())
        dropped = 0.0
        for k, c in items:
            k = tuple(int(x) for x in k)
            if len(k) != dim:
                raise ValueError(f"mode {k} does not match dim {dim}")
            c = complex(c)
            if sum(abs(x) for x in k) > self.order:
                dropped += abs(c)
                continue
            kc, conj = canonical_mode(k)
            buckets.setdefault(kc, []).append(c.conjugate() if conj else c)
        zero = (0,) * dim
        raw = {}
        for k in sorted(buckets):
            c = sum(buckets[k]) / len(buckets[k])
            if k == zero:
                c = complex(c.real, 0.0)
            raw[k] = c
        self.tail += dropped
        self._c = _pruned(raw)

    @classmethod
    def _raw(cls, dim, order, cdict, tail=0.0):
        out = cls.__new__(cls)
        out.dim, out.order, out.tail = int(dim), int(order), float(tail)
        out._c = cdict
        out._dense = None
        return out

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, dim, order=DEFAULT_ORDER):
        return cls._raw(dim, order, {})

    @classmethod
    def constant(cls, dim, value, order=DEFAULT_ORDER):
        v = float(value)
        return cls._raw(dim, order, {(0,) * dim: complex(v)} if v != 0.0 else {})

    @classmethod
    def cosine(cls, dim, k, amplitude=1.0, order=DEFAULT_ORDER):
        """amplitude * cos(k.theta)."""
        kc, _ = canonical_mode(tuple(k))
        return cls(dim, order, {kc: 0.5 * amplitude})

    @classmethod
    def sine(cls, dim, k, amplitude=1.0, order=DEFAULT_ORDER):
        """amplitude * sin(k.theta)."""
        kc, conj = canonical_mode(tuple(k))
        c = 0.5j * amplitude if conj else -0.5j * amplitude
        return cls(dim, order, {kc: c})

    @classmethod
    def from_function(cls, fn, dim, order=DEFAULT_ORDER, grid=None):
        """Sample ``fn`` on a uniform grid and take the forward transform."""
        size = grid or max(4 * order, 8)
        axes = [2.0 * np.pi * np.arange(size) / size] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        vals = np.asarray(fn(*mesh), dtype=float)
        box = np.fft.fftn(vals) / size**dim
        return _from_box(box, dim, order)

    # -- accessors ----------------------------------------------------
    def coeff(self, k) -> complex:
        kc, conj = canonical_mode(tuple(int(x) for x in k))
        c = self._c.get(kc, 0.0 + 0.0j)
        return c.conjugate() if conj else c

    def average(self) -> float:
        return self._c.get((0,) * self.dim, 0.0 + 0.0j).real

    def items(self):
        """Iterate over the full (two-sided) spectrum."""
        zero = (0,) * self.dim
        for k, c in self._c.items():
            yield k, c
            if k != zero:
                yield tuple(-x for x in k), c.conjugate()

    def modes(self):
        return self._c.keys()

    def is_zero(self) -> bool:
        return not self._c

    def __len__(self):
        return len(self._c)

    # -- arithmetic ---------------------------------------------------
    def _binary(self, other, sign):
        if isinstance(other, (int, float)):
            other = FourierSeries.constant(self.dim, other, self.order)
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        out = dict(self._c)
        for k, c in other._c.items():
            out[k] = out.get(k, 0.0 + 0.0j) + sign * c
        return FourierSeries._raw(self.dim, max(self.order, other.order),
                                  _pruned(out), self.tail + other.tail)

    def __add__(self, other):
        return self._binary(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def scaled(self, a: float):
        a = float(a)
        return FourierSeries._raw(
            self.dim, self.order, {k: a * c for k, c in self._c.items()},
            abs(a) * self.tail)

    def __mul__(self, a):
        if isinstance(a, FourierSeries):
            return multiply(self, a)
        return self.scaled(a)

    __rmul__ = __mul__

    # -- evaluation ---------------------------------------------------
    def dense_box(self):
        """Coefficients in a dense (2*order+1)^dim array, fft index layout."""
        if self._dense is None:
            size = 2 * self.order + 1
            arr = np.zeros((size,) * self.dim, dtype=complex)
            zero = (0,) * self.dim
            for k, c in self._c.items():
                arr[tuple(x % size for x in k)] = c
                if k != zero:
                    arr[tuple(-x % size for x in k)] = c.conjugate()
            self._dense = arr
        return self._dense

    def evaluate(self, thetas) -> np.ndarray:
        """Evaluate at arbitrary angles; ``thetas`` is (dim, P) (or (P,) if dim=1)."""
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        if th.shape[0] != self.dim:
            raise ValueError("theta array must have shape (dim, P)")
        emats = [_phase_matrix(th[j], self.order) for j in range(self.dim)]
        return _eval_dense(self.dense_box(), emats).real

    def grid_values(self, size: int) -> np.ndarray:
        """Values on the uniform size^dim grid (exact trigonometric evaluation)."""
        arr = np.zeros((size,) * self.dim, dtype=complex)
        zero = (0,) * self.dim
        for k, c in self._c.items():
            arr[tuple(x % size for x in k)] += c
            if k != zero:
                arr[tuple(-x % size for x in k)] += c.conjugate()
        return (np.fft.ifftn(arr) * size**self.dim).real

    # -- serialization ------------------------------------------------
    def to_dict(self):
        coeffs = [[*k, c.real, c.imag] for k, c in sorted(self._c.items())]
        return {"dim": self.dim, "order": self.order, "coeffs": coeffs}

    @classmethod
    def from_dict(cls, d):
        dim = int(d["dim"])
        coeffs = {tuple(int(x) for x in row[:dim]): complex(row[dim], row[dim + 1])
                  for row in d["coeffs"]}
        return cls(dim, int(d["order"]), coeffs)

    def __repr__(self):
        return (f"FourierSeries(dim={self.dim}, order={self.order}, "
                f"modes={len(self._c)}, |f|_0={weighted_norm(self, 0.0):.3e})")


def _pruned(cdict: dict) -> dict:
    total = sum(abs(c) for c in cdict.values())
    if total == 0.0:
        return {}
    thresh = PRUNE_REL * total
    return {k: c for k, c in sorted(cdict.items()) if abs(c) > thresh}


def _phase_matrix(theta: np.ndarray, order: int) -> np.ndarray:
    """Columns e^{i p theta} for p = -order..order in fft ordering offset +order."""
    P = theta.shape[0]
    E = np.empty((P, 2 * order + 1), dtype=complex)
    z = np.exp(1j * theta)
    E[:, order] = 1.0
    for p in range(1, order + 1):
        E[:, order + p] = E[:, order + p - 1] * z
        E[:, order - p] = np.conj(E[:, order + p])
    return E


def _eval_dense(box: np.ndarray, emats: list[np.ndarray]) -> np.ndarray:
    order = (box.shape[0] - 1) // 2
    # reorder fft layout -> -order..order
    shift = np.fft.fftshift(box)
    if len(emats) == 1:
        return emats[0] @ shift
    if len(emats) == 2:
        return ((emats[0] @ shift) * emats[1]).sum(axis=1)
    out = shift
    for E in emats[:-1]:
        out = np.tensordot(E, out, axes=(1, 0)) if out.ndim == len(emats) else \
            np.einsum("pi,pi...->p...", E, out)
    return np.einsum("p...,p...->p", out, emats[-1])


def _from_box(arr: np.ndarray, dim: int, order: int, base_tail: float = 0.0
              ) -> FourierSeries:
    """Collect modes |k|_1 <= order from an fft-layout box, symmetrizing."""
    size = arr.shape[0]
    rev = arr
    for ax in range(dim):
        rev = np.roll(np.flip(rev, axis=ax), 1, axis=ax)
    flat = 0.5 * (arr.ravel() + np.conj(rev.ravel()))
    kcols, l1, canon = _mode_grids(size, dim)
    keep = l1 <= min(order, size // 2 if size % 2 == 0 else (size - 1) // 2)
    mags = np.abs(flat)
    tail = float(mags[~keep].sum())
    head = float(mags[keep].sum())
    mask = keep & canon & (mags > PRUNE_REL * max(head, 1e-300))
    idx = np.nonzero(mask)[0]
    cdict = {}
    zero = (0,) * dim
    for i in idx:
        k = tuple(int(kcols[d, i]) for d in range(dim))
        c = complex(flat[i])
        cdict[k] = complex(c.real, 0.0) if k == zero else c
    return FourierSeries._raw(dim, order, dict(sorted(cdict.items())),
                              base_tail + tail)


# ----------------------------------------------------------------------
# elementary operations
# ----------------------------------------------------------------------

def weighted_norm(f: FourierSeries, s: float = 0.0) -> float:
    """l1 norm of the coefficients weighted by e^{|k|_1 s}; +inf on overflow."""
    if s < 0:
        raise ValueError("s must be >= 0")
    total = 0.0
    zero = (0,) * f.dim
    with np.errstate(over="ignore"):
        for k, c in f._c.items():
            w = math.exp(min(sum(abs(x) for x in k) * s, 720.0))
            total += (1.0 if k == zero else 2.0) * abs(c) * w
    return float(total)


def sup_norm_grid(f: FourierSeries, size: int = 64) -> float:
    return float(np.abs(f.grid_values(size)).max()) if not f.is_zero() else 0.0


def multiply(f: FourierSeries, g: FourierSeries, out_order: int | None = None
             ) -> FourierSeries:
    """Product series, dealiased: the convolution is computed exactly and then
    truncated to ``out_order`` (default: max of the factors' orders)."""
    if f.dim != g.dim:
        raise ValueError("dimension mismatch")
    order = out_order if out_order is not None else max(f.order, g.order)
    if f.is_zero() or g.is_zero():
        return FourierSeries.zero(f.dim, order)
    inherited = f.tail * weighted_norm(g) + g.tail * weighted_norm(f)
    size = 2 * (f.order + g.order) + 2
    fa = np.fft.fftn(_padded_box(f, size))
    ga = np.fft.fftn(_padded_box(g, size))
    prod = np.fft.ifftn(fa * ga)
    return _from_box(prod, f.dim, order, base_tail=inherited)


def _padded_box(f: FourierSeries, size: int) -> np.ndarray:
    arr = np.zeros((size,) * f.dim, dtype=complex)
    zero = (0,) * f.dim
    for k, c in f._c.items():
        arr[tuple(x % size for x in k)] = c
        if k != zero:
            arr[tuple(-x % size for x in k)] = c.conjugate()
    return arr


def differentiate(f: FourierSeries, axis: int) -> FourierSeries:
    """Partial derivative along the given angle axis; the average drops out."""
    if not 0 <= axis < f.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.dim}")
    out = {k: 1j * k[axis] * c for k, c in f._c.items() if k[axis] != 0}
    return FourierSeries._raw(f.dim, f.order, _pruned(out),
                              f.tail * max(1, f.order))


def lie_derivative(f: FourierSeries, alpha) -> FourierSeries:
    """Derivative along the constant field alpha: k -> i (k.alpha) c_k."""
    a = np.asarray(alpha, dtype=float)
    if a.shape != (f.dim,):
        raise ValueError("alpha must have length dim")
    out = {}
    for k, c in f._c.items():
        ka = float(np.dot(k, a))
        if ka != 0.0:
            out[k] = 1j * ka * c
    return FourierSeries._raw(f.dim, f.order, _pruned(out),
                              f.tail * max(1, f.order) * float(np.abs(a).max()))


def gradient(f: FourierSeries) -> list[FourierSeries]:
    return [differentiate(f, j) for j in range(f.dim)]


def tail_ratio(f: FourierSeries) -> float:
    """Mass beyond |k|_1 > order/2 relative to the rest; the tail monitor."""
    half = f.order // 2
    head = tail = 0.0
    zero = (0,) * f.dim
    for k, c in f._c.items():
        w = (1.0 if k == zero else 2.0) * abs(c)
        if sum(abs(x) for x in k) > half:
            tail += w
        else:
            head += w
    return tail / head if head > 0 else (0.0 if tail == 0.0 else math.inf)


class TorusComposer:
    """Batched composition f -> f o (id + v) for a fixed displacement v.

    Samples on a ``grid_factor`` x oversampled uniform grid, evaluates at the
    displaced angles and transforms back.  Building one composer and applying
    it to many series amortizes the phase-matrix setup.
    """

    def __init__(self, v: Sequence[FourierSeries], order: int, grid_factor: int = 4):
        v = list(v)
        self.dim = v[0].dim if v else 1
        if any(vj.dim != self.dim for vj in v):
            raise ValueError("displacement components disagree on dim")
        self.order = int(order)
        self.size = max(grid_factor * self.order, 8)
        axes = [2.0 * np.pi * np.arange(self.size) / self.size] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        disp = [mesh[j] + v[j].grid_values(self.size) for j in range(self.dim)]
        self._emats = [_phase_matrix(d.ravel(), self.order) for d in disp]

    def apply(self, f: FourierSeries, tail_tol: float | None = None) -> FourierSeries:
        if f.dim != self.dim:
            raise ValueError("dimension mismatch")
        if f.order > self.order:
            raise ValueError("series order exceeds composer order")
        if f.is_zero():
            return f
        box = f.dense_box() if f.order == self.order else \
            FourierSeries._raw(self.dim, self.order, dict(f._c), f.tail).dense_box()
        vals = _eval_dense(box, self._emats).real.reshape((self.size,) * self.dim)
        out_box = np.fft.fftn(vals) / self.size**self.dim
        out = _from_box(out_box, self.dim, f.order, base_tail=f.tail)
        if tail_tol is not None:
            head = weighted_norm(out)
            if out.tail > tail_tol * max(head, 1e-300):
                raise CompositionDivergence(
                    f"composition tail {out.tail:.2e} exceeds {tail_tol:.1e} x head")
        return out


def compose_torus(f: FourierSeries, v, *, grid_factor: int = 4,
                  tail_tol: float | None = 1e-6) -> FourierSeries:
    """Fourier coefficients of f o (id + v); exact for v = 0."""
    if isinstance(v, FourierSeries):
        v = [v]
    comp = TorusComposer(list(v), f.order, grid_factor)
    return comp.apply(f, tail_tol=tail_tol)


# ----------------------------------------------------------------------
# jets in the normal variables
# ----------------------------------------------------------------------

def monomials(m: int, degree: int):
    """Exponent multi-indices for m variables up to total degree, sorted."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), d):
            mu = [0] * m
            for i in combo:
                mu[i] += 1
            out.append(tuple(mu))
    return sorted(out, key=lambda mu: (sum(mu), mu))


class RJet:
    """Polynomial in r = (r_1..r_m) with FourierSeries coefficients."""

    __slots__ = ("n", "m", "order", "degree", "tail", "_c")

    def __init__(self, n, m, order, degree, coeffs=None, *, tail=0.0):
        self.n, self.m = int(n), int(m)
        self.order, self.degree = int(order), int(degree)
        self.tail = float(tail)
        self._c = {}
        for mu, s in (coeffs or {}).items():
            mu = tuple(int(x) for x in mu)
            if len(mu) != self.m or any(x < 0 for x in mu):
                raise ValueError(f"bad exponent {mu}")
            if sum(mu) > self.degree:
                raise ValueError(f"exponent {mu} exceeds degree {self.degree}")
            if isinstance(s, (int, float)):
                s = FourierSeries.constant(self.n, s, self.order)
            if s.dim != self.n:
                raise ValueError("coefficient dim mismatch")
            if not s.is_zero() or s.tail:
                self._c[mu] = s
        self._c = dict(sorted(self._c.items()))

    # -- constructors --
    @classmethod
    def zero(cls, n, m, order, degree=2):
        return cls(n, m, order, degree)

    @classmethod
    def from_series(cls, s: FourierSeries, m: int, degree: int = 2):
        return cls(s.dim, m, s.order, degree, {(0,) * m: s})

    @classmethod
    def constant(cls, value, n, m, order, degree=2):
        return cls.from_series(FourierSeries.constant(n, value, order), m, degree)

    @classmethod
    def linear(cls, row, n, order, degree=2):
        """Jet sum_j row[j] * r_j from scalars or series."""
        row = list(row)
        m = len(row)
        coeffs = {}
        for j, entry in enumerate(row):
            mu = tuple(1 if i == j else 0 for i in range(m))
            coeffs[mu] = entry
        return cls(n, m, order, degree, coeffs)

    # -- accessors --
    def series(self, mu) -> FourierSeries:
        return self._c.get(tuple(mu), FourierSeries.zero(self.n, self.order))

    def terms(self):
        return self._c.items()

    def is_zero(self):
        return not self._c

    # -- algebra --
    def _binary(self, other, sign):
        if not isinstance(other, RJet):
            raise TypeError("RJet expected")
        if (other.n, other.m) != (self.n, self.m):
            raise ValueError("jet shape mismatch")
        out = dict(self._c)
        for mu, s in other._c.items():
            out[mu] = out[mu] + sign * s if mu in out else sign * s
        return RJet(self.n, self.m, max(self.order, other.order),
                    max(self.degree, other.degree), out,
                    tail=self.tail + other.tail)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def scaled(self, a):
        if isinstance(a, FourierSeries):
            return jet_multiply(self, RJet.from_series(a, self.m, 0), self.degree)
        return RJet(self.n, self.m, self.order, self.degree,
                    {mu: s.scaled(a) for mu, s in self._c.items()},
                    tail=abs(a) * self.tail)

    def truncated(self, degree: int) -> "RJet":
        """Drop monomials above ``degree``; their l1 norm goes to the tail."""
        kept, dropped = {}, 0.0
        for mu, s in self._c.items():
            if sum(mu) <= degree:
                kept[mu] = s
            else:
                dropped += weighted_norm(s)
        return RJet(self.n, self.m, self.order, degree, kept,
                    tail=self.tail + dropped)

    def diff_theta(self, axis: int) -> "RJet":
        return RJet(self.n, self.m, self.order, self.degree,
                    {mu: differentiate(s, axis) for mu, s in self._c.items()},
                    tail=self.tail * max(1, self.order))

    def diff_r(self, i: int) -> "RJet":
        out = {}
        for mu, s in self._c.items():
            if mu[i] > 0:
                nu = tuple(x - 1 if j == i else x for j, x in enumerate(mu))
                t = s.scaled(mu[i])
                out[nu] = out[nu] + t if nu in out else t
        return RJet(self.n, self.m, self.order, max(0, self.degree - 1), out,
                    tail=self.tail)

    def evaluate(self, thetas, rvals) -> np.ndarray:
        """Values at angles (n, P) and actions (m, P) (or scalars)."""
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        rv = np.atleast_2d(np.asarray(rvals, dtype=float))
        out = np.zeros(th.shape[1])
        for mu, s in self._c.items():
            mono = np.ones(th.shape[1])
            for i, p in enumerate(mu):
                if p:
                    mono = mono * rv[i] ** p
            out += s.evaluate(th) * mono
        return out

    def norm(self, s: float = 0.0, rho: float = 1.0) -> float:
        return sum(weighted_norm(c, s) * rho ** sum(mu)
                   for mu, c in self._c.items())

    def to_dict(self):
        return {"n": self.n, "m": self.m, "order": self.order,
                "degree": self.degree,
                "terms": [{"powers": list(mu), "series": s.to_dict()}
                          for mu, s in self._c.items()]}

    @classmethod
    def from_dict(cls, d):
        coeffs = {tuple(t["powers"]): FourierSeries.from_dict(t["series"])
                  for t in d["terms"]}
        return cls(d["n"], d["m"], d["order"], d["degree"], coeffs)

    def __repr__(self):
        return (f"RJet(n={self.n}, m={self.m}, degree={self.degree}, "
                f"terms={len(self._c)})")


def jet_multiply(a: RJet, b: RJet, out_degree: int | None = None) -> RJet:
    """Product jet truncated at ``out_degree``; dropped cross terms are
    tail-accounted with the submultiplicative bound."""
    if (a.n, a.m) != (b.n, b.m):
        raise ValueError("jet shape mismatch")
    deg = out_degree if out_degree is not None else max(a.degree, b.degree)
    out: dict[tuple, FourierSeries] = {}
    dropped = 0.0
    for mua, sa in a._c.items():
        for mub, sb in b._c.items():
            mu = tuple(x + y for x, y in zip(mua, mub))
            if sum(mu) > deg:
                dropped += weighted_norm(sa) * weighted_norm(sb)
                continue
            prod = multiply(sa, sb)
            out[mu] = out[mu] + prod if mu in out else prod
    tail = dropped + a.tail * b.norm() + b.tail * a.norm()
    return RJet(a.n, a.m, max(a.order, b.order), deg, out, tail=tail)


def jet_contract(row, col, out_degree: int = 2) -> RJet:
    """Dot product of two sequences of jets/series/scalars."""
    row, col = list(row), list(col)
    if len(row) != len(col):
        raise ValueError("length mismatch")
    acc = None
    for x, y in zip(row, col):
        if not isinstance(x, RJet) and not isinstance(y, RJet):
            raise TypeError("at least one factor per term must be an RJet")
        if not isinstance(x, RJet):
            x = _as_jet_like(x, y)
        if not isinstance(y, RJet):
            y = _as_jet_like(y, x)
        term = jet_multiply(x, y, out_degree)
        acc = term if acc is None else acc + term
    return acc if acc is not None else RJet.zero(1, 1, 0, out_degree)


def _as_jet_like(value, template: RJet) -> RJet:
    if isinstance(value, FourierSeries):
        return RJet.from_series(value, template.m, 0)
    return RJet.constant(float(value), template.n, template.m, template.order, 0)


def identity_r_jets(n, m, order, degree=2) -> list[RJet]:
    """The coordinate jets r_1..r_m."""
    out = []
    for i in range(m):
        mu = tuple(1 if j == i else 0 for j in range(m))
        out.append(RJet(n, m, order, degree,
                        {mu: FourierSeries.constant(n, 1.0, order)}))
    return out


def substitute_r(J: RJet, R0, R1, out_degree: int = 2) -> RJet:
    """Substitute r_i -> R0_i(theta) + sum_j R1_ij(theta) r_j, exactly, then
    truncate at ``out_degree``.  R0 entries and R1 entries may be series or
    scalars."""
    m = J.m
    rho = []
    for i in range(m):
        coeffs = {}
        r0 = R0[i]
        if isinstance(r0, (int, float)):
            r0 = FourierSeries.constant(J.n, r0, J.order)
        if not r0.is_zero():
            coeffs[(0,) * m] = r0
        for j in range(m):
            entry = R1[i][j]
            if isinstance(entry, (int, float)):
                if entry == 0.0:
                    continue
                entry = FourierSeries.constant(J.n, entry, J.order)
            if not entry.is_zero():
                mu = tuple(1 if jj == j else 0 for jj in range(m))
                coeffs[mu] = coeffs[mu] + entry if mu in coeffs else entry
        rho.append(RJet(J.n, m, J.order, 1, coeffs))
    out = RJet.zero(J.n, m, J.order, out_degree)
    for mu, s in J.terms():
        term = RJet.from_series(s, m, 0)
        for i, p in enumerate(mu):
            for _ in range(p):
                term = jet_multiply(term, rho[i], out_degree)
        out = out + term
    return out


def jet_compose_angles(J: RJet, composer: TorusComposer) -> RJet:
    """Compose every coefficient series with the same torus map."""
    return RJet(J.n, J.m, J.order, J.degree,
                {mu: composer.apply(s) for mu, s in J.terms()}, tail=J.tail)


# ----------------------------------------------------------------------
# vector-field jets
# ----------------------------------------------------------------------

class VectorFieldJet:
    """n tangent + m normal jets; optionally tagged with straight data (alpha, A).

    A field lies in the straight class U(alpha, A) when its tangent order-0
    part equals alpha exactly, the normal order-0 part vanishes and the
    normal order-1 part is the constant matrix A.
    """

    __slots__ = ("n", "m", "order", "tangent", "normal", "alpha", "A")

    def __init__(self, tangent: Sequence[RJet], normal: Sequence[RJet],
                 alpha=None, A=None):
        self.tangent = tuple(tangent)
        self.normal = tuple(normal)
        if not self.tangent or not self.normal:
            raise ValueError("need at least one tangent and one normal component")
        self.n = len(self.tangent)
        self.m = len(self.normal)
        self.order = max(j.order for j in self.tangent + self.normal)
        for j in self.tangent + self.normal:
            if (j.n, j.m) != (self.n, self.m):
                raise ValueError("component jets disagree on (n, m)")
        self.alpha = None if alpha is None else np.asarray(alpha, dtype=float)
        self.A = None if A is None else np.asarray(A, dtype=float)

    @property
    def degree(self):
        return max(j.degree for j in self.tangent + self.normal)

    @classmethod
    def straight(cls, alpha, A, order, degree=2):
        """The model field (alpha, A r)."""
        alpha = np.asarray(alpha, dtype=float)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n, m = alpha.shape[0], A.shape[0]
        tang = [RJet.constant(alpha[i], n, m, order, degree) for i in range(n)]
        norm = [RJet.linear(A[i], n, order, degree) for i in range(m)]
        return cls(tang, norm, alpha=alpha, A=A)

    # -- algebra --
    def _binary(self, other, sign):
        if (other.n, other.m) != (self.n, self.m):
            raise ValueError("field shape mismatch")
        return VectorFieldJet(
            [a._binary(b, sign) for a, b in zip(self.tangent, other.tangent)],
            [a._binary(b, sign) for a, b in zip(self.normal, other.normal)],
            alpha=self.alpha, A=self.A)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def scaled(self, a):
        return VectorFieldJet([j.scaled(a) for j in self.tangent],
                              [j.scaled(a) for j in self.normal],
                              alpha=self.alpha, A=self.A)

    def truncated(self, degree):
        return VectorFieldJet([j.truncated(degree) for j in self.tangent],
                              [j.truncated(degree) for j in self.normal],
                              alpha=self.alpha, A=self.A)

    # -- mixed-jet accessors --
    def tangent0(self) -> list[FourierSeries]:
        zero = (0,) * self.m
        return [j.series(zero) for j in self.tangent]

    def normal0(self) -> list[FourierSeries]:
        zero = (0,) * self.m
        return [j.series(zero) for j in self.normal]

    def normal1(self) -> list[list[FourierSeries]]:
        out = []
        for i in range(self.m):
            row = []
            for j in range(self.m):
                mu = tuple(1 if jj == j else 0 for jj in range(self.m))
                row.append(self.normal[i].series(mu))
            out.append(row)
        return out

    def tangent1(self) -> list[list[FourierSeries]]:
        out = []
        for i in range(self.n):
            row = []
            for j in range(self.m):
                mu = tuple(1 if jj == j else 0 for jj in range(self.m))
                row.append(self.tangent[i].series(mu))
            out.append(row)
        return out

    def norm(self, s: float = 0.0, rho: float = 1.0) -> float:
        return max(j.norm(s, rho) for j in self.tangent + self.normal)

    def tail(self) -> float:
        return max(max((jt.tail for jt in self.tangent), default=0.0),
                   max((jn.tail for jn in self.normal), default=0.0))

    def evaluate(self, thetas, rvals) -> np.ndarray:
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        rv = np.atleast_2d(np.asarray(rvals, dtype=float))
        return np.stack([j.evaluate(th, rv) for j in self.tangent + self.normal])

    # -- straight-class helpers --
    def class_residual(self, alpha, A) -> float:
        """Distance of the mixed jet from the straight form (alpha, A r)."""
        alpha = np.asarray(alpha, dtype=float)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        res = 0.0
        for i, s in enumerate(self.tangent0()):
            res = max(res, weighted_norm(s - FourierSeries.constant(self.n, alpha[i], self.order)))
        for s in self.normal0():
            res = max(res, weighted_norm(s))
        for i, row in enumerate(self.normal1()):
            for j, s in enumerate(row):
                res = max(res, weighted_norm(s - FourierSeries.constant(self.n, A[i, j], self.order)))
        return res

    def with_class_pinned(self, alpha, A) -> "VectorFieldJet":
        """Replace the mixed jet by exactly (alpha, A r), keeping higher orders."""
        alpha = np.asarray(alpha, dtype=float)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        zero = (0,) * self.m
        tang = []
        for i, j in enumerate(self.tangent):
            coeffs = {mu: s for mu, s in j.terms() if mu != zero}
            coeffs[zero] = FourierSeries.constant(self.n, alpha[i], self.order)
            tang.append(RJet(self.n, self.m, self.order, j.degree, coeffs, tail=j.tail))
        norm = []
        for i, j in enumerate(self.normal):
            coeffs = {mu: s for mu, s in j.terms() if sum(mu) > 1}
            for jj in range(self.m):
                if A[i, jj] != 0.0:
                    mu = tuple(1 if x == jj else 0 for x in range(self.m))
                    coeffs[mu] = FourierSeries.constant(self.n, A[i, jj], self.order)
            norm.append(RJet(self.n, self.m, self.order, j.degree, coeffs, tail=j.tail))
        return VectorFieldJet(tang, norm, alpha=alpha, A=A)

    def to_dict(self):
        d = {"n": self.n, "m": self.m, "order": self.order,
             "tangent": [j.to_dict() for j in self.tangent],
             "normal": [j.to_dict() for j in self.normal]}
        if self.alpha is not None:
            d["alpha"] = list(map(float, self.alpha))
        if self.A is not None:
            d["A"] = [list(map(float, row)) for row in np.atleast_2d(self.A)]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls([RJet.from_dict(j) for j in d["tangent"]],
                   [RJet.from_dict(j) for j in d["normal"]],
                   alpha=d.get("alpha"), A=d.get("A"))

    def __repr__(self):
        return (f"VectorFieldJet(n={self.n}, m={self.m}, order={self.order}, "
                f"degree={self.degree})")
