"""Conjugacies of T^n x R^m, their inversion, transport of vector-field jets
and Lie brackets.

A conjugacy is ``g(theta, r) = (phi(theta), R0(theta) + R1(theta) r)`` with
``phi = id + v`` a torus diffeomorphism fixing the origin.  Two symplectic
flavors on T^n x R^n constrain the normal part to
``^t phi'^{-1} (r + dS + xi)``: "exact_symplectic" has xi = 0, "symplectic"
carries the constant closed part xi.  The derived (R0, R1) are materialized
once at construction; compositions with phi or its inverse are done by
oversampled grid evaluation and are cached on the (immutable) object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractionFailure, SingularR1
from .fourier import (FourierSeries, RJet, TorusComposer, VectorFieldJet,
                      _from_box, differentiate, gradient, jet_compose_angles,
                      jet_multiply, multiply, substitute_r, weighted_norm)

FLAVORS = ("general", "exact_symplectic", "symplectic")


# ----------------------------------------------------------------------
# series-matrix helpers
# ----------------------------------------------------------------------

def series_matrix_values(entries, size):
    """Stack grid values of an (p x q) matrix of series: shape (size^n, p, q)."""
    p, q = len(entries), len(entries[0])
    dim = entries[0][0].dim
    vals = np.empty((size**dim, p, q))
    for i in range(p):
        for j in range(q):
            vals[:, i, j] = entries[i][j].grid_values(size).ravel()
    return vals


def invert_series_matrix(entries, order, *, min_sv=1e-8, what="matrix"):
    """Pointwise inverse of an analytic matrix of series, via the grid."""
    dim = entries[0][0].dim
    size = max(4 * order, 8)
    vals = series_matrix_values(entries, size)
    svals = np.linalg.svd(vals, compute_uv=False)
    smin = float(svals[:, -1].min())
    if smin < min_sv:
        raise SingularR1(f"min singular value {smin:.2e} of {what} below {min_sv:.0e}")
    inv = np.linalg.inv(vals)
    p = len(entries)
    out = [[None] * p for _ in range(p)]
    for i in range(p):
        for j in range(p):
            box = np.fft.fftn(inv[:, i, j].reshape((size,) * dim)) / size**dim
            out[i][j] = _from_box(box, dim, order)
    return out


def _mat_vec(mat, vec):
    """(matrix of series) . (vector of series)."""
    out = []
    for row in mat:
        acc = None
        for a, b in zip(row, vec):
            term = multiply(a, b)
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _mat_mat(a, b):
    q = len(b[0])
    return [[_dot([a[i][k] for k in range(len(b))],
                  [b[k][j] for k in range(len(b))]) for j in range(q)]
            for i in range(len(a))]


def _dot(xs, ys):
    acc = None
    for x, y in zip(xs, ys):
        term = multiply(x, y)
        acc = term if acc is None else acc + term
    return acc


# ----------------------------------------------------------------------
# counter terms
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CounterTerm:
    """Constant field (beta, b + B r); the finite-dimensional obstruction."""

    beta: np.ndarray
    b: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))

    @classmethod
    def zero(cls, n, m):
        return cls(np.zeros(n), np.zeros(m), np.zeros((m, m)))

    @property
    def n(self):
        return self.beta.shape[0]

    @property
    def m(self):
        return self.b.shape[0]

    def to_jet(self, order, degree=2) -> VectorFieldJet:
        n, m = self.n, self.m
        tang = [RJet.constant(self.beta[i], n, m, order, degree) for i in range(n)]
        norm = []
        for i in range(m):
            jet = RJet.linear(self.B[i], n, order, degree)
            if self.b[i] != 0.0:
                jet = jet + RJet.constant(self.b[i], n, m, order, degree)
            norm.append(jet)
        return VectorFieldJet(tang, norm)

    def __add__(self, other):
        return CounterTerm(self.beta + other.beta, self.b + other.b, self.B + other.B)

    def scaled(self, a):
        return CounterTerm(a * self.beta, a * self.b, a * self.B)

    def norm(self) -> float:
        return float(max(np.abs(self.beta).max(initial=0.0),
                         np.abs(self.b).max(initial=0.0),
                         np.abs(self.B).max(initial=0.0)))

    def admissibility_residual(self, A) -> float:
        """How far (b, B) sit from ker A and the commutant of A."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return float(max(np.abs(A @ self.b).max(initial=0.0),
                         np.abs(A @ self.B - self.B @ A).max(initial=0.0)))

    def to_dict(self):
        return {"beta": self.beta.tolist(), "b": self.b.tolist(),
                "B": self.B.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["beta"], d["b"], d["B"])


# ----------------------------------------------------------------------
# conjugacy
# ----------------------------------------------------------------------

class Conjugacy:
    """Torus diffeomorphism plus affine normal part, immutable."""

    def __init__(self, phi_minus_id, R0=None, R1=None, *, flavor="general",
                 S: FourierSeries | None = None, xi=None, min_sv=1e-8):
        if flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}")
        self.flavor = flavor
        self.phi_minus_id = tuple(phi_minus_id)
        self.n = len(self.phi_minus_id)
        self.order = max(s.order for s in self.phi_minus_id)
        self._min_sv = min_sv
        self._cache: dict = {}
        if flavor == "general":
            if R0 is None or R1 is None:
                raise ValueError("general flavor needs explicit R0, R1")
            self.R0 = tuple(R0)
            self.R1 = tuple(tuple(row) for row in R1)
            self.m = len(self.R0)
            self.S, self.xi = None, None
        else:
            if S is None:
                raise ValueError("symplectic flavors need the generator S")
            self.m = self.n
            self.S = S
            if flavor == "exact_symplectic":
                if xi is not None and np.any(np.asarray(xi) != 0.0):
                    raise ValueError("exact_symplectic flavor has xi = 0")
                self.xi = np.zeros(self.n)
            else:
                self.xi = (np.zeros(self.n) if xi is None
                           else np.asarray(xi, dtype=float).ravel())
            tinv = invert_series_matrix(
                [[_transpose_entry(self.phi_prime, j, i) for j in range(self.n)]
                 for i in range(self.n)],
                self.order, min_sv=min_sv, what="^t phi'")
            dS = gradient(self.S)
            rho = [dS[i] + FourierSeries.constant(self.n, self.xi[i], self.order)
                   for i in range(self.n)]
            self.R1 = tuple(tuple(row) for row in tinv)
            self.R0 = tuple(_mat_vec(tinv, rho))

    # -- constructors --
    @classmethod
    def identity(cls, n, m, order, flavor="general"):
        zero = FourierSeries.zero(n, order)
        v = [zero] * n
        if flavor == "general":
            eye = [[FourierSeries.constant(n, 1.0 if i == j else 0.0, order)
                    for j in range(m)] for i in range(m)]
            return cls(v, [zero] * m, eye)
        if m != n:
            raise ValueError("symplectic flavors need m = n")
        return cls(v, flavor=flavor, S=zero,
                   xi=None if flavor == "exact_symplectic" else np.zeros(n))

    # -- cached derived data --
    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def phi_prime(self):
        def build():
            n = self.n
            return [[differentiate(self.phi_minus_id[i], j) +
                     FourierSeries.constant(n, 1.0 if i == j else 0.0, self.order)
                     for j in range(n)] for i in range(n)]
        return self._get("phi_prime", build)

    @property
    def phi_prime_inv(self):
        return self._get("phi_prime_inv", lambda: invert_series_matrix(
            self.phi_prime, self.order, min_sv=self._min_sv, what="phi'"))

    @property
    def R1_inv(self):
        return self._get("R1_inv", lambda: invert_series_matrix(
            [list(r) for r in self.R1], self.order, min_sv=self._min_sv, what="R1"))

    @property
    def R0_prime(self):
        return self._get("R0_prime", lambda: [
            [differentiate(self.R0[i], a) for a in range(self.n)]
            for i in range(self.m)])

    @property
    def R1_prime(self):
        return self._get("R1_prime", lambda: [
            [[differentiate(self.R1[i][j], a) for a in range(self.n)]
             for j in range(self.m)] for i in range(self.m)])

    @property
    def forward_composer(self) -> TorusComposer:
        return self._get("forward_composer",
                         lambda: TorusComposer(self.phi_minus_id, self.order))

    @property
    def psi_minus_id(self):
        """Inverse torus map phi^{-1} = id + w."""
        return self._get("psi_minus_id",
                         lambda: invert_torus_map(self.phi_minus_id))

    @property
    def inverse_composer(self) -> TorusComposer:
        return self._get("inverse_composer",
                         lambda: TorusComposer(self.psi_minus_id, self.order))

    def origin_offset(self) -> float:
        """max_j |v_j(0)|; the class normalization phi(0) = 0."""
        z = np.zeros((self.n, 1))
        return float(max(abs(v.evaluate(z)[0]) for v in self.phi_minus_id))

    def distance_from_identity(self) -> float:
        d = max(weighted_norm(v) for v in self.phi_minus_id)
        d = max(d, max(weighted_norm(s) for s in self.R0))
        eye = np.eye(self.m)
        for i in range(self.m):
            for j in range(self.m):
                d = max(d, weighted_norm(
                    self.R1[i][j] - FourierSeries.constant(self.n, eye[i, j], self.order)))
        return d

    def max_tail_ratio(self) -> float:
        from .fourier import tail_ratio
        parts = list(self.phi_minus_id) + list(self.R0) + \
            [e for row in self.R1 for e in row]
        return max(tail_ratio(s) for s in parts)

    def evaluate(self, thetas, rvals=None):
        """Image points; thetas (n,P), rvals (m,P) or None for the torus r=0."""
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        P = th.shape[1]
        rv = np.zeros((self.m, P)) if rvals is None else \
            np.atleast_2d(np.asarray(rvals, dtype=float))
        ang = np.stack([th[i] + self.phi_minus_id[i].evaluate(th)
                        for i in range(self.n)])
        act = np.zeros((self.m, P))
        for i in range(self.m):
            act[i] = self.R0[i].evaluate(th)
            for j in range(self.m):
                act[i] += self.R1[i][j].evaluate(th) * rv[j]
        return ang, act

    def to_dict(self):
        d = {"flavor": self.flavor,
             "phi_minus_id": [s.to_dict() for s in self.phi_minus_id]}
        if self.flavor == "general":
            d["R0"] = [s.to_dict() for s in self.R0]
            d["R1"] = [[s.to_dict() for s in row] for row in self.R1]
        else:
            d["S"] = self.S.to_dict()
            d["xi"] = self.xi.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        v = [FourierSeries.from_dict(s) for s in d["phi_minus_id"]]
        if d["flavor"] == "general":
            return cls(v, [FourierSeries.from_dict(s) for s in d["R0"]],
                       [[FourierSeries.from_dict(s) for s in row] for row in d["R1"]])
        return cls(v, flavor=d["flavor"], S=FourierSeries.from_dict(d["S"]),
                   xi=None if d["flavor"] == "exact_symplectic" else d["xi"])

    def __repr__(self):
        return (f"Conjugacy(flavor={self.flavor!r}, n={self.n}, m={self.m}, "
                f"order={self.order}, |g-id|={self.distance_from_identity():.3e})")


def _transpose_entry(mat, i, j):
    return mat[i][j]


# ----------------------------------------------------------------------
# inversion
# ----------------------------------------------------------------------

def invert_torus_map(phi_minus_id, *, tol=1e-14, max_iters=200,
                     residual_tol=1e-12):
    """Inverse of phi = id + v as psi = id + w, via the contraction
    w <- -v o (id + w) in series space."""
    v = list(phi_minus_id)
    n = v[0].dim
    order = max(s.order for s in v)
    vnorm = max(weighted_norm(s) for s in v)
    if vnorm == 0.0:
        return [FourierSeries.zero(n, order) for _ in range(n)]
    w = [s.scaled(-1.0) for s in v]
    last = np.inf
    for _ in range(max_iters):
        comp = TorusComposer(w, order)
        w_new = [comp.apply(s).scaled(-1.0) for s in v]
        delta = max(weighted_norm(a - b) for a, b in zip(w_new, w))
        w = w_new
        if delta < tol * max(1.0, vnorm):
            break
        if delta > 4.0 * last:
            raise ContractionFailure(
                f"inverse iteration diverging (step {delta:.2e})")
        last = delta
    else:
        raise ContractionFailure(
            f"inverse iteration did not reach {tol:.0e} in {max_iters} steps")
    comp = TorusComposer(w, order)
    resid = max(weighted_norm(a + comp.apply(b)) for a, b in zip(w, v))
    if resid > residual_tol * max(1.0, vnorm):
        raise ContractionFailure(f"phi o psi - id residual {resid:.2e}")
    return w


def invert_conjugacy(g: Conjugacy, *, min_sv=1e-8) -> Conjugacy:
    """g^{-1} = (psi, R1^{-1} o psi . (r - R0 o psi)), general flavor."""
    psi = g.psi_minus_id
    comp = g.inverse_composer
    r1inv = g.R1_inv
    R1t = [[comp.apply(r1inv[i][j]) for j in range(g.m)] for i in range(g.m)]
    R0psi = [comp.apply(s) for s in g.R0]
    R0t = [s.scaled(-1.0) for s in _mat_vec(R1t, R0psi)]
    return Conjugacy(psi, R0t, R1t, min_sv=min_sv)


def compose_conjugacy(g2: Conjugacy, g1: Conjugacy) -> Conjugacy:
    """Flattened g2 o g1 (general flavor).

    Flattening immediately (rather than keeping a lazy pair) is exact up to
    one truncation because the composition is only used for diagnostics; the
    iteration itself updates parameters additively.
    """
    if (g1.n, g1.m) != (g2.n, g2.m):
        raise ValueError("conjugacy shape mismatch")
    comp = g1.forward_composer
    v = [g1.phi_minus_id[i] + comp.apply(g2.phi_minus_id[i]) for i in range(g1.n)]
    R12 = [[comp.apply(g2.R1[i][j]) for j in range(g2.m)] for i in range(g2.m)]
    R0 = [comp.apply(g2.R0[i]) + _dot(R12[i], g1.R0) for i in range(g2.m)]
    R1 = _mat_mat(R12, [list(r) for r in g1.R1])
    return Conjugacy(v, R0, R1)


# ----------------------------------------------------------------------
# transport of jets
# ----------------------------------------------------------------------

def _series_mat_jet_vec(mat, jets, out_degree):
    """(matrix of series) . (vector of jets)."""
    out = []
    for row in mat:
        acc = None
        for entry, jet in zip(row, jets):
            term = jet_multiply(RJet.from_series(entry, jet.m, 0), jet, out_degree)
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _jet_mat_jet_vec(mat, jets, out_degree):
    out = []
    for row in mat:
        acc = None
        for entry, jet in zip(row, jets):
            term = jet_multiply(entry, jet, out_degree)
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _jacobian_lower(g: Conjugacy) -> list[list[RJet]]:
    """The theta-derivative block of the normal part: R0' + R1'.r, an m x n
    matrix of degree-1 jets."""
    n, m, order = g.n, g.m, g.order
    R0p, R1p = g.R0_prime, g.R1_prime
    out = []
    for i in range(m):
        row = []
        for a in range(n):
            coeffs = {}
            if not R0p[i][a].is_zero():
                coeffs[(0,) * m] = R0p[i][a]
            for j in range(m):
                s = R1p[i][j][a]
                if not s.is_zero():
                    mu = tuple(1 if x == j else 0 for x in range(m))
                    coeffs[mu] = coeffs[mu] + s if mu in coeffs else s
            row.append(RJet(n, m, order, 1, coeffs))
        out.append(row)
    return out


def jacobian_apply(g: Conjugacy, w: VectorFieldJet, out_degree=None) -> VectorFieldJet:
    """g'(theta, r) . w(theta, r) as jets (no composition)."""
    deg = out_degree if out_degree is not None else w.degree + 1
    tang = _series_mat_jet_vec(g.phi_prime, w.tangent, deg)
    lower = _jacobian_lower(g)
    norm1 = _jet_mat_jet_vec(lower, w.tangent, deg)
    norm2 = _series_mat_jet_vec([list(r) for r in g.R1], w.normal, deg)
    norm = [a + b for a, b in zip(norm1, norm2)]
    return VectorFieldJet(tang, norm)


def compose_with_map(w: VectorFieldJet, composer: TorusComposer, R0, R1,
                     out_degree) -> VectorFieldJet:
    """w o (phi, R0 + R1 r): coefficients through ``composer``, then the
    affine substitution in the normal variables."""
    def one(jet):
        jc = jet_compose_angles(jet, composer)
        return substitute_r(jc, R0, R1, out_degree)
    return VectorFieldJet([one(j) for j in w.tangent],
                          [one(j) for j in w.normal])


def push_forward(g: Conjugacy, u: VectorFieldJet, out_degree: int = 2
                 ) -> VectorFieldJet:
    """(g' . u) o g^{-1}, exact through one extra polynomial degree before the
    final truncation (the relocated section mixes degrees downward)."""
    if (u.n, u.m) != (g.n, g.m):
        raise ValueError("field and conjugacy shapes differ")
    h = jacobian_apply(g, u, u.degree + 1)
    comp = g.inverse_composer
    r1inv = g.R1_inv
    R1t = [[comp.apply(r1inv[i][j]) for j in range(g.m)] for i in range(g.m)]
    R0psi = [comp.apply(s) for s in g.R0]
    R0t = [s.scaled(-1.0) for s in _mat_vec(R1t, R0psi)]
    out = compose_with_map(h, comp, R0t, R1t, u.degree + 1)
    return VectorFieldJet([j.truncated(out_degree) for j in out.tangent],
                          [j.truncated(out_degree) for j in out.normal],
                          alpha=u.alpha, A=u.A)


def pull_back(g: Conjugacy, w: VectorFieldJet, out_degree: int = 2
              ) -> VectorFieldJet:
    """g^* w = (g')^{-1} . (w o g)."""
    if (w.n, w.m) != (g.n, g.m):
        raise ValueError("field and conjugacy shapes differ")
    wg = compose_with_map(w, g.forward_composer, list(g.R0),
                          [list(r) for r in g.R1], w.degree)
    tang = _series_mat_jet_vec(g.phi_prime_inv, wg.tangent, out_degree + 1)
    # lower-left block of (g')^{-1}: -R1^{-1} (R0' + R1' r) phi'^{-1}
    lower = _jacobian_lower(g)
    lp = [[None] * g.n for _ in range(g.m)]
    for i in range(g.m):
        for a in range(g.n):
            acc = None
            for b in range(g.n):
                term = jet_multiply(
                    lower[i][b], RJet.from_series(g.phi_prime_inv[b][a], g.m, 0), 2)
                acc = term if acc is None else acc + term
            lp[i][a] = acc
    r1i = g.R1_inv
    low = [[None] * g.n for _ in range(g.m)]
    for i in range(g.m):
        for a in range(g.n):
            acc = None
            for j in range(g.m):
                term = jet_multiply(RJet.from_series(r1i[i][j], g.m, 0), lp[j][a], 2)
                acc = term if acc is None else acc + term
            low[i][a] = acc.scaled(-1.0)
    norm1 = _jet_mat_jet_vec(low, wg.tangent, out_degree + 1)
    norm2 = _series_mat_jet_vec(r1i, wg.normal, out_degree + 1)
    norm = [a + b for a, b in zip(norm1, norm2)]
    return VectorFieldJet([j.truncated(out_degree) for j in tang],
                          [j.truncated(out_degree) for j in norm],
                          alpha=w.alpha, A=w.A)


def deformed_norm(g: Conjugacy, w: VectorFieldJet, s: float = 0.0,
                  rho: float = 1.0) -> float:
    """|w|_{g,s}: weighted norm of the pull-back."""
    return pull_back(g, w).norm(s, rho)


# ----------------------------------------------------------------------
# Lie bracket
# ----------------------------------------------------------------------

def lie_bracket(f: VectorFieldJet, h: VectorFieldJet, out_degree: int = 2
                ) -> VectorFieldJet:
    """[f, h] = Dh.f - Df.h, componentwise, truncated at ``out_degree``."""
    if (f.n, f.m) != (h.n, h.m):
        raise ValueError("field shapes differ")
    n, m = f.n, f.m
    fc = list(f.tangent) + list(f.normal)
    hc = list(h.tangent) + list(h.normal)
    out = []
    for c in range(n + m):
        acc = None
        for a in range(n):
            t1 = jet_multiply(hc[c].diff_theta(a), fc[a], out_degree)
            t2 = jet_multiply(fc[c].diff_theta(a), hc[a], out_degree)
            term = t1 - t2
            acc = term if acc is None else acc + term
        for i in range(m):
            t1 = jet_multiply(hc[c].diff_r(i), fc[n + i], out_degree)
            t2 = jet_multiply(fc[c].diff_r(i), hc[n + i], out_degree)
            term = t1 - t2
            acc = acc + term if acc is not None else term
        out.append(acc)
    return VectorFieldJet(out[:n], out[n:])


# ----------------------------------------------------------------------
# Hamiltonian transport with uniform dissipation
# ----------------------------------------------------------------------

def hamiltonian_field(H: RJet, eta: float = 0.0, zeta=None,
                      out_degree: int = 2) -> VectorFieldJet:
    """The field (dH/dr, -dH/dtheta - eta (r - zeta)) of a scalar jet H."""
    n = H.n
    if H.m != n:
        raise ValueError("Hamiltonian jets need m = n")
    tang = [H.diff_r(i).truncated(out_degree) for i in range(n)]
    norm = []
    for i in range(n):
        jet = H.diff_theta(i).scaled(-1.0)
        if eta != 0.0:
            mu = tuple(1 if x == i else 0 for x in range(n))
            jet = jet - RJet(n, n, H.order, 1,
                             {mu: FourierSeries.constant(n, eta, H.order)})
            z = 0.0 if zeta is None else float(np.asarray(zeta).ravel()[i])
            if z != 0.0:
                jet = jet + RJet.constant(eta * z, n, n, H.order, 0)
        norm.append(jet.truncated(out_degree))
    return VectorFieldJet(tang, norm)


def push_forward_ham_dissipative(g: Conjugacy, H: RJet, eta: float,
                                 zeta=None):
    """Transport of a Hamiltonian-plus-uniform-dissipation field by a
    symplectic conjugacy, expressed on the Hamiltonian itself:

        H_hat = H o g^{-1} - eta (S o phi^{-1} + zeta_hat . (phi^{-1} - id)),
        zeta_hat = zeta + xi,

    so that the pushed field is (dH_hat/dR, -dH_hat/dTheta - eta (R - zeta_hat)).
    Returns (H_hat, eta, zeta_hat).
    """
    if g.flavor not in ("exact_symplectic", "symplectic"):
        raise ValueError("need a symplectic-flavored conjugacy")
    n = g.n
    zeta = np.zeros(n) if zeta is None else np.asarray(zeta, dtype=float).ravel()
    zhat = zeta + g.xi
    comp = g.inverse_composer
    r1inv = g.R1_inv
    R1t = [[comp.apply(r1inv[i][j]) for j in range(n)] for i in range(n)]
    R0psi = [comp.apply(s) for s in g.R0]
    R0t = [s.scaled(-1.0) for s in _mat_vec(R1t, R0psi)]
    Hg = substitute_r(jet_compose_angles(H, comp), R0t, R1t, H.degree)
    corr = comp.apply(g.S)
    psi = g.psi_minus_id
    for i in range(n):
        if zhat[i] != 0.0:
            corr = corr + psi[i].scaled(zhat[i])
    Hhat = Hg - RJet.from_series(corr.scaled(eta), n, 0)
    return Hhat, eta, zhat
