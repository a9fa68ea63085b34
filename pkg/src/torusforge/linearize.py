"""Solvers for the linearized conjugacy equation, one per structural class.

Pulling the linearized equation back along the current conjugacy g turns it
into the triangular system

    [u, gdot] + delta_u + lambdadot = vdot,      gdot = g'^{-1} delta_g,

where ``lambdadot`` is the pull-back of the constant counter-term and
``vdot`` the pull-back of the data.  The mixed-jet blocks (tangent order 0,
normal orders 0 and 1) are solved by the three cohomology solvers; the
counter-term is fixed by an affine system on the obstruction averages,
assembled by probing the pipeline with the pulled-back basis counter-terms.
The remainder of the jet is materialized as ``delta_u`` so the forward
residual is exact.

Three variants:

* ``moser``   - general conjugacies, counter-terms (beta, b + B r) with
  A b = 0 and [A, B] = 0 (plus a translation mode where b is free and the
  relocation average of R0 is pinned to zero instead);
* ``herman_dissipative`` - exact-symplectic conjugacies on T^n x R^n,
  fields Hamiltonian plus uniform dissipation -eta r, counter-term beta only;
* ``russmann`` - symplectic conjugacies carrying the constant closed part xi,
  torsion-nondegenerate fields, counter-term b only (and the restricted
  spin-orbit version with only the first angle deformed).

The solved vertical component is converted to parameter increments through
the exact tangent maps ``delta_phi = phi' phidot``,
``delta_S = Sdot + dS.phidot + xi.phidot``, ``delta_xi = xidot``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .cohomology import eigendecomposition
from .errors import (ClassViolation, DegenerateTorsion,
                     NonInvertibleCounterTermSystem, SmallDivisor,
                     TorusForgeError)
from .fourier import (FourierSeries, RJet, VectorFieldJet, differentiate,
                      multiply, weighted_norm)
from .geometry import Conjugacy, CounterTerm, lie_bracket, pull_back

logger = logging.getLogger("torusforge.linearize")
if os.environ.get("TORUSFORGE_LOG"):
    logging.basicConfig(level=os.environ["TORUSFORGE_LOG"].upper())


@dataclass
class SolveOptions:
    divisor_floor: float = 1e-13
    gate_eps0: float = 0.1
    class_tol: float = 1e-10
    cond_limit: float = 1e8
    check_forward: bool = True


@dataclass
class ConjugacyTangent:
    """Vertical increment of a conjugacy, in class parameters."""

    flavor: str
    delta_phi: tuple
    delta_R0: tuple | None = None
    delta_R1: tuple | None = None
    delta_S: FourierSeries | None = None
    delta_xi: np.ndarray | None = None
    gdot: VectorFieldJet | None = None

    def norm(self) -> float:
        out = max(weighted_norm(s) for s in self.delta_phi)
        for group in (self.delta_R0 or ()):
            out = max(out, weighted_norm(group))
        for row in (self.delta_R1 or ()):
            for s in row:
                out = max(out, weighted_norm(s))
        if self.delta_S is not None:
            out = max(out, weighted_norm(self.delta_S))
        if self.delta_xi is not None and self.delta_xi.size:
            out = max(out, float(np.abs(self.delta_xi).max()))
        return out


@dataclass
class LinearizedSolution:
    delta_g: ConjugacyTangent
    delta_u: VectorFieldJet
    delta_lambda: CounterTerm
    residual: float
    gain: float
    diagnostics: dict = field(default_factory=dict)


# ----------------------------------------------------------------------
# shared machinery
# ----------------------------------------------------------------------

def _mode_divide(series: FourierSeries, alpha, shift: complex, *,
                 drop_zero: bool, floor: float) -> FourierSeries:
    """Solve (L_alpha + shift) f = series mode by mode; optionally skip k=0."""
    out = {}
    zero = (0,) * series.dim
    for k, c in series._c.items():
        if k == zero:
            if drop_zero:
                continue
            d = shift
        else:
            d = 1j * float(np.dot(k, alpha)) + shift
        if abs(d) < floor:
            raise SmallDivisor(f"divisor {abs(d):.2e} at k = {k}", k=k, divisor=d)
        out[k] = c / d
    return FourierSeries._raw(series.dim, series.order, out, series.tail)


def _remove_average(series: FourierSeries):
    avg = series.average()
    if avg == 0.0:
        return series, 0.0
    return series - FourierSeries.constant(series.dim, avg, series.order), avg


def _gradient_potential(components, scale_hint=1.0):
    """Project an exact-ish vector of series onto a gradient: returns
    (potential S with zero mean, [dS components], defect)."""
    dim = components[0].dim
    order = max(c.order for c in components)
    modes = sorted({k for c in components for k in c._c.keys()})
    pot = {}
    zero = (0,) * dim
    for k in modes:
        if k == zero:
            continue
        rk = np.array([c.coeff(k) for c in components])
        kk = np.array(k, dtype=float)
        pot[k] = -1j * np.dot(kk, rk) / np.dot(kk, kk)
    S = FourierSeries(dim, order, pot)
    dS = [differentiate(S, j) for j in range(dim)]
    defect = max(weighted_norm(c - d) for c, d in zip(components, dS))
    return S, dS, defect


def _gdot_jet(phidot, R0dot, R1dot, n, m, order) -> VectorFieldJet:
    tang = [RJet.from_series(s, m, 2) for s in phidot]
    norm = []
    for i in range(m):
        coeffs = {}
        if not R0dot[i].is_zero():
            coeffs[(0,) * m] = R0dot[i]
        for j in range(m):
            if not R1dot[i][j].is_zero():
                mu = tuple(1 if jj == j else 0 for jj in range(m))
                coeffs[mu] = R1dot[i][j]
        norm.append(RJet(n, m, order, 2, coeffs))
    return VectorFieldJet(tang, norm)


def _gauge_fix(phidot):
    """Add the constant making delta_phi vanish at theta = 0."""
    z = np.zeros((phidot[0].dim, 1))
    out = []
    for s in phidot:
        c = float(s.evaluate(z)[0])
        out.append(s - FourierSeries.constant(s.dim, c, s.order))
    return out


def _finish(g, u, lam_dot_total, vdot, pieces, opts, *, scale,
            raise_on_fail=True):
    """Assemble gdot, check the mixed-jet residual, materialize delta_u."""
    n, m, order = g.n, g.m, g.order
    gdot = _gdot_jet(pieces["phidot"], pieces["R0dot"], pieces["R1dot"],
                     n, m, order)
    rhs = vdot - lam_dot_total if lam_dot_total is not None else vdot
    delta = rhs - lie_bracket(u, gdot, out_degree=2)
    blocks = [weighted_norm(s) for s in delta.tangent0()]
    blocks += [weighted_norm(s) for s in delta.normal0()]
    blocks += [weighted_norm(s) for row in delta.normal1() for s in row]
    residual = max(blocks) / max(scale, 1e-300)
    if raise_on_fail and opts.check_forward and residual > 1e-8:
        raise TorusForgeError(
            f"linearized solve failed self-check: mixed-jet residual {residual:.2e}")
    delta_u = delta.with_class_pinned(np.zeros(n), np.zeros((m, m)))
    return gdot, delta_u, residual


def _log_solution(variant, sol):
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(json.dumps({
            "variant": variant, "residual": sol.residual, "gain": sol.gain,
            "delta_lambda": sol.delta_lambda.to_dict()}))


# ----------------------------------------------------------------------
# moser variant
# ----------------------------------------------------------------------

def _moser_basis(n, m, A, eigdata, translation_mode):
    """Admissible counter-term directions: beta; b in ker A (or all of R^m in
    translation mode); B in the commutant (diagonal in the eigenbasis)."""
    eigs, P, Pinv = eigdata
    basis = [CounterTerm(np.eye(n)[i], np.zeros(m), np.zeros((m, m)))
             for i in range(n)]
    if translation_mode:
        for j in range(m):
            basis.append(CounterTerm(np.zeros(n), np.eye(m)[j], np.zeros((m, m))))
    else:
        scale = max(1.0, float(np.abs(eigs).max()))
        for j in range(m):
            if abs(eigs[j]) <= 1e-12 * scale:
                vec = P[:, j].real
                basis.append(CounterTerm(np.zeros(n), vec / np.abs(vec).max(),
                                         np.zeros((m, m))))
    if np.abs(eigs.imag).max(initial=0.0) > 1e-12 * max(1.0, np.abs(eigs).max()):
        raise TorusForgeError(
            "complex Floquet exponents are not supported by the counter-term "
            "elimination (real simple spectrum required)")
    for j in range(m):
        E = np.zeros((m, m), dtype=complex)
        E[j, j] = 1.0
        Bj = (P @ E @ Pinv).real
        basis.append(CounterTerm(np.zeros(n), np.zeros(m), Bj))
    return basis


class _MoserPipeline:
    """Linear map rhs-jet -> (phidot, R0dot, R1dot, obstructions)."""

    def __init__(self, g, u, opts, translation_mode=False):
        self.g, self.u, self.opts = g, u, opts
        self.n, self.m, self.order = g.n, g.m, g.order
        self.alpha = u.alpha
        self.A = np.atleast_2d(u.A)
        self.eigs, self.P, self.Pinv = eigendecomposition(self.A)
        self.translation_mode = translation_mode
        scale = max(1.0, float(np.abs(self.eigs).max()))
        self.kernel = np.abs(self.eigs) <= 1e-12 * scale

    def _solve_R0(self, V0):
        """L_alpha R0 - A R0 = V0; averages in unsolvable directions recorded."""
        m = self.m
        modes = sorted({k for s in V0 for k in s._c.keys()})
        obs = []
        if self.translation_mode:
            cleaned = []
            avgs = []
            for s in V0:
                s2, a = _remove_average(s)
                cleaned.append(s2)
                avgs.append(a)
            obs = list(np.asarray(avgs, dtype=float))
            V0 = cleaned
        cols = [[] for _ in range(m)]
        zero = (0,) * self.n
        Vt_avg = self.Pinv @ np.array([s.average() for s in V0], dtype=complex)
        out_t = [dict() for _ in range(m)]
        for k in modes:
            if k == zero:
                continue
            vk = np.array([s.coeff(k) for s in V0])
            vt = self.Pinv @ vk
            d = 1j * float(np.dot(k, self.alpha)) - self.eigs
            if np.abs(d).min() < self.opts.divisor_floor:
                j = int(np.abs(d).argmin())
                raise SmallDivisor(f"divisor {abs(d[j]):.2e} at k = {k}",
                                   k=k, divisor=d[j])
            ft = vt / d
            for j in range(m):
                out_t[j][k] = ft[j]
        # k = 0 in the eigenbasis: solvable unless the eigenvalue vanishes
        f0 = np.zeros(m, dtype=complex)
        if not self.translation_mode:
            for j in range(m):
                if self.kernel[j]:
                    obs.append(float(Vt_avg[j].real))
                else:
                    f0[j] = Vt_avg[j] / (-self.eigs[j])
        for j in range(m):
            if f0[j] != 0.0:
                out_t[j][zero] = f0[j]
        # back to the original basis
        R0 = []
        union = sorted({k for d_ in out_t for k in d_.keys()})
        for i in range(m):
            coeffs = {}
            for k in union:
                val = sum(self.P[i, j] * out_t[j].get(k, 0.0) for j in range(m))
                if val != 0.0:
                    coeffs[k] = val
            R0.append(FourierSeries(self.n, self.order, coeffs))
        return R0, obs

    def run(self, rhs: VectorFieldJet):
        from .cohomology import solve_matrix
        n, m = self.n, self.m
        obs = []
        R0dot, obs_b = self._solve_R0(rhs.normal0())
        partial = _gdot_jet([FourierSeries.zero(n, self.order)] * n, R0dot,
                            [[FourierSeries.zero(n, self.order)] * m] * m,
                            n, m, self.order)
        corr = lie_bracket(self.u, partial, out_degree=2)
        phidot = []
        obs_beta = []
        for i in range(n):
            t = rhs.tangent0()[i] - corr.tangent0()[i]
            t, avg = _remove_average(t)
            obs_beta.append(avg)
            phidot.append(_mode_divide(t, self.alpha, 0.0, drop_zero=True,
                                       floor=self.opts.divisor_floor))
        V1 = rhs.normal1()
        C1 = corr.normal1()
        G = [[V1[i][j] - C1[i][j] for j in range(m)] for i in range(m)]
        # diagonal averages in the eigenbasis are the B-obstruction
        avg_mat = np.array([[G[i][j].average() for j in range(m)]
                            for i in range(m)], dtype=complex)
        diag = np.diag(self.Pinv @ avg_mat @ self.P)
        obs_B = [float(x.real) for x in diag]
        corr_mat = (self.P @ np.diag(diag) @ self.Pinv).real
        G = [[G[i][j] - FourierSeries.constant(self.n, corr_mat[i][j], self.order)
              for j in range(m)] for i in range(m)]
        R1dot = solve_matrix(G, self.alpha, -self.A, floor=self.opts.divisor_floor)
        obstruction = np.array(list(obs_beta) + list(obs_b) + list(obs_B))
        return {"phidot": phidot, "R0dot": R0dot, "R1dot": R1dot,
                "obs": obstruction}


def _combine(pieces0, probe_pieces, coeffs):
    out = {}
    for key in ("phidot", "R0dot"):
        out[key] = list(pieces0[key])
        for c, pp in zip(coeffs, probe_pieces):
            if c != 0.0:
                out[key] = [a - c * b for a, b in zip(out[key], pp[key])]
    R1 = [list(r) for r in pieces0["R1dot"]]
    for c, pp in zip(coeffs, probe_pieces):
        if c != 0.0:
            R1 = [[a - c * b for a, b in zip(ra, rb)]
                  for ra, rb in zip(R1, pp["R1dot"])]
    out["R1dot"] = R1
    return out


def _solve_counterterm(pipeline, g, u, vdot, basis, opts, order):
    """Probe the pipeline on the pulled-back basis counter-terms and solve
    the affine obstruction system."""
    lam_jets = [pull_back(g, ct.to_jet(order)) for ct in basis]
    pieces0 = pipeline.run(vdot)
    probes = [pipeline.run(lj) for lj in lam_jets]
    N = len(basis)
    if N == 0:
        return pieces0, CounterTerm.zero(g.n, g.m), None
    M = np.stack([p["obs"] for p in probes], axis=1)
    rhs = pieces0["obs"]
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > opts.cond_limit:
        raise NonInvertibleCounterTermSystem(
            f"counter-term system condition number {cond:.2e}")
    c = np.linalg.solve(M, rhs)
    pieces = _combine(pieces0, probes, c)
    delta_lambda = CounterTerm.zero(g.n, g.m)
    lam_dot_total = None
    for ci, ct, lj in zip(c, basis, lam_jets):
        delta_lambda = delta_lambda + ct.scaled(ci)
        scaled = lj.scaled(ci)
        lam_dot_total = scaled if lam_dot_total is None else lam_dot_total + scaled
    return pieces, delta_lambda, lam_dot_total


def solve_linearized_moser(g: Conjugacy, u: VectorFieldJet, lam: CounterTerm,
                           delta_v: VectorFieldJet, *,
                           translation_mode: bool = False,
                           opts: SolveOptions | None = None,
                           pulled: bool = False) -> LinearizedSolution:
    """General-class linearized solve.  ``delta_v`` is ambient unless
    ``pulled`` says it is already the pull-back along g."""
    opts = opts or SolveOptions()
    if g.distance_from_identity() > opts.gate_eps0:
        raise NonInvertibleCounterTermSystem(
            f"|g - id| = {g.distance_from_identity():.3f} exceeds the "
            f"identity-neighborhood gate {opts.gate_eps0}")
    vdot = delta_v if pulled else pull_back(g, delta_v)
    scale = max(vdot.norm(), 1e-300)
    pipeline = _MoserPipeline(g, u, opts, translation_mode)
    basis = _moser_basis(g.n, g.m, pipeline.A,
                         (pipeline.eigs, pipeline.P, pipeline.Pinv),
                         translation_mode)
    pieces, delta_lambda, lam_dot = _solve_counterterm(
        pipeline, g, u, vdot, basis, opts, g.order)
    pieces["phidot"] = _gauge_fix(pieces["phidot"])
    gdot, delta_u, residual = _finish(g, u, lam_dot, vdot, pieces, opts,
                                      scale=scale)
    # delta_g = g' . gdot, componentwise in class parameters
    delta_phi = _series_mat_vec(g.phi_prime, pieces["phidot"])
    R1_R0dot = _series_mat_vec([list(r) for r in g.R1], pieces["R0dot"])
    delta_R0 = [_contract_prime(g.R0_prime[i], pieces["phidot"]) + R1_R0dot[i]
                for i in range(g.m)]
    delta_R1 = []
    for i in range(g.m):
        row = []
        for j in range(g.m):
            t = _contract_prime(g.R1_prime[i][j], pieces["phidot"])
            t = t + _dot_series([g.R1[i][kk] for kk in range(g.m)],
                                [pieces["R1dot"][kk][j] for kk in range(g.m)])
            row.append(t)
        delta_R1.append(row)
    tangent = ConjugacyTangent("general", tuple(delta_phi), tuple(delta_R0),
                               tuple(tuple(r) for r in delta_R1), gdot=gdot)
    gain = max(tangent.norm(), delta_u.norm(), delta_lambda.norm()) / scale
    sol = LinearizedSolution(tangent, delta_u, delta_lambda, residual, gain)
    _log_solution("moser", sol)
    return sol


def _series_mat_vec(mat, vec):
    out = []
    for row in mat:
        acc = None
        for a, b in zip(row, vec):
            term = multiply(a, b)
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _dot_series(xs, ys):
    acc = None
    for x, y in zip(xs, ys):
        term = multiply(x, y)
        acc = term if acc is None else acc + term
    return acc


def _contract_prime(row_of_derivatives, phidot):
    """sum_a d(entry)/d(theta_a) . phidot_a."""
    acc = None
    for d, p in zip(row_of_derivatives, phidot):
        term = multiply(d, p)
        acc = term if acc is None else acc + term
    return acc


# ----------------------------------------------------------------------
# Hamiltonian-dissipative variants
# ----------------------------------------------------------------------

class _HamPipeline:
    """Shared pipeline for the exact-symplectic and symplectic classes.

    ``mode``: "herman" (xi absent, counter-term beta), "russmann" (xi and b,
    torsion used), "spinorbit" (russmann restricted to the first angle).
    The normal order-0 equation is (L_alpha + eta) on the exact part dS;
    constants live in the obstruction vector.
    """

    def __init__(self, g, u, eta, opts, mode):
        self.g, self.u, self.eta, self.opts, self.mode = g, u, float(eta), opts, mode
        self.n, self.order = g.n, g.order
        self.alpha = u.alpha
        self.u1 = u.tangent1()
        self.active = list(range(self.n)) if mode != "spinorbit" else [0]

    def nconst(self):
        # constant unknowns beyond the counter-term basis: xidot components
        return 0 if self.mode == "herman" else len(self.active)

    def run(self, rhs: VectorFieldJet, xidot=None):
        n = self.n
        xidot = np.zeros(n) if xidot is None else np.asarray(xidot, dtype=float)
        V0 = rhs.normal0()
        # (L_alpha + eta) dS = V0 - eta*xidot - averages; exactness projected
        cleaned = []
        avgs = []
        for i in range(n):
            s = V0[i] - FourierSeries.constant(n, self.eta * xidot[i], self.order)
            s, a = _remove_average(s)
            avgs.append(a)
            cleaned.append(_mode_divide(s, self.alpha, self.eta,
                                        drop_zero=True,
                                        floor=self.opts.divisor_floor))
        Sdot, dS, defect = _gradient_potential(cleaned)
        R0dot = [dS[i] + FourierSeries.constant(n, xidot[i], self.order)
                 for i in range(n)]
        partial = _gdot_jet([FourierSeries.zero(n, self.order)] * n, R0dot,
                            [[FourierSeries.zero(n, self.order)] * n] * n,
                            n, n, self.order)
        corr = lie_bracket(self.u, partial, out_degree=2)
        phidot = [FourierSeries.zero(n, self.order)] * n
        obs_t = []
        tang_defect = 0.0
        for i in range(n):
            t = rhs.tangent0()[i] - corr.tangent0()[i]
            t, avg = _remove_average(t)
            if i in self.active:
                obs_t.append(avg)
                phidot[i] = _mode_divide(t, self.alpha, 0.0, drop_zero=True,
                                         floor=self.opts.divisor_floor)
            else:
                tang_defect = max(tang_defect, weighted_norm(t) + abs(avg))
        obs = [avgs[i] for i in self.active] + obs_t
        return {"phidot": phidot, "Sdot": Sdot, "R0dot": R0dot,
                "xidot": xidot, "obs": np.array(obs),
                "exact_defect": defect, "tang_defect": tang_defect,
                "inactive_avg": max((abs(avgs[i]) for i in range(n)
                                     if i not in self.active), default=0.0)}


def _ham_combine(p0, probes, coeffs):
    out = {"phidot": list(p0["phidot"]), "Sdot": p0["Sdot"],
           "R0dot": list(p0["R0dot"]), "xidot": np.array(p0["xidot"])}
    defect = p0["exact_defect"]
    tang = p0["tang_defect"]
    inact = p0["inactive_avg"]
    for c, pp in zip(coeffs, probes):
        if c == 0.0:
            continue
        out["phidot"] = [a - c * b for a, b in zip(out["phidot"], pp["phidot"])]
        out["Sdot"] = out["Sdot"] - pp["Sdot"].scaled(c)
        out["R0dot"] = [a - c * b for a, b in zip(out["R0dot"], pp["R0dot"])]
        out["xidot"] = out["xidot"] - c * pp["xidot"]
        defect += abs(c) * pp["exact_defect"]
        tang += abs(c) * pp["tang_defect"]
        inact += abs(c) * pp["inactive_avg"]
    out["exact_defect"], out["tang_defect"], out["inactive_avg"] = defect, tang, inact
    return out


def _solve_ham(g, u, eta, delta_v, opts, mode, pulled):
    opts = opts or SolveOptions()
    n = g.n
    if g.distance_from_identity() > opts.gate_eps0:
        raise NonInvertibleCounterTermSystem(
            f"|g - id| = {g.distance_from_identity():.3f} exceeds the gate")
    vdot = delta_v if pulled else pull_back(g, delta_v)
    scale = max(vdot.norm(), 1e-300)
    pipe = _HamPipeline(g, u, eta, opts, mode)
    order = g.order

    if mode == "herman":
        basis = [CounterTerm(np.eye(n)[i], np.zeros(n), np.zeros((n, n)))
                 for i in range(n)]
        const_probes = []
    elif mode == "russmann":
        basis = [CounterTerm(np.zeros(n), np.eye(n)[j], np.zeros((n, n)))
                 for j in range(n)]
        const_probes = list(np.eye(n))
    else:  # spinorbit: scalar translation along r_1, xi_1 only
        basis = [CounterTerm(np.zeros(n), np.eye(n)[0], np.zeros((n, n)))]
        const_probes = [np.eye(n)[0]]

    lam_jets = [pull_back(g, ct.to_jet(order)) for ct in basis]
    zero_rhs = VectorFieldJet(
        [RJet.zero(n, n, order) for _ in range(n)],
        [RJet.zero(n, n, order) for _ in range(n)])
    p0 = pipe.run(vdot)
    probes = [pipe.run(lj) for lj in lam_jets]
    probes += [pipe.run(zero_rhs, xidot=-xv) for xv in const_probes]
    unknowns = len(basis) + len(const_probes)
    M = np.stack([p["obs"] for p in probes], axis=1)
    rhs = p0["obs"]
    if mode in ("russmann", "spinorbit"):
        _torsion_gate(pipe, M, len(basis), opts, u)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > opts.cond_limit:
        raise NonInvertibleCounterTermSystem(
            f"counter-term system condition number {cond:.2e}")
    c = np.linalg.solve(M, rhs)
    pieces = _ham_combine(p0, probes, c)
    ct_coeffs = c[:len(basis)]
    delta_lambda = CounterTerm.zero(n, n)
    lam_dot = None
    for ci, ct, lj in zip(ct_coeffs, basis, lam_jets):
        delta_lambda = delta_lambda + ct.scaled(ci)
        scaled = lj.scaled(ci)
        lam_dot = scaled if lam_dot is None else lam_dot + scaled
    # class checks: exactness of the normal solve, silent tangent rows
    tol = opts.class_tol * max(scale, 1.0)
    if pieces["exact_defect"] > 100 * tol or pieces["tang_defect"] > 100 * tol \
            or pieces["inactive_avg"] > 100 * tol:
        raise ClassViolation(
            f"input field violates the structural class: gradient defect "
            f"{pieces['exact_defect']:.2e}, silent-row defect "
            f"{pieces['tang_defect']:.2e}, unmatched average "
            f"{pieces['inactive_avg']:.2e} (tol {100 * tol:.1e})")
    pieces["phidot"] = _gauge_fix(pieces["phidot"])
    # R1dot = -^t phidot'
    R1dot = [[differentiate(pieces["phidot"][j], i).scaled(-1.0)
              for j in range(n)] for i in range(n)]
    full = {"phidot": pieces["phidot"], "R0dot": pieces["R0dot"], "R1dot": R1dot}
    gdot, delta_u, residual = _finish(g, u, lam_dot, vdot, full, opts,
                                      scale=scale, raise_on_fail=False)
    # the first-order normal block must hold automatically for class inputs
    if opts.check_forward and residual > opts.class_tol * 100:
        raise ClassViolation(
            f"automatic first-order equation failed: residual {residual:.2e}")
    phidot = pieces["phidot"]
    delta_phi = _series_mat_vec(g.phi_prime, phidot)
    dS_cur = [differentiate(g.S, j) for j in range(n)]
    corr = _dot_series(dS_cur, phidot)
    if g.xi is not None and np.any(g.xi != 0.0):
        for j in range(n):
            if g.xi[j] != 0.0:
                corr = corr + phidot[j].scaled(g.xi[j])
    delta_S, _ = _remove_average(pieces["Sdot"] + corr)
    delta_xi = pieces["xidot"].copy()
    tangent = ConjugacyTangent(g.flavor, tuple(delta_phi), delta_S=delta_S,
                               delta_xi=delta_xi, gdot=gdot)
    gain = max(tangent.norm(), delta_u.norm(), delta_lambda.norm()) / scale
    sol = LinearizedSolution(tangent, delta_u, delta_lambda, residual, gain,
                             diagnostics={"exact_defect": pieces["exact_defect"]})
    _log_solution(mode, sol)
    return sol


def _torsion_gate(pipe, M, nb, opts, u):
    """Check |det <Q (eta M + id)>| >= 0.5 |det <Q>| on the xidot block,
    after eliminating the translation unknowns."""
    active = pipe.active
    na = len(active)
    # obstruction layout: [normal averages (active), tangent averages (active)]
    # unknown layout: [counter-term coeffs (nb), xidot components (na)]
    Mbb = M[:na, :nb]
    Mbx = M[:na, nb:]
    Mtb = M[na:, :nb]
    Mtx = M[na:, nb:]
    try:
        schur = Mtx - Mtb @ np.linalg.solve(Mbb, Mbx)
    except np.linalg.LinAlgError as exc:
        raise NonInvertibleCounterTermSystem(str(exc)) from None
    Q = u.tangent1()
    Qavg = np.array([[Q[i][j].average() for j in active] for i in active])
    det_gate = abs(np.linalg.det(Qavg))
    if abs(np.linalg.det(schur)) < 0.5 * det_gate or det_gate == 0.0:
        raise DegenerateTorsion(
            f"|det torsion block| = {abs(np.linalg.det(schur)):.3e} below "
            f"half of |det <Q>| = {det_gate:.3e}")


def solve_linearized_herman_dissipative(g, u, eta, delta_v, *,
                                        opts: SolveOptions | None = None,
                                        pulled: bool = False):
    """Exact-symplectic class, fields Hamiltonian minus eta r d/dr."""
    if g.flavor != "exact_symplectic":
        raise ValueError("herman_dissipative needs an exact_symplectic conjugacy")
    return _solve_ham(g, u, eta, delta_v, opts, "herman", pulled)


def solve_linearized_russmann(g, u, eta, delta_v, *,
                              opts: SolveOptions | None = None,
                              pulled: bool = False):
    """Symplectic class with translation counter-term b and constant part xi."""
    if g.flavor != "symplectic":
        raise ValueError("russmann needs a symplectic conjugacy")
    return _solve_ham(g, u, eta, delta_v, opts, "russmann", pulled)


def solve_linearized_spin_orbit(g, u, eta, delta_v, *,
                                opts: SolveOptions | None = None,
                                pulled: bool = False):
    """Time-extended restriction: phi = (phi_1, id), xi = (xi_1, 0), scalar b."""
    if g.flavor != "symplectic":
        raise ValueError("the restricted class is symplectic")
    if not g.phi_minus_id[1].is_zero():
        raise ValueError("restricted class requires phi_2 = id")
    return _solve_ham(g, u, eta, delta_v, opts, "spinorbit", pulled)
