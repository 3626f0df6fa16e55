"""Numerical direct scattering for decaying potentials.

Jost solutions are integrated as initial-value problems from their
normalization end: J_- is the identity at the left end of the domain and
J_+ at the right end.  For lam off the real axis only the columns that stay
bounded in that half-plane are integrated.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .core import Convention, FieldGrid, HirotaError, SolitonSpec, sigma3
from .dressing import Region, SectionalSolution, nsoliton_at
from .laxpair import ResidualReport, build_Q

RTOL = 1e-10
ATOL = 1e-12
DECAY_TOL = 1e-10


class DecayViolation(HirotaError, ValueError):
    pass


class StiffnessFailure(HirotaError, RuntimeError):
    pass


class SingularJost(HirotaError, ArithmeticError):
    pass


class ContourThroughZero(HirotaError, ValueError):
    pass


class Side(enum.Enum):
    PLUS = "plus"     # identity at the right end (x -> +inf)
    MINUS = "minus"   # identity at the left end (x -> -inf)


class Potential:
    """q(x) on a finite window [x0, x1] where it has decayed to (near) zero."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], x0: float, x1: float,
                 components: int, nodes: np.ndarray | None = None):
        self.func = func
        self.x0 = float(x0)
        self.x1 = float(x1)
        self.components = components
        self.nodes = np.linspace(x0, x1, 401) if nodes is None else np.asarray(nodes, float)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, float)), dtype=complex)

    @classmethod
    def zero(cls, components: int, x0: float = -10.0, x1: float = 10.0) -> Potential:
        return cls(lambda x: np.zeros(np.shape(x) + (components,), complex), x0, x1, components)

    @classmethod
    def from_function(cls, func, x0: float, x1: float, components: int, nodes=None) -> Potential:
        return cls(func, x0, x1, components, nodes)

    @classmethod
    def from_field(cls, field: FieldGrid, t_index: int = 0) -> Potential:
        """Cubic-spline interpolant of one time slice of a sampled field."""
        vals = field.values[:, t_index, :]
        if field.pole_mask[:, t_index].any() or not np.all(np.isfinite(vals)):
            n = int(field.pole_mask[:, t_index].sum())
            raise DecayViolation(f"potential has {n} pole-masked or non-finite samples; "
                                 "singular potentials have no scattering data")
        x = field.grid.x
        spline = CubicSpline(x, vals, axis=0)
        return cls(lambda s: spline(s), x[0], x[-1], field.components, x)

    @classmethod
    def from_spec(cls, spec: SolitonSpec, t: float, x0: float, x1: float, nodes=None, *,
                  h: float | None = 0.005) -> Potential:
        """Dressing potential at time t (regularized convention only).

        With ``h`` set the potential is tabulated at spacing h and splined,
        which is far cheaper inside the integrator (spline error ~ h^4).
        ``h=None`` calls the dressing formula at every integrator stage.
        """
        if spec.convention is not Convention.REGULARIZED:
            raise DecayViolation("as-printed potentials carry csch poles; use the regularized convention")
        if h is None:
            def func(x):
                res = nsoliton_at(spec, x, t)
                if np.any(res.pole):
                    raise DecayViolation("potential hit a dressing pole")
                return res.q
            return cls(func, x0, x1, spec.components, nodes)
        xs = np.linspace(x0, x1, int(math.ceil((x1 - x0) / h)) + 1)
        res = nsoliton_at(spec, xs, t)
        if np.any(res.pole):
            raise DecayViolation("potential hit a dressing pole")
        spline = CubicSpline(xs, res.q, axis=0)
        return cls(lambda s: spline(s), x0, x1, spec.components, nodes)

    def check_decay(self, decay_tol: float = DECAY_TOL) -> None:
        inside = self.nodes[(self.nodes >= self.x0) & (self.nodes <= self.x1)]
        xs = np.union1d(inside, np.linspace(self.x0, self.x1, 2001))
        mags = np.max(np.abs(self(xs)), axis=-1)
        if not np.all(np.isfinite(mags)):
            raise DecayViolation("potential has non-finite samples")
        peak = float(np.max(mags))
        edge = float(max(mags[0], mags[-1]))
        if edge > decay_tol * peak:
            raise DecayViolation(f"|q| at the window ends is {edge:.3g}, above "
                                 f"{decay_tol:g} x peak {peak:.3g}; widen the x-window")


@dataclass
class JostSolution:
    side: Side
    x: np.ndarray
    samples: np.ndarray      # (nx, n, n); untrusted columns are NaN
    lam: complex
    columns: tuple[int, ...]

    @property
    def det_error(self) -> float:
        return float(np.max(np.abs(np.linalg.det(self.samples) - 1)))


@dataclass
class ScatteringRecord:
    lam: float
    S: np.ndarray
    R: np.ndarray

    @property
    def det_error(self) -> float:
        return float(abs(np.linalg.det(self.S) - 1))


def _trusted_columns(side: Side, lam: complex, n: int) -> tuple[int, ...]:
    if lam.imag == 0:
        return tuple(range(n))
    first_col_side = Side.MINUS if lam.imag > 0 else Side.PLUS
    return (0,) if side is first_col_side else tuple(range(1, n))


def _integrate(potential: Potential, lams: np.ndarray, side: Side, cols: Sequence[int],
               reduction: int, x_eval: np.ndarray) -> np.ndarray:
    """Integrate J_x = (i/2) lam [sigma3, J] + i Q J for selected columns.

    All lambdas go through one adaptive RK45 run; returns (nx, K, n, m).
    When every lam is real the unknown is W = A^-1 J A (the Volterra form),
    whose right-hand side vanishes where q has decayed; A is unitary there so
    nothing grows.  Complex lam uses J directly.
    """
    lams = np.asarray(lams, dtype=complex).ravel()
    n = potential.components + 1
    cols = list(cols)
    s3 = np.diag(sigma3(n - 1)).real
    K, m = lams.size, len(cols)
    y0 = np.zeros((K, n, m), dtype=complex)
    for k, c in enumerate(cols):
        y0[:, c, k] = 1.0
    shape = y0.shape
    interaction = bool(np.all(lams.imag == 0))
    half = 0.5j * lams[:, None] * s3[None, :]            # log of diag(A) / x

    if interaction:
        def rhs(x, y):
            W = y.reshape(shape)
            iQ = 1j * build_Q(potential(np.array([x]))[0], reduction)
            a = np.exp(half * x)
            M = iQ[None] * (a.conj()[:, :, None] * a[:, None, :])
            return np.einsum("kab,kbm->kam", M, W).ravel()
    else:
        D = half[:, :, None] - half[:, None, cols]

        def rhs(x, y):
            J = y.reshape(shape)
            iQ = 1j * build_Q(potential(np.array([x]))[0], reduction)
            return (D * J + np.einsum("ab,kbm->kam", iQ, J)).ravel()

    span = (potential.x0, potential.x1) if side is Side.MINUS else (potential.x1, potential.x0)
    order = np.argsort(x_eval)
    xe = x_eval[order] if side is Side.MINUS else x_eval[order][::-1]
    # Dense output between long steps is only 4th order; capping the step at
    # the node spacing keeps sampled values as accurate as the step endpoints.
    max_step = float(np.max(np.abs(np.diff(xe)))) if xe.size > 2 else np.inf
    sol = solve_ivp(rhs, span, y0.ravel(), method="RK45", rtol=RTOL, atol=ATOL, t_eval=xe,
                    max_step=max_step)
    if sol.status != 0:
        raise StiffnessFailure(f"Jost integration failed: {sol.message}")
    Y = sol.y.T.reshape((len(xe),) + shape)
    if interaction:
        # exp of the exponent difference keeps the diagonal phase exactly 1
        gap = half[:, :, None] - half[:, None, cols]      # (K, n, m)
        Y = np.exp(gap[None] * xe[:, None, None, None]) * Y
    if side is Side.PLUS:
        Y = Y[::-1]
    out = np.empty_like(Y)
    out[order] = Y
    return out


def jost_solve(potential: Potential, lam: complex, side: Side, *, reduction: int = 1,
               full: bool = False, x_eval=None, check_decay: bool = True) -> JostSolution:
    """Jost solution on the potential's nodes.

    For complex lam only the columns analytic in lam's half-plane are returned
    unless ``full`` (then every column is integrated; fine for moderate Im lam).
    """
    if check_decay:
        potential.check_decay()
    lam = complex(lam)
    side = Side(side)
    n = potential.components + 1
    cols = tuple(range(n)) if full else _trusted_columns(side, lam, n)
    x = potential.nodes if x_eval is None else np.asarray(x_eval, float)
    Y = _integrate(potential, np.array([lam]), side, cols, reduction, x)[:, 0]
    samples = np.full((x.size, n, n), np.nan, dtype=complex)
    samples[:, :, list(cols)] = Y
    return JostSolution(side, x, samples, lam, cols)


def _phase(lam: complex, x: float, n: int) -> np.ndarray:
    """Diagonal of A = exp((i/2) lam sigma3 x)."""
    return np.exp(0.5j * lam * x * np.diag(sigma3(n - 1)).real)


def scattering_sweep(potential: Potential, lams, *, reduction: int = 1,
                     check_decay: bool = True) -> list[ScatteringRecord]:
    """S(lam) = A^-1 J_-(x1) A for real lam, all lambdas in one integration."""
    if check_decay:
        potential.check_decay()
    lams = np.asarray(lams, dtype=float).ravel()
    n = potential.components + 1
    Y = _integrate(potential, lams.astype(complex), Side.MINUS, range(n), reduction,
                   np.array([potential.x1]))[0]
    records = []
    for lam, J in zip(lams, Y):
        a = _phase(lam, potential.x1, n)
        S = J * a[None, :] / a[:, None]
        records.append(ScatteringRecord(float(lam), S, np.linalg.inv(S)))
    return records


def scattering_matrix(potential: Potential, lam: float, *, reduction: int = 1,
                      check_decay: bool = True) -> ScatteringRecord:
    if complex(lam).imag != 0:
        raise ValueError("scattering matrix is defined for real lambda")
    return scattering_sweep(potential, [float(complex(lam).real)], reduction=reduction,
                            check_decay=check_decay)[0]


def s11(potential: Potential, lams, *, reduction: int = 1) -> np.ndarray:
    """s11 on the closed upper half-plane, from the analytic first column of J_-."""
    lams = np.asarray(lams, dtype=complex)
    if np.any(lams.imag < 0):
        raise ValueError("s11 extends analytically to Im lam >= 0 only")
    Y = _integrate(potential, lams.ravel(), Side.MINUS, [0], reduction, np.array([potential.x1]))
    return Y[0, :, 0, 0].reshape(lams.shape)


def assemble_sectional(jplus: JostSolution, jminus: JostSolution,
                       record: ScatteringRecord | None = None):
    """Sectionally analytic P+ (and P- on the real axis) at every x node.

    Real lam: P+ = J+ A S+ A^-1 and P- = A R+ A^-1 J+^-1 with S+, R+ the
    triangular collapses of S and R.  Upper half-plane: P+ is assembled from
    columns, ([J-]_1, [J+]_2, ..., [J+]_n), and P- is not defined there.
    """
    if not np.allclose(jplus.x, jminus.x) or jplus.lam != jminus.lam:
        raise ValueError("Jost solutions must share lambda and x nodes")
    lam = jplus.lam
    x = jplus.x
    n = jplus.samples.shape[-1]
    if lam.imag > 0:
        P = jplus.samples.copy()
        P[:, :, 0] = jminus.samples[:, :, 0]
        return SectionalSolution(P, lam, Region.UPPER, x), None
    if lam.imag < 0 or record is None:
        raise ValueError("real-axis assembly needs a scattering record")
    Jp = jplus.samples
    if not np.all(np.isfinite(Jp)):
        raise SingularJost("J+ has untrusted columns")
    Splus = np.eye(n, dtype=complex)
    Splus[:, 0] = record.S[:, 0]
    Rplus = np.eye(n, dtype=complex)
    Rplus[0, :] = record.R[0, :]
    a = np.exp(0.5j * lam.real * np.outer(x, np.diag(sigma3(n - 1)).real))   # (nx, n)
    ASA = a[:, :, None] * Splus[None] / a[:, None, :]
    ARA = a[:, :, None] * Rplus[None] / a[:, None, :]
    try:
        Jp_inv = np.linalg.inv(Jp)
    except np.linalg.LinAlgError:
        raise SingularJost("J+ not invertible at some node") from None
    Pp = Jp @ ASA
    Pm = ARA @ Jp_inv
    return (SectionalSolution(Pp, lam, Region.REAL, x),
            SectionalSolution(Pm, lam, Region.REAL, x))


def jump_matrix(record: ScatteringRecord, x: float) -> np.ndarray:
    """T = A R+ S+ A^-1 written out with the identity r11 s11 + sum r1j sj1 = 1."""
    n = record.S.shape[0]
    lam = record.lam
    T = np.eye(n, dtype=complex)
    T[0, 1:] = record.R[0, 1:] * np.exp(-1j * lam * x)
    T[1:, 0] = record.S[1:, 0] * np.exp(1j * lam * x)
    return T


def jump_check(Pplus: SectionalSolution, Pminus: SectionalSolution, record: ScatteringRecord,
               x: float) -> ResidualReport:
    """||P- P+ - T|| at the node nearest x; ``extras['identity']`` holds the scalar identity error."""
    i = int(np.argmin(np.abs(Pplus.x - x)))
    xi = float(Pplus.x[i])
    prod = Pminus.value[i] @ Pplus.value[i]
    diff = prod - jump_matrix(record, xi)
    ident = abs(record.R[0, :] @ record.S[:, 0] - 1)
    return ResidualReport(float(np.max(np.abs(diff))), float(np.linalg.norm(diff)), (0.0, 0.0),
                          lam=record.lam, extras={"identity": float(ident), "x": xi})


def symmetry_check(potential: Potential, lam: complex, *, reduction: int = 1) -> ResidualReport:
    """Involution residuals of J^dag(conj lam) = G J^-1(lam) G, and of S for real lam.

    G = sigma3 for the printed potential (reduction +1) and the identity for
    its Hermitian counterpart.  Off the real axis the identity is checked in
    the form J^dag(conj lam) G J(lam) = G on the entries built only from
    analytic columns: (k, 1) for J- and (1, k) for J+, k >= 2.
    """
    potential.check_decay()
    lam = complex(lam)
    n = potential.components + 1
    G = sigma3(n - 1) if reduction == 1 else np.eye(n, dtype=complex)
    if lam.imag == 0:
        J = jost_solve(potential, lam, Side.MINUS, reduction=reduction, check_decay=False)
        lhs = np.conj(np.swapaxes(J.samples, -1, -2))
        jres = float(np.max(np.abs(lhs - G @ np.linalg.inv(J.samples) @ G)))
        rec = scattering_matrix(potential, lam.real, reduction=reduction, check_decay=False)
        sres = float(np.max(np.abs(rec.S.conj().T - G @ rec.R @ G)))
        worst = max(jres, sres)
        return ResidualReport(worst, worst, (0.0, 0.0), lam=lam,
                              extras={"jost": jres, "scattering": sres})
    res = 0.0
    for side in (Side.MINUS, Side.PLUS):
        Ja = jost_solve(potential, lam, side, reduction=reduction, check_decay=False).samples
        Jb = jost_solve(potential, lam.conjugate(), side, reduction=reduction, check_decay=False).samples
        prod = np.conj(np.swapaxes(Jb, -1, -2)) @ G @ Ja
        block = prod[:, 1:, 0] if side is Side.MINUS else prod[:, 0, 1:]
        if lam.imag < 0:
            block = prod[:, 0, 1:] if side is Side.MINUS else prod[:, 1:, 0]
        res = max(res, float(np.max(np.abs(block))))
    return ResidualReport(res, res, (0.0, 0.0), lam=lam, extras={"jost": res})


def evolve_scattering(record0: ScatteringRecord, t: float, epsilon: float) -> ScatteringRecord:
    """Exact time dependence: s_1j gains e^{i w t}, s_j1 gains e^{-i w t}, w = lam^2 + eps lam^3."""
    lam = record0.lam
    w = lam ** 2 + epsilon * lam ** 3
    S = record0.S.copy()
    S[0, 1:] *= np.exp(1j * w * t)
    S[1:, 0] *= np.exp(-1j * w * t)
    return ScatteringRecord(lam, S, np.linalg.inv(S))


# -- zeros of s11 --------------------------------------------------------------

@dataclass
class ZeroSearch:
    zeros: list[complex]
    winding: int
    clusters: list[tuple[complex, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"zeros": [[z.real, z.imag] for z in self.zeros], "winding": self.winding}


def _boundary_winding(f, rect, n_side: int = 24, max_rounds: int = 14):
    """Winding number of f around the rectangle, with adaptive boundary refinement."""
    a, b, c, d = rect
    corners = [complex(a, c), complex(b, c), complex(b, d), complex(a, d), complex(a, c)]
    pts = np.concatenate([np.linspace(p, q, n_side, endpoint=False) for p, q in zip(corners, corners[1:])])
    pts = np.append(pts, pts[0])
    vals = f(pts)
    for _ in range(max_rounds):
        mags = np.abs(vals)
        if np.min(mags) < 1e-8 * max(np.max(mags), 1.0):
            raise ContourThroughZero(f"|s11| vanishes on the boundary of {rect}")
        dphi = np.angle(vals[1:] / vals[:-1])
        bad = np.nonzero(np.abs(dphi) > 0.4)[0]
        if bad.size == 0:
            return int(round(np.sum(dphi) / (2 * math.pi)))
        mids = 0.5 * (pts[bad] + pts[bad + 1])
        mvals = f(mids)
        pts = np.insert(pts, bad + 1, mids)
        vals = np.insert(vals, bad + 1, mvals)
    # A phase jump that survives halving the segment this many times sits on a
    # zero of s11 (jump ~ pi across a simple zero on the contour).
    raise ContourThroughZero(f"unresolved phase jump on the boundary of {rect}; "
                             "a zero of s11 lies on or within ~1e-5 of the contour")


def _polish(f, z0: complex, h: float, tol: float) -> complex:
    """Secant iteration on an analytic function."""
    z1 = z0 + h * (0.3 + 0.2j)
    f0, f1 = f(np.array([z0]))[0], f(np.array([z1]))[0]
    for _ in range(40):
        if f1 == f0:
            break
        z2 = z1 - f1 * (z1 - z0) / (f1 - f0)
        z0, f0 = z1, f1
        z1, f1 = z2, f(np.array([z2]))[0]
        if abs(z1 - z0) < tol:
            break
    return complex(z1)


def find_s11_zeros(potential: Potential, region: tuple[float, float, float, float], *,
                   reduction: int = 1, tol: float = 1e-6, polish_size: float = 0.3,
                   min_size: float = 1e-4) -> ZeroSearch:
    """Zeros of s11 inside ``region = (re_min, re_max, im_min, im_max)``.

    Argument-principle count on the boundary, recursive quartering until each
    box holds one zero, then secant polishing.  Boxes that still hold several
    zeros below ``min_size`` are reported as clusters.
    """
    a, b, c, d = region
    if not (b > a and d > c and c >= 0):
        raise ValueError("region must be a non-degenerate rectangle in the closed upper half-plane")
    potential.check_decay()

    def f(z):
        return s11(potential, z, reduction=reduction)

    total = _boundary_winding(f, region)
    zeros: list[complex] = []
    clusters: list[tuple[complex, int]] = []

    def search(rect, wind, depth=0):
        if wind <= 0:
            return
        ra, rb, rc, rd = rect
        size = max(rb - ra, rd - rc)
        centre = complex(0.5 * (ra + rb), 0.5 * (rc + rd))
        if wind == 1 and size <= polish_size:
            z = _polish(f, centre, 0.1 * size, 1e-3 * tol)
            inside = ra - 1e-9 <= z.real <= rb + 1e-9 and rc - 1e-9 <= z.imag <= rd + 1e-9
            if inside and abs(f(np.array([z]))[0]) < 1e-6:
                zeros.append(z)
                return
        if size < min_size:
            clusters.append((centre, wind))
            zeros.extend([centre] * wind)
            return
        for frac in (0.5 + 0.0137, 0.5 - 0.0213, 0.5 + 0.0371):
            mx = ra + frac * (rb - ra)
            my = rc + frac * (rd - rc)
            kids = [(ra, mx, rc, my), (mx, rb, rc, my), (mx, rb, my, rd), (ra, mx, my, rd)]
            try:
                winds = [_boundary_winding(f, k, n_side=12) for k in kids]
            except ContourThroughZero:
                continue
            for k, w in zip(kids, winds):
                search(k, w, depth + 1)
            return
        raise ContourThroughZero(f"could not split {rect} away from zeros")

    search(region, total)
    return ZeroSearch(sorted(zeros, key=lambda z: (z.real, z.imag)), total, clusters)


def s11_zeros(potential: Potential, region: tuple[float, float, float, float], *,
              reduction: int = 1) -> list[complex]:
    return find_s11_zeros(potential, region, reduction=reduction).zeros


# -- export ------------------------------------------------------------------

def sweep_to_csv(records: Sequence[ScatteringRecord]) -> str:
    n = records[0].S.shape[0]
    names = ["lambda"]
    for i in range(n):
        for j in range(n):
            names += [f"re_s{i + 1}{j + 1}", f"im_s{i + 1}{j + 1}"]
    names.append("det_err")
    out = io.StringIO()
    out.write(",".join(names) + "\n")
    for rec in records:
        row = [repr(float(rec.lam))]
        for z in rec.S.ravel():
            row += [repr(float(z.real)), repr(float(z.imag))]
        row.append(repr(rec.det_error))
        out.write(",".join(row) + "\n")
    return out.getvalue()
