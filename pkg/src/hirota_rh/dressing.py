"""Reflectionless Riemann-Hilbert solution and N-soliton fields.

All grid evaluation goes through a rescaled dressing system: every kernel
vector v_j is multiplied by exp(-|Re theta_j|), which keeps each exponential
argument non-positive.  The soliton formula is a ratio, so the rescaling is
exact and removes overflow far from the soliton cores.
"""
from __future__ import annotations

import enum
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (DEFAULT_POLE_GUARD, EXP_LIMIT, Convention, DressingOverflow, FieldGrid,
                   GridSpec, HirotaError, SolitonSpec, SpecError, theta, validate_spec)


class LinearSolveFailure(HirotaError, ArithmeticError):
    """Dressing matrix exactly singular at a node the pole guard let through."""


class PoleAtLambda(HirotaError, ZeroDivisionError):
    pass


class Region(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"
    REAL = "real"

    @classmethod
    def of(cls, lam: complex) -> Region:
        if lam.imag > 0:
            return cls.UPPER
        if lam.imag < 0:
            return cls.LOWER
        return cls.REAL


@dataclass(frozen=True)
class DressingMatrix:
    entries: np.ndarray
    at: tuple[float, float]


@dataclass(frozen=True)
class SectionalSolution:
    value: np.ndarray
    lam: complex
    region: Region
    x: np.ndarray | None = None


class FieldValue(NamedTuple):
    q: np.ndarray       # (..., c)
    pole: np.ndarray    # (...) bool


def _require_valid(spec: SolitonSpec) -> None:
    report = validate_spec(spec)
    if not report.valid:
        raise SpecError("; ".join(report.violations))


def _scaled_system(spec: SolitonSpec, x, t):
    """Rescaled kernel vectors and dressing matrix at broadcast points.

    Returns (V, Vhat, Mt, ref) with V, Vhat of shape (..., N, c+1), Mt of shape
    (..., N, N), and ref an upper bound for |det Mt| built from the absolute
    size of the two terms of every entry (used to detect cancellation).
    """
    lam = spec.lambdas
    norms = spec.norms
    x = np.asarray(x, dtype=float)[..., None]
    t = np.asarray(t, dtype=float)[..., None]
    th = theta(lam, spec.params.epsilon, x, t)                   # (..., N)
    a = np.abs(th.real)
    thc = np.conj(th)
    lead = np.exp(-th - a)
    tail = np.exp(th - a)
    V = np.concatenate([lead[..., None], norms * tail[..., None]], axis=-1)
    lead_h = spec.convention.sign * np.exp(-thc - a)
    tail_h = np.exp(thc - a)
    Vh = np.concatenate([lead_h[..., None], norms.conj() * tail_h[..., None]], axis=-1)
    denom = lam.conj()[:, None] - lam[None, :]
    Mt = np.einsum("...ja,...ka->...jk", Vh, V) / denom
    term1 = np.abs(lead_h)[..., :, None] * np.abs(lead)[..., None, :]
    gram = np.abs(norms.conj() @ norms.T)
    term2 = gram * np.abs(tail_h)[..., :, None] * np.abs(tail)[..., None, :]
    ref = np.prod(np.sum((term1 + term2) / np.abs(denom), axis=-1), axis=-1)
    return V, Vh, Mt, ref


def build_M(spec: SolitonSpec, x: float, t: float) -> DressingMatrix:
    """Unscaled dressing matrix M_jk = v_hat_j v_k / (conj(lam_j) - lam_k)."""
    _require_valid(spec)
    th = theta(spec.lambdas, spec.params.epsilon, x, t)
    if np.max(np.abs(th.real)) > EXP_LIMIT:
        raise DressingOverflow("exponent out of range; use the scaled evaluators")
    thc = np.conj(th)
    gram = spec.norms.conj() @ spec.norms.T
    s_jk = thc[:, None] + th[None, :]
    num = spec.convention.sign * np.exp(-s_jk) + gram * np.exp(s_jk)
    lam = spec.lambdas
    return DressingMatrix(num / (lam.conj()[:, None] - lam[None, :]), (float(x), float(t)))


def _solve_nodes(spec: SolitonSpec, x: np.ndarray, t: np.ndarray, mask_rule, pole_guard: float,
                 extra_mask: np.ndarray | None = None):
    V, Vh, Mt, ref = _scaled_system(spec, x, t)
    det = np.abs(np.linalg.det(Mt))
    mask = mask_rule(det, ref, pole_guard) | ~np.isfinite(det)
    if extra_mask is not None:
        mask = mask | extra_mask
    n = spec.n
    Msafe = np.where(mask[..., None, None], np.eye(n), Mt)
    # q_l = -sum_jk (V_j)_0 (M^-1)_jk (Vhat_k)_l
    rhs = Vh[..., 1:]
    try:
        Y = np.linalg.solve(Msafe, rhs)
    except np.linalg.LinAlgError:
        raise LinearSolveFailure("dressing matrix singular at an unmasked node; "
                                 "increase pole_guard") from None
    q = -np.einsum("...j,...jl->...l", V[..., 0], Y)
    q = np.where(mask[..., None], np.nan, q)
    cond = np.where(mask, np.inf, np.linalg.cond(Msafe))
    return q, mask, cond


def _median_rule(det, ref, guard):
    finite = det[np.isfinite(det)]
    med = np.median(finite) if finite.size else 0.0
    return det < guard * med


def _ratio_rule(det, ref, guard):
    return det < guard * ref


def _straddle_mask(Mt: np.ndarray, n: int) -> np.ndarray:
    """Nodes nearest a pole line crossing between x-neighbours.

    M is anti-Hermitian, so (-i)^N det M is real; a sign flip between
    adjacent x nodes brackets a zero, and the node with the smaller |det| is
    the one to drop.  Input and output are (nx, nt, ...) shaped.
    """
    d = np.linalg.det(Mt) * (-1j) ** n
    sd = np.sign(d.real)
    mag = np.abs(d)
    flip = (sd[:-1] * sd[1:]) < 0
    left_smaller = mag[:-1] <= mag[1:]
    mask = np.zeros(d.shape, dtype=bool)
    mask[:-1] |= flip & left_smaller
    mask[1:] |= flip & ~left_smaller
    return mask


def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("HIROTA_RH_THREADS", "0") or 0)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def nsoliton_eval(spec: SolitonSpec, grid: GridSpec, *, pole_guard: float = DEFAULT_POLE_GUARD,
                  workers: int | None = None) -> FieldGrid:
    """Evaluate the N-soliton fields on every grid node.

    A node is pole-masked when |det M| (rescaled) falls below
    ``pole_guard`` times its median over the grid, or when it is the node
    nearest a sign change of the real quantity (-i)^N det M along x.  Nodes
    are independent, so the grid is split into chunks evaluated concurrently.
    """
    _require_valid(spec)
    X, T = np.meshgrid(grid.x, grid.t, indexing="ij")
    xs, ts = X.ravel(), T.ravel()
    # Median is a global statistic: compute the mask reference first.
    _, _, Mt, _ = _scaled_system(spec, xs, ts)
    det = np.abs(np.linalg.det(Mt))
    finite = det[np.isfinite(det)]
    med = np.median(finite) if finite.size else 0.0
    straddle = _straddle_mask(Mt.reshape((grid.nx, grid.nt) + Mt.shape[1:]), spec.n).ravel()

    def rule(d, ref, guard):
        return d < guard * med

    nworkers = min(_worker_count(workers), max(1, xs.size // 2048))
    chunks = np.array_split(np.arange(xs.size), nworkers)
    if nworkers == 1:
        parts = [_solve_nodes(spec, xs, ts, rule, pole_guard, straddle)]
    else:
        with ThreadPoolExecutor(nworkers) as pool:
            parts = list(pool.map(lambda idx: _solve_nodes(spec, xs[idx], ts[idx], rule, pole_guard,
                                                           straddle[idx]), chunks))
    q = np.concatenate([p[0] for p in parts])
    mask = np.concatenate([p[1] for p in parts])
    cond = np.concatenate([p[2] for p in parts])
    shape = (grid.nx, grid.nt)
    return FieldGrid(grid, q.reshape(shape + (spec.components,)), mask.reshape(shape),
                     cond.reshape(shape))


def nsoliton_at(spec: SolitonSpec, x, t, *, pole_guard: float = DEFAULT_POLE_GUARD) -> FieldValue:
    """N-soliton fields at arbitrary broadcast points.

    Off-grid there is no meaningful median, so the pole flag compares |det M|
    with an entrywise bound on it: a ratio below ``pole_guard`` means the two
    terms of the dressing numerator cancel, i.e. the point sits on a pole.
    """
    _require_valid(spec)
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    q, mask, _ = _solve_nodes(spec, x, t, _ratio_rule, pole_guard)
    return FieldValue(q, mask)


def residue_matrix(spec: SolitonSpec, x: float, t: float) -> np.ndarray:
    """Coefficient P1 of 1/lam in the large-lam expansion of P+."""
    _require_valid(spec)
    V, Vh, Mt, _ = _scaled_system(spec, x, t)
    try:
        Y = np.linalg.solve(Mt, Vh)
    except np.linalg.LinAlgError:
        raise LinearSolveFailure("dressing matrix singular") from None
    return V.T @ Y


def reconstruct_potential(spec: SolitonSpec, x: float, t: float, *,
                          pole_guard: float = DEFAULT_POLE_GUARD) -> FieldValue:
    """q_l = -(P1)_{1, l+1} read off the residue matrix."""
    _require_valid(spec)
    _, _, Mt, ref = _scaled_system(spec, x, t)
    pole = bool(abs(np.linalg.det(Mt)) < pole_guard * ref)
    if pole:
        return FieldValue(np.full(spec.components, np.nan + 0j), np.bool_(True))
    P1 = residue_matrix(spec, x, t)
    return FieldValue(-P1[0, 1:], np.bool_(False))


def evaluate_Pplus(spec: SolitonSpec, x: float, t: float, lam: complex) -> SectionalSolution:
    """P+(lam) = I + sum_jk v_j (M^-1)_jk v_hat_k / (lam - conj(lam_k)).

    The pole attached to v_hat_k sits at conj(lam_k); with this placement
    P+(lam_j) v_j = 0 and det P+ is the Blaschke product over the spectrum.
    """
    _require_valid(spec)
    lam = complex(lam)
    poles = spec.lambdas.conj()
    if np.min(np.abs(lam - poles)) < 1e-12:
        raise PoleAtLambda(f"lambda = {lam} coincides with a pole of P+")
    V, Vh, Mt, _ = _scaled_system(spec, x, t)
    try:
        Y = np.linalg.solve(Mt, Vh / (lam - poles)[:, None])
    except np.linalg.LinAlgError:
        raise LinearSolveFailure("dressing matrix singular") from None
    value = np.eye(spec.components + 1, dtype=complex) + V.T @ Y
    return SectionalSolution(value, lam, Region.of(lam))


def blaschke(spec: SolitonSpec, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    out = np.ones_like(lam)
    for lj in spec.lambdas:
        out = out * (lam - lj) / (lam - np.conj(lj))
    return out


# -- closed forms ------------------------------------------------------------

def _cancellation_pole(den, scale, pole_guard):
    return np.abs(den) < pole_guard * scale


def one_soliton_closed(spec: SolitonSpec, x, t, *, pole_guard: float = DEFAULT_POLE_GUARD) -> FieldValue:
    if spec.n != 1:
        raise SpecError("one_soliton_closed needs exactly one spectral point")
    _require_valid(spec)
    (pt,) = spec.points
    lam = pt.lam
    m = np.asarray(pt.norm_consts)
    th = theta(lam, spec.params.epsilon, np.asarray(x, float), np.asarray(t, float))
    thc = np.conj(th)
    g = float(np.sum(np.abs(m) ** 2))
    e_minus = np.exp(-(thc + th))
    e_plus = np.exp(thc + th)
    den = spec.convention.sign * e_minus + g * e_plus
    pole = _cancellation_pole(den, np.abs(e_minus) + g * np.abs(e_plus), pole_guard)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = -np.exp(thc - th) * (lam.conjugate() - lam) / den
        q = factor[..., None] * m.conj()
    q = np.where(pole[..., None], np.nan, q)
    return FieldValue(q, pole)


def one_soliton_csch(spec: SolitonSpec, x, t, *, pole_guard: float = DEFAULT_POLE_GUARD) -> FieldValue:
    """One-soliton in csch form, q = i Im(lam) m^* e^{theta^*-theta-xi} csch(theta^*+theta+xi).

    e^{2 xi} = |m|^2 + |n|^2 + ...  The overall factor is +i Im(lam); this is
    what the rational closed form reduces to.
    """
    if spec.n != 1:
        raise SpecError("one_soliton_csch needs exactly one spectral point")
    if spec.convention is not Convention.AS_PRINTED:
        raise SpecError("csch form exists only for the as-printed convention")
    _require_valid(spec)
    (pt,) = spec.points
    m = np.asarray(pt.norm_consts)
    xi = 0.5 * math.log(float(np.sum(np.abs(m) ** 2)))
    th = theta(pt.lam, spec.params.epsilon, np.asarray(x, float), np.asarray(t, float))
    thc = np.conj(th)
    arg = (thc + th).real + xi
    sh = np.sinh(arg)
    pole = _cancellation_pole(sh, np.cosh(arg), pole_guard)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = 1j * pt.lam.imag * np.exp(thc - th - xi) / sh
        q = factor[..., None] * m.conj()
    q = np.where(pole[..., None], np.nan, q)
    return FieldValue(q, pole)


def two_soliton_xi(spec: SolitonSpec, xi_form: str = "repaired") -> tuple[complex, complex, complex]:
    """Phase shifts (xi1, xi2, xi3) used in the hyperbolic two-soliton form.

    ``repaired``: e^{2 xi1} = <m1, m1>, e^{2 xi2} = <m1, m2>, e^{2 xi3} = <m2, m2>.
    ``printed``: xi1 taken from <m1, m2> (negative control, wrong in general).
    Principal branch of the complex logarithm throughout.
    """
    m1, m2 = spec.norms
    g11 = np.vdot(m1, m1).real
    g12 = np.vdot(m1, m2)
    g22 = np.vdot(m2, m2).real
    if g12 == 0:
        raise SpecError("two-soliton sinh form needs <m1, m2> != 0")
    xi2 = 0.5 * np.log(complex(g12))
    xi3 = 0.5 * math.log(g22)
    if xi_form == "repaired":
        xi1 = 0.5 * math.log(g11)
    elif xi_form == "printed":
        xi1 = xi2
    else:
        raise ValueError(f"unknown xi_form {xi_form!r}")
    return complex(xi1), complex(xi2), complex(xi3)


def two_soliton_closed(spec: SolitonSpec, x, t, *, xi_form: str = "repaired",
                       pole_guard: float = DEFAULT_POLE_GUARD) -> FieldValue:
    """Two-soliton fields from the hyperbolic form of M and an explicit 2x2 inverse."""
    if spec.n != 2:
        raise SpecError("two_soliton_closed needs exactly two spectral points")
    _require_valid(spec)
    l1, l2 = spec.lambdas
    xi1, xi2, xi3 = two_soliton_xi(spec, xi_form)
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    eps = spec.params.epsilon
    th1, th2 = theta(l1, eps, x, t), theta(l2, eps, x, t)
    c1, c2 = np.conj(th1), np.conj(th2)
    hyp = np.sinh if spec.convention is Convention.AS_PRINTED else np.cosh
    M11 = 2 * np.exp(xi1) / (l1.conjugate() - l1) * hyp(c1 + th1 + xi1)
    M12 = 2 * np.exp(xi2) / (l1.conjugate() - l2) * hyp(c1 + th2 + xi2)
    M21 = 2 * np.exp(np.conj(xi2)) / (l2.conjugate() - l1) * hyp(th1 + c2 + np.conj(xi2))
    M22 = 2 * np.exp(xi3) / (l2.conjugate() - l2) * hyp(c2 + th2 + xi3)
    det = M11 * M22 - M12 * M21
    scale = np.abs(M11 * M22) + np.abs(M12 * M21)
    pole = _cancellation_pole(det, scale, pole_guard)
    with np.errstate(divide="ignore", invalid="ignore"):
        i11, i12, i21, i22 = M22 / det, -M12 / det, -M21 / det, M11 / det
        m1, m2 = spec.norms.conj()
        q = -(np.multiply.outer(np.exp(c1 - th1) * i11, m1)
              + np.multiply.outer(np.exp(c1 - th2) * i21, m1)
              + np.multiply.outer(np.exp(c2 - th1) * i12, m2)
              + np.multiply.outer(np.exp(c2 - th2) * i22, m2))
    q = np.where(pole[..., None], np.nan, q)
    return FieldValue(q, pole)


# -- export ------------------------------------------------------------------

def _columns(field: FieldGrid):
    """Flattened export columns, time slices outermost."""
    g = field.grid
    X, T = np.meshgrid(g.x, g.t, indexing="ij")
    order = lambda a: np.ascontiguousarray(a.T).ravel()  # noqa: E731
    cols = {"x": order(X), "t": order(T)}
    for l in range(field.components):
        v = order(field.values[:, :, l])
        cols[f"re_q{l + 1}"] = v.real
        cols[f"im_q{l + 1}"] = v.imag
    cols["pole"] = order(field.pole_mask).astype(int)
    return cols


def _fmt(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else "nan"


def field_to_csv(field: FieldGrid) -> str:
    cols = _columns(field)
    names = list(cols)
    out = io.StringIO()
    out.write(",".join(names) + "\n")
    n = len(cols["x"])
    for i in range(n):
        row = [_fmt(cols[k][i]) if k != "pole" else str(int(cols[k][i])) for k in names]
        out.write(",".join(row) + "\n")
    return out.getvalue()


def field_to_json(field: FieldGrid) -> str:
    cols = _columns(field)
    doc = {}
    for k, v in cols.items():
        if k == "pole":
            doc[k] = [int(b) for b in v]
        else:
            doc[k] = [float(a) if np.isfinite(a) else None for a in v]
    return json.dumps(doc, separators=(",", ":"))


def field_from_json(doc: dict) -> FieldGrid:
    """Inverse of :func:`field_to_json` for evenly spaced grids."""
    try:
        xs = np.asarray(doc["x"], float)
        ts = np.asarray(doc["t"], float)
        c = 0
        while f"re_q{c + 1}" in doc:
            c += 1
        if c == 0:
            raise KeyError("re_q1")
        ux, ut = np.unique(xs), np.unique(ts)
        nx, nt = ux.size, ut.size
        grid = GridSpec(float(ux[0]), float(ux[-1]), nx, float(ut[0]), float(ut[-1]), nt)
        vals = np.empty((nx, nt, c), dtype=complex)
        for l in range(c):
            re = np.array([np.nan if v is None else v for v in doc[f"re_q{l + 1}"]], float)
            im = np.array([np.nan if v is None else v for v in doc[f"im_q{l + 1}"]], float)
            vals[:, :, l] = (re + 1j * im).reshape(nt, nx).T
        pole = np.asarray(doc.get("pole", np.zeros(nx * nt)), dtype=bool).reshape(nt, nx).T
    except (KeyError, ValueError, TypeError) as exc:
        raise SpecError(f"field document: {exc}") from None
    return FieldGrid(grid, vals, pole)
