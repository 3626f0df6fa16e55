"""Shared domain types, the soliton phase kernel, dressing vectors and spec I/O."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

# |Re theta| beyond this overflows exp() in double precision.
EXP_LIMIT = 700.0
DEFAULT_POLE_GUARD = 1e-8


class HirotaError(Exception):
    """Base class for errors raised by this package."""


class SpecError(HirotaError, ValueError):
    """Malformed or invalid soliton specification."""


class DressingOverflow(HirotaError, OverflowError):
    pass


class GridTooCoarse(HirotaError, ValueError):
    pass


class Convention(enum.Enum):
    """Sign of the e^{-(theta_j^* + theta_k)} term in the dressing matrix.

    AS_PRINTED keeps the minus sign forced by the sigma_3 symmetry of the
    printed Lax pair and produces csch-type (singular) solitons.
    REGULARIZED flips it and produces bounded sech solitons.
    """

    AS_PRINTED = "as-printed"
    REGULARIZED = "regularized"

    @property
    def sign(self) -> int:
        return -1 if self is Convention.AS_PRINTED else 1

    @property
    def reduction(self) -> int:
        """Sign kappa of the lower-left block of Q that this family solves.

        Q = [[0, -q^T], [kappa q^*, 0]]; kappa = +1 is the printed potential.
        """
        return 1 if self is Convention.AS_PRINTED else -1


@dataclass(frozen=True)
class HirotaParams:
    epsilon: float = 0.0
    k1: complex = 1j
    A1: complex = 0.5j
    components: int = 2

    def __post_init__(self):
        if int(self.components) < 1:
            raise SpecError("components: must be >= 1")
        object.__setattr__(self, "components", int(self.components))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "k1", complex(self.k1))
        object.__setattr__(self, "A1", complex(self.A1))

    @classmethod
    def dark(cls, epsilon: float = 0.0, components: int = 2) -> HirotaParams:
        """Preset k1 = i, A1 = i/2 used for the Lax pair."""
        return cls(epsilon, 1j, 0.5j, components)

    @classmethod
    def bright(cls, epsilon: float = 0.0, components: int = 2) -> HirotaParams:
        """Preset k1 = 1, A1 = -i/2."""
        return cls(epsilon, 1.0, -0.5j, components)


@dataclass(frozen=True)
class SpectralPoint:
    lam: complex
    norm_consts: tuple[complex, ...]

    def __post_init__(self):
        object.__setattr__(self, "lam", complex(self.lam))
        object.__setattr__(self, "norm_consts", tuple(complex(m) for m in self.norm_consts))

    @property
    def v0(self) -> np.ndarray:
        """Constant kernel vector [1, m, n, ...]."""
        return np.array((1.0,) + self.norm_consts, dtype=complex)


@dataclass(frozen=True)
class SolitonSpec:
    params: HirotaParams
    points: tuple[SpectralPoint, ...]
    convention: Convention = Convention.AS_PRINTED

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def components(self) -> int:
        return self.params.components

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points], dtype=complex)

    @property
    def norms(self) -> np.ndarray:
        """N x c array of normalization constants."""
        return np.array([p.norm_consts for p in self.points], dtype=complex).reshape(self.n, -1)

    def with_convention(self, convention: Convention) -> SolitonSpec:
        return SolitonSpec(self.params, self.points, convention)


@dataclass(frozen=True)
class GridSpec:
    x0: float
    x1: float
    nx: int
    t0: float = 0.0
    t1: float = 0.0
    nt: int = 1

    def __post_init__(self):
        if self.nx < 2:
            raise ValueError("nx must be >= 2")
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if not self.x1 > self.x0:
            raise ValueError("x1 must exceed x0")
        if self.t1 < self.t0:
            raise ValueError("t1 must be >= t0")
        if self.nt > 1 and self.t1 == self.t0:
            raise ValueError("nt > 1 needs t1 > t0")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.nt)

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def ht(self) -> float:
        return (self.t1 - self.t0) / (self.nt - 1) if self.nt > 1 else 0.0

    def refined(self, factor: int = 2) -> GridSpec:
        nt = self.nt if self.nt == 1 else factor * (self.nt - 1) + 1
        return GridSpec(self.x0, self.x1, factor * (self.nx - 1) + 1, self.t0, self.t1, nt)

    @classmethod
    def parse(cls, text: str) -> GridSpec:
        """Parse ``x0:x1:nx,t0:t1:nt`` (the t part may be omitted)."""
        try:
            parts = text.split(",")
            x0, x1, nx = parts[0].split(":")
            if len(parts) > 1:
                t0, t1, nt = parts[1].split(":")
            else:
                t0, t1, nt = "0", "0", "1"
            return cls(float(x0), float(x1), int(nx), float(t0), float(t1), int(nt))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"bad grid {text!r}: expected x0:x1:nx,t0:t1:nt ({exc})") from None

    def format(self) -> str:
        return f"{self.x0!r}:{self.x1!r}:{self.nx},{self.t0!r}:{self.t1!r}:{self.nt}"


@dataclass
class FieldGrid:
    """Complex envelopes q_l(x_i, t_j) stored as an nx x nt x c array.

    ``pole_mask`` marks samples that must not be used: nodes near a dressing
    singularity, or, for derived fields, nodes where a stencil did not fit.
    """

    grid: GridSpec
    values: np.ndarray
    pole_mask: np.ndarray
    condition: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim == 2:
            self.values = self.values[..., None]
        self.pole_mask = np.asarray(self.pole_mask, dtype=bool)
        shape = (self.grid.nx, self.grid.nt)
        if self.values.shape[:2] != shape or self.pole_mask.shape != shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {shape}")

    @property
    def components(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_function(cls, grid: GridSpec, func, components: int | None = None) -> FieldGrid:
        """Sample ``func(X, T) -> (..., c)`` on the grid with nothing masked."""
        X, T = np.meshgrid(grid.x, grid.t, indexing="ij")
        vals = np.asarray(func(X, T), dtype=complex)
        if vals.ndim == 2:
            vals = vals[..., None]
        if components is not None and vals.shape[2] != components:
            raise ValueError("component count mismatch")
        return cls(grid, vals, np.zeros((grid.nx, grid.nt), dtype=bool))

    def at_time_index(self, j: int) -> FieldGrid:
        t = float(self.grid.t[j])
        g = GridSpec(self.grid.x0, self.grid.x1, self.grid.nx, t, t, 1)
        cond = None if self.condition is None else self.condition[:, j:j + 1]
        return FieldGrid(g, self.values[:, j:j + 1], self.pole_mask[:, j:j + 1], cond)

    def perturbed(self, eps: float, seed: int = 0) -> FieldGrid:
        """Copy with complex multiplicative noise of relative size ``eps``."""
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(self.values.shape) + 1j * rng.standard_normal(self.values.shape)
        vals = self.values * (1.0 + eps * noise / math.sqrt(2.0))
        return FieldGrid(self.grid, vals, self.pole_mask.copy(), self.condition)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def theta(lam, epsilon, x, t):
    """Soliton phase (i/2)[lam x - (lam^2 + eps lam^3) t]; broadcasts over arrays."""
    lam = np.asarray(lam, dtype=complex)
    return 0.5j * (lam * x - (lam ** 2 + epsilon * lam ** 3) * t)


def sigma3(components: int) -> np.ndarray:
    return np.diag([-1.0] + [1.0] * components).astype(complex)


def dressing_vectors(point: SpectralPoint, epsilon: float, x: float, t: float,
                     convention: Convention = Convention.AS_PRINTED):
    """Kernel column v = e^{theta sigma3} v0 and row v_hat = v0^dag e^{theta^* sigma3} sigma3.

    Under REGULARIZED the trailing sigma3 is dropped, which flips the sign of
    the first entry of v_hat.
    """
    if not point.lam.imag > 0:
        raise SpecError("spectral point must lie in the upper half-plane")
    th = complex(theta(point.lam, epsilon, x, t))
    if abs(th.real) > EXP_LIMIT:
        raise DressingOverflow(f"|Re theta| = {abs(th.real):.1f} exceeds exponent range")
    v0 = point.v0
    e = np.exp(np.array([-th] + [th] * len(point.norm_consts)))
    v = e * v0
    # theta evaluated at conj(lam) equals conj(theta) for real x, t, eps
    thc = th.conjugate()
    ehat = np.exp(np.array([-thc] + [thc] * len(point.norm_consts)))
    vhat = v0.conj() * ehat
    if convention is Convention.AS_PRINTED:
        vhat[0] = -vhat[0]
    return v, vhat


def validate_spec(spec: SolitonSpec) -> ValidationReport:
    report = ValidationReport()
    if spec.n < 1:
        report.violations.append("points: at least one spectral point is required")
    c = spec.params.components
    for i, p in enumerate(spec.points):
        if not p.lam.imag > 0:
            report.violations.append(
                f"points[{i}].lambda: spectral point not in upper half-plane (Im = {p.lam.imag:g})")
        if len(p.norm_consts) != c:
            report.violations.append(
                f"points[{i}].norm: expected {c} constants, got {len(p.norm_consts)}")
        if all(m == 0 for m in p.norm_consts):
            report.violations.append(f"points[{i}].norm: all normalization constants are zero")
        if not all(np.isfinite([p.lam] + list(p.norm_consts))):
            report.violations.append(f"points[{i}]: non-finite value")
    for i in range(spec.n):
        for j in range(i + 1, spec.n):
            if spec.points[i].lam == spec.points[j].lam:
                report.violations.append(
                    f"points[{i}], points[{j}]: duplicate lambda breaks the simple-zero assumption")
    return report


# -- JSON serialization ------------------------------------------------------

def _pair(z: complex) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _complex(obj: Any, where: str) -> complex:
    if (not isinstance(obj, (list, tuple)) or len(obj) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj)):
        raise SpecError(f"{where}: expected [re, im] pair, got {obj!r}")
    return complex(obj[0], obj[1])


def spec_to_dict(spec: SolitonSpec) -> dict:
    p = spec.params
    return {
        "epsilon": p.epsilon,
        "k1": _pair(p.k1),
        "A1": _pair(p.A1),
        "components": p.components,
        "convention": spec.convention.value,
        "points": [{"lambda": _pair(pt.lam), "norm": [_pair(m) for m in pt.norm_consts]}
                   for pt in spec.points],
    }


def spec_from_dict(doc: Any) -> SolitonSpec:
    if not isinstance(doc, dict):
        raise SpecError("spec: top level must be a JSON object")
    try:
        eps = doc.get("epsilon", 0.0)
        if not isinstance(eps, (int, float)) or isinstance(eps, bool):
            raise SpecError(f"epsilon: expected a number, got {eps!r}")
        k1 = _complex(doc["k1"], "k1") if "k1" in doc else 1j
        a1 = _complex(doc["A1"], "A1") if "A1" in doc else 0.5j
        comps = doc.get("components", 2)
        if not isinstance(comps, int) or isinstance(comps, bool) or comps < 1:
            raise SpecError(f"components: expected an integer >= 1, got {comps!r}")
        conv_text = doc.get("convention", Convention.AS_PRINTED.value)
        try:
            conv = Convention(conv_text)
        except ValueError:
            raise SpecError(f"convention: expected 'as-printed' or 'regularized', got {conv_text!r}") from None
        raw_points = doc["points"]
        if not isinstance(raw_points, list):
            raise SpecError("points: expected a list")
        points = []
        for i, rp in enumerate(raw_points):
            if not isinstance(rp, dict):
                raise SpecError(f"points[{i}]: expected an object")
            lam = _complex(rp.get("lambda"), f"points[{i}].lambda")
            norm = rp.get("norm")
            if not isinstance(norm, list):
                raise SpecError(f"points[{i}].norm: expected a list of [re, im] pairs")
            points.append(SpectralPoint(lam, tuple(_complex(m, f"points[{i}].norm[{k}]")
                                                   for k, m in enumerate(norm))))
    except KeyError as exc:
        raise SpecError(f"{exc.args[0]}: required field missing") from None
    return SolitonSpec(HirotaParams(float(eps), k1, a1, comps), tuple(points), conv)


def load_spec(path) -> SolitonSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return spec_from_dict(doc)


def dump_spec(spec: SolitonSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2)


def make_spec(lambdas: Sequence[complex], norms: Sequence[Sequence[complex]], *,
              epsilon: float = 0.0, convention: Convention | str = Convention.AS_PRINTED,
              k1: complex = 1j, A1: complex = 0.5j) -> SolitonSpec:
    """Convenience constructor: ``make_spec([1j], [[1, 0]])``."""
    comps = len(norms[0])
    pts = tuple(SpectralPoint(l, tuple(m)) for l, m in zip(lambdas, norms))
    return SolitonSpec(HirotaParams(epsilon, k1, A1, comps), pts, Convention(convention))
