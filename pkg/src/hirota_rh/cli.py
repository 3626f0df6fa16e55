"""Command-line front end: ``hirota-rh generate|verify|scatter|roundtrip``.

Exit codes: 0 success, 2 spec or usage error, 3 I/O error, 4 verification
failure, 5 scattering precondition or solver failure, 6 round-trip mismatch.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (Convention, DressingOverflow, FieldGrid, GridSpec, GridTooCoarse, SolitonSpec,
                   SpecError, sigma3, spec_from_dict, spec_to_dict, validate_spec)
from .dressing import field_from_json, field_to_csv, field_to_json, nsoliton_eval
from .laxpair import (DEFAULT_LAMBDA_SAMPLES, PINNED_G_FORM, PINNED_ORDERING, PINNED_THIRD_ORDER,
                      focusing_params, pde_residual, reduction_of, refinement_study,
                      zero_curvature_residual)
from .scattering import (ContourThroughZero, DecayViolation, Potential, Side, StiffnessFailure,
                         assemble_sectional, find_s11_zeros, jost_solve, jump_check, scattering_sweep,
                         sweep_to_csv)

EXIT_OK, EXIT_SPEC, EXIT_IO, EXIT_VERIFY, EXIT_SCATTER, EXIT_ROUNDTRIP = 0, 2, 3, 4, 5, 6

ORDER_GATE = 1.7
RESIDUAL_TOL = 1e-4
MATCH_TOL = 1e-3
PERTURB_SEED = 12345


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class Sweep:
    lmin: float
    lmax: float
    count: int

    @classmethod
    def parse(cls, text: str) -> Sweep:
        try:
            a, b, n = text.split(":")
            sw = cls(float(a), float(b), int(n))
        except ValueError:
            raise ValueError(f"bad sweep {text!r}: expected lmin:lmax:count") from None
        if sw.count < 1 or (sw.count > 1 and not sw.lmax > sw.lmin):
            raise ValueError(f"bad sweep {text!r}: need count >= 1 and lmax > lmin")
        return sw

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lmin, self.lmax, self.count)


@dataclass
class RunConfig:
    command: str
    spec_path: Path
    output_path: Path
    grid: GridSpec | None = None
    format: str = "csv"
    lambda_sweep: Sweep | None = None
    refine_levels: int = 3
    perturb: float = 0.0
    force: bool = False
    doc: dict = field(default_factory=dict)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _meta(started: float) -> dict:
    return {"version": _version(), "python": platform.python_version(),
            "elapsed_s": round(time.perf_counter() - started, 3),
            "threads": os.environ.get("HIROTA_RH_THREADS", "0")}


# -- config ------------------------------------------------------------------

def _read_doc(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_SPEC, f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                                  f"{exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_SPEC, f"{path}: top level must be a JSON object")
    return doc


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge the optional ``run`` object of the input file with command-line flags (flags win)."""
    spec_path = Path(args.spec)
    doc = _read_doc(spec_path)
    run = doc.get("run", {})
    if not isinstance(run, dict):
        raise CliError(EXIT_SPEC, "run: expected an object")

    def pick(flag, key):
        return flag if flag is not None else run.get(key)

    try:
        out = pick(args.out, "out")
        if not out:
            raise ValueError("--out is required (or run.out in the input file)")
        grid_text = pick(args.grid, "grid")
        sweep_text = pick(args.sweep, "sweep")
        fmt = pick(args.format, "format") or ("json" if str(out).endswith(".json") else "csv")
        if fmt not in ("csv", "json"):
            raise ValueError(f"format: expected csv or json, got {fmt!r}")
        levels = int(pick(args.levels, "levels") or 3)
        if levels < 1:
            raise ValueError("levels must be >= 1")
        perturb = float(pick(args.perturb, "perturb") or 0.0)
        cfg = RunConfig(
            command=args.command, spec_path=spec_path, output_path=Path(out),
            grid=GridSpec.parse(grid_text) if grid_text else None, format=fmt,
            lambda_sweep=Sweep.parse(sweep_text) if sweep_text else None,
            refine_levels=levels, perturb=perturb, force=bool(args.force), doc=doc)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_SPEC, str(exc)) from None
    if cfg.command in ("generate", "verify") and cfg.grid is None:
        raise CliError(EXIT_SPEC, f"{cfg.command} needs --grid (or run.grid)")
    if cfg.command == "scatter" and cfg.lambda_sweep is None:
        raise CliError(EXIT_SPEC, "scatter needs --sweep (or run.sweep)")
    return cfg


def _spec(cfg: RunConfig) -> SolitonSpec:
    spec = spec_from_dict({k: v for k, v in cfg.doc.items() if k != "run"})
    report = validate_spec(spec)
    if not report.valid:
        raise SpecError("; ".join(report.violations))
    return spec


def _claim(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(EXIT_IO, f"{path} exists; pass --force to overwrite")


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


# -- commands ----------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    started = time.perf_counter()
    spec = _spec(cfg)
    _claim(cfg.output_path, cfg.force)
    _claim(_sidecar(cfg.output_path), cfg.force)
    fld = nsoliton_eval(spec, cfg.grid)
    data = field_to_csv(fld) if cfg.format == "csv" else field_to_json(fld) + "\n"
    mags = np.where(fld.pole_mask[..., None], 0.0, np.abs(np.nan_to_num(fld.values)))
    side = {
        "spec": spec_to_dict(spec),
        "grid": cfg.grid.format(),
        "format": cfg.format,
        "pole_mask_count": int(fld.pole_mask.sum()),
        "pole_mask_per_slice": [int(n) for n in fld.pole_mask.sum(axis=0)],
        "peak_amplitude": [float(a) for a in mags.max(axis=(0, 1))],
        "meta": _meta(started),
    }
    _write(cfg.output_path, data)
    _write(_sidecar(cfg.output_path), _dumps(side))
    print(f"wrote {cfg.output_path} ({cfg.grid.nx * cfg.grid.nt} rows, "
          f"{side['pole_mask_count']} masked)")
    return EXIT_OK


def verification_setup(spec: SolitonSpec):
    """Parameters and reduction under which ``spec``'s fields are checked.

    Regularized solitons solve the focusing system, reached by k1 -> -i k1;
    as-printed ones are checked against the literal parameters.
    """
    params = focusing_params(spec.params) if spec.convention is Convention.REGULARIZED else spec.params
    return params, reduction_of(params)


def run_verification(spec: SolitonSpec, grid: GridSpec, levels: int, perturb: float = 0.0) -> dict:
    params, red = verification_setup(spec)

    def make(g):
        fld = nsoliton_eval(spec, g)
        return fld.perturbed(perturb, PERTURB_SEED) if perturb else fld

    fields: dict[GridSpec, FieldGrid] = {}

    def cached(g):
        if g not in fields:
            fields[g] = make(g)
        return fields[g]

    pde = refinement_study(cached, grid, levels,
                           lambda f: pde_residual(f, params, third_order=PINNED_THIRD_ORDER))
    zc = refinement_study(cached, grid, levels,
                          lambda f: zero_curvature_residual(f, params, DEFAULT_LAMBDA_SAMPLES,
                                                            PINNED_ORDERING, reduction=red,
                                                            g_form=PINNED_G_FORM))

    def verdict(reports):
        order = reports[-1].convergence_order
        finest = reports[-1].max_norm
        ok_order = levels == 1 or (order is not None and order >= ORDER_GATE)
        return bool(ok_order and math.isfinite(finest) and finest <= RESIDUAL_TOL)

    passed = verdict(pde) and verdict(zc)
    return {
        "convention": {"ordering": PINNED_ORDERING.value, "g_form": PINNED_G_FORM,
                       "third_order": PINNED_THIRD_ORDER, "reduction": red,
                       "k1": [params.k1.real, params.k1.imag], "A1": [params.A1.real, params.A1.imag]},
        "gate": {"order": ORDER_GATE, "max": RESIDUAL_TOL},
        "perturb": perturb,
        "pde": [r.to_dict() for r in pde],
        "zero_curvature": [r.to_dict() for r in zc],
        "passed": passed,
    }


def cmd_verify(cfg: RunConfig) -> int:
    started = time.perf_counter()
    spec = _spec(cfg)
    _claim(cfg.output_path, cfg.force)
    try:
        result = run_verification(spec, cfg.grid, cfg.refine_levels, cfg.perturb)
    except GridTooCoarse as exc:
        raise CliError(EXIT_SPEC, f"grid: {exc}") from None
    if cfg.format == "json":
        _write(cfg.output_path, _dumps({**result, "meta": _meta(started)}))
    else:
        lines = ["engine,level,hx,ht,max,l2,order"]
        for engine in ("pde", "zero_curvature"):
            for i, r in enumerate(result[engine]):
                order = "" if r["order"] is None else repr(r["order"])
                lines.append(f"{engine},{i},{r['hx']!r},{r['ht']!r},{r['max']!r},{r['l2']!r},{order}")
        _write(cfg.output_path, "\n".join(lines) + "\n")
    for engine in ("pde", "zero_curvature"):
        last = result[engine][-1]
        print(f"{engine}: finest max {last['max']:.3e}, order {last['order']}")
    if not result["passed"]:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _is_field_doc(doc: dict) -> bool:
    return "x" in doc and "re_q1" in doc


def scatter_potential(cfg: RunConfig) -> tuple[Potential, int]:
    """Potential and reduction for scatter: a sampled field file or a regularized spec."""
    doc = cfg.doc
    if _is_field_doc(doc):
        try:
            fld = field_from_json(doc)
        except (KeyError, ValueError, TypeError) as exc:
            raise CliError(EXIT_SPEC, f"field file: {exc}") from None
        reduction = int(doc.get("run", {}).get("reduction", 1))
        if reduction not in (1, -1):
            raise CliError(EXIT_SPEC, "run.reduction: expected 1 or -1")
        return Potential.from_field(fld, 0), reduction
    spec = _spec(cfg)
    if spec.convention is not Convention.REGULARIZED:
        raise DecayViolation("as-printed spec gives a csch potential with poles; "
                             "scattering needs the regularized convention")
    x0, x1, t0 = _window(spec, cfg.grid)
    nodes = None if cfg.grid is None else cfg.grid.x
    return Potential.from_spec(spec, t0, x0, x1, nodes), verification_setup(spec)[1]


def _window(spec: SolitonSpec, grid: GridSpec | None) -> tuple[float, float, float]:
    if grid is not None:
        return grid.x0, grid.x1, grid.t0
    half = 20.0
    for _ in range(6):
        try:
            Potential.from_spec(spec, 0.0, -half, half).check_decay()
            return -half, half, 0.0
        except DecayViolation:
            half *= 1.5
    return -half, half, 0.0


def _probe_indices(count: int, k: int = 5) -> list[int]:
    return sorted(set(np.linspace(0, count - 1, min(k, count)).round().astype(int).tolist()))


def cmd_scatter(cfg: RunConfig) -> int:
    started = time.perf_counter()
    pot, red = scatter_potential(cfg)
    _claim(cfg.output_path, cfg.force)
    summary_path = cfg.output_path.with_name(cfg.output_path.name + ".summary.json")
    _claim(summary_path, cfg.force)
    recs = scattering_sweep(pot, cfg.lambda_sweep.values, reduction=red)
    n = pot.components + 1
    G = sigma3(n - 1) if red == 1 else np.eye(n)
    det_err = max(r.det_error for r in recs)
    sym = max(float(np.max(np.abs(r.S.conj().T - G @ r.R @ G))) for r in recs)
    ident = max(float(abs(r.R[0, :] @ r.S[:, 0] - 1)) for r in recs)
    refl = max(float(max(np.max(np.abs(r.S[1:, 0])), np.max(np.abs(r.R[0, 1:])))) for r in recs)
    jump = 0.0
    xs_probe = np.linspace(pot.x0, pot.x1, 5)[1:-1]
    nodes = np.union1d(pot.nodes, xs_probe)
    for i in _probe_indices(len(recs)):
        rec = recs[i]
        jp = jost_solve(pot, rec.lam, Side.PLUS, reduction=red, x_eval=nodes, check_decay=False)
        jm = jost_solve(pot, rec.lam, Side.MINUS, reduction=red, x_eval=nodes, check_decay=False)
        pp, pm = assemble_sectional(jp, jm, rec)
        for x in xs_probe:
            jump = max(jump, jump_check(pp, pm, rec, float(x)).max_norm)
    summary = {"max_det_err": det_err, "max_symmetry_residual": sym, "max_jump_residual": jump,
               "max_identity_err": ident, "max_reflection": refl, "reduction": red,
               "count": len(recs), "meta": _meta(started)}
    if cfg.format == "json":
        rows = [{"lambda": r.lam, "S": [[[z.real, z.imag] for z in row] for row in r.S],
                 "det_err": r.det_error} for r in recs]
        _write(cfg.output_path, json.dumps(rows, separators=(",", ":")) + "\n")
    else:
        _write(cfg.output_path, sweep_to_csv(recs))
    _write(summary_path, _dumps(summary))
    print(f"det {det_err:.2e}  symmetry {sym:.2e}  jump {jump:.2e}  identity {ident:.2e}")
    return EXIT_OK


def roundtrip_region(spec: SolitonSpec) -> tuple[float, float, float, float]:
    """Search rectangle chosen from the spectrum's scale, not its exact location."""
    r = max(2.0, 1.5 * max(abs(l) for l in spec.lambdas))
    return (-r - 0.0123, r + 0.0171, 0.0213, r + 0.0137)


def cmd_roundtrip(cfg: RunConfig) -> int:
    started = time.perf_counter()
    spec = _spec(cfg)
    if spec.convention is not Convention.REGULARIZED:
        raise DecayViolation("as-printed spec gives a csch potential with poles; "
                             "the round trip needs the regularized convention")
    _claim(cfg.output_path, cfg.force)
    lams = list(spec.lambdas)
    close = [(a, b) for i, a in enumerate(lams) for b in lams[i + 1:] if abs(a - b) < MATCH_TOL]
    if close:
        a, b = close[0]
        raise CliError(EXIT_ROUNDTRIP, f"merge: spectral points {a} and {b} are closer than the "
                                       f"match tolerance {MATCH_TOL:g} and cannot be told apart")
    x0, x1, t0 = _window(spec, cfg.grid)
    _, red = verification_setup(spec)
    pot = Potential.from_spec(spec, t0, x0, x1)
    region = roundtrip_region(spec)
    try:
        search = find_s11_zeros(pot, region, reduction=red)
    except ContourThroughZero as exc:
        raise CliError(EXIT_ROUNDTRIP, f"zero search: {exc}") from None
    found = search.zeros
    report = {"region": list(region), "window": [x0, x1], "t": t0, **search.to_dict(),
              "expected": [[l.real, l.imag] for l in lams]}
    code = EXIT_OK
    if len(found) != len(lams) or search.clusters:
        report["error"] = f"found {len(found)} zeros, expected {len(lams)}"
        code = EXIT_ROUNDTRIP
    else:
        cost = np.abs(np.subtract.outer(np.array(lams), np.array(found)))
        rows, cols = linear_sum_assignment(cost)
        worst = float(cost[rows, cols].max())
        report["max_error"] = worst
        if worst > MATCH_TOL:
            code = EXIT_ROUNDTRIP
    report["passed"] = code == EXIT_OK
    _write(cfg.output_path, _dumps({**report, "meta": _meta(started)}))
    print(f"{len(found)} zeros found; max error {report.get('max_error', float('nan')):.2e}")
    return code


COMMANDS = {"generate": cmd_generate, "verify": cmd_verify, "scatter": cmd_scatter,
            "roundtrip": cmd_roundtrip}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hirota-rh", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--spec", required=True, metavar="PATH",
                   help="soliton spec JSON (scatter also takes a sampled field JSON)")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--grid", metavar="x0:x1:nx,t0:t1:nt")
    p.add_argument("--sweep", metavar="lmin:lmax:count")
    p.add_argument("--levels", type=int, metavar="N")
    p.add_argument("--perturb", type=float, metavar="EPS")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return p


_VALUED = ("--grid", "--sweep")


def _glue_values(argv: list[str]) -> list[str]:
    # "--grid -10:10:201" would read the range as an option; glue it to its flag.
    out: list[str] = []
    it = iter(argv)
    for a in it:
        if a in _VALUED:
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = make_parser().parse_args(_glue_values(argv))   # usage errors exit 2
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SpecError, DressingOverflow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (DecayViolation, StiffnessFailure, ContourThroughZero) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SCATTER


if __name__ == "__main__":
    sys.exit(main())
