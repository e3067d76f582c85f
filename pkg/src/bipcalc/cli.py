"""Command-line front end: ``bipcalc <command> --config <path> [--out DIR] [--seed N]``.

Exit codes: 0 when the certificate passes, 1 when it fails, 2 on any
runtime or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import CalcError, ParseError, ValidationError
from .operators import ModelParams, build_B_xi, shifted_direct

COMMANDS = ("certify-sector", "certify-bip", "fourier-lemma", "multiplier",
            "angle-inequalities", "dominant-term", "resolvent-check", "solve-linear",
            "solve-semilinear", "trace-diagnostic")


# --- configuration -------------------------------------------------------------

@dataclass
class ContourConfig:
    angle: float | None = None
    eps0: float | None = None
    R: float | None = None
    panels: int = 24
    nodes_per_panel: int = 16


@dataclass
class CertifyConfig:
    operator: str = "laplacian"          # laplacian | B_xi | direct
    xi: float = 1.0
    r_max: float = 20.0
    r_points: int = 41
    r: float = 1.0
    xi_max: float = 1000.0
    xi_grid: int = 16
    fourier_xi: list = field(default_factory=lambda: [0.0, 0.25, 1.0, 4.0])
    probe_decades: float = 6.0
    probe_angles: list | None = None
    sample_count: int = 100_000
    lams: list = field(default_factory=lambda: [[-10.0, 0.0], [0.0, 5.0], [-3.0, 4.0]])
    forcings: int = 5
    levels: list = field(default_factory=lambda: [65, 129, 257])
    r_prime_sign: float = 1.0
    doublings: int = 6
    u0_kind: str = "bump"                # bump | step
    trace_levels: int = 3


@dataclass
class TimeConfig:
    T_final: float = 1.0
    nt: int = 200
    tol: float = 1e-10
    max_iter: int = 100


@dataclass
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    contour: ContourConfig = field(default_factory=ContourConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    seed: int = 0
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "contour": asdict(self.contour),
                "certify": asdict(self.certify), "time": asdict(self.time),
                "seed": self.seed, "output_dir": self.output_dir}


_INT_FIELDS = {"bc", "m", "n", "panels", "nodes_per_panel", "r_points", "xi_grid",
               "sample_count", "forcings", "doublings", "trace_levels", "nt", "max_iter"}


def _block(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ValidationError(f"block '{name}' must be an object", name)
    known = {f.name for f in fields(cls)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ValidationError(f"unknown key(s) in '{name}': {', '.join(extra)}", f"{name}.keys")
    kw = {}
    for k, v in raw.items():
        if k in _INT_FIELDS:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValidationError(f"'{name}.{k}' must be an integer", f"{name}.{k}")
        elif isinstance(v, bool):
            raise ValidationError(f"'{name}.{k}' must not be a boolean", f"{name}.{k}")
        kw[k] = v
    return cls(**kw)


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno) from None
    if not isinstance(raw, dict):
        raise ParseError("top level must be a JSON object", 1)
    extra = sorted(set(raw) - {"model", "contour", "certify", "time", "seed", "output_dir"})
    if extra:
        raise ValidationError(f"unknown top-level key(s): {', '.join(extra)}", "keys")
    model = _block(ModelParams, raw.get("model"), "model")
    cfg = RunConfig(model=model,
                    contour=_block(ContourConfig, raw.get("contour"), "contour"),
                    certify=_block(CertifyConfig, raw.get("certify"), "certify"),
                    time=_block(TimeConfig, raw.get("time"), "time"),
                    seed=raw.get("seed", 0), output_dir=raw.get("output_dir", "out"))
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2 ** 64:
        raise ValidationError("seed must be an unsigned 64-bit integer", "seed")
    c = cfg.certify
    if c.operator not in ("laplacian", "B_xi", "direct"):
        raise ValidationError("certify.operator must be laplacian, B_xi or direct", "certify.operator")
    if c.u0_kind not in ("bump", "step"):
        raise ValidationError("certify.u0_kind must be bump or step", "certify.u0_kind")
    if c.r_prime_sign not in (1, -1, 1.0, -1.0):
        raise ValidationError("certify.r_prime_sign must be +1 or -1", "certify.r_prime_sign")
    if cfg.time.T_final <= 0 or cfg.time.nt < 1 or cfg.time.tol <= 0:
        raise ValidationError("time block needs T_final > 0, nt >= 1, tol > 0", "time")
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises
    ------
    ParseError
        Malformed JSON, with the offending line.
    ValidationError
        A model invariant or block constraint fails; the invariant is named.
    """
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# --- output ---------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (complex, np.complexfloating)):
        return f"{format(v.real, '.17g')}{'+' if v.imag >= 0 else '-'}{format(abs(v.imag), '.17g')}j"
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


def jsonable(o):
    if isinstance(o, dict):
        return {str(k): jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return jsonable(o.tolist())
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (complex, np.complexfloating)):
        return [jsonable(o.real), jsonable(o.imag)]
    return o


def write_json(path: Path, obj):
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- commands ---------------------------------------------------------------------

def _bump(x, lo=0.25, hi=0.75):
    s = np.clip((x - lo) * (hi - x), 0, None)
    out = np.zeros_like(x)
    inside = s > 0
    out[inside] = np.exp(-1.0 / (8 * s[inside]))
    return out


def _unit(x, a, b):
    return (np.asarray(x) - a) / (b - a)


def _cmd_certify_sector(cfg, rng):
    from .certify import default_probe_radii, estimate_sector_angle
    from .matrix_core import is_hermitian
    p = cfg.model
    T = shifted_direct(p.laplacian(), p)
    radii = default_probe_radii(1.0, 10.0 ** cfg.certify.probe_decades)
    rep = estimate_sector_angle(T, probe_angles=cfg.certify.probe_angles, probe_radii=radii)
    ok = rep.verdict and (rep.fit_theta <= 0.05 or not is_hermitian(T))
    return [rep], ok, {}


def _cmd_certify_bip(cfg, rng):
    from .certify import estimate_bip_growth
    p, c = cfg.model, cfg.certify
    r_grid = np.linspace(-c.r_max, c.r_max, c.r_points)
    if c.operator == "laplacian":
        T, method, tol = -p.laplacian().matrix, "contour", 1e-3
    elif c.operator == "B_xi":
        T, method, tol = build_B_xi(p.laplacian(), p, c.xi).matrix, "contour", 0.05
    else:
        T, method, tol = shifted_direct(p.laplacian(), p), "spectral", 0.05
    rep = estimate_bip_growth(T, r_grid, method=method, theta_tol=tol)
    return [rep], rep.verdict, {}


def _cmd_fourier(cfg, rng):
    from .certify import verify_fourier_lemma
    rep = verify_fourier_lemma(cfg.model.laplacian().matrix, cfg.certify.fourier_xi)
    return [rep], rep.verdict, {}


def _cmd_multiplier(cfg, rng):
    from .certify import verify_multiplier_integrability
    p, c = cfg.model, cfg.certify
    rep = verify_multiplier_integrability(p.laplacian(), p, c.r, c.xi_max, c.xi_grid)
    return [rep], rep.verdict, {}


def _cmd_angles(cfg, rng):
    from .certify import verify_angle_inequalities
    rep = verify_angle_inequalities(cfg.certify.sample_count, cfg.seed)
    return [rep], rep.verdict, {}


def _cmd_dominant(cfg, rng):
    from .certify import verify_dominant_term
    p = cfg.model
    x = _unit(p.x_nodes(), p.a, p.b)
    vec = rng.standard_normal(p.m) + 1j * rng.standard_normal(p.m)
    f = _bump(x)[:, None] * vec[None, :]
    rep = verify_dominant_term(p.bc, p.laplacian(), p, f, angle=cfg.contour.angle,
                               eps0=cfg.contour.eps0, R0=cfg.contour.R,
                               doublings=cfg.certify.doublings)
    return [rep], rep.verdict, {}


def _cmd_resolvent(cfg, rng):
    from .certify import smooth_forcing, verify_resolvent_representation
    p, c = cfg.model, cfg.certify
    fs = [smooth_forcing(rng, p.m) for _ in range(c.forcings)]
    lams = [complex(a, b) for a, b in c.lams]
    rep = verify_resolvent_representation(p.bc, p.laplacian(), p, lams, fs,
                                          levels=tuple(c.levels), r_prime_sign=c.r_prime_sign)
    return [rep], rep.verdict, {}


def _initial(cfg, rng, kind=None):
    p = cfg.model
    kind = cfg.certify.u0_kind if kind is None else kind
    vec = rng.standard_normal(p.m)

    def u0(x):
        s = _unit(x, p.a, p.b)
        prof = _bump(s) if kind == "bump" else ((s > 0.3) & (s < 0.7)).astype(float)
        return prof[:, None] * vec[None, :]
    return u0


def _frames_rows(u):
    for j, t in enumerate(u.t):
        for xi in range(u.values.shape[1]):
            for wi in range(u.values.shape[2]):
                v = u.values[j, xi, wi]
                yield (float(t), xi, wi, float(v.real), float(v.imag))


def _cmd_solve_linear(cfg, rng):
    from .certify import CertReport
    from .evolution import (direct_generator, equation_residual, mild_solution,
                            sample_space_time, time_grid)
    p, tc = cfg.model, cfg.time
    gen = direct_generator(p.bc, p)
    u0 = _initial(cfg, rng)(p.x_nodes())
    vec = rng.standard_normal(p.m)
    fn = lambda T, X: (np.sin(math.pi * T / tc.T_final)[..., None]
                       * np.cos(3 * _unit(X, p.a, p.b))[..., None] * vec[None, None, :])
    res, sols = [], []
    for nt in (tc.nt, 2 * tc.nt):
        F = sample_space_time(p, time_grid(tc.T_final, nt), fn)
        u = mild_solution(p.bc, p, u0, F, generator=gen)
        res.append(equation_residual(u, F, gen))
        sols.append(u)
    ratio = res[0] / res[1] if res[1] > 0 else float("inf")
    rep = CertReport("residual", [tc.nt, 2 * tc.nt], res, fit_C=ratio, tolerance=0.3,
                     verdict=bool(1.7 <= ratio <= 2.3), metadata={"bc": p.bc})
    return [rep], rep.verdict, {"solution": sols[0]}


def _cmd_solve_semilinear(cfg, rng):
    from .certify import CertReport
    from .errors import NoConvergence
    from .evolution import picard_semilinear
    p, tc = cfg.model, cfg.time
    u0 = _initial(cfg, rng)(p.x_nodes())
    try:
        u, tr = picard_semilinear(p.bc, p, u0, tc.T_final, tc.tol, tc.max_iter, tc.nt)
    except NoConvergence as e:
        tr = e.trace
        rep = CertReport("picard_difference", list(range(len(tr.differences))), tr.differences,
                         verdict=False, metadata=tr.as_dict())
        return [rep], False, {"trace": tr.as_dict()}
    post = tr.ratios[3:]
    ok = tr.converged and all(r <= 0.9 for r in post)
    rep = CertReport("picard_difference", list(range(len(tr.differences))), tr.differences,
                     fit_theta=max(tr.ratios) if tr.ratios else 0.0, tolerance=0.9,
                     verdict=bool(ok), metadata=tr.as_dict())
    return [rep], ok, {"solution": u, "trace": tr.as_dict()}


def _cmd_trace(cfg, rng):
    from .evolution import trace_diagnostic
    p = cfg.model
    rep = trace_diagnostic(p.bc, p, _initial(cfg, rng), p.p, levels=cfg.certify.trace_levels)
    return [rep], rep.verdict, {}


_DISPATCH = {
    "certify-sector": _cmd_certify_sector,
    "certify-bip": _cmd_certify_bip,
    "fourier-lemma": _cmd_fourier,
    "multiplier": _cmd_multiplier,
    "angle-inequalities": _cmd_angles,
    "dominant-term": _cmd_dominant,
    "resolvent-check": _cmd_resolvent,
    "solve-linear": _cmd_solve_linear,
    "solve-semilinear": _cmd_solve_semilinear,
    "trace-diagnostic": _cmd_trace,
}


def run_command(cmd: str, cfg: RunConfig, out_dir: Path | None = None) -> int:
    """Run one command and write its artifacts; returns the exit code."""
    if cmd not in _DISPATCH:
        return 2
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    reports, ok, extra = _DISPATCH[cmd](cfg, rng)
    files = ["report.csv", "summary.json"]
    write_csv(out / "report.csv", ["quantity", "sample", "value", "fit_C", "fit_theta", "verdict"],
              [row for r in reports for row in r.rows()])
    write_json(out / "summary.json", {"command": cmd, "verdict": "pass" if ok else "fail",
                                      "reports": [r.summary() for r in reports]})
    if "solution" in extra:
        write_csv(out / "solution.csv", ["t", "x_index", "omega_index", "re", "im"],
                  _frames_rows(extra["solution"]))
        files.append("solution.csv")
    if "trace" in extra:
        write_json(out / "trace.json", extra["trace"])
        files.append("trace.json")
    write_json(out / "manifest.json", {
        "command": cmd, "config": cfg.to_dict(), "seed": cfg.seed,
        "verdict": "pass" if ok else "fail", "files": files,
        "versions": {"bipcalc": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    })
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bipcalc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=None, help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 2
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ValidationError("seed must be an unsigned 64-bit integer", "seed")
            cfg.seed = args.seed
        code = run_command(args.command, cfg, None if args.out is None else Path(args.out))
    except (CalcError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures never leave a half-written success
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    print(f"{args.command}: {'pass' if code == 0 else 'fail'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
