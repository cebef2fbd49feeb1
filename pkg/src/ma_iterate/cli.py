"""
Command-line entry point.

    ma-iterate iterate SPEC [--out DIR] [overrides]
    ma-iterate affine-report (--oracle NAME | --potential FILE)
    ma-iterate validate-body FILE
    ma-iterate oracle-check

Exit codes: 0 success, 1 check failed (uncentered body, residual above the
threshold), 2 iteration budget exhausted, 3 invalid input, 4 numerical
failure during a run.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import affine_geom, oracle
from .convex_body import build_body, delzant_check, regular_polygon
from .errors import MAIterateError, MonotonicityViolated, ValidationError, WrongProfile
from .iteration import IterationConfig, run
from .potential import MaxAffinePotential
from .profile import Coupling, Profile

EXIT_OK, EXIT_CHECK, EXIT_MAXITER, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3, 4

TRACE_COLUMNS = ("iter", "F", "pairing", "G", "g_value", "ding", "mabuchi", "AM", "gap1", "gap2")


@dataclass
class RunSpec:
    """Serializable description of one run; JSON on disk."""
    vertices: list
    profile: str = "exp"
    p: float = 1.0
    tau: float = 1.0
    sites: int = 129
    grid_l: float = 8.0
    grid_m: int = 257
    grid_grading: float = 0.0
    mass_tol: float = 1e-6
    stop_tol: float = 1e-5
    max_iters: int = 100
    tail_tol: float = 1e-8
    seed: int | None = 0
    disc_radius: float | None = None
    coupling: str | None = None
    out: str = "ma_iterate_out"
    plot: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "RunSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown spec keys: {unknown}")
        if "vertices" not in data:
            raise ValidationError("spec needs 'vertices'")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"spec is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("spec must be a JSON object")
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def body(self):
        return build_body(self.vertices, disc_radius=self.disc_radius)

    def profile_obj(self, dim: int) -> Profile:
        if self.profile in ("exp", "exponential"):
            return Profile.exponential(dim)
        if self.profile == "power":
            return Profile.power(dim, self.p)
        raise ValidationError(f"unknown profile {self.profile!r}")

    def to_config(self) -> IterationConfig:
        body = self.body()
        coupling = None if self.coupling is None else Coupling(self.coupling)
        return IterationConfig(
            body=body, profile=self.profile_obj(body.dim), tau=float(self.tau),
            n_sites=int(self.sites), grid_halfwidth=float(self.grid_l), grid_points=int(self.grid_m),
            coupling=coupling, mass_tol=float(self.mass_tol), stop_tol=float(self.stop_tol),
            max_iterations=int(self.max_iters), site_seed=self.seed, tail_tol=float(self.tail_tol),
            grid_grading=float(self.grid_grading))


def load_spec(path: str) -> RunSpec:
    """A spec file, or the name of a bundled spec such as 'exp_1d.spec'."""
    p = Path(path)
    if p.exists():
        return RunSpec.from_json(p.read_text())
    bundled = resources.files("ma_iterate") / "data" / p.name
    if bundled.is_file():
        return RunSpec.from_json(bundled.read_text())
    raise ValidationError(f"cannot read spec {path}")


# artifacts -----------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_trace(trace, path: Path) -> None:
    lines = ["# iter: step index (0 = seed); F: F of the iterate; pairing: <phi_next, rho>; "
             "G: G(rho); g_value: coupled value; ding, mabuchi, AM: Kähler energies "
             "(exponential only); gap1 = F_prev - g, gap2 = g - F_next",
             ",".join(TRACE_COLUMNS),
             ",".join(["0", _fmt(trace.F_seed)] + [""] * (len(TRACE_COLUMNS) - 2))]
    for s in trace.steps:
        r = s.functionals
        row = [str(s.iteration), _fmt(r.F_value), _fmt(r.pairing), _fmt(r.G_value), _fmt(r.g_value),
               _fmt(r.ding), _fmt(r.mabuchi), _fmt(r.aubin_mabuchi), _fmt(r.gap1), _fmt(r.gap2)]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_trace(path) -> np.ndarray:
    """Structured array of a trace.csv; empty fields read as nan."""
    return np.genfromtxt(path, delimiter=",", names=True, comments="#", skip_header=1)


def write_potential(phi: MaxAffinePotential, trace, spec: RunSpec, path: Path) -> None:
    """
    Final potential plus its two predecessors (shared sites) and the shifts
    used to place them, enough to rebuild the iterate geometry later.
    """
    recent = trace.recent[-3:]
    while len(recent) < 3:
        recent = [recent[0]] + recent
    meta = {"dim": phi.dim, "profile": spec.profile, "p": spec.p, "tau": spec.tau,
            "vertices": spec.vertices, "disc_radius": spec.disc_radius,
            "shifts": [np.asarray(a, float).tolist() for _, a in recent],
            "history": len(trace.recent)}
    cols = [phi.sites, phi.weights[:, None], recent[1][0].weights[:, None],
            recent[0][0].weights[:, None], phi.site_masses[:, None]]
    names = [f"y{i + 1}" for i in range(phi.dim)] + ["w", "w_prev", "w_prev2", "mass"]
    header = json.dumps(meta) + "\n" + " ".join(names)
    np.savetxt(path, np.hstack(cols), header=header, fmt="%.17g")


def read_potential(path):
    """(meta, phi, prev, prev2) from a file written by write_potential."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    try:
        meta = json.loads(first.lstrip("#").strip())
        data = np.loadtxt(path, ndmin=2)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot parse potential file {path}: {exc}") from exc
    n = int(meta["dim"])
    sites, masses = data[:, :n], data[:, n + 3]
    pots = [MaxAffinePotential(sites, data[:, n + k].copy(), masses) for k in range(3)]
    return meta, pots[0], pots[1], pots[2]


def _polyline(xs, ys, box, color):
    x0, y0, w, h = box
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ok = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[ok], ys[ok]
    if xs.size == 0:
        return ""
    xlo, xhi = xs.min(), max(xs.max(), xs.min() + 1e-12)
    ylo, yhi = ys.min(), max(ys.max(), ys.min() + 1e-12)
    px = x0 + (xs - xlo) / (xhi - xlo) * w
    py = y0 + h - (ys - ylo) / (yhi - ylo) * h
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
            f'<text x="{x0}" y="{y0 - 4}" font-size="11">[{ylo:.4g}, {yhi:.4g}]</text>')


def svg_panels(panels, path: Path) -> None:
    """panels: list of (title, xs, ys); stacked line plots."""
    w, h, pad = 520, 180, 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * pad}" '
             f'height="{len(panels) * (h + 2 * pad)}" font-family="sans-serif">']
    for k, (title, xs, ys) in enumerate(panels):
        y0 = k * (h + 2 * pad) + pad
        parts.append(f'<rect x="{pad}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999"/>')
        parts.append(f'<text x="{pad}" y="{y0 - 18}" font-size="13">{title}</text>')
        parts.append(_polyline(xs, ys, (pad, y0, w, h), "#1f5fa8"))
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


# commands ------------------------------------------------------------------

def _err(msg: str) -> None:
    print(msg.splitlines()[0] if msg else "error", file=sys.stderr)


def cmd_iterate(args) -> int:
    spec = load_spec(args.spec)
    overrides = {"profile": args.profile, "p": args.p, "tau": args.tau, "sites": args.sites,
                 "grid_l": args.grid_l, "grid_m": args.grid_m, "grid_grading": args.grid_grading,
                 "mass_tol": args.mass_tol, "stop_tol": args.stop_tol, "max_iters": args.max_iters,
                 "seed": args.seed, "out": args.out}
    for key, val in overrides.items():
        if val is not None:
            setattr(spec, key, val)
    if args.no_plot:
        spec.plot = False
    config = spec.to_config()
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_spec.json").write_text(spec.to_json() + "\n")
    try:
        phi, trace = run(config)
    except MonotonicityViolated as exc:
        if exc.trace is not None:
            write_trace(exc.trace, out / "trace.csv")
        with (out / "trace.csv").open("a") as fh:
            fh.write(f"# terminated: {exc}\n")
        raise
    write_trace(trace, out / "trace.csv")
    write_potential(phi, trace, spec, out / "final_potential.txt")
    if spec.plot:
        it = np.arange(len(trace.F))
        svg_panels([("F along the iteration", it, trace.F),
                    ("log10 sup change of the recentred iterate", it[1:],
                     np.log10(np.maximum(trace.sup_changes, 1e-300)))], out / "convergence.svg")
    status = "converged" if trace.converged else "max iterations reached"
    print(f"{status} after {len(trace.steps)} steps; F = {trace.F[-1]:.12g}; output in {out}")
    return EXIT_OK if trace.converged else EXIT_MAXITER


ORACLES = {
    "power1d": lambda: oracle.power_oracle_1d(),
    "power-disc": lambda: oracle.radial_shooting(Profile.power(2, 1.0), 1.0, np.pi * 2 / 3),
    "exp1d": lambda: oracle.exp_oracle_1d(),
    "exp-square": lambda: oracle.separable_oracle_2d(),
}


def _report_lines(rep) -> list:
    return [f"{k} = {v:.12g}" for k, v in asdict(rep).items()]


def _immersion_svg(geom, path: Path) -> None:
    n = geom.dim
    t = np.linspace(-4, 4, 161)
    x = t[:, None] if n == 1 else np.c_[t, np.zeros_like(t)]
    imm = affine_geom.immerse(geom, x)
    f = imm.f_point
    svg_panels([("immersed curve (x, -phi*) slice" if n == 1 else "surface slice x_2 = 0",
                 f[:, 0], f[:, -1]),
                ("dual immersion nu slice", imm.nu_point[:, 0], imm.nu_point[:, -1])], path)


def cmd_affine_report(args) -> int:
    if args.oracle is not None:
        if args.oracle not in ORACLES:
            raise ValidationError(f"unknown oracle {args.oracle!r}; choose from {sorted(ORACLES)}")
        sol = ORACLES[args.oracle]()
        if not sol.profile.is_power:
            raise WrongProfile("affine report needs a power-profile potential")
        geom, body = sol, sol.body
    else:
        meta, phi, prev, prev2 = read_potential(args.potential)
        if meta["profile"] != "power":
            raise WrongProfile("affine report needs a power-profile potential")
        if meta.get("history", 0) < 3:
            raise ValidationError("potential file holds fewer than two completed steps")
        body = build_body(meta["vertices"], disc_radius=meta.get("disc_radius"))
        n = phi.dim
        shifts = meta["shifts"]
        k = n + 2
        Z = (affine_geom.kernel_integral(prev, k), affine_geom.kernel_integral(prev2, k))
        geom = affine_geom.IterateGeometry(phi, prev, prev2, np.asarray(shifts[2], float),
                                           np.asarray(shifts[1], float), body.volume, Z)
    rep = affine_geom.affine_report(geom, body, window=args.window)
    lines = _report_lines(rep)
    print("\n".join(lines))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "affine_report.txt").write_text("\n".join(lines) + "\n")
        _immersion_svg(affine_geom.as_geometry(geom, body.volume), out / "immersion.svg")
    return EXIT_OK if rep.sphere_residual <= args.residual_tol else EXIT_CHECK


def cmd_validate_body(args) -> int:
    try:
        pts = np.loadtxt(args.body, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read vertices from {args.body}: {exc}") from exc
    body = build_body(pts)
    print(f"dimension = {body.dim}")
    print(f"volume = {body.volume:.12g}")
    print("barycenter = " + " ".join(f"{c:.12g}" for c in body.barycenter))
    print(f"inradius = {body.inradius:.12g}")
    if body.dim <= 2:
        try:
            verdict = str(delzant_check(body))
        except ValidationError as exc:
            verdict = f"n/a ({exc})"
        print(f"delzant = {verdict}")
    centered = float(np.linalg.norm(body.barycenter)) <= 1e-9
    print(f"centered = {centered}")
    return EXIT_OK if centered else EXIT_CHECK


def _oracle_rows():
    rows = []
    sol = oracle.exp_oracle_1d()
    rows.append(("exp1d", sol.residual(np.linspace(-10, 10, 1000)), 1e-10))
    sol = oracle.power_oracle_1d()
    rows.append(("power1d", sol.residual(np.linspace(-10, 10, 1000)), 1e-10))
    sol = oracle.separable_oracle_2d()
    ax = np.linspace(-3, 3, 32)
    rows.append(("exp-square", sol.residual(np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)), 1e-10))
    for name, prof, tau in (("exp-disc", Profile.exponential(2), 3.0),
                            ("power-disc", Profile.power(2, 1.0), 2 * np.pi / 3)):
        sol = oracle.radial_shooting(prof, regular_polygon(1.0, 128), tau)
        r = np.linspace(0, 10, 1000)
        rows.append((name, sol.residual(np.c_[r, np.zeros_like(r)]), 1e-8))
    return rows


def cmd_oracle_check(args) -> int:
    ok = True
    print(f"{'oracle':<12}{'max':>12}{'mean':>12}{'bound':>10}  status")
    for name, res, bound in _oracle_rows():
        good = bool(np.max(res) <= bound)
        ok &= good
        print(f"{name:<12}{np.max(res):>12.3e}{np.mean(res):>12.3e}{bound:>10.0e}  "
              f"{'ok' if good else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


# entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ma-iterate", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)

    it = sub.add_parser("iterate", help="run the normalised iteration from a JSON spec")
    it.add_argument("spec", help="spec file, or the name of a bundled spec (exp_1d.spec)")
    it.add_argument("--profile", choices=["exp", "power"])
    it.add_argument("--p", type=float)
    it.add_argument("--tau", type=float)
    it.add_argument("--sites", type=int)
    it.add_argument("--grid-l", type=float)
    it.add_argument("--grid-m", type=int)
    it.add_argument("--grid-grading", type=float)
    it.add_argument("--mass-tol", type=float)
    it.add_argument("--stop-tol", type=float)
    it.add_argument("--max-iters", type=int)
    it.add_argument("--seed", type=int)
    it.add_argument("--out")
    it.add_argument("--no-plot", action="store_true")
    it.set_defaults(func=cmd_iterate)

    ar = sub.add_parser("affine-report", help="affine diagnostics of a power-profile solution")
    src = ar.add_mutually_exclusive_group(required=True)
    src.add_argument("--oracle", help=f"one of {sorted(ORACLES)}")
    src.add_argument("--potential", help="final_potential.txt from an iterate run")
    ar.add_argument("--window", type=float, default=2.0, help="sample radius for the residual")
    ar.add_argument("--residual-tol", type=float, default=5e-2)
    ar.add_argument("--out")
    ar.set_defaults(func=cmd_affine_report)

    vb = sub.add_parser("validate-body", help="volume, barycenter, inradius, Delzant verdict")
    vb.add_argument("body", help="text file, one vertex per line")
    vb.set_defaults(func=cmd_validate_body)

    oc = sub.add_parser("oracle-check", help="residual statistics of every oracle")
    oc.set_defaults(func=cmd_oracle_check)
    return ap


def _limit_threads():
    raw = os.environ.get("MA_ITERATE_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ValidationError(f"MA_ITERATE_THREADS must be a positive integer, got {raw!r}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _limit_threads()
        return args.func(args)
    except ValidationError as exc:
        _err(f"{type(exc).__name__}: {exc}" if type(exc).__name__ not in str(exc) else str(exc))
        return EXIT_INVALID
    except MAIterateError as exc:
        _err(f"{type(exc).__name__}: {exc}" if type(exc).__name__ not in str(exc) else str(exc))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
