"""``stokes-hvi`` command line: config parsing, experiment drivers, artifacts.

Exit codes: 0 success, 1 failed run or failed check, 2 configuration error,
3 refused by the solvability/smallness gate.
"""

import argparse
import configparser
import csv
import os
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .fespace import build_system
from .fields import FIELDS, make_field
from .friction import LAWS, make_law, validate_law
from .mesh import BoundarySpec, MeshError, build_rect_mesh, write_vtk
from .rothe import RotheError, SourceTerm, StepConditionError, TimeGrid, check_step, run
from .spectral import constants_report
from .verify import cauchy_study, energy_family, lipschitz_check

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_GATE = 0, 1, 2, 3
OUT_ENV = "STOKES_HVI_OUT"
STUDIES = ("convergence", "lipschitz", "energy")

# known keys per fixed section with defaults; [law], [u0], [f] carry free parameters
_SCHEMA = {
    "geometry": {"Lx": 1.0, "Ly": 1.0, "nx": 4, "ny": 4,
                 "left": "D", "right": "D", "bottom": "S", "top": "D"},
    "physics": {"mu": 1.0, "law": "none", "u0": "zero", "f": "zero"},
    "time": {"T_final": 1.0, "N": 16},
    "solver": {"tol": 1e-10, "max_iter": 20000, "relaxation": 1.0},
    "output": {"directory": "out", "vtk_stride": 0, "csv": True},
    "run": {"seed": 0},
    "study": {"kind": "convergence", "halvings": 4, "Ns": "8,16,32,64,128", "pairs": 20},
    "validate": {"samples": 100000, "radius": 5.0, "alpha_scale": 1.0},
}
_PARAM_SECTIONS = ("law", "u0", "f")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    Lx: float
    Ly: float
    nx: int
    ny: int
    boundary: BoundarySpec
    mu: float
    law: str
    law_params: dict
    u0: str
    u0_params: dict
    f: str
    f_params: dict
    T_final: float
    N: int
    tol: float
    max_iter: int
    relaxation: float
    out_dir: Path
    vtk_stride: int
    write_csv: bool
    seed: int
    study: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    source: str = ""

    @property
    def k(self):
        return self.T_final / self.N

    def make_law(self):
        return None if self.law == "none" else make_law(self.law, **self.law_params)

    def make_u0(self):
        return make_field(self.u0, **self.u0_params)

    def make_f(self):
        return make_field(self.f, **self.f_params)


def _parse_value(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return text.strip()


def _key_line(lines, section, key):
    current = None
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip().lower() == key.lower():
            return i
    return None


def load_config(path):
    """Parse and validate a config file into a :class:`RunConfig`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    lines = text.splitlines()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    def where(section, key):
        line = _key_line(lines, section, key)
        return f"{path}:{line}" if line else str(path)

    for sec in cp.sections():
        if sec not in _SCHEMA and sec not in _PARAM_SECTIONS:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        if sec in _SCHEMA:
            known = {k.lower(): k for k in _SCHEMA[sec]}
            for key in cp[sec]:
                if key.lower() not in known:
                    raise ConfigError(f"{where(sec, key)}: unknown key [{sec}] {key}")

    def get(sec, key):
        default = _SCHEMA[sec][key]
        if not cp.has_section(sec):
            return default
        lookup = {k.lower(): k for k in cp[sec]}
        if key.lower() not in lookup:
            return default
        raw = cp[sec][lookup[key.lower()]]
        if isinstance(default, bool):
            val = _parse_value(raw)
            if not isinstance(val, bool):
                raise ConfigError(f"{where(sec, key)}: [{sec}] {key} expects true/false, got {raw!r}")
            return val
        if isinstance(default, (int, float)):
            try:
                return type(default)(raw) if isinstance(default, float) else int(raw)
            except ValueError:
                kind = "a number" if isinstance(default, float) else "an integer"
                raise ConfigError(f"{where(sec, key)}: [{sec}] {key} expects {kind}, "
                                  f"got {raw!r}") from None
        return raw.strip()

    def params(sec):
        if not cp.has_section(sec):
            return {}
        return {k: _parse_value(v) for k, v in cp[sec].items()}

    try:
        boundary = BoundarySpec(**{s: get("geometry", s) for s in ("left", "right", "bottom", "top")})
        boundary.validate()
    except MeshError as exc:
        raise ConfigError(f"{where('geometry', 'left')}: {exc}") from None

    cfg = RunConfig(
        Lx=get("geometry", "Lx"), Ly=get("geometry", "Ly"),
        nx=get("geometry", "nx"), ny=get("geometry", "ny"), boundary=boundary,
        mu=get("physics", "mu"), law=get("physics", "law").lower(), law_params=params("law"),
        u0=get("physics", "u0"), u0_params=params("u0"),
        f=get("physics", "f"), f_params=params("f"),
        T_final=get("time", "T_final"), N=get("time", "N"),
        tol=get("solver", "tol"), max_iter=get("solver", "max_iter"),
        relaxation=get("solver", "relaxation"),
        out_dir=Path(get("output", "directory")), vtk_stride=get("output", "vtk_stride"),
        write_csv=get("output", "csv"), seed=get("run", "seed"),
        study={k: get("study", k) for k in _SCHEMA["study"]},
        validate={k: get("validate", k) for k in _SCHEMA["validate"]},
        source=str(path),
    )

    checks = [
        ("physics", "mu", cfg.mu > 0, "must be > 0"),
        ("time", "N", cfg.N >= 1, "must be >= 1"),
        ("time", "T_final", cfg.T_final > 0, "must be > 0"),
        ("geometry", "nx", cfg.nx >= 1, "must be >= 1"),
        ("geometry", "ny", cfg.ny >= 1, "must be >= 1"),
        ("geometry", "Lx", cfg.Lx > 0, "must be > 0"),
        ("geometry", "Ly", cfg.Ly > 0, "must be > 0"),
        ("solver", "tol", cfg.tol > 0, "must be > 0"),
        ("solver", "max_iter", cfg.max_iter >= 1, "must be >= 1"),
        ("solver", "relaxation", 0 < cfg.relaxation <= 2, "must lie in (0, 2]"),
        ("output", "vtk_stride", cfg.vtk_stride >= 0, "must be >= 0"),
    ]
    for sec, key, ok, msg in checks:
        if not ok:
            raise ConfigError(f"{where(sec, key)}: [{sec}] {key} {msg}")

    if cfg.law != "none" and cfg.law not in LAWS:
        raise ConfigError(f"{where('physics', 'law')}: unknown friction law {cfg.law!r}; "
                          f"known: none, {', '.join(LAWS)}")
    for key in ("u0", "f"):
        name = getattr(cfg, key)
        if name not in FIELDS:
            raise ConfigError(f"{where('physics', key)}: unknown field {name!r}; "
                              f"known: {', '.join(FIELDS)}")
    # resolve selectors now so bad parameters surface as config errors
    for sec, build in (("law", cfg.make_law), ("u0", cfg.make_u0), ("f", cfg.make_f)):
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad [{sec}] parameters: {exc}") from None
    if cfg.study["kind"] not in STUDIES:
        raise ConfigError(f"{where('study', 'kind')}: unknown study {cfg.study['kind']!r}; "
                          f"known: {', '.join(STUDIES)}")
    try:
        cfg.study["Ns"] = tuple(int(v) for v in str(cfg.study["Ns"]).split(","))
    except ValueError:
        raise ConfigError(f"{where('study', 'Ns')}: [study] Ns expects a comma-separated "
                          f"list of integers") from None
    return cfg


# ----------------------------------------------------------------------------
# artifacts


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class CsvSink:
    """CSV file written row by row and flushed after each row, so an
    interrupted run leaves a valid prefix."""

    def __init__(self, path, header):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(header)
        self.fh.flush()

    def row(self, values):
        self.w.writerow([_fmt(v) for v in values])

    def flush(self):
        self.fh.flush()

    def close(self):
        self.fh.close()


def _write_text(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _write_csv(path, header, rows):
    sink = CsvSink(path, header)
    for r in rows:
        sink.row(r)
    sink.close()


def resolve_out_dir(cfg, cli_out=None):
    if cli_out:
        out = Path(cli_out)
    elif os.environ.get(OUT_ENV):
        out = Path(os.environ[OUT_ENV])
    else:
        out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------------
# commands


def _system(cfg):
    m = build_rect_mesh(cfg.nx, cfg.ny, Lx=cfg.Lx, Ly=cfg.Ly, spec=cfg.boundary)
    return build_system(m, cfg.mu)


def _gate_message(rep):
    thr = rep.k_threshold
    return (f"solvability gate failed: m_margin = {rep.m_margin:.6g} <= 0 and step size "
            f"k = {rep.k:.6g} violates k < lambda_tau/alpha_psi = {thr:.6g} "
            f"(exact step bound {rep.step_bound:.6g}); reduce k or pass --force")


def cmd_constants(cfg, out, force=False):
    sysd = _system(cfg)
    rep = constants_report(sysd, cfg.make_law(), cfg.k)
    print(rep.as_text(), end="")
    if cfg.write_csv:
        _write_csv(out / "constants.csv", rep.csv_header(), [rep.csv_row()])
    if rep.smallness_ok or rep.step_ok:
        return EXIT_OK
    print(_gate_message(rep), file=_sys.stderr)
    return EXIT_GATE


def _step_gate(sysd, law, k, cfg, force):
    """Return an exit code when the step condition refuses the run, else None."""
    if law is None or force:
        return None
    try:
        check_step(sysd, law, k)
    except StepConditionError as exc:
        rep = constants_report(sysd, law, k)
        print(f"{exc}\n{_gate_message(rep)}", file=_sys.stderr)
        return EXIT_GATE
    return None


STEP_STAT_KEYS = ("iterations", "fixed_point_residual", "momentum_residual", "divergence_norm",
                  "inclusion_residual", "energy_residual", "pressure_mean")


def cmd_solve(cfg, out, force=False):
    sysd = _system(cfg)
    law = cfg.make_law()
    grid = TimeGrid(cfg.T_final, cfg.N)
    code = _step_gate(sysd, law, grid.k, cfg, force)
    if code is not None:
        return code
    m = sysd.mesh
    verts = m.vertices
    slip_xy = sysd.dofmap.node_coords[sysd.dofmap.slip_nodes]
    sinks = []
    if cfg.write_csv:
        traj_csv = CsvSink(out / "trajectory.csv",
                           ["n", "t [s]", "vertex", "x [m]", "y [m]", "ux [m/s]", "uy [m/s]",
                            "p [Pa]"])
        slip_csv = CsvSink(out / "slip.csv",
                           ["n", "t [s]", "slip_node", "x [m]", "y [m]", "s [m/s]", "xi [Pa]"])
        stats_csv = CsvSink(out / "step_stats.csv",
                            ["n", "t [s]"] + [f"{k} [1]" for k in STEP_STAT_KEYS])
        sinks = [traj_csv, slip_csv, stats_csv]

    def emit(n, traj):
        t = n * grid.k
        uv = sysd.vertex_velocity(traj.u[n])
        p = traj.p[n - 1] if n else np.zeros(sysd.n_pressure)
        if sinks:
            for i in range(m.n_vertices):
                traj_csv.row([n, t, i, verts[i, 0], verts[i, 1], uv[i, 0], uv[i, 1], p[i]])
            if n:
                for j in range(sysd.n_slip):
                    slip_csv.row([n, t, j, slip_xy[j, 0], slip_xy[j, 1], traj.s[n - 1][j],
                                  traj.xi[n - 1][j]])
                st = traj.step_stats[n - 1]
                stats_csv.row([n, t] + [st[k] for k in STEP_STAT_KEYS])
            for s in sinks:
                s.flush()
        if cfg.vtk_stride and n % cfg.vtk_stride == 0:
            write_vtk(m, out / f"state_{n:05d}.vtk",
                      point_data={"velocity": uv, "pressure": p[: m.n_vertices]},
                      title=f"stokes-hvi t={t:.17g}")

    u0 = cfg.make_u0()
    f = SourceTerm.from_field(sysd, cfg.make_f(), tag=cfg.f)
    status = "complete"
    code = EXIT_OK
    try:
        # the initial state is written once the projection is known
        def on_step(n, traj):
            if n == 1:
                emit(0, traj)
            emit(n, traj)
        traj = run(sysd, law, u0, f, grid, tol=cfg.tol, max_iter=cfg.max_iter, force=True,
                   on_step=on_step, omega=cfg.relaxation)
    except RotheError as exc:
        done = len(exc.trajectory.u) - 1
        status = f"partial: completed {done} of {grid.N} steps"
        print(f"run failed: {exc}", file=_sys.stderr)
        code = EXIT_FAIL
    finally:
        for s in sinks:
            s.close()
    _write_text(out / "status.txt", status + "\n")
    if code == EXIT_OK:
        print(f"solved {grid.N} steps, k = {grid.k:.17g}; artifacts in {out}")
    return code


def _margin_gate(sysd, law, k, what):
    rep = constants_report(sysd, law, k)
    if rep.m_margin > 0:
        return rep, None
    print(f"{what} study refused: smallness margin m = 2 mu - alpha_psi/lambda_tau = "
          f"{rep.m_margin:.6g} is not positive", file=_sys.stderr)
    return rep, EXIT_GATE


def cmd_study(cfg, out, force=False, kind=None):
    kind = kind or cfg.study["kind"]
    if kind not in STUDIES:
        print(f"unknown study {kind!r}; known: {', '.join(STUDIES)}", file=_sys.stderr)
        return EXIT_CONFIG
    sysd = _system(cfg)
    law = cfg.make_law()
    u0 = cfg.make_u0()
    f = SourceTerm.from_field(sysd, cfg.make_f(), tag=cfg.f)
    T = cfg.T_final
    if kind == "convergence":
        code = _step_gate(sysd, law, T / cfg.N, cfg, force)
        if code is not None:
            return code
        rep = cauchy_study(sysd, law, u0, f, T, cfg.N, cfg.study["halvings"], tol=cfg.tol)
    elif kind == "lipschitz":
        code = _margin_gate(sysd, law, cfg.k, kind)[1]
        if code is not None:
            return code
        grid = TimeGrid(T, cfg.N)
        zero = (np.zeros(sysd.n_free), [np.zeros(sysd.n_free)] * grid.N)
        m_margin = constants_report(sysd, law, grid.k).m_margin
        rep = lipschitz_check(sysd, law, grid, (u0, f), zero, m_margin,
                              n_eval=cfg.study["pairs"], seed=cfg.seed, tol=min(cfg.tol, 1e-12))
    else:
        Ns = cfg.study["Ns"]
        crep, code = _margin_gate(sysd, law, T / min(Ns), kind)
        if code is not None:
            return code
        rep = energy_family(sysd, law, u0, f, T, Ns, crep.m_margin, tol=cfg.tol)
    print(rep.summary())
    if cfg.write_csv:
        _write_text(out / f"study_{kind}_checks.csv", rep.to_csv())
        if rep.table:
            _write_text(out / f"study_{kind}_table.csv", rep.table_csv())
    if rep.passed:
        return EXIT_OK
    for c in rep.failures():
        print(f"failed check {c.name}: margin {c.margin:.6g}", file=_sys.stderr)
    return EXIT_FAIL


def cmd_validate_law(cfg, out, force=False):
    law = cfg.make_law()
    if law is None:
        print("validate-law needs [physics] law to name a friction law", file=_sys.stderr)
        return EXIT_CONFIG
    v = cfg.validate
    alpha = law.alpha_psi * v["alpha_scale"]
    rep = validate_law(law, n_samples=v["samples"], radius=v["radius"], alpha_psi=alpha,
                       seed=cfg.seed)
    lines = rep.lines()
    print("\n".join(lines))
    if cfg.write_csv:
        _write_csv(out / "validate_law.csv", ["quantity", "value"],
                   [ln.split(" = ", 1) for ln in lines])
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {
    "constants": cmd_constants,
    "solve": cmd_solve,
    "study": cmd_study,
    "validate-law": cmd_validate_law,
}


def build_parser():
    p = argparse.ArgumentParser(prog="stokes-hvi",
                                description="Rothe solver for Stokes flow with nonmonotone slip friction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--force", action="store_true", help="run even if the solvability gate fails")
    p.add_argument("--out", metavar="DIR",
                   help=f"output directory (overrides ${OUT_ENV} and [output] directory)")
    p.add_argument("--study", choices=STUDIES, help="study kind (overrides [study] kind)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    out = resolve_out_dir(cfg, args.out)
    if args.command == "study":
        return cmd_study(cfg, out, force=args.force, kind=args.study)
    return COMMANDS[args.command](cfg, out, force=args.force)


if __name__ == "__main__":
    _sys.exit(main())
