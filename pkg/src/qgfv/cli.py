"""Command-line driver.

Subcommands:

* ``qgfv mesh gen`` - build a quad or CVT mesh and write it to a file.
* ``qgfv mesh validate`` - print a validation report for a mesh file.
* ``qgfv run`` - integrate a configured case and write diagnostics,
  field snapshots, and a manifest to an output directory.
* ``qgfv steady`` - solve a steady linear gyre and write the field plus a
  boundary-layer report.

Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 bad
arguments or configuration, 4 solver failure. The environment variable
QGFV_LOG (error, info, debug) selects logging verbosity. All outputs use
fixed formatting so a rerun with identical inputs is byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys

import numpy as np

from .errors import (ConfigError, MeshError, MeshFormatError,
                     MeshGenerationError, QGFVError, SolverError)
from .cases import (boundary_layer_report, parse_config, steady_linear_solve,
                    wind_curl_field)
from .diagnostics import CSV_HEADER, compute_diagnostics
from .mesh import (build_cvt_mesh, build_quad_mesh, load_mesh, save_mesh,
                   validate_mesh)
from .operators import matrices
from .schemes import SCHEMES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 3
EXIT_SOLVER = 4

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code this tool promises (3, not 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="qgfv", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    mesh = sub.add_parser("mesh", help="generate or validate mesh files")
    mesh_sub = mesh.add_subparsers(dest="mesh_command", required=True,
                                   parser_class=_Parser)
    gen = mesh_sub.add_parser("gen", help="generate a mesh file")
    gen.add_argument("--quad", nargs=4, metavar=("NX", "NY", "LX", "LY"),
                     help="structured quad mesh: cell counts and extents")
    gen.add_argument("--cvt", nargs=4,
                     metavar=("POLYGON_FILE", "N", "ITERS", "SEED"),
                     help="centroidal Voronoi mesh inside a polygon")
    gen.add_argument("-o", "--output", required=True, metavar="FILE")
    val = mesh_sub.add_parser("validate", help="validate a mesh file")
    val.add_argument("mesh_file")

    run = sub.add_parser("run", help="run a configured simulation")
    run.add_argument("config")
    run.add_argument("--out", required=True, metavar="DIR")

    steady = sub.add_parser("steady", help="solve a steady linear gyre")
    steady.add_argument("config")
    steady.add_argument("--out", required=True, metavar="DIR")
    return parser


def _parse_int(parser, text, what):
    try:
        return int(text)
    except ValueError:
        parser.error(f"{what} must be an integer, got {text!r}")


def _parse_float(parser, text, what):
    try:
        return float(text)
    except ValueError:
        parser.error(f"{what} must be a number, got {text!r}")


def _read_polygon(path):
    vertices = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise MeshFormatError(
                    f"{path}:{lineno}: expected 'x y', got {text!r}")
            try:
                vertices.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise MeshFormatError(
                    f"{path}:{lineno}: bad coordinate in {text!r}") from exc
    if len(vertices) < 3:
        raise MeshFormatError(
            f"{path}: a polygon needs at least 3 vertices, "
            f"got {len(vertices)}")
    return vertices


def _cmd_mesh_gen(parser, args) -> int:
    if (args.quad is None) == (args.cvt is None):
        parser.error("exactly one of --quad or --cvt is required")
    if args.quad is not None:
        nx = _parse_int(parser, args.quad[0], "NX")
        ny = _parse_int(parser, args.quad[1], "NY")
        lx = _parse_float(parser, args.quad[2], "LX")
        ly = _parse_float(parser, args.quad[3], "LY")
        try:
            mesh = build_quad_mesh(nx, ny, lx, ly)
        except MeshError as exc:
            sys.stderr.write(f"qgfv mesh gen: {exc}\n")
            return EXIT_USAGE
    else:
        polygon = _read_polygon(args.cvt[0])
        n = _parse_int(parser, args.cvt[1], "N")
        iters = _parse_int(parser, args.cvt[2], "ITERS")
        seed = _parse_int(parser, args.cvt[3], "SEED")
        try:
            mesh = build_cvt_mesh(polygon, n, iters, seed)
        except MeshGenerationError as exc:
            sys.stderr.write(f"qgfv mesh gen: {exc}\n")
            return EXIT_VALIDATION
        except MeshError as exc:
            sys.stderr.write(f"qgfv mesh gen: {exc}\n")
            return EXIT_USAGE
    save_mesh(mesh, args.output)
    print(f"wrote {args.output}: {mesh.n_cells} cells, "
          f"{mesh.n_vertices} vertices, {mesh.n_edges} edges")
    return EXIT_OK


def _cmd_mesh_validate(args) -> int:
    mesh = load_mesh(args.mesh_file)
    report = validate_mesh(mesh)
    print(report)
    return EXIT_OK if report.accepted else EXIT_VALIDATION


def _field_csv(path, mesh, values) -> None:
    x = mesh.cell_centers[:, 0]
    y = mesh.cell_centers[:, 1]
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("cell_id,x,y,value\n")
        for i in range(mesh.n_cells):
            handle.write(f"{i + 1},{format(x[i], '.17g')},"
                         f"{format(y[i], '.17g')},"
                         f"{format(values[i], '.17g')}\n")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, config_path, mesh_checksum, lines) -> None:
    """Manifest is written atomically and contains no wall-clock data."""
    with open(config_path, encoding="utf-8") as handle:
        config_echo = handle.read()
    path = os.path.join(out_dir, "manifest.txt")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write("qgfv manifest 1\n")
        handle.write(f"mesh_sha256: {mesh_checksum}\n")
        for line in lines:
            handle.write(line + "\n")
        handle.write("--- config ---\n")
        handle.write(config_echo)
        if not config_echo.endswith("\n"):
            handle.write("\n")
        handle.write("--- end config ---\n")
    os.replace(tmp, path)


def _pv_of_state(mesh, params, scheme, state) -> np.ndarray:
    if scheme.prognostic == "pv":
        return state.prognostic
    psi = state.prognostic
    q = np.zeros(mesh.n_cells)
    ic = mesh.interior_cells
    lap = matrices(mesh).laplacian @ psi
    q[ic] = (params.g / params.f0) * lap[ic] \
        + params.planetary_pv(mesh)[ic] \
        - (params.f0 / params.H) * (psi[ic] - params.topography(mesh)[ic])
    return q


def _prepare_out_dir(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    mesh = config.build_mesh()
    if config.mesh_file is not None:
        checksum = _sha256(config.mesh_file)
    else:
        mesh_path = os.path.join(out_dir, "mesh.qgmesh")
        save_mesh(mesh, mesh_path)
        checksum = _sha256(mesh_path)
    return mesh, checksum


def _cmd_run(args) -> int:
    config = parse_config(args.config)
    if config.case not in ("circular", "wind_basin"):
        raise ConfigError(
            f"'qgfv run' supports the circular and wind_basin cases, "
            f"got {config.case!r} (use 'qgfv steady' for steady cases)")
    if config.scheme is None:
        raise ConfigError("missing required key 'scheme'")
    if config.steps is None:
        raise ConfigError("missing required key 'steps'")
    scheme = SCHEMES[config.scheme]
    params = config.physical_params()
    mesh, checksum = _prepare_out_dir(config, args.out)
    forcing = config.forcing(mesh, params)
    q0 = config.initial_pv(mesh, params)
    state = scheme.initialize(mesh, params, q0)

    outputs = []

    def emit(step, state):
        tag = f"{step:06d}"
        pv = _pv_of_state(mesh, params, scheme, state)
        record = compute_diagnostics(mesh, state, pv)
        _field_csv(os.path.join(args.out, f"psi_{tag}.csv"),
                   mesh, state.diagnostics.psi)
        _field_csv(os.path.join(args.out, f"q_{tag}.csv"), mesh, pv)
        outputs.extend([f"psi_{tag}.csv", f"q_{tag}.csv"])
        return record

    records = [emit(0, state)]
    failure = None
    step = 0
    for step in range(1, config.steps + 1):
        try:
            state = scheme.step(mesh, params, forcing, state, config.dt)
        except SolverError as exc:
            failure = (step, str(exc))
            break
        if step % config.output_every == 0:
            records.append(emit(step, state))

    diag_path = os.path.join(args.out, "diagnostics.csv")
    with open(diag_path, "w", encoding="utf-8") as handle:
        handle.write(CSV_HEADER + "\n")
        for record in records:
            handle.write(record.csv_row() + "\n")
    outputs.append("diagnostics.csv")

    status = "ok" if failure is None else f"solver_failure at step {failure[0]}"
    lines = ["command: run",
             f"case: {config.case}",
             f"scheme: {config.scheme}",
             f"dt: {format(config.dt, '.17g')}",
             f"steps: {config.steps}",
             f"output_every: {config.output_every}",
             "sim_start: 0",
             f"sim_end: {format(state.time, '.17g')}",
             "outputs: " + " ".join(sorted(set(outputs))),
             f"status: {status}"]
    _write_manifest(args.out, args.config, checksum, lines)
    if failure is not None:
        sys.stderr.write(
            f"qgfv run: solver failure at step {failure[0]}: {failure[1]}\n")
        return EXIT_SOLVER
    print(f"run complete: {config.steps} steps, wrote {args.out}")
    return EXIT_OK


def _cmd_steady(args) -> int:
    config = parse_config(args.config)
    if config.case not in ("steady_stommel", "steady_munk"):
        raise ConfigError(
            f"'qgfv steady' needs case steady_stommel or steady_munk, "
            f"got {config.case!r}")
    mode = "stommel" if config.case == "steady_stommel" else "munk"
    params = config.physical_params()
    mesh, checksum = _prepare_out_dir(config, args.out)
    curl = wind_curl_field(mesh, tau0=config.tau0)
    psi = steady_linear_solve(mesh, params, curl, mode)
    _field_csv(os.path.join(args.out, "psi_steady.csv"), mesh, psi)
    report = boundary_layer_report(mesh, psi)
    report_path = os.path.join(args.out, "boundary_layer.txt")
    with open(report_path, "w", encoding="utf-8") as handle:
        for key in ("west_max_gradient", "east_max_gradient",
                    "west_east_ratio", "west_efold_width",
                    "east_efold_width"):
            handle.write(f"{key}: {format(report[key], '.17g')}\n")
    lines = ["command: steady",
             f"case: {config.case}",
             f"mode: {mode}",
             "outputs: boundary_layer.txt psi_steady.csv",
             "status: ok"]
    _write_manifest(args.out, args.config, checksum, lines)
    print(f"steady solve complete ({mode}), "
          f"west/east gradient ratio {report['west_east_ratio']:.3g}")
    return EXIT_OK


def _configure_logging() -> None:
    raw = os.environ.get("QGFV_LOG", "error").lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        level = logging.ERROR
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    if raw not in _LOG_LEVELS:
        logging.getLogger(__name__).error(
            "unknown QGFV_LOG value %r; using 'error'", raw)


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "mesh":
            if args.mesh_command == "gen":
                return _cmd_mesh_gen(parser, args)
            return _cmd_mesh_validate(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_steady(args)
    except ConfigError as exc:
        sys.stderr.write(f"qgfv: configuration error: {exc}\n")
        return EXIT_USAGE
    except MeshFormatError as exc:
        sys.stderr.write(f"qgfv: {exc}\n")
        return EXIT_IO
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"qgfv: I/O error: {exc}\n")
        return EXIT_IO
    except OSError as exc:
        sys.stderr.write(f"qgfv: I/O error: {exc}\n")
        return EXIT_IO
    except SolverError as exc:
        sys.stderr.write(f"qgfv: solver failure: {exc}\n")
        return EXIT_SOLVER
    except QGFVError as exc:
        sys.stderr.write(f"qgfv: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
