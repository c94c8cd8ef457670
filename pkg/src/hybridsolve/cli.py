"""Command-line driver: solve, bench, verify, export and import.

Every command reads an optional JSON config whose keys match the long flag
names (dashes replaced by underscores); flags given on the command line win.
Exit codes: 0 success, 1 solver failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import fileio
from .errors import (
    CapExceeded,
    FormatError,
    HybridSolveError,
    IndefinitePreconditioner,
    NotConverged,
    NotSymmetric,
    SetupFailed,
    SingularBlock,
    ValidationError,
    ZeroDiagonal,
)
from .mesh import CellCoefficients, build_mesh, read_coefficients, soft_hard_coefficients
from .reduction import (
    ReductionInputs,
    assemble,
    boundary_faces,
    eliminate_essential,
    essential_face_dofs,
    hybridize,
    recover_condensed,
    recover_hybrid,
    restore_essential,
    rt_inputs,
    static_condense,
)
from .rt import build_space
from .solvers import DEFAULT_COARSE_CAP, DEFAULT_MAX_LEVELS, DEFAULT_OMEGA, DEFAULT_THETA, make_preconditioner, pcg
from .sparse import to_dense
from .verify import Instance, check_schur_identity, run_suite

log = logging.getLogger(__name__)

METHODS = ("assembled", "hybridization", "condensation")
PRECONDITIONERS = ("amg", "jacobi", "sgs", "none")
COEFFICIENT_SOURCES = ("soft-hard", "uniform", "file")
WEIGHTINGS = ("unweighted", "weighted")
THREADS_ENV = "HYBRIDSOLVE_NUM_THREADS"

EXIT_OK, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2

CONDENSATION_NOTE = ("note: the condensed system is preconditioned with the same scalar AMG "
                     "as the other paths, not an auxiliary-space solver")


@dataclass(frozen=True)
class RunConfig:
    mesh: tuple = (8, 8, 8)
    sizes: tuple | None = None
    order: int = 0
    coefficients: str = "soft-hard"
    p: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    coeff_file: str | None = None
    method: str = "hybridization"
    weighting: str = "unweighted"
    preconditioner: str = "amg"
    rtol: float = 1e-12
    maxit: int = 2000
    essential: bool = False
    output: str | None = None
    theta: float = DEFAULT_THETA
    omega: float = DEFAULT_OMEGA
    coarse_cap: int = DEFAULT_COARSE_CAP
    max_levels: int = DEFAULT_MAX_LEVELS

    def validate(self):
        mesh = tuple(int(n) for n in self.mesh)
        if len(mesh) not in (2, 3) or any(n < 1 for n in mesh):
            raise ValueError(f"mesh needs 2 or 3 positive cell counts, got {self.mesh}")
        if self.sizes is not None and len(self.sizes) != len(mesh):
            raise ValueError("sizes must have one entry per mesh dimension")
        if self.order not in (0, 1):
            raise ValueError(f"order must be 0 or 1, got {self.order}")
        for name, value, allowed in (
            ("method", self.method, METHODS),
            ("preconditioner", self.preconditioner, PRECONDITIONERS),
            ("coefficients", self.coefficients, COEFFICIENT_SOURCES),
            ("weighting", self.weighting, WEIGHTINGS),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.maxit < 0:
            raise ValueError("maxit must be non-negative")
        if self.coefficients == "file" and not self.coeff_file:
            raise ValueError("coefficients='file' needs coeff_file")
        if self.coefficients == "soft-hard" and len(mesh) != 3:
            raise ValueError("the soft-hard preset is defined on 3D meshes")
        return replace(self, mesh=mesh, sizes=None if self.sizes is None else tuple(float(h) for h in self.sizes))

    @property
    def mesh_label(self):
        return "x".join(str(n) for n in self.mesh)


@dataclass
class BenchRecord:
    method: str
    order: int
    p: int | None
    ndofs: int
    reduced_size: int
    setup_time: float
    solve_time: float
    recover_time: float
    total_time: float
    iterations: int
    final_relative_residual: float
    solution_checksum: float
    mesh: str = ""
    converged: bool = False
    error: str = ""

    def __post_init__(self):
        # plain Python scalars keep CSV and JSON output free of numpy reprs
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (bool, np.bool_)):
                setattr(self, f.name, bool(v))
            elif isinstance(v, np.integer):
                setattr(self, f.name, int(v))
            elif isinstance(v, np.floating):
                setattr(self, f.name, float(v))

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def failed(cls, config: RunConfig, message: str):
        return cls(config.method, config.order, _p_of(config), 0, 0, 0.0, 0.0, 0.0, 0.0, 0,
                   float("nan"), float("nan"), config.mesh_label, False, message)


def _p_of(config):
    return config.p if config.coefficients == "soft-hard" else None


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def build_problem(config: RunConfig):
    """Mesh, space and reduction inputs for a config (essential dofs removed if requested)."""
    mesh = build_mesh(len(config.mesh), config.mesh, config.sizes)
    space = build_space(mesh, config.order)
    if config.coefficients == "soft-hard":
        coeffs = soft_hard_coefficients(mesh, config.p)
    elif config.coefficients == "uniform":
        coeffs = CellCoefficients.uniform(mesh.ncells, config.alpha, config.beta)
    else:
        coeffs = read_coefficients(config.coeff_file, mesh.ncells)
    source = (1.0,) * mesh.dim
    inputs = rt_inputs(space, coeffs, config.weighting == "weighted", source)
    if config.essential:
        inputs = eliminate_essential(inputs, essential_face_dofs(space, boundary_faces(mesh)))
    return space, inputs


def _krylov(matrix, rhs, config: RunConfig):
    if matrix.nrows == 0:
        return np.zeros(0), None, 0.0
    t0 = time.perf_counter()
    precond = make_preconditioner(
        config.preconditioner, matrix,
        **({"theta": config.theta, "omega": config.omega, "coarse_cap": config.coarse_cap,
            "max_levels": config.max_levels} if config.preconditioner == "amg" else {}),
    )
    setup = time.perf_counter() - t0
    x, report = pcg(matrix, precond, rhs, rtol=config.rtol, maxit=config.maxit)
    return x, report, setup


def solve_inputs(inputs: ReductionInputs, config: RunConfig):
    """Run the chosen reduction, PCG and recovery.

    Returns ``(x, info)`` where ``x`` is in the full global numbering and
    ``info`` holds the timings and PCG report.
    """
    t_start = time.perf_counter()
    t0 = time.perf_counter()
    if config.method == "assembled":
        matrix, rhs = assemble(inputs)
    elif config.method == "hybridization":
        op, rhs = hybridize(inputs)
        matrix = op.h_mat
    else:
        op, rhs = static_condense(inputs)
        matrix = op.s_mat
    reduce_time = time.perf_counter() - t0
    y, report, amg_time = _krylov(matrix, rhs, config)
    t0 = time.perf_counter()
    if config.method == "assembled":
        x = y
    elif config.method == "hybridization":
        _, x = recover_hybrid(op, y, inputs.f_hat)
    else:
        x = recover_condensed(op, y, inputs.f_hat)
    x = restore_essential(inputs.essential, x)
    recover_time = time.perf_counter() - t0
    info = dict(
        reduced_size=matrix.nrows,
        setup_time=reduce_time + amg_time,
        solve_time=report.wall_time if report else 0.0,
        recover_time=recover_time,
        iterations=report.iterations if report else 0,
        final_relative_residual=report.final_relative_residual if report else 0.0,
        converged=report.converged if report else True,
    )
    info["total_time"] = max(time.perf_counter() - t_start,
                             info["setup_time"] + info["solve_time"] + info["recover_time"])
    return x, info


def run_config(config: RunConfig):
    """Full pipeline; returns ``(BenchRecord, x)``. Solver errors propagate."""
    config = config.validate()
    t0 = time.perf_counter()
    space, inputs = build_problem(config)
    build_time = time.perf_counter() - t0
    x, info = solve_inputs(inputs, config)
    record = BenchRecord(
        method=config.method,
        order=config.order,
        p=_p_of(config),
        ndofs=space.ndofs,
        reduced_size=info["reduced_size"],
        setup_time=info["setup_time"] + build_time,
        solve_time=info["solve_time"],
        recover_time=info["recover_time"],
        total_time=info["total_time"] + build_time,
        iterations=info["iterations"],
        final_relative_residual=info["final_relative_residual"],
        solution_checksum=float(np.linalg.norm(x)),
        mesh=config.mesh_label,
        converged=info["converged"],
    )
    return record, x


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def write_records(path, records, as_json=False):
    rows = [asdict(r) for r in records]
    stream = open(path, "w", newline="") if path else sys.stdout
    try:
        if as_json:
            json.dump(rows, stream, indent=2)
            stream.write("\n")
        else:
            writer = csv.DictWriter(stream, fieldnames=BenchRecord.columns(), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _csv_value(v) for k, v in row.items()})
    finally:
        if path:
            stream.close()


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_solve(config: RunConfig):
    """Solve one configuration and write the solution; returns (record, exit code)."""
    record, x = run_config(config)
    if config.output:
        fileio.write_plain_vector(config.output, x)
    if not record.converged:
        record.error = NotConverged.__name__
        return record, EXIT_SOLVER
    return record, EXIT_OK


def _bench_sort_key(record: BenchRecord):
    mesh = tuple(int(n) for n in record.mesh.split("x")) if record.mesh else ()
    return (record.method, mesh, record.p if record.p is not None else 0)


def cmd_bench(base: RunConfig, meshes, ps, methods):
    """Soft-hard sweep; one record per (mesh, p, method), failures recorded in place."""
    records = []
    for mesh in meshes:
        for p in ps:
            for method in methods:
                config = replace(base, mesh=tuple(mesh), p=int(p), method=method, coefficients="soft-hard", output=None)
                try:
                    record, _ = run_config(config)
                except (HybridSolveError, ArithmeticError, MemoryError) as exc:
                    log.warning("bench %s p=%s %s failed: %s", config.mesh_label, p, method, exc)
                    record = BenchRecord.failed(config, f"{type(exc).__name__}: {exc}")
                records.append(record)
    records.sort(key=_bench_sort_key)
    return records


def cmd_verify(level="fast", inject_fault=False, out=None):
    """Run the identity suite, print one line per check; returns the exit code."""
    out = out or sys.stdout
    results = run_suite(level)
    if inject_fault:
        inst = Instance.build(2, 0, 0, False)
        h = to_dense(hybridize(inst.inputs)[0].h_mat)
        h[0, 0] += 1e-3
        res = check_schur_identity(inst, h_override=h)
        res.name += " (H[0,0] perturbed by 1e-3)"
        results.append(res)
    for r in results:
        print(r.line(), file=out)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=out)
    return EXIT_OK if failed == 0 else EXIT_SOLVER


EXPORT_FILES = {"blocks": "blocks.txt", "P": "P.mtx", "C": "C.mtx", "f_hat": "f_hat.mtx", "keep": "keep_mask.txt"}


def cmd_export(config: RunConfig, directory, matrices=()):
    """Write A_hat blocks, P, C, f_hat (and optionally A, H, S) to a directory."""
    config = config.validate()
    _, inputs = build_problem(config)
    export_inputs(inputs, directory)
    for name in matrices:
        if name == "A":
            mat = assemble(inputs)[0]
        elif name == "H":
            mat = hybridize(inputs)[0].h_mat
        elif name == "S":
            mat = static_condense(inputs)[0].s_mat
        else:
            raise ValueError(f"unknown matrix {name!r}; choose from A, H, S")
        fileio.write_matrix_market(os.path.join(directory, f"{name}.mtx"), mat)
    return inputs


def export_inputs(inputs: ReductionInputs, directory):
    fileio.ensure_dir(directory)
    fileio.write_blocks(os.path.join(directory, EXPORT_FILES["blocks"]), inputs.a_hat)
    fileio.write_matrix_market(os.path.join(directory, EXPORT_FILES["P"]), inputs.p_mat)
    fileio.write_matrix_market(os.path.join(directory, EXPORT_FILES["C"]), inputs.c_mat)
    fileio.write_vector(os.path.join(directory, EXPORT_FILES["f_hat"]), inputs.f_hat)
    if inputs.keep_mask is not None:
        fileio.write_plain_vector(os.path.join(directory, EXPORT_FILES["keep"]), inputs.keep_mask.astype(np.float64))


def import_inputs(directory) -> ReductionInputs:
    """Read an exported directory and validate it (C P = 0 is enforced)."""
    a_hat = fileio.read_blocks(os.path.join(directory, EXPORT_FILES["blocks"]))
    p_mat = fileio.read_matrix_market(os.path.join(directory, EXPORT_FILES["P"]))
    c_mat = fileio.read_matrix_market(os.path.join(directory, EXPORT_FILES["C"]))
    f_hat = fileio.read_vector(os.path.join(directory, EXPORT_FILES["f_hat"]))
    keep_path = os.path.join(directory, EXPORT_FILES["keep"])
    keep = None
    if os.path.exists(keep_path):
        keep = fileio.read_plain_vector(keep_path) != 0.0
    return ReductionInputs(a_hat, p_mat, c_mat, f_hat, keep_mask=keep).validate()


def cmd_import(directory, config: RunConfig):
    """Solve imported inputs with the configured method; returns (x, info, exit code)."""
    inputs = import_inputs(directory)
    x, info = solve_inputs(inputs, config)
    if config.output:
        fileio.write_plain_vector(config.output, x)
    return x, info, EXIT_OK if info["converged"] else EXIT_SOLVER


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with config keys (flags override it)")
    p.add_argument("--mesh", type=int, nargs="+", help="cell counts per axis, e.g. 8 8 8")
    p.add_argument("--sizes", type=float, nargs="+", help="cell sizes per axis (default: unit cube)")
    p.add_argument("--order", type=int, choices=(0, 1))
    p.add_argument("--coefficients", choices=COEFFICIENT_SOURCES)
    p.add_argument("--p", type=int, help="soft-hard exponent")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--coeff-file")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--weighting", choices=WEIGHTINGS)
    p.add_argument("--preconditioner", choices=PRECONDITIONERS)
    p.add_argument("--rtol", type=float)
    p.add_argument("--maxit", type=int)
    p.add_argument("--essential", action=argparse.BooleanOptionalAction, default=None,
                   help="zero normal flux on the whole boundary")
    p.add_argument("--output", help="output path")
    p.add_argument("--theta", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--coarse-cap", type=int)
    p.add_argument("--max-levels", type=int)


SOLVER_ERRORS = (SingularBlock, ZeroDiagonal, NotSymmetric, SetupFailed, IndefinitePreconditioner,
                 CapExceeded, NotConverged)

CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def config_from_args(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(loaded) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for key in ("mesh", "sizes"):
        if values.get(key) is not None:
            values[key] = tuple(values[key])
    return RunConfig(**values)


def build_parser():
    parser = argparse.ArgumentParser(prog="hybridsolve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one configuration")
    _add_config_flags(s)
    s.add_argument("--record", help="write the BenchRecord here (CSV, or JSON with --json)")
    s.add_argument("--json", action="store_true")

    b = sub.add_parser("bench", help="soft-hard coefficient sweep")
    _add_config_flags(b)
    b.add_argument("--meshes", nargs="*", default=None,
                   help="mesh list like 8x8x8 16x16x16 (default: 8x8x8 16x16x16)")
    b.add_argument("--ps", type=int, nargs="*", default=None, help="exponents (default: -8 -4 0 4 8)")
    b.add_argument("--methods", nargs="*", choices=METHODS, default=None)
    b.add_argument("--json", action="store_true")

    v = sub.add_parser("verify", help="dense-oracle identity suite")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--inject-fault", action="store_true", help="also check a deliberately perturbed H")

    e = sub.add_parser("export", help="write element blocks, P, C and f_hat")
    _add_config_flags(e)
    e.add_argument("directory")
    e.add_argument("--matrices", nargs="*", default=(), choices=("A", "H", "S"))

    i = sub.add_parser("import", help="solve from exported files")
    _add_config_flags(i)
    i.add_argument("directory")
    return parser


def _parse_mesh(text):
    try:
        counts = tuple(int(t) for t in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad mesh {text!r}; use e.g. 8x8x8") from None
    return counts


def _configure_threads():
    """Validate the thread-count variable.

    All kernels run serially, so any valid value gives identical output.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _configure_threads()
        if args.command == "verify":
            return cmd_verify(args.level, args.inject_fault)
        config = config_from_args(args)
        if args.command == "solve":
            record, code = cmd_solve(config)
            write_records(args.record, [record], args.json)
            return code
        if args.command == "bench":
            meshes = [_parse_mesh(m) for m in (args.meshes if args.meshes is not None else ["8x8x8", "16x16x16"])]
            ps = args.ps if args.ps is not None else [-8, -4, 0, 4, 8]
            methods = args.methods if args.methods is not None else ["hybridization"]
            config.validate()
            if "condensation" in methods:
                print(CONDENSATION_NOTE, file=sys.stderr)
            records = cmd_bench(config, meshes, ps, methods)
            write_records(config.output, records, args.json)
            return EXIT_OK if all(r.converged for r in records) else EXIT_SOLVER
        if args.command == "export":
            cmd_export(config, args.directory, args.matrices)
            return EXIT_OK
        if args.command == "import":
            _, info, code = cmd_import(args.directory, config)
            print(json.dumps(info))
            return code
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FormatError, ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (HybridSolveError, ArithmeticError, MemoryError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
