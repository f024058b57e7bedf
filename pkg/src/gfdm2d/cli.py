"""Command-line driver: run, convergence, fractions, bench.

Configuration is a flat ``key = value`` text file (comments with '#'). Every
command writes its CSV artifacts, the rendered figures, and a copy of the
resolved configuration into the output directory, so a results folder fully
documents the experiment that produced it.

Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from gfdm2d import figures
from gfdm2d.assembly import SolverConfig, assemble, select_hybrid_nodes, solve
from gfdm2d.geometry import CellCache, DegenerateCellError
from gfdm2d.pointcloud import build_neighborhoods, refinement_radius, write_cloud_csv
from gfdm2d.problems import (
    CASE_IDS,
    build_cloud,
    build_field,
    convergence_study,
    flux_error_profile,
    make_case,
    node_fraction_stats,
    relative_l2_error,
    solve_on_cloud,
)
from gfdm2d.solvers import SolverError
from gfdm2d.strongform import SingularStencilError, classical_rows

USAGE_ERROR = 1
NUMERICAL_ERROR = 2

_CASE_PARAM_KEYS = {
    "two_strip": ("delta_eta",),
    "curved_interface": ("eta_left", "eta_right"),
    "interior_interface": ("delta_eta", "height"),
    "three_strip": ("jump_left", "jump_right"),
}


class ConfigError(ValueError):
    pass


def parse_config(path) -> dict[str, str]:
    """Flat `key = value` file; later keys override earlier ones."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


class RunConfig:
    """Typed view of the flat configuration with benchmark defaults."""

    def __init__(self, raw: dict[str, str]):
        self.raw = dict(raw)
        self.case_id = raw.get("case", "two_strip")
        if self.case_id not in CASE_IDS:
            raise ConfigError(f"unknown case {self.case_id!r}")
        self.method = raw.get("method", "strong")
        if self.method not in ("strong", "pos_hybrid", "cons_hybrid"):
            raise ConfigError(f"unknown method {self.method!r}")
        self.neumann_mode = raw.get("neumann_mode", "strong")
        if self.neumann_mode not in ("strong", "conservative_near_switch"):
            raise ConfigError(f"unknown neumann_mode {self.neumann_mode!r}")
        self.cloud_type = raw.get("cloud_type", "irregular")
        if self.cloud_type not in ("uniform", "irregular"):
            raise ConfigError(f"unknown cloud_type {self.cloud_type!r}")
        self.metric = raw.get("metric", "d2")
        self.level = self._int("level", 3)
        self.seed = self._int("seed", 0)
        self.levels = self._levels(raw.get("levels", "0:4"))
        self.sweep = raw.get("sweep", "levels")
        if self.sweep not in ("levels", "jumps"):
            raise ConfigError(f"unknown sweep mode {self.sweep!r}")
        self.exponents = self._exponents(raw.get("jump_exponents", "-10:10:2"))
        self.smoothing_cycles = self._opt_int("smoothing_cycles")
        self.scaled = self._opt_bool("scaled")
        self.tol = self._float("tol", 1e-10)
        self.maxiter = self._opt_int("maxiter")
        self.repetitions = self._int("repetitions", 10)
        self.case_params = {}
        for key in _CASE_PARAM_KEYS[self.case_id]:
            if key in raw:
                self.case_params[key] = float(raw[key])

    def _int(self, key, default):
        try:
            return int(self.raw.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"bad integer for {key!r}") from exc

    def _float(self, key, default):
        try:
            return float(self.raw.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"bad number for {key!r}") from exc

    def _opt_int(self, key):
        return int(self.raw[key]) if key in self.raw and self.raw[key] != "" \
            else None

    def _opt_bool(self, key):
        if key not in self.raw or self.raw[key] == "":
            return None
        val = self.raw[key].lower()
        if val in ("true", "1", "yes", "on"):
            return True
        if val in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key!r}")

    def _levels(self, spec):
        try:
            if ":" in spec:
                lo, hi = spec.split(":")
                return list(range(int(lo), int(hi) + 1))
            return [int(tok) for tok in spec.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad levels spec {spec!r}") from exc

    def _exponents(self, spec):
        try:
            parts = [int(tok) for tok in spec.split(":")]
        except ValueError as exc:
            raise ConfigError(f"bad jump_exponents spec {spec!r}") from exc
        if len(parts) == 2:
            parts.append(1)
        if len(parts) != 3:
            raise ConfigError(f"bad jump_exponents spec {spec!r}")
        return list(range(parts[0], parts[1] + 1, parts[2]))

    def case(self, **overrides):
        params = dict(self.case_params)
        params.update(overrides)
        return make_case(self.case_id, **params)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, maxiter=self.maxiter)

    def dump(self, path) -> None:
        keys = sorted(self.raw)
        with open(path, "w") as f:
            for key in keys:
                f.write(f"{key} = {self.raw[key]}\n")


def _write_csv(path, header: str, rows) -> None:
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _case_for_jump(cfg: RunConfig, exponent: int):
    """Case instance for one sweep entry, following the benchmark parameterization."""
    if cfg.case_id == "two_strip":
        return cfg.case(delta_eta=10.0 ** exponent)
    if cfg.case_id == "interior_interface":
        if exponent < 0:
            raise ConfigError("interior_interface sweep needs exponents >= 0")
        return cfg.case(delta_eta=10.0 ** exponent)
    if cfg.case_id == "curved_interface":
        if exponent >= 0:
            return cfg.case(eta_left=1.0, eta_right=10.0 ** exponent)
        return cfg.case(eta_left=10.0 ** (-exponent), eta_right=1.0)
    raise ConfigError(f"jump sweep is not defined for case {cfg.case_id!r}")


def cmd_run(cfg: RunConfig, out: Path) -> int:
    case = cfg.case()
    cloud = build_cloud(case, cfg.cloud_type, cfg.level, cfg.seed)
    u, system, info = solve_on_cloud(
        case, cloud, cfg.method, cfg.neumann_mode, cfg.smoothing_cycles,
        cfg.scaled, cfg.solver_config(), cfg.metric)
    u_exact = case.exact(cloud.points)

    write_cloud_csv(out / "cloud.csv", cloud)
    _write_csv(out / "solution.csv", "x,y,u_h,u_exact,kind",
               zip(cloud.points[:, 0], cloud.points[:, 1], u, u_exact,
                   cloud.kind))
    counts = system.row_kind_counts()
    _write_csv(out / "report.csv",
               "error,iterations,residual," + ",".join(counts),
               [(info["error"], info["iterations"], info["residual"],
                 *counts.values())])

    band = np.abs(cloud.points[:, 1]) <= cloud.h
    _write_csv(out / "solution_profile.csv", "x,u_exact,u_h",
               zip(cloud.points[band, 0], u_exact[band], u[band]))
    figures.solution_profile(out / "solution_profile.png",
                             cloud.points[band, 0], u[band], u_exact[band],
                             title=f"{case.id}, {cfg.method}")
    if case.id == "three_strip":
        prof = flux_error_profile(u, case, cloud, info["neigh"])
        _write_csv(out / "flux_profile.csv", "x,delta_q",
                   zip(prof.x, prof.delta_q))
        figures.flux_profile(out / "flux_profile.png", prof.x, prof.delta_q,
                             title=f"flux error, {cfg.method}")
    print(f"error={info['error']:.6e} iterations={info['iterations']} "
          f"residual={info['residual']:.3e}")
    return 0


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    if cfg.sweep == "jumps":
        return _cmd_jump_sweep(cfg, out)
    case = cfg.case()
    report = convergence_study(case, cfg.method, cfg.neumann_mode,
                               cfg.levels, cfg.cloud_type, cfg.seed,
                               cfg.smoothing_cycles, cfg.scaled,
                               cfg.solver_config())
    orders = [float("nan")] + report.orders()
    rows = [(e.level, e.h, e.n_points, e.error, o)
            for e, o in zip(report.entries, orders)]
    _write_csv(out / "convergence.csv", "level,h,N,error,order", rows)
    hs = [e.h for e in report.entries if np.isfinite(e.error)]
    errs = [e.error for e in report.entries if np.isfinite(e.error)]
    figures.convergence(out / "convergence.png",
                        [(cfg.method, hs, errs)],
                        title=f"{case.id}")
    for row in rows:
        print(f"level={row[0]} h={row[1]:.5g} N={row[2]} error={row[3]:.6e}")
    return 0


def _cmd_jump_sweep(cfg: RunConfig, out: Path) -> int:
    rows = []
    for m in cfg.exponents:
        case = _case_for_jump(cfg, m)
        cloud = build_cloud(case, cfg.cloud_type, cfg.level, cfg.seed)
        _, _, info = solve_on_cloud(
            case, cloud, cfg.method, cfg.neumann_mode, cfg.smoothing_cycles,
            cfg.scaled, cfg.solver_config(), cfg.metric)
        rows.append((10.0 ** m, info["error"]))
        print(f"jump=1e{m:+d} error={info['error']:.6e}")
    _write_csv(out / "errjump.csv", "delta_eta,error", rows)
    figures.error_over_jump(out / "errjump.png",
                            [r[0] for r in rows], [r[1] for r in rows],
                            label=cfg.method, title=cfg.case_id)
    return 0


def cmd_fractions(cfg: RunConfig, out: Path) -> int:
    jid = {"two_strip": "delta_eta", "interior_interface": "delta_eta"}
    if cfg.case_id not in jid:
        raise ConfigError("fractions command supports two_strip and "
                          "interior_interface")
    jumps = [1.0, 1e2, 1e4, 1e6, 1e8, 1e10]
    levels = cfg.raw.get("fraction_levels", "2,4")
    levels = [int(tok) for tok in levels.split(",")]
    rows_by_h = {}
    table_rows = []
    for k in levels:
        h = refinement_radius(k)
        case0 = cfg.case(**{jid[cfg.case_id]: 1.0})
        cloud = build_cloud(case0, cfg.cloud_type, k, cfg.seed)
        neigh = build_neighborhoods(cloud, cfg.metric)
        fr_list = []
        for de in jumps:
            case = cfg.case(**{jid[cfg.case_id]: de})
            field = build_field(case, cloud, neigh, "cons_hybrid",
                                cfg.smoothing_cycles, cfg.scaled)
            rows = classical_rows(cloud, neigh, field)
            sel = select_hybrid_nodes(rows, neigh, interior=cloud.interior)
            fr = node_fraction_stats(sel, cloud, neigh, field)
            fr_list.append(fr)
            table_rows.append((h, de, fr.sigma0_of_interior,
                               fr.conservative_of_interior,
                               fr.interface_of_conservative,
                               fr.interface_plus_of_conservative))
            print(f"h={h:g} jump={de:g} sigma0={fr.sigma0_of_interior:.2f}% "
                  f"cons={fr.conservative_of_interior:.2f}%")
        rows_by_h[h] = fr_list
    _write_csv(out / "fractions.csv",
               "h,delta_eta,sigma0_pct,conservative_pct,interface_pct,"
               "interface_plus_pct", table_rows)
    figures.fractions(out / "fractions.png", jumps, rows_by_h,
                      title=f"{cfg.case_id} node fractions")
    return 0


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    case = cfg.case(delta_eta=cfg.case_params.get("delta_eta", 1e10)) \
        if cfg.case_id == "interior_interface" else \
        make_case("interior_interface", delta_eta=1e10)
    rows = []
    iters_by_method = {"strong": [], "cons_hybrid": []}
    hs = []
    for k in cfg.levels:
        cloud = build_cloud(case, cfg.cloud_type, k, cfg.seed)
        hs.append(refinement_radius(k))
        for method in ("strong", "cons_hybrid"):
            times = []
            iters = 0
            for _ in range(cfg.repetitions):
                t0 = time.perf_counter()
                _, _, info = solve_on_cloud(case, cloud, method,
                                            cfg.neumann_mode,
                                            cfg.smoothing_cycles, cfg.scaled,
                                            cfg.solver_config(), cfg.metric)
                times.append(time.perf_counter() - t0)
                iters = info["iterations"]
            mean_t = float(np.mean(times))
            rows.append((refinement_radius(k), len(cloud), method, iters,
                         mean_t, cfg.repetitions))
            iters_by_method[method].append(iters)
            print(f"h={refinement_radius(k):g} {method}: iterations={iters} "
                  f"mean_time={mean_t:.3f}s")
    _write_csv(out / "bench.csv",
               "h,N,method,iterations,mean_time_s,repetitions", rows)
    figures.bench(out / "bench.png", hs, iters_by_method,
                  title="solver iterations")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def main(argv=None) -> int:
    parser = _Parser(prog="gfdm2d",
                     description="Meshfree GFDM interface-problem solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "convergence", "fractions", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = RunConfig(parse_config(args.config))
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.raw["seed"] = str(args.seed)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    out = Path(args.out) if args.out else Path(f"out_{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config_resolved.txt")

    handler = {"run": cmd_run, "convergence": cmd_convergence,
               "fractions": cmd_fractions, "bench": cmd_bench}[args.command]
    try:
        return handler(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (SolverError, SingularStencilError, DegenerateCellError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
