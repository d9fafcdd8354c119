"""Command line entry point: ``levysheet <subcommand> [--config F] [--threads K] [--out DIR] [--seed S]``.

Exit codes: 0 success, 1 a verification verdict failed, 2 usage or config
error, 3 a runtime error raised by the numerical modules.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, ParseError, ValidationError, config_hash, load_config, parse_config, with_overrides
from .field_approx import field_grid
from .sheet_sim import RngStream, derive_seed, dump_sheet, sample_sheet
from .spde_solver import compare_laws, kernel_driven_marginals, white_noise_marginals
from .suite import kernel_marginals, kernel_sampler, run_field_ensemble, verify_convergence, white_reference

log = logging.getLogger("levysheet")

DEFAULT_CONFIG = "default_config.json"
REPORT_FIELDS = ["test", "target", "estimate", "stderr", "tolerance", "verdict"]


def header_line(cfg: ExperimentConfig) -> str:
    return f"# levysheet {__version__} seed={cfg.seed} config={config_hash(cfg)}\n"


def write_atomic(path: Path, data: str | bytes) -> None:
    """Write to a temporary file in the target directory, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(cfg: ExperimentConfig, fieldnames: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(header_line(cfg))
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def shipped_config_text() -> str:
    return resources.files("levysheet").joinpath(DEFAULT_CONFIG).read_text(encoding="utf-8")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config(shipped_config_text())
    return with_overrides(cfg, seed=args.seed, out_dir=args.out)


# ------------------------------------------------------------- subcommands


def cmd_simulate_sheet(cfg: ExperimentConfig, args) -> int:
    tc = cfg.field_theta()
    eps = args.eps if args.eps is not None else cfg.field.epsilon
    grid = field_grid(tc, eps, cfg.field.S, cfg.field.T, cfg.field.phase_step, cfg.field.min_cells)
    root = RngStream(derive_seed(cfg.seed, "field"))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in range(args.replicates):
        path = sample_sheet(tc.model, grid, root.replicate(r))
        dest = out / f"sheet_{r:05d}.bin"
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{dest.name}.", suffix=".tmp")
        os.close(fd)
        dump_sheet(path, tmp, {"seed": cfg.seed, "config": config_hash(cfg), "replicate": r, "version": __version__})
        os.replace(tmp, dest)
    log.info("wrote %d sheet(s) on a %dx%d grid to %s", args.replicates, grid.nx, grid.ny, out)
    return 0


def cmd_approx_field(cfg: ExperimentConfig, args) -> int:
    f = cfg.field
    eps = args.eps if args.eps is not None else f.epsilon
    M = args.replicates if args.replicates is not None else f.replicates
    points = [tuple(map(float, p)) for p in f.eval_points]
    run = run_field_ensemble(cfg, args.threads, M=M, eps_list=[eps], points=points)
    vals = run.values[eps]
    rows = (
        {"replicate": r, "s": s, "t": t, "re": vals[r, p].real, "im": vals[r, p].imag}
        for r in range(M) for p, (s, t) in enumerate(points)
    )
    dest = Path(cfg.out_dir) / "field.csv"
    write_atomic(dest, csv_text(cfg, ["replicate", "s", "t", "re", "im"], rows))
    log.info("wrote %s", dest)
    return 0


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    only = set(args.only.split(",")) if args.only else None
    result = verify_convergence(cfg, args.threads, only=only, progress=log.info)
    out = Path(cfg.out_dir)
    write_atomic(out / "report.csv", csv_text(cfg, REPORT_FIELDS, result.rows()))
    keys = sorted({k for d in result.diagnostics for k in d})
    write_atomic(out / "diagnostics.csv", csv_text(cfg, keys, ({k: d.get(k, "") for k in keys} for d in result.diagnostics)))
    log.info("%s in %.1f s, fingerprint %s", "all checks pass" if result.passed else "FAILED", result.seconds,
             result.fingerprint())
    for c in result.criteria:
        for r in c.reports:
            if not r.passed:
                log.warning("fail %s:%s estimate=%r target=%r tolerance=%r", c.key, r.name, r.estimate.mean, r.target,
                            r.tolerance)
    return 0 if result.passed else 1


def _spde_rows(label: str, n, values: np.ndarray, probes):
    for r in range(values.shape[0]):
        for p, (t, x) in enumerate(probes):
            yield {"noise": label, "n": n, "replicate": r, "t": t, "x": x, "value": values[r, p]}


def cmd_spde_run(cfg: ExperimentConfig, args) -> int:
    sp = cfg.spde
    heat = cfg.heat_config()
    probes = [tuple(map(float, p)) for p in sp.probes]
    M = args.replicates if args.replicates is not None else sp.replicates
    if args.noise == "white":
        vals = white_noise_marginals(heat, probes, M, RngStream(derive_seed(cfg.seed, "spde", "white")),
                                     args.threads, sp.chunk)
        rows = _spde_rows("white", "", vals, probes)
    else:
        n_list = [args.n] if args.n else sp.kernel_n
        rows = []
        for n in n_list:
            vals = kernel_driven_marginals(heat, kernel_sampler(cfg, n), sp.component, probes, M,
                                           RngStream(derive_seed(cfg.seed, "spde", "kernel", n)), args.threads, sp.chunk)
            rows.extend(_spde_rows(f"kernel{sp.component}", n, vals, probes))
    dest = Path(cfg.out_dir) / f"spde_{args.noise}.csv"
    write_atomic(dest, csv_text(cfg, ["noise", "n", "replicate", "t", "x", "value"], rows))
    log.info("wrote %s", dest)
    return 0


def cmd_spde_compare(cfg: ExperimentConfig, args) -> int:
    sp, tol = cfg.spde, cfg.tolerances
    probes = [tuple(map(float, p)) for p in sp.probes]
    ref = white_reference(cfg, "white", args.threads)
    rows, top = [], []
    for n in sp.kernel_n:
        approx = kernel_marginals(cfg, n, args.threads)
        for cmp in compare_laws(ref, approx, probes):
            reports = cmp.reports(tol.var_ratio, tol.ks_alpha, tol.n_se, name=f"kernel[n={n},i={sp.component}]")
            rows.extend(rep.row() for rep in reports)
            if n == max(sp.kernel_n):
                top.extend(reports)
    ok = all(rep.passed for rep in top)
    dest = Path(cfg.out_dir) / "spde_compare.csv"
    write_atomic(dest, csv_text(cfg, REPORT_FIELDS, rows))
    log.info("wrote %s", dest)
    return 0 if ok else 1


def cmd_emit_plot_data(cfg: ExperimentConfig, args) -> int:
    """Long-format series for external plotting: series,x,y,stderr."""
    from .stat_harness import MCEstimate, covariance_estimate, fourth_moment_ratio

    f = cfg.field
    M = args.replicates if args.replicates is not None else f.replicates
    run = run_field_ensemble(cfg, args.threads, M=M)
    rows = []
    p = (f.S, f.T)
    for eps in sorted(run.values):
        x = run.at(eps, p)
        for part, comp in (("re", x.real), ("im", x.imag)):
            est = covariance_estimate(comp, comp)
            rows.append({"series": f"var_{part}_X({f.S:g},{f.T:g})", "x": eps, "y": est.mean, "stderr": est.stderr})
        for rect in f.fourth_moment_rects:
            est = fourth_moment_ratio(run.increments(eps, rect), tuple(rect))
            rows.append({"series": f"fourth_moment_ratio{tuple(rect)}", "x": eps, "y": est.mean, "stderr": est.stderr})
    if not args.skip_spde:
        probes = [tuple(map(float, q)) for q in cfg.spde.probes]
        ref = white_reference(cfg, "white", args.threads)
        for n in cfg.spde.kernel_n:
            for cmp in compare_laws(ref, kernel_marginals(cfg, n, args.threads), probes):
                tag = f"({cmp.probe[0]:g},{cmp.probe[1]:g})"
                rows.append({"series": f"spde_var_ratio{tag}", "x": n, "y": cmp.var_ratio, "stderr": ""})
                rows.append({"series": f"spde_ks_pvalue{tag}", "x": n, "y": cmp.ks_pvalue, "stderr": ""})
                m: MCEstimate = cmp.mean_approx
                rows.append({"series": f"spde_mean{tag}", "x": n, "y": m.mean, "stderr": m.stderr})
    dest = Path(cfg.out_dir) / "plot_data.csv"
    write_atomic(dest, csv_text(cfg, ["series", "x", "y", "stderr"], rows))
    log.info("wrote %s", dest)
    return 0


def cmd_default_config(cfg: ExperimentConfig, args) -> int:
    dest = Path(cfg.out_dir) / "config.json"
    write_atomic(dest, cfg.to_json())
    log.info("wrote %s", dest)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); the shipped default when omitted")
    common.add_argument("--threads", type=int, default=1, help="worker threads for replicate loops")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="levysheet", description="Levy sheet field approximations and checks")
    parser.add_argument("--version", action="version", version=f"levysheet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate-sheet", parents=[common], help="dump sheet realizations")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--eps", type=float, help="size the grid for this eps (default: field.epsilon)")
    p.set_defaults(func=cmd_simulate_sheet)

    p = sub.add_parser("approx-field", parents=[common], help="sample X_eps at the eval points")
    p.add_argument("--replicates", type=int)
    p.add_argument("--eps", type=float)
    p.set_defaults(func=cmd_approx_field)

    p = sub.add_parser("verify-convergence", parents=[common], help="run the verification suite")
    p.add_argument("--only", help="comma-separated check keys, e.g. C1,C2,C9")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("spde-run", parents=[common], help="heat equation marginals at the probes")
    p.add_argument("--noise", choices=["white", "kernel"], default="white")
    p.add_argument("--n", type=int, help="kernel index n (default: every spde.kernel_n)")
    p.add_argument("--replicates", type=int)
    p.set_defaults(func=cmd_spde_run)

    p = sub.add_parser("spde-compare", parents=[common], help="kernel-driven against white-noise laws")
    p.set_defaults(func=cmd_spde_compare)

    p = sub.add_parser("emit-plot-data", parents=[common], help="long-format CSV of convergence series")
    p.add_argument("--replicates", type=int, help="field ensemble size (default: field.replicates)")
    p.add_argument("--skip-spde", action="store_true")
    p.set_defaults(func=cmd_emit_plot_data)

    p = sub.add_parser("default-config", parents=[common], help="write the effective config as JSON")
    p.set_defaults(func=cmd_default_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg = _load(args)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"levysheet: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(cfg, args)
    except (ValueError, ArithmeticError) as exc:
        print(f"levysheet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
