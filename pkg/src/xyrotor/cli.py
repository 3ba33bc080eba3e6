"""Command-line runner: ``xyrotor <kind> --config FILE [--seed N] [--out DIR]``.

Every experiment writes CSV artifacts plus ``manifest.csv`` into the output
directory.  Everything except the manifest's wall time is a deterministic
function of the canonical config (seed included).
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .circle_kernel import kernel_table, write_kernel_table
from .config import KINDS, ConfigError, ExperimentConfig, emit_config, load_config
from .ground_state import (closed_form_window, scan_degeneracy, sweep_rows, transition_window, write_sweep)
from .lattice import ModelParams
from .mc import (ChainSpec, derive_seed, run_chain, symmetry_breaking_scan, write_scan, write_trace,
                 blocked, selection_angles)
from .probe import badness_scan, bin_probabilities, exact_site_marginal, tv_distance, write_probe

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_UNEQUILIBRATED = 0, 2, 3, 4
THREADS_ENV = "XYROTOR_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def param_sets(cfg: ExperimentConfig, L: int | None = None) -> list[ModelParams]:
    m = cfg["model"]
    return [ModelParams(b, J, h, t, m["d"], L) for b in m["beta"] for J in m["J"] for h in m["h"] for t in m["t"]]


def _csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _f(x) -> str:
    return repr(float(x))


# --- experiments -----------------------------------------------------------------------
# Each takes (cfg, out, threads) and returns (artifact names, any_unequilibrated).


def _kernel_table(cfg, out, threads):
    k = cfg["kernel"]
    write_kernel_table(out / "kernel_table.csv", kernel_table(k["times"], k["n_delta"], k["tol"]))
    return ["kernel_table.csv"], False


def _ground_state(cfg, out, threads):
    m, g = cfg["model"], cfg["ground_state"]
    rows = sweep_rows(m["beta"], m["h"], m["t"], g["grid_n"], g["refine_tol"], g["use_full_log"])
    write_sweep(out / "ground_state.csv", rows)
    return ["ground_state.csv"], False


def _window(cfg, out, threads):
    m, w, g = cfg["model"], cfg["window"], cfg["ground_state"]
    scan_rows, win_rows = [], []
    for beta in m["beta"]:
        for h in m["h"]:
            scan = scan_degeneracy(beta, h, w["t_start"], w["t_stop"], w["step"], g["use_full_log"])
            scan_rows += [[_f(beta), _f(h), _f(t), int(f)] for t, f in zip(*scan)]
            win = transition_window(beta, h, w["t_start"], w["t_stop"], w["step"], w["refine"],
                                    g["use_full_log"], scan=scan)
            cf = closed_form_window(beta * h, w["t_start"], w["t_stop"])
            ends = [win.t0, win.t1] if win else ["", ""]
            cf_ends = [cf.t0, cf.t1] if cf else ["", ""]
            win_rows.append([_f(beta), _f(h), int(win is not None)]
                            + [_f(e) if e != "" else "" for e in ends + cf_ends])
    _csv(out / "window_scan.csv", ["beta", "h", "t", "degenerate"], scan_rows)
    _csv(out / "window.csv", ["beta", "h", "found", "t0", "t1", "closed_form_t0", "closed_form_t1"], win_rows)
    return ["window_scan.csv", "window.csv"], False


def _mc_scan(cfg, out, threads):
    c = cfg["chain"]
    rows = symmetry_breaking_scan(param_sets(cfg), cfg["model"]["L"], mode=c["mode"], sweeps=c["sweeps"],
                                  burn_in=c["burn_in"], proposal_width=c["proposal_width"], seed=cfg.seed,
                                  threads=threads, err_threshold=c["err_threshold"], parallel=c["parallel"])
    write_scan(out / "mc_scan.csv", rows)
    names = ["mc_scan.csv"]
    if c["traces"]:
        names += _traces(cfg, out)
    return names, any(r.flag != "ok" for r in rows)


def _traces(cfg, out):
    """Re-run each scan chain (same seeds) and keep its full trace."""
    from .mc import scan_cells

    c = cfg["chain"]
    names = []
    cells = scan_cells(param_sets(cfg), cfg["model"]["L"])
    for k, (beta, h, t, L, side, p) in enumerate(cells):
        right, left, _ = selection_angles(p.beta_h, p.t)
        spec = ChainSpec(ModelParams(p.beta, p.J, p.h, p.t, p.d, L), mode=c["mode"], boundary="fixed",
                         boundary_angle=right if side == "right" else left, sweeps=c["sweeps"],
                         burn_in=c["burn_in"], proposal_width=c["proposal_width"], seed=derive_seed(cfg.seed, k),
                         parallel=c["parallel"])
        name = f"trace_{k:04d}.csv"
        write_trace(out / name, run_chain(spec), c["burn_in"])
        names.append(name)
    return names


def _probe(cfg, out, threads):
    c, pr = cfg["chain"], cfg["probe"]
    rows = badness_scan(param_sets(cfg), pr["r_in"], d=cfg["model"]["d"], sweeps=c["sweeps"],
                        burn_in=c["burn_in"], seed=cfg.seed, threads=threads, mode=c["mode"],
                        annulus=pr["annulus"], err_threshold=c["err_threshold"])
    write_probe(out / "probe.csv", rows)
    return ["probe.csv"], any(r.flag != "ok" for r in rows)


ORACLE_HEADER = ["beta", "J", "h", "t", "d", "L", "mode", "boundary", "site", "tv", "n_samples", "flag"]


def _oracle_check(cfg, out, threads):
    c, o, m = cfg["chain"], cfg["oracle"], cfg["model"]
    rows, bad, k = [], False, 0
    for L in m["L"]:
        for p in param_sets(cfg, L):
            shape = (L,) if p.d == 1 else (L, 2)
            params = ModelParams(p.beta, p.J, p.h, p.t, len(shape), None)
            spec = ChainSpec(params, mode=c["mode"], boundary=o["boundary"],
                             boundary_angle=o["boundary_angle"] if o["boundary"] == "fixed" else None,
                             sweeps=c["sweeps"], burn_in=c["burn_in"], proposal_width=c["proposal_width"],
                             seed=derive_seed(cfg.seed, k), order=c["order"], shape=shape)
            k += 1
            tr = run_chain(spec)
            site = int(np.ravel_multi_index(tuple(s // 2 for s in shape), shape))
            exact = bin_probabilities(exact_site_marginal(spec, site, o["n_bins"]), spec.hist_bins)
            tv = tv_distance(tr.center_hist / tr.center_hist.sum(), exact)
            ok = blocked(np.sin(tr.center_angle)).equilibrated
            bad |= not ok
            rows.append([_f(p.beta), _f(p.J), _f(p.h), _f(p.t), len(shape), L, c["mode"], o["boundary"], site,
                         _f(tv), len(tr), "ok" if ok else "unequilibrated"])
    _csv(out / "oracle_check.csv", ORACLE_HEADER, rows)
    return ["oracle_check.csv"], bad


EXPERIMENTS = {
    "kernel-table": _kernel_table,
    "ground-state-sweep": _ground_state,
    "window": _window,
    "mc-scan": _mc_scan,
    "probe": _probe,
    "oracle-check": _oracle_check,
}


def plan(cfg: ExperimentConfig) -> list[str]:
    """Human-readable list of what :func:`run` would do."""
    m, c = cfg["model"], cfg["chain"]
    n_par = len(m["beta"]) * len(m["J"]) * len(m["h"]) * len(m["t"])
    lines = [f"experiment {cfg.kind}, seed {cfg.seed}, config {cfg.digest()[:12]}"]
    if cfg.kind == "kernel-table":
        lines.append(f"{len(cfg['kernel']['times'])} times x {cfg['kernel']['n_delta']} angle offsets")
    elif cfg.kind in ("ground-state-sweep", "window"):
        n = len(m["beta"]) * len(m["h"]) * (len(m["t"]) if cfg.kind == "ground-state-sweep" else 1)
        lines.append(f"{n} cells")
    else:
        sizes = cfg["probe"]["r_in"] if cfg.kind == "probe" else m["L"]
        per = 2 if cfg.kind != "oracle-check" else 1
        lines.append(f"{n_par * len(sizes) * per} chains of {c['sweeps']} sweeps "
                     f"({c['burn_in']} burn-in, mode {c['mode']})")
    return lines


def _manifest(out: Path, cfg: ExperimentConfig, artifacts, wall: float, status: str, error: str = "") -> None:
    rows = [
        ("kind", cfg.kind),
        ("config_sha256", cfg.digest()),
        ("seed", cfg.seed),
        ("xyrotor", __version__),
        ("python", platform.python_version()),
        ("numpy", np.__version__),
        ("scipy", scipy.__version__),
        ("numba", numba.__version__),
        ("artifacts", ";".join(artifacts)),
        ("status", status),
        ("error", error),
        ("wall_time_s", f"{wall:.3f}"),
    ]
    _csv(out / "manifest.csv", ["key", "value"], rows)


def run(cfg: ExperimentConfig, out: str | Path | None = None, threads: int | None = None) -> int:
    """Execute one experiment; returns the process exit code."""
    out = Path(out if out is not None else cfg["experiment"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or default_threads()
    (out / "config.ini").write_text(emit_config(cfg))
    t0 = time.perf_counter()
    try:
        artifacts, unequilibrated = EXPERIMENTS[cfg.kind](cfg, out, threads)
    except Exception as exc:  # report, mark incomplete, map to the runtime exit code
        present = sorted(p.name for p in out.glob("*.csv") if p.name != "manifest.csv")
        _manifest(out, cfg, present, time.perf_counter() - t0, "incomplete", f"{type(exc).__name__}: {exc}")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _manifest(out, cfg, artifacts, time.perf_counter() - t0, "complete")
    if unequilibrated:
        print("warning: unequilibrated results present", file=sys.stderr)
        return EXIT_UNEQUILIBRATED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xyrotor", description="XY rotors under infinite-temperature diffusion")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", required=True, type=Path, help="experiment config file")
        sp.add_argument("--seed", type=int, help="override the config's master seed")
        sp.add_argument("--out", type=Path, help="output directory (default: experiment.out)")
        sp.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
        sp.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: invalid config", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.kind != args.kind:
        print(f"{args.config}: config is for {cfg.kind!r}, not {args.kind!r}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if args.seed < 0:
            print("--seed must be >= 0", file=sys.stderr)
            return EXIT_CONFIG
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        print("\n".join(plan(cfg)))
        return EXIT_OK
    return run(cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
