"""Command-line pipeline: generate -> forward / sample -> reconstruct -> analyze / intensity.

Exit codes: 0 success, 2 invalid input, 3 I/O failure, 4 numerical degeneracy.
Every written file gets a ``<file>.manifest.json`` next to it.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
import warnings

from . import __version__
from .detection import CoincidenceDistribution, DetectionChain, forward_map
from .em import EMConfig, EMResult, reconstruct
from .errors import DomainError, NumericalError, UndefinedStatisticError
from .intensity import CancellationWarning, grid_scan, negativity_report
from .io import RunManifest, manifest_path, read_artifact, write_artifact
from .pnd import (
    JointPND,
    covariance,
    diff_distribution,
    make_gaussian_pairs,
    make_poisson_pairs,
    marginals,
    product_distribution,
    s_coefficient,
    sum_distribution,
)
from .sampler import SimulationConfig, simulate_detailed

log = logging.getLogger("twinbeam")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4


def _add_chain_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detection chain (per arm)")
    for arm in ("s", "i"):
        name = "signal" if arm == "s" else "idler"
        g.add_argument(f"--t-eta-{arm}", type=float, default=0.03,
                       help=f"overall {name} detection efficiency T*eta (default 0.03)")
        g.add_argument(f"--noise-{arm}", type=float, default=0.1,
                       help=f"{name} mean noise count D, infinite-pixel mode (default 0.1)")
        g.add_argument(f"--pixels-{arm}", type=int, default=None,
                       help=f"{name} detector count N; selects the finite-pixel model")
        g.add_argument(f"--dark-{arm}", type=float, default=0.0,
                       help=f"{name} per-detector dark-count probability d (finite mode)")


def _chain(args, arm: str) -> DetectionChain:
    t_eta = getattr(args, f"t_eta_{arm}")
    pixels = getattr(args, f"pixels_{arm}")
    if pixels is None:
        return DetectionChain(t_eta, None, getattr(args, f"noise_{arm}"))
    return DetectionChain(t_eta, pixels, getattr(args, f"dark_{arm}"))


def _load(path, *kinds):
    obj = read_artifact(path)
    if kinds and not isinstance(obj, kinds):
        names = ", ".join(k.__name__ for k in kinds)
        raise DomainError(f"{path}: expected {names}, found {type(obj).__name__}")
    return obj


def _as_pnd(obj) -> JointPND:
    return obj.rho if isinstance(obj, EMResult) else obj


def _finish(manifest: RunManifest, outputs, started: float) -> None:
    for out in outputs:
        manifest.add_output(out)
    manifest.wall_time_s = time.perf_counter() - started
    for out in outputs:
        manifest.write(manifest_path(out))


def cmd_generate(args) -> int:
    maker = {"poisson": make_poisson_pairs, "gaussian": make_gaussian_pairs}[args.model]
    pnd = maker(args.mu, args.eps)
    write_artifact(pnd, args.out)
    print(f"{args.model} pairs, mu={args.mu}: n_max={pnd.n_max_s}, tail={pnd.tail_mass:.3e}")
    return EXIT_OK


def cmd_forward(args) -> int:
    pnd = _as_pnd(_load(args.pnd, JointPND, EMResult))
    c_max = None if args.c_max is None else (args.c_max, args.c_max)
    f = forward_map(pnd, _chain(args, "s"), _chain(args, "i"), c_max)
    write_artifact(f, args.out)
    print(f"histogram {f.c_max_s + 1}x{f.c_max_i + 1}, mass {f.freqs.sum():.12f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    pnd = _as_pnd(_load(args.pnd, JointPND, EMResult))
    cfg = SimulationConfig(pnd, _chain(args, "s"), _chain(args, "i"), args.shots, args.seed)
    result = simulate_detailed(cfg, args.workers)
    write_artifact(result.histogram, args.out)
    f = result.histogram
    print(f"{args.shots} shots -> histogram {f.c_max_s + 1}x{f.c_max_i + 1}"
          f" ({result.tail_draws} draws from the truncation tail)")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    f = _load(args.hist, CoincidenceDistribution)
    init = "uniform" if args.init is None else _as_pnd(_load(args.init, JointPND, EMResult))
    cfg = EMConfig(args.n_max_s, args.n_max_i, args.max_iterations, args.stop_tolerance, init)
    result = reconstruct(f, _chain(args, "s"), _chain(args, "i"), cfg)
    write_artifact(result, args.out)
    kl = result.kl_trace[-1] if result.kl_trace.size else float("nan")
    print(f"{result.iterations_run} iterations, converged={result.converged}, KL={kl:.6e}")
    try:
        print(f"covariance of reconstruction: {covariance(result.rho):.6f}")
    except UndefinedStatisticError as exc:
        print(f"covariance of reconstruction: undefined ({exc})")
    return EXIT_OK


def _fmt(fn, *a) -> str:
    try:
        return f"{fn(*a):.6f}"
    except UndefinedStatisticError:
        return "undefined"


def _at(m, k) -> str:
    idx = k + m.offset
    return repr(float(m.probs[idx])) if 0 <= idx < m.probs.size else "0.0"


def _analyze_joint(pnd: JointPND, label: str, csv_path) -> None:
    m_s, m_i = marginals(pnd)
    minus, plus = diff_distribution(pnd), sum_distribution(pnd)
    indep = product_distribution(m_s, m_i)
    minus_ind, plus_ind = diff_distribution(indep), sum_distribution(indep)
    rows = [
        (f"C_{label}", _fmt(covariance, pnd)),
        (f"S_{label},S", _fmt(s_coefficient, m_s)),
        (f"S_{label},I", _fmt(s_coefficient, m_i)),
        (f"S_{label},+", _fmt(s_coefficient, plus)),
        ("<n_S>", f"{m_s.mean():.6f}"),
        ("<n_I>", f"{m_i.mean():.6f}"),
        ("Var(n_S - n_I)", f"{minus.variance():.6f}"),
        ("Var(n_S - n_I) indep", f"{minus_ind.variance():.6f}"),
        ("Var(n_S + n_I)", f"{plus.variance():.6f}"),
        ("Var(n_S + n_I) indep", f"{plus_ind.variance():.6f}"),
    ]
    width = max(len(k) for k, _ in rows)
    for key, val in rows:
        print(f"{key:<{width}}  {val}")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "rho_minus", "rho_minus_indep", "rho_plus", "rho_plus_indep"])
            for n in range(-minus.offset, plus.probs.size):
                writer.writerow([n, _at(minus, n), _at(minus_ind, n), _at(plus, n), _at(plus_ind, n)])


def cmd_analyze(args) -> int:
    obj = read_artifact(args.file)
    if isinstance(obj, CoincidenceDistribution):
        probs = obj.probabilities()
        if obj.shots is not None:
            print(f"empirical histogram, {obj.shots} shots")
        _analyze_joint(JointPND(probs / probs.sum()), "f", args.csv)
    elif isinstance(obj, (JointPND, EMResult)):
        if isinstance(obj, EMResult):
            print(f"EM result: {obj.iterations_run} iterations, converged={obj.converged}")
        label = "rho" if isinstance(obj, EMResult) else "p"
        _analyze_joint(_as_pnd(obj), label, args.csv)
    else:
        raise DomainError("analyze expects a joint distribution, histogram or EM result")
    return EXIT_OK


def cmd_intensity(args) -> int:
    pnd = _as_pnd(_load(args.pnd, JointPND, EMResult))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        grid = grid_scan(pnd, args.s, args.w_max, args.points)
    write_artifact(grid, args.out)
    if args.csv:
        grid.to_csv(args.csv)
    rep = negativity_report(grid)
    print(f"s={grid.s}: min P = {rep.min_value:.6e} at (W_S, W_I) = "
          f"({rep.min_location[0]:.4g}, {rep.min_location[1]:.4g}); "
          f"negative fraction = {rep.negative_fraction:.6f}")
    if grid.cancellation_points:
        print(f"{grid.cancellation_points} points lost more than 8 digits to cancellation")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinbeam", description="Twin-beam photon statistics pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a model joint photon-number distribution")
    p.add_argument("--model", choices=("poisson", "gaussian"), required=True)
    p.add_argument("--mu", type=float, required=True, help="mean number of pairs")
    p.add_argument("--eps", type=float, default=1e-12, help="truncation tolerance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("forward", help="analytic detected histogram")
    p.add_argument("--pnd", required=True)
    _add_chain_args(p)
    p.add_argument("--c-max", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("sample", help="Monte Carlo detected histogram")
    p.add_argument("--pnd", required=True)
    _add_chain_args(p)
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: $TWINBEAM_THREADS or 1)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reconstruct", help="EM reconstruction from a histogram")
    p.add_argument("--hist", required=True)
    _add_chain_args(p)
    p.add_argument("--n-max-s", type=int, default=None)
    p.add_argument("--n-max-i", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--stop-tolerance", type=float, default=1e-9)
    p.add_argument("--init", default=None, help="starting distribution (default uniform)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("analyze", help="print covariance and S coefficients")
    p.add_argument("file")
    p.add_argument("--csv", default=None, help="write difference/sum distributions")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("intensity", help="integrated-intensity quasi-distribution grid")
    p.add_argument("--pnd", required=True)
    p.add_argument("--s", type=float, default=0.0, help="ordering parameter in [-1, 1)")
    p.add_argument("--w-max", type=float, default=None)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_intensity)
    return parser


_INPUT_ARGS = ("pnd", "hist", "init", "file")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    params = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    manifest = RunManifest(args.command, params, seed=getattr(args, "seed", None))
    try:
        for key in _INPUT_ARGS:
            path = getattr(args, key, None)
            if path is not None:
                manifest.add_input(path)
        code = args.func(args)
        outputs = [p for p in (getattr(args, k, None) for k in ("out", "csv")) if p is not None]
        if outputs:
            _finish(manifest, outputs, started)
        return code
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
