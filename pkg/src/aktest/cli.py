"""Command-line entry point: ``aktest <subcommand>``.

Exit codes: 0 completed, 2 configuration or input error, 3 a ``--check``
threshold was violated. The default seed comes from ``AKTEST_SEED``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dist
from .dist import DiscretePmf, DistributionError, piece_masses, rng_stream
from .harness import (
    ConfigError,
    ExperimentConfig,
    SweepResult,
    TrialError,
    ReportError,
    calibrate_thresholds,
    read_report,
    render_report,
    run_trials,
    summarize_trials,
    sweep_sample_complexity,
)
from .instances import GenerationTimeout, gen_flat_pair, regime_a_pair, regime_b_pair
from .metrics import ak_distance_bruteforce, ak_distance_discrete, ak_distance_pwc
from .testers import TesterConfig, flat_ak_tester, general_ak_tester, simple_ak_tester

SEED_ENV = "AKTEST_SEED"
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


class CheckFailed(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_config(path: str | None, k: int, eps: float) -> TesterConfig:
    overrides = {}
    if path:
        overrides = json.loads(Path(path).read_text())
        overrides.pop("k", None)
        overrides.pop("epsilon", None)
    try:
        return TesterConfig.from_json({"k": k, "epsilon": eps, **overrides})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad tester configuration: {e}") from None


# ---------------------------------------------------------------- subcommands


def cmd_akdist(args) -> int:
    p, q = dist.load(args.p), dist.load(args.q)
    if isinstance(p, DiscretePmf) != isinstance(q, DiscretePmf):
        raise ConfigError("--p and --q must both be pmfs or both be densities")
    if isinstance(p, DiscretePmf):
        value, cuts = ak_distance_discrete(p, q, args.k, return_cuts=True)
        cuts = [int(c) for c in cuts]
        pm, qm = p, q
    else:
        value, cuts = ak_distance_pwc(p, q, args.k, return_cuts=True)
        _, pm, qm = piece_masses(p, q)
    result = {"k": args.k, "distance": value, "cuts": cuts, "method": "dp"}
    if args.brute:
        result["method"] = "bruteforce"
        result["distance"] = ak_distance_bruteforce(pm, qm, args.k)
    _emit(_dumps(result), args.out)
    return EXIT_OK


def cmd_test(args) -> int:
    p, q = dist.load(args.p), dist.load(args.q)
    cfg = _load_config(args.config, args.k, args.eps)
    rng = rng_stream(args.seed)
    if args.tester == "flat":
        if not (isinstance(p, DiscretePmf) and isinstance(q, DiscretePmf)):
            raise ConfigError("the flat tester takes pmf inputs ({\"masses\": [...]})")
        verdict = flat_ak_tester(p, q, args.k, args.eps, args.delta, rng, cfg)
    else:
        tester = simple_ak_tester if args.tester == "simple" else general_ak_tester
        verdict = tester(p, q, cfg, rng)
    out = verdict.to_json()
    out["config"] = cfg.to_json()
    out["seed"] = args.seed
    _emit(_dumps(out), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    rng = rng_stream(args.seed)
    if args.construction == "regimeA":
        pair = regime_a_pair(args.k, args.eps)
    elif args.construction == "regimeB":
        pair = regime_b_pair(args.k, args.eps, args.null, rng)
    else:
        pair = gen_flat_pair(args.t or args.k, args.eps, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dist.dump(pair.p, out / "p.json")
    dist.dump(pair.q, out / "q.json")
    manifest = pair.to_manifest()
    manifest["seed"] = args.seed
    (out / "manifest.json").write_text(_dumps(manifest))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    base = _load_config(args.config, args.k, args.eps)
    stages = ("z",) if args.z_only else ("z", "l2")
    cfg = calibrate_thresholds(args.k, args.eps, args.trials, args.seed, target=args.target, base=base, stages=stages)
    _emit(_dumps(cfg.to_json()), args.out)
    if args.check:
        achieved = sum(v for key, v in cfg.calibration.items() if key.endswith("_null_reject"))
        if achieved > 0.25:
            raise CheckFailed(f"calibrated type-I error bound {achieved:.3f} exceeds 1/4")
    return EXIT_OK


def _instance_source(args) -> dict:
    if args.p or args.q:
        if not (args.p and args.q):
            raise ConfigError("--p and --q go together")
        return {"construction": "files", "p": args.p, "q": args.q, "k": 2 * args.k + 1}
    src = {"construction": args.construction, "k": args.k, "eps": args.eps}
    if args.construction == "flatpair":
        src = {"construction": "flatpair", "t": args.t or args.k, "eps": args.eps}
    elif args.construction == "identical":
        src = {"construction": "identical", "t": args.t}
    elif args.construction == "regimeB" and args.null is not None:
        src["x_is_null"] = args.null
    return src


def cmd_trial(args) -> int:
    overrides = _load_config(args.config, args.k, args.eps).to_json()
    for key in ("k", "epsilon", "calibration"):
        overrides.pop(key)
    cfg = ExperimentConfig(
        tester=args.tester,
        instance=_instance_source(args),
        k=args.k,
        eps=args.eps,
        trials=args.trials,
        master_seed=args.seed,
        overrides=overrides,
        parallelism=args.parallelism,
        fixed_instance=args.fixed_instance,
    )
    records = run_trials(cfg)
    result = summarize_trials(cfg, records)
    _emit(render_report(result, args.format), args.out)
    if args.check:
        truths = {r.trace["truth"] for r in records}
        rate = result.rows[0].reject_rate
        if truths == {"identical"} and rate > 1 / 3:
            raise CheckFailed(f"rejected identical pairs at rate {rate:.3f} > 1/3")
        if truths == {"far"} and rate < 2 / 3:
            raise CheckFailed(f"rejected far pairs at rate {rate:.3f} < 2/3")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        grid = [int(x) for x in args.k_grid.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad --k-grid {args.k_grid!r}") from None
    result = sweep_sample_complexity(grid, args.eps, args.trials, args.seed, tester=args.tester)
    _emit(render_report(result, args.format), args.out)
    if args.check:
        slope = result.summary.get("slope")
        if slope is None or not args.slope_lo <= slope <= args.slope_hi:
            raise CheckFailed(f"fitted slope {slope} outside [{args.slope_lo}, {args.slope_hi}]")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        result: SweepResult = read_report(args.input)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read results from {args.input}: {e}") from None
    _emit(render_report(result, args.format), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aktest", description="A_k distance and closeness testing tools")
    sub = parser.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")

    def output(sp, formats=False):
        sp.add_argument("--out", default=None, help="output file (default stdout)")
        if formats:
            sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("akdist", help="exact A_k distance between two distributions")
    sp.add_argument("--p", required=True)
    sp.add_argument("--q", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--brute", action="store_true", help="use exhaustive enumeration (n <= 16)")
    output(sp)
    sp.set_defaults(func=cmd_akdist)

    sp = sub.add_parser("test", help="run one tester on two distribution files")
    sp.add_argument("--tester", choices=("simple", "flat", "general"), required=True)
    sp.add_argument("--p", required=True)
    sp.add_argument("--q", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--delta", type=float, default=1 / 3, help="flat tester error budget")
    sp.add_argument("--config", default=None, help="JSON file of tester config overrides")
    seeded(sp)
    output(sp)
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("gen", help="write an instance pair and its manifest")
    sp.add_argument("--construction", choices=("regimeA", "regimeB", "flatpair"), required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--t", type=int, default=None, help="pieces per density for flatpair (default k)")
    sp.add_argument("--null", action="store_true", help="regimeB: generate the p = q branch")
    sp.add_argument("--out", required=True, help="output directory")
    seeded(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("calibrate", help="set thresholds from null simulations")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--target", type=float, default=0.125, help="type-I error per stage")
    sp.add_argument("--z-only", action="store_true", help="calibrate the Z stage only")
    sp.add_argument("--config", default=None)
    sp.add_argument("--check", action="store_true")
    seeded(sp)
    output(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("trial", help="repeated tester runs on an instance source")
    sp.add_argument("--tester", choices=("simple", "flat", "general"), required=True)
    sp.add_argument(
        "--construction", choices=("regimeA", "regimeB", "flatpair", "identical"), default="regimeA"
    )
    sp.add_argument("--p", default=None)
    sp.add_argument("--q", default=None)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--t", type=int, default=None)
    sp.add_argument("--null", action="store_true", default=None, help="regimeB: always the p = q branch")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--parallelism", type=int, default=1)
    sp.add_argument("--fixed-instance", action="store_true", help="build the instance once for all trials")
    sp.add_argument("--config", default=None)
    sp.add_argument("--check", action="store_true")
    seeded(sp)
    output(sp, formats=True)
    sp.set_defaults(func=cmd_trial)

    sp = sub.add_parser("sweep", help="estimate m*(k) and its log-log slope")
    sp.add_argument("--k-grid", default="16,32,64,128")
    sp.add_argument("--eps", type=float, default=0.5)
    sp.add_argument("--trials", type=int, default=400)
    sp.add_argument("--tester", choices=("simple", "general"), default="simple")
    sp.add_argument("--check", action="store_true")
    sp.add_argument("--slope-lo", type=float, default=0.65)
    sp.add_argument("--slope-hi", type=float, default=0.95)
    seeded(sp)
    output(sp, formats=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="re-emit a JSON result file as CSV or JSON")
    sp.add_argument("--in", dest="input", required=True)
    output(sp, formats=True)
    sp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, DistributionError, GenerationTimeout, TrialError, ReportError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
