"""Command-line entry point: ``mfmap {simulate,train,score,sample,benchmark}``.

Exit codes: 0 success, 2 usage error, 3 invalid data or configuration,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import simdata
from .baselines import IndependentGaussian, fit_independent_gaussian
from .errors import DataValidationError, NumericalError
from .model import DEFAULT_EPSILON, DEFAULT_G, RHO_FAMILIES, ModelSettings, checkpoint_from_dict
from .ordering import write_ordering_csv
from .predict import ScoreResult, log_score, sample_conditional, sample_joint, write_scores_csv
from .spatial import Ensemble, format_float, load_ensemble, load_locations, write_ensemble, write_locations
from .train import TrainConfig, build_map, fit, write_trace_csv

log = logging.getLogger("mfmap")

MODELS = ("mfbtm", "linear", "indep")
EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_threads():
    env = os.environ.get("MFMAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fidelity_paths(out: Path, stem: str, R: int) -> list:
    return [out / f"{stem}_f{r + 1}.csv" for r in range(R)]


# ---------------------------------------------------------------- parser

def _add_model_flags(p):
    p.add_argument("--model", choices=MODELS, default="mfbtm")
    p.add_argument("--epochs", type=_positive_int, default=200)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--learning-rate", type=float, default=0.03)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--patience", type=_positive_int, default=10)
    p.add_argument("--gradient", choices=("analytic", "fd"), default="analytic")
    p.add_argument("--family", choices=RHO_FAMILIES, default="matern32")
    p.add_argument("--g", type=float, default=DEFAULT_G)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--m-max", type=_positive_int, default=30)
    p.add_argument("--mp-max", type=_positive_int, default=30)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads across fidelities (default: $MFMAP_THREADS or CPU count)")


def _add_scenario_flags(p):
    p.add_argument("--scenario", choices=simdata.SCENARIOS, required=True)
    p.add_argument("--grids", type=_int_list, default=None, help="grid sides, coarsest first, e.g. 5,10,30")
    p.add_argument("--range", dest="gp_range", type=float, default=0.3)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--frequency", type=float, default=4.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfmap", description="Multi-fidelity Bayesian transport maps.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    _add_scenario_flags(p)
    p.add_argument("--n-train", type=_positive_int, required=True)
    p.add_argument("--n-test", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="fit a model to an ensemble")
    p.add_argument("--locations", type=Path, required=True)
    p.add_argument("--train", type=Path, nargs="+", required=True, help="one ensemble CSV per fidelity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _add_model_flags(p)

    p = sub.add_parser("score", help="negative log-scores of test replicates")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--test", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sample", help="joint or conditional samples")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--given-fidelities", type=_positive_int, default=None)
    p.add_argument("--given-file", type=Path, nargs="+", default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("benchmark", help="compare models over training sizes")
    _add_scenario_flags(p)
    p.add_argument("--n-list", type=_int_list, default=[10, 25, 50])
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--n-test", type=_positive_int, default=50)
    p.add_argument("--models", type=lambda s: s.split(","), default=list(MODELS))
    p.add_argument("--out", type=Path, required=True)
    _add_model_flags(p)

    for action in sub.choices.values():
        action.add_argument("--config", type=Path, default=None, help="JSON file of flag defaults")
    return parser


def _config_target(argv):
    """``(command, config path)`` read ahead of full parsing, or ``None``."""
    command = next((a for a in argv if not a.startswith("-")), None)
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return command, argv[i + 1]
        if a.startswith("--config="):
            return command, a.split("=", 1)[1]
    return None


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    target = _config_target(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if target is not None and target[0] in subparsers:
        command, path = target
        sub = subparsers[command]
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {path}: {exc}")
        if not isinstance(cfg, dict):
            parser.error(f"config {path} must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        known = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for a in sub._actions:
            if a.dest in cfg:
                a.required = False
                if a.type is Path and cfg[a.dest] is not None:
                    v = cfg[a.dest]
                    cfg[a.dest] = [Path(x) for x in v] if a.nargs == "+" else Path(v)
        sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def _settings(args) -> ModelSettings:
    return ModelSettings(g=args.g, epsilon=args.epsilon, family=args.family,
                         nonlinear=args.model == "mfbtm", m_max=args.m_max, mp_max=args.mp_max)


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate,
                       tolerance=args.tolerance, patience=args.patience, gradient=args.gradient, seed=seed,
                       threads=args.threads or _default_threads())


def _generator_spec(args) -> simdata.GeneratorSpec:
    base = simdata.GeneratorSpec.default(args.scenario)
    return simdata.GeneratorSpec(
        scenario=args.scenario,
        grids=tuple(args.grids) if args.grids else base.grids,
        range_=args.gp_range,
        amplitude=base.amplitude if args.amplitude is None else args.amplitude,
        frequency=args.frequency,
        m=base.m,
    )


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    spec = _generator_spec(args)
    sc = simdata.gen_scenario(spec, args.n_train, args.n_test, args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_locations(out / "locations.csv", sc.locs)
    write_ensemble(_fidelity_paths(out, "train", sc.locs.R), sc.train)
    write_ensemble(_fidelity_paths(out, "test", sc.locs.R), sc.test)
    truth = -sc.truth_logpdf(sc.test)
    with (out / "truth_scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "neg_log_density"])
        for j, v in enumerate(truth):
            w.writerow([j + 1, format_float(v)])
    _dump_json(out / "provenance.json", {
        "generator": json.loads(spec.to_json()),
        "seed": args.seed,
        "n_train": args.n_train,
        "n_test": args.n_test,
        "sizes": list(sc.locs.sizes),
        "shifts": [float(s) for s in sc.shifts],
        "truth_mean_neg_log_density": float(np.mean(truth)),
    })
    log.info("wrote scenario %s to %s", spec.scenario, out)


def _independent_checkpoint(model: IndependentGaussian, **extra) -> dict:
    return {
        "version": 1,
        "model": "indep",
        "R": model.R,
        "means": [[float(v) for v in m] for m in model.means],
        "variances": [[float(v) for v in s] for s in model.variances],
        **extra,
    }


def cmd_train(args):
    locs = load_locations(args.locations)
    train = load_ensemble(args.train, locs)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    data = {"locations": str(args.locations), "train": [str(p) for p in args.train]}
    if args.model == "indep":
        model = fit_independent_gaussian(train)
        _dump_json(out / "checkpoint.json", _independent_checkpoint(model, data=data))
        return
    tmap = fit(train, locs, _train_config(args, args.seed), _settings(args))
    _dump_json(out / "checkpoint.json", tmap.checkpoint(data=data))
    write_trace_csv(out / "trace.csv", tmap)
    write_ordering_csv(out / "ordering.csv", tmap.ordering)
    log.info("final objectives %s", tmap.final_objectives)


def load_checkpoint(path):
    """Rebuild a scorer/sampler from a checkpoint written by ``train``."""
    try:
        ck = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid JSON ({exc})") from None
    if ck.get("model") == "indep":
        return IndependentGaussian(tuple(np.array(m) for m in ck["means"]),
                                   tuple(np.array(v) for v in ck["variances"]))
    hp, settings = checkpoint_from_dict(ck)
    data = ck.get("data")
    if not data:
        raise DataValidationError(f"{path}: checkpoint does not reference its training data")
    locs = load_locations(data["locations"])
    train = load_ensemble(data["train"], locs)
    return build_map(hp, locs, train, settings)


def cmd_score(args):
    model = load_checkpoint(args.checkpoint)
    test = load_ensemble(args.test)
    result = model.log_score(test)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(out / "scores.csv", result)
    _dump_json(out / "summary.json", {
        "n_test": int(test.n),
        "mean_neg_log_score": result.mean,
        "fidelity_means": [float(v) for v in result.fidelity_means],
        "per_replicate": [float(v) for v in result.per_replicate],
    })


def cmd_sample(args):
    model = load_checkpoint(args.checkpoint)
    if isinstance(model, IndependentGaussian):
        raise DataValidationError("sampling is available for transport-map checkpoints only")
    if (args.given_fidelities is None) != (args.given_file is None):
        raise DataValidationError("--given-fidelities and --given-file must be used together")
    if args.given_fidelities is None:
        ens = sample_joint(model, args.count, args.seed)
    else:
        if len(args.given_file) != args.given_fidelities:
            raise DataValidationError(
                f"--given-fidelities {args.given_fidelities} needs that many --given-file paths")
        given = load_ensemble(args.given_file)
        ens = sample_conditional(model, given, args.count, args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_ensemble(_fidelity_paths(out, "sample", ens.R), ens)


def _fit_and_score(kind, train, test, locs, args, seed) -> ScoreResult:
    if kind == "indep":
        return fit_independent_gaussian(train).log_score(test)
    args_model = argparse.Namespace(**{**vars(args), "model": kind})
    tmap = fit(train, locs, _train_config(args, seed), _settings(args_model))
    return log_score(tmap, test)


def cmd_benchmark(args):
    bad = [m for m in args.models if m not in MODELS]
    if bad:
        raise DataValidationError(f"unknown models {bad}; choose from {MODELS}")
    if not args.n_list or min(args.n_list) < 2:
        raise DataValidationError("--n-list entries must be at least 2")
    spec = _generator_spec(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        sc = simdata.gen_scenario(spec, max(args.n_list), args.n_test, seed)
        truth = float(np.mean(-sc.truth_logpdf(sc.test)))
        for n in args.n_list:
            train = sc.train.subset(np.arange(n))
            for kind in args.models:
                score = _fit_and_score(kind, train, sc.test, sc.locs, args, seed)
                rows.append((spec.scenario, kind, n, seed, score.mean))
                log.info("%s n=%d seed=%d: %.3f", kind, n, seed, score.mean)
            rows.append((spec.scenario, "truth", n, seed, truth))
    with (out / "benchmark.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "model", "n", "seed", "mean_neg_log_score"])
        for s, m, n, seed, v in rows:
            w.writerow([s, m, n, seed, format_float(v)])
    (out / "benchmark.svg").write_text(render_svg(rows, spec.scenario))


_COLORS = {"mfbtm": "#1b6ca8", "linear": "#e08a00", "indep": "#3a9a3a", "truth": "#555555"}


def render_svg(rows, title: str, width: int = 640, height: int = 420) -> str:
    """Line chart of the seed-averaged score against ``n``, one line per model."""
    series = {}
    for _, model, n, _, v in rows:
        series.setdefault(model, {}).setdefault(n, []).append(v)
    means = {m: sorted((n, float(np.mean(v))) for n, v in pts.items()) for m, pts in series.items()}
    ns = sorted({n for pts in means.values() for n, _ in pts})
    vals = [v for pts in means.values() for _, v in pts]
    left, right, top, bottom = 70, 130, 40, 50
    lo, hi = min(vals), max(vals)
    if hi == lo:
        hi = lo + 1.0
    nlo, nhi = ns[0], ns[-1] if ns[-1] != ns[0] else ns[0] + 1

    def px(n):
        return left + (n - nlo) / (nhi - nlo) * (width - left - right)

    def py(v):
        return height - bottom - (v - lo) / (hi - lo) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{(left + width - right) / 2:.1f}" y="{height - 12}" text-anchor="middle">n</text>',
        f'<text x="16" y="{(top + height - bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + height - bottom) / 2:.1f})">mean negative log-score</text>',
    ]
    for n in ns:
        parts.append(f'<text x="{px(n):.1f}" y="{height - bottom + 16}" text-anchor="middle">{n}</text>')
    for k in range(5):
        v = lo + k * (hi - lo) / 4
        parts.append(f'<text x="{left - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    for i, (model, pts) in enumerate(sorted(means.items())):
        color = _COLORS.get(model, "#000000")
        dash = ' stroke-dasharray="5,4"' if model == "truth" else ""
        coords = " ".join(f"{px(n):.1f},{py(v):.1f}" for n, v in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{coords}"/>')
        for n, v in pts:
            parts.append(f'<circle cx="{px(n):.1f}" cy="{py(v):.1f}" r="3" fill="{color}"/>')
        ly = top + 16 * i
        parts.append(f'<line x1="{width - right + 12}" y1="{ly}" x2="{width - right + 32}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"{dash}/>')
        parts.append(f'<text x="{width - right + 38}" y="{ly + 4}">{model}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "score": cmd_score,
    "sample": cmd_sample,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except DataValidationError as exc:
        print(f"mfmap: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mfmap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, KeyError) as exc:
        print(f"mfmap: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0
