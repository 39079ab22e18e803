"""Command-line interface: ``fit``, ``predict``, ``simulate`` and ``benchmark``.

Exit status: 0 success, 2 usage, 3 input data, 4 numerical or fit failure,
5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .baseline import BASES, TRANSFORMS
from .bayes import update_posterior
from .exceptions import DegradationError, DomainError, FitError, ModelFormatError, SignalError
from .fpca import FitConfig, FpcaModel, dumps, fit_model
from .rld import RldQuery, predict_residual_life
from .signals import HEADER, DegradationSignal, FailureSpec, load_ensemble, write_ensemble
from .simulation import (
    DISTRIBUTIONS,
    METHODS,
    SAMPLINGS,
    SCENARIOS,
    ExperimentConfig,
    run_experiment,
    simulate_signal,
    training_ensemble,
)

DEFAULT_SEED = 0

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_FIT, EXIT_INTERNAL = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


@contextmanager
def _open_out(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _k_rule(args) -> dict:
    if args.num_components:
        if args.k_rule not in (None, "fixed"):
            raise UsageError("--num-components needs --k-rule fixed (or no --k-rule)")
        return dict(k_rule="fixed", num_components=args.num_components)
    if args.k_rule == "fixed":
        raise UsageError("--k-rule fixed needs --num-components")
    return dict(k_rule=args.k_rule) if args.k_rule else {}


def _fit_config(args) -> FitConfig:
    return FitConfig(
        grid_size=args.grid_size,
        mean_bandwidth=args.mean_bandwidth,
        cov_bandwidth=args.cov_bandwidth,
        **_k_rule(args),
        fve_threshold=args.fve,
        aic_likelihood=args.aic_likelihood,
        noise_method=args.noise_method,
        seed=args.seed,
    )


def cmd_fit(args) -> int:
    if args.horizon is None:
        raise UsageError("fit needs --horizon")
    ensemble = load_ensemble(args.input, args.horizon, args.delimiter)
    if args.threshold is not None:
        ensemble = ensemble.censored(FailureSpec(args.threshold, args.horizon),
                                     include_post_failure=args.include_post_failure)
    model = fit_model(ensemble, _fit_config(args))
    text = model.to_json() + "\n"
    if args.output in (None, "-"):
        sys.stdout.write(text)
        return EXIT_OK
    with open(args.output, "w") as fh:
        fh.write(text)
    report = {k: model.metadata.get(k) for k in (
        "n_signals", "n_observations", "mean_bandwidth", "cov_bandwidth",
        "num_components", "noise_variance", "eigenvalue_spectrum")}
    sys.stdout.write(dumps(report) + "\n")
    return EXIT_OK


def _read_model(path: str) -> FpcaModel:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path!r}: {exc.strerror}") from None
    return FpcaModel.from_json(text)


def _prediction_signals(path: Optional[str], horizon: float, delimiter: str) -> List[DegradationSignal]:
    """Signals to predict; a missing or header-only file means one unit with
    no observations."""
    if path is None:
        return [DegradationSignal("0", [], [])]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if rows and not body:
        return [DegradationSignal("0", [], [])]
    with open(path, newline="") as fh:
        try:
            ens = load_ensemble(fh, horizon, delimiter)
        except SignalError as exc:
            if "outside [0," in str(exc):
                raise DomainError(str(exc)) from None
            raise
    return list(ens)


def cmd_predict(args) -> int:
    if args.model is None or args.threshold is None:
        raise UsageError("predict needs --model and --threshold")
    model = _read_model(args.model)
    signals = _prediction_signals(args.input, model.horizon, args.delimiter)
    reports = []
    for k, sig in enumerate(signals):
        t_star = args.t_star if args.t_star is not None else (
            float(sig.times[-1]) if len(sig) else 0.0)
        state = update_posterior(model, sig.truncate(t_star), t_star)
        query = RldQuery(args.threshold, t_star, model.horizon, args.alpha, args.bootstrap,
                         (args.seed, k))
        result = predict_residual_life(state, query, args.point_rule)
        doc = {"signal_id": sig.id}
        doc.update(result.to_dict())
        reports.append(doc)
    with _open_out(args.output) as fh:
        if args.format == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("signal_id", "t_star", "D", "point_estimate", "ci_lower", "ci_upper",
                        "alpha", "B", "censored_count"))
            for d in reports:
                w.writerow((d["signal_id"], repr(d["t_star"]), repr(d["D"]),
                            repr(d["point_estimate"]), repr(d["ci"][0]), repr(d["ci"][1]),
                            repr(d["alpha"]), d["B"], d["censored_count"]))
        else:
            fh.write(dumps(reports[0] if len(reports) == 1 else reports) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig(model_id=args.model, n_train=args.n, scenario=args.scenario,
                           sampling=args.sampling, ratio=args.ratio, m_sparse=args.m_sparse,
                           score_dist=args.score_dist, error_dist=args.error_dist,
                           replications=1, seed=args.seed)
    rng = np.random.default_rng([args.seed])
    if args.scenario == "complete" and not args.stop:
        spec = cfg.spec
        ens = [simulate_signal(spec, rng, None, args.score_dist, args.error_dist,
                               signal_id=f"s{i}").signal for i in range(args.n)]
    else:
        ens = training_ensemble(cfg, rng)
    with _open_out(args.output) as fh:
        write_ensemble(ens, fh)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    fit_args = dict(grid_size=args.grid_size, seed=args.seed, noise_method=args.noise_method,
                    aic_likelihood=args.aic_likelihood)
    fit_args.update(_k_rule(args))
    defaults = ExperimentConfig()
    cfg = ExperimentConfig(
        model_id=args.model,
        scenario=args.scenario,
        sampling=args.sampling,
        ratio=args.ratio if args.ratio is not None else defaults.ratio,
        replications=args.replications,
        n_train=args.n_train,
        n_valid=args.n_valid,
        seed=args.seed,
        alpha=args.alpha,
        n_bootstrap=args.bootstrap,
        point_rule=args.point_rule,
        methods=methods,
        fit=FitConfig(**fit_args),
        baseline_basis=args.baseline_basis,
        baseline_transform=args.baseline_transform,
        score_dist=args.score_dist,
        error_dist=args.error_dist,
        validation_sampling=args.validation_sampling,
        actual_life=args.actual_life,
    )
    result = run_experiment(cfg, threads=args.threads)
    with _open_out(args.output) as fh:
        result.write_table(fh, args.format)
    if args.manifest:
        with open(args.manifest, "w") as fh:
            fh.write(dumps(result.manifest()) + "\n")
    return EXIT_OK


def _add_fit_flags(p):
    p.add_argument("--grid-size", type=int, default=101)
    p.add_argument("--num-components", type=int, default=None,
                   help="fix the number of components (implies --k-rule fixed)")
    p.add_argument("--k-rule", choices=("aic", "fve", "fixed"), default=None)
    p.add_argument("--fve", type=float, default=0.95, help="fraction-of-variance threshold")
    p.add_argument("--aic-likelihood", choices=("conditional", "marginal"), default="conditional")
    p.add_argument("--noise-method", choices=("diagonal", "marginal"), default="diagonal")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdadegrade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--error-json", action="store_true",
                        help="report failures as a JSON object on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a prior to training signals")
    p.add_argument("--input", required=True, help=f"CSV with header {','.join(HEADER)}")
    p.add_argument("--horizon", type=float, default=None, help="time horizon M")
    p.add_argument("--threshold", type=float, default=None,
                   help="cut training signals at their first crossing of this level")
    p.add_argument("--include-post-failure", action="store_true")
    p.add_argument("--mean-bandwidth", type=float, default=None)
    p.add_argument("--cov-bandwidth", type=float, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--output", default=None, help="model JSON path (default stdout)")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="residual-life prediction for new units")
    p.add_argument("--model", default=None)
    p.add_argument("--input", default=None, help="signals of the units (omit for a prior prediction)")
    p.add_argument("--threshold", type=float, default=None, help="failure threshold D")
    p.add_argument("--t-star", type=float, default=None,
                   help="prediction time (default: last observation)")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--bootstrap", type=int, default=500)
    p.add_argument("--point-rule", choices=("median", "mean_crossing"), default="median")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--output", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="write simulated signals")
    p.add_argument("--model", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--scenario", choices=SCENARIOS, default="complete")
    p.add_argument("--sampling", choices=SAMPLINGS, default="uniform")
    p.add_argument("--ratio", type=float, default=ExperimentConfig.ratio)
    p.add_argument("--m-sparse", type=int, default=6)
    p.add_argument("--stop", action="store_true",
                   help="apply the Uniform(0.7, 1) stopping times to complete signals")
    p.add_argument("--score-dist", choices=DISTRIBUTIONS, default="normal")
    p.add_argument("--error-dist", choices=DISTRIBUTIONS, default="normal")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="percentile-conditioned prediction experiment")
    d = ExperimentConfig()
    p.add_argument("--model", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--scenario", choices=SCENARIOS, default=d.scenario)
    p.add_argument("--sampling", choices=SAMPLINGS, default=d.sampling)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--replications", type=int, default=d.replications)
    p.add_argument("--n-train", type=int, default=d.n_train)
    p.add_argument("--n-valid", type=int, default=d.n_valid)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--bootstrap", type=int, default=d.n_bootstrap)
    p.add_argument("--point-rule", choices=("median", "mean_crossing"), default=d.point_rule)
    p.add_argument("--methods", default="fpca", help=f"comma-separated subset of {METHODS}")
    p.add_argument("--baseline-basis", choices=tuple(BASES), default=d.baseline_basis)
    p.add_argument("--baseline-transform", choices=tuple(TRANSFORMS), default=d.baseline_transform)
    p.add_argument("--score-dist", choices=DISTRIBUTIONS, default="normal")
    p.add_argument("--error-dist", choices=DISTRIBUTIONS, default="normal")
    p.add_argument("--validation-sampling", choices=("scenario", "complete"),
                   default=d.validation_sampling)
    p.add_argument("--actual-life", choices=("exact", "grid"), default=d.actual_life)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output", default=None)
    p.add_argument("--manifest", default=None, help="path of the JSON manifest")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--grid-size", type=int, default=d.fit.grid_size)
    p.add_argument("--num-components", type=int, default=None)
    p.add_argument("--k-rule", choices=("aic", "fve", "fixed"), default=None)
    p.add_argument("--aic-likelihood", choices=("conditional", "marginal"),
                   default=d.fit.aic_likelihood)
    p.add_argument("--noise-method", choices=("diagonal", "marginal"), default=d.fit.noise_method)
    p.set_defaults(func=cmd_benchmark)
    return parser


def _status_for(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, FitError):
        return EXIT_FIT
    if isinstance(exc, (SignalError, DomainError, ModelFormatError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, (DegradationError, ValueError)):
        return EXIT_USAGE if isinstance(exc, ValueError) and not isinstance(exc, DegradationError) \
            else EXIT_FIT
    return EXIT_INTERNAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BaseException as exc:  # noqa: BLE001 - mapped to exit codes
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        status = _status_for(exc)
        kind = type(exc).__name__
        msg = str(exc) or kind
        if args.error_json:
            sys.stderr.write(json.dumps({"error": kind, "message": msg, "exit_status": status}) + "\n")
        else:
            sys.stderr.write(f"fdadegrade {args.command}: {kind}: {msg}\n")
        return status
