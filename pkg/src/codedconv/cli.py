"""Command-line entry point: ``codedconv <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections import Counter, defaultdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import plots
from .latency import DegenerateFitError, LayerGeometry, PhaseProfile, fit
from .models import PI_PROFILE, vgg16_like
from .optimizer import (L_curve, SystemParams, coefficients, coeffs_for_ratio, compare_omitted,
                        minimize_L, straggler_gain)
from .simulator import (ScenarioConfig, SimSummary, Strategy, approx_k, empirical_optimal_k,
                        simulate_layer, simulate_pipeline)
from .split import plan_for_input
from .tensor import ConvSpec, read_tensor, write_tensor

log = logging.getLogger("codedconv")


class UsageError(Exception):
    pass


def _load_json(path: Optional[str]) -> dict:
    if not path:
        raise UsageError("--config is required")
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _layer(d: dict) -> tuple[ConvSpec, int, int]:
    try:
        spec = ConvSpec(int(d["in_channels"]), int(d["out_channels"]), int(d["kernel_size"]),
                        int(d.get("stride", 1)), int(d.get("padding", 0)))
        return spec, int(d["height"]), int(d["width"])
    except KeyError as exc:
        raise UsageError(f"layer description missing {exc}") from None


def _system(cfg: dict) -> SystemParams:
    if "n" not in cfg or "layer" not in cfg:
        raise UsageError("system config needs 'n' and 'layer'")
    spec, h, w = _layer(cfg["layer"])
    profile = PhaseProfile.from_dict(cfg["profile"]) if "profile" in cfg else PI_PROFILE
    return SystemParams(int(cfg["n"]), LayerGeometry.from_unpadded(spec, h, w), profile)


def _emit_csv(header, rows, out: Optional[str]) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    if out:
        Path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


# -- subcommands --------------------------------------------------------------

def cmd_plan(args) -> int:
    spec, h, w = _layer(_load_json(args.config))
    plan = plan_for_input(spec, h, w, args.k)
    print(plan.to_json(indent=2))
    return 0


def cmd_optimize(args) -> int:
    params = _system(_load_json(args.config))
    choice = minimize_L(params)
    c = coefficients(params)
    print(json.dumps({"n": params.n, "k_relaxed": round(choice.k_relaxed, 9), "k_circ": choice.k_circ,
                      "L_relaxed": choice.L_relaxed, "L_circ": choice.L_circ, "R": c.R,
                      "h": [c.h1, c.h2, c.h3, c.h4, c.h5]}, indent=2))
    curve = L_curve(params)
    if args.out:
        _emit_csv(["k", "L"], [[k, f"{v:.9g}"] for k, v in curve], args.out)
        plots.l_curve(plots.figure_path(args.out), curve, choice.k_relaxed, choice.k_circ)
    return 0


def parse_strategy(text: str, params: SystemParams, scenario: ScenarioConfig, seed: int,
                   trials: int) -> Strategy:
    name, _, arg = text.partition(":")
    if name == "coded":
        if arg in ("", "auto"):
            return Strategy.coded(min(approx_k(params, scenario), params.n - 1))
        if arg == "best":
            k = empirical_optimal_k(params, scenario, min(trials, 10_000), seed, bootstrap=0).k_star
            return Strategy.coded(k)
        return Strategy.coded(int(arg))
    if name == "lt_coarse":
        return Strategy.lt_coarse(int(arg) if arg else params.n)
    if name in ("uncoded", "replication", "lt_fine") and not arg:
        return Strategy(name)
    raise UsageError(f"unknown strategy {text!r}")


DEFAULT_STRATEGIES = ["coded:auto", "uncoded", "replication"]


def _scenario(cfg: dict, seed: int) -> ScenarioConfig:
    d = dict(cfg.get("scenario", {}))
    d.setdefault("seed", seed)
    try:
        return ScenarioConfig.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad scenario: {exc}") from None


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    params = _system(cfg)
    scenario = _scenario(cfg, args.seed)
    trials = args.trials or int(cfg.get("trials", 10_000))
    summaries = []
    for text in cfg.get("strategies", DEFAULT_STRATEGIES):
        st = parse_strategy(text, params, scenario, args.seed, trials)
        r = simulate_layer(st, params, scenario, trials, args.seed, relaxed=args.relaxed)
        summaries.append(r.summary())
    _emit_csv(SimSummary.CSV_FIELDS, [s.row() for s in summaries], args.out)
    if args.out:
        plots.strategy_bars(plots.figure_path(args.out), summaries)
    return 0


def _pipeline_summary(layers, n, profile, text, scenario, trials, seed) -> SimSummary:
    def strategy_for(p: SystemParams) -> Strategy:
        return parse_strategy(text, p, scenario, seed, trials)

    res = simulate_pipeline(layers, n, profile, strategy_for, scenario, trials, seed)
    ks = Counter(res.ks.values())
    label = text.split(":")[0] if text.startswith("coded") else text
    return res.summary(label, ks.most_common(1)[0][0] if ks else 0)


def cmd_compare_analytic(args, cfg: dict) -> int:
    """Closed-form coded vs uncoded comparison with encode/decode and h4 dropped."""
    if "layer" in cfg:
        params = _system({**cfg, "n": int(cfg.get("n", 10))})
        c = coefficients(params)
    else:
        c = coeffs_for_ratio(float(cfg.get("R", 1.0)))
    n = int(cfg.get("n", 10))
    cmp_ = compare_omitted(n, c)
    print(json.dumps({"n": n, "R": c.R, "k_sub_star": cmp_.k_sub_star,
                      "h_at_k_sub_star": cmp_.h_at_k_sub_star, "delta": cmp_.delta,
                      "reduction": cmp_.reduction, "best_integer_k": cmp_.best_integer_k,
                      "best_integer_reduction": cmp_.best_integer_reduction}, indent=2))
    if args.out:
        curve = [(k, straggler_gain(n, k)) for k in range(1, n)]
        _emit_csv(["k", "h"], [[k, f"{h:.9g}"] for k, h in curve], args.out)
        plots.gain_curve(plots.figure_path(args.out), curve, c.R)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_json(args.config)
    if args.analytic:
        return cmd_compare_analytic(args, cfg)
    sweep = cfg.get("sweep", {"param": "lambda_tr", "values": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]})
    param, values = sweep["param"], sweep["values"]
    if param not in ("lambda_tr", "n_f"):
        raise UsageError("sweep param must be lambda_tr or n_f")
    trials = args.trials or int(cfg.get("trials", 10_000))
    strategies = cfg.get("strategies", DEFAULT_STRATEGIES)
    n = int(cfg.get("n", 10))
    profile = PhaseProfile.from_dict(cfg["profile"]) if "profile" in cfg else PI_PROFILE
    base = dict(cfg.get("scenario", {}))
    base.setdefault("kind", "straggling" if param == "lambda_tr" else "failure")
    rows, fig_rows = [], []
    for v in values:
        scenario = _scenario({"scenario": {**base, param: v}}, args.seed)
        for text in strategies:
            if cfg.get("model") == "vgg16":
                s = _pipeline_summary(vgg16_like(), n, profile, text, scenario, trials, args.seed)
            else:
                params = _system({**cfg, "n": n})
                st = parse_strategy(text, params, scenario, args.seed, trials)
                s = simulate_layer(st, params, scenario, trials, args.seed).summary()
            rows.append([v] + s.row())
            fig_rows.append((v, s))
    _emit_csv((param,) + SimSummary.CSV_FIELDS, rows, args.out)
    if args.out:
        plots.sweep(plots.figure_path(args.out), param, fig_rows)
    return 0


def _read_samples(path, phase: str, N: float) -> dict:
    """Per-phase per-unit latencies from a phase,N,seconds CSV or one number per line."""
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    per_unit = defaultdict(list)
    if lines and "seconds" in lines[0]:
        for row in csv.DictReader(io.StringIO(text)):
            size = float(row.get("N") or N)
            per_unit[row.get("phase") or phase].append(float(row["seconds"]) / size)
    else:
        per_unit[phase] = [float(v) / N for v in lines]
    return per_unit


def cmd_fit(args) -> int:
    """Fit per-phase (mu, theta) by the min/mean rule."""
    if not args.samples:
        raise UsageError("--samples is required")
    out = {}
    for phase, xs in sorted(_read_samples(args.samples, args.phase, args.N).items()):
        try:
            p = fit(xs, 1.0)
        except DegenerateFitError as exc:
            raise UsageError(f"phase {phase}: {exc}") from None
        out[f"mu_{phase}"], out[f"theta_{phase}"] = p.mu, p.theta
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _input_tensor(model, args) -> np.ndarray:
    if args.input:
        return read_tensor(args.input)
    rng = np.random.default_rng(args.seed)
    return rng.standard_normal(model.input_shape).astype(np.float32)


def cmd_master(args) -> int:
    from .runtime.config import load_model
    from .runtime.master import DESK_PROFILE, run_master

    model = load_model(args.config)
    if not args.workers:
        raise UsageError("--workers is required")
    addresses = [a for a in args.workers.split(",") if a]
    profile = DESK_PROFILE
    if args.profile:
        profile = PhaseProfile.from_dict(_load_json(args.profile))
    x = _input_tensor(model, args)
    report = run_master(model, addresses, x, args.k, args.mode == "coded", profile, args.timeout)
    if args.output:
        write_tensor(args.output, report.output)
    if args.out:
        report.write_csv(args.out)
        plots.timing(plots.figure_path(args.out), report.rows())
    print(json.dumps({"total_s": report.total_s, "output_shape": list(report.output.shape),
                      "layers": [{"layer_id": t.layer_id, "mode": t.mode, "k": t.k,
                                  "cancels": t.cancels, "retries": t.retries}
                                 for t in report.layers]}, indent=2))
    return 0


def cmd_worker(args) -> int:
    from .runtime.worker import run_worker

    run_worker(args.listen, args.delay_ms, args.id)
    return 0


def cmd_oracle(args) -> int:
    from .runtime.config import load_model, local_inference

    model = load_model(args.config)
    y = local_inference(model, _input_tensor(model, args))
    if args.output:
        write_tensor(args.output, y)
    print(json.dumps({"output_shape": list(y.shape), "sum": float(np.sum(y, dtype=np.float64)),
                      "max_abs": float(np.abs(y).max())}))
    return 0


def cmd_synth(args) -> int:
    from .runtime.config import save_model, synthetic_model

    if not args.out:
        raise UsageError("--out is required (model JSON path)")
    shape = tuple(int(v) for v in args.input_shape.split(","))
    convs = [(int(c), 3, 1, 1) for c in args.channels.split(",")]
    save_model(args.out, synthetic_model(shape, convs, args.seed))
    print(args.out)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", help="output path (CSV unless stated otherwise)")

    p = argparse.ArgumentParser(prog="codedconv", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("plan", parents=[common], help="print the split plan for one layer")
    s.add_argument("--k", type=int, required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("optimize", parents=[common], help="choose k and write the L(k) curve")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo latency per strategy")
    s.add_argument("--trials", type=int)
    s.add_argument("--relaxed", action="store_true", help="unfloored piece sizes, no remainder")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", parents=[common], help="strategy table over a scenario sweep")
    s.add_argument("--trials", type=int)
    s.add_argument("--analytic", action="store_true",
                   help="closed-form comparison and h(n, k) curve instead of a simulation sweep")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("fit", parents=[common], help="fit shift-exponential phase parameters")
    s.add_argument("--samples", help="CSV with columns phase, N, seconds, or one latency per line")
    s.add_argument("--phase", default="cmp", help="phase name for plain sample files")
    s.add_argument("--N", type=float, default=1.0, help="workload scale for plain sample files")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("master", parents=[common], help="run a model on remote workers")
    s.add_argument("--workers", help="comma-separated host:port list")
    s.add_argument("--k", type=int, help="fixed k (default: from the latency model)")
    s.add_argument("--mode", choices=("coded", "uncoded"), default="coded")
    s.add_argument("--profile", help="PhaseProfile JSON used for k and timeouts")
    s.add_argument("--timeout", type=float, help="per-subtask timeout in seconds")
    s.add_argument("--input", help="input tensor file (default: random from --seed)")
    s.add_argument("--output", help="write the output tensor here")
    s.set_defaults(func=cmd_master)

    s = sub.add_parser("worker", parents=[common], help="serve subtasks")
    s.add_argument("--listen", default="127.0.0.1:0", help="host:port (port 0 picks one)")
    s.add_argument("--delay-ms", type=float, default=0.0, help="sleep before each subtask")
    s.add_argument("--id", help="worker name reported to the master")
    s.set_defaults(func=cmd_worker)

    s = sub.add_parser("oracle", parents=[common], help="run a model locally")
    s.add_argument("--input")
    s.add_argument("--output")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("synth", parents=[common], help="write a random-weight model config")
    s.add_argument("--input-shape", default="1,8,32,32")
    s.add_argument("--channels", default="16,16")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    level = os.environ.get("COCOI_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"codedconv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"codedconv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
