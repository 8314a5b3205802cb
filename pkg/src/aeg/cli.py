"""``aeg`` command line.

Every subcommand writes its artifacts under ``--out-dir`` (default: the
``AEG_OUTPUT_DIR`` environment variable, else the working directory) plus a
``run.json`` manifest.  Feeding that manifest back through ``--config``
re-runs the command with identical settings; explicit flags override values
from a config file.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .classifier import (LinearClassifier, cross_entropy, error_rate, train_logreg,
                         train_robust_logreg_l1)
from .data import load_csv, make_gaussian_pair, make_two_moons, save_csv, write_text_atomic
from .entropy import entropy_chain
from .errors import AEGError, NumericalFailure
from .evaluation import transfer_experiment
from .features import FeatureMap
from .game import (BestResponse, ExtraGradient, GameConfig, GameTrace, TrainOptions,
                   TRACE_COLUMNS, best_response_solve, duality_gap, extragradient_solve,
                   verify_linear_nash)
from .generator import (AttackBudget, ClosedFormGenerator, GradientGenerator, GridGenerator,
                        IdentityGenerator, NoiseGenerator, attack_dataset, generator_to_json,
                        save_adversarial_csv)

ENV_OUT_DIR = "AEG_OUTPUT_DIR"
MANIFEST = "run.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# Flags whose values are paths: inputs resolve against the cwd, outputs
# against the output directory.
_INPUTS = ("data", "ref", "model", "inp")
_OUTPUTS = ("out", "model_out", "generator_out")


def _common(p, out_default):
    p.add_argument("--out-dir", default=None)
    p.add_argument("--config", default=None, help="JSON config or run.json manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=out_default)


def _train_flags(p):
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--method", choices=["newton", "gd"], default="newton")


def build_parser():
    top = _Parser(prog="aeg", description="Adversarial example games on small convex models.")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthetic dataset to CSV")
    _common(p, "data.csv")
    p.add_argument("--kind", choices=["two-moons", "gaussian-pair"], default="two-moons")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--mean-separation", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=2)

    p = sub.add_parser("train", help="logistic regression on a feature map")
    _common(p, "model.json")
    p.add_argument("--data")
    p.add_argument("--degree", type=int, default=1)
    _train_flags(p)

    p = sub.add_parser("train-robust", help="l1-robust logistic regression (binary, linear)")
    _common(p, "model.json")
    p.add_argument("--data")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--bias", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("attack", help="perturb a dataset against a model")
    _common(p, "adv.csv")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--generator", choices=["closed-form", "grid", "gradient", "noise",
                                           "identity"], default="grid")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--backend", choices=["cython", "python"], default=None)

    p = sub.add_parser("solve-game", help="best-response or extragradient game solver")
    _common(p, "trace.csv")
    p.add_argument("--data")
    p.add_argument("--ref")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--solver", choices=["best-response", "extragradient"],
                   default="best-response")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--generator", choices=["grid", "gradient"], default="grid")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr-f", type=float, default=0.01)
    p.add_argument("--lr-g", type=float, default=0.01)
    p.add_argument("--num-latent", type=int, default=4)
    p.add_argument("--model-out", default="game_model.json")
    p.add_argument("--generator-out", default=None)
    p.add_argument("--backend", choices=["cython", "python"], default=None)
    _train_flags(p)

    p = sub.add_parser("entropy", help="F-entropy along nested polynomial classes")
    _common(p, "entropy.csv")
    p.add_argument("--data")
    p.add_argument("--degrees", default="1,3,5")
    _train_flags(p)

    p = sub.add_parser("verify-nash", help="check the closed-form equilibrium of the linear game")
    _common(p, "nash.json")
    p.add_argument("--data")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--deviations", type=int, default=200)
    p.add_argument("--l2", type=float, default=0.0)

    p = sub.add_parser("eval-transfer", help="no-query transfer to split-trained targets")
    _common(p, "transfer.csv")
    p.add_argument("--data")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--targets", type=int, default=5)
    p.add_argument("--representative", choices=["robust", "plain"], default="robust")
    _train_flags(p)

    p = sub.add_parser("plot-trace", help="SVG line chart of game traces")
    _common(p, "trace.svg")
    p.add_argument("--in", dest="inp", action="append")
    p.add_argument("--series", default=",".join(TRACE_COLUMNS[1:]))
    p.add_argument("--title", default="")
    return top


# -- config handling -----------------------------------------------------------

def _config_argv(sub, conf, explicit):
    """Translate a config dict into flags, rejecting unknown keys.

    Keys whose flag also appears in ``explicit`` are skipped.
    """
    known = {a.dest: a for a in sub._actions if a.option_strings}
    given = {tok.split("=", 1)[0] for tok in explicit if tok.startswith("--")}
    argv = []
    for key, val in conf.items():
        act = known.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if given & set(act.option_strings):
            continue
        flag = act.option_strings[0]
        if isinstance(act, argparse.BooleanOptionalAction):
            argv.append(flag if val else "--no-" + flag[2:])
        elif val is None:
            continue
        elif isinstance(act, argparse._AppendAction):
            for v in val:
                argv += [flag, str(v)]
        else:
            argv += [flag, repr(val) if isinstance(val, float) else str(val)]
    return argv


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("aeg: a subcommand is required (see --help)")
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if isinstance(conf, dict) and "config" in conf and "command" in conf:
            if conf["command"] != args.command:
                raise UsageError(f"manifest is for {conf['command']!r}, not {args.command!r}")
            conf = conf["config"]
        if not isinstance(conf, dict):
            raise UsageError("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        argv = [args.command] + _config_argv(sub, conf, argv[1:]) + list(argv[1:])
        args = parser.parse_args(argv)
    return args


def _resolve(args):
    """Absolute paths everywhere, so the manifest replays from any cwd."""
    out_dir = args.out_dir or os.environ.get(ENV_OUT_DIR) or "."
    args.out_dir = str(Path(out_dir).resolve())
    for k in _INPUTS:
        v = getattr(args, k, None)
        if isinstance(v, list):
            setattr(args, k, [str(Path(x).resolve()) for x in v])
        elif v:
            setattr(args, k, str(Path(v).resolve()))
    for k in _OUTPUTS:
        v = getattr(args, k, None)
        if v:
            setattr(args, k, str(Path(args.out_dir, v).resolve()))
    if hasattr(args, "backend"):
        args.backend = args.backend or kernels.BACKEND
    return args


def _manifest(args):
    conf = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    import scipy
    return {"command": args.command, "config": conf, "seed": args.seed,
            "versions": {"aeg": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "backend": getattr(args, "backend", kernels.BACKEND),
            "env": {ENV_OUT_DIR: os.environ.get(ENV_OUT_DIR)}}


def _need(args, *names):
    for n in names:
        if not getattr(args, n):
            raise UsageError(f"aeg {args.command}: --{n.replace('_', '-')} is required")


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_text_atomic(path, text)


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _opts(args):
    return TrainOptions(args.l2, args.max_iter, args.tol, args.method)


# -- commands --------------------------------------------------------------------

def cmd_gen_data(a):
    if a.kind == "two-moons":
        ds = make_two_moons(a.n, a.noise, a.seed)
    else:
        ds = make_gaussian_pair(a.n, a.mean_separation, a.sigma, a.dim, a.seed)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, a.out)
    return f"wrote {len(ds)} {a.kind} examples to {a.out}"


def cmd_train(a):
    _need(a, "data")
    ds = load_csv(a.data)
    fm = FeatureMap(ds.dim, a.degree)
    f, rep = train_logreg(fm, ds, a.l2, a.max_iter, a.tol, method=a.method)
    _write(a.out, f.to_json())
    return (f"{fm.name}: objective {rep.final_objective:.6g} after {rep.iterations} iterations, "
            f"train error {error_rate(f, ds):.4f}")


def cmd_train_robust(a):
    _need(a, "data")
    ds = load_csv(a.data, num_classes=2)
    f, rep = train_robust_logreg_l1(ds, a.eps, a.max_iter, l2_reg=a.l2, include_bias=a.bias,
                                    seed=a.seed)
    _write(a.out, f.to_json())
    return (f"robust objective {rep.final_objective:.6g}, subgradient gap "
            f"{rep.grad_norm_or_subgrad_gap:.3g}")


def cmd_attack(a):
    _need(a, "data", "model")
    ds = load_csv(a.data)
    f = LinearClassifier.from_json(Path(a.model).read_text())
    f = f if f.source_id else LinearClassifier.from_dict({**f.to_dict(), "source_id": a.model})
    b = AttackBudget(a.eps)
    gen = {"closed-form": lambda: ClosedFormGenerator.from_classifier(f, b),
           "grid": lambda: GridGenerator(b, f, a.resolution),
           "gradient": lambda: GradientGenerator(b, f, a.steps),
           "noise": lambda: NoiseGenerator(b),
           "identity": lambda: IdentityGenerator()}[a.generator]()
    adv = attack_dataset(gen, ds, seed=a.seed)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    save_adversarial_csv(adv, a.out)
    return (f"{a.generator}: loss {cross_entropy(f, ds):.6g} -> "
            f"{cross_entropy(f, adv.adversarial):.6g}, error {error_rate(f, ds):.4f} -> "
            f"{error_rate(f, adv.adversarial):.4f}")


def cmd_solve_game(a):
    _need(a, "data")
    ds = load_csv(a.data)
    ref = load_csv(a.ref, num_classes=ds.num_classes) if a.ref else None
    fm = FeatureMap(ds.dim, a.degree)
    if a.solver == "best-response":
        solver = BestResponse(a.iters, a.generator, a.resolution, a.steps)
    else:
        solver = ExtraGradient(steps=a.iters, lr_f=a.lr_f, lr_g=a.lr_g, num_latent=a.num_latent)
    cfg = GameConfig(AttackBudget(a.eps), ds, fm, a.lam, ref, solver, _opts(a), a.seed)
    if a.solver == "best-response":
        trace = best_response_solve(cfg)
        f, gen = trace.records[-1].classifier, None
    else:
        trace, f, gen = extragradient_solve(cfg)
    _write(a.out, trace.to_csv())
    _write(a.model_out, f.to_json())
    if gen is not None and a.generator_out:
        _write(a.generator_out, generator_to_json(gen))
    last = trace.records[-1]
    msg = (f"{a.solver} {fm.name}: {len(trace)} records, phi_lambda "
           f"{last.phi_lambda_after_min:.6g} -> {last.phi_lambda_after_max:.6g}")
    if gen is not None:
        msg += f", duality gap {duality_gap(f, gen, cfg):.4g}"
    return msg


def cmd_entropy(a):
    _need(a, "data")
    ds = load_csv(a.data)
    try:
        degrees = sorted({int(t) for t in a.degrees.split(",") if t.strip()})
    except ValueError as exc:
        raise UsageError(f"--degrees must be comma-separated integers: {exc}") from exc
    if not degrees:
        raise UsageError("--degrees is empty")
    rep = entropy_chain(ds, [FeatureMap(ds.dim, g) for g in degrees], _opts(a),
                        provenance=a.data)
    _write(a.out, rep.to_csv())
    return "  ".join(f"{e.name}={e.value:.6g}" for e in rep.entries)


def cmd_verify_nash(a):
    _need(a, "data")
    ds = load_csv(a.data, num_classes=2)
    r = verify_linear_nash(ds, a.eps, a.deviations, a.seed, l2_reg=a.l2)
    _write_json(a.out, {
        "passed": r.passed, "inconclusive": r.inconclusive, "message": r.message,
        "worst_violation": r.worst_violation,
        "worst_generator_violation": r.worst_generator_violation,
        "worst_classifier_violation": r.worst_classifier_violation,
        "tolerance": r.tolerance, "phi_star": r.phi_star, "duality_gap": r.duality_gap,
        "weights": [float(v) for v in r.classifier.w]})
    if r.passed:
        return f"PASS gap<={max(r.duality_gap, 0.0):.3g} worst_violation={r.worst_violation:.3g}"
    raise NumericalFailure(f"FAIL {r.message} (worst violation {r.worst_violation:.3g}, "
                           f"tolerance {r.tolerance:.3g})")


def cmd_eval_transfer(a):
    _need(a, "data")
    ds = load_csv(a.data, num_classes=2)
    exp = transfer_experiment(ds, FeatureMap(ds.dim, 1), a.eps, a.targets, a.seed,
                              a.representative, _opts(a))
    stem = Path(a.out)
    summary = {}
    for name, rep in (("closed-form", exp.closed_form), ("noise", exp.noise),
                      ("identity", exp.identity)):
        _write(stem.with_name(f"{stem.stem}_{name}{stem.suffix}"), rep.to_csv())
        summary[name] = rep.summary()
    _write_json(stem.with_name(f"{stem.stem}_summary.json"), summary)
    cf, nz = exp.closed_form, exp.noise
    return (f"clean {cf.macro_clean:.4f}  closed-form {cf.macro_adv:.4f}±{cf.two_sigma:.4f}  "
            f"noise {nz.macro_adv:.4f}±{nz.two_sigma:.4f}")


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f"]


def render_svg(series, title="", width=640, height=400):
    """Line chart; ``series`` is a list of ``(label, xs, ys)``."""
    from xml.sax.saxutils import escape

    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(y)]
    if not pts:
        raise UsageError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    x1, y1 = (x1 if x1 > x0 else x0 + 1), (y1 if y1 > y0 else y0 + 1)
    L, R, T, B = 60, 160, 30, 40
    sx = lambda x: L + (x - x0) / (x1 - x0) * (width - L - R)
    sy = lambda y: height - B - (y - y0) / (y1 - y0) * (height - T - B)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:g}" y="18" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<line x1="{L}" y1="{height - B}" x2="{width - R}" y2="{height - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{height - B}" stroke="black"/>',
           f'<text x="{L}" y="{height - B + 16}" font-size="11">{x0:.4g}</text>',
           f'<text x="{width - R}" y="{height - B + 16}" font-size="11" text-anchor="end">'
           f'{x1:.4g}</text>',
           f'<text x="{L - 4}" y="{height - B}" font-size="11" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{L - 4}" y="{T + 10}" font-size="11" text-anchor="end">{y1:.4g}</text>']
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"><title>{escape(label)}</title></polyline>')
        ly = T + 14 * i + 6
        out.append(f'<text x="{width - R + 8}" y="{ly}" font-size="11" fill="{color}">'
                   f'{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot_trace(a):
    _need(a, "inp")
    cols = [c.strip() for c in a.series.split(",") if c.strip()]
    bad = [c for c in cols if c not in TRACE_COLUMNS[1:]]
    if bad or not cols:
        raise UsageError(f"--series must name trace columns from {TRACE_COLUMNS[1:]}")
    series = []
    for path in a.inp:
        tr = GameTrace.from_csv(Path(path).read_text(), label=Path(path).stem)
        xs = [float(v) for v in tr.column("iter")]
        for c in cols:
            label = c if len(a.inp) == 1 else f"{tr.label}:{c}"
            series.append((label, xs, [float(v) for v in tr.column(c)]))
    _write(a.out, render_svg(series, a.title))
    return f"wrote {len(series)} series to {a.out}"


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "train-robust": cmd_train_robust,
            "attack": cmd_attack, "solve-game": cmd_solve_game, "entropy": cmd_entropy,
            "verify-nash": cmd_verify_nash, "eval-transfer": cmd_eval_transfer,
            "plot-trace": cmd_plot_trace}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    prev_backend = kernels.BACKEND
    try:
        args = _resolve(parse(argv))
        if hasattr(args, "backend"):
            kernels.set_backend(args.backend)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out_dir, MANIFEST), _manifest(args))
        print(COMMANDS[args.command](args))
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(exc, file=sys.stderr)
        return 2
    except (AEGError, OSError, ImportError, ValueError) as exc:
        print(f"aeg: {exc}", file=sys.stderr)
        return 1
    finally:
        kernels.set_backend(prev_backend)


if __name__ == "__main__":
    sys.exit(main())
