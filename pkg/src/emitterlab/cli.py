"""Command line front end.

Exit codes: 0 success, 1 I/O, 2 validation, 3 numerical failure, 4 dimension cap.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import approximations as apx
from . import fock_oracle as fo
from .errors import EmitterLabError, ModelIOError, ValidationError
from .generator import BlockOperator, apply_generator, assemble_generator, check_hypotheses, generator_report
from .matter_model import default_model, load_model, two_level_model
from .quadrature import QuadConfig
from .semigroup import SemigroupEngine, transition_trajectory

BUILTIN_MODELS = {"default": default_model, "two-level": two_level_model}


# --------------------------------------------------------------------------
# argument helpers


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _split_quad(argv):
    """Pull ``--quad.KEY=VAL`` options out of argv."""
    quad, rest = {}, []
    it = iter(argv)
    for arg in it:
        if arg.startswith("--quad."):
            key, eq, val = arg[2:].partition("=")
            if not eq:
                val = next(it, None)
                if val is None:
                    raise ValidationError(f"missing value for {arg}")
            quad[key] = val
        else:
            rest.append(arg)
    return quad, rest


def _model(args):
    src = args.model or "default"
    if src in BUILTIN_MODELS and not Path(src).exists():
        return BUILTIN_MODELS[src]()
    return load_model(src)


def _t_grid(args) -> np.ndarray:
    if not args.tmax > 0 or args.tsteps < 1:
        raise ValidationError("--tmax must be positive and --tsteps at least 1")
    return np.linspace(0.0, args.tmax, args.tsteps + 1)


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
        return
    try:
        with open(path, "w", newline="") as fh:
            yield fh
    except OSError as exc:
        raise ModelIOError(f"cannot write {path}: {exc}") from exc


def _fmt(x) -> str:
    return f"{x:.17g}"


def write_table(stream, header, rows) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _pairs(args, model):
    if args.from_ is not None and args.to is not None:
        return [(args.from_, args.to)]
    n = model.dim
    return [(j, m) for j in range(n) for m in range(n)]


def _fit_exponent(gs, errs):
    gs, errs = np.asarray(gs, float), np.asarray(errs, float)
    ok = errs > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(gs[ok]), np.log(errs[ok]), 1)[0])


# --------------------------------------------------------------------------
# commands


def cmd_model_validate(args, config):
    model = load_model(args.path) if args.path else _model(args)
    lines = [f"valid model: {model.n_levels} levels, matter dimension {model.dim}"]
    for j, lv in enumerate(model.levels):
        lines.append(f"  level {j}: energy {lv.energy:.12g}, dim {lv.dim}")
    c = model.cutoff
    lines.append(f"  cutoff: order {c.order}, scale {c.scale:.12g}, amplitude {c.amplitude:.12g}")
    if model.is_decoupled():
        lines.append("  warning: all couplings vanish")
    print("\n".join(lines))
    return 0


def cmd_generator(args, config):
    model = _model(args)
    gen = assemble_generator(model, config)
    report = check_hypotheses(gen, seed=args.seed)
    doc = generator_report(gen, report)
    if not report.fgr:
        print(f"warning: FGR fails, gamma margin = {gen.gamma_margin:.6g}", file=sys.stderr)
    if args.check_h4:
        resid = apply_generator(gen, BlockOperator.identity(model)).norm()
        print(f"||L(I)|| = {resid:.6e}", file=sys.stderr)
    with _output(args.out) as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_evolve(args, config):
    model = _model(args)
    engine = SemigroupEngine(assemble_generator(model, config))
    t = _t_grid(args)
    pairs = _pairs(args, model)
    header, cols = ["t"], []
    for g in args.g:
        vals = transition_trajectory(engine, pairs, t, g)
        for c, (j, m) in enumerate(pairs):
            header.append(f"P({j}->{m})" if len(args.g) == 1 else f"P({j}->{m};g={g:g})")
            cols.append(vals[:, c])
    with _output(args.out) as fh:
        write_table(fh, header, zip(t, *cols))
    return 0


def cmd_nonmarkov(args, config):
    model = _model(args)
    if args.from_ is None or args.to is None:
        raise ValidationError("nonmarkov needs --from and --to")
    t = _t_grid(args)
    cols = [[apx.non_markov_probability(model, args.from_, args.to, ti, g, config) for ti in t] for g in args.g]
    header = ["t"] + [f"P_nonmarkov(g={g:g})" for g in args.g]
    with _output(args.out) as fh:
        write_table(fh, header, zip(t, *cols))
    return 0


def cmd_rabi(args, config):
    model = _model(args)
    if args.from_ is None or args.to is None:
        raise ValidationError("rabi needs --from and --to (level indices)")
    level = args.to if args.observable is None else args.observable
    x = BlockOperator.level_projector(model, level)
    sig = apx.rabi_signal(model, x, args.from_, args.to, args.g[0], config=config)
    t = _t_grid(args)
    with _output(args.out) as fh:
        apx.write_rabi_csv(fh, t, sig(t))
    return 0


def _oracle_systems(args, model):
    grid = fo.mode_grid(model, fo.GridConfig(radial_nodes=args.modes))
    return grid, [fo.build_system(model, grid, args.nmax, g, compress=not args.no_compress, cap=args.cap) for g in args.g]


def cmd_oracle(args, config):
    model = _model(args)
    if args.from_ is None or args.to is None:
        raise ValidationError("oracle needs --from and --to")
    t = _t_grid(args)
    grid, systems = _oracle_systems(args, model)
    cols = [fo.marginal_probability_exact(s, args.from_, args.to, t) for s in systems]
    header = ["t"] + [f"P_exact(g={g:g})" for g in args.g]
    with _output(args.out) as fh:
        write_table(fh, header, zip(t, *cols))
    if args.manifest:
        manifest = {"runs": [s.manifest() for s in systems], "t_max": args.tmax, "t_steps": args.tsteps}
        with _output(args.manifest) as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_compare(args, config):
    model = _model(args)
    if args.from_ is None or args.to is None:
        raise ValidationError("compare needs --from and --to")
    j, m = args.from_, args.to
    t = _t_grid(args)
    engine = SemigroupEngine(assemble_generator(model, config))
    grid, systems = _oracle_systems(args, model) if not args.no_oracle else (None, [None] * len(args.g))
    rows, summary = [], {"pairs": [j, m], "g": list(args.g), "methods": {}}
    err_markov, err_nm = [], []
    for g, system in zip(args.g, systems):
        pm = transition_trajectory(engine, [(j, m)], t, g)[:, 0]
        pn = np.array([apx.non_markov_probability(model, j, m, ti, g, config) for ti in t])
        pe = fo.marginal_probability_exact(system, j, m, t) if system is not None else np.full_like(t, np.nan)
        for ti, a, b, c in zip(t, pm, pn, pe):
            rows.append([j, m, _fmt(g), ti, a, b, c])
        if system is not None:
            err_markov.append(float(np.max(np.abs(pe - pm))))
            err_nm.append(float(np.max(np.abs(pe - pn))))
    if err_markov:
        summary["methods"] = {
            "markov": {"sup_error": err_markov, "exponent": _fit_exponent(args.g, err_markov)},
            "nonmarkov": {"sup_error": err_nm, "exponent": _fit_exponent(args.g, err_nm)},
        }
        summary["oracle"] = systems[0].manifest()
    with _output(args.out) as fh:
        write_table(fh, ["j", "m", "g", "t", "P_markov", "P_nonmarkov", "P_exact"], rows)
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.summary:
        with _output(args.summary) as fh:
            fh.write(text)
    else:
        sys.stderr.write(text)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emitterlab", description="Reduced dynamics of a finite-level emitter.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=False, oracle=False):
        sp.add_argument("--model", help="model JSON file, or a built-in name: default, two-level")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--seed", type=int, default=0)
        if grid:
            sp.add_argument("--tmax", type=float, default=40.0)
            sp.add_argument("--tsteps", type=int, default=80)
            sp.add_argument("--g", type=_floats, default=[1.0])
            sp.add_argument("--from", dest="from_", type=int)
            sp.add_argument("--to", type=int)
        if oracle:
            sp.add_argument("--nmax", type=int, choices=(1, 2), default=2)
            sp.add_argument("--modes", type=int, default=64, help="radial shells of the mode grid")
            sp.add_argument("--cap", type=int, default=fo.DEFAULT_DIMENSION_CAP)
            sp.add_argument("--no-compress", action="store_true", help="keep every mode of a shell")

    s = sub.add_parser("model-validate", help="check a model file")
    s.add_argument("path", nargs="?")
    common(s)
    s.set_defaults(func=cmd_model_validate)

    s = sub.add_parser("generator", help="assemble the generator and audit its hypotheses")
    common(s)
    s.add_argument("--check-h4", action="store_true", help="print ||L(I)|| to stderr")
    s.set_defaults(func=cmd_generator)

    s = sub.add_parser("evolve", help="Markov transition probabilities <G(t g^2) pi_m u_j, u_j>")
    common(s, grid=True)
    s.set_defaults(func=cmd_evolve)

    s = sub.add_parser("nonmarkov", help="second-order transition probability")
    common(s, grid=True)
    s.set_defaults(func=cmd_nonmarkov)

    s = sub.add_parser("rabi", help="leading-order coherence between two levels")
    common(s, grid=True)
    s.add_argument("--observable", type=int, help="level whose projector is observed (default: --to)")
    s.set_defaults(func=cmd_rabi)

    s = sub.add_parser("oracle", help="truncated Fock-space reference probabilities")
    common(s, grid=True, oracle=True)
    s.add_argument("--manifest", help="write the run manifest JSON here")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("compare", help="Markov, non-Markov and reference probabilities on one grid")
    common(s, grid=True, oracle=True)
    s.add_argument("--no-oracle", action="store_true")
    s.add_argument("--summary", help="write the error summary JSON here (default: stderr)")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        quad, rest = _split_quad(argv)
        config = QuadConfig().with_overrides(quad)
        args = build_parser().parse_args(rest)
        return args.func(args, config)
    except EmitterLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
