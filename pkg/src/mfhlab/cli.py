"""Command-line front end.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure
(the failing stage is named on stderr).
"""
from __future__ import annotations

import argparse
import ast
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .experiments import (SweepConfig, default_jobs, load_results, run_sweep, run_verify_bound, save_metadata,
                          save_results)
from .models import KINDS as MODEL_KINDS, GdOptions, NumericalError
from .mvd import build_alpha_point, build_gamma_point, build_table2_point, sample, save_dataset
from .ranking import DIST_SPACES
from .seeding import substream
from .theory import save_certificates

DEFAULT_SEED = 7
SEED_ENV = "MFHLAB_SEED"

# key -> default; None means "the command's own default"
DEFAULTS: dict[str, object] = {
    "seed": None,
    "points": None,
    "n_train": None,
    "n_test": 1000,
    "rho": None,
    "n_seeds": 10,
    "model_kind": "logistic-binary",
    "M": 5,
    "nullify_ratio": 0.75,
    "dist_space": "logits",
    "hidden": 16,
    "gd.learning_rate": 0.1,
    "gd.max_iters": 5000,
    "gd.grad_tol": 1e-6,
    "gd.prob_clamp": 1e-12,
    "gen.recipe": "gamma",
    "gen.point": 4,
    "gen.n": 200,
    "verify.instances": 100,
    "verify.n": 200,
}

_HELP = {
    "seed": "master seed (64-bit unsigned); --seed and $MFHLAB_SEED also set it",
    "points": "sweep grid as a list; None uses the sweep's default grid",
    "n_train": "training samples per run; None gives 200 (1000 for rank-eval)",
    "rho": "weight of the label term; None gives 0.5 (0 for sweep-nullify and ablate-m)",
    "gen.recipe": "gamma (point = overlap), alpha (point = d_total) or table2 (point = gamma)",
}

SWEEPS = {
    "sweep-gamma": "gamma",
    "sweep-alpha": "alpha",
    "table2": "table2",
    "sweep-nullify": "nullify_ratio",
    "rank-eval": "ranking",
    "ablate-m": "permutation_count",
}


class ConfigError(ValueError):
    pass


# -- config file --------------------------------------------------------------------
def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text  # bare word


def parse_config(text: str, source: str = "<config>") -> dict:
    """Flat ``key: value`` lines; ``#`` starts a comment; values are Python literals or bare words."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key: value'")
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        rest = rest.strip()
        if not rest:
            raise ConfigError(f"{source}:{lineno}: missing value for {key!r}")
        try:
            values[key] = _check(key, _parse_value(rest))
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check(key: str, v):
    """Type and range check for one key; returns the normalised value."""
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    if v is None:
        need(DEFAULTS[key] is None, f"{key} must not be None")
        return None
    if key == "seed":
        need(_is_int(v) and 0 <= v < 2 ** 64, "seed must be an integer in [0, 2**64)")
    elif key == "points":
        need(isinstance(v, (list, tuple)) and len(v) > 0 and all(_is_num(p) for p in v),
             "points must be a nonempty list of numbers")
        v = tuple(v)
    elif key in ("n_train", "n_test", "n_seeds", "M", "hidden", "gen.n", "verify.instances", "verify.n"):
        need(_is_int(v) and v >= 1, f"{key} must be a positive integer")
    elif key == "gd.max_iters":
        need(_is_int(v) and v >= 0, f"{key} must be a nonnegative integer")
    elif key in ("rho", "nullify_ratio"):
        need(_is_num(v) and 0.0 <= v <= 1.0, f"{key} out of [0,1]")
        v = float(v)
    elif key == "gd.learning_rate":
        need(_is_num(v) and v > 0, f"{key} must be positive")
        v = float(v)
    elif key == "gd.grad_tol":
        need(_is_num(v) and v >= 0, f"{key} must be nonnegative")
        v = float(v)
    elif key == "gd.prob_clamp":
        need(_is_num(v) and 0 < v <= 1e-3, f"{key} out of (0, 1e-3]")
        v = float(v)
    elif key == "model_kind":
        need(v in MODEL_KINDS, f"model_kind must be one of {MODEL_KINDS}")
    elif key == "dist_space":
        need(v in DIST_SPACES, f"dist_space must be one of {DIST_SPACES}")
    elif key == "gen.recipe":
        need(v in ("gamma", "alpha", "table2"), "gen.recipe must be gamma, alpha or table2")
    elif key == "gen.point":
        need(_is_num(v), "gen.point must be a number")
    return v


def load_config(path=None) -> dict:
    """Defaults overlaid with the file at ``path`` (if any); unknown keys are errors."""
    cfg = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        cfg.update(parse_config(text, str(p)))
    return cfg


def dump_config(cfg: dict) -> str:
    lines = []
    for key in DEFAULTS:
        note = _HELP.get(key)
        if note:
            lines.append(f"# {note}")
        lines.append(f"{key}: {cfg[key]!r}")
    return "\n".join(lines) + "\n"


def sweep_config(cfg: dict, kind: str, seed: int, jobs: int) -> SweepConfig:
    gd = GdOptions(learning_rate=cfg["gd.learning_rate"], max_iters=cfg["gd.max_iters"],
                   grad_tol=cfg["gd.grad_tol"], prob_clamp=cfg["gd.prob_clamp"])
    try:
        return SweepConfig(kind=kind, points=cfg["points"], n_train=cfg["n_train"], n_test=cfg["n_test"],
                           rho=cfg["rho"], n_seeds=cfg["n_seeds"], master_seed=seed, model_kind=cfg["model_kind"],
                           gd=gd, M=cfg["M"], nullify_ratio=cfg["nullify_ratio"], dist_space=cfg["dist_space"],
                           hidden=cfg["hidden"], jobs=jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- SVG charts ------------------------------------------------------------------------
_W, _H, _PAD = 480, 320, 56


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def svg_chart(title: str, xs, means, stds, x_label: str = "point") -> str:
    """Line chart of ``means`` with a +-1 std band; output depends only on the inputs."""
    lo = min(m - s for m, s in zip(means, stds))
    hi = max(m + s for m, s in zip(means, stds))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5

    def px(x):
        return _PAD + (x - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def py(y):
        return _H - _PAD - (y - lo) / (hi - lo) * (_H - 2 * _PAD)

    upper = [f"{_fmt(px(x))},{_fmt(py(m + s))}" for x, m, s in zip(xs, means, stds)]
    lower = [f"{_fmt(px(x))},{_fmt(py(m - s))}" for x, m, s in zip(xs, means, stds)]
    line = [f"{_fmt(px(x))},{_fmt(py(m))}" for x, m in zip(xs, means)]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<polygon points="{" ".join(upper + lower[::-1])}" fill="steelblue" fill-opacity="0.25" stroke="none"/>',
        f'<polyline points="{" ".join(line)}" fill="none" stroke="steelblue" stroke-width="2"/>',
    ]
    for x, m in zip(xs, means):
        out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(m))}" r="3" fill="steelblue"/>')
        out.append(f'<text x="{_fmt(px(x))}" y="{_H - _PAD + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{x:.3g}</text>')
    for y in (lo, hi):
        out.append(f'<text x="{_PAD - 6}" y="{_fmt(py(y) + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{y:.4g}</text>')
    out.append(f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{x_label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(csv_path, out_dir) -> list[Path]:
    rows = load_results(csv_path)
    by_metric: dict = {}
    for r in rows:
        by_metric.setdefault(r.metric, []).append(r)
    written = []
    stem = Path(csv_path).stem
    for metric in sorted(by_metric):
        pts = sorted(by_metric[metric], key=lambda r: r.point)
        kind = pts[0].sweep_kind
        svg = svg_chart(f"{kind}: {metric}", [r.point for r in pts], [r.mean for r in pts], [r.std for r in pts],
                        x_label=kind)
        path = Path(out_dir) / f"{stem}_{metric}.svg"
        path.write_text(svg)
        written.append(path)
    return written


# -- commands ----------------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    command: str
    config_path: str | None
    seed: int
    out: Path
    plot: bool
    jobs: int


def resolve_seed(flag, cfg: dict) -> int:
    if flag is not None:
        seed = flag
    elif cfg.get("seed") is not None:
        seed = cfg["seed"]
    elif os.environ.get(SEED_ENV, "").strip():
        raw = os.environ[SEED_ENV].strip()
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None
    else:
        seed = DEFAULT_SEED
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    return seed


def _write_sidecar(run: RunConfig, cfg: dict) -> None:
    effective = dict(cfg, seed=run.seed)
    (run.out / f"{run.command}_config.txt").write_text(dump_config(effective))


def _cmd_sweep(run: RunConfig, cfg: dict) -> None:
    scfg = sweep_config(cfg, SWEEPS[run.command], run.seed, run.jobs)
    start = time.perf_counter()
    rows = run_sweep(scfg)
    csv_path = run.out / f"{run.command}.csv"
    save_results(rows, csv_path)
    save_metadata(scfg, run.out / f"{run.command}_meta.json", time.perf_counter() - start)
    if run.plot:
        render_report(csv_path, run.out)
    print(csv_path)


def _cmd_gen(run: RunConfig, cfg: dict) -> None:
    recipe, point = cfg["gen.recipe"], cfg["gen.point"]
    builders = {"gamma": lambda r: build_gamma_point(int(point), r),
                "alpha": lambda r: build_alpha_point(int(point), r),
                "table2": lambda r: build_table2_point(point, r)}
    try:
        spec = builders[recipe](substream(run.seed, 0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = sample(spec, cfg["gen.n"], substream(run.seed, 1))
    path = run.out / "dataset.csv"
    save_dataset(data, path)
    print(path)


def _cmd_verify(run: RunConfig, cfg: dict, instances) -> None:
    n = instances if instances is not None else cfg["verify.instances"]
    if n < 1:
        raise ConfigError("--instances must be positive")
    certs = run_verify_bound(n, cfg["verify.n"], run.seed, run.jobs)
    path = run.out / f"{run.command}.csv"
    save_certificates(certs, path)
    held = sum(c.holds for c in certs)
    print(f"{path}: {held}/{len(certs)} certificates hold")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key: value' config file (see the defaults command)")
    p.add_argument("--seed", type=int, help=f"master seed; falls back to ${SEED_ENV}, then {DEFAULT_SEED}")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
    p.add_argument("--plot", action="store_true", help="also render SVG charts of the result CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfhlab", description="Crossmodal distillation lab on synthetic data.")
    parser.add_argument("--version", action="version", version=f"mfhlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "write one synthetic dataset (plus role sidecar)",
        "sweep-gamma": "crossmodal KD across the gamma grid",
        "sweep-alpha": "crossmodal KD across the alpha grid",
        "table2": "regular vs ground-truth general teachers at gamma 0.25/0.5/0.75",
        "sweep-nullify": "ranked general/specific/random teachers across nullify ratios",
        "rank-eval": "accuracy of the salience ranking against true roles",
        "ablate-m": "effect of the permutation count M",
        "verify-bound": "Monte-Carlo batch of distillation-bound certificates",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "verify-bound":
            p.add_argument("--instances", type=int, default=None, help="number of instances (default 100)")
    rep = sub.add_parser("report", help="render result CSVs as SVG line charts with +-1 std bands")
    rep.add_argument("csv", nargs="+", help="result CSV files")
    rep.add_argument("--out", default=None, help="output directory (default: next to each CSV)")
    dft = sub.add_parser("defaults", help="print the default config")
    dft.add_argument("--out", default=None, help="write to this file instead of stdout")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "defaults":
            text = dump_config(DEFAULTS)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "report":
            for path in args.csv:
                out = Path(args.out) if args.out else Path(path).parent
                out.mkdir(parents=True, exist_ok=True)
                for svg in render_report(path, out):
                    print(svg)
            return 0
        cfg = load_config(args.config)
        jobs = args.jobs if args.jobs is not None else default_jobs()
        if jobs < 1:
            raise ConfigError("--jobs must be positive")
        run = RunConfig(args.command, args.config, resolve_seed(args.seed, cfg), Path(args.out), args.plot, jobs)
        run.out.mkdir(parents=True, exist_ok=True)
        _write_sidecar(run, cfg)
        if args.command == "gen":
            _cmd_gen(run, cfg)
        elif args.command == "verify-bound":
            _cmd_verify(run, cfg, args.instances)
        else:
            _cmd_sweep(run, cfg)
        return 0
    except NumericalError as exc:
        print(f"mfhlab: numerical failure in stage '{exc.stage}': {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"mfhlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
