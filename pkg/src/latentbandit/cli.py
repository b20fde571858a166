"""Command-line entry point.

Subcommands: ``cluster``, ``synth-model``, ``simulate``, ``report`` and
``check-schema``. Exit codes: 0 success, 2 validation error, 3 runtime error.

Policies for ``simulate`` use a small comma-separated syntax::

    spec   := policy ("," policy)*
    policy := name [":" param] ("," param)*
    param  := key "=" value

A ``key=value`` token without a colon belongs to the policy before it, so
``lba:beta=1,tie=random,tree:depth=10,oracle`` is three policies. Names:

``lba``      beta (1.0), tie (lowest_index | random)
``explore``  samples (1000), tie, prune (1 | 0)
``tree``     users (1000 per group), depth (horizon), min_leaf (5), thresholds (8)
``oracle``   no parameters
``random``   no parameters
``cbb``      extension slot; see :func:`register_policy`
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import TrainConfig, save_tree, train_tree
from .data import ClusteringConfig, RatingsFormatError, build_model, load_ratings, synth_model, train_holdout_split, write_ratings
from .errors import SchemaError
from .model import load_model, save_model
from .policy import PolicyConfig, item_scores
from .reporting import (
    check_csv,
    format_table,
    group_rows,
    merge_summaries,
    step_rows,
    summary_rows,
    trace_rows,
    write_csv,
)
from .simulation import (
    DEFAULT_HORIZON,
    GROUP_ACCURACY_STEP,
    BanditPolicy,
    OraclePolicy,
    RandomPolicy,
    TreePolicy,
    evaluate,
)

log = logging.getLogger("latentbandit")

OUTPUT_DIR_ENV = "LATENTBANDIT_OUTPUT_DIR"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class ValidationError(ValueError):
    pass


# -- policy specs -------------------------------------------------------------


@dataclass
class PolicySpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name}({inner})"


_EXTENSIONS = {"cbb": None}
_KNOWN_PARAMS = {
    "lba": {"beta", "tie"},
    "explore": {"samples", "tie", "prune"},
    "tree": {"users", "depth", "min_leaf", "thresholds"},
    "oracle": set(),
    "random": set(),
}


def available_policies() -> list:
    return sorted(set(_KNOWN_PARAMS) | set(_EXTENSIONS))


def register_policy(name: str, factory) -> None:
    """Plug in an extra policy; ``factory(spec, model, seed, horizon)`` returns a Policy."""
    _EXTENSIONS[name] = factory


def parse_policies(text: str) -> list:
    specs = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            raise ValidationError(f"empty entry in policy list {text!r}")
        if ":" in token:
            name, param = token.split(":", 1)
            specs.append(PolicySpec(name.strip()))
            token = param
        elif "=" not in token:
            specs.append(PolicySpec(token))
            continue
        if not specs:
            raise ValidationError(f"parameter {token!r} does not follow a policy name")
        key, sep, value = token.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"malformed parameter {token!r}; expected key=value")
        specs[-1].params[key.strip()] = value.strip()
    for spec in specs:
        if spec.name not in _KNOWN_PARAMS and spec.name not in _EXTENSIONS:
            raise ValidationError(f"unknown policy {spec.name!r}; available: {', '.join(available_policies())}")
        allowed = _KNOWN_PARAMS.get(spec.name)
        if allowed is not None:
            bad = set(spec.params) - allowed
            if bad:
                raise ValidationError(f"policy {spec.name!r} does not take {sorted(bad)}; allowed: {sorted(allowed)}")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate policies in {text!r}")
    return specs


def _num(spec, key, cast, default):
    raw = spec.params.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise ValidationError(f"{spec.name}: {key}={raw!r} is not a valid {cast.__name__}") from None


def build_policy(spec: PolicySpec, model, seed: int, horizon: int, out_dir: Path | None = None):
    tie = spec.params.get("tie", "lowest_index")
    try:
        if spec.name == "lba":
            cfg = PolicyConfig(beta=_num(spec, "beta", float, 1.0), tie_break=tie)
            return BanditPolicy(cfg, spec.label)
        if spec.name == "explore":
            cfg = PolicyConfig(
                mode="explore_mc",
                mc_samples=_num(spec, "samples", int, 1000),
                tie_break=tie,
                mc_prune=bool(_num(spec, "prune", int, 1)),
            )
            return BanditPolicy(cfg, spec.label)
        if spec.name == "tree":
            tcfg = TrainConfig(
                users_per_group=_num(spec, "users", int, 1000),
                max_depth=_num(spec, "depth", int, max(horizon, 1)),
                min_leaf=_num(spec, "min_leaf", int, 5),
                candidate_thresholds=_num(spec, "thresholds", int, 8),
            )
    except ValueError as exc:
        raise ValidationError(f"{spec.label}: {exc}") from None
    if spec.name == "tree":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        tree = train_tree(model, tcfg, rng)
        if out_dir is not None:
            save_tree(tree, out_dir / f"{spec.label}.tree.json")
        return TreePolicy(tree, spec.label)
    if spec.name == "oracle":
        return OraclePolicy()
    if spec.name == "random":
        return RandomPolicy()
    factory = _EXTENSIONS.get(spec.name)
    if factory is None:
        raise NotImplementedError(
            f"policy {spec.name!r} is not implemented here; register a factory with latentbandit.cli.register_policy"
        )
    return factory(spec, model, seed, horizon)


# -- helpers ------------------------------------------------------------------


def _scale(text: str) -> tuple:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"scale must be 'min,max', got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("scale min must be below max")
    return lo, hi


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUTPUT_DIR_ENV) or "results")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _provenance(command: str, config: dict) -> dict:
    return {"tool": f"latentbandit {__version__}", "command": command, "config": config}


# -- subcommands ---------------------------------------------------------------


def cmd_cluster(args) -> int:
    config = {
        "ratings": str(args.ratings),
        "ratings_sha256": _sha256(args.ratings) if Path(args.ratings).is_file() else None,
        "k": args.k,
        "scale": list(args.scale),
        "seed": args.seed,
        "max_iters": args.max_iters,
        "restarts": args.restarts,
        "min_item_support": args.min_support,
        "variance_floor": args.variance_floor,
        "holdout": args.holdout,
        "rating_shift": args.rating_shift,
    }
    try:
        table = load_ratings(args.ratings, scale=args.scale)
    except FileNotFoundError:
        raise ValidationError(f"ratings file not found: {args.ratings}") from None
    if table.num_users == 0:
        raise ValidationError(f"{args.ratings}: no ratings")
    holdout = None
    if args.holdout > 0:
        table, holdout = train_holdout_split(table, args.holdout, np.random.default_rng(np.random.SeedSequence([args.seed, 3])))
    if args.k > table.num_users:
        raise ValidationError(f"k={args.k} exceeds the number of (training) users, {table.num_users}")
    cfg = ClusteringConfig(
        k=args.k, max_iters=args.max_iters, restarts=args.restarts, min_item_support=args.min_support, seed=args.seed
    )
    model = build_model(table, cfg, args.variance_floor)
    if args.rating_shift:
        model = model.shifted(args.rating_shift)
    model.metadata["provenance_block"] = _provenance("cluster", config)
    model.metadata["duplicates_dropped"] = table.duplicates
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    if holdout is not None:
        write_ratings(holdout, out.with_suffix(out.suffix + ".holdout.csv"))
    print(f"wrote {out}: {model.num_groups} groups x {model.num_items} items")
    return EXIT_OK


def cmd_synth_model(args) -> int:
    config = {
        "groups": args.groups,
        "items": args.items,
        "separation": args.separation,
        "seed": args.seed,
        "scale": list(args.scale),
        "rating_shift": args.rating_shift,
    }
    if args.groups < 1 or args.items < 1:
        raise ValidationError("groups and items must be >= 1")
    try:
        model = synth_model(args.groups, args.items, args.separation, np.random.default_rng(args.seed), args.scale)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if args.rating_shift:
        model = model.shifted(args.rating_shift)
    model.metadata["provenance_block"] = _provenance("synth-model", config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    print(f"wrote {out}: {model.num_groups} groups x {model.num_items} items")
    return EXIT_OK


def _load_model_arg(args):
    if args.model:
        try:
            return load_model(args.model), {"file": str(args.model), "sha256": _sha256(args.model)}
        except FileNotFoundError:
            raise ValidationError(f"model file not found: {args.model}") from None
    params = {"groups": 16, "items": 200, "separation": 2.0, "seed": 0}
    for token in args.synth.split(","):
        key, sep, value = token.partition("=")
        if not sep or key.strip() not in params:
            raise ValidationError(f"--synth takes {sorted(params)} as key=value, got {token!r}")
        params[key.strip()] = float(value) if key.strip() == "separation" else int(value)
    model = synth_model(params["groups"], params["items"], params["separation"], np.random.default_rng(params["seed"]))
    return model, {"synth": params}


def cmd_simulate(args) -> int:
    specs = parse_policies(args.policies)
    model, source = _load_model_arg(args)
    if args.horizon < 0 or args.horizon > model.num_items:
        raise ValidationError(f"horizon {args.horizon} must lie in [0, {model.num_items}]")
    if args.users_per_group < 1:
        raise ValidationError("--users-per-group must be >= 1")
    out_dir = _out_dir(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = args.dataset or model.metadata.get("dataset") or (Path(args.model).stem if args.model else "synthetic")
    config = {
        "model": source,
        "dataset": dataset,
        "policies": [{"name": s.name, "params": s.params, "label": s.label} for s in specs],
        "horizon": args.horizon,
        "users_per_group": args.users_per_group,
        "seed": args.seed,
        "clamp": args.clamp,
        "trace_users": args.trace_users,
        "group_step": args.group_step,
        "tree_defaults": asdict(TrainConfig(max_depth=max(args.horizon, 1))),
    }
    policies = [build_policy(s, model, args.seed, args.horizon, out_dir) for s in specs]
    keep = args.trace_users > 0
    summary = evaluate(
        model,
        policies,
        args.users_per_group,
        args.horizon,
        args.seed,
        jobs=args.jobs,
        keep_episodes=keep,
        trace=keep,
        clamp=args.clamp,
        config=config,
    )
    write_csv(out_dir / "steps.csv", "steps", step_rows(summary), config, args.seed)
    write_csv(out_dir / "summary.csv", "summary", summary_rows(summary, dataset), config, args.seed)
    write_csv(out_dir / "groups.csv", "groups", group_rows(summary, args.group_step), config, args.seed)
    write_csv(out_dir / "trace.csv", "trace", trace_rows(summary, args.trace_users), config, args.seed)
    if args.score_trace:
        rows = _score_rows(model, policies, summary, args.seed)
        extra = [f"post_{g}" for g in range(model.num_groups)]
        write_csv(out_dir / "scores.csv", "scores", rows, config, args.seed, extra)
    acc = summary.overall_accuracy()
    reg = summary.overall_regret()
    for p, label in enumerate(summary.policies):
        if args.horizon:
            print(f"{label:>24}  accuracy {acc[p, -1]:.3f}  regret {reg[p, -1]:.2f}")
    print(f"wrote results to {out_dir}")
    return EXIT_OK


def _score_rows(model, policies, summary, seed):
    """Per-candidate scores along the first traced user's path, for bandit policies."""
    from .model import RatingHistory, posterior

    for pol in policies:
        if not isinstance(pol, BanditPolicy):
            continue
        for g in range(summary.num_groups):
            ep = summary.episodes.get((pol.label, g, 0)) if summary.episodes else None
            if ep is None:
                continue
            rng = np.random.default_rng(np.random.SeedSequence([seed, 4, g]))
            history = RatingHistory()
            for n, step in enumerate(ep.steps, start=1):
                post = posterior(model, history).probs
                for s in item_scores(model, history, pol.config, rng):
                    yield [pol.label, g, 0, n, s.item, s.score, *post]
                history = history.append(step.item, step.rating)


def cmd_report(args) -> int:
    cells, horizon = merge_summaries(args.inputs)
    text, table_csv = format_table(cells, horizon)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(table_csv, encoding="utf-8")
    return EXIT_OK


def check_file(path) -> str:
    """Validate any file this tool writes; returns a short kind name."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    head = path.read_text(encoding="utf-8")[:1].strip()
    if head == "{":
        d = json.loads(path.read_text(encoding="utf-8"))
        fmt = d.get("format")
        if fmt == "latentbandit.group_model":
            load_model(path)
            return "group_model"
        if fmt == "latentbandit.decision_tree":
            from .baselines import load_tree

            load_tree(path)
            return "decision_tree"
        raise SchemaError(f"{path}: unknown JSON format {fmt!r}")
    return check_csv(path)


def cmd_check_schema(args) -> int:
    for path in args.files:
        kind = check_file(path)
        print(f"OK  {kind:<14} {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentbandit", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"latentbandit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cluster", help="cluster users of a ratings CSV and estimate a group model")
    c.add_argument("--ratings", required=True, help="CSV with header user_id,item_id,rating")
    c.add_argument("--k", type=int, required=True, help="number of groups")
    c.add_argument("--scale", type=_scale, required=True, help="declared rating scale 'min,max'")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--max-iters", type=int, default=100)
    c.add_argument("--restarts", type=int, default=10)
    c.add_argument("--min-support", type=int, default=5, help="min ratings per (group, item) cell")
    c.add_argument("--variance-floor", type=float, default=0.05)
    c.add_argument("--holdout", type=float, default=0.0, help="fraction of users held out (written next to the model)")
    c.add_argument("--rating-shift", type=float, default=0.0, help="add a constant to every group mean")
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("synth-model", help="write a random group model")
    s.add_argument("--groups", type=int, default=16)
    s.add_argument("--items", type=int, default=200)
    s.add_argument("--separation", type=float, default=2.0)
    s.add_argument("--scale", type=_scale, default=(1.0, 5.0))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rating-shift", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_model)

    m = sub.add_parser("simulate", help="run policies on synthetic new users and write metrics")
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="group model file")
    src.add_argument("--synth", help="synthetic model, e.g. groups=16,items=200,separation=2,seed=0")
    m.add_argument("--policies", default="lba:beta=1,lba:beta=0,tree,oracle")
    m.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    m.add_argument("--users-per-group", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./results)")
    m.add_argument("--dataset", help="dataset name used in the summary table")
    m.add_argument("--jobs", type=int, default=1, help="worker threads; results do not depend on this")
    m.add_argument("--trace-users", type=int, default=1, help="users per group written to trace.csv")
    m.add_argument("--score-trace", action="store_true", help="also write per-item scores (scores.csv)")
    m.add_argument("--group-step", type=int, default=GROUP_ACCURACY_STEP, help="step for per-group accuracy")
    m.add_argument("--clamp", action="store_true", help="clip sampled ratings to the rating scale")
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="merge summary.csv files into one table")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", help="write the text table here too")
    r.add_argument("--csv", help="write the table as CSV")
    r.set_defaults(func=cmd_report)

    k = sub.add_parser("check-schema", help="validate files written by this tool")
    k.add_argument("files", nargs="+")
    k.set_defaults(func=cmd_check_schema)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, SchemaError, RatingsFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NotImplementedError as exc:
        print(f"error: not implemented: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
