"""Command-line entry point.

Subcommands: ``train`` (fit parameters, emit metrics + trained params),
``eval`` (accuracy + per-example predictions), ``prove`` (one query,
explanation + DOT), ``check-grad`` (finite-difference suite) and
``selftest`` (oracle-equivalence property suites).

Exit codes: 0 success, 1 data error, 2 usage error. Errors go to
standard error prefixed with ``error:``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, reference, synthetic
from .config import ConfigError, RunConfig, build_run_config, load_config_file
from .embeddings import (
    InitConfig,
    init_parameters,
    load_parameters,
    load_pretrained,
    save_parameters,
)
from .logic import (
    KnowledgeBase,
    Kind,
    ParseError,
    Variable,
    format_term,
    parse_program,
    parse_query,
    parse_triple_file,
    resolve,
)
from .prover import ProverConfig, explain, prove, to_dot
from .templates import default_templates, instantiate, parse_template_file
from .training import (
    DatasetError,
    evaluate,
    load_dataset,
    train,
    train_with_restarts,
)


class DataError(Exception):
    """Anything wrong with inputs: missing files, bad formats, bad refs."""


def _open_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError:
        raise DataError(f"cannot open {path}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style config file")
    p.add_argument("--triples", help="triple TSV file")
    p.add_argument("--rules", help="Datalog program with extra facts/rules")
    p.add_argument("--templates", help="rule template file")
    p.add_argument("--lambda", dest="lam", type=float, help="similarity threshold")
    p.add_argument("--depth", type=int, help="maximum proof depth")
    p.add_argument("--aggregator", choices=["product", "min"])
    p.add_argument("--max-proofs", dest="max_proofs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel candidate scoring threads")
    p.add_argument("--no-rules", dest="no_rules", action="store_const", const=True)
    p.add_argument(
        "--no-entity-mlp", dest="no_entity_mlp", action="store_const", const=True
    )


_OVERRIDE_KEYS = (
    "lam",
    "depth",
    "aggregator",
    "max_proofs",
    "seed",
    "jobs",
    "no_rules",
    "no_entity_mlp",
    "epochs",
    "early_stop_train_acc",
    "hidden",
)


def _run_config(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    return build_run_config(file_values, overrides)


def _build_kb(args: argparse.Namespace) -> KnowledgeBase:
    kb = KnowledgeBase()
    if args.triples:
        text = _open_text(args.triples)
        try:
            parse_triple_file(text.splitlines(), kb)
        except ValueError as exc:
            raise DataError(f"{args.triples}: {exc}") from None
    if getattr(args, "rules", None):
        try:
            parse_program(_open_text(args.rules), kb)
        except ParseError as exc:
            raise DataError(f"{args.rules}: {exc}") from None
    return kb


def _load_templates(args: argparse.Namespace, cfg: RunConfig):
    if cfg.no_rules:
        return []
    if getattr(args, "templates", None):
        try:
            return parse_template_file(_open_text(args.templates))
        except ParseError as exc:
            raise DataError(f"{args.templates}: {exc}") from None
    return default_templates()


def _instantiate_for(kb, templates, query_preds, theta=None, seed: int = 0):
    for q in query_preds:
        instantiate(templates, q, kb, theta, seed)


def _json_dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    kb = _build_kb(args)
    try:
        pretrained = load_pretrained(_open_text(args.vectors).splitlines())
    except ValueError as exc:
        raise DataError(f"{args.vectors}: {exc}") from None
    try:
        dataset = load_dataset(_open_text(args.dataset).splitlines(), kb)
    except DatasetError as exc:
        raise DataError(f"{args.dataset}: {exc}") from None
    if not dataset:
        raise DataError(f"{args.dataset}: empty dataset")
    templates = _load_templates(args, cfg)
    query_preds = sorted({ex.query_pred for ex in dataset}, key=lambda s: s.id)
    _instantiate_for(kb, templates, query_preds)

    def make_theta(seed: int):
        return init_parameters(
            kb,
            pretrained,
            InitConfig(hidden=cfg.hidden, seed=seed, entity_mlp=not cfg.no_entity_mlp),
        )

    try:
        if args.restarts:
            theta, log, seed_used = train_with_restarts(
                dataset, kb, make_theta, cfg, max_restarts=args.restarts
            )
        else:
            theta = make_theta(cfg.seed)
            log = train(dataset, kb, theta, cfg)
            seed_used = cfg.seed
    except ValueError as exc:
        raise DataError(str(exc)) from None
    outdir = Path(args.out)
    save_parameters(theta, kb, outdir)
    final = log.epochs[-1] if log.epochs else None
    metrics = {
        "config": cfg.describe(),
        "epochs": log.to_json(),
        "final_train_accuracy": final.accuracy if final else None,
        "epochs_run": len(log.epochs),
        "examples": len(dataset),
        "init_seed_used": seed_used,
    }
    _json_dump(outdir / "metrics.json", metrics)
    if final:
        print(
            f"trained {len(log.epochs)} epochs; train accuracy {final.accuracy:.4f}"
        )
    print(f"wrote {outdir / 'metrics.json'}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    kb = _build_kb(args)
    try:
        dataset = load_dataset(_open_text(args.dataset).splitlines(), kb)
    except DatasetError as exc:
        raise DataError(f"{args.dataset}: {exc}") from None
    templates = _load_templates(args, cfg)
    query_preds = sorted({ex.query_pred for ex in dataset}, key=lambda s: s.id)
    _instantiate_for(kb, templates, query_preds)
    try:
        theta = load_parameters(kb, args.params)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load parameters from {args.params}: {exc}") from None
    result = evaluate(dataset, kb, theta, cfg)
    outdir = Path(args.out) if args.out else Path(args.params)
    _json_dump(
        outdir / "accuracy.json",
        {"accuracy": result.accuracy, "examples": len(dataset)},
    )
    with open(outdir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for p in result.predictions:
            fh.write(json.dumps(p.to_json(), sort_keys=True) + "\n")
    print(f"accuracy {result.accuracy:.4f} on {len(dataset)} examples")
    print(f"wrote {outdir / 'predictions.jsonl'}")
    return 0


def _cmd_prove(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    kb = _build_kb(args)
    if not kb.facts and not kb.rules:
        raise DataError("prove needs --triples and/or --rules")
    try:
        goal = parse_query(args.goal, kb)
    except ParseError as exc:
        raise DataError(f"goal: {exc}") from None
    if getattr(args, "templates", None):
        templates = parse_template_file(_open_text(args.templates))
        _instantiate_for(kb, templates, [goal.predicate])
    pcfg = ProverConfig(
        lam=cfg.lam,
        depth=cfg.depth,
        aggregator=cfg.aggregator,
        max_proofs=cfg.max_proofs,
    )
    theta = None
    if args.exact:
        pcfg.similarity_fn = synthetic.exact_text_similarity
    elif args.params:
        try:
            theta = load_parameters(kb, args.params)
        except (OSError, ValueError) as exc:
            raise DataError(
                f"cannot load parameters from {args.params}: {exc}"
            ) from None
    elif args.vectors:
        pretrained = load_pretrained(_open_text(args.vectors).splitlines())
        try:
            theta = init_parameters(
                kb,
                pretrained,
                InitConfig(
                    hidden=cfg.hidden, seed=cfg.seed, entity_mlp=not cfg.no_entity_mlp
                ),
            )
        except ValueError as exc:
            raise DataError(str(exc)) from None
    else:
        raise DataError("prove needs --params, --vectors or --exact")
    result = prove(goal, kb, theta, pcfg)
    if result is None:
        print(f"no proof of score >= {pcfg.lam}")
        return 0
    for var in dict.fromkeys(v for v in goal.variables()):
        bound = resolve(var, result.proof.substitution)
        if bound is not var:
            print(f"{var.name} = {format_term(bound)}")
    print(explain(result.proof))
    print(f"proofs found: {result.proofs_found}")
    dot = to_dot(result.proof)
    if args.dot:
        Path(args.dot).write_text(dot + "\n", encoding="utf-8")
        print(f"wrote {args.dot}")
    else:
        print(dot)
    return 0


def _cmd_check_grad(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    report = gradcheck.run_gradcheck(seed=seed, n_tapes=args.tapes)
    print(
        f"checked {report.tapes_checked} tapes; "
        f"max relative error {report.max_rel_error:.3e}; "
        f"{report.resampled_ties} tie configurations resampled"
    )
    return 0 if report.max_rel_error <= 1e-4 else 1


def _cmd_selftest(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    failures = 0

    mismatches = 0
    for _ in range(args.programs):
        kb = synthetic.random_program(rng)
        cfg = ProverConfig(
            lam=1.0,
            depth=int(rng.integers(1, 4)),
            aggregator="min",
            similarity_fn=synthetic.exact_text_similarity,
        )
        oracle = reference.ground_consequences(kb, cfg.depth)
        for goal in synthetic.all_ground_goals(kb):
            truth = (
                goal.predicate.text,
                goal.args[0].symbol.text,
                goal.args[1].symbol.text,
            ) in oracle
            found = prove(goal, kb, None, cfg) is not None
            if truth != found:
                mismatches += 1
    print(f"classical reduction: {args.programs} programs, {mismatches} mismatches")
    failures += mismatches

    bad = 0
    for _ in range(args.kbs):
        kb = synthetic.random_program(rng)
        sim = synthetic.random_pair_similarity(rng)
        cfg = ProverConfig(
            lam=float(rng.uniform(0.2, 0.7)),
            depth=2,
            aggregator="product" if rng.integers(2) else "min",
            similarity_fn=sim,
        )
        goals = synthetic.all_ground_goals(kb)
        picks = rng.choice(len(goals), size=min(12, len(goals)), replace=False)
        for goal in (goals[int(i)] for i in picks):
            expected = reference.max_proof_score(goal, kb, sim, cfg)
            got = prove(goal, kb, None, cfg)
            if expected is None:
                ok = got is None
            else:
                ok = got is not None and got.score == expected
            if not ok:
                bad += 1
    print(f"pruning soundness: {args.kbs} KBs, {bad} mismatches")
    failures += bad

    if failures:
        print("selftest FAILED")
        return 1
    print("selftest passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softlog",
        description="weak-unification Datalog prover over natural-language triples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train parameters from entailment supervision")
    _add_common(p)
    p.add_argument("--vectors", help="pretrained pattern vectors", required=True)
    p.add_argument("--dataset", required=True, help="training examples (JSONL)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--early-stop-train-acc", dest="early_stop_train_acc", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument(
        "--restarts",
        type=int,
        default=0,
        help="try up to N+1 init seeds, keeping the first whose ignition probe passes",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate trained parameters on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--params", required=True, help="trained parameter directory")
    p.add_argument("--out", help="output directory (default: params dir)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("prove", help="prove a single goal and explain it")
    _add_common(p)
    p.add_argument("--goal", required=True, help="e.g. \"country(athens, X)\"")
    p.add_argument("--params", help="trained parameter directory")
    p.add_argument("--vectors", help="pretrained vectors (fresh init)")
    p.add_argument(
        "--exact",
        action="store_true",
        help="classical mode: symbols match iff their text is equal",
    )
    p.add_argument("--dot", help="write the proof digraph to this file")
    p.set_defaults(func=_cmd_prove)

    p = sub.add_parser("check-grad", help="finite-difference gradient check")
    p.add_argument("--seed", type=int)
    p.add_argument("--tapes", type=int, default=100)
    p.set_defaults(func=_cmd_check_grad)

    p = sub.add_parser("selftest", help="oracle-equivalence property suites")
    p.add_argument("--seed", type=int)
    p.add_argument("--programs", type=int, default=200)
    p.add_argument("--kbs", type=int, default=200)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
