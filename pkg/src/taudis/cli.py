"""Command-line surface: score, select, cover, simulate, validate.

Exit codes: 0 success, 1 validation report found violations, 2 usage errors
(argparse), 3 input parse or content errors, 4 configuration errors, 5
internal errors. Outputs are UTF-8 with LF line endings; manifests embed the
resolved config so every run is self-describing.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import __version__, maxcover, simharness, strategies, uncertainty
from .core import (ConfigError, IngestError, MissingEmbeddingError,
                   SelectionConfig, config_from_dict, config_hash,
                   config_to_dict, ingest_predictions, make_pool_state,
                   scan_violations)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_PARSE = 3
EXIT_CONFIG = 4
EXIT_INTERNAL = 5


def _read_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read {what} from {path}: {exc}") from None
    if not isinstance(data, dict):
        raise IngestError(f"{what} in {path} must be a JSON object")
    return data


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, allow_nan=False)
        handle.write("\n")


def _read_labeled_ids(path: str | None) -> list[str]:
    if path is None:
        return []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read labeled ids from {path}: {exc}") from None
    return [line.strip() for line in text.splitlines() if line.strip()]


def _load_config(args) -> SelectionConfig:
    data = _read_json(args.config, "config") if args.config else {}
    overrides = {
        "strategy": args.strategy, "budget": args.budget, "alpha": args.alpha,
        "beta": args.beta, "sigma": args.sigma, "seed": args.seed,
        "instance_metric": args.metric, "cover_algo": args.cover_algo,
        "partitions": args.partitions,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if "strategy" not in data:
        raise ConfigError("a strategy is required (config file or --strategy)")
    if "budget" not in data:
        raise ConfigError("a budget is required (config file or --budget)")
    return config_from_dict(data)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--strategy", help="selection strategy name")
    parser.add_argument("--budget", type=int, help="images per round")
    parser.add_argument("--alpha", type=float, help="instance oversampling multiplier")
    parser.add_argument("--beta", type=float, help="instance downsampling multiplier")
    parser.add_argument("--sigma", type=float, help="cosine similarity threshold")
    parser.add_argument("--seed", type=int, help="seed for randomized choices")
    parser.add_argument("--metric", choices=("se", "ce", "cm"),
                        help="instance uncertainty metric override")
    parser.add_argument("--cover-algo", dest="cover_algo",
                        choices=("greedy", "lazy", "partitioned", "brute"))
    parser.add_argument("--partitions", type=int,
                        help="partition count for the partitioned cover solver")


def cmd_score(args) -> int:
    pool = ingest_predictions(args.input)
    fieldnames = ["kind", "image_id", "instance_id", "cm", "ce", "se",
                  "avg_cm", "wce", "wse"]
    with open(args.out, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for image_id in sorted(pool):
            image = pool[image_id]
            multi_class = (not image.instances
                           or image.instances[0].class_probs.size >= 2)
            row = {"kind": "image", "image_id": image_id,
                   "wce": uncertainty.weighted_classification_entropy(image).value,
                   "wse": uncertainty.weighted_segmentation_entropy(image).value}
            if multi_class:
                row["avg_cm"] = uncertainty.average_classification_margin(image).value
            writer.writerow(row)
            for inst in image.instances:
                row = {"kind": "instance", "image_id": image_id,
                       "instance_id": inst.instance_id,
                       "ce": uncertainty.classification_entropy(inst.class_probs).value,
                       "se": uncertainty.instance_seg_entropy(inst)}
                if inst.class_probs.size >= 2:
                    row["cm"] = uncertainty.classification_margin(inst.class_probs).value
                writer.writerow(row)
    print(f"scored {len(pool)} images -> {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    start = time.perf_counter()
    config = _load_config(args)
    pool = ingest_predictions(args.input)
    labeled = _read_labeled_ids(args.labeled)
    state = make_pool_state(pool, labeled)
    output = strategies.select_batch(state, pool, config)
    warnings = []
    if config.budget > len(state.unlabeled):
        warnings.append(
            f"budget {config.budget} exceeds the unlabeled pool of "
            f"{len(state.unlabeled)}; selecting everything")
    manifest = {
        "tool_version": __version__,
        "strategy": config.strategy,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "round_index": args.round,
        "selected_images": output.selected_images,
        "diagnostics": output.diagnostics,
        "warnings": warnings,
        "duration_seconds": time.perf_counter() - start,
    }
    _write_json(args.out, manifest)
    print(f"selected {len(output.selected_images)} images -> {args.out}")
    return EXIT_OK


def _problem_from_json(data: dict) -> maxcover.CoverProblem:
    subsets_rec = data.get("subsets")
    if not isinstance(subsets_rec, dict):
        raise IngestError("cover problem needs a 'subsets' object")
    subsets = []
    for cid, elements in subsets_rec.items():
        if not isinstance(elements, list):
            raise IngestError(f"subset {cid!r} must be an array of element ids")
        subsets.append((cid, frozenset(str(e) for e in elements)))
    universe = frozenset(e for _, elements in subsets for e in elements)
    declared = data.get("universe_size")
    if declared is not None and declared != len(universe):
        raise IngestError(
            f"universe_size {declared} disagrees with the union of subsets "
            f"({len(universe)} elements)")
    return maxcover.CoverProblem(subsets=tuple(subsets), universe=universe)


def _problem_to_json(problem: maxcover.CoverProblem) -> dict:
    return {"subsets": {cid: sorted(elements)
                        for cid, elements in problem.subsets},
            "universe_size": len(problem.universe)}


def cmd_cover(args) -> int:
    problem = _problem_from_json(_read_json(args.problem, "cover problem"))
    if args.dump_problem:
        _write_json(args.dump_problem, _problem_to_json(problem))
        print(f"problem echoed -> {args.dump_problem}")
    if args.k is None:
        if not args.dump_problem:
            raise ConfigError("--k is required unless only --dump-problem is used")
        return EXIT_OK
    if args.out is None:
        raise ConfigError("--out is required when solving")
    solution = maxcover.solve_max_cover(
        problem, args.k, algo=args.algo, partitions=args.partitions,
        seed=args.seed)
    payload = {"selected": list(solution.selected),
               "coverage": solution.coverage,
               "universe_size": len(problem.universe),
               "algo": args.algo, "k": args.k}
    _write_json(args.out, payload)
    print(f"covered {solution.coverage}/{len(problem.universe)} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec_data = _read_json(args.pool_spec, "pool spec")
    try:
        spec = simharness.spec_from_dict(spec_data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid pool spec: {exc}") from None
    config_data = _read_json(args.config, "config") if args.config else {}
    initial_fraction = config_data.pop("initial_fraction", 0.25)
    gamma = config_data.pop("gamma", 0.7)
    if args.initial_fraction is not None:
        initial_fraction = args.initial_fraction
    if args.gamma is not None:
        gamma = args.gamma
    rounds_given = "rounds" in config_data or args.rounds is not None
    if args.rounds is not None:
        config_data["rounds"] = args.rounds
    for key, value in (("strategy", args.strategy), ("budget", args.budget),
                       ("alpha", args.alpha), ("beta", args.beta),
                       ("sigma", args.sigma), ("seed", args.seed),
                       ("metric", args.metric), ("cover_algo", args.cover_algo),
                       ("partitions", args.partitions)):
        if value is not None:
            config_data["instance_metric" if key == "metric" else key] = value
    if "budget" not in config_data:
        raise ConfigError("a budget is required (config file or --budget)")
    config_data.setdefault("strategy", "taudis")
    if not rounds_given:
        initial = int(round(initial_fraction * spec.num_images))
        config_data["rounds"] = simharness.rounds_for_quota(
            spec.num_images, initial, config_data["budget"], quota=args.quota)
    config = config_from_dict(config_data)
    names = ([s.strip() for s in args.strategies.split(",") if s.strip()]
             if args.strategies else [config.strategy])
    results = simharness.run_simulation(
        spec, config, names, initial_fraction=initial_fraction, gamma=gamma)
    report = {
        "pool_spec": dataclasses.asdict(spec),
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "initial_fraction": initial_fraction,
        "gamma": gamma,
        "strategies": {name: [dataclasses.asdict(m) for m in rounds]
                       for name, rounds in results.items()},
        "final": {name: dataclasses.asdict(rounds[-1]) if rounds else None
                  for name, rounds in results.items()},
    }
    _write_json(args.out, report)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["round", "strategy", "metric", "value"])
            writer.writerows(simharness.metrics_to_rows(results))
    print(f"simulated {len(names)} strategies x {config.rounds} rounds -> {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    violations = scan_violations(args.input)
    for violation in violations:
        print(violation)
    print(f"{len(violations)} violations")
    return EXIT_OK if not violations else EXIT_VIOLATIONS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taudis",
        description="Batch selection for instance-segmentation active learning.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="per-instance and per-image uncertainty table")
    p_score.add_argument("input", help="predictions JSONL (.gz accepted)")
    p_score.add_argument("--out", required=True, help="output CSV path")
    p_score.set_defaults(func=cmd_score)

    p_select = sub.add_parser("select", help="run one selection round")
    p_select.add_argument("input", help="predictions JSONL (.gz accepted)")
    p_select.add_argument("--labeled", help="newline-delimited labeled image ids")
    p_select.add_argument("--out", required=True, help="manifest JSON path")
    p_select.add_argument("--round", type=int, default=0,
                          help="round index recorded in the manifest")
    _add_config_flags(p_select)
    p_select.set_defaults(func=cmd_select)

    p_cover = sub.add_parser("cover", help="solve a max k-cover problem file")
    p_cover.add_argument("problem", help="cover problem JSON")
    p_cover.add_argument("--k", type=int, help="number of subsets to pick")
    p_cover.add_argument("--algo", default="lazy",
                         choices=("greedy", "lazy", "partitioned", "brute"))
    p_cover.add_argument("--partitions", type=int, default=4)
    p_cover.add_argument("--seed", type=int, default=0)
    p_cover.add_argument("--out", help="solution JSON path")
    p_cover.add_argument("--dump-problem", dest="dump_problem",
                         help="echo the normalized problem JSON to this path")
    p_cover.set_defaults(func=cmd_cover)

    p_sim = sub.add_parser("simulate", help="multi-round synthetic simulation")
    p_sim.add_argument("--pool-spec", dest="pool_spec", required=True,
                       help="synthetic pool spec JSON")
    p_sim.add_argument("--strategies",
                       help="comma-separated strategy names (default: config strategy)")
    p_sim.add_argument("--rounds", type=int,
                       help="rounds to run (default: until 90%% labeled)")
    p_sim.add_argument("--quota", type=float, default=0.9,
                       help="labeled fraction targeted by the default round count")
    p_sim.add_argument("--initial-fraction", dest="initial_fraction",
                       type=float,
                       help="fraction of images labeled before round 0 "
                            "(default 0.25)")
    p_sim.add_argument("--gamma", type=float,
                       help="per-labeled-instance uncertainty decay in (0, 1), "
                            "default 0.7")
    p_sim.add_argument("--out", required=True, help="metrics JSON path")
    p_sim.add_argument("--csv", help="flat metrics CSV path")
    _add_config_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_val = sub.add_parser("validate", help="check a predictions file")
    p_val.add_argument("input", help="predictions JSONL (.gz accepted)")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IngestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, MissingEmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
