"""Command line entry point.

Subcommands: gen, group, esvm, colabel, run, eval, cv. Exit codes: 0 on
success, 2 for configuration errors, 3 for data errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, esvm, grouping, io, kernels, pipeline, synthgen
from .core import Partition
from .errors import ConfigError, CoparseError, DataError


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> pipeline.Config:
    cfg = pipeline.Config() if args.config is None else pipeline.Config.from_json(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


def _run_meta(config: pipeline.Config, extra: dict) -> dict:
    import numpy
    import scipy
    return {
        "config": config.to_dict(),
        "versions": {
            "coparse": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "numba_enabled": kernels.NUMBA_ENABLED,
        },
        **extra,
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.spec is None:
        spec = synthgen.default_scene_spec()
    else:
        try:
            doc = json.loads(Path(args.spec).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read scene spec: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scene spec is not valid JSON: {exc}") from exc
        try:
            labels = tuple(synthgen.LabelSpec(
                name=l["name"],
                location_mean=tuple(l["location_mean"]),
                location_sigma=l["location_sigma"],
                color=tuple(l["color"]),
                color_sigma=l.get("color_sigma", 12.0),
                size_range=tuple(l.get("size_range", (0.18, 0.30))),
            ) for l in doc.pop("labels"))
            for key in ("shapes_per_image", "shape_kinds"):
                if key in doc:
                    doc[key] = tuple(doc[key])
            spec = synthgen.SceneSpec(labels=labels, **doc)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad scene spec: {exc}") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    corpus = synthgen.generate(spec, args.n)
    manifest = io.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.images)} images to {manifest}")
    return 0


def cmd_group(args) -> int:
    corpus = io.load_corpus(args.manifest)
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image in corpus.images:
        instance = grouping.instance_for_image(image, [])
        solution = grouping.solve_multicut(instance, config.theta)
        region_map = solution.partition.assignment[image.superpixel_map]
        io.write_pgm16(out / f"{image.id}.regions.pgm", region_map)
        _dump_json(out / f"{image.id}.group.json", {
            "objective": solution.objective,
            "K": solution.partition.k,
            "mask_active": list(solution.mask_active),
        })
        print(f"{image.id}: K={solution.partition.k} objective={solution.objective:.6f}")
    return 0


def cmd_esvm(args) -> int:
    corpus = io.load_corpus(args.manifest)
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phase1 = pipeline.run_cosegmentation(corpus, config)
    with open(out / "exemplars.jsonl", "w") as f:
        for exemplar in phase1.exemplars:
            f.write(json.dumps(esvm.exemplar_to_json(exemplar), sort_keys=True) + "\n")
    _dump_json(out / "propagations.json",
               [esvm.propagation_to_json(p) for p in phase1.propagations])
    for image in corpus.images:
        region_map = phase1.partitions[image.id].assignment[image.superpixel_map]
        io.write_pgm16(out / f"{image.id}.regions.pgm", region_map)
    _dump_json(out / "run-meta.json", _run_meta(config, {
        "phase1_iterations": phase1.iteration_count,
        "phase1_converged": phase1.converged,
    }))
    print(f"phase I: {len(phase1.exemplars)} exemplars, "
          f"{len(phase1.propagations)} propagations, "
          f"{phase1.iteration_count} iterations")
    return 0


def _partitions_from_dir(corpus, phase1_dir: Path) -> dict[str, Partition]:
    partitions = {}
    for image in corpus.images:
        path = phase1_dir / f"{image.id}.regions.pgm"
        if not path.exists():
            raise DataError(f"missing region map {path}")
        region_map = io.read_pgm(path)
        if region_map.shape != image.superpixel_map.shape:
            raise DataError(f"{path}: region map shape mismatch")
        # the region index at any one pixel of a superpixel is its assignment
        flat_sp = image.superpixel_map.ravel()
        order = np.argsort(flat_sp, kind="stable")
        first = np.searchsorted(flat_sp[order], np.arange(flat_sp.max() + 1))
        partitions[image.id] = Partition.from_assignment(
            region_map.ravel()[order[first]])
    return partitions


def cmd_colabel(args) -> int:
    corpus = io.load_corpus(args.manifest)
    config = _load_config(args)
    phase1_dir = Path(args.phase1)
    partitions = _partitions_from_dir(corpus, phase1_dir)
    exemplars = []
    exemplar_path = phase1_dir / "exemplars.jsonl"
    if exemplar_path.exists():
        with open(exemplar_path) as f:
            exemplars = [esvm.exemplar_from_json(json.loads(line))
                         for line in f if line.strip()]
    propagations = []
    prop_path = phase1_dir / "propagations.json"
    if prop_path.exists():
        propagations = [esvm.propagation_from_json(doc)
                        for doc in json.loads(prop_path.read_text())]
    train_corpus = corpus if args.train_manifest is None else io.load_corpus(args.train_manifest)
    model = pipeline.train_label_model(train_corpus, [r.id for r in train_corpus.images])
    phase1 = pipeline.Phase1Result(partitions=partitions, exemplars=exemplars,
                                   propagations=propagations, iteration_count=0,
                                   converged=True, fixed_point=True)
    phase2 = pipeline.run_colabeling(corpus, phase1, model, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image_id, label_map in sorted(phase2.label_maps.items()):
        io.write_pgm16(out / f"{image_id}.labels.pgm", label_map)
    _dump_json(out / "energy.json", {
        "total_energy": phase2.total_energy,
        "per_image_energy": dict(sorted(phase2.per_image_energy.items())),
    })
    print(f"co-labeling energy {phase2.total_energy:.6f} over {len(phase2.label_maps)} images")
    return 0


def cmd_run(args) -> int:
    corpus = io.load_corpus(args.manifest)
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labeled_ids = [rec.id for rec in corpus.images if rec.ground_truth is not None]
    if not labeled_ids:
        raise DataError("run requires ground truth for label-model training")
    model = pipeline.train_label_model(corpus, labeled_ids)
    phase1 = pipeline.run_cosegmentation(corpus, config)
    phase2 = pipeline.run_colabeling(corpus, phase1, model, config)
    for image_id, label_map in sorted(phase2.label_maps.items()):
        io.write_pgm16(out / f"{image_id}.labels.pgm", label_map)
    metrics = pipeline.evaluate(phase2.label_maps, corpus, labeled_ids)
    _dump_json(out / "metrics.json", metrics.to_dict())
    _dump_json(out / "run-meta.json", _run_meta(config, {
        "phase1_iterations": phase1.iteration_count,
        "phase1_converged": phase1.converged,
        "phase2_sweeps": phase2.sweeps,
        "total_energy": phase2.total_energy,
        "note": "metrics are in-sample (model trained on this corpus); use cv for held-out numbers",
    }))
    print(f"aPA={metrics.apa:.4f} mAGR={metrics.magr:.4f} "
          f"(phase I {phase1.iteration_count} iters)")
    return 0


def cmd_eval(args) -> int:
    corpus = io.load_corpus(args.manifest)
    pred_dir = Path(args.pred)
    predictions = {}
    for image in corpus.images:
        path = pred_dir / f"{image.id}.labels.pgm"
        if not path.exists():
            raise DataError(f"missing prediction {path}")
        predictions[image.id] = io.read_pgm(path)
    metrics = pipeline.evaluate(predictions, corpus)
    _dump_json(args.out, metrics.to_dict())
    print(f"aPA={metrics.apa:.4f} mAGR={metrics.magr:.4f}")
    return 0


def cmd_cv(args) -> int:
    corpus = io.load_corpus(args.manifest)
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = pipeline.cross_validate(corpus, config)
    for image_id, label_map in sorted(result.label_maps.items()):
        io.write_pgm16(out / f"{image_id}.labels.pgm", label_map)
    _dump_json(out / "metrics.json", {
        "aPA_mean": result.apa_mean,
        "aPA_std": result.apa_std,
        "mAGR_mean": result.magr_mean,
        "mAGR_std": result.magr_std,
        "folds": [{
            "fold": o.fold,
            "test_ids": list(o.test_ids),
            "metrics": o.metrics.to_dict(),
            "phase1_iterations": o.phase1_iterations,
            "phase1_converged": o.phase1_converged,
        } for o in result.folds],
    })
    _dump_json(out / "run-meta.json", _run_meta(config, {}))
    print(f"cv aPA={result.apa_mean:.4f}±{result.apa_std:.4f} "
          f"mAGR={result.magr_mean:.4f}±{result.magr_std:.4f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coparse",
                                     description="Joint co-segmentation and co-labeling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--spec", default=None, help="scene spec JSON (default: built-in)")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("group", help="one grouping pass per image, no propagation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("esvm", help="run Phase I and export exemplars/propagations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_esvm)

    p = sub.add_parser("colabel", help="Phase II from stored Phase I outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--phase1", required=True, help="directory written by 'esvm'")
    p.add_argument("--train-manifest", default=None,
                   help="corpus used to fit the label model (default: --manifest)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_colabel)

    p = sub.add_parser("run", help="both phases end to end on one corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score stored label maps against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_cv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CoparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
