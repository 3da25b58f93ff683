"""``hetgraph`` command line: dataset tools, HET building, area maps, training, evaluation, analysis."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("threshold must lie in (0, 1]")
    return v


def _dump_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- dataset -------------------------------------------------------------------

def cmd_dataset_filter(args) -> int:
    from .data import filter_vocabulary, load_caption_triplets, load_dataset, save_dataset
    ds = load_dataset(args.input)
    caps = load_caption_triplets(args.captions) if args.captions else []
    out = filter_vocabulary(ds, args.k_obj, args.k_pred, args.extra_obj, args.extra_pred, caps)
    save_dataset(out, args.out)
    print(f"kept {len(out.scenes)}/{len(ds.scenes)} images, {out.vocab.num_classes} classes, "
          f"{out.vocab.num_predicates - 1} predicates")
    return 0


def cmd_dataset_tag_keys(args) -> int:
    from .data import (Dataset, key_relation_subset, load_caption_triplets, load_dataset,
                       save_dataset, tag_key_relations)
    ds = load_dataset(args.input)
    scenes = tag_key_relations(ds.scenes, load_caption_triplets(args.captions), ds.vocab, args.strict)
    if args.key_only:
        scenes = key_relation_subset(scenes)
    save_dataset(Dataset(scenes, ds.vocab, ds.root), args.out)
    n_key = sum(r.is_key for s in scenes for r in s.relations)
    print(f"{n_key} key relations over {len(scenes)} images")
    return 0


def cmd_dataset_split(args) -> int:
    from .data import Dataset, load_dataset, save_dataset, split_dataset
    ds = load_dataset(args.input)
    train, test = split_dataset(ds.scenes, args.ratio, args.seed)
    save_dataset(Dataset(train, ds.vocab, ds.root), args.train_out)
    save_dataset(Dataset(test, ds.vocab, ds.root), args.test_out)
    print(f"train {len(train)}, test {len(test)}")
    return 0


def cmd_dataset_synth(args) -> int:
    from dataclasses import replace
    from .data import save_dataset
    from .maps import write_saliency
    from .synth import SynthConfig, generate_dataset
    cfg = SynthConfig(num_classes=args.classes, num_predicates=args.predicates, depth=args.depth,
                      min_entities=args.min_entities, max_entities=args.max_entities,
                      feature_dim=args.feature_dim, world_seed=args.world_seed)
    ds = generate_dataset(cfg, args.count, args.seed, args.prefix)
    out = Path(args.out)
    sal_dir = out.parent / (out.stem + "_saliency")
    sal_dir.mkdir(parents=True, exist_ok=True)
    scenes = []
    for s in ds.scenes:
        rel = f"{sal_dir.name}/{s.image_id}.txt"
        write_saliency(out.parent / rel, s.saliency)
        scenes.append(replace(s, saliency_path=rel))
    ds.scenes = scenes
    save_dataset(ds, out)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


# -- structure / maps -------------------------------------------------------------

def cmd_build_het(args) -> int:
    from .data import load_dataset
    from .het import Strategy, build_het
    ds = load_dataset(args.input)
    trees = []
    for s in ds.scenes:
        t = build_het(s, args.threshold, Strategy.parse(args.strategy))
        trees.append({"id": s.image_id, **t.to_json(), "maxDepth": t.max_depth()})
    _dump_json({"images": trees}, args.out)
    return 0


def cmd_area_map(args) -> int:
    from .data import load_dataset
    from .maps import compute_area_map, write_saliency
    ds = load_dataset(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in ds.scenes:
        write_saliency(out / f"{s.image_id}.txt", compute_area_map(s))
    print(f"wrote {len(ds.scenes)} area maps to {out}")
    return 0


# -- train / eval ------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    base = RunConfig.desk() if args.preset == "desk" else RunConfig()
    if args.config:
        base = load_config(args.config, base)
    overrides = {k: getattr(args, k) for k in ("steps", "lr", "seed", "batch", "protocol", "pairs",
                                               "threshold", "strategy", "eval_every")
                 if getattr(args, k, None) is not None}
    if args.rrm is not None:
        overrides["rrm"] = args.rrm
    return base.replace(**overrides).validate()


def cmd_train(args) -> int:
    from .data import carve_validation, load_dataset
    from .training import train_loop
    cfg = _run_config(args)
    ds = load_dataset(args.train, feature_dim=cfg.visual_dim)
    if args.val:
        train, val = ds.scenes, load_dataset(args.val, feature_dim=cfg.visual_dim).scenes
    else:
        train, val = carve_validation(ds.scenes)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None

    def on_event(ev):
        line = json.dumps(ev, sort_keys=True)
        if log_fh:
            log_fh.write(line + "\n")
        if not args.quiet:
            print(line)

    try:
        res = train_loop(train, cfg, ds.vocab.num_classes, ds.vocab.num_predicates, val,
                         checkpoint=args.checkpoint, on_event=on_event)
    finally:
        if log_fh:
            log_fh.close()
    print(f"checkpoint {res.checkpoint} (best step {res.best_step})")
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .evaluation import evaluate, write_report
    from .training import load_model
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data, feature_dim=model.cfg.visual_dim)
    proposals = None
    if args.proposals:
        proposals = {s.image_id: s for s in load_dataset(args.proposals,
                                                         feature_dim=model.cfg.visual_dim).scenes}
    report = evaluate(model, ds.scenes, args.protocol, args.pairs, args.k, args.kr,
                      not args.no_graph_constraint, proposals)
    report["checkpoint"] = Path(args.checkpoint).name
    write_report(report, args.report)
    for rule, vals in report["metrics"].items():
        print(rule, " ".join(f"{k}={'n/a' if v is None else f'{v:.4f}'}" for k, v in vals.items()))
    return 0


# -- analysis ----------------------------------------------------------------------

def _predictions(args):
    from .data import load_dataset
    from .evaluation import predict_scenes
    from .training import load_model
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data, feature_dim=model.cfg.visual_dim)
    prepared = [model.prepare(s, args.protocol) for s in ds.scenes]
    preds = predict_scenes(model, ds.scenes, args.protocol, args.pairs, prepared=prepared)
    return preds, [p.tree for p in prepared]


def cmd_depth_dist(args) -> int:
    from .analysis import depth_distribution, write_curve_csv
    preds, trees = _predictions(args)
    dist = depth_distribution(preds, trees, args.top)
    _dump_json({"top": args.top, "pairs": args.pairs,
                "distribution": [{"depths": list(k), "share": v} for k, v in dist.items()]}, args.out)
    if args.csv:
        write_curve_csv([(a, b, v) for (a, b), v in dist.items()], args.csv,
                        header=("d_min", "d_max", "share"))
    return 0


def cmd_conf_by_depth(args) -> int:
    from .analysis import confidence_by_depth, write_curve_csv
    preds, trees = _predictions(args)
    conf = confidence_by_depth(preds, trees, args.samples, args.repeats, args.seed)
    _dump_json({"samplesPerDepth": args.samples, "repeats": args.repeats, "seed": args.seed,
                "depths": {str(d): v for d, v in conf.items()}}, args.out)
    if args.csv:
        write_curve_csv([(d, v["mean"], v["sd"]) for d, v in conf.items()], args.csv,
                        header=("depth", "mean_phi", "sd_phi"))
    return 0


def cmd_cs_curve(args) -> int:
    from .analysis import bin_curve, cs_samples, write_curve_csv
    from .data import load_dataset
    ds = load_dataset(args.data)
    samples = cs_samples(ds.scenes, args.saliency_threshold, args.variant)
    curve = bin_curve(samples, args.bins, args.mode)
    _dump_json({"variant": args.variant, "bins": args.bins, "mode": args.mode,
                "numSamples": len(samples), "curve": [list(p) for p in curve]}, args.out)
    if args.csv:
        write_curve_csv(curve, args.csv)
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetgraph", description=__doc__)
    p.add_argument("--version", action="version", version=f"hetgraph {__version__}")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (HETGRAPH_THREADS overrides)")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset preparation").add_subparsers(dest="action", required=True)
    f = ds.add_parser("filter", help="keep the most frequent classes and predicates")
    f.add_argument("--input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--captions", help="caption triplets (JSON lines) for the extra classes")
    f.add_argument("--k-obj", type=int, default=150)
    f.add_argument("--k-pred", type=int, default=50)
    f.add_argument("--extra-obj", type=int, default=50)
    f.add_argument("--extra-pred", type=int, default=30)
    f.set_defaults(func=cmd_dataset_filter)

    t = ds.add_parser("tag-keys", help="flag relations mentioned in captions as key")
    t.add_argument("--input", required=True)
    t.add_argument("--captions", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--strict", action="store_true", help="also require the predicate lemma to match")
    t.add_argument("--key-only", action="store_true", help="drop images without key relations")
    t.set_defaults(func=cmd_dataset_tag_keys)

    s = ds.add_parser("split", help="seeded train/test split")
    s.add_argument("--input", required=True)
    s.add_argument("--ratio", type=float, default=0.7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-out", required=True)
    s.add_argument("--test-out", required=True)
    s.set_defaults(func=cmd_dataset_split)

    y = ds.add_parser("synth", help="generate synthetic nested scenes")
    y.add_argument("--out", required=True)
    y.add_argument("--count", type=int, default=100)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--world-seed", type=int, default=11)
    y.add_argument("--prefix", default="synth")
    y.add_argument("--classes", type=int, default=8)
    y.add_argument("--predicates", type=int, default=5)
    y.add_argument("--depth", type=int, default=3)
    y.add_argument("--min-entities", type=int, default=5)
    y.add_argument("--max-entities", type=int, default=10)
    y.add_argument("--feature-dim", type=int, default=32)
    y.set_defaults(func=cmd_dataset_synth)

    b = sub.add_parser("build-het", help="build hierarchical entity trees")
    b.add_argument("--input", required=True)
    b.add_argument("--threshold", type=_unit, default=0.9)
    b.add_argument("--strategy", choices=("ifs", "afs"), default="ifs")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_het)

    a = sub.add_parser("area-map", help="write per-image area maps as text grids")
    a.add_argument("--input", required=True)
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_area_map)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--train", required=True)
    tr.add_argument("--val", help="validation set (default: carve from the training set)")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--preset", choices=("desk", "paper"), default="desk")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--eval-every", type=int)
    tr.add_argument("--protocol", choices=("predcls", "sgcls", "sggen"))
    tr.add_argument("--pairs", choices=("ep", "sp"))
    tr.add_argument("--threshold", type=_unit)
    tr.add_argument("--strategy", choices=("ifs", "afs"))
    tr.add_argument("--rrm", dest="rrm", action="store_true", default=None)
    tr.add_argument("--no-rrm", dest="rrm", action="store_false")
    tr.add_argument("--log", help="JSON-lines training log")
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--protocol", choices=("predcls", "sgcls", "sggen"), default="predcls")
    ev.add_argument("--pairs", choices=("ep", "sp"), default="ep")
    ev.add_argument("--k", type=_ints, default=(20, 50, 100))
    ev.add_argument("--kr", type=_ints, default=(1, 5))
    ev.add_argument("--proposals", help="detections dataset for sggen")
    ev.add_argument("--no-graph-constraint", action="store_true")
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=cmd_eval)

    an = sub.add_parser("analyze", help="diagnostic analyses").add_subparsers(dest="action", required=True)
    for name, func, helptext in (("depth-dist", cmd_depth_dist, "depth tuples of top relations"),
                                 ("conf-by-depth", cmd_conf_by_depth, "mean phi per relation depth")):
        q = an.add_parser(name, help=helptext)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--data", required=True)
        q.add_argument("--protocol", choices=("predcls", "sgcls"), default="predcls")
        q.add_argument("--pairs", choices=("ep", "sp"), default="ep")
        q.add_argument("--out", required=True)
        q.add_argument("--csv")
        if name == "depth-dist":
            q.add_argument("--top", type=int, default=5)
        else:
            q.add_argument("--samples", type=int, default=200)
            q.add_argument("--repeats", type=int, default=5)
            q.add_argument("--seed", type=int, default=0)
        q.set_defaults(func=func)
    c = an.add_parser("cs-curve", help="cognitive saliency against an indicator")
    c.add_argument("--data", required=True)
    c.add_argument("--variant", choices=("phi", "phi_prime"), default="phi_prime")
    c.add_argument("--saliency-threshold", type=float, default=0.5)
    c.add_argument("--bins", type=int, default=50)
    c.add_argument("--mode", choices=("equal-count", "equal-width"), default="equal-count")
    c.add_argument("--out", required=True)
    c.add_argument("--csv")
    c.set_defaults(func=cmd_cs_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = int(os.environ.get("HETGRAPH_THREADS", args.threads))
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=max(1, threads)):
            return args.func(args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"hetgraph: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
