"""Command line entry point: ``panfuse {fuse,eval,proposals,synth}``.

Exit status is 0 on success, 1 on invalid input or usage, 2 on malformed files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import io
from .core import FormatError, PanfuseError, ValidationError, argmax_map, normalize_scores
from .exchange import Connectivity, ExchangeConfig, expand_boxes, extract_things_clusters, propose_boxes
from .fusion import FusionConfig, fuse, stuff_threshold
from .metrics import accumulate, report, tree_reduce
from .profiles import PROFILES, get_profile
from .synth import SceneSpec, generate_scene

log = logging.getLogger("panfuse")

EXIT_OK, EXIT_INVALID, EXIT_FORMAT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a fraction: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fuse", help="merge semantic scores and instance masks into a panoptic map")
    f.add_argument("--semantic", required=True, type=Path, help="H x W x C PSTF score tensor")
    f.add_argument("--instances", required=True, type=Path, help="instance manifest JSON")
    f.add_argument("--catalog", type=Path, help="catalog JSON (defaults to the profile's)")
    f.add_argument("--profile", choices=sorted(PROFILES))
    f.add_argument("--alpha", type=float, help="stuff substitution threshold (default 0.25)")
    f.add_argument("--stuff-fraction", type=_fraction, help="e.g. 1/512 (default)")
    f.add_argument("--mask-threshold", type=float, default=0.5)
    f.add_argument("--min-confidence", type=float, default=0.5)
    f.add_argument("--out", required=True, type=Path, help="output directory")

    e = sub.add_parser("eval", help="compute PQ/SQ/RQ over matching PNG stems")
    e.add_argument("--pred", required=True, type=Path)
    e.add_argument("--gt", required=True, type=Path)
    e.add_argument("--catalog", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--jobs", type=int, default=1)

    r = sub.add_parser("proposals", help="things-cluster boxes from a semantic score tensor")
    r.add_argument("--semantic", required=True, type=Path)
    r.add_argument("--catalog", required=True, type=Path)
    r.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    r.add_argument("--min-area", type=int, default=16)
    r.add_argument("--instances", type=Path, help="manifest whose boxes should be expanded")
    r.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("synth", help="write a synthetic scene and its ground truth")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--instances", type=int, required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--profile", choices=sorted(PROFILES), default="cityscapes")
    s.add_argument("--name", default="scene", help="file stem of the written scene")
    s.add_argument("--out", required=True, type=Path)
    return p


def fusion_config(args) -> FusionConfig:
    """Profile values first, explicit flags override them."""
    kw = dict(alpha=args.alpha, stuff_fraction=args.stuff_fraction,
              mask_bin_threshold=args.mask_threshold, min_confidence=args.min_confidence)
    if args.profile:
        return FusionConfig.from_profile(args.profile, **kw)
    return FusionConfig(**{k: v for k, v in kw.items() if v is not None})


def _catalog(args):
    if args.catalog is not None:
        return io.read_catalog(args.catalog)
    if getattr(args, "profile", None):
        return get_profile(args.profile).catalog()
    raise UsageError("--catalog is required unless --profile is given")


def cmd_fuse(args) -> int:
    catalog = _catalog(args)
    config = fusion_config(args)
    scores = io.read_semantic(args.semantic, catalog)
    instances = io.read_manifest(args.instances)
    log.info("effective stuff threshold: %d px (f=%s on %dx%d), alpha=%g",
             stuff_threshold(config.stuff_fraction, scores.height, scores.width),
             config.stuff_fraction, scores.height, scores.width, config.alpha)
    pmap = fuse(scores, instances, catalog, config)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / f"{args.semantic.stem}.png"
    io.write_panoptic(pmap, out)
    print(f"wrote {out} ({len(pmap.segments)} segments)")
    return EXIT_OK


def _stems(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return {p.stem: p for p in d.glob("*.png")}


def evaluate_dirs(pred_dir: Path, gt_dir: Path, catalog, jobs: int = 1):
    preds, gts = _stems(pred_dir), _stems(gt_dir)
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise ValidationError(f"unpaired files: {missing}")
    stems = sorted(preds)

    def one(stem):
        return accumulate(io.read_panoptic(preds[stem]), io.read_panoptic(gts[stem]), catalog)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        stats = list(pool.map(one, stems))
    return report(tree_reduce(stats), catalog), len(stems)


def cmd_eval(args) -> int:
    catalog = _catalog(args)
    rep, n = evaluate_dirs(args.pred, args.gt, catalog, args.jobs)
    args.out.write_text(rep.to_json())
    print(f"{n} images  PQ {rep.pq:.2f}  SQ {rep.sq:.2f}  RQ {rep.rq:.2f}  "
          f"PQ_th {rep.pq_things:.2f}  PQ_st {rep.pq_stuff:.2f}")
    return EXIT_OK


def cmd_proposals(args) -> int:
    catalog = _catalog(args)
    scores = normalize_scores(io.read_semantic(args.semantic, catalog))
    config = ExchangeConfig(Connectivity(args.connectivity), args.min_area)
    clusters = extract_things_clusters(argmax_map(scores), catalog, config)
    doc = {
        "image": {"height": scores.height, "width": scores.width},
        "connectivity": args.connectivity,
        "min_cluster_area": args.min_area,
        "proposals": [{"class_id": cid, "box": box.as_list(), "area": c.area}
                      for (cid, box), c in zip(propose_boxes(clusters), clusters)],
    }
    if args.instances is not None:
        instances = io.read_manifest(args.instances)
        doc["expanded"] = [
            {"detection": i, "class_id": det.class_id,
             "original": det.box.as_list(), "box": box.as_list()}
            for i, (det, box) in enumerate(zip(instances.detections,
                                               expand_boxes(instances, clusters)))]
    args.out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {len(clusters)} proposals to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    prof = get_profile(args.profile)
    catalog = prof.catalog()
    scene = generate_scene(SceneSpec(args.seed, args.height, args.width,
                                     args.instances, args.noise, catalog))
    write_scene(scene, args.out, args.name)
    print(f"wrote scene {args.name!r} to {args.out}")
    return EXIT_OK


def write_scene(scene, out: Path, name: str = "scene") -> None:
    """Layout: catalog.json, <name>.pstf, <name>.instances.json, masks/, gt/<name>.png."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    io.write_catalog(scene.catalog, out / "catalog.json")
    io.write_semantic(scene.semantic, out / f"{name}.pstf")
    io.write_manifest(scene.instances, out / f"{name}.instances.json")
    io.write_panoptic(scene.gt, out / "gt" / f"{name}.png")


COMMANDS = {"fuse": cmd_fuse, "eval": cmd_eval, "proposals": cmd_proposals, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (PanfuseError, UsageError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
