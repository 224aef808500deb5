"""Command-line entry point: evaluate, morphometry, study and phantom subcommands."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import Table
from .errors import SegmorphError
from .io import load_labelmap, save_labelmap
from .manifest import load_manifest
from .metrics import WHOLE_BRAIN, evaluate_pair
from .morphometry import fractal_dimension, volume_ml
from .phantom import (
    SHAPES,
    PerturbationSpec,
    make_cube,
    make_line,
    make_menger,
    make_plane,
    make_sphere,
    perturb,
)
from .pipeline import EXIT_FATAL, EXIT_OK, run_study
from .reports import emit_reports, table_csv
from .volume import (
    CONNECTIVITIES,
    LabelMap3D,
    extract_mask,
    load_label_dictionary,
    nonzero_mask,
    subtract_labels,
)

log = logging.getLogger("segmorph")

EVAL_METRICS = ("dice", "iou", "hd95", "nmi", "volume", "fd")
_RECORD_FIELD = {"dice": "dice", "iou": "iou", "hd95": "hd95_mm", "nmi": "nmi",
                 "volume": "volume_ml", "fd": "fd"}


def _id_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()] if text else []


def _metric_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in EVAL_METRICS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"metrics must be drawn from {','.join(EVAL_METRICS)}")
    return [m for m in EVAL_METRICS if m in names]


def _write_table(table: Table, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{table.name}.csv"
    path.write_bytes(table_csv(table).encode("utf-8"))
    return path


def cmd_evaluate(args) -> int:
    ref = load_labelmap(args.reference)
    cand = load_labelmap(args.candidate)
    dictionary = load_label_dictionary(args.labels)
    records = evaluate_pair(ref, cand, dictionary, args.connectivity, csf_ids=args.csf,
                            fd="fd" in args.metrics)
    cols = [_RECORD_FIELD[m] for m in args.metrics]
    table = Table("evaluation", ("structure", "label_id", *cols, "flags"))
    for r in records:
        table.add(structure=r.structure_name, label_id=r.label_id,
                  flags=";".join(r.flags), **{c: getattr(r, c) for c in cols})
    print(_write_table(table, Path(args.out)))
    return EXIT_OK


def cmd_morphometry(args) -> int:
    lm = load_labelmap(args.input)
    dictionary = load_label_dictionary(args.labels)
    want_volume = args.volume or not args.fd
    cols = ["structure", "label_id", "voxels"]
    if want_volume:
        cols.append("volume_ml")
    if args.fd:
        cols += ["fd", "fd_r_squared", "fd_scales", "fd_window_lo", "fd_window_hi"]
    cols.append("flags")
    table = Table("morphometry", tuple(cols))
    masks = [(e.name, e.label_id, extract_mask(lm, {e.label_id})) for e in dictionary.entries]
    masks.append((WHOLE_BRAIN, None, nonzero_mask(subtract_labels(lm, args.csf))))
    for name, label_id, mask in masks:
        row = {"structure": name, "label_id": label_id, "voxels": mask.voxel_count}
        flags = []
        if want_volume:
            row["volume_ml"] = volume_ml(mask)
        if args.fd and not mask.empty:
            try:
                fit = fractal_dimension(mask)
                lo, hi = fit.window
                row.update(fd=fit.fd, fd_r_squared=fit.r_squared, fd_scales=fit.n_scales_used,
                           fd_window_lo=int(fit.series.scales[lo]), fd_window_hi=int(fit.series.scales[hi]))
                if fit.degenerate:
                    flags.append("degenerate")
                if fit.anisotropic:
                    flags.append("anisotropic")
            except SegmorphError as exc:
                flags.append(f"fd_unavailable:{type(exc).__name__}")
        row["flags"] = ";".join(flags)
        table.add(**row)
    print(_write_table(table, Path(args.out)))
    return EXIT_OK


def cmd_study(args) -> int:
    m = load_manifest(args.manifest)
    changes = {}
    if args.pool_hemispheres:
        changes["pool_hemispheres"] = True
    if args.no_fd:
        changes["fd_enabled"] = False
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if changes:
        m = m.replace(**changes)
    report = run_study(m, threads=args.threads)
    for path in emit_reports(report, args.out):
        print(path)
    for f in report.failures:
        print(f"skipped {f.subject_id} {f.session_id}: {f.error}".rstrip(), file=sys.stderr)
    if report.n_subjects == 0:
        print("no subjects were evaluated", file=sys.stderr)
    return report.exit_code


def cmd_phantom(args) -> int:
    n = args.size
    if args.shape == "menger":
        mask = make_menger(args.level)
    elif args.shape == "sphere":
        radius = args.radius if args.radius is not None else (n - 1) / 2.0
        mask = make_sphere(n, radius, margin=args.margin)
    else:
        maker = {"cube": make_cube, "plane": make_plane, "line": make_line}[args.shape]
        mask = maker(n, margin=args.margin)
    if args.perturb:
        mask = perturb(mask, PerturbationSpec.parse(args.perturb))
    save_labelmap(LabelMap3D(mask.bits.astype(np.uint8), mask.spacing, f"phantom:{args.shape}"), args.out)
    print(f"{args.out}: {mask.voxel_count} voxels")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segmorph", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evaluate", help="compare one candidate segmentation against a reference")
    e.add_argument("--reference", required=True)
    e.add_argument("--candidate", required=True)
    e.add_argument("--labels", required=True, help="label dictionary JSON")
    e.add_argument("--connectivity", choices=CONNECTIVITIES, default="face6")
    e.add_argument("--metrics", type=_metric_list, default=list(EVAL_METRICS[:4]),
                   help="comma list from " + ",".join(EVAL_METRICS))
    e.add_argument("--csf", type=_id_list, default=[], help="comma list of label ids removed from the whole brain")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("morphometry", help="per-structure volume and fractal dimension")
    m.add_argument("--input", required=True)
    m.add_argument("--labels", required=True)
    m.add_argument("--fd", action="store_true")
    m.add_argument("--volume", action="store_true")
    m.add_argument("--csf", type=_id_list, default=[])
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_morphometry)

    s = sub.add_parser("study", help="run a manifest-driven cohort analysis")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pool-hemispheres", action="store_true")
    s.add_argument("--no-fd", action="store_true")
    s.add_argument("--alpha", type=float)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_study)

    ph = sub.add_parser("phantom", help="write a synthetic label map")
    ph.add_argument("--shape", choices=SHAPES, required=True)
    ph.add_argument("--size", type=int, default=32)
    ph.add_argument("--level", type=int, default=3, help="Menger sponge level")
    ph.add_argument("--radius", type=float, help="sphere radius in voxels")
    ph.add_argument("--margin", type=int, default=2)
    ph.add_argument("--perturb", help="dilate:N, erode:N[:full26] or flip:RATE[:SEED][:CONN]")
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=cmd_phantom)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SegmorphError, OSError, ValueError) as exc:
        print(f"segmorph: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
