"""Command-line entry point: ``spine3d <subcommand> ...``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage error.
Every report is JSON; figures are PNG files written next to the report.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cobb3d, curve_recon, imageio, metrics, synth_oracle
from .tensor_core import Tensor, no_grad

logger = logging.getLogger("spine3d")

IMAGE_SIZE = (320, 160)
SEVERITY_LABELS = tuple(level.label for level in cobb3d.SeverityLevel)


class UsageError(Exception):
    pass


def worker_count() -> int:
    """Worker cap from ``SPINE3D_THREADS`` (default 1)."""
    raw = os.environ.get("SPINE3D_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SPINE3D_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SPINE3D_THREADS must be >= 1")
    return n


def _undefined(obj):
    """Render metric ``None`` entries as the explicit marker "undefined"."""
    if isinstance(obj, dict):
        return {k: _undefined(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_undefined(v) for v in obj]
    return "undefined" if obj is None else obj


# ---------------------------------------------------------------------------
# assess


@dataclass
class AssessReport:
    inputs: dict
    maps: dict
    result: cobb3d.CobbResult | None = None
    baseline_2d: cobb3d.CobbResult | None = None
    timing_s: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> dict:
        out = {"inputs": self.inputs, "maps": self.maps}
        if self.result is not None:
            out["severity"] = self.result.severity.label
            out["cobb3d"] = self.result.to_json()
            out["cobb2d_pa"] = self.baseline_2d.to_json() if self.baseline_2d else None
        else:
            out["error"] = self.error
        out["timing_s"] = {k: round(v, 4) for k, v in self.timing_s.items()}
        return out


def load_view(path, maps_only: bool, size=IMAGE_SIZE) -> np.ndarray:
    h, w = size
    if maps_only:
        return imageio.resize(imageio.read_gray(path), h, w, nearest=True)
    return imageio.resize(imageio.read_rgb(path), h, w)


def generate_maps(pa_rgb: np.ndarray, lat_rgb: np.ndarray, config, params) -> tuple[np.ndarray, np.ndarray]:
    from .euformer.model import generator_forward

    with no_grad():
        out = [generator_forward(Tensor(img[None]), config, params, view=v).data[0, ..., 0]
               for img, v in ((pa_rgb, "PA"), (lat_rgb, "LAT"))]
    return out[0], out[1]


def assess_maps(pa_map: np.ndarray, lat_map: np.ndarray, degree: int = curve_recon.DEFAULT_DEGREE,
                threshold: float = curve_recon.DEFAULT_THRESHOLD):
    """Extract, fit, fuse and measure: returns (curve, 3D result, PA-only 2D result)."""
    pa = curve_recon.fit_curve(curve_recon.extract_curve(pa_map, threshold, "PA"), degree)
    lat = curve_recon.fit_curve(curve_recon.extract_curve(lat_map, threshold, "LAT"), degree)
    curve = curve_recon.reconstruct3d(pa, lat)
    result = cobb3d.assess_curve(curve)
    baseline = cobb3d.cobb2d(pa, result.landmarks_z[1:-1], curve.z_range)
    return curve, result, baseline


def assess_pipeline(pa_img: np.ndarray, lat_img: np.ndarray, params=None, config=None, *,
                    maps_only: bool = False, degree: int = curve_recon.DEFAULT_DEGREE):
    """Full pipeline on in-memory images; returns (report, pa_map, lat_map, curve).

    Geometry failures (empty curve, insufficient overlap) are captured in
    the report's ``error`` and leave ``result`` unset.
    """
    timing = {}
    t0 = time.perf_counter()
    if maps_only:
        pa_map, lat_map = pa_img, lat_img
    else:
        if params is None or config is None:
            raise ValueError("generator parameters are required unless maps_only is set")
        pa_map, lat_map = generate_maps(pa_img, lat_img, config, params)
        timing["generator"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    report = AssessReport({}, {}, timing_s=timing)
    curve = None
    try:
        curve, report.result, report.baseline_2d = assess_maps(pa_map, lat_map, degree)
    except (curve_recon.EmptyCurveError, curve_recon.OverlapError, curve_recon.FitError) as exc:
        report.error = str(exc)
    timing["geometry"] = time.perf_counter() - t1
    timing["total"] = time.perf_counter() - t0
    return report, pa_map, lat_map, curve


def cmd_assess(args) -> int:
    from .euformer.checkpoint import load_checkpoint

    if not args.maps_only and not args.params:
        raise UsageError("assess needs --params unless --maps-only is given")
    size = (args.height, args.width)
    pa = load_view(args.pa, args.maps_only, size)
    lat = load_view(args.lat, args.maps_only, size)
    params = config = None
    if not args.maps_only:
        ckpt = load_checkpoint(args.params)
        params, config = ckpt.generator, ckpt.config
        if size[0] % config.divisor or size[1] % config.divisor:
            raise UsageError(f"image size {size} must be divisible by {config.divisor}")
    report, pa_map, lat_map, curve = assess_pipeline(pa, lat, params, config, maps_only=args.maps_only,
                                                     degree=args.degree)
    out = Path(args.out)
    report.inputs = {"pa": str(args.pa), "lat": str(args.lat),
                     "params": None if args.maps_only else str(args.params), "maps_only": bool(args.maps_only)}
    if args.maps_only:
        report.maps = {"pa": str(args.pa), "lat": str(args.lat)}
    else:
        imageio.write_gray(out / "pa.pgm", pa_map)
        imageio.write_gray(out / "lat.pgm", lat_map)
        report.maps = {"pa": str(out / "pa.pgm"), "lat": str(out / "lat.pgm")}
    if curve is not None and not args.no_figures:
        from .plotting import plot_curve

        plot_curve(curve, report.result, out / "curve.png")
    doc = report.to_json()
    imageio.write_json(out / "report.json", doc)
    print(json.dumps(doc, separators=(",", ":")))
    if report.result is None:
        print(f"error: {report.error}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# synth


def _write_one(job) -> dict:
    out, i, spine, h, w, thickness, seed = job
    return synth_oracle.write_case(Path(out) / synth_oracle.case_name(i), spine, h, w, thickness, seed=seed)


def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    spines = synth_oracle.dataset_spines(args.n, args.seed, args.severity)
    jobs = [(args.out, i, s, args.height, args.width, args.thickness, args.seed * 7919 + i) for i, s in enumerate(spines)]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            truths = list(pool.map(_write_one, jobs))
    else:
        truths = [_write_one(j) for j in jobs]
    summary = {"n": len(truths), "out": str(args.out),
               "severity_counts": {lab: sum(t["severity"] == lab for t in truths) for lab in SEVERITY_LABELS}}
    print(json.dumps(summary, separators=(",", ":")))
    return 0


# ---------------------------------------------------------------------------
# grade, flops


def cmd_grade(args) -> int:
    if not args.angle >= 0:
        raise UsageError("--angle must be a non-negative number of degrees")
    print(json.dumps({"severity": cobb3d.grade(args.angle).label}, separators=(",", ":")))
    return 0


def cmd_flops(args) -> int:
    from .euformer.flops import flops_attention

    if min(args.h, args.w, args.c, args.heads) < 1 or args.c % args.heads:
        raise UsageError("--h, --w, --c, --heads must be positive with heads dividing c")
    ch = flops_attention(args.h, args.w, args.c, args.heads, "channel")
    sp = flops_attention(args.h, args.w, args.c, args.heads, "spatial")
    print(json.dumps({"h": args.h, "w": args.w, "c": args.c, "heads": args.heads,
                      "channel": ch, "spatial": sp, "ratio": ch / sp}, separators=(",", ":")))
    return 0


# ---------------------------------------------------------------------------
# eval


def _case_dirs(root: Path) -> list[Path]:
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("case_"))


def _evaluate_case(job) -> dict:
    pred_dir, truth_dir, threshold = job
    truth = imageio.read_json(truth_dir / "truth.json")
    row = {"case": truth_dir.name, "truth_angle_deg": truth["analytic_angle_deg"], "truth_grade": truth["severity"]}
    ious, dices = [], []
    for view in ("pa", "lat"):
        gt = imageio.read_gray(truth_dir / f"{view}.pgm")
        pred = imageio.read_gray(pred_dir / f"{view}.pgm")
        if pred.shape != gt.shape:
            pred = imageio.resize(pred, *gt.shape, nearest=True)
        iou, dice = metrics.iou_dice(pred, gt, threshold)
        row[f"iou_{view}"], row[f"dice_{view}"] = iou, dice
        ious.append(iou)
        dices.append(dice)
    row["iou"], row["dice"] = float(np.mean(ious)), float(np.mean(dices))
    report = pred_dir / "report.json"
    angle = imageio.read_json(report).get("cobb3d", {}).get("max_angle_deg") if report.exists() else None
    if angle is None:
        try:
            angle = assess_maps(imageio.read_gray(pred_dir / "pa.pgm"), imageio.read_gray(pred_dir / "lat.pgm"))[1].max_angle_deg
        except (curve_recon.EmptyCurveError, curve_recon.OverlapError, curve_recon.FitError):
            angle = None
    row["pred_angle_deg"] = angle
    row["pred_grade"] = cobb3d.grade(angle).label if angle is not None else None
    return row


def evaluate(pred_root: Path, truth_root: Path, threshold: float = metrics.DEFAULT_THRESHOLD):
    """Score every ``case_####`` under ``truth_root``; returns (report, rows, confusion)."""
    cases = _case_dirs(truth_root)
    if not cases:
        raise FileNotFoundError(f"no case_#### directories under {truth_root}")
    missing = [c.name for c in cases if not (pred_root / c.name).is_dir()]
    if missing:
        raise FileNotFoundError(f"predictions missing for {len(missing)} case(s): {', '.join(missing[:5])}")
    jobs = [(pred_root / c.name, c, threshold) for c in cases]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_evaluate_case, jobs))
    else:
        rows = [_evaluate_case(j) for j in jobs]

    graded = [r for r in rows if r["pred_grade"] is not None]
    idx = {lab: i for i, lab in enumerate(SEVERITY_LABELS)}
    cm = metrics.confusion([idx[r["pred_grade"]] for r in graded], [idx[r["truth_grade"]] for r in graded],
                           len(SEVERITY_LABELS), SEVERITY_LABELS)
    classification = {"confusion": cm.to_json(), "n_graded": len(graded), "n_failed": len(rows) - len(graded)}
    if cm.total:
        classification["per_class"] = metrics.metric_table(cm)
        try:
            classification["macro_avg_sensitivity"] = metrics.macro_avg_sensitivity(cm)
        except ValueError:
            classification["macro_avg_sensitivity"] = metrics.UNDEFINED
    segmentation = {key: metrics.summarize([r[key] for r in rows]) for key in ("iou", "dice")}
    report = {"n_cases": len(rows), "threshold": threshold, "segmentation": segmentation,
              "classification": classification, "cases": rows}
    return _undefined(report), rows, cm


CSV_COLUMNS = ("case", "truth_angle_deg", "pred_angle_deg", "truth_grade", "pred_grade", "iou", "dice")


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("undefined" if r.get(k) is None else r[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def cmd_eval(args) -> int:
    report, rows, cm = evaluate(Path(args.pred), Path(args.truth), args.threshold)
    text = imageio.dumps_json(report)
    if args.out:
        imageio.atomic_write_text(args.out, text)
        if not args.no_figures and cm.total:
            from .plotting import plot_confusion

            plot_confusion(cm, Path(args.out).with_suffix(".confusion.png"))
    if args.csv:
        csv_text = rows_to_csv(rows)
        if args.csv == "-":
            sys.stdout.write(csv_text)
        else:
            imageio.atomic_write_text(args.csv, csv_text)
    if not args.out and args.csv != "-":
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# train, gradcheck


def load_pairs(data: Path, h: int, w: int) -> list:
    from .euformer.config import TrainingPair

    pairs = []
    for case in _case_dirs(data):
        for view in ("pa", "lat"):
            rgb = imageio.resize(imageio.read_rgb(case / f"{view}_rgb.ppm"), h, w)
            cmap = imageio.resize(imageio.read_gray(case / f"{view}.pgm"), h, w)
            pairs.append(TrainingPair(rgb, cmap, view.upper()))
    if not pairs:
        raise FileNotFoundError(f"no case_#### directories under {data}")
    return pairs


def cmd_train(args) -> int:
    from .euformer.checkpoint import Checkpoint, save_checkpoint
    from .euformer.config import EUFormerConfig, TrainConfig
    from .euformer.train import train, write_history_csv

    gen_config = EUFormerConfig(scales=args.scales, base_channels=args.base_channels)
    if args.height % gen_config.divisor or args.width % gen_config.divisor:
        raise UsageError(f"--height/--width must be divisible by {gen_config.divisor}")
    pairs = load_pairs(Path(args.data), args.height, args.width)
    cfg = TrainConfig(learning_rate=args.lr, lr_decay_every=args.lr_decay_every, steps=args.steps,
                      batch_size=args.batch_size, seed=args.seed)
    t0 = time.perf_counter()
    result = train(pairs, gen_config, cfg, log_every=args.log_every)
    elapsed = time.perf_counter() - t0
    meta = {"steps": args.steps, "seed": args.seed, "train_size": [args.height, args.width],
            "pairs": len(pairs), "train_config": {k: v for k, v in vars(cfg).items() if k != "disc_channels"}}
    save_checkpoint(args.out, Checkpoint(gen_config, result.generator, result.discriminator, meta))
    out = Path(args.out)
    history_path = Path(args.history) if args.history else out.with_suffix(".losses.csv")
    write_history_csv(result.history, history_path)
    if not args.no_figures:
        from .plotting import plot_losses

        plot_losses(result.history, history_path.with_suffix(".png"))
    last = result.history.rows[-1]
    print(json.dumps({"checkpoint": str(out), "history": str(history_path), "seconds": round(elapsed, 2),
                      "final": last}, separators=(",", ":")))
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradsuite

    failed = 0
    for case in gradsuite.all_cases(args.seed):
        rep = gradsuite.run_case(case, h=args.h, tol=args.tol, seed=args.seed)
        status = "PASS" if rep.passed else "FAIL"
        failed += not rep.passed
        print(f"{status} {case.name} max_rel={rep.worst_rel_error:.3e} h={case.h or args.h:g} "
              f"coords={sum(rep.checked.values())}")
    print(f"{'FAIL' if failed else 'PASS'} gradient suite: {failed} failing case(s)")
    return 1 if failed else 0


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spine3d", description="3D spine curve assessment from orthogonal views.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--severity", choices=SEVERITY_LABELS, help="draw every case from one band")
    s.add_argument("--height", type=int, default=IMAGE_SIZE[0])
    s.add_argument("--width", type=int, default=IMAGE_SIZE[1])
    s.add_argument("--thickness", type=float, default=5.0)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("assess", help="generate curve maps and measure the 3D Cobb angle")
    a.add_argument("--pa", required=True)
    a.add_argument("--lat", required=True)
    a.add_argument("--params", help="generator checkpoint")
    a.add_argument("--out", required=True)
    a.add_argument("--maps-only", action="store_true", help="treat --pa/--lat as curve maps; skip the network")
    a.add_argument("--height", type=int, default=IMAGE_SIZE[0])
    a.add_argument("--width", type=int, default=IMAGE_SIZE[1])
    a.add_argument("--degree", type=int, default=curve_recon.DEFAULT_DEGREE)
    a.add_argument("--no-figures", action="store_true")
    a.set_defaults(func=cmd_assess)

    g = sub.add_parser("grade", help="severity grade of a Cobb angle")
    g.add_argument("--angle", type=float, required=True)
    g.set_defaults(func=cmd_grade)

    e = sub.add_parser("eval", help="overlap and grading metrics for a prediction directory")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", help="report path (default: stdout)")
    e.add_argument("--csv", help="per-case rows (angle, grade, iou, dice); '-' for stdout")
    e.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD)
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("train", help="desk-scale adversarial training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--height", type=int, default=64)
    t.add_argument("--width", type=int, default=32)
    t.add_argument("--scales", type=int, default=3)
    t.add_argument("--base-channels", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lr-decay-every", type=int, default=50, help="epochs between 10x learning-rate drops")
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--history", help="loss CSV path (default: <out>.losses.csv)")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("gradcheck", help="run the gradient suite")
    c.add_argument("--h", type=float, default=1e-4)
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("flops", help="channel vs spatial attention cost")
    f.add_argument("--h", type=int, required=True)
    f.add_argument("--w", type=int, required=True)
    f.add_argument("--c", type=int, required=True)
    f.add_argument("--heads", type=int, default=1)
    f.set_defaults(func=cmd_flops)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
