"""Command line entry point: ``deeptraj {flow,traj,canvas,synth,train,eval}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import cnn, fileio
from .canvas import normalize, render_canvas, resize_bilinear
from .dataset import (SynthSpec, VideoRecord, class_names, read_manifest, split_dataset,
                      synth_generate, write_manifest)
from .errors import DataError
from .evaluation import evaluate, fit, report
from .flow import compute_flow
from .pipeline import PipelineConfig, format_config, load_config, run_pipeline, video_trajectories

log = logging.getLogger("deeptraj")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _record(args):
    return VideoRecord(args.frames, args.masks, label="-")


def cmd_flow(args, cfg):
    prev = fileio.read_image(args.prev)
    nxt = fileio.read_image(args.next)
    flow = compute_flow(prev, nxt, cfg.flow)
    if args.mask:
        flow = flow.masked(fileio.read_image(args.mask))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_flo(out, flow)
    if args.plot:
        from .plotting import plot_flow
        plot_flow(flow, out.with_suffix(".png"))
    log.info("wrote %s", out)


def cmd_traj(args, cfg):
    (h, w), plan, per_segment = video_trajectories(_record(args), cfg)
    trajs = [tr for seg in per_segment for tr in seg]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_trajectories(out, trajs)
    if args.plot:
        from .plotting import plot_trajectories
        plot_trajectories(trajs, w, h, out.with_suffix(".png"))
    log.info("wrote %d trajectories over %d segments to %s", len(trajs), plan.n, out)


def cmd_canvas(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.traj:
        if args.width is None or args.height is None:
            raise UsageError("--traj needs --width and --height")
        raw = render_canvas(fileio.read_trajectories(args.traj), args.width, args.height)
        stack = np.stack([normalize(resize_bilinear(raw, cfg.canvas_size, cfg.canvas_size))])
    elif args.frames:
        stack = run_pipeline(_record(args), cfg)
    else:
        raise UsageError("give --frames or --traj")
    for s, img in enumerate(stack):
        fileio.write_image(out / f"canvas_{s}.{args.format}", img)
        fileio.write_canvas_raw(out / f"canvas_{s}.dtc", img)
    np.save(out / "stack.npy", stack)
    if args.plot:
        from .plotting import plot_stack
        plot_stack(stack, out / "stack.png")
    log.info("wrote %d canvases to %s", len(stack), out)


def cmd_synth(args, cfg):
    spec = SynthSpec(
        class_count=args.classes,
        sequences_per_class=args.per_class,
        frame_count=args.frames,
        frame_size=args.size,
        noise=args.noise,
        speed=args.speed,
        seed=cfg.seed,
    )
    records = synth_generate(spec, args.out)
    log.info("wrote %d sequences and %s", len(records), Path(args.out) / "manifest.tsv")


def _split(records, args, cfg):
    if all(r.split != "unassigned" for r in records):
        return records
    return split_dataset(records, per_class_train=args.per_class_train, seed=cfg.seed,
                         train_fraction=args.train_fraction)


def cmd_train(args, cfg):
    records = _split(read_manifest(args.manifest), args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "splits.tsv", records)
    train = [r for r in records if r.split == "train"]
    classes = class_names(records)

    def progress(epoch, model, loss):
        log.info("epoch %d loss %.5f", epoch + 1, loss)

    model, losses, classes = fit(train, cfg, classes=classes, cache_dir=args.cache, jobs=args.jobs,
                                 callback=progress)
    cnn.save_model(model, out / "model.dtrj")
    (out / "classes.txt").write_text("\n".join(classes) + "\n", encoding="utf-8")
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    with open(out / "losses.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\n")
        for e, loss in enumerate(losses, 1):
            fh.write(f"{e}\t{loss!r}\n")
    if args.plot:
        from .plotting import plot_losses
        plot_losses(losses, out / "loss.png")
    log.info("trained on %d videos; model in %s", len(train), out / "model.dtrj")


def cmd_eval(args, cfg):
    records = _split(read_manifest(args.manifest), args, cfg)
    test = [r for r in records if r.split == "test"]
    model_path = Path(args.model)
    model = cnn.load_model(model_path)
    classes_file = Path(args.classes) if args.classes else model_path.with_name("classes.txt")
    if classes_file.exists():
        classes = classes_file.read_text(encoding="utf-8").split()
    else:
        classes = class_names(records)
    if len(classes) != model.config.class_count:
        raise DataError(f"{len(classes)} class names for a {model.config.class_count}-class model")
    result = evaluate(model, test, cfg, classes, cache_dir=args.cache, jobs=args.jobs)
    report(result, args.out, figures=args.plot)
    print(f"accuracy {result.accuracy:.4f}  error rate {result.error_rate:.4f}  ({len(test)} test videos)")


def build_parser():
    parser = _Parser(prog="deeptraj", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value pipeline configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--no-plot", dest="plot", action="store_false", help="skip matplotlib figures")
        return p

    p = common(sub.add_parser("flow", help="optical flow between two frames (.flo)"))
    p.add_argument("--prev", required=True)
    p.add_argument("--next", required=True)
    p.add_argument("--mask", help="foreground mask of the first frame")
    p.set_defaults(func=cmd_flow)

    p = common(sub.add_parser("traj", help="filtered trajectories of a frame directory (CSV)"))
    p.add_argument("--frames", required=True)
    p.add_argument("--masks")
    p.set_defaults(func=cmd_traj)

    p = common(sub.add_parser("canvas", help="texture images for a video or a trajectory CSV"))
    p.add_argument("--frames")
    p.add_argument("--masks")
    p.add_argument("--traj")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--format", choices=("pgm", "png"), default="png")
    p.set_defaults(func=cmd_canvas)

    p = common(sub.add_parser("synth", help="generate a synthetic labelled motion corpus"))
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--frames", type=int, default=18)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--speed", type=float, default=2.0)
    p.set_defaults(func=cmd_synth)

    for name, fn, helptext in (("train", cmd_train, "train the network on a manifest's training split"),
                               ("eval", cmd_eval, "evaluate a model on a manifest's test split")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--manifest", required=True)
        p.add_argument("--per-class-train", type=int, default=6)
        p.add_argument("--train-fraction", type=float, default=None)
        p.add_argument("--cache", help="directory for cached texture stacks")
        p.add_argument("--jobs", type=int, default=1)
        if name == "eval":
            p.add_argument("--model", required=True)
            p.add_argument("--classes", help="class list (default: classes.txt next to the model)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except UsageError as exc:
        print(f"deeptraj {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"deeptraj {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
