"""Command-line entry point.

Every stage reads its inputs from and writes its outputs to a work
directory, so any stage can be rerun (or its outputs replaced) on its own::

    cishmap mask     --slide slide.png --workdir run
    cishmap tile     --slide slide.png --workdir run
    cishmap train    --workdir run
    cishmap encode   --workdir run
    cishmap cluster  --workdir run
    cishmap render   --workdir run
    cishmap pipeline --slide slide.png --workdir run   # all of the above

Configuration comes from ``--config FILE`` (flat ``key = value`` lines)
plus ``--set key=value`` and the dedicated flags; flags win.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, config, fcm, kernels, masking, model, render, synthetic, tiling
from .errors import CishError

logger = logging.getLogger("cishmap")

FILES = {
    "mask": "mask.png",
    "tiles_manifest": "tiles.jsonl",
    "tiles_data": "tiles.bin",
    "model": "model.cae",
    "model_graph": "model.dot",
    "loss": "loss.csv",
    "latents": "latents.csv",
    "memberships": "memberships.csv",
    "clusters": "clusters.json",
    "classmap": "classmap.png",
    "scatter": "scatter.svg",
    "loss_svg": "loss.svg",
    "sweep": "fpc_sweep.csv",
    "sweep_svg": "fpc_sweep.svg",
    "optimizers": "optimizers.csv",
    "optimizers_svg": "optimizers.svg",
    "losses": "loss_compare.csv",
    "losses_svg": "loss_compare.svg",
    "losses_json": "loss_compare.json",
    "noconv": "noconv_loss.csv",
    "noconv_svg": "noconv_loss.svg",
}


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


class Run:
    """Resolved config, work directory and bookkeeping for one invocation."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.workdir = Path(cfg["paths.workdir"])
        self.timings = {}
        self.outputs = []

    def path(self, key):
        return self.workdir / FILES[key]

    def wrote(self, *paths):
        self.outputs.extend(str(p) for p in paths)

    def stage(self, name, fn):
        t0 = time.perf_counter()
        try:
            fn(self)
        except (CishError, ValueError, OSError) as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = round(time.perf_counter() - t0, 3)

    def finish(self):
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise StageError(self.command, f"declared outputs not written: {missing}")
        (self.workdir / "config.resolved.txt").write_text(config.dumps(self.cfg))
        manifest = {
            "tool": "cishmap",
            "version": __version__,
            "command": self.command,
            "seed": self.cfg["train.seed"],
            "config_sha256": config.digest(self.cfg),
            "kernel_backend": kernels.backend_name(),
            "timings_s": self.timings,
            "outputs": self.outputs,
        }
        with open(self.workdir / f"manifest.{self.command}.json", "w") as fh:
            json.dump(manifest, fh, indent=2)


# -- helpers -----------------------------------------------------------------

def _require(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path}")


def _fmt(v):
    return "%.9g" % v


def _fmt_u(v):
    return repr(float(v))


def _mask_params(cfg):
    return masking.MaskParams(
        downscale=cfg["mask.downscale"], sigma=cfg["mask.sigma"],
        erosion_radius=cfg["mask.erosion_radius"], dark_tissue=cfg["mask.dark_tissue"])


def _tile_spec(cfg):
    return tiling.TileSpec(cfg["tile.side"], cfg["tile.stride"], cfg["tile.min_tissue_fraction"])


def _arch(cfg, variant="full"):
    side = cfg["tile.side"]
    slope = cfg["train.leaky_slope"]
    if variant == "noconv":
        return model.ArchSpec(variant="noconv", input_side=side, channels=(1,), pools=(),
                              leaky_slope=slope)
    if side == 300:
        return model.ArchSpec(leaky_slope=slope)
    return model.ArchSpec.reduced(side, leaky_slope=slope)


def _train_config(cfg, optimizer=None, loss=None):
    hyper = {}
    if cfg["train.lr"] != "default":
        try:
            hyper["lr"] = float(cfg["train.lr"])
        except ValueError:
            raise config.ConfigError(f"bad value {cfg['train.lr']!r} for train.lr") from None
    return model.TrainConfig(
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch"],
        optimizer=optimizer or cfg["train.optimizer"], hyper=hyper,
        loss=loss or cfg["train.loss"], seed=cfg["train.seed"])


def _slide(run):
    path = run.cfg["paths.slide"]
    if not path:
        raise FileNotFoundError("no slide given (use --slide or paths.slide)")
    _require(path, "slide image")
    return masking.load_image(path, run.cfg["mask.scale_um_per_px"])


def _tiles(run):
    _require(run.path("tiles_manifest"), "tile manifest (run `tile` first)")
    _require(run.path("tiles_data"), "tile data (run `tile` first)")
    return tiling.load_tiles(run.path("tiles_manifest"), run.path("tiles_data"))


def _write_history(path, history, header=("epoch", "loss")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, v in enumerate(history, 1):
            w.writerow([i, repr(float(v))])


def _read_history(path):
    with open(path, newline="") as fh:
        return [float(r["loss"]) for r in csv.DictReader(fh)]


def read_latents(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = [int(r["tile_id"]) for r in rows]
    xy = np.array([[int(r["x"]), int(r["y"])] for r in rows], dtype=np.int64).reshape(-1, 2)
    z = np.array([[float(r["z1"]), float(r["z2"])] for r in rows]).reshape(-1, 2)
    return ids, xy, z


def read_memberships(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    c = len(header) - 2
    ids = [int(r[0]) for r in rows]
    u = np.array([[float(v) for v in r[1:1 + c]] for r in rows]).reshape(-1, c)
    return ids, u


# -- stages ------------------------------------------------------------------

def stage_mask(run):
    slide = _slide(run)
    mask, info = masking.build_mask(slide, _mask_params(run.cfg))
    info.update(width=slide.width, height=slide.height,
                tissue_pixels=int(mask.bits.sum()))
    run.workdir.mkdir(parents=True, exist_ok=True)
    masking.save_mask(mask, run.path("mask"), info)
    run.wrote(run.path("mask"), run.workdir / "mask.json")


def stage_tile(run):
    slide = _slide(run)
    _require(run.path("mask"), "mask (run `mask` first)")
    mask = masking.load_mask(run.path("mask"), slide.scale)
    tiles = tiling.extract_tiles(slide, mask, _tile_spec(run.cfg))
    if not tiles:
        raise ValueError("no tiles pass the tissue-fraction threshold")
    tiling.save_tiles(tiles, run.path("tiles_manifest"), run.path("tiles_data"),
                      run.cfg["tile.side"])
    logger.info("kept %d tiles", len(tiles))
    run.wrote(run.path("tiles_manifest"), run.path("tiles_data"))


def stage_train(run):
    _, pixels = _tiles(run)
    net = model.build_model(_arch(run.cfg), seed=run.cfg["train.seed"])
    history = model.train(net, pixels, _train_config(run.cfg))
    model.save_model(net, run.path("model"))
    run.path("model_graph").write_text(model.describe_model(net))
    _write_history(run.path("loss"), history)
    run.wrote(run.path("model"), run.path("model_graph"), run.path("loss"))


def stage_encode(run):
    records, pixels = _tiles(run)
    _require(run.path("model"), "model (run `train` first)")
    net = model.load_model(run.path("model"))
    z = model.encode_tiles(net, pixels, run.cfg["train.batch"])
    with open(run.path("latents"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tile_id", "x", "y", "z1", "z2"])
        for rec, (a, b) in zip(records, z):
            w.writerow([rec["id"], rec["x"], rec["y"], _fmt(a), _fmt(b)])
    run.wrote(run.path("latents"))


def _fcm_config(cfg, c=None):
    return fcm.FcmConfig(c=c or cfg["fcm.c"], m=cfg["fcm.m"], tol=cfg["fcm.tol"],
                         max_iter=cfg["fcm.max_iter"], seed=cfg["fcm.seed"])


def stage_cluster(run):
    _require(run.path("latents"), "latent codes (run `encode` first)")
    ids, _, z = read_latents(run.path("latents"))
    res = fcm.fcm_fit(z, _fcm_config(run.cfg))
    c = res.u.shape[1]
    with open(run.path("memberships"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tile_id"] + [f"u_{j + 1}" for j in range(c)] + ["argmax_class"])
        for tid, row in zip(ids, res.u):
            w.writerow([tid] + [_fmt_u(v) for v in row] + [int(row.argmax()) + 1])
    summary = {
        "c": c, "m": res.m, "iterations": res.iterations, "fpc": res.fpc,
        "centroids": res.centroids.tolist(),
    }
    with open(run.path("clusters"), "w") as fh:
        json.dump(summary, fh, indent=2)
    run.wrote(run.path("memberships"), run.path("clusters"))


def stage_render(run):
    for key, what in (("mask", "mask"), ("tiles_manifest", "tile manifest"),
                      ("latents", "latent codes"), ("memberships", "memberships"),
                      ("clusters", "cluster summary")):
        _require(run.path(key), what)
    with Image.open(run.path("mask")) as im:
        width, height = im.size
    records = tiling.read_manifest(run.path("tiles_manifest"))
    pos = {r["id"]: (r["x"], r["y"]) for r in records}
    ids, u = read_memberships(run.path("memberships"))
    _, _, z = read_latents(run.path("latents"))
    with open(run.path("clusters")) as fh:
        centroids = np.array(json.load(fh)["centroids"])
    palette = render.Palette.parse(run.cfg["render.palette"], u.shape[1])
    render.render_classmap(run.path("classmap"), width, height, [pos[i] for i in ids], u,
                           run.cfg["tile.side"], palette)
    render.render_scatter(run.path("scatter"), z, u, centroids, palette)
    run.wrote(run.path("classmap"), run.path("scatter"))
    if run.path("loss").exists():
        render.render_loss_curve(run.path("loss_svg"), _read_history(run.path("loss")))
        run.wrote(run.path("loss_svg"))


def stage_sweep(run, lo, hi):
    _require(run.path("latents"), "latent codes (run `encode` first)")
    _, _, z = read_latents(run.path("latents"))
    rows = fcm.sweep(z, range(lo, hi + 1), _fcm_config(run.cfg))
    with open(run.path("sweep"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c", "fpc"])
        for c, v in rows:
            w.writerow([c, repr(v)])
    run.wrote(run.path("sweep"))


def _compare(run, runs, csv_key, svg_key, title):
    _, pixels = _tiles(run)
    histories = {}
    finals = {}
    for label, arch, tc in runs:
        logger.info("training %s", label)
        net = model.build_model(arch, seed=run.cfg["train.seed"])
        histories[label] = model.train(net, pixels, tc)
        recon = np.concatenate([net.forward(pixels[i:i + tc.batch_size])
                                for i in range(0, len(pixels), tc.batch_size)])
        net.clear()
        finals[label] = {"final_mse": model.nn.mse_loss(recon, pixels),
                         "final_mae": model.nn.mae_loss(recon, pixels)}
    labels = list(histories)
    with open(run.path(csv_key), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + labels)
        for i in range(len(histories[labels[0]])):
            w.writerow([i + 1] + [repr(histories[k][i]) for k in labels])
    run.wrote(run.path(csv_key))
    if len(histories[labels[0]]) >= 2:
        render.render_loss_curve(run.path(svg_key), histories, title=title)
        run.wrote(run.path(svg_key))
    return finals


def stage_compare_optimizers(run):
    arch = _arch(run.cfg)
    runs = [(name, arch, _train_config(run.cfg, optimizer=name))
            for name in ("adam", "rmsprop", "adagrad", "adadelta")]
    _compare(run, runs, "optimizers", "optimizers_svg", "Loss by optimizer")


def stage_compare_loss(run):
    arch = _arch(run.cfg)
    runs = [(name, arch, _train_config(run.cfg, loss=name)) for name in ("mse", "mae")]
    finals = _compare(run, runs, "losses", "losses_svg", "MSE- vs MAE-trained loss")
    with open(run.path("losses_json"), "w") as fh:
        json.dump(finals, fh, indent=2)
    run.wrote(run.path("losses_json"))


def stage_ablate_noconv(run):
    runs = [("noconv", _arch(run.cfg, "noconv"), _train_config(run.cfg))]
    _, pixels = _tiles(run)
    net = model.build_model(runs[0][1], seed=run.cfg["train.seed"])
    history = model.train(net, pixels, runs[0][2])
    _write_history(run.path("noconv"), history)
    curves = {"without convolution": history}
    if run.path("loss").exists():
        curves["full model"] = _read_history(run.path("loss"))
    render.render_loss_curve(run.path("noconv_svg"), curves,
                             title="Loss without convolution")
    run.wrote(run.path("noconv"), run.path("noconv_svg"))


PIPELINE = [("mask", stage_mask), ("tile", stage_tile), ("train", stage_train),
            ("encode", stage_encode), ("cluster", stage_cluster), ("render", stage_render)]


def gen_synthetic(out, width, height, seed):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    slide = synthetic.make_slide(width, height, seed)
    Image.fromarray(slide.to_uint8(), mode="L").save(out / "slide.png")
    Image.fromarray(slide.truth, mode="L").save(out / "truth.png")
    return out / "slide.png"


# -- argument parsing --------------------------------------------------------

FLAG_KEYS = {
    "slide": "paths.slide",
    "workdir": "paths.workdir",
    "epochs": "train.epochs",
    "batch": "train.batch",
    "optimizer": "train.optimizer",
    "loss": "train.loss",
    "seed": "train.seed",
    "clusters": "fcm.c",
    "fuzziness": "fcm.m",
}


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="flat key = value config file")
    g.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config key (repeatable)")
    g.add_argument("--slide", help="slide image, 8-bit gray or RGB PNG (paths.slide)")
    g.add_argument("--workdir", help="directory for stage artifacts (paths.workdir)")
    g.add_argument("--seed", type=int, help="training seed (train.seed)")
    g.add_argument("--epochs", type=int, help="training epochs (train.epochs)")
    g.add_argument("--batch", type=int, help="batch size (train.batch)")
    g.add_argument("--optimizer", choices=["adam", "rmsprop", "adagrad", "adadelta"],
                   help="optimizer (train.optimizer)")
    g.add_argument("--loss", choices=["mse", "mae"], help="training loss (train.loss)")
    g.add_argument("--clusters", type=int, help="number of fuzzy clusters (fcm.c)")
    g.add_argument("--fuzziness", type=float, help="fuzziness exponent m (fcm.m)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


COMMANDS = {
    "mask": "build the tissue mask",
    "tile": "cut overlapping tiles from tissue",
    "train": "train the autoencoder on the tiles",
    "encode": "write 2-value latent codes for all tiles",
    "cluster": "fuzzy c-means on the latent codes",
    "render": "class map PNG, latent scatter SVG, loss curve SVG",
    "pipeline": "mask, tile, train, encode, cluster and render in one go",
    "sweep-c": "partition coefficient for a range of cluster counts",
    "compare-optimizers": "train with Adam, RMSprop, Adagrad and Adadelta",
    "compare-loss": "train with MSE and with MAE",
    "ablate-noconv": "train the linear-only model and plot its loss",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cishmap", description="Unsupervised class maps for CISH whole-slide images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common()
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "sweep-c":
            p.add_argument("--from", dest="c_from", type=int, default=2, help="first c (default 2)")
            p.add_argument("--to", dest="c_to", type=int, default=10, help="last c (default 10)")
    # no help= keeps it out of the command listing
    g = sub.add_parser("gen-synthetic")
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=int, default=2400)
    g.add_argument("--height", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args):
    overrides = [config.parse_assignment(s) for s in args.set]
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, str(value)))
    return config.load(args.config, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-synthetic":
        path = gen_synthetic(args.out, args.width, args.height, args.seed)
        print(path)
        return 0
    try:
        cfg = resolve_config(args)
    except (config.ConfigError, OSError) as exc:
        print(f"cishmap: error: {exc}", file=sys.stderr)
        return 2
    run = Run(cfg, args.command)
    run.workdir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "pipeline":
            for name, fn in PIPELINE:
                run.stage(name, fn)
        elif args.command == "sweep-c":
            if args.c_from < 2 or args.c_to < args.c_from:
                raise StageError("sweep-c", "need 2 <= --from <= --to")
            run.stage("sweep-c", lambda r: stage_sweep(r, args.c_from, args.c_to))
        else:
            fn = dict(PIPELINE).get(args.command) or {
                "compare-optimizers": stage_compare_optimizers,
                "compare-loss": stage_compare_loss,
                "ablate-noconv": stage_ablate_noconv,
            }[args.command]
            run.stage(args.command, fn)
        run.finish()
    except StageError as exc:
        print(f"cishmap: error in {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
