"""``pointattn`` command line: train, eval, predict, ablate, selfcheck.

Settings come from a flat ``key = value`` file (``--config``), then
``--set key=value`` pairs, then the dedicated flags; later sources win.
Log verbosity is read from ``POINTATTN_LOG`` (DEBUG, INFO, WARNING...).

Exit codes: 0 ok, 1 config error, 2 data error, 3 non-finite loss,
4 self-check failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autodiff as ad
from . import network as net
from . import pipeline as pl
from . import scenes as sc
from .cloud import FORMATS, CloudFormatError, PointCloud, load_cloud, save_labeled_cloud
from .selfcheck import FAULTS

log = logging.getLogger("pointattn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_SELFCHECK = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


# ---------------------------------------------------------------- schema


def _tuple(conv):
    def parse(v):
        v = v.strip()
        return tuple(conv(x) for x in v.replace(" ", ",").split(",") if x) if v else ()
    return parse


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _choice(*opts):
    def parse(v):
        if v not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return v
    return parse


def _psa(v):
    """``3,4,5``, ``2-6`` or ``none``."""
    v = v.strip().lower()
    if v in ("", "none"):
        return ()
    out = []
    for part in v.replace(" ", ",").split(","):
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v) if v else "none"
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: object
    help: str
    group: str


SCHEMA: Dict[str, Key] = {
    "preset": Key(_choice(*net.PRESETS), "desk", "network preset the network keys below refine", "network"),
    "n_points": Key(_tuple(int), None, "encoder point counts N1..N4", "network"),
    "widths": Key(_tuple(int), None, "channel widths C1..C7", "network"),
    "radii": Key(_tuple(float), None, "search radii of layers 1..4 (decoder mirrors them)", "network"),
    "search": Key(_choice(*net.SEARCH_METHODS), None, "neighbor search: multidir, knn or ball", "network"),
    "m": Key(int, None, "points per direction bin; K = 16 m for every method", "network"),
    "psa_layers": Key(_psa, None, "layers followed by an attention block, e.g. 3,4,5 or 2-6 or none", "network"),
    "num_classes": Key(int, None, "number of semantic classes", "network"),
    "in_channels": Key(int, None, "3 (xyz) or 6 (xyz + rgb)", "network"),
    "psa_max_points": Key(int, None, "largest point set an attention block accepts", "network"),
    "aggregate_offsets": Key(_bool, None, "aggregate W(h_j - h_i) instead of W h_j", "network"),
    "coord_features": Key(_bool, None, "feed source coordinates to layers 2..7", "network"),
    "input_scale": Key(float, None, "factor applied to coordinate features (geometry is unscaled)", "network"),
    "offset_layers": Key(_psa, None, "layers aggregating W(h_j - h_i), e.g. 1 or none", "network"),
    "block_size": Key(_tuple(float), (1.0, 1.0), "block footprint x,y in meters", "block"),
    "padding": Key(float, 0.25, "block padding on each side, meters", "block"),
    "stride": Key(float, 0.5, "sliding-window stride at inference, meters", "block"),
    "epochs": Key(int, 50, "training epochs", "optimizer"),
    "lr": Key(float, 3e-3, "initial learning rate", "optimizer"),
    "batch_size": Key(int, 4, "blocks per optimizer step", "optimizer"),
    "optimizer": Key(_choice("adam", "sgd"), "adam", "adam or sgd (with momentum beta1)", "optimizer"),
    "beta1": Key(float, 0.9, "Adam beta1 / SGD momentum", "optimizer"),
    "beta2": Key(float, 0.999, "Adam beta2", "optimizer"),
    "eps": Key(float, 1e-8, "Adam epsilon", "optimizer"),
    "decay_rate": Key(float, 0.7, "learning-rate decay factor", "optimizer"),
    "decay_step": Key(int, 40, "epochs between decays", "optimizer"),
    "class_weights": Key(_bool, False, "inverse-frequency class weights in the loss", "optimizer"),
    "resample": Key(_bool, True, "draw fresh block samples every epoch", "optimizer"),
    "augment": Key(_bool, True, "random tiling shift and z rotation when resampling", "optimizer"),
    "train_scenes": Key(int, 20, "synthetic training scenes (ablate, or train without data)", "corpus"),
    "test_scenes": Key(int, 5, "synthetic test scenes (ablate)", "corpus"),
    "scene_density": Key(float, 240.0, "synthetic surface density, points per square meter", "corpus"),
    "corpus_seed": Key(int, 1, "seed of the synthetic training corpus (test uses seed + 1)", "corpus"),
    "seed": Key(int, 0, "seed for initialization, sampling and augmentation", "run"),
    "data": Key(str, "", "training cloud file or recipe file", "paths"),
    "out": Key(str, "", "output path (checkpoint, CSV or labeled cloud)", "paths"),
}


def schema_help() -> str:
    lines = ["config keys (key = value; flags override the file):"]
    group = None
    for k, spec in SCHEMA.items():
        if spec.group != group:
            group = spec.group
            lines.append(f"  [{group}]")
        default = "from preset" if spec.default is None else _fmt(spec.default)
        lines.append(f"    {k:<18} {spec.help} (default: {default})")
    lines += ["", "environment: POINTATTN_LOG sets log verbosity (default WARNING)",
              "exit codes: 1 config, 2 data, 3 non-finite loss, 4 self-check failure"]
    return "\n".join(lines)


class RunConfig:
    """Validated flat settings; unknown keys are errors."""

    def __init__(self, values: Optional[dict] = None):
        self.values = {k: s.default for k, s in SCHEMA.items()}
        if values:
            self.update(values)

    def update(self, raw: dict, source="config"):
        for k, v in raw.items():
            if k not in SCHEMA:
                raise ConfigError(f"{source}: unknown key {k!r}")
            if v is None:
                continue
            if isinstance(v, str):
                try:
                    v = SCHEMA[k].parse(v)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{source}: bad value for {k!r}: {exc}") from None
            self.values[k] = v
        return self

    @classmethod
    def from_file(cls, path):
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = net.read_kv(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls().update(raw, source=str(path))

    def __getitem__(self, k):
        return self.values[k]

    def network(self) -> net.NetworkConfig:
        base = net.PRESETS[self["preset"]]
        kw = {k: self[k] for k in SCHEMA if SCHEMA[k].group == "network" and k != "preset"
              and self[k] is not None}
        try:
            return replace(base, **kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid network config: {exc}") from None

    def block_spec(self) -> pl.BlockSpec:
        size = self["block_size"]
        if len(size) == 1:
            size = (size[0], size[0])
        try:
            return pl.BlockSpec(tuple(size), self["padding"], self.network().n_points[0], self["stride"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_options(self) -> pl.TrainOptions:
        if self["epochs"] < 1 or self["batch_size"] < 1 or not self["lr"] > 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        return pl.TrainOptions(
            epochs=self["epochs"], lr=self["lr"], batch_size=self["batch_size"],
            beta1=self["beta1"], beta2=self["beta2"], eps=self["eps"], optimizer=self["optimizer"],
            decay_rate=self["decay_rate"], decay_step=self["decay_step"], seed=self["seed"],
            class_weights=self["class_weights"], resample=self["resample"], augment=self["augment"],
        )

    def validate(self):
        self.network()
        self.block_spec()
        self.train_options()
        return self

    def dump(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for k in SCHEMA:
                if k in ("data", "out"):
                    continue
                v = self[k]
                if v is None:
                    v = getattr(self.network(), k)
                fh.write(f"{k} = {_fmt(v)}\n")


# ---------------------------------------------------------------- data


def read_scenes(path, cfg: RunConfig) -> List[PointCloud]:
    """Cloud file (by extension) or a recipe file of synthetic scenes."""
    if not path:
        return sc.make_corpus(cfg["train_scenes"], cfg["corpus_seed"], density=cfg["scene_density"])
    if not os.path.exists(path):
        raise DataError(f"data path not found: {path}")
    ext = os.path.splitext(path)[1].lstrip(".").lower()
    try:
        if ext in FORMATS:
            return [load_cloud(path)]
        return sc.scenes_from_recipe_file(path)
    except (CloudFormatError, ValueError, TypeError) as exc:
        raise DataError(str(exc)) from None


def load_model(ckpt, cfg: RunConfig):
    """Checkpoint plus its sidecar config, with command-line overrides on top."""
    if not os.path.exists(ckpt):
        raise DataError(f"checkpoint not found: {ckpt}")
    try:
        arrays = ad.load_checkpoint(ckpt)
    except (ValueError, OSError) as exc:
        raise DataError(f"unreadable checkpoint {ckpt}: {exc}") from None
    config = cfg.network()
    store = ad.ParameterStore()
    for name, value in arrays.items():
        store.add(name, value)
    try:
        net.check_parameters(config, store)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config, store


def _metrics_rows(oa, miou, iou):
    rows = [("oa", oa), ("miou", miou)]
    rows += [(f"iou_class_{c}", float(v)) for c, v in enumerate(iou)]
    return rows


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands


def cmd_train(args, cfg: RunConfig) -> int:
    config, spec, opts = cfg.network(), cfg.block_spec(), cfg.train_options()
    scenes = read_scenes(cfg["data"], cfg)
    if any(s.labels is None for s in scenes):
        raise DataError("training data has no labels")
    if any(int(s.labels.max()) >= config.num_classes for s in scenes):
        raise DataError(f"labels exceed num_classes={config.num_classes}")
    out = cfg["out"] or "model.ckpt"

    def check(epoch, loss):
        if not math.isfinite(loss):
            raise NumericError(f"loss became {loss} at epoch {epoch + 1}")
        log.info("epoch %d loss %.5f", epoch + 1, loss)

    try:
        res = pl.train_model(scenes, config, spec, opts, callback=check)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    ad.save_checkpoint(res.store, out)
    cfg.dump(out + ".cfg")
    lrs = [ad.lr_decay(e, opts.lr, opts.decay_rate, opts.decay_step) for e in range(opts.epochs)]
    _write_rows(out + ".loss.csv", ["epoch", "loss", "lr"],
                [(e + 1, f"{l:.8f}", f"{r:.6g}") for e, (l, r) in enumerate(zip(res.losses, lrs))])
    oa, miou, iou = pl.evaluate(scenes, config, spec, res.store, cfg["seed"])
    print(f"trained {opts.epochs} epochs on {len(scenes)} scene(s) in {res.seconds:.1f}s")
    print(f"final loss {res.losses[-1]:.5f}  train OA {oa:.2f}  train mIoU {miou:.2f}")
    print(f"wrote {out}, {out}.cfg, {out}.loss.csv")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    config, store = load_model(args.checkpoint, cfg)
    spec = cfg.block_spec()
    scenes = read_scenes(args.scene, cfg)
    if any(s.labels is None for s in scenes):
        raise DataError(f"{args.scene} has no labels to evaluate against")
    oa, miou, iou = pl.evaluate(scenes, config, spec, store, cfg["seed"])
    print(f"{'metric':<12}{'value':>9}")
    print(f"{'OA':<12}{oa:>9.2f}")
    print(f"{'mIoU':<12}{miou:>9.2f}")
    for c, v in enumerate(iou):
        shown = "n/a" if np.isnan(v) else f"{100 * v:.2f}"
        print(f"{'IoU ' + str(c):<12}{shown:>9}")
    out = cfg["out"] or args.checkpoint + ".eval.csv"
    _write_rows(out, ["metric", "value"], [(k, f"{v:.6f}") for k, v in _metrics_rows(oa, miou, iou)])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    config, store = load_model(args.checkpoint, cfg)
    spec = cfg.block_spec()
    scenes = read_scenes(args.scene, cfg)
    if len(scenes) != 1:
        raise DataError(f"predict takes one scene, {args.scene} yields {len(scenes)}")
    out = cfg["out"]
    if not out:
        raise ConfigError("predict needs --out")
    pred = pl.sliding_window_predict(scenes[0], spec, config, store, cfg["seed"])
    save_labeled_cloud(scenes[0], pred.labels, out)
    print(f"wrote {scenes[0].num_points} labeled points to {out}")
    return EXIT_OK


def _parse_variant(text) -> pl.Variant:
    """``SEARCH[:M[:PSA]]``, e.g. ``knn``, ``multidir:2``, ``multidir:1:2-6``."""
    parts = text.split(":")
    try:
        search = _choice(*net.SEARCH_METHODS)(parts[0])
        m = int(parts[1]) if len(parts) > 1 and parts[1] else 1
        psa = _psa(parts[2]) if len(parts) > 2 else (3, 4, 5)
    except ValueError as exc:
        raise ConfigError(f"bad --variant {text!r}: {exc}") from None
    return pl.Variant(search, m, psa)


def cmd_ablate(args, cfg: RunConfig) -> int:
    config, spec, opts = cfg.network(), cfg.block_spec(), cfg.train_options()
    if args.variant:
        variants = [_parse_variant(v) for v in args.variant]
    else:
        variants = {"search": pl.SEARCH_VARIANTS, "psa": pl.PSA_VARIANTS,
                    "all": pl.SEARCH_VARIANTS + pl.PSA_VARIANTS}[args.variant_set]
        variants = list(dict.fromkeys(variants))  # the default variant sits in both sets
    train = sc.make_corpus(cfg["train_scenes"], cfg["corpus_seed"], density=cfg["scene_density"])
    test = sc.make_corpus(cfg["test_scenes"], cfg["corpus_seed"] + 1, density=cfg["scene_density"])
    rows = pl.run_ablation(variants, train, test, config, spec, opts)
    for r in rows:
        if not (math.isfinite(r["final_loss"]) and math.isfinite(r["oa"])):
            raise NumericError(f"variant {r['variant']} produced non-finite results")
    sys.stdout.write(pl.format_table(rows))
    ranked = sorted(rows, key=lambda r: -r["oa"])
    print("OA ordering: " + " > ".join(r["variant"] for r in ranked))
    if cfg["out"]:
        pl.write_csv(rows, cfg["out"])
        print(f"wrote {cfg['out']}")
    return EXIT_OK


def cmd_selfcheck(args, cfg: RunConfig) -> int:
    from . import selfcheck

    failures = selfcheck.run(quick=not args.full, fault=args.inject_fault)
    return EXIT_SELFCHECK if failures else EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output path")
    p.add_argument("--stride", type=float, help="sliding-window stride, meters")
    p.add_argument("--psa-layers", help="attention placement, e.g. 3,4,5 or 2-6 or none")
    p.add_argument("--search", choices=net.SEARCH_METHODS, help="neighbor search method")
    p.add_argument("--m", type=int, help="points per direction bin")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    epilog = schema_help()
    parser = argparse.ArgumentParser(prog="pointattn", description=__doc__.split("\n")[0],
                                     epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on labeled scenes", epilog=epilog, formatter_class=fmt,
                       description="Train and write a checkpoint, <out>.cfg and <out>.loss.csv.")
    p.add_argument("data", nargs="?", help="cloud or recipe file (default: synthetic corpus)")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics on labeled scenes", epilog=epilog, formatter_class=fmt,
                       description="Sliding-window OA, mIoU and per-class IoU; CSV to --out "
                                   "(default <checkpoint>.eval.csv).")
    p.add_argument("checkpoint")
    p.add_argument("scene", help="cloud or recipe file")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write a labeled, colored cloud", epilog=epilog,
                       formatter_class=fmt, description="Label one scene and write it to --out.")
    p.add_argument("checkpoint")
    p.add_argument("scene", help="cloud or recipe file")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="search / attention-placement study", epilog=epilog,
                       formatter_class=fmt,
                       description="Train every variant on the same synthetic corpus and tabulate "
                                   "OA / mIoU. Orderings are reported, not asserted.")
    p.add_argument("--set-name", dest="variant_set", choices=("search", "psa", "all"), default="all",
                   help="variant family (default all)")
    p.add_argument("--variant", action="append", metavar="SEARCH[:M[:PSA]]",
                   help="explicit variant, repeatable; replaces --set-name")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("selfcheck", help="run every invariant once", epilog=epilog,
                       formatter_class=fmt, description="Print PASS/FAIL per property; exit 4 on failure.")
    p.add_argument("--full", action="store_true", help="acceptance-size trial counts")
    p.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    _common(p)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults < checkpoint sidecar (eval, predict) < --config < --set < flags."""
    cfg = RunConfig()
    ckpt = getattr(args, "checkpoint", None)
    if ckpt and os.path.exists(ckpt + ".cfg"):
        cfg = RunConfig.from_file(ckpt + ".cfg")
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        try:
            cfg.update(net.read_kv(args.config), source=args.config)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    cfg.update(pairs, source="--set")
    flags = {"seed": args.seed, "out": args.out, "stride": args.stride, "search": args.search,
             "m": args.m, "psa_layers": _psa(args.psa_layers) if args.psa_layers is not None else None}
    if getattr(args, "data", None):
        flags["data"] = args.data
    cfg.update(flags, source="flags")
    return cfg.validate()


def main(argv=None) -> int:
    level = os.environ.get("POINTATTN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, resolve_config(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
