"""Command-line entry point chaining the whole pipeline.

Exit status is 0 on success, 2 for usage errors, and the ``exit_code`` of
the raised :class:`~hcpnet.errors.HCPError` subclass otherwise (9 for I/O
failures).
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluation as E
from . import model as M
from . import pipeline as P
from .config import Config
from .errors import DataError, HCPError
from .hselect import HSConfig, dump_jsonl, hs_dump_records
from .manifest import DatasetManifest
from .nn import checkpoint as ckio
from .objectness import ObjectnessConfig, ObjectnessModel, train_objectness
from .synth import SyntheticSpec, gen_synthetic

log = logging.getLogger("hcpnet")
IO_EXIT = 9


# ---------------------------------------------------------------- config -> objects


def synthetic_spec(cfg):
    return SyntheticSpec(
        image_size=cfg["image_size"],
        objects_min=cfg["objects_min"],
        objects_max=cfg["objects_max"],
        size_min=cfg["object_size_min"],
        size_max=cfg["object_size_max"],
        aspect_jitter=cfg["aspect_jitter"],
        occlusion_prob=cfg["occlusion_prob"],
        distractors=cfg["distractors"],
        pretrain_size=cfg["pretrain_size"],
        texture_period_min=cfg["texture_period_min"],
        texture_period_max=cfg["texture_period_max"],
        pretrain_scale_min=cfg["pretrain_scale_min"],
        pretrain_scale_max=cfg["pretrain_scale_max"],
        seed=cfg["seed"],
    )


def objectness_config(cfg):
    return ObjectnessConfig(
        pos_iou=cfg["obj_pos_iou"],
        neg_iou=cfg["obj_neg_iou"],
        neg_per_image=cfg["obj_neg_per_image"],
        calib_neg_per_size=cfg["obj_calib_neg_per_size"],
        epochs=cfg["obj_epochs"],
        reg=cfg["obj_reg"],
        lr=cfg["obj_lr"],
        batch_size=cfg["obj_batch_size"],
        seed=cfg["seed"],
        saturation=cfg["obj_saturation"],
    )


def hs_config(cfg, k):
    return HSConfig(
        m=cfg["hs_m"],
        k=k,
        min_area=cfg["hs_min_area"],
        max_ratio=cfg["hs_max_ratio"],
        crop_size=cfg["input_side"],
        thresholds=cfg["hs_thresholds"],
        exact_max_n=cfg["hs_exact_max_n"],
        solver=cfg["hs_solver"],
    )


def stage_config(cfg, stage):
    return M.StageConfig(
        stage,
        lrs=cfg.floats(f"{stage}_lr"),
        epochs=cfg[f"{stage}_epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        decay_factor=cfg["decay_factor"],
        decay_period=cfg["decay_period"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
    )


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg):
    counts = {s: cfg[f"count_{s}"] for s in ("pretrain", "objectness", "train", "test")}
    mans = gen_synthetic(synthetic_spec(cfg), counts, args.out)
    for split, man in mans.items():
        print(f"{split}: {len(man)} images -> {os.path.join(args.out, split + '.jsonl')}")


def cmd_train_objectness(args, cfg):
    man = DatasetManifest.load(args.manifest)
    annotated = [
        (man.load_image(r), [(o["x0"], o["y0"], o["w"], o["h"]) for o in r.objects]) for r in man
    ]
    model = train_objectness(annotated, objectness_config(cfg))
    model.save(args.out)
    print(f"objectness model -> {args.out}")


def cmd_proposals(args, cfg):
    man = DatasetManifest.load(args.manifest)
    model = ObjectnessModel.load(args.model)
    images = P.load_images(man)
    props = P.compute_proposals(images, model, cfg["proposals"], cfg["nms_iou"])
    ids = [r.image for r in man]
    P.write_proposals(args.out, ids, props)
    print(f"{sum(len(p) for p in props)} proposals for {len(ids)} images -> {args.out}")
    if args.hs:
        path = args.hs_out or os.path.splitext(args.out)[0] + ".hs.jsonl"
        hs = hs_config(cfg, args.k or cfg["hs_k_train"])
        with open(path, "w") as fh:
            for image_id, p in zip(ids, props):
                dump_jsonl(hs_dump_records(image_id, p, hs), fh)
        print(f"HS dump -> {path}")


def cmd_pretrain(args, cfg):
    man = DatasetManifest.load(args.manifest)
    images = np.stack(P.load_images(man))
    labels = P.single_labels(man)
    rng = np.random.default_rng(cfg["seed"])
    net = M.build_shared_cnn(
        man.num_classes, rng, side=cfg["input_side"], channels=cfg.ints("conv_channels"),
        hidden=cfg["hidden"], dropout=cfg["dropout"],
    )
    geometry = M.Geometry(side=cfg["input_side"], resize=images.shape[1])
    ckpt, hist = M.pretrain(net, images, labels, stage_config(cfg, "pretrain"), geometry=geometry)
    ckpt.extra["categories"] = list(man.categories)
    ckpt.extra["loss"] = [round(v, 6) for v in hist.loss]
    ckio.save(ckpt, args.out)
    print(f"pretrain final loss {hist.loss[-1] if hist.loss else float('nan'):.4f} -> {args.out}")


def _whole(man, side):
    return P.resize_all(P.load_images(man), side)


def cmd_ift(args, cfg):
    ckpt = ckio.load(args.checkpoint)
    ckpt.require_stage("pretrain")
    man = DatasetManifest.load(args.manifest)
    side = ckpt.input_shape[1]
    hook = None
    if args.val_manifest:
        val = DatasetManifest.load(args.val_manifest)
        vx, vy = _whole(val, side), val.labels_matrix()
        hook = lambda net: E.mean_ap(M.predict_whole(net, vx, ckpt.mean), vy).mean_ap  # noqa: E731
    out, hist = M.image_fine_tune(
        ckpt, _whole(man, side), man.labels_matrix(), stage_config(cfg, "ift"), eval_hook=hook
    )
    out.extra.update(categories=list(man.categories), loss=[round(v, 6) for v in hist.loss])
    if hist.metric:
        out.extra["val_map"] = [[e, round(v, 6)] for e, v in hist.metric]
    ckio.save(out, args.out)
    print(f"ift final loss {hist.loss[-1] if hist.loss else float('nan'):.5f} -> {args.out}")


def cmd_hft(args, cfg):
    ckpt = ckio.load(args.checkpoint)
    ckpt.require_stage("ift")
    man = DatasetManifest.load(args.manifest)
    props = P.proposals_for(man, P.read_proposals(args.proposals))
    crops = P.hypothesis_crops(P.load_images(man), props, hs_config(cfg, cfg["hs_k_train"]))
    out, hist = M.hypothesis_fine_tune(ckpt, crops, man.labels_matrix(), stage_config(cfg, "hft"))
    out.extra.update(categories=list(man.categories), loss=[round(v, 6) for v in hist.loss])
    ckio.save(out, args.out)
    print(f"hft final loss {hist.loss[-1] if hist.loss else float('nan'):.5f} -> {args.out}")


def cmd_predict(args, cfg):
    ckpt = ckio.load(args.checkpoint)
    ckpt.require_stage("ift", "hft")
    man = DatasetManifest.load(args.manifest)
    net = ckpt.to_network(with_momentum=False)
    side = ckpt.input_shape[1]
    images = P.load_images(man)
    whole = P.resize_all(images, side)
    mode = args.mode or ("hcp" if args.proposals else "whole")
    if mode == "hcp":
        if not args.proposals:
            raise DataError("hcp prediction needs --proposals")
        props = P.proposals_for(man, P.read_proposals(args.proposals))
        hs = hs_config(cfg, cfg["hs_k_test"])
        scores = np.stack([
            M.predict_image(net, ckpt.mean, crops, w, cfg["fusion_order"])
            for crops, w in zip(P.hypothesis_crops(images, props, hs), whole)
        ])
    else:
        scores = M.predict_whole(net, whole, ckpt.mean)
    classes = ckpt.extra.get("categories") or list(man.categories)
    ids = [r.image for r in man]
    with open(args.out, "w") as fh:
        for image_id, s in zip(ids, scores):
            fh.write(json.dumps({"image": image_id, "scores": [float(v) for v in s]}) + "\n")
    csv_path = args.csv or os.path.splitext(args.out)[0] + ".csv"
    E.write_predictions_csv(csv_path, ids, scores, classes)
    print(f"{mode} predictions for {len(ids)} images -> {args.out}, {csv_path}")


def cmd_eval(args, cfg):
    report = E.evaluate_files(args.predictions, args.manifest, method=cfg["ap_method"])
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    if args.curves:
        report.write_curves_csv(args.curves)
    print(f"mAP {100 * report.mean_ap:.2f} -> {args.out}")


def cmd_fuse(args, cfg):
    ids_a, a, classes = E.read_predictions_csv(args.a)
    ids_b, b, classes_b = E.read_predictions_csv(args.b)
    if ids_a != ids_b or classes != classes_b:
        raise DataError("prediction files cover different images or classes")
    weight = cfg["fuse_weight"] if args.weight is None else args.weight
    E.write_predictions_csv(args.out, ids_a, M.late_fusion(a, b, weight), classes)
    print(f"fused predictions -> {args.out}")


def cmd_config(args, cfg):
    sys.stdout.write(cfg.dumps())


# ---------------------------------------------------------------- parser


def build_parser():
    ap = argparse.ArgumentParser(prog="hcpnet", description="Hypothesis-pooling multi-label classifier.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "render the synthetic splits and their manifests")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train-objectness", cmd_train_objectness, "fit the objectness scorer on annotated images")
    p.add_argument("--manifest", required=True, help="manifest with object boxes")
    p.add_argument("--out", required=True, help="model JSON")

    p = add("proposals", cmd_proposals, "score windows and write the proposal dump")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="objectness model JSON")
    p.add_argument("--out", required=True, help="proposal dump (JSON lines)")
    p.add_argument("--hs", action="store_true", help="also write the hypotheses-selection dump")
    p.add_argument("--hs-out", help="HS dump path (default: <out>.hs.jsonl)")
    p.add_argument("--k", type=int, help="hypotheses per cluster for the HS dump")

    p = add("pretrain", cmd_pretrain, "single-label pre-training from scratch")
    p.add_argument("--manifest", required=True, help="single-label manifest")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = add("ift", cmd_ift, "whole-image fine-tuning from a pretrain checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", help="evaluate held-out mAP after every epoch")
    p.add_argument("--out", required=True)

    p = add("hft", cmd_hft, "fine-tuning through cross-hypothesis max pooling")
    p.add_argument("--checkpoint", required=True, help="ift checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--proposals", required=True, help="proposal dump for the manifest images")
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "class scores for every image of a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--proposals", help="proposal dump; enables hypothesis pooling")
    p.add_argument("--mode", choices=("hcp", "whole"), help="default: hcp when --proposals is given")
    p.add_argument("--out", required=True, help="predictions (JSON lines)")
    p.add_argument("--csv", help="score CSV (default: <out>.csv)")

    p = add("eval", cmd_eval, "average precision per class and mAP")
    p.add_argument("--predictions", required=True, help="score CSV")
    p.add_argument("--manifest", required=True, help="label manifest")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--curves", help="PR-curve CSV")

    p = add("fuse", cmd_fuse, "late fusion of two score CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--weight", type=float, help="weight of --a (default: fuse_weight)")
    p.add_argument("--out", required=True)

    add("config", cmd_config, "print every config key with its effective value")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s"
    )
    try:
        cfg = Config.load(args.config, args.set)
        args.func(args, cfg)
    except HCPError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [IOError]: {exc}", file=sys.stderr)
        return IO_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
