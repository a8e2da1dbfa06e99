"""Command-line entry points: gen, train, eval-mi, eval-cls, localize, report.

Every command takes ``--config FILE`` plus repeatable ``--set key=value``
overrides (flags win).  Relative paths resolve against the
``INFOCAM_DATA_ROOT`` environment variable.  A command exits non-zero when
any ``require_*`` threshold declared in the config is violated by the
metrics it produced.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import cam as cam_mod
from . import data as data_mod
from . import gaussmix, miest, report, wsol
from .config import check_requirements, data_root, load_config
from .nn.network import build_network, forward, load_checkpoint, save_checkpoint
from .train import multilabel_accuracy, train_classifier

SPLITS = ("train", "valid", "test")


def _resolve(path):
    return path if os.path.isabs(path) else os.path.join(data_root(), path)


def _run_dir(cfg):
    path = os.path.join(_resolve(cfg.out_dir), cfg.name)
    os.makedirs(path, exist_ok=True)
    return path


def _dataset_dir(cfg):
    path = _resolve(cfg.data_path) if cfg.data_path \
        else os.path.join(_run_dir(cfg), "data")
    return path


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _emit(cfg, record, extra_paths=()):
    """Append the record, verify thresholds, and return an exit code."""
    run_dir = _run_dir(cfg)
    record_path = os.path.join(run_dir, "records.jsonl")
    report.write_records(record_path, [record])
    print(report.render_table([record]))
    for path in extra_paths:
        print(f"wrote {path}")
    failures = check_requirements(cfg, record.metrics)
    for failure in failures:
        print(f"REQUIREMENT FAILED: {failure}", file=sys.stderr)
    return 1 if failures else 0


def _make_record(cfg, metrics, wall_clock, artifacts=()):
    return report.ReportRecord(
        name=cfg.name, task=cfg.task, config_digest=cfg.digest(),
        seed=cfg.seed, metrics=metrics, wall_clock=wall_clock,
        artifacts=list(artifacts))


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(cfg):
    start = time.monotonic()
    out = _dataset_dir(cfg)
    os.makedirs(out, exist_ok=True)
    manifest = {"task": cfg.task, "seed": cfg.seed, "files": {}}

    if cfg.task == "mixture-mi":
        spec, counts = gaussmix.table1_spec(cfg.dim, cfg.balanced)
        full = gaussmix.sample(spec, counts, cfg.seed)
        splits = gaussmix.train_valid_test_split(full)
        for ds in splits:
            path = os.path.join(out, f"{ds.split}.gmix")
            gaussmix.save_dataset(ds, path, spec.num_components)
            manifest["files"][ds.split] = {
                "path": path, "n": len(ds), "sha256": _sha256(path)}
        manifest["dim"] = cfg.dim
        manifest["balanced"] = cfg.balanced
        manifest["counts"] = counts.tolist()
        manifest["priors_exact"] = spec.priors.tolist()
    elif cfg.task == "multi-mnist-wsol":
        source = _load_digit_source(cfg)
        # disjoint digit-instance pools per split, so test canvases are
        # built from digit instances never seen in training
        pools = data_mod.split_image_dataset(source, seed=cfg.seed)
        counts = (int(0.70 * cfg.n_images), int(0.15 * cfg.n_images))
        counts = (counts[0], counts[1],
                  cfg.n_images - counts[0] - counts[1])
        splits = []
        for offset, (pool, count, tag) in enumerate(
                zip(pools, counts, ("train", "valid", "test")), start=1):
            ds = data_mod.make_double_digit(
                pool, count, seed=1000 * cfg.seed + offset,
                jitter=cfg.jitter)
            ds.split = tag
            splits.append(ds)
        for ds in splits:
            path = os.path.join(out, f"{ds.split}.imgd")
            data_mod.save_image_dataset(ds, path)
            manifest["files"][ds.split] = {
                "path": path, "n": len(ds), "sha256": _sha256(path)}
        manifest["n_images"] = cfg.n_images
        data_mod.dump_pgm(splits[0], out)
    elif cfg.task == "mnist-cls":
        source = _load_digit_source(cfg)
        if not cfg.balanced:
            source = data_mod.make_unbalanced(
                source, cfg.minority_classes(), cfg.unbalance_keep, cfg.seed)
        splits = data_mod.split_image_dataset(source, seed=cfg.seed)
        for ds in splits:
            path = os.path.join(out, f"{ds.split}.imgd")
            data_mod.save_image_dataset(ds, path)
            manifest["files"][ds.split] = {
                "path": path, "n": len(ds), "sha256": _sha256(path)}
    manifest_path = os.path.join(out, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"wrote {manifest_path}")
    metrics = {"gen/n_total": float(sum(
        entry["n"] for entry in manifest["files"].values()))}
    return _emit(cfg, _make_record(cfg, metrics, time.monotonic() - start,
                                   [manifest_path]))


def _load_digit_source(cfg):
    if cfg.images_path and cfg.labels_path:
        return data_mod.load_idx(_resolve(cfg.images_path),
                                 _resolve(cfg.labels_path))
    return data_mod.load_bundled_digits()


# ---------------------------------------------------------------------------
# shared dataset loading
# ---------------------------------------------------------------------------

def _load_mixture_splits(cfg):
    out = _dataset_dir(cfg)
    splits = []
    for i, split in enumerate(SPLITS):
        path = os.path.join(out, f"{split}.gmix")
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"dataset file {path} not found; run `infocam gen` first")
        ds = gaussmix.load_dataset(path, split)
        if cfg.shuffle_labels:
            ds = gaussmix.shuffle_labels(ds, cfg.seed + i)
        splits.append(ds)
    return splits


def _load_image_splits(cfg):
    out = _dataset_dir(cfg)
    splits = []
    for split in SPLITS:
        path = os.path.join(out, f"{split}.imgd")
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"dataset file {path} not found; run `infocam gen` first")
        splits.append(data_mod.load_image_dataset(path, split))
    return splits


def _image_inputs(ds):
    return ds.images[:, None, :, :]


def _train_priors(cfg, train_labels, num_classes):
    if cfg.head == "pc_softmax":
        counts = np.bincount(train_labels, minlength=num_classes)
        if np.any(counts == 0):
            raise ValueError("a class is absent from the training split; "
                             "PC-softmax priors undefined")
        return counts / counts.sum()
    if cfg.head == "pc_sigmoid":
        return train_labels.mean(axis=0)
    return None


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(cfg):
    start = time.monotonic()
    if cfg.task == "mixture-mi":
        train, valid, _ = _load_mixture_splits(cfg)
        inputs, labels = train.inputs, train.labels
        v_inputs, v_labels = valid.inputs, valid.labels
        input_shape = (train.inputs.shape[1],)
    else:
        train, valid, _ = _load_image_splits(cfg)
        inputs, labels = _image_inputs(train), train.labels
        v_inputs, v_labels = _image_inputs(valid), valid.labels
        input_shape = (1,) + train.images.shape[1:]
        if cfg.task == "multi-mnist-wsol":
            labels = labels.astype(np.float64)
            v_labels = v_labels.astype(np.float64)

    net = build_network(cfg.arch, input_shape, seed=cfg.seed)
    priors = _train_priors(cfg, labels, net.num_classes)
    try:
        log = train_classifier(
            net, inputs, labels, v_inputs, v_labels, head=cfg.head,
            priors=priors, epochs=cfg.epochs, batch_size=cfg.batch_size,
            optimizer=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum,
            seed=cfg.seed, select=cfg.select)
    except FloatingPointError as exc:
        print(f"ABORTED: {exc}", file=sys.stderr)
        return 2

    run_dir = _run_dir(cfg)
    ckpt_path = os.path.join(run_dir, "checkpoint.npz")
    save_checkpoint(net, ckpt_path)
    log_path = os.path.join(run_dir, "train_log.jsonl")
    with open(log_path, "w") as f:
        for row in log.as_rows():
            f.write(json.dumps(row, sort_keys=True) + "\n")
    final = log.stats[log.best_epoch]
    metrics = {"valid/loss": final.val_loss, "valid/accuracy": final.val_acc,
               "train/best_epoch": float(log.best_epoch)}
    return _emit(cfg, _make_record(cfg, metrics, time.monotonic() - start,
                                   [ckpt_path, log_path]),
                 [ckpt_path, log_path])


def _load_net(cfg):
    ckpt_path = os.path.join(_run_dir(cfg), "checkpoint.npz")
    if not os.path.exists(ckpt_path):
        raise FileNotFoundError(
            f"checkpoint {ckpt_path} not found; run `infocam train` first")
    return load_checkpoint(ckpt_path)


# ---------------------------------------------------------------------------
# eval-mi
# ---------------------------------------------------------------------------

def cmd_eval_mi(cfg):
    start = time.monotonic()
    if cfg.task != "mixture-mi":
        raise ValueError(
            f"eval-mi applies to the mixture-mi task, not {cfg.task!r}")
    net = _load_net(cfg)
    train, _, test = _load_mixture_splits(cfg)
    spec, _ = gaussmix.table1_spec(cfg.dim, cfg.balanced)
    priors = _empirical_label_priors(train, net.num_classes)

    metrics = {}
    mc_terms = gaussmix.mc_mi_terms(spec, test)
    metrics["test/mi_mc"] = float(np.mean(mc_terms))
    metrics["test/mi_mc_stderr"] = float(
        np.std(mc_terms, ddof=1) / np.sqrt(len(mc_terms)))
    for split_name, split in (("test", test), ("train", train)):
        est = miest.estimate_mi(net, split)
        metrics[f"{split_name}/mi_softmax"] = est.value
        metrics[f"{split_name}/mi_softmax_stderr"] = est.std_error
        est_pc = miest.estimate_mi(net, split, prior=priors)
        metrics[f"{split_name}/mi_pc_softmax"] = est_pc.value
        metrics[f"{split_name}/mi_pc_softmax_stderr"] = est_pc.std_error
    return _emit(cfg, _make_record(cfg, metrics, time.monotonic() - start))


def _empirical_label_priors(ds, num_classes):
    counts = np.bincount(ds.labels, minlength=num_classes)
    if np.any(counts == 0):
        raise ValueError("a class is absent from the training split")
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# eval-cls
# ---------------------------------------------------------------------------

def cmd_eval_cls(cfg):
    start = time.monotonic()
    net = _load_net(cfg)
    metrics = {}
    if cfg.task == "mixture-mi":
        train, _, test = _load_mixture_splits(cfg)
        priors = _empirical_label_priors(train, net.num_classes)
        head = "pc_softmax" if cfg.head == "pc_softmax" else "softmax"
        micro, per_class = miest.evaluate_classifier(
            net, test, head=head,
            prior=priors if head == "pc_softmax" else None)
        metrics["test/accuracy"] = micro
        metrics["test/per_class_accuracy"] = per_class
    elif cfg.task == "mnist-cls":
        _, _, test = _load_image_splits(cfg)
        logits = miest.batched_logits(net, _image_inputs(test))
        preds = np.argmax(logits, axis=1)
        metrics["test/accuracy"] = float(np.mean(preds == test.labels))
        recalls = [float(np.mean(preds[test.labels == y] == y))
                   for y in range(net.num_classes)
                   if np.any(test.labels == y)]
        metrics["test/per_class_accuracy"] = float(np.mean(recalls))
    else:
        _, _, test = _load_image_splits(cfg)
        per_digit = multilabel_accuracy(
            net, _image_inputs(test), test.labels)
        for digit, acc in enumerate(per_digit):
            metrics[f"test/digit{digit}_accuracy"] = float(acc)
        metrics["test/per_class_accuracy"] = float(per_digit.mean())
    return _emit(cfg, _make_record(cfg, metrics, time.monotonic() - start))


# ---------------------------------------------------------------------------
# localize
# ---------------------------------------------------------------------------

def cmd_localize(cfg):
    start = time.monotonic()
    if cfg.task != "multi-mnist-wsol":
        raise ValueError(
            f"localize applies to the multi-mnist-wsol task, not {cfg.task!r}")
    net = _load_net(cfg)
    if not net.has_gap_head:
        raise ValueError("checkpoint lacks a conv->GAP->dense head; "
                         "localization undefined")
    _, _, test = _load_image_splits(cfg)
    run_dir = _run_dir(cfg)
    metrics = {}
    artifacts = []
    for kind in cfg.map_kind_list():
        results = []
        per_image_path = os.path.join(run_dir, f"localize_{kind}.jsonl")
        with open(per_image_path, "w") as f:
            for i in range(len(test)):
                for label, gt_box in test.gt_boxes[i]:
                    res = wsol.localize(
                        net, test.images[i], label, gt_box, map_kind=kind,
                        region_size=cfg.region_size,
                        ratio=cfg.threshold_ratio,
                        label_mode=cfg.label_mode,
                        threshold_on=cfg.threshold_on, multi_label=True)
                    results.append(res)
                    f.write(json.dumps({
                        "image": i, "label": int(label),
                        "gt_box": [gt_box.x_min, gt_box.y_min,
                                   gt_box.x_max, gt_box.y_max],
                        "pred_box": [res.predicted_box.x_min,
                                     res.predicted_box.y_min,
                                     res.predicted_box.x_max,
                                     res.predicted_box.y_max],
                        "iou": res.iou,
                        "gt_loc": res.gt_loc_correct,
                        "top1_loc": res.top1_loc_correct,
                    }, sort_keys=True) + "\n")
        gt_loc, top1_loc = wsol.score_suite(results)
        metrics[f"test/{kind}_gt_loc"] = gt_loc
        metrics[f"test/{kind}_top1_loc"] = top1_loc
        metrics[f"test/{kind}_n_objects"] = float(len(results))
        artifacts.append(per_image_path)
        artifacts += _write_overlays(cfg, net, test, kind, run_dir)
    return _emit(cfg, _make_record(cfg, metrics, time.monotonic() - start,
                                   artifacts))


def _write_overlays(cfg, net, test, kind, run_dir):
    paths = []
    written = 0
    for i in range(len(test)):
        if written >= cfg.overlays:
            break
        for label, gt_box in test.gt_boxes[i]:
            if written >= cfg.overlays:
                break
            _, fmaps = forward(net, test.images[i][None])
            imap = cam_mod.point_map(fmaps, net.final_weights, label, kind)
            res = wsol.localize(
                net, test.images[i], label, gt_box, map_kind=kind,
                region_size=cfg.region_size, ratio=cfg.threshold_ratio,
                threshold_on=cfg.threshold_on, multi_label=True)
            png = os.path.join(run_dir, f"overlay_{kind}_{i}_{label}.png")
            report.render_overlay(
                test.images[i], imap.grid, res.predicted_box, gt_box, png,
                title=f"{kind} digit {label} iou={res.iou:.2f}")
            pgm = os.path.join(run_dir, f"overlay_{kind}_{i}_{label}.pgm")
            cam_mod.write_pgm(imap.grid, pgm)
            paths += [png, pgm]
            written += 1
    return paths


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(paths, out_dir):
    records = []
    for path in paths:
        records.extend(report.read_records(_resolve(path)))
    if not records:
        print("no records found", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    table = report.render_table(records)
    print(table)
    table_path = os.path.join(out_dir, "report.txt")
    with open(table_path, "w") as f:
        f.write(table + "\n")
    tsv_path = os.path.join(out_dir, "report.tsv")
    report.write_tsv(records, tsv_path)
    figures = report.render_figures(records, out_dir)
    for path in [table_path, tsv_path] + figures:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_config_args(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config key (repeatable)")


def _parse_config(args):
    return load_config(args.config, args.set).validate()


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="infocam",
        description="Mutual-information estimation with softmax classifiers "
                    "and CAM/infoCAM weakly supervised localization")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "eval-mi", "eval-cls", "localize"):
        p = sub.add_parser(name)
        _add_config_args(p)
    p_report = sub.add_parser("report")
    p_report.add_argument("records", nargs="+",
                          help="records.jsonl files to consolidate")
    p_report.add_argument("--out", default="report",
                          help="output directory for tables and figures")
    args = parser.parse_args(argv)

    if args.command == "report":
        return cmd_report(args.records, _resolve(args.out))
    cfg = _parse_config(args)
    command = {
        "gen": cmd_gen,
        "train": cmd_train,
        "eval-mi": cmd_eval_mi,
        "eval-cls": cmd_eval_cls,
        "localize": cmd_localize,
    }[args.command]
    return command(cfg)


if __name__ == "__main__":
    sys.exit(main())
