"""Command-line entry point: ``egodance {synth,train,sample,eval,analyze}``.

Exit codes: 0 success, 1 usage (bad flags, missing files), 2 validation
error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .analysis import (arm_similarity, correlation_report, joint_embedding_cosine,
                       write_matrix_csv, write_scores_csv)
from .config import RunConfig, load_config
from .container import NotAContainerError, read_attrs, read_container, write_container
from .errors import ConfigurationError, NumericFailure, ValidationError
from .kinematics import check_rotations, forward_kinematics
from .metrics import EvalReport, aggregate, evaluate_sequence
from .skeleton import load_topology, topology_from_dict, unpack_motion
from .synth import build_dataset, load_dataset_index, load_sample, load_split
from .training import (generate_motion, load_checkpoint, make_batch, motion_positions,
                       probe_simple_loss, train)

DATA_ENV = "EGODANCE_DATA_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("egodance")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed_everything(seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def _config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    try:
        return load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _data_root(args, cfg: RunConfig) -> Path:
    root = getattr(args, "data", None) or cfg.data_root or os.environ.get(DATA_ENV)
    if not root:
        raise UsageError(f"no dataset given: pass --data, set data_root in the config or ${DATA_ENV}")
    return Path(root)


def _topology(cfg: RunConfig):
    return load_topology(cfg.topology)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    out = Path(args.out) if args.out else _data_root(args, cfg)
    manifest = build_dataset(cfg.synth_spec(seed), out, _topology(cfg))
    log.info("wrote %d samples to %s", len(manifest["samples"]), out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .network import EgoMusicModel
    from .plotting import plot_losses

    cfg = _config(args)
    seed = _seed(args, cfg)
    if not args.out:
        raise UsageError("train needs --out")
    _seed_everything(seed)
    records = load_split(_data_root(args, cfg), "train", cfg.optim.train_limit)
    model = EgoMusicModel(topology_from_dict(_topology(cfg).to_dict()), cfg.model_settings())
    schedule = cfg.schedule()
    tcfg = cfg.train_config(seed, args.steps)
    batch = make_batch(records)
    before = probe_simple_loss(model, batch, schedule)
    out = Path(args.out)
    history = train(model, records, schedule, cfg.loss_weights(), tcfg, out_dir=out,
                    log=lambda r: log.info("step %d total %.5f simple %.5f", r["step"], r["total"], r["simple"]))
    after = probe_simple_loss(model, batch, schedule)
    _write_json(out / "summary.json", {"probe_simple_before": before, "probe_simple_after": after,
                                       "steps": tcfg.steps, "seed": seed,
                                       "samples": [r.index for r in records]})
    cols = {k: [h[k] for h in history] for k in ("step", "total", "simple", "kin", "align")}
    plot_losses(cols, out / "losses.png")
    return EXIT_OK


def _sample_names(args, root: Path):
    if args.sample:
        return args.sample
    return load_dataset_index(root)["splits"][args.split]


def cmd_sample(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    if not args.ckpt or not args.out:
        raise UsageError("sample needs --ckpt and --out")
    _seed_everything(seed)
    model, schedule, _ = load_checkpoint(args.ckpt)
    if args.steps is not None and args.steps != schedule.M:
        raise ValidationError(f"--steps {args.steps} does not match the checkpoint's {schedule.M} steps")
    root = _data_root(args, cfg)
    guidance = cfg.guidance_config()
    guidance.enabled = args.guidance == "on" and guidance.enabled
    out = Path(args.out)
    for name in _sample_names(args, root):
        rec = load_sample(root, name)
        x = generate_motion(model, rec, schedule, seed, guidance)
        pos, rot = motion_positions(x, model.topo)
        check_rotations(rot)
        rot6d, root_pos = unpack_motion(x)
        write_container(out / name, {
            "rot6d": rot6d.double().numpy(), "root_pos": root_pos.double().numpy(),
            "frame_rate": np.array([rec.motion.frame_rate]),
            "head_pos": pos[:, model.topo.head].numpy(), "head_rot": rot[:, model.topo.head].numpy(),
        }, attrs={"kind": "generated", "sample": name, "seed": seed, "guidance": guidance.enabled,
                  "guidance_scale": guidance.scale})
        log.info("sampled %s -> %s", name, out / name)
    return EXIT_OK


def _motion_containers(pred: Path):
    try:
        read_attrs(pred)
        return [pred]
    except NotAContainerError:
        pass
    found = sorted(p for p in pred.iterdir() if (p / "manifest.json").is_file()) if pred.is_dir() else []
    if not found:
        raise ValidationError(f"{pred} holds no motion containers")
    return found


def cmd_eval(args) -> int:
    from .plotting import plot_metrics

    cfg = _config(args)
    if not args.pred or not args.out:
        raise UsageError("eval needs --pred and --out")
    gt_root = Path(args.gt) if args.gt else _data_root(args, cfg)
    topo = _topology(cfg)
    reports = []
    for path in _motion_containers(Path(args.pred)):
        name = read_attrs(path).get("sample", path.name)
        pred = read_container(path)
        gt = load_sample(gt_root, name)
        pr6, proot = torch.from_numpy(pred["rot6d"]).double(), torch.from_numpy(pred["root_pos"]).double()
        if pr6.shape != gt.motion.rot6d.shape:
            raise ValidationError(f"{name}: predicted motion {tuple(pr6.shape)} does not match "
                                  f"ground truth {tuple(gt.motion.rot6d.shape)}")
        ppos, prot = forward_kinematics(pr6, proot, topo)
        gpos, grot = forward_kinematics(gt.motion.rot6d.double(), gt.motion.root_pos.double(), topo)
        reports.append(evaluate_sequence(name, ppos, prot[:, topo.head], gpos, grot[:, topo.head],
                                         gt.beats, gt.flow_proxy, topo, gt.motion.frame_rate))
    rows = [r.row() for r in reports] + [aggregate(reports).row()]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EvalReport.FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (v if k == "name" else f"{v:.9g}") for k, v in r.items()})
    plot_metrics(rows[:-1], out.with_suffix(".png"))
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .plotting import plot_correlation, plot_cosine

    cfg = _config(args)
    seed = _seed(args, cfg)
    if not args.out:
        raise UsageError("analyze needs --out")
    _seed_everything(seed)
    root = _data_root(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.which == "cosine":
        if not args.ckpt:
            raise UsageError("analyze cosine needs --ckpt")
        model, schedule, _ = load_checkpoint(args.ckpt)
        names = args.sample or load_dataset_index(root)["splits"][args.split]
        batch = make_batch([load_sample(root, n) for n in names])
        cos = joint_embedding_cosine(model, batch, schedule, seed=seed)
        topo = model.topo
        jn = list(topo.joint_names) or [str(i) for i in range(topo.joint_count)]
        write_matrix_csv(out / "cosine.csv", cos, jn)
        write_scores_csv(out / "arm_similarity.csv", arm_similarity(cos, topo))
        plot_cosine(cos, jn, out / "cosine.png")
        return EXIT_OK
    # correlation: generated motion if a checkpoint is given, ground truth otherwise
    name = (args.sample or load_dataset_index(root)["splits"][args.split])[0]
    rec = load_sample(root, name)
    if args.ckpt:
        model, schedule, _ = load_checkpoint(args.ckpt)
        guidance = cfg.guidance_config()
        guidance.enabled = args.guidance == "on" and guidance.enabled
        x = generate_motion(model, rec, schedule, seed, guidance)
        pos, rot = motion_positions(x, model.topo)
        head = model.topo.head
    else:
        topo = _topology(cfg)
        pos, rot = forward_kinematics(rec.motion.rot6d.double(), rec.motion.root_pos.double(), topo)
        head = topo.head
    rep = correlation_report(pos, rec.beats, rec.flow_proxy, rot[:, head], rec.motion.frame_rate,
                             out=out / "correlation.csv")
    write_scores_csv(out / "scores.csv", rep["scores"])
    plot_correlation(rep["series"], out / "correlation.png")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="egodance", description="Music- and egocentric-video-conditioned dance diffusion.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--data", help=f"dataset root (default: config data_root or ${DATA_ENV})")
        return sp

    common(sub.add_parser("synth", help="generate the synthetic dataset"))
    tr = common(sub.add_parser("train", help="train a model"))
    tr.add_argument("--steps", type=int, help="overrides optim.steps")
    sa = common(sub.add_parser("sample", help="generate motion from a checkpoint"))
    sa.add_argument("--ckpt")
    sa.add_argument("--guidance", choices=("on", "off"), default="off")
    sa.add_argument("--sample", action="append", help="sample name (repeatable)")
    sa.add_argument("--split", default="test", choices=("train", "test"))
    sa.add_argument("--steps", type=int, help="must equal the checkpoint's diffusion steps")
    ev = common(sub.add_parser("eval", help="score generated motion against ground truth"))
    ev.add_argument("--pred", help="motion container or directory of them")
    ev.add_argument("--gt", help="ground-truth dataset root (default: --data)")
    an = common(sub.add_parser("analyze", help="joint-embedding or correlation analysis"))
    an.add_argument("which", choices=("cosine", "correlation"))
    an.add_argument("--ckpt")
    an.add_argument("--guidance", choices=("on", "off"), default="off")
    an.add_argument("--sample", action="append")
    an.add_argument("--split", default="train", choices=("train", "test"))
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "sample": cmd_sample,
            "eval": cmd_eval, "analyze": cmd_analyze}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command is None:
        print("egodance: a command is required (synth, train, sample, eval, analyze)", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ConfigurationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
