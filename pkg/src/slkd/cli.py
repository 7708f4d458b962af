"""``slkd`` command-line entry point.

Exit codes: 0 success, 1 contract violation or usage error, 2 IO or
format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError

log = logging.getLogger("slkd")

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


class UsageError(ContractViolation):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _config(path):
    from .config import load_config

    cfg = load_config(path)
    root = Path(cfg.data.root)
    if not root.is_absolute():
        # relative data roots resolve against the config file's directory
        root = Path(path).resolve().parent / root
        cfg = cfg.model_copy(update={"data": cfg.data.model_copy(update={"root": str(root)})})
    return cfg


def _dataset(cfg):
    """The configured dataset, materializing it on first use."""
    from .data import DatasetManifest, materialize

    manifest = cfg.data.manifest()
    root = Path(manifest.root)
    if (root / "manifest.json").exists():
        on_disk = DatasetManifest.load(root)
        if replace(on_disk, root=manifest.root) != manifest:
            raise ContractViolation(f"dataset at {root} was generated with different settings")
        return on_disk
    log.info("materializing dataset at %s", root)
    materialize(manifest)
    return manifest


def _log_path(out) -> Path:
    return Path(str(out) + ".log.jsonl")


def _save_model(model, out):
    from .checkpoint import save_checkpoint

    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)


def cmd_degrade(args):
    from .data import materialize

    cfg = _config(args.config)
    manifest = replace(cfg.data.manifest(), root=str(args.out))
    root = materialize(manifest)
    print(f"wrote {manifest.count} image pairs to {root}")


def _train_guarded(fn, out):
    from .train import TrainingAborted

    try:
        model, tlog = fn()
    except TrainingAborted as exc:
        _save_model(exc.model, out)
        exc.log.write(_log_path(out))
        raise ContractViolation(f"{exc}; last good model saved to {out}") from None
    _save_model(model, out)
    tlog.write(_log_path(out))
    return model, tlog


def cmd_pretrain(args):
    from .train import pretrain_teacher

    cfg = _config(args.config)
    manifest = _dataset(cfg)
    _, tlog = _train_guarded(lambda: pretrain_teacher(cfg.net.teacher, manifest, cfg.train, "teacherA"), args.out)
    print(f"teacher saved to {args.out} (final loss {tlog.steps[-1]['loss']:.5f})" if tlog.steps
          else f"teacher saved to {args.out} (0 steps)")


def cmd_distill(args):
    from .checkpoint import load_checkpoint
    from .train import distill

    cfg = _config(args.config)
    ta = load_checkpoint(args.teacher_a, "teacherA")
    tb = load_checkpoint(args.teacher_b, "teacherB") if args.teacher_b else None
    manifest = _dataset(cfg)
    _, tlog = _train_guarded(
        lambda: distill(ta, tb, cfg.net.student, manifest, cfg.train, cfg.loss, cfg.extractor), args.out)
    last = tlog.evals[-1] if tlog.evals else None
    msg = f", held-out PSNR {last['psnr']:.3f} dB" if last else ""
    print(f"student saved to {args.out}{msg}")


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .metrics import evaluate

    model = load_checkpoint(args.model)
    if model.is_shell:
        raise ContractViolation(f"{args.model} holds no parameters")
    cfg = _config(args.config)
    report = evaluate(model, _dataset(cfg), args.split, Path(args.model).name)
    Path(args.report).write_text(report.to_json() + "\n")
    print(f"{report.model}: PSNR {report.mean_psnr:.3f} dB, SSIM {report.mean_ssim:.4f} "
          f"over {len(report.per_image)} images")


def features_json(image, extractor: str, ext=None) -> dict:
    """Feature document for one ``[C, H, W]`` image.

    Only the selected extractor's field is populated; the other is empty.
    """
    from .config import ExtractorConfig
    from .nss import brisque_features, piqe_features

    ext = ext or ExtractorConfig()
    image = np.asarray(image, np.float32)
    doc = {"channels": int(image.shape[0]), "features": [], "block_scores": []}
    if extractor == "brisque":
        doc["features"] = brisque_features(image, ext.scales, ext.mscn_params()).data.tolist()
    else:
        doc["block_scores"] = piqe_features(image, ext.piqe_block, ext.mscn_params()).scores.data.tolist()
    return doc


def cmd_features(args):
    from .data import load_ppm

    doc = features_json(load_ppm(args.inp), args.extractor)
    Path(args.out).write_text(json.dumps(doc) + "\n")
    print(f"{args.extractor} features for {doc['channels']} channels written to {args.out}")


def complexity_summary(cfg, size) -> dict:
    from .net import count_complexity

    tf, tp = count_complexity(cfg.teacher, size)
    sf, sp = count_complexity(cfg.student, size)
    return {"size": list(size),
            "teacher": {"flops": tf, "params": tp},
            "student": {"flops": sf, "params": sp},
            "flops_reduction_pct": 100 * (1 - sf / tf),
            "params_reduction_pct": 100 * (1 - sp / tp)}


def cmd_complexity(args):
    from .config import NetSection

    net = _config(args.config).net if args.config else NetSection()
    s = complexity_summary(net, tuple(args.size))
    if args.json:
        print(json.dumps(s, indent=2))
        return
    h, w = s["size"]
    for role in ("teacher", "student"):
        r = s[role]
        print(f"{role:8s} {r['flops'] / 1e9:10.3f} GFLOPs {r['params'] / 1e6:8.3f} M params  (input {h}x{w})")
    print(f"reduction: FLOPs {s['flops_reduction_pct']:.1f}%, params {s['params_reduction_pct']:.1f}%")


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    def show(r):
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:32s} rel-err {r.error:.3e} (tol {r.tol:g})", flush=True)

    results = run_suite(show)
    bad = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} gradient checks passed")
    return EXIT_CONTRACT if bad else EXIT_OK


ABLATION_GRID = [(b, nc, et) for b in ("clean", "degraded") for nc in (True, False) for et in (True, False)]


def run_ablation(cfg, manifest, out: Path, seeds, teacher=None, grid=ABLATION_GRID) -> dict:
    """Distill one student per (grid cell, seed) from a shared teacher; returns the comparison."""
    from .metrics import evaluate
    from .train import distill, pretrain_teacher

    out.mkdir(parents=True, exist_ok=True)
    if teacher is None:
        teacher, tlog = pretrain_teacher(cfg.net.teacher, manifest, cfg.train, "teacherA")
        _save_model(teacher, out / "teacher.ckpt")
        tlog.write(_log_path(out / "teacher.ckpt"))
    rows = []
    for b_input, use_nc, use_et in grid:
        loss = cfg.loss.model_copy(update={"teacherB_input": b_input, "use_nc": use_nc, "use_et": use_et})
        psnrs, ssims = [], []
        for seed in seeds:
            tc = cfg.train.model_copy(update={"seed": seed})
            tag = f"B-{b_input}_nc{int(use_nc)}_et{int(use_et)}_s{seed}"
            student, slog = distill(teacher, None, cfg.net.student, manifest, tc, loss, cfg.extractor)
            _save_model(student, out / f"{tag}.ckpt")
            slog.write(_log_path(out / f"{tag}.ckpt"))
            rep = evaluate(student, manifest, "heldout", tag)
            psnrs.append(rep.mean_psnr)
            ssims.append(rep.mean_ssim)
            log.info("%s: %.3f dB", tag, rep.mean_psnr)
        rows.append({"teacherB_input": b_input, "use_nc": use_nc, "use_et": use_et,
                     "seeds": list(seeds), "psnr": psnrs, "ssim": ssims,
                     "mean_psnr": float(np.mean(psnrs)), "mean_ssim": float(np.mean(ssims))})
    result = {"rows": rows}
    (out / "ablation.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def cmd_ablate(args):
    from .checkpoint import load_checkpoint

    cfg = _config(args.config)
    manifest = _dataset(cfg)
    teacher = load_checkpoint(args.teacher, "teacherA") if args.teacher else None
    seeds = args.seeds or [cfg.train.seed]
    res = run_ablation(cfg, manifest, Path(args.out), seeds, teacher)
    for r in res["rows"]:
        print(f"B={r['teacherB_input']:8s} nc={int(r['use_nc'])} et={int(r['use_et'])}  "
              f"PSNR {r['mean_psnr']:.3f}  SSIM {r['mean_ssim']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slkd", description="Dual-teacher knowledge distillation for image restoration.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("degrade", help="materialize a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("pretrain", help="pretrain the teacher network")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("distill", help="distill a student from frozen teachers")
    s.add_argument("--teacher-a", required=True)
    s.add_argument("--teacher-b")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("eval", help="held-out PSNR/SSIM report")
    s.add_argument("--model", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--split", choices=("train", "heldout"), default="heldout")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("features", help="BRISQUE or PIQE features of a PPM image")
    s.add_argument("--extractor", choices=("brisque", "piqe"), required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("complexity", help="FLOPs/params of teacher and student")
    s.add_argument("--config")
    s.add_argument("--size", type=int, nargs=2, default=(512, 512), metavar=("H", "W"))
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("gradcheck", help="run the gradient-check suite")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="teacherB_input x use_nc x use_et grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--teacher", help="reuse a pretrained teacher checkpoint")
    s.add_argument("--seeds", type=int, nargs="+")
    s.set_defaults(func=cmd_ablate)
    return p


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        return args.func(args) or EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONTRACT
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractViolation, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
