"""Command-line entry point: ``asyncfield <command> [options]``.

Every command resolves its full configuration first, computes all outputs
in memory and only then writes them (each atomically) followed by
``manifest.json``; a failing command leaves no files behind.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, oracle
from ._backend import BACKEND
from .data import dataset_io
from .data.synthetic import generate_synthetic
from .evaluation import (N_CLASSIFY_FRAMES, N_LOCALIZE_FRAMES, N_LOCALIZE_ROWS, SMOOTH_WINDOW,
                         ablation_run, evaluate_classification, evaluate_localization)
from .inference import MarginalState, dump_marginals, infer_field
from .learning import checkpoint
from .learning.fieldmodel import FieldModel
from .learning.gradcheck import FAULTS, run_gradcheck
from .learning.provider import VARIANTS
from .learning.train import TrainingError, train, train_synchronous_baseline
from .runconfig import RunConfig
from .textconfig import ConfigError

MANIFEST = "manifest.json"
MANIFEST_FORMAT = "asyncfield-manifest"
DEFAULT_CONFIG = "reference"


class CommandError(RuntimeError):
    """Expected failure: message printed, nonzero exit, nothing written."""

    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


# output handling -----------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_sha(path) -> str:
    return _sha256(Path(path).read_bytes())


class Outputs:
    """Collects named text outputs; ``commit`` writes them plus the manifest."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self, out_dir, manifest: dict) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = dict(manifest)
        manifest["outputs"] = {n: _sha256(t.encode("utf-8")) for n, t in sorted(self.files.items())}
        for name, text in self.files.items():
            checkpoint.atomic_write(out / name, text)
        checkpoint.atomic_write(out / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _manifest(args, cfg: RunConfig | None, inputs: dict) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "command": args.command,
        "argv": args.replay_argv,
        "seed": args.seed,
        "workers": args.workers,
        "config": cfg.dumps() if cfg is not None else None,
        "package_version": __version__,
        "backend": BACKEND,
        "inputs": {k: _file_sha(v) for k, v in sorted(inputs.items())},
    }


# shared helpers ------------------------------------------------------------

def _config(args) -> RunConfig:
    try:
        cfg = RunConfig.load(args.config)
    except FileNotFoundError:
        raise CommandError(f"config file not found: {args.config}") from None
    except (ConfigError, ValueError, TypeError) as exc:
        raise CommandError(f"invalid config {args.config}: {exc}") from None
    if args.seed is None:
        args.seed = cfg.seed
    return cfg


def _dataset(args, cfg: RunConfig):
    if args.data:
        try:
            ds = dataset_io.load(args.data)
        except FileNotFoundError:
            raise CommandError(f"dataset not found: {args.data}") from None
        except dataset_io.DatasetFormatError as exc:
            raise CommandError(f"bad dataset {args.data}: {exc}") from None
        return ds, {"data": args.data}
    ds, _ = generate_synthetic(cfg.space, cfg.gen, seed=args.seed)
    return ds, {}


def _checkpoint(path) -> FieldModel:
    try:
        return checkpoint.load(path)
    except FileNotFoundError:
        raise CommandError(f"checkpoint not found: {path}") from None
    except (checkpoint.CheckpointError, KeyError, ValueError) as exc:
        raise CommandError(f"bad checkpoint {path}: {exc}") from None


def _check_match(model: FieldModel, ds) -> None:
    if model.space.fingerprint() != ds.space.fingerprint():
        raise CommandError("label space mismatch: checkpoint "
                           f"{model.space.fingerprint()} vs dataset {ds.space.fingerprint()}")
    if model.provider.feature_dim != ds.feature_dim:
        raise CommandError(f"feature dimension mismatch: checkpoint {model.provider.feature_dim} "
                           f"vs dataset {ds.feature_dim}")


def _variant(args) -> str:
    chosen = [v for v, flag in (("no_pairwise", args.no_pairwise), ("no_intent", args.no_intent),
                                ("semantic_only", args.semantic_only),
                                ("no_structure", args.no_structure)) if flag]
    if len(chosen) > 1:
        raise CommandError(f"ablation flags are exclusive, got {chosen}")
    return chosen[0] if chosen else args.variant


# commands ------------------------------------------------------------------

def cmd_generate(args) -> dict:
    cfg = _config(args)
    ds, gm = generate_synthetic(cfg.space, cfg.gen, seed=args.seed)
    outs = Outputs()
    outs.add("dataset.jsonl", dataset_io.dumps(ds))
    outs.add("generator.ckpt.json", checkpoint.dumps(gm))
    outs.commit(args.out, _manifest(args, cfg, {}))
    print(f"wrote {len(ds.videos)} videos ({len(ds.train)} train / {len(ds.test)} test) to {args.out}")
    return outs.files


def cmd_train(args) -> dict:
    cfg = _config(args)
    ds, inputs = _dataset(args, cfg)
    tc = replace(cfg.train, seed=args.seed, workers=args.workers)
    if args.lr is not None:
        tc = replace(tc, learning_rate=args.lr)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    if args.eval_every is not None:
        tc = replace(tc, eval_every=args.eval_every)
    variant = _variant(args)
    if args.init:
        model = _checkpoint(args.init)
        inputs["init"] = args.init
        _check_match(model, ds)
    else:
        model = FieldModel.init(ds.space, ds.feature_dim, variant, seed=args.seed, **cfg.model_kw())
    try:
        if args.sync:
            if args.distributed:
                raise CommandError("--distributed applies to asynchronous training only")
            model, log = train_synchronous_baseline(ds, model, cfg=tc)
        elif args.distributed:
            from .server import MessageStore, RemoteStore, serve_in_thread

            local = MessageStore(ds.space.n_object, ds.space.n_intent, tc.discount, tc.h_mode,
                                 tc.kernel_weighting)
            srv, addr = serve_in_thread(local)
            try:
                with RemoteStore(addr, ds.space.n_object, ds.space.n_intent) as remote:
                    model, log = train(ds, model, store=remote, cfg=tc)
            finally:
                srv.shutdown()
                srv.server_close()
        else:
            model, log = train(ds, model, cfg=tc)
    except TrainingError as exc:
        raise CommandError(f"training failed: {exc}", code=1) from None
    outs = Outputs()
    outs.add("model.ckpt.json", checkpoint.dumps(model))
    outs.add("train_log.jsonl", log.dumps())
    outs.commit(args.out, _manifest(args, cfg, inputs))
    ev = log.of_kind("eval")
    if ev:
        last = ev[-1]
        held = f" heldout_accuracy={last['heldout_accuracy']:.4f}" if "heldout_accuracy" in last else ""
        print(f"variant={variant} epochs={tc.epochs} train_accuracy={last['train_accuracy']:.4f}{held}")
    return outs.files


def cmd_eval(args) -> dict:
    cfg = _config(args)
    if not args.checkpoint:
        raise CommandError("eval needs --checkpoint")
    model = _checkpoint(args.checkpoint)
    ds, inputs = _dataset(args, cfg)
    inputs["checkpoint"] = args.checkpoint
    _check_match(model, ds)
    videos = ds.split(args.split)
    if not videos:
        raise CommandError(f"dataset has no {args.split!r} videos")
    ev = cfg.eval
    post = args.post_process or ev.get("post_process", False)
    outs = Outputs()
    metrics = {"split": args.split, "n_videos": len(videos), "post_process": post}
    try:
        if args.task in ("classification", "both"):
            r = evaluate_classification(model, videos,
                                        n_frames=ev.get("classify_frames", N_CLASSIFY_FRAMES))
            metrics["classification_map"] = r.mAP
            metrics["classification_excluded"] = r.n_excluded
            outs.add("classification_ap.tsv", r.table())
            print(f"classification mAP {r.mAP:.4f} (excluded classes: {r.n_excluded})")
        if args.task in ("localization", "both"):
            r = evaluate_localization(model, videos, post,
                                      n_frames=ev.get("localize_frames", N_LOCALIZE_FRAMES),
                                      n_rows=ev.get("localize_rows", N_LOCALIZE_ROWS),
                                      window=ev.get("smooth_window", SMOOTH_WINDOW))
            metrics["localization_map"] = r.mAP
            metrics["localization_excluded"] = r.n_excluded
            outs.add("localization_ap.tsv", r.table())
            print(f"localization mAP {r.mAP:.4f} (excluded classes: {r.n_excluded})")
    except ValueError as exc:
        raise CommandError(f"evaluation failed: {exc}") from None
    outs.add("metrics.json", json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    outs.commit(args.out, _manifest(args, cfg, inputs))
    return outs.files


def cmd_gradcheck(args) -> dict:
    try:
        rep = run_gradcheck(n_models=args.models, seed=args.seed or 0, epsilon=args.epsilon,
                            tolerance=args.tolerance, fault=args.inject_fault,
                            max_frames=args.max_frames, max_support=args.max_support,
                            max_intent=args.max_intent, max_states=args.max_states)
    except oracle.BudgetExceeded as exc:
        raise CommandError(f"refused: {exc}") from None
    text = rep.lines()
    print(text, end="")
    if args.out:
        outs = Outputs()
        outs.add("gradcheck.txt", text)
        outs.commit(args.out, _manifest(args, None, {}))
    if not rep.passed:
        raise CommandError("gradient check failed", code=1)
    return {"gradcheck.txt": text}


def cmd_oracle_compare(args) -> dict:
    from .learning.gradcheck import random_toy

    seed = args.seed or 0
    rows = ["model\tT\tK\tM\tfactorized\tmax_abs_marginal\tkl\telbo\tlog_z"]
    worst = 0.0
    for m in range(args.models):
        fld, _ = random_toy(seed * 1_000_003 + m, args.max_frames, args.max_support, args.max_intent)
        fld.mu = fld.mu.mean(axis=0)
        factorized = m % 2 == 1
        if factorized:
            fld.mu[:] = 0.0
            fld.fi[:] = 0.0
        try:
            ex = oracle.enumerate_exact(fld)
        except oracle.BudgetExceeded as exc:
            raise CommandError(f"refused: {exc}") from None
        st = infer_field(fld)
        diff = float(max(np.abs(st.q - ex.p_x).max(), np.abs(st.q_intent - ex.p_intent).max()))
        if factorized:
            worst = max(worst, diff)
        rows.append(f"{m}\t{fld.n_frames}\t{fld.space.support_size}\t{fld.space.n_intent}\t"
                    f"{int(factorized)}\t{diff:.3e}\t{oracle.kl_to_exact(fld, st):.6e}\t"
                    f"{oracle.elbo(fld, st):.9f}\t{ex.log_z:.9f}")
    text = "\n".join(rows) + "\n"
    print(text, end="")
    print(f"factorized models: worst marginal error {worst:.3e}")
    if args.out:
        outs = Outputs()
        outs.add("oracle_compare.tsv", text)
        outs.commit(args.out, _manifest(args, None, {}))
    return {"oracle_compare.tsv": text}


def cmd_ablate(args) -> dict:
    cfg = _config(args)
    ds, inputs = _dataset(args, cfg)
    variants = args.variants.split(",")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise CommandError(f"unknown variants {bad}; choose from {VARIANTS}")
    seeds = [args.seed + i for i in range(args.seeds)]
    tc = replace(cfg.train, workers=args.workers)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    res = ablation_run(ds, variants, seeds, tc, cfg.model_kw())
    outs = Outputs()
    outs.add("ablation_runs.tsv", "variant\tseed\tmetric\tvalue\n" + res.lines())
    outs.add("ablation_summary.tsv", res.table())
    print(res.table(), end="")
    outs.commit(args.out, _manifest(args, cfg, inputs))
    return outs.files


def cmd_infer(args) -> dict:
    cfg = _config(args)
    if not args.checkpoint:
        raise CommandError("infer needs --checkpoint")
    model = _checkpoint(args.checkpoint)
    ds, inputs = _dataset(args, cfg)
    inputs["checkpoint"] = args.checkpoint
    _check_match(model, ds)
    by_id = {v.video_id: v for v in ds.videos}
    vid = args.video or (ds.test[0].video_id if ds.test else ds.videos[0].video_id)
    if vid not in by_id:
        raise CommandError(f"no video {vid!r} in dataset")
    video = by_id[vid]
    st = infer_field(model.field(video), passes=args.passes, record_passes=True)
    parts = [f"# video {vid} passes {st.passes} converged {str(st.converged).lower()}\n"]
    for p, (q, qi) in enumerate(st.history, 1):
        parts.append(f"# pass {p} delta {st.deltas[p - 1]:.6e}\n")
        parts.append(dump_marginals(MarginalState(q, qi, st.positions), model.space, args.top_k,
                                    video.frame_indices))
    text = "".join(parts)
    outs = Outputs()
    outs.add(f"trace_{vid}.txt", text)
    outs.commit(args.out, _manifest(args, cfg, inputs))
    print(f"{vid}: {st.passes} passes, converged={st.converged}")
    return outs.files


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "oracle-compare": cmd_oracle_compare,
            "ablate": cmd_ablate, "infer": cmd_infer}
NEEDS_OUT = {"generate", "train", "eval", "ablate", "infer"}


# argument parsing ----------------------------------------------------------

def _global_options(p, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="seed (default: the config's seed)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--workers", type=int, default=d, help="worker threads (default 1, serial)")
    p.add_argument("--config", default=d,
                   help=f"config file or built-in name (default {DEFAULT_CONFIG!r})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    p = argparse.ArgumentParser(prog="asyncfield", description=__doc__.splitlines()[0])
    _global_options(p, suppress=False)
    p.add_argument("--replay", metavar="MANIFEST",
                   help="rerun the command recorded in a manifest and compare output hashes")
    p.add_argument("--version", action="version", version=f"asyncfield {__version__}")
    sub = p.add_subparsers(dest="command")

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    add("generate", "sample a synthetic dataset and its generating model")

    t = add("train", "train a model (asynchronous by default)")
    t.add_argument("--data", help="dataset file (default: generate from the config)")
    t.add_argument("--sync", action="store_true", help="whole-video synchronous baseline")
    t.add_argument("--distributed", action="store_true",
                   help="run the message store behind a local TCP server")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--eval-every", type=int, dest="eval_every")
    t.add_argument("--init", help="start from this checkpoint")
    t.add_argument("--variant", choices=VARIANTS, default="full")
    for flag in ("no-pairwise", "no-intent", "semantic-only", "no-structure"):
        t.add_argument(f"--{flag}", action="store_true")

    e = add("eval", "classification / localization mAP of a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--split", default="test")
    e.add_argument("--task", choices=("classification", "localization", "both"), default="both")
    e.add_argument("--post-process", action="store_true", dest="post_process",
                   help="smooth localization scores over time")

    g = add("gradcheck", "closed-form gradients vs finite differences on toy fields")
    g.add_argument("--models", type=int, default=20)
    g.add_argument("--epsilon", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-5)
    g.add_argument("--inject-fault", choices=FAULTS, dest="inject_fault")
    g.add_argument("--max-frames", type=int, default=4, dest="max_frames")
    g.add_argument("--max-support", type=int, default=12, dest="max_support")
    g.add_argument("--max-intent", type=int, default=3, dest="max_intent")
    g.add_argument("--max-states", type=int, default=oracle.DEFAULT_MAX_STATES, dest="max_states",
                   help="enumeration budget per toy model")

    o = add("oracle-compare", "mean-field marginals vs exact enumeration on toy fields")
    o.add_argument("--models", type=int, default=10)
    o.add_argument("--max-frames", type=int, default=4, dest="max_frames")
    o.add_argument("--max-support", type=int, default=12, dest="max_support")
    o.add_argument("--max-intent", type=int, default=3, dest="max_intent")

    a = add("ablate", "train and score several variants over several seeds")
    a.add_argument("--data")
    a.add_argument("--variants", default="full,no_pairwise,no_intent,semantic_only")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--epochs", type=int)

    i = add("infer", "per-pass marginal traces for one video")
    i.add_argument("--checkpoint")
    i.add_argument("--data")
    i.add_argument("--video")
    i.add_argument("--passes", type=int, default=10)
    i.add_argument("--top-k", type=int, default=3, dest="top_k")
    return p


def _normalize(args, argv) -> None:
    if args.config is None:
        args.config = DEFAULT_CONFIG
    if args.workers is None:
        args.workers = 1
    if args.workers < 1:
        raise CommandError("--workers must be >= 1")
    # argv recorded in the manifest, without the output directory
    rec, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        rec.append(tok)
    args.replay_argv = rec


def _replay(manifest_path, out_dir) -> int:
    try:
        man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read manifest {manifest_path}: {exc}", file=sys.stderr)
        return 2
    if man.get("format") != MANIFEST_FORMAT:
        print(f"error: {manifest_path} is not an asyncfield manifest", file=sys.stderr)
        return 2
    if not out_dir:
        print("error: --replay needs --out", file=sys.stderr)
        return 2
    code = main(list(man["argv"]) + ["--out", out_dir])
    if code != 0:
        return code
    fresh = json.loads((Path(out_dir) / MANIFEST).read_text(encoding="utf-8"))
    diff = sorted(k for k in set(man["outputs"]) | set(fresh["outputs"])
                  if man["outputs"].get(k) != fresh["outputs"].get(k))
    if diff:
        print(f"replay mismatch in: {', '.join(diff)}", file=sys.stderr)
        return 3
    print(f"replay reproduced {len(man['outputs'])} outputs byte for byte")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.replay:
        return _replay(args.replay, args.out)
    if not args.command:
        parser.print_help()
        return 2
    try:
        _normalize(args, argv)
        if args.command in NEEDS_OUT and not args.out:
            raise CommandError(f"{args.command} needs --out")
        COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
