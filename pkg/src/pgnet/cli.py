"""Command-line workbench: data generation, training, evaluation, analysis.

Every command is reproducible from its inputs alone: configs are plain
JSON with a version field, all defaults are echoed back into the output
manifests, and seeds fully determine datasets, initial weights, and
shuffling.  Reports go to stdout as JSON; errors go to stderr as a single
JSON line with a distinct exit code per failure family:

  0  success
  1  unexpected error
  2  usage error (unknown flags, missing arguments)
  3  malformed config, spec, or data
  4  checkpoint problems (missing, corrupt, version mismatch)
  5  operation failed (validation violations, accuracy below threshold)

The only environment variable consulted is PGNET_THREADS, the number of
seed-level worker processes used by multi-seed training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import episodes as eplib
from . import evaluation as evlib
from . import model as mdlib
from . import training as trlib
from .errors import CheckpointError, InvalidArgument

USAGE_ERROR = 2
CONFIG_ERROR = 3
CHECKPOINT_ERROR = 4
OPERATION_FAILED = 5

CONFIG_VERSION = 1

# table-row names accepted by train; the right column is the underlying
# trainable variant, with pointer structure arranged by the driver
TRAIN_VARIANTS = tuple(mdlib.VARIANTS) + ("pgn_ptrs", "oracle_ptrs")


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as machine-readable JSON."""

    def error(self, message):
        raise CliFailure(USAGE_ERROR, message)


# ------------------------------------------------------------------ helpers


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _threads() -> int:
    raw = os.environ.get("PGNET_THREADS", "1")
    try:
        val = int(raw)
    except ValueError as exc:
        raise CliFailure(CONFIG_ERROR, f"PGNET_THREADS is not an integer: {raw!r}") from exc
    if val < 1:
        raise CliFailure(CONFIG_ERROR, "PGNET_THREADS must be at least 1")
    return val


def _load_json(path, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliFailure(CONFIG_ERROR, f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliFailure(CONFIG_ERROR, f"{what} {path} is not valid JSON: {exc}") from exc


def _require_version(doc: dict, what: str) -> None:
    if doc.get("version") != CONFIG_VERSION:
        raise CliFailure(
            CONFIG_ERROR,
            f"{what} version {doc.get('version')!r} unsupported (expected {CONFIG_VERSION})",
        )


def _check_keys(doc: dict, allowed: set, required: set, what: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise CliFailure(CONFIG_ERROR, f"{what} has unknown keys: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise CliFailure(CONFIG_ERROR, f"{what} is missing keys: {sorted(missing)}")


def _write_json(path, obj) -> None:
    eplib.atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_data_dir(path) -> dict[str, list[eplib.Episode]]:
    try:
        return eplib.load_dataset(path)
    except (OSError, InvalidArgument, ValueError) as exc:
        raise CliFailure(CONFIG_ERROR, f"cannot load data from {path}: {exc}") from exc


def _load_ckpt(path):
    try:
        return mdlib.load_checkpoint(path)
    except CheckpointError as exc:
        raise CliFailure(CHECKPOINT_ERROR, str(exc)) from exc


def _save_ckpt(path, cfg, params) -> None:
    tmp = str(path) + ".tmp"
    mdlib.save_checkpoint(tmp, cfg, params)
    os.replace(tmp, path)


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "values": [float(v) for v in arr]}


# ----------------------------------------------------------------- generate


def _dataset_spec_from_doc(doc: dict) -> tuple[eplib.DatasetSpec, str]:
    _require_version(doc, "dataset spec")
    _check_keys(
        doc,
        {"version", "kind", "master_seed", "splits", "lct_mask_mode"},
        {"kind", "splits"},
        "dataset spec",
    )
    if not isinstance(doc["splits"], list) or not doc["splits"]:
        raise CliFailure(CONFIG_ERROR, "dataset spec needs a nonempty splits list")
    splits = []
    for i, s in enumerate(doc["splits"]):
        _check_keys(s, {"name", "episodes", "n", "ops"},
                    {"name", "episodes", "n", "ops"}, f"split {i}")
        splits.append(
            eplib.SplitSpec(name=s["name"], episodes=int(s["episodes"]),
                            n=int(s["n"]), ops=int(s["ops"]))
        )
    spec = eplib.DatasetSpec(
        kind=doc["kind"],
        splits=tuple(splits),
        master_seed=int(doc.get("master_seed", 0)),
    )
    return spec, doc.get("lct_mask_mode", "writes")


def cmd_generate(args) -> int:
    if args.paper:
        if not args.kind:
            raise CliFailure(USAGE_ERROR, "--paper needs --kind")
        spec = eplib.paper_protocol(args.kind, master_seed=args.master_seed)
        mask_mode = args.lct_mask_mode
    elif args.spec:
        doc = _load_json(args.spec, "dataset spec")
        if args.kind and doc.get("kind") != args.kind:
            raise CliFailure(CONFIG_ERROR,
                             f"--kind {args.kind} conflicts with spec kind {doc.get('kind')!r}")
        spec, mask_mode = _dataset_spec_from_doc(doc)
        if args.lct_mask_mode != "writes":
            mask_mode = args.lct_mask_mode
    else:
        raise CliFailure(USAGE_ERROR, "generate needs --spec or --paper")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        files = eplib.generate_dataset(spec, out, lct_mask_mode=mask_mode)
    except InvalidArgument as exc:
        raise CliFailure(CONFIG_ERROR, str(exc)) from exc
    manifest = {
        "version": CONFIG_VERSION,
        "kind": spec.kind,
        "master_seed": spec.master_seed,
        "lct_mask_mode": mask_mode,
        "splits": [
            {"name": s.name, "episodes": s.episodes, "n": s.n, "ops": s.ops}
            for s in spec.splits
        ],
        "files": {name: os.path.basename(path) for name, path in files.items()},
    }
    _write_json(out / "manifest.json", manifest)
    _emit(manifest)
    return 0


# -------------------------------------------------------------------- train

_TRAIN_KEYS = {
    "version", "variant", "data", "latent_dim", "epochs", "learning_rate",
    "beta1", "beta2", "adam_eps", "seeds", "pointer_loss_changed_only",
    "record_traces", "traces",
}

_TRAIN_DEFAULTS = {
    "latent_dim": 32,
    "epochs": 500,
    "learning_rate": 0.005,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1e-8,
    "seeds": [0],
    "pointer_loss_changed_only": False,
    "record_traces": False,
    "traces": None,
}

_PAPER_OVERRIDES = {
    "latent_dim": 32,
    "epochs": 5000,
    "learning_rate": 0.005,
    "seeds": [0, 1, 2, 3, 4],
}


def _resolve_train_config(doc: dict, config_dir, variant=None, paper=False) -> dict:
    _require_version(doc, "train config")
    _check_keys(doc, _TRAIN_KEYS, {"variant", "data"}, "train config")
    cfg = dict(_TRAIN_DEFAULTS)
    cfg.update({k: v for k, v in doc.items() if k != "version"})
    if variant:
        cfg["variant"] = variant
    if paper:
        cfg.update(_PAPER_OVERRIDES)
    if cfg["variant"] not in TRAIN_VARIANTS:
        raise CliFailure(
            CONFIG_ERROR,
            f"unknown variant {cfg['variant']!r}; choose from {sorted(TRAIN_VARIANTS)}",
        )
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and s >= 0 for s in seeds
    ):
        raise CliFailure(CONFIG_ERROR, "seeds must be a nonempty list of nonnegative ints")
    if len(set(seeds)) != len(seeds):
        raise CliFailure(CONFIG_ERROR, "seeds must be distinct")
    for key in ("epochs", "latent_dim"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise CliFailure(CONFIG_ERROR, f"{key} must be a positive integer")
    # paths in the config resolve relative to the config file
    data_path = Path(cfg["data"])
    if not data_path.is_absolute():
        data_path = Path(config_dir) / data_path
    cfg["data"] = str(data_path)
    if cfg["traces"] is not None:
        tr = Path(cfg["traces"])
        if not tr.is_absolute():
            tr = Path(config_dir) / tr
        cfg["traces"] = str(tr)
    if cfg["variant"] == "fixed_ptrs" and cfg["traces"] is None:
        raise CliFailure(
            CONFIG_ERROR,
            "variant fixed_ptrs needs recorded traces; "
            "use oracle_ptrs or pgn_ptrs for the built-in pipelines",
        )
    cfg["version"] = CONFIG_VERSION
    return cfg


def _model_config(cfg: dict, variant: str) -> mdlib.ModelConfig:
    return mdlib.for_variant(
        variant,
        latent_dim=cfg["latent_dim"],
        pointer_loss_changed_only=cfg["pointer_loss_changed_only"],
    )


def _train_config(cfg: dict, seed: int) -> trlib.TrainConfig:
    return trlib.TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        adam_eps=cfg["adam_eps"],
        master_seed=seed,
    )


def _epoch_logger(tag: str, epochs: int):
    stride = max(1, epochs // 20)

    def log(record):
        if record["epoch"] % stride == 0 or record["epoch"] == epochs:
            _progress(
                f"[{tag}] epoch {record['epoch']}/{epochs} "
                f"loss {record['train_loss']:.4f} val_f1 {record['val_f1']:.4f}"
            )

    return log


def _run_seed(job: dict) -> dict:
    cfg = job["cfg"]
    seed = job["seed"]
    seed_dir = Path(job["seed_dir"])
    seed_dir.mkdir(parents=True, exist_ok=True)
    data = _load_data_dir(cfg["data"])
    if "train" not in data or "val" not in data:
        raise CliFailure(CONFIG_ERROR, "dataset needs 'train' and 'val' splits")
    variant = cfg["variant"]
    tconf = _train_config(cfg, seed)
    tag = f"{variant} seed {seed}"
    meta = {"variant": variant, "seed": seed, "pointer_source": None}
    history_doc = {"seed": seed, "variant": variant}

    if variant == "oracle_ptrs":
        fixed = _model_config(cfg, "fixed_ptrs")
        result = trlib.train(
            fixed, tconf, data["train"], data["val"],
            train_structure=trlib.oracle_structure(data["train"]),
            val_structure=trlib.oracle_structure(data["val"]),
            log=_epoch_logger(tag, cfg["epochs"]),
        )
        meta["pointer_source"] = "oracle"
    elif variant == "pgn_ptrs":
        donor_cfg = _model_config(cfg, "pgn")
        donor = trlib.train(
            donor_cfg, tconf, data["train"], data["val"],
            log=_epoch_logger(f"{tag} phase 1", cfg["epochs"]),
        )
        _save_ckpt(seed_dir / "donor.bin", donor.cfg, donor.params)
        history_doc["donor"] = {
            "best_epoch": donor.best_epoch,
            "best_val_f1": donor.best_val_f1,
            "initial_val_f1": donor.initial_val_f1,
            "history": donor.history,
        }
        fixed = _model_config(cfg, "fixed_ptrs")
        result, traces = trlib.two_phase_pointer_training(
            donor.params, donor.cfg, data, tconf, fixed,
            trace_path=seed_dir / "traces.jsonl",
        )
        meta["pointer_source"] = "recorded"
        meta["traces"] = "traces.jsonl"
    elif variant == "fixed_ptrs":
        traces = trlib.load_pointer_traces(cfg["traces"])
        for split in ("train", "val"):
            if split not in traces or len(traces[split]) != len(data[split]):
                raise CliFailure(
                    CONFIG_ERROR, f"traces at {cfg['traces']} do not cover split {split!r}"
                )
        result = trlib.train(
            _model_config(cfg, variant), tconf, data["train"], data["val"],
            train_structure=traces["train"], val_structure=traces["val"],
            log=_epoch_logger(tag, cfg["epochs"]),
        )
        meta["pointer_source"] = "recorded"
        meta["traces"] = cfg["traces"]
    else:
        result = trlib.train(
            _model_config(cfg, variant), tconf, data["train"], data["val"],
            log=_epoch_logger(tag, cfg["epochs"]),
        )
        if cfg["record_traces"] and result.cfg.has_pointer_head:
            traces = {
                name: trlib.record_pointer_traces(result.params, result.cfg, eps)
                for name, eps in data.items()
            }
            trlib.save_pointer_traces(seed_dir / "traces.jsonl", traces)
            meta["traces"] = "traces.jsonl"

    _save_ckpt(seed_dir / "checkpoint.bin", result.cfg, result.params)
    history_doc.update(
        {
            "best_epoch": result.best_epoch,
            "best_val_f1": result.best_val_f1,
            "initial_val_f1": result.initial_val_f1,
            "history": result.history,
        }
    )
    _write_json(seed_dir / "history.json", history_doc)
    _write_json(seed_dir / "meta.json", meta)
    return {
        "seed": seed,
        "checkpoint": str(seed_dir / "checkpoint.bin"),
        "best_epoch": result.best_epoch,
        "best_val_f1": result.best_val_f1,
        "initial_val_f1": result.initial_val_f1,
    }


def cmd_train(args) -> int:
    doc = _load_json(args.config, "train config")
    cfg = _resolve_train_config(
        doc, Path(args.config).resolve().parent,
        variant=args.variant, paper=args.paper,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    jobs = [
        {"cfg": cfg, "seed": seed, "seed_dir": str(out / f"seed_{seed}")}
        for seed in cfg["seeds"]
    ]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed, jobs))
    else:
        results = [_run_seed(job) for job in jobs]
    report = {
        "config": cfg,
        "results": results,
        "aggregate": {"best_val_f1": _mean_std([r["best_val_f1"] for r in results])},
    }
    _write_json(out / "report.json", report)
    _emit(report)
    return 0


# --------------------------------------------------------------------- eval


def _discover_checkpoints(path) -> list[dict]:
    """A checkpoint file, or a train output directory with seed_*/ below."""
    p = Path(path)
    if p.is_file():
        return [{"label": p.stem, "path": p, "meta": None}]
    if p.is_dir():
        found = []
        for seed_dir in sorted(p.glob("seed_*")):
            ckpt = seed_dir / "checkpoint.bin"
            if ckpt.is_file():
                meta_path = seed_dir / "meta.json"
                meta = _load_json(meta_path, "meta") if meta_path.is_file() else None
                found.append({"label": seed_dir.name, "path": ckpt, "meta": meta})
        if found:
            return found
        direct = p / "checkpoint.bin"
        if direct.is_file():
            return [{"label": p.name, "path": direct, "meta": None}]
    raise CliFailure(CHECKPOINT_ERROR, f"no checkpoint found at {path}")


def _structure_for(entry, cfg, split, eps, args):
    """Pointer traces for the externally-fixed-pointer variant, or None."""
    if cfg.structure != "external":
        return None
    source = args.ptr_source
    traces_path = args.traces
    meta = entry["meta"]
    if source is None and meta is not None:
        source = meta.get("pointer_source")
        if source == "recorded" and traces_path is None:
            traces_path = str(Path(entry["path"]).parent / meta["traces"])
    if source == "oracle":
        return trlib.oracle_structure(eps)
    if source == "recorded":
        if traces_path is None:
            raise CliFailure(CONFIG_ERROR, "recorded pointer source needs --traces")
        traces = trlib.load_pointer_traces(traces_path)
        if split not in traces or len(traces[split]) != len(eps):
            raise CliFailure(
                CONFIG_ERROR, f"traces at {traces_path} do not cover split {split!r}"
            )
        return traces[split]
    raise CliFailure(
        CONFIG_ERROR,
        "checkpoint uses external pointers; pass --ptr-source oracle or "
        "--ptr-source recorded --traces file",
    )


def cmd_eval(args) -> int:
    entries = _discover_checkpoints(args.checkpoint)
    data = _load_data_dir(args.data)
    split_names = args.splits.split(",") if args.splits else sorted(data)
    for name in split_names:
        if name not in data:
            raise CliFailure(CONFIG_ERROR, f"split {name!r} not in {sorted(data)}")
    per_split: dict[str, list[dict]] = {name: [] for name in split_names}
    for entry in entries:
        cfg, params = _load_ckpt(entry["path"])
        for name in split_names:
            eps = data[name]
            structure = _structure_for(entry, cfg, name, eps, args)
            metrics = evlib.evaluate(
                params, cfg, eps,
                structure_ptrs=structure,
                teacher_forced=args.teacher_forced,
            )
            metrics["checkpoint"] = entry["label"]
            per_split[name].append(metrics)
            _progress(f"[eval] {entry['label']} {name}: f1 {metrics['query_f1']:.4f}")
    splits_report = {}
    for name in split_names:
        rows = per_split[name]
        agg = {"per_checkpoint": rows, "query_f1": _mean_std([r["query_f1"] for r in rows])}
        for key in ("pointer_accuracy", "mask_accuracy"):
            vals = [r[key] for r in rows if r[key] is not None]
            if vals:
                agg[key] = _mean_std(vals)
        splits_report[name] = agg
    report = {
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "teacher_forced": bool(args.teacher_forced),
        "splits": splits_report,
    }
    if args.report:
        _write_json(args.report, report)
    _emit(report)
    return 0


# ------------------------------------------------------------------ rollout


def cmd_rollout(args) -> int:
    if (args.episode is None) == (args.pathological is None):
        raise CliFailure(USAGE_ERROR, "rollout needs exactly one of --episode or --pathological")
    if args.pathological is not None:
        try:
            episode = evlib.pathological_protocol(args.pathological)
        except InvalidArgument as exc:
            raise CliFailure(CONFIG_ERROR, str(exc)) from exc
        label = args.label or "pathological"
        index = 0
    else:
        try:
            loaded = eplib.load_split(args.episode)
        except (OSError, InvalidArgument, ValueError) as exc:
            raise CliFailure(CONFIG_ERROR, f"cannot load episodes: {exc}") from exc
        index = args.index
        if not (0 <= index < len(loaded)):
            raise CliFailure(CONFIG_ERROR, f"episode index {index} out of range")
        episode = loaded[index]
        label = args.label or Path(args.episode).stem

    dot_dir = Path(args.dot)
    dot_dir.mkdir(parents=True, exist_ok=True)

    gt_steps = []
    for t, s in enumerate(episode.steps):
        rep = evlib.structure_report(s.parent, s.parent)
        gt_steps.append(
            {"step": t + 1, "valid": rep["valid"],
             "partition_match": rep["partition_match"], "depth": rep["gt_depth"]}
        )

    model_steps = None
    if args.checkpoint:
        cfg, params = _load_ckpt(args.checkpoint)
        try:
            reports = evlib.rollout_structure(params, cfg, episode)
        except InvalidArgument as exc:
            raise CliFailure(CONFIG_ERROR, str(exc)) from exc
        model_steps = []
        for t, rep in enumerate(reports):
            dot = evlib.to_dot(rep["ptr"], episode.steps[t].parent,
                               name=f"step{t + 1}")
            eplib.atomic_write_text(dot_dir / f"{label}_{index}_{t + 1}.dot", dot)
            model_steps.append(
                {k: rep[k] for k in ("step", "valid", "partition_match", "depth", "gt_depth")}
            )
    else:
        for t, s in enumerate(episode.steps):
            dot = evlib.to_dot(s.parent, name=f"step{t + 1}")
            eplib.atomic_write_text(dot_dir / f"{label}_{index}_{t + 1}.dot", dot)

    report = {
        "label": label,
        "episode": index,
        "kind": episode.kind,
        "n": episode.n,
        "steps": len(episode.steps),
        "ground_truth": gt_steps,
        "model": model_steps,
        "dot_dir": str(dot_dir),
    }
    _emit(report)
    return 0


# ------------------------------------------------------------------- credit


def cmd_credit(args) -> int:
    cfg, params = _load_ckpt(args.checkpoint)
    data = _load_data_dir(args.data)
    split_names = args.splits.split(",") if args.splits else sorted(data)
    report = {"checkpoint": str(args.checkpoint), "splits": {}}
    for name in split_names:
        if name not in data:
            raise CliFailure(CONFIG_ERROR, f"split {name!r} not in {sorted(data)}")
        try:
            report["splits"][name] = evlib.credit_assignment(params, cfg, data[name])
        except InvalidArgument as exc:
            raise CliFailure(CONFIG_ERROR, str(exc)) from exc
    _emit(report)
    return 0


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    episode = eplib.generate_episode("dsu", 5, 3, seed=20260818)
    threshold = 1e-5
    report = {"threshold": threshold, "variants": {}}
    worst = 0.0
    for variant in ("pgn", "pgn_nm", "gnn"):
        cfg = mdlib.for_variant(variant, latent_dim=args.latent_dim)
        params = mdlib.init_params(cfg, seed=7)

        def loss_fn():
            tape = ad.Tape()
            loss, _ = trlib.episode_loss(params, cfg, tape, episode)
            return loss, tape

        err = float(ad.grad_check(loss_fn, params.tensors(), eps=args.eps))
        report["variants"][variant] = err
        worst = max(worst, err)
        _progress(f"[gradcheck] {variant}: max relative error {err:.3e}")
    report["max_relative_error"] = worst
    report["pass"] = bool(worst < threshold)
    _emit(report)
    return 0 if report["pass"] else OPERATION_FAILED


# ----------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    data = _load_data_dir(args.data)
    total = 0
    violations = []
    for name in sorted(data):
        for i, ep in enumerate(data[name]):
            total += 1
            for problem in eplib.validate_episode(ep):
                violations.append({"split": name, "episode": i, "problem": problem})
    report = {
        "data": str(args.data),
        "episodes": total,
        "violations": len(violations),
        "details": violations[:20],
    }
    _emit(report)
    return 0 if not violations else OPERATION_FAILED


# ------------------------------------------------------------------- parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="pgnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample episode datasets", parents=[])
    p.add_argument("--kind", choices=eplib.KINDS)
    p.add_argument("--spec", help="dataset spec JSON")
    p.add_argument("--paper", action="store_true", help="use the full-protocol splits")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--lct-mask-mode", choices=("writes", "touched"), default="writes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one variant over one or more seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=TRAIN_VARIANTS, help="override the config's variant")
    p.add_argument("--paper", action="store_true",
                   help="full protocol: 5000 epochs, seeds 0-4, k=32, lr 0.005")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint file or train output directory")
    p.add_argument("--data", required=True)
    p.add_argument("--splits", help="comma-separated split names (default: all)")
    p.add_argument("--report", help="also write the report JSON here")
    p.add_argument("--teacher-forced", action="store_true",
                   help="carry ground-truth pointers and score per-step proposals")
    p.add_argument("--ptr-source", choices=("oracle", "recorded"),
                   help="pointer structure for external-pointer checkpoints")
    p.add_argument("--traces", help="recorded pointer traces JSONL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="per-step structure reports and DOT exports")
    p.add_argument("--checkpoint", help="model to roll out (omit for ground truth only)")
    p.add_argument("--episode", help="episodes JSONL to pick from")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--pathological", type=int,
                   help="use the adversarial chain protocol on this many nodes")
    p.add_argument("--label", help="filename prefix for DOT exports")
    p.add_argument("--dot", required=True, help="directory for DOT files")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("credit", help="readout winner shares on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--splits", help="comma-separated split names (default: all)")
    p.set_defaults(func=cmd_credit)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("validate", help="replay datasets against the oracle")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except CliFailure as exc:
        json.dump({"error": "cli", "code": exc.code, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return exc.code
    except CheckpointError as exc:
        json.dump({"error": "checkpoint", "code": CHECKPOINT_ERROR, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return CHECKPOINT_ERROR
    except InvalidArgument as exc:
        json.dump({"error": "config", "code": CONFIG_ERROR, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return CONFIG_ERROR
    except Exception as exc:  # pragma: no cover - last resort
        json.dump({"error": type(exc).__name__, "code": 1, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
