"""Teacher-forced training with Adam and best-on-validation selection.

An epoch is one shuffled pass over the training episodes with one
parameter update per episode.  Every step of an episode contributes a
weighted sum of the enabled losses (query, pointer rewiring, keep-mask),
and the episode loss is the mean over its steps, accumulated on a single
tape so gradients flow across steps through the latents.

During training the carried pointers are always the ground-truth ones
(the model's own proposals are produced but not fed back), so message
passing at step t runs over the structure implied by the ground truth
after step t-1, identity at the first step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng
from .episodes import Episode, atomic_write_text
from .errors import InvalidArgument
from .evaluation import evaluate
from .model import (
    ModelConfig,
    ModelParams,
    StepState,
    clone_params,
    init_params,
    initial_state,
    step,
    step_features,
    structure_adjacency,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    master_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument("need at least one epoch")


def _adjacency_for(cfg, n, t, structure_ptrs):
    """Structure override for step t (0-based) from recorded pointer arrays."""
    if structure_ptrs is None:
        return None
    prev = np.arange(n, dtype=np.int64) if t == 0 else structure_ptrs[t - 1]
    return structure_adjacency(cfg, n, prev)


def episode_loss(
    params: ModelParams,
    cfg: ModelConfig,
    tape: ad.Tape | None,
    episode: Episode,
    structure_ptrs=None,
) -> tuple[ad.Tensor, list]:
    """Teacher-forced loss over one episode; also returns the step results.

    structure_ptrs optionally supplies the pointer arrays that define the
    message-passing structure (entry t is the pointer state after step t),
    which is how externally-fixed pointers are injected; otherwise the
    structure follows the variant rule applied to the carried state.
    """
    n = episode.n
    state = initial_state(cfg, n)
    total = None
    results = []
    inv_steps = 1.0 / len(episode.steps)
    for t, s in enumerate(episode.steps):
        feats = step_features(episode.priorities, s.u, s.v)
        override = _adjacency_for(cfg, n, t, structure_ptrs)
        res = step(
            params, cfg, tape, state, feats,
            "teacher_forced",
            forced_next_ptr=np.asarray(s.parent, dtype=np.int64),
            adjacency_override=override,
        )
        parts = []
        if cfg.use_query_loss:
            parts.append(ad.bce_with_logits(tape, res.y_logit, np.array([[float(s.y)]])))
        if cfg.use_pointer_loss:
            weights = None
            if cfg.pointer_loss_changed_only:
                weights = 1.0 - np.asarray(s.mask, dtype=np.float64)
            parts.append(
                ad.softmax_cross_entropy(tape, res.scores, s.parent, weights=weights)
            )
        if cfg.use_mask_loss:
            targets = np.asarray(s.mask, dtype=np.float64).reshape(-1, 1)
            parts.append(ad.bce_with_logits(tape, res.mask_logits, targets))
        if not parts:
            raise InvalidArgument("variant enables no losses")
        step_loss = parts[0]
        for p in parts[1:]:
            step_loss = ad.add(tape, step_loss, p)
        total = step_loss if total is None else ad.add(tape, total, step_loss)
        results.append(res)
        state = res.state
    return ad.scale(tape, total, inv_steps), results


# --------------------------------------------------------------------- adam


class AdamState:
    """First/second moment estimates per parameter, one shared step count."""

    def __init__(self, params: ModelParams):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.t = 0


def adam_update(
    params: ModelParams, grads: ad.Gradients, state: AdamState, tconf: TrainConfig
) -> None:
    state.t += 1
    b1, b2 = tconf.beta1, tconf.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, tensor in params.items():
        g = grads.of(tensor)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        tensor.data -= tconf.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + tconf.adam_eps)


# -------------------------------------------------------------------- train


@dataclass
class TrainResult:
    params: ModelParams
    cfg: ModelConfig
    train_config: TrainConfig
    best_epoch: int
    best_val_f1: float
    initial_val_f1: float
    history: list[dict] = field(default_factory=list)


def train(
    cfg: ModelConfig,
    tconf: TrainConfig,
    train_episodes: list[Episode],
    val_episodes: list[Episode],
    train_structure=None,
    val_structure=None,
    log=None,
) -> TrainResult:
    """Full training run; returns the parameters best on validation F1.

    train_structure/val_structure are per-episode lists of recorded
    pointer arrays for the externally-fixed-pointer variant, aligned by
    index with the episode lists.  Selection keeps the earliest epoch on
    ties (a later epoch must be strictly better to replace the incumbent);
    the untrained model participates as epoch 0.
    """
    if not train_episodes or not val_episodes:
        raise InvalidArgument("need nonempty train and validation splits")
    if train_structure is not None and len(train_structure) != len(train_episodes):
        raise InvalidArgument("one pointer trace per training episode")
    if val_structure is not None and len(val_structure) != len(val_episodes):
        raise InvalidArgument("one pointer trace per validation episode")

    params = init_params(cfg, rng.derive_seed(tconf.master_seed, "init", 0))
    adam = AdamState(params)
    shuffle = rng.generator(rng.derive_seed(tconf.master_seed, "shuffle", 0))

    initial = evaluate(params, cfg, val_episodes, structure_ptrs=val_structure)
    initial_f1 = initial["query_f1"]
    best_f1 = initial_f1
    best_epoch = 0
    best_params = clone_params(params)
    history = []

    order = np.arange(len(train_episodes))
    for epoch in range(1, tconf.epochs + 1):
        shuffle.shuffle(order)
        losses = np.empty(order.size)
        for pos, idx in enumerate(order):
            ep = train_episodes[idx]
            tape = ad.Tape()
            loss, _ = episode_loss(
                params, cfg, tape, ep,
                structure_ptrs=None if train_structure is None else train_structure[idx],
            )
            grads = ad.backward(tape, loss)
            adam_update(params, grads, adam, tconf)
            losses[pos] = loss.item()
        metrics = evaluate(params, cfg, val_episodes, structure_ptrs=val_structure)
        record = {
            "epoch": epoch,
            "train_loss": float(losses.mean()),
            "val_f1": metrics["query_f1"],
        }
        history.append(record)
        if log is not None:
            log(record)
        if metrics["query_f1"] > best_f1:
            best_f1 = metrics["query_f1"]
            best_epoch = epoch
            best_params = clone_params(params)

    return TrainResult(
        params=best_params,
        cfg=cfg,
        train_config=tconf,
        best_epoch=best_epoch,
        best_val_f1=best_f1,
        initial_val_f1=initial_f1,
        history=history,
    )


# ------------------------------------------------- recorded pointer traces


def record_pointer_traces(
    params: ModelParams, cfg: ModelConfig, episodes: list[Episode]
) -> list[list[np.ndarray]]:
    """Free-running carried pointers after each step, one trace per episode."""
    if not cfg.has_pointer_head:
        raise InvalidArgument("variant has no pointers to record")
    traces = []
    for ep in episodes:
        state = initial_state(cfg, ep.n)
        trace = []
        for s in ep.steps:
            feats = step_features(ep.priorities, s.u, s.v)
            res = step(params, cfg, None, state, feats, "free_running")
            trace.append(res.state.ptr.copy())
            state = res.state
        traces.append(trace)
    return traces


def oracle_structure(episodes: list[Episode]) -> list[list[np.ndarray]]:
    """Ground-truth pointer traces in the same shape as recorded ones."""
    return [
        [np.asarray(s.parent, dtype=np.int64) for s in ep.steps] for ep in episodes
    ]


def save_pointer_traces(path, traces_by_split: dict[str, list[list[np.ndarray]]]) -> None:
    """One JSON line per episode: split, episode index, per-step pointers."""
    lines = []
    for split in sorted(traces_by_split):
        for idx, trace in enumerate(traces_by_split[split]):
            lines.append(
                json.dumps(
                    {
                        "split": split,
                        "episode": idx,
                        "ptrs": [[int(p) for p in arr] for arr in trace],
                    },
                    separators=(",", ":"),
                )
            )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_pointer_traces(path) -> dict[str, list[list[np.ndarray]]]:
    by_split: dict[str, dict[int, list[np.ndarray]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            trace = [np.asarray(p, dtype=np.int64) for p in rec["ptrs"]]
            by_split.setdefault(rec["split"], {})[int(rec["episode"])] = trace
    out = {}
    for split, items in by_split.items():
        if sorted(items) != list(range(len(items))):
            raise InvalidArgument(f"split {split!r} has gaps in episode indices")
        out[split] = [items[i] for i in range(len(items))]
    return out


def two_phase_pointer_training(
    donor_params: ModelParams,
    donor_cfg: ModelConfig,
    splits: dict[str, list[Episode]],
    tconf: TrainConfig,
    fixed_cfg: ModelConfig,
    trace_path=None,
) -> tuple[TrainResult, dict[str, list[list[np.ndarray]]]]:
    """Record a trained model's pointers, then train a fresh query-only
    model that message-passes over those recorded pointers."""
    if "train" not in splits or "val" not in splits:
        raise InvalidArgument("need train and val splits")
    traces = {
        name: record_pointer_traces(donor_params, donor_cfg, eps)
        for name, eps in splits.items()
    }
    if trace_path is not None:
        save_pointer_traces(trace_path, traces)
    result = train(
        fixed_cfg,
        tconf,
        splits["train"],
        splits["val"],
        train_structure=traces["train"],
        val_structure=traces["val"],
    )
    return result, traces
