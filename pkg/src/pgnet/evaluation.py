"""Free-running evaluation, credit assignment, and structure analyses.

Evaluation never teacher-forces unless asked: the model's own carried
pointers drive message passing, so errors compound exactly as they would
in deployment.  Query answers are pooled over every (episode, step) pair
before computing F1; pointer and mask accuracies are pooled over every
(node, step) pair.
"""

from __future__ import annotations

import numpy as np

from . import dsu
from .episodes import Episode, StepRecord
from .errors import InvalidArgument
from .model import (
    ModelConfig,
    ModelParams,
    initial_state,
    step,
    step_features,
    structure_adjacency,
)
from .oracle import components_from_edges


def f1_binary(predicted, actual) -> float:
    """F1 for the positive class; 0.0 when the score is undefined."""
    p = np.asarray(predicted, dtype=bool)
    a = np.asarray(actual, dtype=bool)
    if p.shape != a.shape:
        raise InvalidArgument("prediction and target lengths differ")
    tp = int(np.sum(p & a))
    fp = int(np.sum(p & ~a))
    fn = int(np.sum(~p & a))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2.0 * tp / denom


def _structure_override(cfg, n, t, structure_ptrs):
    if structure_ptrs is None:
        return None
    prev = np.arange(n, dtype=np.int64) if t == 0 else structure_ptrs[t - 1]
    return structure_adjacency(cfg, n, prev)


def evaluate(
    params: ModelParams,
    cfg: ModelConfig,
    episodes: list[Episode],
    structure_ptrs=None,
    teacher_forced: bool = False,
) -> dict:
    """Pooled query F1 plus pointer/mask accuracy where the heads exist.

    structure_ptrs: per-episode lists of pointer arrays fixing the
    message-passing structure (externally-fixed-pointer variant).
    teacher_forced: carry ground-truth pointers between steps and score
    the model's per-step proposals instead of its compounded rollout.
    """
    if not episodes:
        raise InvalidArgument("no episodes to evaluate")
    if structure_ptrs is not None and len(structure_ptrs) != len(episodes):
        raise InvalidArgument("one pointer trace per episode")
    pred_y, true_y = [], []
    ptr_hits = ptr_total = 0
    mask_hits = mask_total = 0
    n_steps = 0
    for e_idx, ep in enumerate(episodes):
        state = initial_state(cfg, ep.n)
        trace = None if structure_ptrs is None else structure_ptrs[e_idx]
        for t, s in enumerate(ep.steps):
            feats = step_features(ep.priorities, s.u, s.v)
            override = _structure_override(cfg, ep.n, t, trace)
            if teacher_forced:
                res = step(
                    params, cfg, None, state, feats, "teacher_forced",
                    forced_next_ptr=np.asarray(s.parent, dtype=np.int64),
                    adjacency_override=override,
                )
            else:
                res = step(params, cfg, None, state, feats, "free_running",
                           adjacency_override=override)
            pred_y.append(res.y_logit.item() > 0.0)
            true_y.append(bool(s.y))
            gt_parent = np.asarray(s.parent, dtype=np.int64)
            if res.predicted_ptr is not None:
                scored = res.predicted_ptr if teacher_forced else res.state.ptr
                ptr_hits += int(np.sum(scored == gt_parent))
                ptr_total += ep.n
            if res.mask_bits is not None:
                gt_mask = np.asarray(s.mask, dtype=bool)
                mask_hits += int(np.sum(res.mask_bits == gt_mask))
                mask_total += ep.n
            state = res.state
            n_steps += 1
    pred = np.asarray(pred_y)
    true = np.asarray(true_y)
    return {
        "query_f1": f1_binary(pred, true),
        "query_accuracy": float(np.mean(pred == true)),
        "pointer_accuracy": (ptr_hits / ptr_total) if ptr_total else None,
        "mask_accuracy": (mask_hits / mask_total) if mask_total else None,
        "episodes": len(episodes),
        "steps": n_steps,
    }


# -------------------------------------------------------- credit assignment


def credit_assignment(
    params: ModelParams, cfg: ModelConfig, episodes: list[Episode]
) -> dict:
    """Which nodes win the readout max, free-running.

    Each step the readout takes a columnwise max over nodes; every column
    has one winning node.  Winner slots are classified as the step's
    operands, other nodes the ground truth rewrote this step, or nodes it
    kept untouched.
    """
    if not episodes:
        raise InvalidArgument("no episodes to analyse")
    operand = rewritten = kept = total = 0
    for ep in episodes:
        state = initial_state(cfg, ep.n)
        for s in ep.steps:
            feats = step_features(ep.priorities, s.u, s.v)
            res = step(params, cfg, None, state, feats, "free_running")
            gt_mask = np.asarray(s.mask, dtype=np.int64)
            for node in res.winners:
                if node == s.u or node == s.v:
                    operand += 1
                elif gt_mask[node] == 0:
                    rewritten += 1
                else:
                    kept += 1
                total += 1
            state = res.state
    return {
        "operand_share": operand / total,
        "other_rewritten_share": rewritten / total,
        "kept_share": kept / total,
        "winner_slots": total,
    }


# ------------------------------------------------------- structure analysis


def pointer_validity(ptr) -> bool:
    """True when every cycle of the pointer map is a self-loop."""
    p = np.asarray(ptr, dtype=np.int64)
    n = p.shape[0]
    f = p.copy()
    hops = 1
    while hops < n:
        f = f[f]
        hops *= 2
    return bool(np.all(p[f] == f))


def pointer_depth(ptr):
    """Nodes on the longest root-directed path; None when cycles exist."""
    p = np.asarray(ptr, dtype=np.int64)
    if not pointer_validity(p):
        return None
    n = p.shape[0]
    depth = np.zeros(n, dtype=np.int64)
    for i in range(n):
        chain = []
        j = i
        while depth[j] == 0:
            chain.append(j)
            if p[j] == j:
                break
            j = p[j]
        base = depth[j] if depth[j] else 0
        for k, node in enumerate(reversed(chain)):
            depth[node] = base + k + 1
    return int(depth.max())


def partition_labels(ptr) -> np.ndarray:
    """Weak connected components of the pointer graph, labelled by minimum."""
    p = np.asarray(ptr, dtype=np.int64)
    n = p.shape[0]
    return components_from_edges(n, [(i, int(p[i])) for i in range(n)])


def structure_report(ptr, gt_parent) -> dict:
    """Compare one pointer snapshot against the ground-truth forest."""
    pred = np.asarray(ptr, dtype=np.int64)
    gt = np.asarray(gt_parent, dtype=np.int64)
    if pred.shape != gt.shape:
        raise InvalidArgument("pointer arrays differ in length")
    return {
        "valid": pointer_validity(pred),
        "partition_match": bool(
            np.array_equal(partition_labels(pred), partition_labels(gt))
        ),
        "depth": pointer_depth(pred),
        "gt_depth": pointer_depth(gt),
    }


def rollout_structure(
    params: ModelParams, cfg: ModelConfig, episode: Episode
) -> list[dict]:
    """Free-running per-step structure reports for one episode.

    Each entry carries the carried pointer snapshot after the step, its
    validity and depth, and whether its weak components match the ground
    truth partition.
    """
    if not cfg.has_pointer_head:
        raise InvalidArgument("variant carries no pointers to analyse")
    state = initial_state(cfg, episode.n)
    out = []
    for t, s in enumerate(episode.steps):
        feats = step_features(episode.priorities, s.u, s.v)
        res = step(params, cfg, None, state, feats, "free_running")
        report = structure_report(res.state.ptr, s.parent)
        report["step"] = t + 1
        report["ptr"] = res.state.ptr.copy()
        out.append(report)
        state = res.state
    return out


def to_dot(ptr, gt_parent=None, name="pointers") -> str:
    """Pointer graph in DOT form; mismatched nodes are highlighted."""
    p = np.asarray(ptr, dtype=np.int64)
    gt = None if gt_parent is None else np.asarray(gt_parent, dtype=np.int64)
    lines = [f"digraph {name} {{", "  node [shape=circle];"]
    for i in range(p.shape[0]):
        attrs = ""
        if gt is not None and gt[i] != p[i]:
            attrs = ' [style=filled, fillcolor="#f4cccc"]'
        lines.append(f"  {i}{attrs};")
    for i in range(p.shape[0]):
        if p[i] != i:
            lines.append(f"  {i} -> {p[i]};")
        else:
            lines.append(f"  {i} -> {i} [style=dotted];")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------ adversarial chains


def pathological_protocol(n: int) -> Episode:
    """A chain-building episode that defeats fixed-radius message passing.

    Priorities increase with the index and operations join neighbours in
    order, so after step t the ground-truth forest is a single path of
    t+1 nodes: every step deepens the structure and every query answers 1.
    """
    if n < 2:
        raise InvalidArgument("need at least two nodes")
    priorities = [(i + 0.5) / n for i in range(n)]
    state = dsu.dsu_new(n, priorities)
    steps = []
    for i in range(n - 1):
        answer, mask, parent = dsu.dsu_query_union(state, i, i + 1)
        steps.append(StepRecord(u=i, v=i + 1, y=answer, mask=mask, parent=parent))
    return Episode(
        kind="dsu", n=n, ops=n - 1, seed=0, priorities=priorities, steps=steps
    )
