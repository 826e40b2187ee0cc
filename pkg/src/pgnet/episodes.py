"""Episode generation, validation, and dataset persistence.

An episode is one operation sequence against a single structure along
with everything the model is supervised on at each step: the query
answer, the per-node keep mask (1 = keep), and the post-operation
pointer snapshot.  Episodes serialise to JSONL with a fixed field order
and 17-significant-digit reals so files round-trip byte-identically.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from . import rng
from .dsu import dsu_new, dsu_query_union
from .errors import ContractViolation, InvalidArgument
from .lct import lct_new, lct_query_toggle
from .oracle import (
    NaiveForest,
    components_from_edges,
    components_from_parents,
    naive_connected,
)

KINDS = ("dsu", "lct")
FORMAT_VERSION = 1


@dataclass
class StepRecord:
    u: int
    v: int
    y: int
    mask: list[int]
    parent: list[int]


@dataclass
class Episode:
    kind: str
    n: int
    ops: int
    seed: int
    priorities: list[float]
    steps: list[StepRecord]


@dataclass
class SplitSpec:
    name: str
    episodes: int
    n: int
    ops: int


@dataclass
class DatasetSpec:
    kind: str
    splits: list[SplitSpec]
    master_seed: int


def sample_priorities(gen, n: int) -> list[float]:
    """n distinct uniforms in [0,1), drawn one at a time, collisions redrawn."""
    out: list[float] = []
    seen: set[float] = set()
    while len(out) < n:
        x = float(gen.random())
        if x in seen:
            continue
        seen.add(x)
        out.append(x)
    return out


def sample_pair(gen, n: int) -> tuple[int, int]:
    """Uniform unordered pair, reported in sampled order: u first, then v
    uniform over the remaining nodes."""
    u = int(gen.integers(n))
    v = int(gen.integers(n - 1))
    if v >= u:
        v += 1
    return u, v


def generate_episode(
    kind: str, n: int, ops: int, seed: int, lct_mask_mode: str = "writes"
) -> Episode:
    """Drive one freshly seeded structure for `ops` random query steps."""
    if kind not in KINDS:
        raise InvalidArgument(f"unknown kind {kind!r}")
    if n < 2:
        raise InvalidArgument(f"episodes need n >= 2, got {n}")
    if ops < 1:
        raise InvalidArgument(f"episodes need ops >= 1, got {ops}")
    gen = rng.generator(seed)
    priorities = sample_priorities(gen, n)
    steps: list[StepRecord] = []
    if kind == "dsu":
        state = dsu_new(n, priorities)
        for _ in range(ops):
            u, v = sample_pair(gen, n)
            y, mask, parent = dsu_query_union(state, u, v)
            steps.append(StepRecord(u, v, y, mask, parent))
    else:
        state = lct_new(n, priorities)
        for _ in range(ops):
            u, v = sample_pair(gen, n)
            y, mask, parent = lct_query_toggle(state, u, v, mask_mode=lct_mask_mode)
            steps.append(StepRecord(u, v, y, mask, parent))
    return Episode(kind, n, ops, seed, priorities, steps)


def _fmt_real(x: float) -> str:
    return format(x, ".17g")


def episode_to_json(ep: Episode) -> str:
    """Fixed-field-order single-line JSON for one episode."""
    pri = ",".join(_fmt_real(p) for p in ep.priorities)
    steps = ",".join(
        '{"u":%d,"v":%d,"y":%d,"mask":[%s],"parent":[%s]}'
        % (
            s.u,
            s.v,
            s.y,
            ",".join(str(b) for b in s.mask),
            ",".join(str(p) for p in s.parent),
        )
        for s in ep.steps
    )
    return (
        '{"version":%d,"kind":"%s","n":%d,"ops":%d,"seed":%d,'
        '"priorities":[%s],"steps":[%s]}'
        % (FORMAT_VERSION, ep.kind, ep.n, ep.ops, ep.seed, pri, steps)
    )


def episode_from_json(line: str) -> Episode:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"malformed episode line: {exc}") from exc
    if raw.get("version") != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported episode version {raw.get('version')!r}")
    try:
        steps = [
            StepRecord(s["u"], s["v"], s["y"], list(s["mask"]), list(s["parent"]))
            for s in raw["steps"]
        ]
        return Episode(
            raw["kind"], raw["n"], raw["ops"], raw["seed"],
            [float(p) for p in raw["priorities"]], steps,
        )
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"malformed episode line: {exc}") from exc


def validate_episode(episode: Episode) -> list[str]:
    """Replay against the naive oracle; returns violations (empty = clean).

    Checks per step: the recorded answer against BFS connectivity, the
    partition induced by the pointer snapshot against the oracle's, and
    the mask-consistency rule (kept nodes keep their pointer target).
    """
    out: list[str] = []
    n = episode.n
    if episode.kind not in KINDS:
        return [f"episode: unknown kind {episode.kind!r}"]
    if len(set(episode.priorities)) != n or any(
        not 0.0 <= p < 1.0 for p in episode.priorities
    ):
        out.append("episode: priorities not distinct reals in [0,1)")
    if len(episode.steps) != episode.ops:
        out.append(f"episode: expected {episode.ops} steps, found {len(episode.steps)}")
    edges: set[tuple[int, int]] = set()
    forest = NaiveForest(n) if episode.kind == "lct" else None
    prev_parent = list(range(n))
    for t, s in enumerate(episode.steps):
        if not (0 <= s.u < n and 0 <= s.v < n) or s.u == s.v:
            out.append(f"step {t}: bad operands ({s.u},{s.v})")
            continue
        connected = naive_connected(edges, s.u, s.v)
        if episode.kind == "dsu":
            expected = 0 if connected else 1
            if expected == 1:
                edges.add((min(s.u, s.v), max(s.u, s.v)))
            truth_labels = components_from_edges(n, edges)
        else:
            expected = 1 if connected else 0
            forest.query_toggle(s.u, s.v, episode.priorities)
            edges = forest.edges()
            truth_labels = components_from_edges(n, edges)
        if s.y != expected:
            out.append(f"step {t}: answer {s.y} but oracle says {expected}")
        if len(s.parent) != n or any(not 0 <= p < n for p in s.parent):
            out.append(f"step {t}: malformed parent snapshot")
            continue
        if components_from_parents(s.parent) != truth_labels:
            out.append(f"step {t}: pointer partition diverges from oracle")
        if len(s.mask) != n or any(b not in (0, 1) for b in s.mask):
            out.append(f"step {t}: malformed mask")
            continue
        for i in range(n):
            if s.mask[i] == 1 and s.parent[i] != prev_parent[i]:
                out.append(f"step {t}: node {i} kept by mask but pointer changed")
        prev_parent = s.parent
    return out


def paper_protocol(kind: str, master_seed: int) -> DatasetSpec:
    """The experiment's dataset layout: small train/val, larger test sets."""
    if kind not in KINDS:
        raise InvalidArgument(f"unknown kind {kind!r}")
    splits = [
        SplitSpec("train", 70, 20, 30),
        SplitSpec("val", 35, 20, 30),
        SplitSpec("test_50", 35, 50, 75),
        SplitSpec("test_100", 35, 100, 150),
    ]
    if kind == "lct":
        splits.append(SplitSpec("test_200", 35, 200, 300))
    return DatasetSpec(kind, splits, master_seed)


def split_seeds(spec: DatasetSpec) -> dict[str, list[int]]:
    """Per-episode seeds for every split, checked for collisions."""
    names = [s.name for s in spec.splits]
    if len(set(names)) != len(names):
        raise InvalidArgument("split names must be unique")
    seeds = {
        s.name: [rng.derive_seed(spec.master_seed, s.name, i) for i in range(s.episodes)]
        for s in spec.splits
    }
    flat = [x for v in seeds.values() for x in v]
    if len(set(flat)) != len(flat):
        raise ContractViolation("derived episode seeds collide")
    return seeds


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def generate_dataset(
    spec: DatasetSpec, out_dir, lct_mask_mode: str = "writes"
) -> dict[str, str]:
    """Write one JSONL file per split; returns split name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = split_seeds(spec)
    paths: dict[str, str] = {}
    for split in spec.splits:
        lines = [
            episode_to_json(
                generate_episode(
                    spec.kind, split.n, split.ops, seed, lct_mask_mode=lct_mask_mode
                )
            )
            for seed in seeds[split.name]
        ]
        path = os.path.join(out_dir, f"{split.name}.jsonl")
        atomic_write_text(path, "\n".join(lines) + "\n")
        paths[split.name] = path
    return paths


def load_split(path: str) -> list[Episode]:
    with open(path) as fh:
        return [episode_from_json(line) for line in fh if line.strip()]


def load_dataset(path: str) -> dict[str, list[Episode]]:
    """Load every `<split>.jsonl` under a directory (or one file)."""
    if os.path.isfile(path):
        name = os.path.splitext(os.path.basename(path))[0]
        return {name: load_split(path)}
    if not os.path.isdir(path):
        raise InvalidArgument(f"no dataset at {path}")
    out: dict[str, list[Episode]] = {}
    for entry in sorted(os.listdir(path)):
        if entry.endswith(".jsonl"):
            out[os.path.splitext(entry)[0]] = load_split(os.path.join(path, entry))
    if not out:
        raise InvalidArgument(f"no .jsonl splits under {path}")
    return out
