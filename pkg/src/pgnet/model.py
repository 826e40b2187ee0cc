"""The pointer-structured step model and its ablation variants.

One step consumes per-node input features and the previous latent state,
encodes them, runs one round of max-aggregation message passing over an
adjacency matrix derived from the current pointer state (or a fixed
topology, depending on the variant), and reads out three heads:

* a query logit for the whole graph (max readout over nodes),
* a per-node mask probability deciding whether the node keeps its pointer,
* pairwise attention scores whose row-wise argmax proposes new pointers.

Pointer choices and mask thresholds are hard decisions taken outside the
tape, so no gradient ever flows through them; across steps the only
differentiable path is the latent state.  Parameters are shared across
steps and do not depend on the number of nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import rng
from .errors import CheckpointError, InvalidArgument

VARIANTS = (
    "pgn",
    "pgn_nm",
    "deepsets",
    "gnn",
    "supgnn",
    "pgn_mo",
    "pgn_asym",
    "fixed_ptrs",
)

STRUCTURES = ("pointers_sym", "pointers_asym", "identity", "full", "external")

MODES = ("teacher_forced", "free_running")


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    latent_dim: int = 32
    input_dim: int = 2
    use_query_loss: bool = True
    use_pointer_loss: bool = False
    use_mask_loss: bool = False
    has_pointer_head: bool = False
    has_mask_head: bool = False
    structure: str = "pointers_sym"
    # restrict the pointer loss to nodes whose ground-truth mask says
    # "rewritten this step" instead of averaging over all nodes
    pointer_loss_changed_only: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown variant {self.variant!r}")
        if self.structure not in STRUCTURES:
            raise InvalidArgument(f"unknown structure {self.structure!r}")
        if self.latent_dim < 1 or self.input_dim < 1:
            raise InvalidArgument("latent_dim and input_dim must be positive")


_VARIANT_TABLE = {
    # variant: (pointer_loss, mask_loss, pointer_head, mask_head, structure)
    "pgn": (True, True, True, True, "pointers_sym"),
    "pgn_nm": (True, False, True, False, "pointers_sym"),
    "deepsets": (False, False, False, False, "identity"),
    "gnn": (False, False, False, False, "full"),
    "supgnn": (True, True, True, True, "full"),
    "pgn_mo": (False, True, True, True, "pointers_sym"),
    "pgn_asym": (True, True, True, True, "pointers_asym"),
    "fixed_ptrs": (False, False, False, False, "external"),
}


def for_variant(
    variant: str,
    latent_dim: int = 32,
    input_dim: int = 2,
    pointer_loss_changed_only: bool = False,
) -> ModelConfig:
    if variant not in _VARIANT_TABLE:
        raise InvalidArgument(f"unknown variant {variant!r}")
    ploss, mloss, phead, mhead, structure = _VARIANT_TABLE[variant]
    return ModelConfig(
        variant=variant,
        latent_dim=latent_dim,
        input_dim=input_dim,
        use_query_loss=True,
        use_pointer_loss=ploss,
        use_mask_loss=mloss,
        has_pointer_head=phead,
        has_mask_head=mhead,
        structure=structure,
        pointer_loss_changed_only=pointer_loss_changed_only,
    )


# --------------------------------------------------------------- parameters

_PARAM_ORDER = ("encoder", "message", "update", "query", "key", "mask", "decode")


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    k, m = cfg.latent_dim, cfg.input_dim
    return {
        "encoder": (m + k, k),
        "message": (2 * k, k),
        "update": (2 * k, k),
        "query": (k, k),
        "key": (k, k),
        "mask": (2 * k, 1),
        "decode": (2 * k, 1),
    }


@dataclass
class ModelParams:
    encoder_w: ad.Tensor
    encoder_b: ad.Tensor
    message_w: ad.Tensor
    message_b: ad.Tensor
    update_w: ad.Tensor
    update_b: ad.Tensor
    query_w: ad.Tensor
    query_b: ad.Tensor
    key_w: ad.Tensor
    key_b: ad.Tensor
    mask_w: ad.Tensor
    mask_b: ad.Tensor
    decode_w: ad.Tensor
    decode_b: ad.Tensor

    def items(self) -> list[tuple[str, ad.Tensor]]:
        out = []
        for name in _PARAM_ORDER:
            out.append((f"{name}_w", getattr(self, f"{name}_w")))
            out.append((f"{name}_b", getattr(self, f"{name}_b")))
        return out

    def tensors(self) -> list[ad.Tensor]:
        return [t for _, t in self.items()]


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    All seven layers are drawn in a fixed order regardless of variant so
    the stream of random numbers, and hence the shared layers, match
    across variants initialised from the same seed.
    """
    gen = rng.generator(seed)
    shapes = _param_shapes(cfg)
    tensors = {}
    for name in _PARAM_ORDER:
        fan_in, fan_out = shapes[name]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[f"{name}_w"] = ad.tensor(gen.uniform(-limit, limit, size=(fan_in, fan_out)))
        tensors[f"{name}_b"] = ad.zeros(1, fan_out)
    return ModelParams(**tensors)


# -------------------------------------------------------------------- state


@dataclass
class StepState:
    """Latents and pointers carried between steps; t counts steps taken."""

    h: ad.Tensor
    ptr: np.ndarray
    t: int


def initial_state(cfg: ModelConfig, n: int) -> StepState:
    if n < 1:
        raise InvalidArgument("need at least one node")
    return StepState(h=ad.zeros(n, cfg.latent_dim), ptr=np.arange(n, dtype=np.int64), t=0)


def step_features(priorities, u: int, v: int) -> np.ndarray:
    """Per-node inputs: static priority plus an operation-endpoint flag."""
    pri = np.asarray(priorities, dtype=np.float64)
    n = pri.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise InvalidArgument("operation endpoint out of range")
    feats = np.zeros((n, 2))
    feats[:, 0] = pri
    feats[u, 1] = 1.0
    feats[v, 1] = 1.0
    return feats


def structure_adjacency(cfg: ModelConfig, n: int, ptr=None) -> np.ndarray:
    """Boolean adjacency; entry [s, r] means node s sends a message to r."""
    if cfg.structure == "identity":
        return np.eye(n, dtype=bool)
    if cfg.structure == "full":
        return np.ones((n, n), dtype=bool)
    if ptr is None:
        raise InvalidArgument(f"structure {cfg.structure!r} needs pointers")
    p = np.asarray(ptr, dtype=np.int64)
    if p.shape != (n,) or (p.size and (p.min() < 0 or p.max() >= n)):
        raise InvalidArgument("pointer array must map n nodes into range")
    a = np.zeros((n, n), dtype=bool)
    a[np.arange(n), p] = True
    if cfg.structure in ("pointers_sym", "external"):
        return a | a.T
    if cfg.structure == "pointers_asym":
        # one direction only: i hears from j exactly when j points at i,
        # plus a mandatory self edge so no node is left without input
        a[np.arange(n), np.arange(n)] = True
        return a
    raise InvalidArgument(f"unknown structure {cfg.structure!r}")


# --------------------------------------------------------------------- step


@dataclass
class StepResult:
    state: StepState
    y_logit: ad.Tensor
    scores: ad.Tensor | None
    mask_logits: ad.Tensor | None
    predicted_ptr: np.ndarray | None
    mask_bits: np.ndarray | None
    winners: np.ndarray
    adjacency: np.ndarray


def _linear(tape, x, w, b):
    return ad.affine(tape, x, w, b)


def step(
    params: ModelParams,
    cfg: ModelConfig,
    tape: ad.Tape | None,
    state: StepState,
    features: np.ndarray,
    mode: str,
    forced_next_ptr=None,
    adjacency_override=None,
) -> StepResult:
    """Run one model step and return the new state plus head outputs.

    In teacher_forced mode the carried pointers for the next step are the
    supplied ground-truth ones; the model's own proposal is still returned
    for inspection.  adjacency_override bypasses pointer-derived structure
    and is required for the external-structure variant.
    """
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    if mode == "teacher_forced" and forced_next_ptr is None:
        raise InvalidArgument("teacher forcing needs the next pointer state")
    if mode == "free_running" and forced_next_ptr is not None:
        raise InvalidArgument("free running must not receive forced pointers")

    feats = np.asarray(features, dtype=np.float64)
    n = state.h.shape[0]
    if feats.shape != (n, cfg.input_dim):
        raise InvalidArgument(f"features {feats.shape}, expected {(n, cfg.input_dim)}")

    if adjacency_override is not None:
        adj = np.asarray(adjacency_override, dtype=bool)
        if adj.shape != (n, n):
            raise InvalidArgument("adjacency override must be n x n")
    elif cfg.structure == "external":
        raise InvalidArgument("external structure needs an adjacency override")
    else:
        adj = structure_adjacency(cfg, n, state.ptr)

    # encode: z = f(features || h_prev), linear
    e = ad.tensor(feats)
    z = _linear(tape, ad.concat_columns(tape, e, state.h), params.encoder_w, params.encoder_b)

    # process: h_i = relu(U(z_i || max over senders j of relu(M(z_i || z_j))))
    receivers, senders = np.nonzero(adj.T)  # receiver-major order
    starts = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(adj.sum(axis=0), out=starts[1:])
    agg, _ = ad.edge_message_max(
        tape, z, params.message_w, params.message_b, receivers, senders, starts
    )
    h = ad.relu(tape, _linear(tape, ad.concat_columns(tape, z, agg),
                              params.update_w, params.update_b))

    # readout: one logit from the columnwise max of z and h over all nodes
    everyone = (np.arange(n), np.array([0, n]))
    z_max, z_win = ad.reduce_max_over_set(tape, z, everyone)
    h_max, h_win = ad.reduce_max_over_set(tape, h, everyone)
    y_logit = _linear(tape, ad.concat_columns(tape, z_max, h_max),
                      params.decode_w, params.decode_b)
    winners = np.concatenate((z_win[0], h_win[0]))

    scores = None
    mask_logits = None
    predicted_ptr = None
    mask_bits = None
    if cfg.has_mask_head:
        mask_logits = _linear(tape, ad.concat_columns(tape, z, h),
                              params.mask_w, params.mask_b)
        mask_bits = ad.sigmoid(None, mask_logits).data[:, 0] > 0.5
    if cfg.has_pointer_head:
        q = _linear(tape, h, params.query_w, params.query_b)
        k = _linear(tape, h, params.key_w, params.key_b)
        scores = ad.matmul_nt(tape, q, k)
        proposal = scores.data.argmax(axis=1)  # ties resolve to lowest index
        if mask_bits is not None:
            predicted_ptr = np.where(mask_bits, state.ptr, proposal)
        else:
            predicted_ptr = proposal
        predicted_ptr = predicted_ptr.astype(np.int64)

    if mode == "teacher_forced":
        next_ptr = np.asarray(forced_next_ptr, dtype=np.int64).copy()
        if next_ptr.shape != (n,):
            raise InvalidArgument("forced pointers must cover every node")
    elif predicted_ptr is not None:
        next_ptr = predicted_ptr
    else:
        next_ptr = state.ptr

    new_state = StepState(h=h, ptr=next_ptr, t=state.t + 1)
    return StepResult(
        state=new_state,
        y_logit=y_logit,
        scores=scores,
        mask_logits=mask_logits,
        predicted_ptr=predicted_ptr,
        mask_bits=mask_bits,
        winners=winners,
        adjacency=adj,
    )


# -------------------------------------------------------------- checkpoints

_CHECKPOINT_FORMAT = "pgnet-checkpoint"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams) -> None:
    """One JSON header line, then raw little-endian float64 blocks."""
    named = params.items()
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
        "tensors": [
            {"name": name, "shape": list(t.data.shape)} for name, t in named
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing checkpoint header")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise CheckpointError("not a checkpoint file")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    try:
        cfg = ModelConfig(**header["config"])
    except (TypeError, KeyError, InvalidArgument) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc

    expected = [(f"{n}_{s}", None) for n in _PARAM_ORDER for s in ("w", "b")]
    entries = header.get("tensors")
    if not isinstance(entries, list) or [e.get("name") for e in entries] != [
        n for n, _ in expected
    ]:
        raise CheckpointError("checkpoint tensor list does not match layout")
    shapes = _param_shapes(cfg)
    body = blob[nl + 1 :]
    offset = 0
    tensors = {}
    for entry in entries:
        name, shape = entry["name"], entry.get("shape")
        base = name[:-2]
        want = shapes[base] if name.endswith("_w") else (1, shapes[base][1])
        if tuple(shape or ()) != want:
            raise CheckpointError(f"tensor {name}: shape {shape} does not match {want}")
        nbytes = want[0] * want[1] * 8
        block = body[offset : offset + nbytes]
        if len(block) != nbytes:
            raise CheckpointError(f"tensor {name}: checkpoint truncated")
        arr = np.frombuffer(block, dtype="<f8").astype(np.float64).reshape(want)
        tensors[name] = ad.tensor(arr)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after tensor blocks")
    return cfg, ModelParams(**tensors)


def clone_params(params: ModelParams) -> ModelParams:
    return ModelParams(**{name: ad.tensor(t.data) for name, t in params.items()})


def config_with(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)
