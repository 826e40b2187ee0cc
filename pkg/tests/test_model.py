"""Step-level model properties: structure, heads, invariances, checkpoints."""

import numpy as np
import pytest

from pgnet import autodiff as ad
from pgnet.errors import CheckpointError, InvalidArgument
from pgnet.model import (
    VARIANTS,
    ModelConfig,
    clone_params,
    config_with,
    for_variant,
    init_params,
    initial_state,
    load_checkpoint,
    save_checkpoint,
    step,
    step_features,
    structure_adjacency,
)


def make_step_inputs(n, seed=0, k=8):
    cfg = for_variant("pgn", latent_dim=k)
    params = init_params(cfg, seed)
    gen = np.random.default_rng(seed + 100)
    pri = gen.permutation(n) / n
    u, v = 0, n - 1
    feats = step_features(pri, u, v)
    return cfg, params, feats


def run_one(cfg, params, feats, ptr=None, adjacency_override=None):
    n = feats.shape[0]
    state = initial_state(cfg, n)
    if ptr is not None:
        state.ptr = np.asarray(ptr, dtype=np.int64)
    return step(
        params, cfg, None, state, feats, "free_running",
        adjacency_override=adjacency_override,
    )


# ------------------------------------------------------------- structure


def test_symmetrisation_is_union_of_both_directions():
    cfg = for_variant("pgn")
    adj = structure_adjacency(cfg, 3, [1, 2, 2])
    want = np.array(
        [[False, True, False], [True, False, True], [False, True, True]]
    )
    assert np.array_equal(adj, want)
    # diagonal comes only from actual self-loops, it is never forced
    assert adj[0, 0] == adj[1, 1] == False  # noqa: E712
    assert adj[2, 2] == True  # noqa: E712


def test_asymmetric_structure_keeps_direction_and_adds_self_edges():
    cfg = for_variant("pgn_asym")
    adj = structure_adjacency(cfg, 3, [1, 2, 2])
    want = np.array([[True, True, False], [False, True, True], [False, False, True]])
    assert np.array_equal(adj, want)


def test_identity_and_full_structures():
    assert np.array_equal(
        structure_adjacency(for_variant("deepsets"), 4), np.eye(4, dtype=bool)
    )
    assert np.array_equal(
        structure_adjacency(for_variant("gnn"), 4), np.ones((4, 4), dtype=bool)
    )


def test_structure_argument_validation():
    cfg = for_variant("pgn")
    with pytest.raises(InvalidArgument):
        structure_adjacency(cfg, 3)
    with pytest.raises(InvalidArgument):
        structure_adjacency(cfg, 3, [0, 1])
    with pytest.raises(InvalidArgument):
        structure_adjacency(cfg, 3, [0, 1, 3])


# ------------------------------------------------------------------ heads


def test_pointer_update_keeps_masked_nodes_exactly():
    cfg, params, feats = make_step_inputs(7, seed=3)
    ptr = np.array([1, 0, 3, 2, 5, 4, 6], dtype=np.int64)
    res = run_one(cfg, params, feats, ptr=ptr)
    proposal = res.scores.data.argmax(axis=1)
    assert np.array_equal(
        res.predicted_ptr, np.where(res.mask_bits, ptr, proposal)
    )
    assert res.state.ptr.dtype == np.int64


def test_mask_threshold_is_strict_at_half():
    cfg, params, feats = make_step_inputs(5, seed=1)
    params.mask_w.data[:] = 0.0
    params.mask_b.data[:] = 0.0
    res = run_one(cfg, params, feats)
    # logit 0 means sigmoid exactly 0.5, which must not count as "keep"
    assert not res.mask_bits.any()
    assert np.array_equal(res.predicted_ptr, res.scores.data.argmax(axis=1))


def test_attention_argmax_breaks_ties_toward_lowest_index():
    cfg, params, feats = make_step_inputs(5, seed=2)
    params.query_w.data[:] = 0.0
    params.query_b.data[:] = 0.0
    res = run_one(cfg, params, feats)
    assert np.array_equal(res.scores.data, np.zeros((5, 5)))
    assert np.array_equal(res.scores.data.argmax(axis=1), np.zeros(5))


def test_self_scores_participate_in_attention():
    cfg, params, feats = make_step_inputs(4, seed=4)
    res = run_one(cfg, params, feats)
    assert res.scores.data.shape == (4, 4)
    # the diagonal is real signal, not masked out
    assert np.all(np.isfinite(np.diag(res.scores.data)))


def test_no_mask_head_means_always_adopt_proposal():
    cfg = for_variant("pgn_nm", latent_dim=8)
    params = init_params(cfg, 0)
    feats = step_features(np.arange(6) / 6.0, 0, 5)
    res = run_one(cfg, params, feats, ptr=np.array([1, 0, 3, 2, 5, 4]))
    assert res.mask_bits is None and res.mask_logits is None
    assert np.array_equal(res.predicted_ptr, res.scores.data.argmax(axis=1))


def test_query_only_variants_expose_no_pointer_outputs():
    for variant in ("deepsets", "gnn", "fixed_ptrs"):
        cfg = for_variant(variant, latent_dim=8)
        params = init_params(cfg, 0)
        feats = step_features(np.arange(4) / 4.0, 0, 3)
        override = np.eye(4, dtype=bool) if variant == "fixed_ptrs" else None
        res = run_one(cfg, params, feats, adjacency_override=override)
        assert res.scores is None and res.predicted_ptr is None
        assert res.mask_bits is None
        # carried pointers fall back to the previous ones
        assert np.array_equal(res.state.ptr, np.arange(4))


# ------------------------------------------------------- variant reductions


def test_identical_seeds_share_parameters_across_variants():
    a = init_params(for_variant("pgn", latent_dim=8), 7)
    b = init_params(for_variant("gnn", latent_dim=8), 7)
    for (_, ta), (_, tb) in zip(a.items(), b.items()):
        assert np.array_equal(ta.data, tb.data)


def test_deepsets_equals_pgn_with_identity_adjacency():
    cfg, params, feats = make_step_inputs(6, seed=5)
    ds = for_variant("deepsets", latent_dim=8)
    res_ds = run_one(ds, params, feats)
    res_forced = run_one(cfg, params, feats, ptr=np.arange(6),
                         adjacency_override=np.eye(6, dtype=bool))
    assert np.array_equal(res_ds.y_logit.data, res_forced.y_logit.data)
    assert np.array_equal(res_ds.state.h.data, res_forced.state.h.data)


def test_gnn_equals_pgn_with_full_adjacency():
    cfg, params, feats = make_step_inputs(6, seed=6)
    gnn = for_variant("gnn", latent_dim=8)
    res_gnn = run_one(gnn, params, feats)
    res_forced = run_one(cfg, params, feats,
                         adjacency_override=np.ones((6, 6), dtype=bool))
    assert np.array_equal(res_gnn.y_logit.data, res_forced.y_logit.data)
    assert np.array_equal(res_gnn.state.h.data, res_forced.state.h.data)


def test_external_structure_matches_pointer_derived_one():
    cfg, params, feats = make_step_inputs(6, seed=7)
    ptr = np.array([2, 2, 3, 3, 5, 4], dtype=np.int64)
    res_pgn = run_one(cfg, params, feats, ptr=ptr)
    ext = for_variant("fixed_ptrs", latent_dim=8)
    res_ext = run_one(ext, params, feats,
                      adjacency_override=structure_adjacency(cfg, 6, ptr))
    assert np.array_equal(res_pgn.y_logit.data, res_ext.y_logit.data)
    assert np.array_equal(res_pgn.adjacency, res_ext.adjacency)


# -------------------------------------------------------------- invariances


def test_step_is_permutation_equivariant():
    cfg, params, feats = make_step_inputs(8, seed=9)
    ptr = np.array([1, 0, 3, 2, 5, 4, 7, 6], dtype=np.int64)
    res = run_one(cfg, params, feats, ptr=ptr)

    perm = np.array([3, 1, 7, 0, 6, 2, 5, 4])
    inv = np.empty(8, dtype=np.int64)
    inv[perm] = np.arange(8)
    res_p = run_one(cfg, params, feats[perm], ptr=inv[ptr[perm]])

    assert np.array_equal(res_p.y_logit.data, res.y_logit.data)
    assert np.array_equal(res_p.state.h.data, res.state.h.data[perm])
    assert np.array_equal(res_p.mask_bits, res.mask_bits[perm])
    assert np.array_equal(res_p.predicted_ptr, inv[res.predicted_ptr[perm]])


def test_teacher_forcing_carries_supplied_pointers():
    cfg, params, feats = make_step_inputs(5, seed=11)
    state = initial_state(cfg, 5)
    forced = np.array([4, 3, 2, 1, 0], dtype=np.int64)
    res = step(params, cfg, None, state, feats, "teacher_forced",
               forced_next_ptr=forced)
    assert np.array_equal(res.state.ptr, forced)
    assert res.predicted_ptr is not None  # proposal still reported
    # next step's adjacency is derived from the forced pointers
    res2 = step(params, cfg, None, res.state, feats, "teacher_forced",
                forced_next_ptr=np.arange(5))
    assert np.array_equal(res2.adjacency, structure_adjacency(cfg, 5, forced))


def test_first_step_adjacency_from_initial_state_is_identity():
    cfg, params, feats = make_step_inputs(5, seed=12)
    res = run_one(cfg, params, feats)
    assert np.array_equal(res.adjacency, np.eye(5, dtype=bool))


def test_step_argument_validation():
    cfg, params, feats = make_step_inputs(4, seed=13)
    state = initial_state(cfg, 4)
    with pytest.raises(InvalidArgument):
        step(params, cfg, None, state, feats, "oracle")
    with pytest.raises(InvalidArgument):
        step(params, cfg, None, state, feats, "teacher_forced")
    with pytest.raises(InvalidArgument):
        step(params, cfg, None, state, feats, "free_running",
             forced_next_ptr=np.arange(4))
    with pytest.raises(InvalidArgument):
        step(params, cfg, None, state, feats[:3], "free_running")
    ext = for_variant("fixed_ptrs", latent_dim=8)
    with pytest.raises(InvalidArgument):
        step(init_params(ext, 0), ext, None, initial_state(ext, 4),
             feats, "free_running")


def test_step_features_layout():
    feats = step_features([0.5, 0.25, 0.75], 0, 2)
    assert np.array_equal(feats[:, 0], [0.5, 0.25, 0.75])
    assert np.array_equal(feats[:, 1], [1.0, 0.0, 1.0])
    with pytest.raises(InvalidArgument):
        step_features([0.5, 0.25], 0, 2)


# ------------------------------------------------------------- persistence


def test_config_validation_and_variant_table():
    with pytest.raises(InvalidArgument):
        ModelConfig(variant="lstm")
    with pytest.raises(InvalidArgument):
        ModelConfig(variant="pgn", structure="ring")
    with pytest.raises(InvalidArgument):
        ModelConfig(variant="pgn", latent_dim=0)
    for variant in VARIANTS:
        cfg = for_variant(variant)
        assert cfg.use_query_loss
    assert for_variant("pgn").has_mask_head
    assert not for_variant("pgn_nm").has_mask_head
    assert for_variant("pgn_mo").has_pointer_head
    assert not for_variant("pgn_mo").use_pointer_loss
    assert for_variant("supgnn").structure == "full"
    assert for_variant("pgn_asym").structure == "pointers_asym"
    assert for_variant("fixed_ptrs").structure == "external"


def test_init_params_deterministic():
    cfg = for_variant("pgn", latent_dim=8)
    a, b = init_params(cfg, 5), init_params(cfg, 5)
    for (_, ta), (_, tb) in zip(a.items(), b.items()):
        assert np.array_equal(ta.data, tb.data)
    c = init_params(cfg, 6)
    assert not np.array_equal(a.encoder_w.data, c.encoder_w.data)
    assert np.array_equal(a.encoder_b.data, np.zeros((1, 8)))


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    cfg = for_variant("pgn_asym", latent_dim=8, pointer_loss_changed_only=True)
    params = init_params(cfg, 21)
    path = tmp_path / "model.bin"
    save_checkpoint(path, cfg, params)
    cfg2, params2 = load_checkpoint(path)
    assert cfg2 == cfg
    for (na, ta), (nb, tb) in zip(params.items(), params2.items()):
        assert na == nb
        assert ta.data.tobytes() == tb.data.tobytes()


def test_checkpoint_corruption_detected(tmp_path):
    cfg = for_variant("pgn", latent_dim=8)
    params = init_params(cfg, 3)
    path = tmp_path / "model.bin"
    save_checkpoint(path, cfg, params)
    blob = path.read_bytes()

    (tmp_path / "trunc.bin").write_bytes(blob[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.bin")

    (tmp_path / "trail.bin").write_bytes(blob + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trail.bin")

    (tmp_path / "magic.bin").write_bytes(b'{"format":"zip"}\n' + blob)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.bin")

    (tmp_path / "noheader.bin").write_bytes(b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "noheader.bin")

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bin")

    nl = blob.find(b"\n")
    import json as _json

    header = _json.loads(blob[:nl])
    header["version"] = 9
    (tmp_path / "vers.bin").write_bytes(
        _json.dumps(header, sort_keys=True).encode() + blob[nl:]
    )
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "vers.bin")


def test_clone_params_copies_buffers():
    cfg = for_variant("pgn", latent_dim=8)
    params = init_params(cfg, 1)
    twin = clone_params(params)
    twin.encoder_w.data[0, 0] += 1.0
    assert params.encoder_w.data[0, 0] != twin.encoder_w.data[0, 0]


def test_config_with_replaces_fields():
    cfg = for_variant("pgn")
    alt = config_with(cfg, structure="external")
    assert alt.structure == "external" and cfg.structure == "pointers_sym"
    with pytest.raises(InvalidArgument):
        config_with(cfg, structure="ring")
