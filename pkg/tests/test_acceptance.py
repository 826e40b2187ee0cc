"""Acceptance gate: one test per shipping criterion, cheap checks first.

Each test prints one `ACCEPTANCE <id> PASS|FAIL` line on the real stderr
so the verdicts are visible even while pytest captures output.  The
desk-scale training runs (C5-C9) share a cache, but a full pass still
takes on the order of two hours on one CPU; the optional full-protocol
reproduction (C10) is gated behind PGNET_RUN_PAPER=1 and takes days.
"""

import functools
import math
import os
import sys
import time

import numpy as np
import pytest

from pgnet import autodiff as ad
from pgnet import rng
from pgnet.dsu import dsu_new, dsu_query_union
from pgnet.episodes import generate_episode
from pgnet.evaluation import (
    evaluate,
    pathological_protocol,
    rollout_structure,
    structure_report,
)
from pgnet.lct import (
    _inorder,
    _is_bst_root,
    check_state,
    decode_forest,
    lct_expose,
    lct_new,
    lct_query_toggle,
    lct_splay,
    pointer_snapshot,
)
from pgnet.model import (
    for_variant,
    init_params,
    initial_state,
    step,
    step_features,
    structure_adjacency,
)
from pgnet.oracle import NaiveForest
from pgnet.training import TrainConfig, episode_loss, oracle_structure, train

LATENT = 32
DESK_EPOCHS = 500

_CAPSYS = None


@pytest.fixture(autouse=True)
def _live_output(capsys):
    # lets verdicts and progress lines reach the terminal despite capture
    global _CAPSYS
    _CAPSYS = capsys
    yield
    _CAPSYS = None


def note(msg):
    if _CAPSYS is not None:
        with _CAPSYS.disabled():
            print(msg, file=sys.stderr, flush=True)
    else:
        print(msg, file=sys.stderr, flush=True)


def verdict(name, ok, detail=""):
    line = f"ACCEPTANCE {name} {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    note(line)
    assert ok, line


class BfsOracle:
    """Connectivity by breadth-first search over an explicit edge set."""

    def __init__(self, n):
        self.adj = [[] for _ in range(n)]

    def connected(self, u, v):
        if u == v:
            return True
        seen = {u}
        frontier = [u]
        while frontier:
            nxt = []
            for x in frontier:
                for y in self.adj[x]:
                    if y == v:
                        return True
                    if y not in seen:
                        seen.add(y)
                        nxt.append(y)
            frontier = nxt
        return False

    def add(self, u, v):
        self.adj[u].append(v)
        self.adj[v].append(u)

    def remove(self, u, v):
        self.adj[u].remove(v)
        self.adj[v].remove(u)


def random_pair(gen, n):
    u = int(gen.integers(n))
    v = int(gen.integers(n - 1))
    return u, v + (v >= u)


def random_priorities(gen, n):
    return [float(x) for x in gen.permutation(n) / n]


# --------------------------------------------------------- C1: oracle replay


def test_c1_structure_oracle_equivalence():
    started = time.monotonic()
    gen = rng.generator(20260818)
    episodes = 1000

    for _ in range(episodes):
        n = 2 + int(gen.integers(63))
        ops = 1 + int(gen.integers(128))
        state = dsu_new(n, random_priorities(gen, n))
        oracle = BfsOracle(n)
        for _ in range(ops):
            u, v = random_pair(gen, n)
            y, _, _ = dsu_query_union(state, u, v)
            assert y == (0 if oracle.connected(u, v) else 1)
            if y == 1:
                oracle.add(u, v)

    for _ in range(episodes):
        n = 2 + int(gen.integers(63))
        ops = 1 + int(gen.integers(128))
        pri = random_priorities(gen, n)
        state = lct_new(n, pri)
        naive = NaiveForest(n)
        oracle = BfsOracle(n)
        for _ in range(ops):
            u, v = random_pair(gen, n)
            y, _, _ = lct_query_toggle(state, u, v)
            assert y == (1 if oracle.connected(u, v) else 0)
            before = naive.edges()
            assert y == naive.query_toggle(u, v, pri)
            after = naive.edges()
            for a, b in after - before:
                oracle.add(a, b)
            for a, b in before - after:
                oracle.remove(a, b)
            assert decode_forest(state) == naive.parent

    elapsed = time.monotonic() - started
    verdict("C1", elapsed < 120.0,
            f"2x{episodes} episodes agree with BFS oracle in {elapsed:.1f}s")


# --------------------------------------------------------- C2: lct invariants


def bst_root_of(state, u):
    while not _is_bst_root(state, u):
        u = state.bst_parent[u]
    return u


def test_c2_lct_invariants_and_rotation_bound():
    started = time.monotonic()
    gen = rng.generator(41)
    per_op = {}
    for n in (16, 64, 256, 1024):
        state = lct_new(n, random_priorities(gen, n))
        ops = 4 * n if n <= 256 else 2 * n
        audit_every = 1 if n <= 64 else 16
        for i in range(ops):
            u, v = random_pair(gen, n)
            lct_query_toggle(state, u, v)
            if i % audit_every == 0:
                check_state(state)  # one-parent totality + encoding
                assert len(pointer_snapshot(state)) == n
                probe = int(gen.integers(n))
                seq = _inorder(state, bst_root_of(state, probe))
                lct_splay(state, probe)
                assert _inorder(state, probe) == seq
                lct_expose(state, probe)
                assert state.right[probe] is None
                assert state.bst_parent[probe] == probe
        rate = state.rotations / ops
        per_op[n] = rate
        assert rate <= 10.0 * math.log2(n)
    elapsed = time.monotonic() - started
    detail = ", ".join(f"n={n}: {r:.1f} rot/op" for n, r in per_op.items())
    verdict("C2", elapsed < 120.0, f"{detail}; {elapsed:.1f}s")


# -------------------------------------------------------- C3: gradient check


def test_c3_finite_difference_gradients():
    started = time.monotonic()
    episode = generate_episode("dsu", 5, 3, seed=20260818)
    worst = {}
    for variant in ("pgn", "pgn_nm", "gnn"):
        cfg = for_variant(variant, latent_dim=8)
        params = init_params(cfg, seed=7)

        def loss_fn():
            tape = ad.Tape()
            loss, _ = episode_loss(params, cfg, tape, episode)
            return loss, tape

        worst[variant] = float(ad.grad_check(loss_fn, params.tensors()))
        assert worst[variant] < 1e-5
    elapsed = time.monotonic() - started
    detail = ", ".join(f"{k}: {v:.2e}" for k, v in worst.items())
    verdict("C3", elapsed < 60.0, f"{detail}; {elapsed:.1f}s")


# ------------------------------------------------- C4: equation-level algebra


def test_c4_equation_level_properties():
    cfg = for_variant("pgn", latent_dim=8)
    params = init_params(cfg, 3)
    n = 7
    gen = rng.generator(12)
    pri = random_priorities(gen, n)
    feats = step_features(pri, 0, n - 1)
    ptr = np.array([1, 0, 3, 2, 5, 4, 6], dtype=np.int64)

    def run(config, prms, f, p, override=None):
        st = initial_state(config, f.shape[0])
        st.ptr = np.asarray(p, dtype=np.int64)
        return step(prms, config, None, st, f, "free_running",
                    adjacency_override=override)

    # keep-semantics: masked nodes keep their pointer, others take argmax
    res = run(cfg, params, feats, ptr)
    keep_ok = np.array_equal(
        res.predicted_ptr,
        np.where(res.mask_bits, ptr, res.scores.data.argmax(axis=1)),
    )

    # symmetrisation is the disjunction of both directions, no forced diag
    a = np.zeros((n, n), dtype=bool)
    a[np.arange(n), ptr] = True
    sym_ok = np.array_equal(structure_adjacency(cfg, n, ptr), a | a.T)
    # the diagonal comes only from true self-loops, it is never forced
    ring = (np.arange(n) + 1) % n
    sym_ok = sym_ok and not np.any(np.diag(structure_adjacency(cfg, n, ring)))

    # permutation equivariance of one full step
    perm = np.array([3, 1, 6, 0, 5, 2, 4])
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    res_p = run(cfg, params, feats[perm], inv[ptr[perm]])
    perm_ok = np.array_equal(res_p.y_logit.data, res.y_logit.data)
    perm_ok = perm_ok and np.array_equal(res_p.state.h.data, res.state.h.data[perm])

    # variant reductions: deep sets / gnn are forced-adjacency runs
    ds = run(for_variant("deepsets", latent_dim=8), params, feats, np.arange(n))
    ds_forced = run(cfg, params, feats, np.arange(n),
                    override=np.eye(n, dtype=bool))
    gn = run(for_variant("gnn", latent_dim=8), params, feats, np.arange(n))
    gn_forced = run(cfg, params, feats, np.arange(n),
                    override=np.ones((n, n), dtype=bool))
    red_ok = np.array_equal(ds.y_logit.data, ds_forced.y_logit.data)
    red_ok = red_ok and np.array_equal(ds.state.h.data, ds_forced.state.h.data)
    red_ok = red_ok and np.array_equal(gn.y_logit.data, gn_forced.y_logit.data)
    red_ok = red_ok and np.array_equal(gn.state.h.data, gn_forced.state.h.data)

    checks = {
        "keep": keep_ok, "sym": bool(sym_ok), "perm": bool(perm_ok),
        "reduction": bool(red_ok),
    }
    verdict("C4", all(checks.values()),
            ", ".join(f"{k}={'ok' if v else 'BROKEN'}" for k, v in checks.items()))


# ------------------------------------------- C8: gradient flow through steps


def test_c8_step3_query_gradient_reaches_encoder():
    episode = generate_episode("dsu", 5, 3, seed=99)
    cfg = for_variant("pgn", latent_dim=8)
    params = init_params(cfg, 11)
    tape = ad.Tape()
    state = initial_state(cfg, episode.n)
    last = None
    for s in episode.steps:
        feats = step_features(episode.priorities, s.u, s.v)
        last = step(params, cfg, tape, state, feats, "teacher_forced",
                    forced_next_ptr=np.asarray(s.parent, dtype=np.int64))
        state = last.state
    y = episode.steps[-1].y
    loss = ad.bce_with_logits(tape, last.y_logit, np.array([[float(y)]]))
    grads = ad.backward(tape, loss)
    magnitude = float(np.max(np.abs(grads.of(params.encoder_w))))
    verdict("C8", magnitude >= 1e-12, f"max |dL3/dencoder| = {magnitude:.3e}")


# --------------------------------------------------- desk-scale training cache


@functools.lru_cache(maxsize=None)
def desk_data():
    master = 2026
    make = lambda label, count, n, ops: [  # noqa: E731
        generate_episode("dsu", n, ops, rng.derive_seed(master, label, i))
        for i in range(count)
    ]
    return {
        "train": make("train", 70, 20, 30),
        "val": make("val", 35, 20, 30),
        "test_20": make("test_20", 35, 20, 30),
        "test_100": make("test_100", 35, 100, 150),
    }


@functools.lru_cache(maxsize=None)
def desk_run(variant, seed):
    """Train one desk-scale model; returns (result, wall_seconds)."""
    data = desk_data()
    cfg = for_variant(variant, latent_dim=LATENT)
    tconf = TrainConfig(epochs=DESK_EPOCHS, master_seed=seed)
    kwargs = {}
    if variant == "fixed_ptrs":
        kwargs["train_structure"] = oracle_structure(data["train"])
        kwargs["val_structure"] = oracle_structure(data["val"])

    def log(rec):
        if rec["epoch"] % 100 == 0 or rec["epoch"] == 1:
            note(f"    [{variant} seed {seed}] epoch {rec['epoch']}/{DESK_EPOCHS}"
                 f" loss {rec['train_loss']:.4f} val f1 {rec['val_f1']:.3f}")

    note(f"  training {variant} (seed {seed}, {DESK_EPOCHS} epochs)...")
    started = time.monotonic()
    result = train(cfg, tconf, data["train"], data["val"], log=log, **kwargs)
    elapsed = time.monotonic() - started
    note(f"  {variant} seed {seed}: best val f1 {result.best_val_f1:.3f} "
         f"(untrained {result.initial_val_f1:.3f}) in {elapsed / 60:.1f} min")
    return result, elapsed


def test_zz_c5_desk_training_improves_query_f1():
    result, elapsed = desk_run("pgn", 0)
    gain = result.best_val_f1 - result.initial_val_f1
    ok = gain >= 0.15 and elapsed <= 3600.0
    verdict("C5", ok,
            f"val f1 {result.initial_val_f1:.3f} -> {result.best_val_f1:.3f} "
            f"(+{gain:.3f}), {elapsed / 60:.1f} min")


def test_zz_c6_generalisation_ordering_across_seeds():
    test_eps = desk_data()["test_100"]
    oracle_test = oracle_structure(test_eps)
    holds = 0
    rows = []
    for seed in (0, 1, 2):
        f1 = {}
        for variant in ("pgn", "gnn", "deepsets", "fixed_ptrs"):
            result, _ = desk_run(variant, seed)
            structure = oracle_test if variant == "fixed_ptrs" else None
            f1[variant] = evaluate(result.params, result.cfg, test_eps,
                                   structure_ptrs=structure)["query_f1"]
        ordered = (f1["fixed_ptrs"] >= f1["pgn"]
                   >= max(f1["gnn"], f1["deepsets"]))
        holds += int(ordered)
        rows.append(
            f"seed {seed}: oracle {f1['fixed_ptrs']:.3f} pgn {f1['pgn']:.3f} "
            f"gnn {f1['gnn']:.3f} ds {f1['deepsets']:.3f} "
            f"{'ok' if ordered else 'violated'}"
        )
        note("  " + rows[-1])
    verdict("C6", holds >= 2, f"ordering holds in {holds}/3 seeds; " + "; ".join(rows))


def test_zz_c7_mask_accuracy_on_test_distribution():
    result, _ = desk_run("pgn", 0)
    metrics = evaluate(result.params, result.cfg, desk_data()["test_20"])
    acc = metrics["mask_accuracy"]
    verdict("C7", acc is not None and acc >= 0.90,
            f"free-running mask accuracy {acc:.3f} on n=20 test")


def test_zz_c9_pathological_chain_analysis():
    episode = pathological_protocol(20)
    gt_ok = True
    for t, s in enumerate(episode.steps):
        rep = structure_report(s.parent, s.parent)
        gt_ok = gt_ok and rep["valid"] and rep["partition_match"]
        gt_ok = gt_ok and rep["gt_depth"] == t + 2
    result, _ = desk_run("pgn", 0)
    reports = rollout_structure(result.params, result.cfg, episode)
    produced = len(reports) == episode.ops and all(
        "depth" in r and "valid" in r for r in reports
    )
    model_depths = [r["depth"] for r in reports]
    note(f"  gt depth reaches {episode.ops + 1}; model rollout depths "
         f"(None = cyclic): {model_depths}")
    verdict("C9", gt_ok and produced,
            f"gt valid+partition at all {episode.ops} steps, rollout produced")


@pytest.mark.skipif(
    os.environ.get("PGNET_RUN_PAPER") != "1",
    reason="full-protocol reproduction takes days; set PGNET_RUN_PAPER=1",
)
def test_zz_c10_full_protocol_reproduction():
    from pgnet.episodes import paper_protocol, split_seeds

    spec = paper_protocol("dsu", master_seed=0)
    seeds = split_seeds(spec)
    data = {
        s.name: [generate_episode("dsu", s.n, s.ops, x) for x in seeds[s.name]]
        for s in spec.splits
    }
    data["test_20"] = [
        generate_episode("dsu", 20, 30, rng.derive_seed(0, "test_20", i))
        for i in range(35)
    ]
    targets = {"test_20": 0.895, "test_50": 0.887, "test_100": 0.866}
    cfg = for_variant("pgn", latent_dim=LATENT)
    scores = {name: [] for name in targets}
    for seed in range(5):
        tconf = TrainConfig(epochs=5000, master_seed=seed)
        note(f"  full-protocol pgn seed {seed} (5000 epochs)...")
        result = train(cfg, tconf, data["train"], data["val"])
        for name in targets:
            scores[name].append(
                evaluate(result.params, result.cfg, data[name])["query_f1"]
            )
    detail = []
    ok = True
    for name, want in targets.items():
        got = float(np.mean(scores[name]))
        ok = ok and abs(got - want) <= 0.05
        detail.append(f"{name}: {got:.3f} vs {want:.3f}")
    verdict("C10", ok, "; ".join(detail))
