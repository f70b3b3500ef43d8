import numpy as np
import pytest
from scipy.stats import spearmanr

from blocksurgeon import ops
from blocksurgeon.saliency import (
    PROXIES,
    SaliencyReport,
    ablation_sensitivity,
    fixed_batch,
    grasp_from,
    rank_blocks,
    saliency_report,
    score_fisher,
    score_grad_norm,
    score_grasp,
    score_plain,
    score_snip,
    score_synflow,
    select_frozen,
)
from blocksurgeon.tensor import Tape, Tensor, backward, finite_diff_grad
from blocksurgeon.toynet import BlockKind, Network, build_network, paper_shape_preset
from blocksurgeon.toynet.config import u_net


def small_net(seed=0, **kw):
    return build_network(u_net(1, 4, **kw), seed=seed, zero_init=False)


def small_batch(seed=0, n=2, size=8):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 1, size, size))
    return x, np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)


def slot_loss(net, slot, batch):
    """Restoration loss as a function of one slot's flattened parameters."""
    ranges = net.slot_slices()[slot]
    theta = net.flat()

    def f(v):
        full = theta.copy()
        pos = 0
        for a, b in ranges:
            full[a:b] = v[pos:pos + b - a]
            pos += b - a
        other = net.copy()
        other.load_flat(full)
        return ops.mse_loss(other(Tensor(batch[0])), Tensor(batch[1])).item()

    return f, np.concatenate([theta[a:b] for a, b in ranges])


def zeroed(net, slot):
    params = {k: Tensor(np.zeros_like(v.data) if k.startswith(slot + ".") else v.data.copy(), name=k)
              for k, v in net.params.items()}
    return Network(net.config, params)


# ------------------------------------------------------------ per-proxy oracles
def test_grad_norm_matches_finite_differences():
    net, batch = small_net(), small_batch()
    for slot in ("enc0", "mid"):
        f, v = slot_loss(net, slot, batch)
        want = np.linalg.norm(finite_diff_grad(f, v, h=1e-6))
        assert score_grad_norm(net, batch)[slot] == pytest.approx(want, rel=1e-3)


def test_zero_init_network_has_unreachable_slots():
    # A zero tail makes every slot invisible to the loss.
    net = build_network(u_net(1, 4))
    batch = small_batch()
    for fn in (score_grad_norm, score_snip, score_plain, score_fisher):
        assert all(v == 0.0 for v in fn(net, batch).values())


def test_snip_after_rescaling_matches_recomputation():
    net, batch = small_net(), small_batch()
    doubled = Network(net.config, {k: Tensor(2.0 * v.data, name=k) for k, v in net.params.items()})
    with Tape() as tape:
        loss = ops.mse_loss(doubled(Tensor(batch[0])), Tensor(batch[1]))
    g = backward(tape, loss)
    got = score_snip(doubled, batch)
    for slot in net.config.slot_ids:
        want = sum(np.sum(np.abs(t.data * g[t])) for t in doubled.slot_params(slot).values())
        assert got[slot] == pytest.approx(want, rel=1e-12)


def test_snip_zero_parameters_score_zero():
    net = zeroed(small_net(), "mid")
    assert score_snip(net, small_batch())["mid"] == 0.0


def test_grasp_on_quadratic_with_known_hessian():
    net = small_net()
    theta = net.flat()
    a = np.random.default_rng(5).uniform(0.5, 2.0, theta.size)
    diag = Tensor(a)

    def quad(flat):
        return ops.scale(ops.sum_all(ops.mul(diag, ops.mul(flat, flat))), 0.5)

    got = score_grasp(net, loss_fn=quad)
    for slot, ranges in net.slot_slices().items():
        want = -sum(np.sum(a[s:e] ** 2 * theta[s:e] ** 2) for s, e in ranges)
        assert got[slot] == pytest.approx(want, rel=1e-4)


def test_grasp_from_restricts_to_slot_coordinates():
    net = small_net()
    hg = np.zeros(net.param_count())
    a, b = net.slot_slices()["mid"][0]
    hg[a:b] = 1.0
    out = grasp_from(net, hg)
    assert out["mid"] == pytest.approx(-np.sum(net.flat()[a:b]))
    assert out["enc0"] == 0.0 and out["dec0"] == 0.0


def test_grasp_can_be_negative():
    net = build_network(paper_shape_preset(), seed=0, zero_init=False)
    scores = score_grasp(net, small_batch(size=32, n=2))
    assert min(scores.values()) < 0 < max(scores.values())


def test_fisher_matches_recomputation():
    net, batch = small_net(), small_batch(n=3)
    cap: dict = {}
    with Tape() as tape:
        loss = ops.mse_loss(net(Tensor(batch[0]), capture=cap), Tensor(batch[1]))
    g = backward(tape, loss)
    got = score_fisher(net, batch)
    for slot in net.config.slot_ids:
        a = cap[slot][1]
        ga = g[a]
        total = 0.0
        for i in range(a.shape[0]):
            for c in range(a.shape[1]):
                total += float(np.sum(a.data[i, c] * ga[i, c])) ** 2
        assert got[slot] == pytest.approx(total / a.shape[0], rel=1e-10, abs=1e-300)


def test_plain_is_bounded_by_snip():
    net, batch = small_net(), small_batch()
    plain, snip = score_plain(net, batch), score_snip(net, batch)
    for slot in plain:
        assert abs(plain[slot]) <= snip[slot] * (1 + 1e-12)


def test_synflow_non_negative_and_zero_slot():
    net = zeroed(small_net(), "mid")
    scores = score_synflow(net, 8)
    assert all(v >= 0 for v in scores.values())
    assert scores["mid"] == 0.0


def test_synflow_grows_superlinearly_with_slot_scale():
    cfg = u_net(1, 4).with_kinds({"mid": BlockKind.ALT2})
    net = build_network(cfg, seed=0, zero_init=False)
    c = 2.0
    scaled = Network(cfg, {k: Tensor(v.data * (c if k.startswith("mid.") else 1.0), name=k)
                           for k, v in net.params.items()})
    before, after = score_synflow(net, 8)["mid"], score_synflow(scaled, 8)["mid"]
    assert c * before < after <= c * c * before * (1 + 1e-9)


def test_report_is_deterministic():
    net, batch = small_net(), small_batch()
    a = saliency_report(net, batch)
    b = saliency_report(net, batch)
    assert a.scores == b.scores
    assert list(a.scores["mid"]) == list(PROXIES)


def test_fixed_batch_is_seeded(splits):
    train = splits[0]
    a, b = fixed_batch(train, 0), fixed_batch(train, 0)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[0].shape[0] == 8
    assert not np.array_equal(a[0], fixed_batch(train, 1)[0])


# ---------------------------------------------------------------- ranking
def fake_report(values):
    return SaliencyReport({s: {p: v for p in PROXIES} for s, v in values.items()})


def test_consensus_is_scale_invariant():
    rep = saliency_report(small_net(), small_batch())
    base = rank_blocks(rep).consensus
    for p in PROXIES:
        assert rank_blocks(rep.scaled(p, 1e6)).consensus == base


def test_signed_proxies_rank_by_magnitude():
    rep = fake_report({"a": 1.0, "b": 2.0})
    rep.scores["a"]["grasp"] = -5.0
    assert rank_blocks(rep).per_proxy["grasp"] == ["a", "b"]


def test_single_slot_and_ties():
    assert rank_blocks(fake_report({"only": 1.0})).consensus == ["only"]
    assert rank_blocks(fake_report({"x": 1.0, "y": 1.0})).consensus == ["x", "y"]


def test_select_frozen_edges():
    order = ["a", "b", "c"]
    assert select_frozen(order, 0) == set()
    assert select_frozen(order, 3) == set(order)
    assert select_frozen(order, 1) == {"a"}
    with pytest.raises(ValueError):
        select_frozen(order, 4)


def test_csv_round_trip(tmp_path):
    rep = saliency_report(small_net(), small_batch())
    ranking = rank_blocks(rep)
    rep.save(tmp_path / "r.csv", ranking)
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0] == "slot_id," + ",".join(PROXIES) + ",consensus_rank"
    assert SaliencyReport.from_csv(text).scores == rep.scores


# -------------------------------------------------------- end-to-end checks
def test_deep_encoder_slot_ranks_first_on_paper_shape(splits):
    net = build_network(paper_shape_preset(), seed=0, zero_init=False)
    ranking = rank_blocks(saliency_report(net, fixed_batch(splits[0], seed=0)))
    assert ranking.consensus[0] == "enc3"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_deep_encoder_slot_tops_gradient_proxies(splits, seed):
    net = build_network(paper_shape_preset(), seed=seed, zero_init=False)
    ranking = rank_blocks(saliency_report(net, fixed_batch(splits[0], seed=0)))
    for p in ("grad_norm", "snip", "grasp", "plain"):
        assert ranking.per_proxy[p][0] == "enc3"


def test_identity_equivalent_slot_has_zero_ablation(base_net, splits):
    net = base_net.copy()
    for name in net.slot_params("mid"):
        if ".proj." in name:
            net.params[name].data[...] = 0.0
    assert ablation_sensitivity(net, splits[1])["mid"] == pytest.approx(0.0, abs=1e-12)


def test_ablation_drops_and_consensus_agree(base_net, splits, desk_saliency):
    drops = ablation_sensitivity(base_net, splits[1])
    assert all(d >= -0.5 for d in drops.values())
    ranking = desk_saliency[1]
    slots = list(drops)
    rho = spearmanr([drops[s] for s in slots], [-ranking.consensus_rank(s) for s in slots]).statistic
    assert rho > 0
