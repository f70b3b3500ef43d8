import itertools
import json

import numpy as np
import pytest

from blocksurgeon.profile import (
    InvalidLatencyError,
    LatencyProfile,
    MissingLatencyError,
    PenaltyScale,
    ProfileFormatError,
    calibrate,
    global_latency,
    latency_bounds,
    load_profile,
    make_penalty_scale,
    penalty,
    save_profile,
    simulate_profile,
    speedup,
    npu_reference_profile,
)
from blocksurgeon.toynet import BlockKind, desk_preset, paper_shape_preset
from blocksurgeon.toynet.config import u_net

NPU_REFERENCE = {BlockKind.BASE: 53, BlockKind.ALT1: 15, BlockKind.ALT2: 13, BlockKind.ALT3: 19,
          BlockKind.ALT4: 11, BlockKind.ALT5: 9, BlockKind.ALT6: 28}


def paper_config():
    return paper_shape_preset().with_frozen({"enc3"})


def test_npu_reference_fixture_values():
    prof = npu_reference_profile()
    prof.validate(paper_config())
    for slot, table in prof.slots.items():
        if slot == "enc3":
            assert table == {BlockKind.BASE: 53.0}
        else:
            assert table == {k: float(v) for k, v in NPU_REFERENCE.items()}


def test_npu_reference_round_trip(tmp_path):
    prof = npu_reference_profile()
    save_profile(tmp_path / "p.json", prof)
    back = load_profile(tmp_path / "p.json", paper_config())
    assert back == prof


def test_round_trip_ignores_key_order(tmp_path):
    obj = {"slots": {"mid": {"alt1": 2.0, "base": 3.0}}, "device": "d"}
    path = tmp_path / "p.json"
    path.write_text(json.dumps(obj))
    a = load_profile(path)
    obj2 = {"device": "d", "slots": {"mid": {"base": 3.0, "alt1": 2.0}}}
    path.write_text(json.dumps(obj2))
    assert load_profile(path) == a


def test_zero_latency_rejected(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"device": "d", "slots": {"mid": {"base": 0.0}}}))
    with pytest.raises(InvalidLatencyError):
        load_profile(path)


def test_missing_entry_rejected(tmp_path):
    prof = simulate_profile(desk_preset())
    obj = prof.to_dict()
    del obj["slots"]["mid"]["alt3"]
    path = tmp_path / "p.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(MissingLatencyError) as info:
        load_profile(path, desk_preset())
    assert info.value.slot == "mid" and info.value.kind is BlockKind.ALT3


@pytest.mark.parametrize("text", ["{", "[]", '{"slots": {"mid": {"alt9": 1}}}', '{"slots": {"mid": {"base": "x"}}}'])
def test_malformed_rejected(tmp_path, text):
    path = tmp_path / "p.json"
    path.write_text(text)
    with pytest.raises(ProfileFormatError):
        load_profile(path)


def test_error_kinds_are_distinct():
    kinds = {ProfileFormatError, MissingLatencyError, InvalidLatencyError}
    assert len(kinds) == 3
    assert not issubclass(ProfileFormatError, InvalidLatencyError)
    assert not issubclass(MissingLatencyError, ProfileFormatError)


def test_simulator_deterministic_per_seed():
    cfg = desk_preset()
    assert simulate_profile(cfg, seed=1) == simulate_profile(cfg, seed=1)
    assert simulate_profile(cfg, seed=1) != simulate_profile(cfg, seed=2)
    assert simulate_profile(cfg, seed=1, noise=0.1) != simulate_profile(cfg, seed=1)


def test_simulator_identical_slots_identical_latency():
    # enc0 and dec0 share width and resolution.
    prof = simulate_profile(desk_preset(), seed=3)
    assert prof.slots["enc0"] == prof.slots["dec0"]


@pytest.mark.parametrize("bigger,smaller", [
    (BlockKind.BASE, BlockKind.ALT4), (BlockKind.ALT4, BlockKind.ALT3), (BlockKind.BASE, BlockKind.ALT3),
    (BlockKind.ALT2, BlockKind.ALT5), (BlockKind.ALT6, BlockKind.ALT5),
])
def test_more_primitives_cost_more(bigger, smaller):
    for seed in range(3):
        prof = simulate_profile(desk_preset(), seed=seed)
        for slot in prof.slots:
            assert prof.latency(slot, bigger) > prof.latency(slot, smaller)


def test_simulator_frozen_slot_has_only_base():
    prof = simulate_profile(desk_preset().with_frozen({"mid"}))
    assert set(prof.slots["mid"]) == {BlockKind.BASE}


def test_global_latency_additive():
    prof = LatencyProfile("d", {"a": {BlockKind.BASE: 10.0}, "b": {BlockKind.BASE: 20.0}, "c": {BlockKind.BASE: 5.0}})
    assert global_latency(prof, {"a": BlockKind.BASE, "b": BlockKind.BASE, "c": BlockKind.BASE}) == 35.0
    assert global_latency(prof, {"a": BlockKind.BASE}, overhead_ms=2.5) == 12.5


def test_global_latency_exhaustive_on_desk():
    cfg = desk_preset().with_frozen({"enc0"})
    prof = simulate_profile(cfg, seed=0)
    kinds = list(BlockKind)
    for combo in itertools.product(kinds, repeat=4):
        choice = dict(zip(cfg.searchable, combo))
        manual = prof.latency("enc0", BlockKind.BASE) + sum(prof.latency(s, k) for s, k in choice.items())
        assert global_latency(prof, cfg.with_kinds(choice)) == pytest.approx(manual, rel=1e-12)


def test_lowering_an_entry_never_raises_total():
    prof = simulate_profile(desk_preset(), seed=0)
    cfg = desk_preset().with_kinds({"mid": BlockKind.ALT2})
    before = global_latency(prof, cfg)
    slots = {s: dict(t) for s, t in prof.slots.items()}
    slots["mid"][BlockKind.ALT2] *= 0.5
    assert global_latency(LatencyProfile("d", slots), cfg) < before


def test_calibrated_reference_all_base_is_177():
    cfg = paper_config()
    prof = calibrate(npu_reference_profile(), cfg, 177.0)
    assert global_latency(prof, cfg.all_base()) == pytest.approx(177.0, abs=1e-9)


def test_penalty_scale_floor_and_range():
    cfg = desk_preset()
    prof = simulate_profile(cfg)
    assert make_penalty_scale(prof, cfg, [0.3, 0.3, 0.3]).alpha == 0.1
    assert make_penalty_scale(prof, cfg, [0.0, 1.2, 2.0]).alpha == pytest.approx(2.0)
    lo, base = latency_bounds(prof, cfg)
    assert lo == pytest.approx(sum(min(t.values()) for t in prof.slots.values()))
    assert base == pytest.approx(global_latency(prof, cfg.all_base()))


def test_penalty_endpoints_and_monotone():
    scale = PenaltyScale(0.7, 40.0, 100.0)
    assert penalty(scale, 40.0) == 0.0
    assert penalty(scale, 100.0) == pytest.approx(0.7)
    rng = np.random.default_rng(0)
    for a, b in rng.uniform(0, 200, size=(100, 2)):
        if a < b:
            assert penalty(scale, a) < penalty(scale, b)


def test_penalty_scale_validation():
    with pytest.raises(ValueError):
        PenaltyScale(0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        PenaltyScale(1.0, 3.0, 2.0)


def test_initial_design_penalties_match_loss_magnitude():
    cfg = u_net(2, 8).with_frozen({"enc0"})
    prof = simulate_profile(cfg, seed=0)
    losses = [0.0, 0.4, 1.1]
    scale = make_penalty_scale(prof, cfg, losses)
    lo, base = latency_bounds(prof, cfg)
    worst = max(global_latency(prof, cfg.with_kinds(dict(zip(cfg.searchable, c))))
                for c in itertools.product(list(BlockKind), repeat=4))
    for combo in itertools.product(list(BlockKind), repeat=2):
        p = penalty(scale, global_latency(prof, cfg.with_kinds({"enc1": combo[0], "mid": combo[1]})))
        assert 0.0 <= p <= scale.alpha * (worst - lo) / (base - lo) + 1e-12


def test_speedup_figures():
    assert speedup(177, 147) == pytest.approx(1.204, abs=1e-3)
    assert speedup(177, 140) == pytest.approx(1.264, abs=1e-3)
    assert speedup(50, 50) == 1.0
    with pytest.raises(ValueError):
        speedup(1, 0)
