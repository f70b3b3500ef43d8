import math

import numpy as np
import pytest

from blocksurgeon.io import CorruptArtifactError
from blocksurgeon.tensor import Tensor
from blocksurgeon.toynet import (
    ALTERNATIVES,
    Adam,
    BlockKind,
    ConfigError,
    DatasetSpec,
    NetworkConfig,
    SlotSpec,
    batch_psnr,
    build_network,
    desk_preset,
    finetune,
    generate_dataset,
    load_dataset,
    load_network,
    paper_shape_preset,
    psnr,
    save_dataset,
    save_network,
    ssim,
    train_base,
    validation_psnr,
)
from blocksurgeon.toynet.config import u_net


# ------------------------------------------------------------------ config
def test_seven_kinds_with_base_first():
    assert len(BlockKind) == 7
    assert BlockKind.from_index(0) is BlockKind.BASE
    assert [k.index for k in ALTERNATIVES] == [1, 2, 3, 4, 5, 6]
    assert BlockKind.parse("Alt0") is BlockKind.BASE
    with pytest.raises(ConfigError):
        BlockKind.parse("alt7")


def test_desk_preset_shape():
    cfg = desk_preset()
    assert cfg.slot_ids == ["enc0", "enc1", "mid", "dec1", "dec0"]
    assert [s.channels for s in cfg.slots] == [8, 16, 32, 16, 8]


def test_paper_shape_preset_has_deep_encoder():
    cfg = paper_shape_preset()
    assert len(cfg.slots) == 9
    assert cfg.slot("enc3").depth == 28
    assert sum(s.depth for s in cfg.slots) == 36


def test_config_rejects_asymmetric_layout():
    slots = [SlotSpec("enc0", 8), SlotSpec("mid", 16)]
    with pytest.raises(ConfigError):
        NetworkConfig(slots)


def test_config_rejects_wrong_channels():
    slots = [SlotSpec("enc0", 8), SlotSpec("mid", 8), SlotSpec("dec0", 8)]
    with pytest.raises(ConfigError):
        NetworkConfig(slots)


def test_frozen_slot_must_stay_base():
    cfg = desk_preset().with_frozen({"mid"})
    with pytest.raises(ConfigError):
        cfg.with_kinds({"mid": BlockKind.ALT5})
    with pytest.raises(ConfigError):
        NetworkConfig((SlotSpec("enc0", 8), SlotSpec("mid", 16, frozen=True, kind=BlockKind.ALT1), SlotSpec("dec0", 8)))


def test_config_json_round_trip():
    cfg = paper_shape_preset().with_frozen({"enc3"}).with_kinds({"dec0": BlockKind.ALT2})
    assert NetworkConfig.from_json(cfg.to_json()) == cfg


def test_config_from_bad_json():
    with pytest.raises(ConfigError):
        NetworkConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        NetworkConfig.from_dict({"slots": [{"channels": 8}], "width": 8, "in_channels": 1})


# ----------------------------------------------------------------- network
def test_desk_param_count():
    assert build_network(desk_preset()).param_count() == 12161


def test_forward_preserves_shape():
    net = build_network(desk_preset(), zero_init=False)
    x = np.random.default_rng(0).random((2, 1, 32, 32))
    out = net(Tensor(x))
    assert out.shape == x.shape
    assert np.all(np.isfinite(out.data))


def test_zero_init_is_identity():
    net = build_network(desk_preset())
    x = np.random.default_rng(1).random((2, 1, 16, 16))
    np.testing.assert_array_equal(net(Tensor(x)).data, x)


def test_build_is_deterministic():
    a = build_network(desk_preset(), seed=3, zero_init=False)
    b = build_network(desk_preset(), seed=3, zero_init=False)
    np.testing.assert_array_equal(a.flat(), b.flat())


def test_kind_change_touches_only_that_slot():
    cfg = desk_preset()
    a = build_network(cfg, seed=0, zero_init=False)
    b = build_network(cfg.with_kinds({"mid": BlockKind.ALT2}), seed=0, zero_init=False)
    for slot in cfg.slot_ids:
        if slot != "mid":
            assert a.param_count(slot) == b.param_count(slot)
            for name, t in a.slot_params(slot).items():
                np.testing.assert_array_equal(t.data, b.params[name].data)
    assert a.param_count("mid") != b.param_count("mid")
    outside = [n for n in a.params if not n.startswith("mid.")]
    for n in outside:
        np.testing.assert_array_equal(a.params[n].data, b.params[n].data)


@pytest.mark.parametrize("kind", list(BlockKind))
def test_every_kind_preserves_channels(kind):
    cfg = desk_preset().with_kinds({"enc1": kind})
    net = build_network(cfg, zero_init=False)
    cap = {}
    net(Tensor(np.random.default_rng(2).random((1, 1, 16, 16))), capture=cap)
    a, b = cap["enc1"]
    assert a.shape == b.shape == (1, 16, 8, 8)


def test_rejects_bad_input_shape():
    net = build_network(desk_preset())
    with pytest.raises(ConfigError):
        net(Tensor(np.zeros((1, 2, 32, 32))))
    with pytest.raises(ConfigError):
        net(Tensor(np.zeros((1, 1, 30, 30))))


def test_identity_slot_skips_block():
    net = build_network(desk_preset(), zero_init=False)
    cap = {}
    net(Tensor(np.random.default_rng(0).random((1, 1, 16, 16))), capture=cap, identity=("mid",))
    np.testing.assert_array_equal(cap["mid"][0].data, cap["mid"][1].data)


def test_flat_round_trip():
    net = build_network(desk_preset(), zero_init=False)
    theta = net.flat()
    other = build_network(desk_preset(), seed=9, zero_init=False)
    other.load_flat(theta)
    np.testing.assert_array_equal(other.flat(), theta)
    with pytest.raises(ConfigError):
        other.load_flat(theta[:-1])


def test_slot_slices_cover_slot_params():
    net = build_network(desk_preset())
    slices = net.slot_slices()
    for slot in net.config.slot_ids:
        assert sum(b - a for a, b in slices[slot]) == net.param_count(slot)


# ----------------------------------------------------------------- metrics
def test_psnr_cap_and_formula():
    x = np.random.default_rng(0).random((4, 4))
    assert psnr(x, x) == 100.0
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)


def test_psnr_against_recomputation():
    rng = np.random.default_rng(1)
    a, b = rng.random((3, 1, 8, 8)), rng.random((3, 1, 8, 8))
    want = 10 * math.log10(1.0 / np.mean((a - b) ** 2))
    assert psnr(a, b) == pytest.approx(want, abs=1e-9)
    per = [10 * math.log10(1.0 / np.mean((a[i] - b[i]) ** 2)) for i in range(3)]
    assert batch_psnr(a, b) == pytest.approx(np.mean(per), abs=1e-9)


def _ssim_oracle(a, b, win=7):
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            pa = a[i:i + win, j:j + win].ravel()
            pb = b[i:i + win, j:j + win].ravel()
            ma, mb = pa.mean(), pb.mean()
            va, vb = pa.var(), pb.var()
            cov = np.mean((pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_window_oracle():
    rng = np.random.default_rng(3)
    a = rng.random((12, 11))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-9)


def test_ssim_identical_and_negative():
    rng = np.random.default_rng(4)
    x = rng.random((16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    y = 0.5 + 0.4 * np.sign(rng.standard_normal((16, 16)))
    assert ssim(y, 1.0 - y) < 0


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))


# -------------------------------------------------------------------- data
def test_identity_blur_without_noise():
    ds = generate_dataset(DatasetSpec(count=4, size=16, blur_kinds=("identity",), noise_sigma=0.0))
    np.testing.assert_array_equal(ds.sharp, ds.blurred)


def test_dataset_deterministic_and_bounded():
    a = generate_dataset(DatasetSpec(count=6, size=16, seed=5))
    b = generate_dataset(DatasetSpec(count=6, size=16, seed=5))
    np.testing.assert_array_equal(a.blurred, b.blurred)
    assert a.sharp.min() >= 0 and a.sharp.max() <= 1
    assert a.blurred.min() >= 0 and a.blurred.max() <= 1


def test_default_dataset_is_blurry(dataset):
    value = batch_psnr(dataset.blurred, dataset.sharp)
    assert math.isfinite(value) and value < 40.0


def test_default_split_sizes(splits):
    train, val = splits
    assert (len(train), len(val)) == (72, 24)


def test_dataset_round_trip_and_corruption(tmp_path):
    ds = generate_dataset(DatasetSpec(count=3, size=16))
    save_dataset(tmp_path, ds)
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.blurred, ds.blurred)
    blob = tmp_path / "blurred.f32"
    data = bytearray(blob.read_bytes())
    data[0] ^= 1
    blob.write_bytes(bytes(data))
    with pytest.raises(CorruptArtifactError):
        load_dataset(tmp_path)


def test_invalid_spec():
    with pytest.raises(ValueError):
        DatasetSpec(blur_kinds=("swirl",))


# ---------------------------------------------------------------- training
def test_adam_matches_hand_update():
    p = Tensor(np.array([1.0, -2.0]))
    opt = Adam({"p": p}, lr=0.1)

    class G(dict):
        def __getitem__(self, t):
            return np.array([0.5, -1.0])

    opt.step(G())
    # First step moves every coordinate by lr in the direction opposite the gradient sign.
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)


def test_zero_epochs_leaves_network_unchanged():
    ds = generate_dataset(DatasetSpec(count=8, size=16))
    net = build_network(desk_preset(), zero_init=False)
    out = train_base(net, ds, epochs=0)
    np.testing.assert_array_equal(out.network.flat(), net.flat())
    tuned = finetune(net, ds, epochs=0)
    np.testing.assert_array_equal(tuned.network.flat(), net.flat())


def test_training_is_seed_deterministic():
    ds = generate_dataset(DatasetSpec(count=8, size=16))
    a = train_base(build_network(desk_preset()), ds, epochs=1, seed=4)
    b = train_base(build_network(desk_preset()), ds, epochs=1, seed=4)
    np.testing.assert_array_equal(a.network.flat(), b.network.flat())


def test_default_training_improves_over_blurred(trained, splits):
    _, val = splits
    assert trained.epoch_losses[-1] <= trained.epoch_losses[0]
    assert trained.val_psnr > batch_psnr(val.blurred, val.sharp) + 0.5


def test_finetune_does_no_harm_to_base(trained, dataset, splits):
    _, val = splits
    tuned = finetune(trained.network, dataset, epochs=2)
    assert tuned.val_psnr >= validation_psnr(trained.network, val) - 0.1


def test_checkpoint_round_trip(tmp_path):
    net = build_network(paper_shape_preset().with_frozen({"enc3"}), zero_init=False)
    save_network(tmp_path / "ck", net, {"note": 1})
    back, meta = load_network(tmp_path / "ck")
    assert back.config == net.config and meta["note"] == 1
    np.testing.assert_array_equal(back.flat(), net.flat())


def test_u_net_depth_override():
    cfg = u_net(2, 4, depths={"mid": 3})
    assert cfg.slot("mid").depth == 3
    assert build_network(cfg).param_count("mid") == 3 * build_network(u_net(2, 4)).param_count("mid")
