import numpy as np
import pytest

from spikingmoe.energy import OpLedger
from spikingmoe.errors import ContractError, DimensionError
from spikingmoe.sps import PatchConfig, SpikingPatchSplit, encode_events, encode_static, patchify


def test_patch_geometry():
    cfg = PatchConfig(32, 4, 3, 256, 4)
    assert (cfg.grid, cfg.num_tokens, cfg.patch_dim) == (8, 64, 48)
    with pytest.raises(ContractError):
        PatchConfig(30, 4, 3, 16, 4)


def test_patchify_roundtrip(rng):
    img = rng.random((2, 3, 8, 8))
    p = patchify(img, 4)
    assert p.shape == (2, 4, 48)
    # token 1 is the top-right 4x4 block, flattened channel-major
    np.testing.assert_array_equal(p[0, 1], img[0, :, :4, 4:].reshape(-1))


def test_static_shape_and_binarity(rng):
    cfg = PatchConfig(32, 4, 3, 256, 4)
    sps = SpikingPatchSplit(cfg, rng, gain=2.0)
    out = encode_static(rng.random((2, 3, 32, 32)), cfg, sps)
    assert out.shape == (4, 2, 64, 256)
    assert set(np.unique(out.data)) <= {0.0, 1.0}
    assert out.data.any()


def test_zero_image_zero_spikes(rng):
    cfg = PatchConfig(8, 4, 3, 16, 3)
    out = SpikingPatchSplit(cfg, rng).encode_static(np.zeros((2, 3, 8, 8)))
    assert not out.data.any()


def test_events_shape_and_binarity(rng):
    cfg = PatchConfig(64, 8, 2, 32, 10)
    sps = SpikingPatchSplit(cfg, rng, gain=2.0)
    frames = (rng.random((10, 2, 2, 64, 64)) < 0.1).astype(np.float32)
    out = encode_events(frames, cfg, sps)
    assert out.shape == (10, 2, 64, 32)
    assert set(np.unique(out.data)) <= {0.0, 1.0}
    assert not sps.encode_events(np.zeros_like(frames)).data.any()


def test_events_wrong_timesteps(rng):
    cfg = PatchConfig(8, 4, 2, 16, 4)
    sps = SpikingPatchSplit(cfg, rng)
    with pytest.raises(ContractError):
        sps.encode_events(np.zeros((3, 1, 2, 8, 8)))
    with pytest.raises(DimensionError):
        sps.encode_static(np.zeros((1, 3, 8, 8)))


def test_binary_events_are_charged_as_accumulates(rng):
    cfg = PatchConfig(8, 4, 2, 16, 2)
    sps = SpikingPatchSplit(cfg, rng)
    frames = np.zeros((2, 1, 2, 8, 8), dtype=np.float32)
    frames[0, 0, 1, 3, 5] = 1.0
    ledger = OpLedger()
    sps.encode_events(frames, ledger)
    tot = ledger.total()
    assert tot.mac_count == 0 and tot.ac_count == 16


def test_static_direct_coding_counts_macs_each_step(rng):
    cfg = PatchConfig(8, 4, 3, 16, 3)
    ledger = OpLedger()
    SpikingPatchSplit(cfg, rng).encode_static(rng.random((2, 3, 8, 8)), ledger)
    assert ledger.total().mac_count == 3 * (2 * 4) * 48 * 16
