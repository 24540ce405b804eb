import json

import numpy as np
import pytest
import torch

from flexio.channel_comm import CommMechanism
from flexio.checkpoint import load_checkpoint, save_checkpoint
from flexio.errors import ConfigError
from flexio.model import FlexIO, preset, separate
from helpers import randomize_


@pytest.mark.parametrize("comm", list(CommMechanism))
def test_round_trip_bit_identical(tmp_path, comm):
    torch.manual_seed(0)
    model = randomize_(FlexIO(preset("toy", comm=comm)), torch.Generator().manual_seed(1), scale=0.2)
    save_checkpoint(model, tmp_path / "ck")
    loaded = load_checkpoint(tmp_path / "ck")
    assert loaded.cfg == model.cfg
    for k, v in model.state_dict().items():
        assert torch.equal(v, loaded.state_dict()[k])
    w = np.random.default_rng(0).standard_normal((3, 1200)).astype(np.float32)
    assert np.array_equal(separate(model, w, 2).waveforms, separate(loaded, w, 2).waveforms)


def test_layout(tmp_path):
    model = FlexIO(preset("toy"))
    save_checkpoint(model, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert [e["name"] for e in manifest] == list(model.state_dict())
    total = 0
    for e in manifest:
        assert e["dtype"] == "f32" and e["byte_offset"] == total
        total += 4 * int(np.prod(e["shape"], dtype=np.int64))
    assert (tmp_path / "weights.bin").stat().st_size == total
    blob = np.fromfile(tmp_path / "weights.bin", "<f4")
    first = manifest[0]
    n = int(np.prod(first["shape"]))
    assert np.array_equal(blob[:n], model.state_dict()[first["name"]].numpy().ravel())


def test_bytes_independent_of_usage(tmp_path):
    torch.manual_seed(0)
    model = FlexIO(preset("toy", comm=CommMechanism.TAC))
    save_checkpoint(model, tmp_path / "a")
    separate(model, np.ones((4, 800)), 3)
    separate(model, np.ones((1, 800)), 1)
    save_checkpoint(model, tmp_path / "b")
    for name in ("manifest.json", "weights.bin", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)
    save_checkpoint(FlexIO(preset("toy")), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    (tmp_path / "manifest.json").write_text(json.dumps(manifest[1:]))
    with pytest.raises(ConfigError, match="missing"):
        load_checkpoint(tmp_path)
