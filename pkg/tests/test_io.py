import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from tiltrank.fields import TiltMap
from tiltrank.io import (
    load_checkpoint,
    load_npy,
    load_tilt,
    read_image,
    read_manifest,
    read_pnm,
    save_checkpoint,
    save_npy,
    save_tilt,
    write_image,
    write_manifest,
    write_pnm,
)


@settings(max_examples=40, deadline=None)
@given(arr=arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_npy_round_trip_is_bit_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("npy") / "a.npy"
    save_npy(path, arr)
    back = load_npy(path)
    assert back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_npy_header_and_interop(tmp_path):
    arr = np.arange(6.0).reshape(2, 3)
    save_npy(tmp_path / "a.npy", arr.T)  # non-contiguous input
    raw = (tmp_path / "a.npy").read_bytes()
    assert raw[:8] == b"\x93NUMPY\x01\x00"
    assert b"'descr': '<f8'" in raw and b"'fortran_order': False" in raw
    np.testing.assert_array_equal(np.load(tmp_path / "a.npy"), arr.T)
    np.save(tmp_path / "b.npy", arr)
    np.testing.assert_array_equal(load_npy(tmp_path / "b.npy"), arr)


def test_npy_rejects_other_versions(tmp_path):
    with open(tmp_path / "v2.npy", "wb") as fh:
        np.lib.format.write_array(fh, np.zeros(3), version=(2, 0))
    with pytest.raises(ValueError):
        load_npy(tmp_path / "v2.npy")


def test_tilt_round_trip(tmp_path):
    t = TiltMap(np.random.default_rng(0).standard_normal((4, 5)), np.ones((4, 5)))
    save_tilt(tmp_path / "t.npy", t)
    assert load_npy(tmp_path / "t.npy").shape == (2, 4, 5)
    back = load_tilt(tmp_path / "t.npy")
    assert back.dx.tobytes() == t.dx.tobytes() and back.dy.tobytes() == t.dy.tobytes()
    save_npy(tmp_path / "bad.npy", np.zeros((3, 4, 5)))
    with pytest.raises(ValueError):
        load_tilt(tmp_path / "bad.npy")


def test_checkpoint_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"enc0.w": rng.standard_normal((2, 1, 3, 3)), "bank.centers": rng.standard_normal((3, 4))}
    cfg = {"lr": 0.01, "nested": {"a": [1, 2]}}
    save_checkpoint(tmp_path / "a", tensors, cfg)
    save_checkpoint(tmp_path / "b", dict(reversed(list(tensors.items()))), cfg)
    for name in ("enc0.w.npy", "bank.centers.npy", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back, back_cfg = load_checkpoint(tmp_path / "a")
    assert back_cfg == cfg
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["tensors"] == [{"name": "bank.centers", "dims": [3, 4]}, {"name": "enc0.w", "dims": [2, 1, 3, 3]}]


def test_checkpoint_errors(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "c", {"../evil": np.zeros(1)}, {})
    save_checkpoint(tmp_path / "d", {"w": np.zeros((2, 2))}, {})
    save_npy(tmp_path / "d" / "w.npy", np.zeros(3))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "d")


@pytest.mark.parametrize("channels", [1, 3])
def test_pnm_round_trip(tmp_path, channels):
    rng = np.random.default_rng(channels)
    img = rng.integers(0, 256, size=(channels, 5, 7)) / 255.0
    path = tmp_path / ("a.pgm" if channels == 1 else "a.ppm")
    write_pnm(path, img)
    assert path.read_bytes()[:2] == (b"P5" if channels == 1 else b"P6")
    np.testing.assert_array_equal(read_pnm(path), img)
    np.testing.assert_array_equal(read_image(path), img)


def test_pnm_header_comments_and_errors(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pnm(tmp_path / "c.pgm"), [[[0.0, 1.0]]])
    (tmp_path / "d.pgm").write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(ValueError):
        read_pnm(tmp_path / "d.pgm")
    (tmp_path / "e.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(ValueError):
        read_pnm(tmp_path / "e.pgm")


def test_npy_images(tmp_path):
    img = np.random.default_rng(3).uniform(size=(1, 4, 4))
    write_image(tmp_path / "i.npy", img)
    assert read_image(tmp_path / "i.npy").tobytes() == img.tobytes()
    save_npy(tmp_path / "j.npy", img + 1.0)
    with pytest.raises(ValueError):
        read_image(tmp_path / "j.npy")


def test_manifests(tmp_path):
    entries = [
        {"image_path": "a.pgm", "label": 3, "domain": "gallery"},
        {"image_path": "/abs/b.pgm", "label": 4, "domain": "query", "tilt_path": "b_tilt.npy"},
    ]
    write_manifest(tmp_path / "m.json", entries)
    back = read_manifest(tmp_path / "m.json")
    assert back[0]["image_path"] == str(tmp_path / "a.pgm")
    assert back[1]["image_path"] == "/abs/b.pgm"
    assert back[1]["tilt_path"] == str(tmp_path / "b_tilt.npy")
    assert [e["label"] for e in back] == [3, 4]
    with pytest.raises(ValueError):
        write_manifest(tmp_path / "n.json", [{"image_path": "x", "label": 0, "domain": "probe"}])
    (tmp_path / "o.json").write_text(json.dumps([{"image_path": "x", "domain": "query"}]))
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "o.json")
    (tmp_path / "p.json").write_text("{}")
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "p.json")
