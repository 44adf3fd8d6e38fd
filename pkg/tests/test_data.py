import numpy as np
import pytest

from sharedenc.data import (CAPTION_LEN, PAD, TOKEN_ID, VOCAB_SIZE, Scene, SceneObject,
                            caption_tokens, decode_caption, export_dataset, generate_dataset,
                            read_exported, render, subsample)
from sharedenc.errors import InputError


def test_same_seed_same_bytes():
    a, b = generate_dataset(50, 7), generate_dataset(50, 7)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert x.caption.tobytes() == y.caption.tobytes()
    assert a.splits == b.splits


def test_different_seed_differs():
    a, b = generate_dataset(20, 0), generate_dataset(20, 1)
    assert any(x.caption.tobytes() != y.caption.tobytes() for x, y in zip(a, b))


def test_ten_pairs_split():
    ds = generate_dataset(10, 0)
    parts = [set(ds.splits[s]) for s in ("train", "val", "test")]
    assert sum(map(len, parts)) == 10
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert [len(p) for p in parts] == [8, 1, 1]


def test_desk_scale_split_sizes():
    ds = generate_dataset(2560, 0)
    assert [len(ds.splits[s]) for s in ("train", "val", "test")] == [2048, 256, 256]


def test_unique_pair_ids_and_scenes():
    ds = generate_dataset(300, 3)
    assert len({e.pair_id for e in ds}) == 300
    assert len({e.scene.key() for e in ds}) == 300


def test_single_red_square_caption():
    scene = Scene((SceneObject("square", "red", 0),))
    ids = caption_tokens(scene)
    assert ids.shape == (CAPTION_LEN,)
    assert list(ids[:3]) == [TOKEN_ID["red"], TOKEN_ID["square"], TOKEN_ID["pos-0-0"]]
    assert all(i == PAD for i in ids[3:])
    assert decode_caption(ids) == ["red", "square", "pos-0-0"]


def test_caption_order_is_row_major():
    scene = Scene((SceneObject("cross", "blue", 9), SceneObject("circle", "green", 2)))
    assert decode_caption(caption_tokens(scene)) == [
        "green", "circle", "pos-0-2", "blue", "cross", "pos-2-1"]


def test_render_places_colour_in_cell():
    img = render(Scene((SceneObject("square", "red", 5),)))  # row 1, col 1
    assert img.shape == (3, 32, 32) and img.dtype == np.float32
    assert img[0, 8:16, 8:16].sum() == 36 and img[1:].sum() == 0
    assert img.sum() == 36
    assert 0 <= img.min() and img.max() <= 1


def test_token_ids_in_vocab():
    ds = generate_dataset(100, 0)
    assert max(int(e.caption.max()) for e in ds) < VOCAB_SIZE


def test_invalid_scenes():
    with pytest.raises(InputError):
        Scene(())
    with pytest.raises(InputError):
        Scene((SceneObject("square", "red", 1), SceneObject("circle", "blue", 1)))


def test_generate_rejects_bad_n():
    for n in (0, -3):
        with pytest.raises(InputError):
            generate_dataset(n)


def test_subsample_identity_and_sizes():
    ds = generate_dataset(1250, 0)
    assert len(ds.splits["train"]) == 1000
    assert subsample(ds, 1.0).splits["train"] == ds.splits["train"]
    sizes = [len(subsample(ds, f, 4).splits["train"]) for f in (1, 0.5, 0.25)]
    assert sizes == [1000, 500, 250]


def test_subsample_is_nested_and_keeps_eval_splits():
    ds = generate_dataset(400, 0)
    half, quarter = subsample(ds, 0.5, 9), subsample(ds, 0.25, 9)
    assert set(quarter.splits["train"]) <= set(half.splits["train"])
    assert half.splits["test"] == ds.splits["test"]


def test_subsample_range():
    ds = generate_dataset(10, 0)
    for f in (0, -0.1, 1.5):
        with pytest.raises(InputError):
            subsample(ds, f)


def test_export_round_trip(tmp_path):
    ds = generate_dataset(12, 2)
    export_dataset(ds, tmp_path)
    rows = read_exported(tmp_path)
    assert len(rows) == 12
    for (pid, split, img, cap), ex in zip(rows, ds):
        assert pid == ex.pair_id and pid in ds.splits[split]
        assert img.tobytes() == ex.image.tobytes()
        np.testing.assert_array_equal(cap, ex.caption)
