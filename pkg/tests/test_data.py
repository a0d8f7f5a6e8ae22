import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tavst.data import (BOS, EOS, UNK, Album, DataError, Vocabulary,
                        build_vocab, load_corpus, read_features, synth_corpus,
                        tokenize, write_features, write_synth_corpus)


def album(aid, sentences, title, n_feats=None, dim=4):
    n = n_feats if n_feats is not None else len(sentences)
    return Album(
        id=aid,
        features=np.zeros((n, dim), dtype=np.float32),
        sentences=[tokenize(s) for s in sentences],
        title=tokenize(title),
    )


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize("We saw the SEA.") == ["we", "saw", "the", "sea", "."]
    assert tokenize("don't stop!") == ["don", "'", "t", "stop", "!"]
    assert tokenize("") == []


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def _vocab_from_counts(counts: dict, min_count: int) -> Vocabulary:
    sentences = []
    for tok, c in counts.items():
        sentences.extend([tok] * c)
    a = album("a", [" ".join(sentences)], "title here")
    return build_vocab([a], "stories", min_count)


def test_min_count_threshold():
    v = _vocab_from_counts({"a": 5, "b": 2}, min_count=3)
    assert "a" in v.token_to_id and "b" not in v.token_to_id
    assert v.encode(["b"]) == [BOS, UNK, EOS]


def test_min_count_one_keeps_singletons():
    v = _vocab_from_counts({"a": 1}, min_count=1)
    assert "a" in v.token_to_id


def test_frequency_ties_break_lexicographically():
    v = _vocab_from_counts({"b": 3, "a": 3}, min_count=3)
    assert v.token_to_id["a"] < v.token_to_id["b"]


def test_ids_sorted_by_frequency_then_token():
    v = _vocab_from_counts({"rare": 3, "common": 9}, min_count=1)
    assert v.token_to_id["common"] == 4  # first id after the four specials
    assert v.token_to_id["rare"] == 5


def test_empty_album_list_is_an_error():
    with pytest.raises(DataError):
        build_vocab([], "stories", 1)


def test_encode_empty_gives_framing_only():
    v = _vocab_from_counts({"a": 1}, min_count=1)
    assert v.encode([]) == [BOS, EOS]


def test_encode_decode_round_trip_in_vocab():
    a = album("a", ["the sand was warm", "waves hit the shore"], "beach day")
    v = build_vocab([a], "stories", 1)
    tokens = ["the", "sand", "was", "warm"]
    assert v.decode(v.encode(tokens)) == tokens


def test_oov_encodes_to_unk_in_place():
    v = _vocab_from_counts({"a": 2}, min_count=1)
    assert v.encode(["a", "zzz", "a"]) == [BOS, v.token_to_id["a"], UNK,
                                           v.token_to_id["a"], EOS]


def test_encode_decode_encode_identity():
    v = _vocab_from_counts({"a": 2, "b": 2}, min_count=1)
    for tokens in (["a"], ["a", "qqq", "b"], [], ["qqq"]):
        once = v.encode(tokens)
        assert v.encode(v.decode(once)) == once


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(6)))
def test_vocab_is_order_invariant_over_albums(perm):
    albums = [
        album(f"a{i}", [f"word{i} shared common", "extra tail here"], f"title {i}")
        for i in range(6)
    ]
    base = build_vocab(albums, "stories", 1)
    shuffled = build_vocab([albums[i] for i in perm], "stories", 1)
    assert base.token_to_id == shuffled.token_to_id


def test_special_surface_forms_never_collide():
    a = album("a", ["<pad> <unk> words words"], "title words")
    v = build_vocab([a], "stories", 1)
    assert v.token_to_id.get("<pad>") is None
    assert v.encode(["<pad>"]) == [BOS, UNK, EOS]


# ---------------------------------------------------------------------------
# feature blob + corpus loading
# ---------------------------------------------------------------------------


def test_feature_blob_round_trip(tmp_path):
    feats = {"x1": np.arange(3, dtype=np.float32), "x2": np.ones(3, dtype=np.float32)}
    path = tmp_path / "features.bin"
    write_features(path, feats)
    back = read_features(path)
    assert set(back) == {"x1", "x2"}
    assert np.array_equal(back["x1"], feats["x1"])


def _write_corpus_dir(tmp_path, albums_by_split, dim=3):
    feats = {}
    for split, albums in albums_by_split.items():
        with open(tmp_path / f"albums.{split}.jsonl", "w") as fh:
            for rec in albums:
                for fid in rec["feature_ids"]:
                    feats.setdefault(fid, np.random.default_rng(0).normal(
                        size=dim).astype(np.float32))
                fh.write(json.dumps(rec) + "\n")
    write_features(tmp_path / "features.bin", feats)


def _rec(aid, n=2):
    return {
        "id": aid,
        "feature_ids": [f"{aid}_f{i}" for i in range(n)],
        "sentences": [f"sentence number {i} here" for i in range(n)],
        "title": "some title",
    }


def test_load_corpus_round_trip(tmp_path):
    _write_corpus_dir(tmp_path, {
        "train": [_rec("a"), _rec("b")],
        "val": [_rec("c")],
        "test": [],
    })
    corpus = load_corpus(tmp_path, images_per_album=2, min_count=1)
    assert [a.id for a in corpus.train] == ["a", "b"]
    assert corpus.test == []
    assert corpus.feature_dim == 3
    assert "sentence" in corpus.story_vocab.token_to_id
    assert "title" in corpus.topic_vocab.token_to_id


def test_load_corpus_rejects_wrong_sentence_count(tmp_path):
    bad = _rec("bad", n=2)
    bad["sentences"] = bad["sentences"][:1]
    _write_corpus_dir(tmp_path, {"train": [bad], "val": [], "test": []})
    with pytest.raises(DataError, match="bad"):
        load_corpus(tmp_path, images_per_album=2, min_count=1)


def test_load_corpus_rejects_wrong_image_count(tmp_path):
    _write_corpus_dir(tmp_path, {"train": [_rec("a", n=4)], "val": [], "test": []})
    with pytest.raises(DataError, match="album 'a'"):
        load_corpus(tmp_path, images_per_album=5, min_count=1)


def test_load_corpus_missing_file(tmp_path):
    _write_corpus_dir(tmp_path, {"train": [_rec("a")], "val": [], "test": []})
    (tmp_path / "albums.val.jsonl").unlink()
    with pytest.raises(DataError, match="albums.val.jsonl"):
        load_corpus(tmp_path, images_per_album=2, min_count=1)


def test_load_corpus_malformed_line_reports_lineno(tmp_path):
    _write_corpus_dir(tmp_path, {"train": [_rec("a")], "val": [], "test": []})
    with open(tmp_path / "albums.train.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DataError, match=":2"):
        load_corpus(tmp_path, images_per_album=2, min_count=1)


def test_load_corpus_missing_feature_id(tmp_path):
    _write_corpus_dir(tmp_path, {"train": [_rec("a")], "val": [], "test": []})
    rec = _rec("a")
    rec["feature_ids"][0] = "ghost"  # not present in features.bin
    (tmp_path / "albums.train.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(DataError, match="ghost"):
        load_corpus(tmp_path, images_per_album=2, min_count=1)


def test_load_corpus_duplicate_ids_across_splits(tmp_path):
    _write_corpus_dir(tmp_path, {"train": [_rec("a")], "val": [_rec("a")], "test": []})
    with pytest.raises(DataError, match="duplicate"):
        load_corpus(tmp_path, images_per_album=2, min_count=1)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def test_synth_same_seed_is_byte_identical(tmp_path):
    kwargs = dict(seed=11, n_albums=12, feature_dim=6, topic_classes=3, noise=0.2)
    write_synth_corpus(tmp_path / "one", **kwargs)
    write_synth_corpus(tmp_path / "two", **kwargs)
    for name in ("features.bin", "albums.train.jsonl", "albums.val.jsonl",
                 "albums.test.jsonl"):
        assert (tmp_path / "one" / name).read_bytes() == \
               (tmp_path / "two" / name).read_bytes()


def test_synth_written_corpus_matches_in_memory(tmp_path):
    kwargs = dict(seed=3, n_albums=10, feature_dim=5, topic_classes=2, noise=0.1)
    write_synth_corpus(tmp_path, **kwargs)
    on_disk = load_corpus(tmp_path, images_per_album=5, min_count=1)
    in_memory = synth_corpus(**kwargs)
    assert [a.id for a in on_disk.train] == [a.id for a in in_memory.train]
    assert on_disk.train[0].sentences == in_memory.train[0].sentences
    assert np.allclose(on_disk.train[0].features, in_memory.train[0].features)
    assert on_disk.story_vocab.token_to_id == in_memory.story_vocab.token_to_id


def test_synth_both_classes_present():
    corpus = synth_corpus(seed=0, n_albums=8, feature_dim=4, topic_classes=2,
                          noise=0.0, split=(1.0, 0.0, 0.0))
    titles = {" ".join(a.title) for a in corpus.train}
    assert len(titles) == 2


def test_synth_noise_zero_features_identical_within_class():
    corpus = synth_corpus(seed=5, n_albums=8, feature_dim=6, topic_classes=2,
                          noise=0.0, split=(1.0, 0.0, 0.0))
    by_title = {}
    for a in corpus.train:
        by_title.setdefault(" ".join(a.title), []).append(a.features)
    for feats in by_title.values():
        for f in feats[1:]:
            assert np.array_equal(f, feats[0])


def test_synth_noise_zero_linearly_separable():
    # one-vs-rest least-squares linear classifier as the independent oracle
    corpus = synth_corpus(seed=9, n_albums=12, feature_dim=8, topic_classes=3,
                          noise=0.0, split=(1.0, 0.0, 0.0))
    titles = sorted({" ".join(a.title) for a in corpus.train})
    labels = np.array([titles.index(" ".join(a.title)) for a in corpus.train])
    x = np.stack([a.features[0] for a in corpus.train])
    x1 = np.hstack([x, np.ones((len(x), 1))])
    onehot = np.eye(len(titles))[labels]
    w, *_ = np.linalg.lstsq(x1, onehot, rcond=None)
    pred = np.argmax(x1 @ w, axis=1)
    assert np.array_equal(pred, labels)


def test_synth_needs_two_classes():
    with pytest.raises(DataError):
        synth_corpus(seed=0, n_albums=4, topic_classes=1)


def test_synth_split_fractions():
    corpus = synth_corpus(seed=0, n_albums=20, feature_dim=4, topic_classes=2,
                          noise=0.1, split=(0.8, 0.1, 0.1))
    assert (len(corpus.train), len(corpus.val), len(corpus.test)) == (16, 2, 2)
