"""Album loading, vocabularies, and synthetic desk-scale corpora.

An album is one sample: N precomputed image feature vectors, N reference
sentences, and a title that serves as the reference topic description.
Corpus directories hold ``albums.{train,val,test}.jsonl`` plus a
``features.bin`` blob (header ``TAVST-FEAT v1``, then ``id<TAB>D`` lines
each followed by D little-endian float32 values).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Corpus files or album contents violate the format contract."""


PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

FEAT_HEADER = b"TAVST-FEAT v1\n"

_TOKEN_RE = re.compile(r"[.,!?']|[^\s.,!?']+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break off .,!?' as single tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Album:
    id: str
    features: np.ndarray          # (N, D) float32
    sentences: list[list[str]]    # N token lists
    title: list[str]              # token list

    def validate(self, images_per_album: int) -> None:
        n = self.features.shape[0]
        if n != images_per_album:
            raise DataError(
                f"album {self.id!r}: has {n} images, configured for {images_per_album}"
            )
        if len(self.sentences) != n:
            raise DataError(
                f"album {self.id!r}: {len(self.sentences)} sentences for {n} images"
            )


@dataclass
class Vocabulary:
    """Token/id maps with reserved PAD/BOS/EOS/UNK ids 0..3.

    Built from training text only: tokens at or above min_count get ids in
    (frequency desc, token asc) order; rarer tokens encode to UNK.
    """

    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_count: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        """Token list -> id list framed with BOS/EOS; OOV maps to UNK."""
        ids = [self.token_to_id.get(t, UNK) for t in tokens]
        return [BOS] + ids + [EOS]

    def decode(self, ids: list[int]) -> list[str]:
        """Id list -> tokens. Framing/padding ids are stripped; UNK renders
        as its surface form so re-encoding reproduces the same ids."""
        out = []
        for i in ids:
            if i in (PAD, BOS, EOS):
                continue
            out.append(self.id_to_token[i])
        return out


def build_vocab(albums: list[Album], source: str, min_count: int = 3) -> Vocabulary:
    """Count tokens from album titles or stories and build a Vocabulary."""
    if not albums:
        raise DataError("build_vocab: empty album list")
    if source not in ("titles", "stories"):
        raise DataError(f"build_vocab: unknown source {source!r}")
    if min_count < 1:
        raise DataError(f"build_vocab: min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for album in albums:
        streams = [album.title] if source == "titles" else album.sentences
        for tokens in streams:
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
    kept = [
        tok for tok, c in counts.items()
        if c >= min_count and tok not in SPECIAL_TOKENS
    ]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    id_to_token = list(SPECIAL_TOKENS) + kept
    token_to_id = {tok: i for i, tok in enumerate(id_to_token) if i >= len(SPECIAL_TOKENS)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token, min_count=min_count)


@dataclass
class Corpus:
    train: list[Album]
    val: list[Album]
    test: list[Album]
    story_vocab: Vocabulary
    topic_vocab: Vocabulary
    feature_dim: int

    def split(self, name: str) -> list[Album]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}") from None


# ---------------------------------------------------------------------------
# feature blob i/o
# ---------------------------------------------------------------------------


def write_features(path, features: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(FEAT_HEADER)
        for fid, vec in features.items():
            arr = np.ascontiguousarray(vec, dtype="<f4")
            if arr.ndim != 1:
                raise DataError(f"feature {fid!r}: expected a vector, got shape {arr.shape}")
            fh.write(f"{fid}\t{arr.shape[0]}\n".encode("utf-8"))
            fh.write(arr.tobytes())


def read_features(path) -> dict[str, np.ndarray]:
    features: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(FEAT_HEADER)) != FEAT_HEADER:
            raise DataError(f"{path}: missing TAVST-FEAT v1 header")
        while True:
            line = bytearray()
            while True:
                b = fh.read(1)
                if not b:
                    break
                line += b
                if b == b"\n":
                    break
            if not line:
                break
            fields = line.decode("utf-8").rstrip("\n").split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}: malformed feature record {fields!r}")
            fid, dim_s = fields
            try:
                dim = int(dim_s)
            except ValueError:
                raise DataError(f"{path}: bad dimension in record {fields!r}") from None
            raw = fh.read(4 * dim)
            if len(raw) != 4 * dim:
                raise DataError(f"{path}: truncated features for {fid!r}")
            features[fid] = np.frombuffer(raw, dtype="<f4").copy()
    return features


# ---------------------------------------------------------------------------
# corpus loading
# ---------------------------------------------------------------------------


def _parse_album_line(line: str, lineno: int, fname: str,
                      features: dict[str, np.ndarray]) -> Album:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{fname}:{lineno}: invalid JSON ({exc})") from None
    for key in ("id", "feature_ids", "sentences", "title"):
        if key not in rec:
            raise DataError(f"{fname}:{lineno}: missing field {key!r}")
    vecs = []
    for fid in rec["feature_ids"]:
        if fid not in features:
            raise DataError(
                f"{fname}:{lineno}: album {rec['id']!r} references missing feature {fid!r}"
            )
        vecs.append(features[fid])
    dims = {v.shape[0] for v in vecs}
    if len(dims) > 1:
        raise DataError(
            f"{fname}:{lineno}: album {rec['id']!r} mixes feature dimensions {sorted(dims)}"
        )
    return Album(
        id=rec["id"],
        features=np.stack(vecs).astype(np.float32) if vecs else np.zeros((0, 0), np.float32),
        sentences=[tokenize(s) for s in rec["sentences"]],
        title=tokenize(rec["title"]),
    )


def _load_split(path: Path, features: dict[str, np.ndarray],
                images_per_album: int) -> list[Album]:
    if not path.exists():
        raise DataError(f"missing corpus file {path}")
    albums = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            album = _parse_album_line(line, lineno, path.name, features)
            album.validate(images_per_album)
            albums.append(album)
    return albums


def load_corpus(path, images_per_album: int = 5, min_count: int = 3) -> Corpus:
    """Load a corpus directory; vocabularies come from the train split only."""
    root = Path(path)
    features = read_features(root / "features.bin")
    dims = {v.shape[0] for v in features.values()}
    if len(dims) > 1:
        raise DataError(f"features.bin mixes dimensions {sorted(dims)}")
    feature_dim = dims.pop() if dims else 0
    train = _load_split(root / "albums.train.jsonl", features, images_per_album)
    val = _load_split(root / "albums.val.jsonl", features, images_per_album)
    test = _load_split(root / "albums.test.jsonl", features, images_per_album)
    seen: set[str] = set()
    for album in train + val + test:
        if album.id in seen:
            raise DataError(f"duplicate album id {album.id!r} across splits")
        seen.add(album.id)
    if not train:
        raise DataError("train split is empty; vocabularies need training albums")
    return Corpus(
        train=train,
        val=val,
        test=test,
        story_vocab=build_vocab(train, "stories", min_count),
        topic_vocab=build_vocab(train, "titles", min_count),
        feature_dim=feature_dim,
    )


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

_THEMES = [
    ("beach day with friends",
     ["sand", "waves", "sun", "swim", "shells", "picnic", "towels", "shore"]),
    ("winter cabin trip",
     ["snow", "fire", "cocoa", "sled", "frost", "boots", "pines", "storm"]),
    ("wedding in the garden",
     ["bride", "vows", "cake", "dance", "roses", "toast", "rings", "guests"]),
    ("city museum visit",
     ["statue", "painting", "hall", "ticket", "fossil", "mural", "guide", "gift"]),
    ("mountain hiking weekend",
     ["trail", "summit", "pack", "ridge", "creek", "camp", "mist", "rocks"]),
    ("birthday party at home",
     ["candles", "balloons", "presents", "games", "frosting", "hats", "songs", "wishes"]),
    ("football game downtown",
     ["kickoff", "crowd", "jersey", "score", "stadium", "banner", "whistle", "cheer"]),
    ("autumn market morning",
     ["apples", "stalls", "cider", "leaves", "bread", "honey", "crates", "coins"]),
]

_GENERIC_WORDS = ["thing", "stuff", "place", "spot", "part", "bit"]

_SENTENCE_TEMPLATES = [
    "we saw the {a} and the {b}",
    "the {a} was near the {b}",
    "everyone loved the {a} there",
    "then came the {a} with the {b}",
    "a quiet look at the {a}",
    "the {a} made the {b} fun",
]


@dataclass
class RawAlbum:
    id: str
    topic_class: int
    title: str
    sentences: list[str]
    feature_ids: list[str]
    features: list[np.ndarray]


def _theme(c: int) -> tuple[str, list[str]]:
    if c < len(_THEMES):
        return _THEMES[c]
    title = f"theme{c} group outing"
    pool = [f"item{c}{k}" for k in range(8)]
    return title, pool


def _synth_raw(seed: int, n_albums: int, feature_dim: int, topic_classes: int,
               noise: float, images_per_album: int) -> list[RawAlbum]:
    if topic_classes < 2:
        raise DataError(f"synth corpus needs topic_classes >= 2, got {topic_classes}")
    rng = np.random.default_rng(seed)
    centroids = rng.normal(0.0, 1.0, size=(topic_classes, feature_dim))
    albums = []
    for i in range(n_albums):
        c = i % topic_classes  # stratified: every class appears once per cycle
        title, pool = _theme(c)
        sentences = []
        for _ in range(images_per_album):
            template = _SENTENCE_TEMPLATES[rng.integers(len(_SENTENCE_TEMPLATES))]
            a, b = (pool[rng.integers(len(pool))] for _ in range(2))
            if noise > 0 and rng.random() < min(noise, 1.0):
                a = _GENERIC_WORDS[rng.integers(len(_GENERIC_WORDS))]
            if noise > 0 and rng.random() < min(noise, 1.0):
                b = _GENERIC_WORDS[rng.integers(len(_GENERIC_WORDS))]
            sentences.append(template.format(a=a, b=b))
        aid = f"album{i:04d}"
        feats = [
            (centroids[c] + noise * rng.normal(0.0, 1.0, size=feature_dim)).astype(np.float32)
            for _ in range(images_per_album)
        ]
        albums.append(RawAlbum(
            id=aid,
            topic_class=c,
            title=title,
            sentences=sentences,
            feature_ids=[f"{aid}_img{j}" for j in range(images_per_album)],
            features=feats,
        ))
    return albums


def _split_counts(n: int, split: tuple[float, float, float]) -> tuple[int, int, int]:
    if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be >= 0 and sum to 1, got {split}")
    n_train = int(round(n * split[0]))
    n_val = int(round(n * split[1]))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def synth_corpus(seed: int, n_albums: int, feature_dim: int = 64,
                 topic_classes: int = 4, noise: float = 0.1,
                 images_per_album: int = 5,
                 split: tuple[float, float, float] = (0.8, 0.1, 0.1),
                 min_count: int = 1) -> Corpus:
    """Deterministic synthetic corpus: class-centroid features plus Gaussian
    noise, class-fixed titles, and sentences templated from class word pools."""
    raws = _synth_raw(seed, n_albums, feature_dim, topic_classes, noise, images_per_album)
    albums = [
        Album(
            id=r.id,
            features=np.stack(r.features),
            sentences=[tokenize(s) for s in r.sentences],
            title=tokenize(r.title),
        )
        for r in raws
    ]
    n_train, n_val, _ = _split_counts(len(albums), split)
    train = albums[:n_train]
    val = albums[n_train:n_train + n_val]
    test = albums[n_train + n_val:]
    if not train:
        raise DataError("synth corpus: split leaves the train set empty")
    return Corpus(
        train=train,
        val=val,
        test=test,
        story_vocab=build_vocab(train, "stories", min_count),
        topic_vocab=build_vocab(train, "titles", min_count),
        feature_dim=feature_dim,
    )


def write_synth_corpus(outdir, seed: int, n_albums: int, feature_dim: int = 64,
                       topic_classes: int = 4, noise: float = 0.1,
                       images_per_album: int = 5,
                       split: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> None:
    """Write the same synthetic corpus in the on-disk formats."""
    root = Path(outdir)
    root.mkdir(parents=True, exist_ok=True)
    raws = _synth_raw(seed, n_albums, feature_dim, topic_classes, noise, images_per_album)
    n_train, n_val, _ = _split_counts(len(raws), split)
    groups = {
        "train": raws[:n_train],
        "val": raws[n_train:n_train + n_val],
        "test": raws[n_train + n_val:],
    }
    features: dict[str, np.ndarray] = {}
    for r in raws:
        for fid, vec in zip(r.feature_ids, r.features):
            features[fid] = vec
    write_features(root / "features.bin", features)
    for split_name, group in groups.items():
        with open(root / f"albums.{split_name}.jsonl", "w", encoding="utf-8") as fh:
            for r in group:
                fh.write(json.dumps({
                    "id": r.id,
                    "feature_ids": r.feature_ids,
                    "sentences": r.sentences,
                    "title": r.title,
                }) + "\n")
