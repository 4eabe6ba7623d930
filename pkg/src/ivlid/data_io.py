"""Corpus containers and the text file formats used between pipeline stages.

File grammar (UTF-8, LF line endings):

i-vector file::

    #ivec v1 dim=<D>
    <id>\\t<duration_s>\\t<label or ->\\t<v1> <v2> ... <vD>

score file::

    #scores v1 langs=<L> [kind=<gmm|dnn|fused|lr|cosine>]
    <lang_1>\\t...\\t<lang_L>
    <id>\\t<duration_s>\\t<s1>\\t...\\t<sL>

decision / truth file::

    <id>\\t<language or out_of_set>

LOO pair file::

    <score>\\t<log_dur>\\t<language>\\t<target|nontarget>

DET point file::

    #det v1
    <false_alarm_rate>\\t<miss_rate>\\t<threshold>

Model files are JSON documents carrying ``format_version`` and ``model_type``.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, ParseError

OUT_OF_SET = "out_of_set"
UNLABELED = "-"
FORMAT_VERSION = 1

_IVEC_FLOAT = "%.9g"
_SCORE_FLOAT = "%.17g"


@dataclass(frozen=True)
class IVectorRecord:
    id: str
    duration_s: float
    label: str | None
    vec: np.ndarray


@dataclass
class Corpus:
    """Ordered collection of i-vectors held as parallel arrays.

    ``vectors`` is an (n, D) float array; ``labels`` holds ``None`` for
    unlabeled records.
    """

    ids: list
    durations: np.ndarray
    labels: list
    vectors: np.ndarray
    dim: int = field(default=None)

    def __post_init__(self):
        self.ids = list(self.ids)
        self.labels = list(self.labels)
        self.durations = np.asarray(self.durations, dtype=float).reshape(-1)
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.ndim == 1 and vectors.size == 0:
            vectors = vectors.reshape(0, self.dim or 0)
        if vectors.ndim != 2:
            raise DimensionError("vectors must be a 2-D array")
        self.vectors = vectors
        if self.dim is None:
            self.dim = vectors.shape[1]
        elif vectors.shape[1] != self.dim:
            raise DimensionError(f"vectors have dimension {vectors.shape[1]}, expected {self.dim}")
        n = len(self.ids)
        if not (len(self.labels) == n == len(self.durations) == vectors.shape[0]):
            raise DimensionError("ids, durations, labels and vectors differ in length")
        if len(set(self.ids)) != n:
            seen = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise DomainError(f"duplicate record id {dup!r}")
        if n and np.any(self.durations <= 0):
            raise DomainError("durations must be positive")
        if not np.all(np.isfinite(vectors)):
            raise DomainError("vectors contain non-finite entries")

    @classmethod
    def from_records(cls, records, dim=None):
        records = list(records)
        if dim is None:
            if not records:
                raise DimensionError("dim is required for an empty corpus")
            dim = len(records[0].vec)
        vectors = (np.vstack([np.asarray(r.vec, dtype=float) for r in records])
                   if records else np.zeros((0, dim)))
        return cls(
            ids=[r.id for r in records],
            durations=[r.duration_s for r in records],
            labels=[r.label for r in records],
            vectors=vectors,
            dim=dim,
        )

    def __len__(self):
        return len(self.ids)

    @property
    def records(self):
        return [
            IVectorRecord(i, float(d), lab, v)
            for i, d, lab, v in zip(self.ids, self.durations, self.labels, self.vectors)
        ]

    @property
    def languages(self):
        return sorted({lab for lab in self.labels if lab is not None})

    @property
    def log_durations(self):
        return np.log(self.durations)

    def label_array(self):
        return np.array([UNLABELED if lab is None else lab for lab in self.labels], dtype=object)

    def with_vectors(self, vectors):
        """Same ids/durations/labels with replacement vectors (e.g. after a transform)."""
        vectors = np.asarray(vectors, dtype=float)
        return Corpus(self.ids, self.durations.copy(), self.labels, vectors, dim=vectors.shape[1])

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Corpus(
            [self.ids[i] for i in index],
            self.durations[index],
            [self.labels[i] for i in index],
            self.vectors[index],
            dim=self.dim,
        )

    def unlabeled(self):
        return Corpus(self.ids, self.durations.copy(), [None] * len(self), self.vectors.copy(), dim=self.dim)


@dataclass
class TrialScoreMatrix:
    """Per-segment, per-language scores with the segment durations attached."""

    ids: list
    durations: np.ndarray
    languages: list
    scores: np.ndarray
    kind: str = "gmm"

    def __post_init__(self):
        self.ids = list(self.ids)
        self.languages = list(self.languages)
        self.durations = np.asarray(self.durations, dtype=float).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 2:
            self.scores = self.scores.reshape(len(self.ids), len(self.languages))
        if self.scores.shape != (len(self.ids), len(self.languages)):
            raise DimensionError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{len(self.ids)} ids x {len(self.languages)} languages"
            )
        if len(self.durations) != len(self.ids):
            raise DimensionError("durations and ids differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise DomainError("score matrix contains non-finite entries")

    def __len__(self):
        return len(self.ids)

    @property
    def log_durations(self):
        return np.log(self.durations)

    def replace(self, scores=None, kind=None):
        return TrialScoreMatrix(
            self.ids,
            self.durations.copy(),
            self.languages,
            self.scores.copy() if scores is None else scores,
            self.kind if kind is None else kind,
        )


@dataclass
class ScorePairs:
    """Flat list of (score, log duration) trials tagged with the scored model's language."""

    scores: np.ndarray
    log_durations: np.ndarray
    languages: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).reshape(-1)
        self.log_durations = np.asarray(self.log_durations, dtype=float).reshape(-1)
        self.languages = list(self.languages)
        if not (len(self.scores) == len(self.log_durations) == len(self.languages)):
            raise DimensionError("score pair fields differ in length")
        if not (np.all(np.isfinite(self.scores)) and np.all(np.isfinite(self.log_durations))):
            raise DomainError("score pairs contain non-finite values")

    def __len__(self):
        return len(self.scores)

    @property
    def points(self):
        return np.column_stack([self.scores, self.log_durations])

    def for_language(self, language):
        mask = np.asarray(self.languages, dtype=object) == language
        return self.points[mask]


def pairs_from_matrix(matrix, labels):
    """Split a score matrix into target and non-target pairs given true row labels."""
    labels = list(labels)
    if len(labels) != len(matrix):
        raise DimensionError("labels and score matrix rows differ in length")
    langs = np.array(matrix.languages, dtype=object)
    truth = np.array(labels, dtype=object)
    is_target = truth[:, None] == langs[None, :]
    log_d = np.broadcast_to(matrix.log_durations[:, None], matrix.scores.shape)
    model_lang = np.broadcast_to(langs[None, :], matrix.scores.shape)
    # row-major order keeps the pair list deterministic
    tar = ScorePairs(matrix.scores[is_target], log_d[is_target], list(model_lang[is_target]))
    non = ScorePairs(matrix.scores[~is_target], log_d[~is_target], list(model_lang[~is_target]))
    return tar, non


# ---------------------------------------------------------------------------
# i-vector files


def _parse_header(line, magic, path):
    parts = line.rstrip("\n").split(" ")
    if not parts or parts[0] != magic or len(parts) < 2 or parts[1] != "v1":
        raise ParseError(f"expected header starting with '{magic} v1'", line=1, path=path)
    fields = {}
    for item in parts[2:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"bad header field {item!r}", line=1, path=path)
        fields[key] = value
    return fields


def _parse_float(text, lineno, path, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line=lineno, path=path) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", line=lineno, path=path)
    return value


def parse_ivector_file(path):
    """Read an i-vector file into a :class:`Corpus`, preserving record order."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ParseError("empty file", line=1, path=path)
        fields = _parse_header(header, "#ivec", path)
        try:
            dim = int(fields["dim"])
        except (KeyError, ValueError):
            raise ParseError("header lacks integer dim=<D>", line=1, path=path) from None
        if dim < 1:
            raise ParseError("dim must be >= 1", line=1, path=path)

        ids, durations, labels, rows = [], [], [], []
        seen = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(cols)}", line=lineno, path=path)
            rid, dur_text, label, vec_text = cols
            if not rid:
                raise ParseError("empty id", line=lineno, path=path)
            if rid in seen:
                raise DomainError(f"{path}:line {lineno}: duplicate id {rid!r}")
            seen.add(rid)
            duration = _parse_float(dur_text, lineno, path, "duration")
            if duration <= 0:
                raise DomainError(f"{path}:line {lineno}: duration must be positive, got {duration}")
            values = vec_text.split(" ")
            if len(values) != dim:
                raise DimensionError(f"{path}:line {lineno}: vector has {len(values)} entries, header says {dim}")
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError("cannot parse vector entries", line=lineno, path=path) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite vector entry", line=lineno, path=path)
            ids.append(rid)
            durations.append(duration)
            labels.append(None if label == UNLABELED else label)
            rows.append(vec)
    vectors = np.vstack(rows) if rows else np.zeros((0, dim))
    return Corpus(ids, durations, labels, vectors, dim=dim)


def _fmt(value, spec=_IVEC_FLOAT):
    return spec % value


def write_ivector_file(corpus, path):
    if corpus.dim < 1:
        raise DimensionError("corpus dim must be >= 1")
    lines = [f"#ivec v1 dim={corpus.dim}\n"]
    for rid, dur, label, vec in zip(corpus.ids, corpus.durations, corpus.labels, corpus.vectors):
        vec_text = " ".join(_fmt(v) for v in vec)
        lines.append(f"{rid}\t{_fmt(dur)}\t{UNLABELED if label is None else label}\t{vec_text}\n")
    _write_text(path, "".join(lines))


def _write_text(path, text):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# score files


def write_score_file(matrix, path):
    lines = [f"#scores v1 langs={len(matrix.languages)} kind={matrix.kind}\n",
             "\t".join(matrix.languages) + "\n"]
    for rid, dur, row in zip(matrix.ids, matrix.durations, matrix.scores):
        lines.append(rid + "\t" + _fmt(dur, _SCORE_FLOAT) + "\t"
                     + "\t".join(_fmt(s, _SCORE_FLOAT) for s in row) + "\n")
    _write_text(path, "".join(lines))


def parse_score_file(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ParseError("empty file", line=1, path=path)
        fields = _parse_header(header, "#scores", path)
        try:
            n_lang = int(fields["langs"])
        except (KeyError, ValueError):
            raise ParseError("header lacks integer langs=<L>", line=1, path=path) from None
        languages = fh.readline().rstrip("\n").split("\t")
        if len(languages) != n_lang:
            raise ParseError(f"expected {n_lang} language names", line=2, path=path)
        ids, durations, rows = [], [], []
        for lineno, line in enumerate(fh, start=3):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != n_lang + 2:
                raise ParseError(f"expected {n_lang + 2} fields, got {len(cols)}", line=lineno, path=path)
            ids.append(cols[0])
            durations.append(_parse_float(cols[1], lineno, path, "duration"))
            rows.append([_parse_float(c, lineno, path, "score") for c in cols[2:]])
    scores = np.array(rows, dtype=float).reshape(len(ids), n_lang)
    return TrialScoreMatrix(ids, durations, languages, scores, fields.get("kind", "gmm"))


# ---------------------------------------------------------------------------
# decisions, LOO pairs, DET points


def write_decision_file(decisions, path):
    """``decisions`` maps id -> language (or ``out_of_set``); order is preserved."""
    _write_text(path, "".join(f"{rid}\t{lab}\n" for rid, lab in decisions.items()))


def parse_decision_file(path):
    decisions = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise ParseError("expected '<id>\\t<label>'", line=lineno, path=path)
            if cols[0] in decisions:
                raise DomainError(f"{path}:line {lineno}: duplicate id {cols[0]!r}")
            decisions[cols[0]] = cols[1]
    return decisions


def write_pair_file(targets, nontargets, path):
    """Write LOO (score, log duration, language) pairs for both trial classes."""
    lines = []
    for kind, pairs in (("target", targets), ("nontarget", nontargets)):
        for score, log_dur, lang in zip(pairs.scores, pairs.log_durations, pairs.languages):
            lines.append(f"{_fmt(score, _SCORE_FLOAT)}\t{_fmt(log_dur, _SCORE_FLOAT)}\t{lang}\t{kind}\n")
    _write_text(path, "".join(lines))


def parse_pair_file(path):
    buckets = {"target": ([], [], []), "nontarget": ([], [], [])}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4 or cols[3] not in buckets:
                raise ParseError("expected '<score>\\t<log_dur>\\t<language>\\t<target|nontarget>'",
                                 line=lineno, path=path)
            s, d, lang = buckets[cols[3]]
            s.append(_parse_float(cols[0], lineno, path, "score"))
            d.append(_parse_float(cols[1], lineno, path, "log duration"))
            lang.append(cols[2])
    return tuple(ScorePairs(np.array(s, dtype=float), np.array(d, dtype=float), list(lang))
                 for s, d, lang in (buckets["target"], buckets["nontarget"]))


def write_det_file(points, path):
    lines = ["#det v1\n"]
    for fa, miss, thr in points:
        lines.append(f"{_fmt(fa, _SCORE_FLOAT)}\t{_fmt(miss, _SCORE_FLOAT)}\t{_fmt(thr, _SCORE_FLOAT)}\n")
    _write_text(path, "".join(lines))


def parse_det_file(path):
    points = []
    with open(path, encoding="utf-8") as fh:
        if not fh.readline().startswith("#det v1"):
            raise ParseError("expected '#det v1' header", line=1, path=path)
        for lineno, line in enumerate(fh, start=2):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise ParseError("expected 3 fields", line=lineno, path=path)
            points.append(tuple(float(c) for c in cols))
    return points


# ---------------------------------------------------------------------------
# model files


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "shape": list(obj.shape)}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=float).reshape(obj["shape"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_from_jsonable(v) for v in obj]
    return obj


def save_model(payload, model_type, path):
    """Serialize a model's ``to_dict()`` payload as JSON.

    Floats are written with ``repr`` precision so reloaded models score
    bit-identically.
    """
    doc = {"format_version": FORMAT_VERSION, "model_type": model_type, "model": _to_jsonable(payload)}
    _write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path, model_type=None):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid model JSON: {exc.msg}", line=exc.lineno, path=path) from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {doc.get('format_version')!r}", path=path)
    if model_type is not None and doc.get("model_type") != model_type:
        raise ParseError(f"expected model_type {model_type!r}, found {doc.get('model_type')!r}", path=path)
    return doc["model_type"], _from_jsonable(doc["model"])
