"""Loading, validation and splitting of every tabular input.

Files are RFC 4180 CSV (UTF-8, header row first).  Each loader checks the
header against a :class:`TableSchema`, parses every cell according to its
declared kind, validates the dataset invariants, and returns an immutable
dataset object.  Missing values are errors; nothing is imputed.

String identifiers (users, items, apps, ...) are re-indexed to dense 0-based
integers in sorted id order, so the mapping does not depend on row order.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestError, InputError, MissingFileError
from .rng import stream

KINDS = ("identifier", "numeric", "integer-count", "binary", "timestamp",
         "text", "label-set")
EVENT_KINDS_FIXED = ("signup", "active")


# ---------------------------------------------------------------------------
# schema + generic table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Column:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown column kind {self.kind!r}")


@dataclass(frozen=True)
class TableSchema:
    """Fixed leading columns plus optional pattern-matched trailing columns.

    ``trailing`` is a sequence of ``(regex, kind)`` rules; every header name
    after the fixed columns must fully match one of them (first match wins).
    """

    columns: tuple[Column, ...]
    trailing: tuple[tuple[str, str], ...] = ()
    min_trailing: int = 0

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if not names and not self.trailing:
            raise InputError("schema needs at least one column")
        if len(set(names)) != len(names):
            raise InputError("schema column names must be unique")

    @classmethod
    def of(cls, *pairs: tuple[str, str], trailing=(), min_trailing=0):
        return cls(tuple(Column(n, k) for n, k in pairs), tuple(trailing), min_trailing)

    def resolve(self, header: list[str], path=None) -> list[Column]:
        """Match a file header; return the full column list."""
        fixed = [c.name for c in self.columns]
        if header[: len(fixed)] != fixed:
            raise IngestError(
                f"header mismatch: expected {fixed} as leading columns, got {header[: len(fixed)]}",
                path=path)
        resolved = list(self.columns)
        for name in header[len(fixed):]:
            for pattern, kind in self.trailing:
                if re.fullmatch(pattern, name):
                    resolved.append(Column(name, kind))
                    break
            else:
                raise IngestError(f"unexpected column {name!r} in header", path=path)
        if len(header) - len(fixed) < self.min_trailing:
            raise IngestError(
                f"expected at least {self.min_trailing} trailing columns", path=path)
        names = [c.name for c in resolved]
        if len(set(names)) != len(names):
            raise IngestError("duplicate column names in header", path=path)
        return resolved


@dataclass(frozen=True)
class Table:
    path: str
    columns: tuple[Column, ...]
    data: dict
    n_rows: int

    def __getitem__(self, name):
        return self.data[name]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]


def _parse_timestamp(text: str) -> int:
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(np.floor(ts.timestamp()))


def _parse_cell(text: str, kind: str):
    if kind == "label-set":
        return tuple(sorted({t.strip() for t in text.split(";") if t.strip()}))
    if text == "":
        raise ValueError("missing value")
    if kind in ("identifier", "text"):
        return text
    if kind == "numeric":
        v = float(text)
        if not np.isfinite(v):
            raise ValueError("non-finite number")
        return v
    if kind == "integer-count":
        if not re.fullmatch(r"\+?\d+", text.strip()):
            raise ValueError("not a nonnegative integer")
        return int(text)
    if kind == "binary":
        if text.strip() not in ("0", "1"):
            raise ValueError("binary value must be 0 or 1")
        return int(text)
    if kind == "timestamp":
        return _parse_timestamp(text.strip())
    raise ValueError(f"unknown kind {kind}")


_DTYPES = {"numeric": np.float64, "integer-count": np.int64, "binary": np.int8,
           "timestamp": np.int64}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


def load_table(path, schema: TableSchema) -> Table:
    """Read ``path`` and parse it against ``schema``.

    Row numbers in error messages are 1-based data rows (the header is row 0).
    """
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"input file not found: {p}", path=p)
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file, no header row", path=p) from None
        header = [h.strip() for h in header]
        if header and header[0].startswith("﻿"):
            header[0] = header[0][1:]
        cols = schema.resolve(header, path=p)
        values: list[list] = [[] for _ in cols]
        n = 0
        for n, row in enumerate(reader, start=1):
            if len(row) != len(cols):
                raise IngestError(f"expected {len(cols)} fields, found {len(row)}",
                                  path=p, row=n)
            for j, (cell, col) in enumerate(zip(row, cols)):
                try:
                    values[j].append(_parse_cell(cell, col.kind))
                except ValueError as exc:
                    raise IngestError(f"unparseable {col.kind} value {cell!r}: {exc}",
                                      path=p, row=n, column=col.name) from None
    data = {}
    for col, vals in zip(cols, values):
        if col.kind in _DTYPES:
            arr = np.array(vals, dtype=_DTYPES[col.kind])
        else:
            arr = np.empty(len(vals), dtype=object)
            arr[:] = vals
        data[col.name] = _frozen(arr)
    return Table(str(p), tuple(cols), data, n)


def _write_csv(path, header: Sequence[str], rows) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _dense(ids) -> tuple[tuple[str, ...], np.ndarray]:
    uniq = tuple(sorted(set(ids)))
    lookup = {u: i for i, u in enumerate(uniq)}
    return uniq, _frozen(np.array([lookup[x] for x in ids], dtype=np.int64))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

class _Rows:
    """Mixin for datasets whose rows can be subset by index."""

    _row_fields: tuple[str, ...] = ()

    def __len__(self):
        return len(getattr(self, self._row_fields[0]))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        changes = {}
        for name in self._row_fields:
            value = getattr(self, name)
            if isinstance(value, np.ndarray):
                changes[name] = _frozen(value[idx])
            else:
                changes[name] = tuple(value[i] for i in idx)
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class EventLog(_Rows):
    """Raw user events; ``kind`` is ``signup``, ``active`` or ``action:<name>``."""

    user_ids: tuple[str, ...]
    user: np.ndarray
    timestamp: np.ndarray
    kind: tuple[str, ...]

    _row_fields = ("user", "timestamp", "kind")

    def __post_init__(self):
        n_users = len(self.user_ids)
        for k in self.kind:
            if k not in EVENT_KINDS_FIXED and not (k.startswith("action:") and len(k) > 7):
                raise InputError(f"unknown event kind {k!r}")
        is_signup = np.array([k == "signup" for k in self.kind], dtype=bool)
        counts = np.bincount(self.user[is_signup], minlength=n_users)
        if np.any(counts != 1):
            bad = self.user_ids[int(np.flatnonzero(counts != 1)[0])]
            raise InputError(f"user {bad!r} must have exactly one signup event "
                             f"(found {int(counts[self.user_ids.index(bad)])})")
        signup = np.zeros(n_users, dtype=np.int64)
        signup[self.user[is_signup]] = self.timestamp[is_signup]
        early = self.timestamp < signup[self.user]
        if np.any(early):
            r = int(np.flatnonzero(early)[0])
            raise InputError(f"event of user {self.user_ids[self.user[r]]!r} precedes its signup "
                             f"(record {r + 1})")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_records(self) -> int:
        return len(self.user)

    def signup_times(self) -> np.ndarray:
        out = np.zeros(self.n_users, dtype=np.int64)
        mask = np.array([k == "signup" for k in self.kind], dtype=bool)
        out[self.user[mask]] = self.timestamp[mask]
        return out

    def __len__(self):
        return self.n_users

    def subset(self, idx):
        """Keep all records of the selected users (split unit is the user)."""
        keep_users = np.zeros(self.n_users, dtype=bool)
        keep_users[np.asarray(idx, dtype=np.int64)] = True
        rows = np.flatnonzero(keep_users[self.user])
        ids = [self.user_ids[u] for u in self.user[rows]]
        return make_event_log(ids, self.timestamp[rows], [self.kind[r] for r in rows])


def make_event_log(user_ids, timestamps, kinds) -> EventLog:
    uniq, idx = _dense(list(user_ids))
    return EventLog(uniq, idx, _frozen(np.asarray(timestamps, dtype=np.int64)),
                    tuple(kinds))


@dataclass(frozen=True, eq=False)
class RatingsTriples(_Rows):
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    user: np.ndarray
    item: np.ndarray
    count: np.ndarray

    _row_fields = ("user", "item", "count")

    def __post_init__(self):
        if np.any(self.count < 0):
            raise InputError("counts must be nonnegative integers")
        keys = self.user * max(len(self.item_ids), 1) + self.item
        if len(np.unique(keys)) != len(keys):
            raise InputError("duplicate (user, item) key")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.user_ids), len(self.item_ids)


@dataclass(frozen=True, eq=False)
class ContextQuads(_Rows):
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    context_ids: tuple[str, ...]
    user: np.ndarray
    item: np.ndarray
    context: np.ndarray
    count: np.ndarray

    _row_fields = ("user", "item", "context", "count")

    def __post_init__(self):
        if np.any(self.count < 0):
            raise InputError("counts must be nonnegative integers")
        m, c = max(len(self.item_ids), 1), max(len(self.context_ids), 1)
        keys = (self.user * m + self.item) * c + self.context
        if len(np.unique(keys)) != len(keys):
            raise InputError("duplicate (user, item, context) key")

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.user_ids), len(self.item_ids), len(self.context_ids)


@dataclass(frozen=True, eq=False)
class PrivacyProfile:
    """Permission set of each catalog item, aligned with a ratings item index."""

    item_ids: tuple[str, ...]
    permission_ids: tuple[str, ...]
    sets: tuple[tuple[int, ...], ...]

    @property
    def n_permissions(self) -> int:
        return len(self.permission_ids)


@dataclass(frozen=True, eq=False)
class StudyTable(_Rows):
    outcome: np.ndarray
    treatment: np.ndarray
    X: np.ndarray
    covariates: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    _row_fields = ("outcome", "treatment", "X")

    def __post_init__(self):
        n = len(self.outcome)
        if self.X.ndim != 2 or self.X.shape[0] != n or len(self.treatment) != n:
            raise InputError("study columns have inconsistent lengths")
        if not np.all(np.isin(self.treatment, (0, 1))):
            raise InputError("treatment must be binary")
        if not (np.all(np.isfinite(self.outcome)) and np.all(np.isfinite(self.X))):
            raise InputError("study table contains missing or non-finite values")

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        meta = {k: _frozen(np.asarray(v, dtype=object)[idx]) for k, v in self.metadata.items()}
        return StudyTable(_frozen(self.outcome[idx]), _frozen(self.treatment[idx]),
                          _frozen(self.X[idx]), self.covariates, meta)

    def where(self, column: str, value: str) -> "StudyTable":
        """Rows whose metadata ``column`` equals ``value``."""
        if column not in self.metadata:
            raise InputError(f"unknown metadata column {column!r}")
        return self.subset(np.flatnonzero(np.asarray(self.metadata[column]) == value))

    def require_both_arms(self):
        t = self.treatment
        if len(t) == 0 or t.min() == t.max():
            raise InputError("study needs at least one treated and one control unit")


def make_study(outcome, treatment, X, covariates=None, metadata=None) -> StudyTable:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] != len(outcome):
        X = X.T
    if covariates is None:
        covariates = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    return StudyTable(_frozen(np.asarray(outcome, dtype=np.float64)),
                      _frozen(np.asarray(treatment, dtype=np.int8)),
                      _frozen(X.copy()), tuple(covariates),
                      {k: _frozen(np.asarray(v, dtype=object)) for k, v in (metadata or {}).items()})


@dataclass(frozen=True, eq=False)
class MultiViewDataset(_Rows):
    app_ids: tuple[str, ...]
    X: np.ndarray
    feature_names: tuple[str, ...]
    views: dict
    classes: tuple[str, ...]
    labels: np.ndarray

    _row_fields = ("app_ids", "X", "labels")

    def __post_init__(self):
        n, p = self.X.shape
        if n < 1:
            raise InputError("multiview dataset needs at least one sample")
        if len(self.classes) < 2:
            raise InputError("multiview dataset needs at least two classes")
        if not self.views:
            raise InputError("multiview dataset needs at least one view")
        seen = np.zeros(p, dtype=np.int64)
        for name, idx in self.views.items():
            if len(idx) == 0:
                raise InputError(f"view {name!r} is empty")
            seen[np.asarray(idx)] += 1
        if np.any(seen > 1):
            raise InputError("view partition not disjoint")
        if np.any(seen == 0):
            missing = [self.feature_names[j] for j in np.flatnonzero(seen == 0)]
            raise InputError(f"view partition not exhaustive: {missing} not in any view")
        if not np.all(np.isfinite(self.X)):
            raise InputError("feature matrix contains non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return len(self.classes)

    @property
    def Y(self) -> np.ndarray:
        """n x K one-hot label matrix."""
        y = np.zeros((self.n, self.K))
        y[np.arange(self.n), self.labels] = 1.0
        return y


def make_multiview(X, labels, views, *, classes=None, app_ids=None,
                   feature_names=None) -> MultiViewDataset:
    """Build a dataset from arrays; ``views`` maps name -> column indices or names."""
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if feature_names is None:
        feature_names = tuple(f"f{j + 1}" for j in range(p))
    pos = {f: j for j, f in enumerate(feature_names)}
    vmap = {}
    for name, members in views.items():
        idx = [pos[m] if isinstance(m, str) else int(m) for m in members]
        vmap[name] = _frozen(np.array(sorted(idx), dtype=np.int64))
    labels = list(labels)
    if classes is None:
        classes = tuple(sorted({str(c) for c in labels}))
    if all(isinstance(c, (int, np.integer)) for c in labels):
        lab = np.asarray(labels, dtype=np.int64)
    else:
        cls_pos = {c: k for k, c in enumerate(classes)}
        lab = np.array([cls_pos[str(c)] for c in labels], dtype=np.int64)
    if app_ids is None:
        app_ids = tuple(str(i) for i in range(n))
    return MultiViewDataset(tuple(app_ids), _frozen(X.copy()), tuple(feature_names), vmap,
                            tuple(classes), _frozen(lab))


@dataclass(frozen=True, eq=False)
class TokenCorpus(_Rows):
    documents: tuple[tuple[str, ...], ...]

    _row_fields = ("documents",)

    def vocabulary(self) -> tuple[str, ...]:
        return tuple(sorted({t for d in self.documents for t in d}))


@dataclass(frozen=True, eq=False)
class AppDocs(_Rows):
    app_ids: tuple[str, ...]
    texts: tuple[str, ...]
    labels: tuple[tuple[str, ...], ...]

    _row_fields = ("app_ids", "texts", "labels")

    @property
    def documents(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tuple(t.split()) for t in self.texts)

    def label_universe(self) -> tuple[str, ...]:
        return tuple(sorted({lab for s in self.labels for lab in s}))


@dataclass(frozen=True, eq=False)
class AnnotationSet(_Rows):
    """Binary crowd labels; ``aspect`` lets one app carry several risk aspects."""

    app_ids: tuple[str, ...]
    annotator_ids: tuple[str, ...]
    aspect_ids: tuple[str, ...]
    app: np.ndarray
    annotator: np.ndarray
    aspect: np.ndarray
    label: np.ndarray

    _row_fields = ("app", "annotator", "aspect", "label")

    def __post_init__(self):
        if not np.all(np.isin(self.label, (0, 1))):
            raise InputError("annotation labels must be binary")
        A, M = len(self.app_ids), max(len(self.annotator_ids), 1)
        S = max(len(self.aspect_ids), 1)
        keys = (self.aspect * A + self.app) * M + self.annotator
        if len(np.unique(keys)) != len(keys):
            raise InputError("more than one label for an (app, annotator, aspect)")
        for s in range(S):
            covered = np.unique(self.app[self.aspect == s])
            if len(covered) != A:
                missing = sorted(set(range(A)) - set(covered.tolist()))
                raise InputError(f"app {self.app_ids[missing[0]]!r} has no annotation "
                                 f"for aspect {self.aspect_ids[s]!r}")


def make_annotations(app_ids, annotator_ids, labels, aspects=None) -> AnnotationSet:
    apps, a = _dense([str(x) for x in app_ids])
    anns, m = _dense([str(x) for x in annotator_ids])
    if aspects is None:
        aspects = ["risk"] * len(a)
    asp, s = _dense([str(x) for x in aspects])
    return AnnotationSet(apps, anns, asp, a, m, s, _frozen(np.asarray(labels, dtype=np.int8)))


@dataclass(frozen=True, eq=False)
class PairList(_Rows):
    better: tuple[str, ...]
    worse: tuple[str, ...]

    _row_fields = ("better", "worse")


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

EVENTS_SCHEMA = TableSchema.of(("user_id", "identifier"), ("timestamp", "timestamp"),
                               ("event", "identifier"))
RATINGS_SCHEMA = TableSchema.of(("user_id", "identifier"), ("item_id", "identifier"),
                                ("count", "integer-count"))
PRIVACY_SCHEMA = TableSchema.of(("item_id", "identifier"), ("permission_id", "identifier"))
CONTEXT_SCHEMA = TableSchema.of(("user_id", "identifier"), ("item_id", "identifier"),
                                ("context_id", "identifier"), ("count", "integer-count"))
STUDY_SCHEMA = TableSchema.of(("outcome", "numeric"), ("treatment", "binary"),
                              trailing=((r"x\d+", "numeric"), (r".+", "text")),
                              min_trailing=1)
MULTIVIEW_SCHEMA = TableSchema.of(("app_id", "identifier"), ("label", "identifier"),
                                  trailing=((r".+", "numeric"),), min_trailing=1)
APP_DOCS_SCHEMA = TableSchema.of(("app_id", "identifier"), ("text", "text"),
                                 ("labels", "label-set"))
ANNOTATION_SCHEMA = TableSchema.of(("app_id", "identifier"), ("annotator_id", "identifier"),
                                   ("label", "binary"),
                                   trailing=((r"aspect", "identifier"),))
PAIRS_SCHEMA = TableSchema.of(("better_app_id", "identifier"), ("worse_app_id", "identifier"))


def _reraise(path, exc: InputError):
    if isinstance(exc, IngestError):
        raise exc
    raise IngestError(str(exc), path=path) from None


def load_events(path) -> EventLog:
    t = load_table(path, EVENTS_SCHEMA)
    try:
        return make_event_log(list(t["user_id"]), t["timestamp"], list(t["event"]))
    except InputError as exc:
        _reraise(path, exc)


def load_ratings(path) -> RatingsTriples:
    t = load_table(path, RATINGS_SCHEMA)
    users, u = _dense(list(t["user_id"]))
    items, i = _dense(list(t["item_id"]))
    try:
        return RatingsTriples(users, items, u, i, t["count"])
    except InputError as exc:
        _reraise(path, exc)


def load_context(path) -> ContextQuads:
    t = load_table(path, CONTEXT_SCHEMA)
    users, u = _dense(list(t["user_id"]))
    items, i = _dense(list(t["item_id"]))
    ctx, k = _dense(list(t["context_id"]))
    try:
        return ContextQuads(users, items, ctx, u, i, k, t["count"])
    except InputError as exc:
        _reraise(path, exc)


def load_privacy(path, item_ids: Sequence[str]) -> PrivacyProfile:
    """Permission sets for the given catalog; rows for unknown items are ignored."""
    t = load_table(path, PRIVACY_SCHEMA)
    perms = tuple(sorted(set(t["permission_id"])))
    ppos = {p: s for s, p in enumerate(perms)}
    ipos = {it: j for j, it in enumerate(item_ids)}
    sets: list[set] = [set() for _ in item_ids]
    for r, (it, perm) in enumerate(zip(t["item_id"], t["permission_id"]), start=1):
        if it not in ipos:
            continue
        if ppos[perm] in sets[ipos[it]]:
            raise IngestError("duplicate (item, permission) row", path=path, row=r)
        sets[ipos[it]].add(ppos[perm])
    return PrivacyProfile(tuple(item_ids), perms, tuple(tuple(sorted(s)) for s in sets))


def load_study(path) -> StudyTable:
    t = load_table(path, STUDY_SCHEMA)
    cov = [c.name for c in t.columns if c.kind == "numeric" and re.fullmatch(r"x\d+", c.name)]
    meta = {c.name: t[c.name] for c in t.columns if c.kind == "text"}
    if not cov:
        raise IngestError("study file needs at least one covariate column x1..xd", path=path)
    X = np.column_stack([t[c] for c in cov]) if t.n_rows else np.zeros((0, len(cov)))
    try:
        return make_study(t["outcome"], t["treatment"], X, cov, meta)
    except InputError as exc:
        _reraise(path, exc)


def load_multiview(path, views_path) -> MultiViewDataset:
    t = load_table(path, MULTIVIEW_SCHEMA)
    vp = Path(views_path)
    if not vp.is_file():
        raise MissingFileError(f"input file not found: {vp}", path=vp)
    try:
        views = json.loads(vp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid JSON: {exc}", path=vp) from None
    if not isinstance(views, dict) or not all(isinstance(v, list) for v in views.values()):
        raise IngestError('views file must map view name -> ["f1", ...]', path=vp)
    feats = [c.name for c in t.columns[2:]]
    known = set(feats)
    for name, members in views.items():
        for m in members:
            if m not in known:
                raise IngestError(f"view {name!r} names unknown feature {m!r}", path=vp)
    X = np.column_stack([t[f] for f in feats]) if t.n_rows else np.zeros((0, len(feats)))
    try:
        return make_multiview(X, list(t["label"]), views, app_ids=tuple(t["app_id"]),
                              feature_names=tuple(feats))
    except InputError as exc:
        _reraise(path, exc)


def load_corpus(path) -> TokenCorpus:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"input file not found: {p}", path=p)
    docs = tuple(tuple(line.split()) for line in p.read_text(encoding="utf-8").splitlines())
    return TokenCorpus(tuple(d for d in docs if d))


def load_app_docs(path, label_universe: Sequence[str] | None = None) -> AppDocs:
    t = load_table(path, APP_DOCS_SCHEMA)
    docs = AppDocs(tuple(t["app_id"]), tuple(t["text"]), tuple(t["labels"]))
    if len(set(docs.app_ids)) != len(docs.app_ids):
        raise IngestError("duplicate app_id", path=path)
    if label_universe is not None:
        allowed = set(label_universe)
        for r, labs in enumerate(docs.labels, start=1):
            for lab in labs:
                if lab not in allowed:
                    raise IngestError(f"label {lab!r} not in declared label universe",
                                      path=path, row=r, column="labels")
    return docs


def load_annotations(path) -> AnnotationSet:
    t = load_table(path, ANNOTATION_SCHEMA)
    aspects = list(t["aspect"]) if "aspect" in t.data else None
    try:
        return make_annotations(list(t["app_id"]), list(t["annotator_id"]), t["label"], aspects)
    except InputError as exc:
        _reraise(path, exc)


def load_pairs(path) -> PairList:
    t = load_table(path, PAIRS_SCHEMA)
    for r, (b, w) in enumerate(zip(t["better_app_id"], t["worse_app_id"]), start=1):
        if b == w:
            raise IngestError("pair compares an app with itself", path=path, row=r)
    return PairList(tuple(t["better_app_id"]), tuple(t["worse_app_id"]))


# ---------------------------------------------------------------------------
# writers (inverse of the loaders)
# ---------------------------------------------------------------------------

def _iso(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), timezone.utc).isoformat()


def _num(x) -> str:
    return f"{float(x):.17g}"


def write_events(log: EventLog, path) -> None:
    _write_csv(path, ["user_id", "timestamp", "event"],
               ([log.user_ids[u], _iso(t), k] for u, t, k in zip(log.user, log.timestamp, log.kind)))


def write_ratings(data: RatingsTriples, path) -> None:
    _write_csv(path, ["user_id", "item_id", "count"],
               ([data.user_ids[u], data.item_ids[i], int(c)]
                for u, i, c in zip(data.user, data.item, data.count)))


def write_context(data: ContextQuads, path) -> None:
    _write_csv(path, ["user_id", "item_id", "context_id", "count"],
               ([data.user_ids[u], data.item_ids[i], data.context_ids[k], int(c)]
                for u, i, k, c in zip(data.user, data.item, data.context, data.count)))


def write_privacy(profile: PrivacyProfile, path) -> None:
    _write_csv(path, ["item_id", "permission_id"],
               ([profile.item_ids[j], profile.permission_ids[s]]
                for j, ss in enumerate(profile.sets) for s in ss))


def write_study(study: StudyTable, path) -> None:
    meta = list(study.metadata)
    rows = ([_num(y), int(t), *(_num(v) for v in x), *(study.metadata[m][r] for m in meta)]
            for r, (y, t, x) in enumerate(zip(study.outcome, study.treatment, study.X)))
    _write_csv(path, ["outcome", "treatment", *study.covariates, *meta], rows)


def write_multiview(data: MultiViewDataset, path, views_path) -> None:
    _write_csv(path, ["app_id", "label", *data.feature_names],
               ([a, data.classes[k], *(_num(v) for v in x)]
                for a, k, x in zip(data.app_ids, data.labels, data.X)))
    views = {name: [data.feature_names[j] for j in idx] for name, idx in data.views.items()}
    Path(views_path).write_text(json.dumps(views, indent=1) + "\n", encoding="utf-8")


def write_corpus(corpus: TokenCorpus, path) -> None:
    Path(path).write_text("".join(" ".join(d) + "\n" for d in corpus.documents),
                          encoding="utf-8")


def write_app_docs(docs: AppDocs, path) -> None:
    _write_csv(path, ["app_id", "text", "labels"],
               ([a, t, ";".join(ls)] for a, t, ls in zip(docs.app_ids, docs.texts, docs.labels)))


def write_annotations(ann: AnnotationSet, path) -> None:
    _write_csv(path, ["app_id", "annotator_id", "label", "aspect"],
               ([ann.app_ids[a], ann.annotator_ids[m], int(y), ann.aspect_ids[s]]
                for a, m, y, s in zip(ann.app, ann.annotator, ann.label, ann.aspect)))


def write_pairs(pairs: PairList, path) -> None:
    _write_csv(path, ["better_app_id", "worse_app_id"], zip(pairs.better, pairs.worse))


def save_id_map(path, **maps: Sequence[str]) -> None:
    """Persist dense index -> original id maps, e.g. ``users=..., items=...``."""
    Path(path).write_text(json.dumps({k: list(v) for k, v in maps.items()}, indent=1,
                                     sort_keys=True) + "\n", encoding="utf-8")


def load_id_map(path) -> dict[str, list[str]]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def datasets_equal(a, b) -> bool:
    """Field-by-field equality (arrays compared exactly)."""
    if type(a) is not type(b):
        return False
    for f in fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, dict):
            if x.keys() != y.keys():
                return False
            if not all(np.array_equal(np.asarray(x[k]), np.asarray(y[k])) for k in x):
                return False
        elif isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if not np.array_equal(np.asarray(x), np.asarray(y)):
                return False
        elif x != y:
            return False
    return True


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise InputError(f"split fraction must lie in (0, 1), got {fraction}")
    if n < 1:
        raise InputError("cannot split an empty dataset")
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise InputError(f"split of {n} units at fraction {fraction} leaves one side empty")
    perm = stream(seed, "ingest.split").permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(dataset, fraction: float, seed: int):
    """Seeded train/test partition.

    The split unit is a row, except for :class:`EventLog` where it is a user
    (all of a user's events land on the same side).
    """
    train, test = split_indices(len(dataset), fraction, seed)
    return dataset.subset(train), dataset.subset(test)
