"""Domain types, delimited-file ingestion and prior estimation.

Every other module consumes these types in memory. Group events are
described as conjunctions of column conditions, e.g. ``{"A": 0, "Y": 1}``,
where ``Y`` names the label column and anything else an attribute column.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

LABEL = "Y"


class SchemaError(ValueError):
    """A delimited file does not match the expected layout or value ranges."""


class EmptyGroupError(ValueError):
    """A group event has no members, so its prior or disparity is undefined."""


@dataclass(frozen=True)
class Schema:
    label: str = LABEL
    attributes: tuple[str, ...] = ("A",)
    features: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    labels: np.ndarray
    attributes: Mapping[str, np.ndarray]
    features: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        n = labels.shape[0]
        _check_binary(labels, LABEL)
        attrs = {}
        for name, col in self.attributes.items():
            col = np.asarray(col, dtype=np.int64)
            if col.shape != (n,):
                raise ValueError(f"attribute {name!r} has length {col.shape}, expected {n}")
            _check_binary(col, name)
            attrs[name] = col
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "attributes", attrs)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != n:
                raise ValueError(f"feature matrix shape {feats.shape} does not match n={n}")
            object.__setattr__(self, "features", feats)
            if not self.feature_names:
                names = tuple(f"x{j}" for j in range(feats.shape[1]))
                object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def column(self, name: str) -> np.ndarray:
        if name == LABEL:
            return self.labels
        try:
            return self.attributes[name]
        except KeyError:
            raise KeyError(f"dataset has no column {name!r}") from None

    def subset(self, idx) -> LabeledDataset:
        return LabeledDataset(
            labels=self.labels[idx],
            attributes={k: v[idx] for k, v in self.attributes.items()},
            features=None if self.features is None else self.features[idx],
            feature_names=self.feature_names,
        )


def _check_binary(col: np.ndarray, name: str) -> None:
    bad = np.flatnonzero((col != 0) & (col != 1))
    if bad.size:
        raise ValueError(f"column {name!r} must be 0/1; row {bad[0]} holds {col[bad[0]]}")


@dataclass(frozen=True)
class Component:
    """One pair of group events whose positive-prediction rates are equalized."""

    name: str
    group_a: Mapping[str, int]
    group_b: Mapping[str, int]
    prior_a: float | None = None
    prior_b: float | None = None

    def membership(self, data: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
        return _event_mask(data, self.group_a), _event_mask(data, self.group_b)

    def with_priors(self, prior_a: float, prior_b: float) -> Component:
        return replace(self, prior_a=float(prior_a), prior_b=float(prior_b))


def _event_mask(data: LabeledDataset, event: Mapping[str, int]) -> np.ndarray:
    mask = np.ones(data.n, dtype=bool)
    for col, val in event.items():
        mask &= data.column(col) == val
    return mask


@dataclass(frozen=True)
class CriterionSpec:
    components: tuple[Component, ...]
    kind: str = "custom"

    def __post_init__(self):
        if not self.components:
            raise ValueError("a criterion needs at least one component")
        expected = {"dp": 1, "eop": 1, "eo": 2}.get(self.kind)
        if expected is not None and len(self.components) != expected:
            raise ValueError(f"{self.kind} criterion takes {expected} component(s)")
        for c in self.components:
            for p in (c.prior_a, c.prior_b):
                if p is not None and not 0.0 < p <= 1.0:
                    raise ValueError(f"component {c.name!r}: prior {p} outside (0, 1]")

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.components)

    @property
    def has_priors(self) -> bool:
        return all(c.prior_a is not None and c.prior_b is not None for c in self.components)

    def priors(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.has_priors:
            raise ValueError("criterion priors have not been estimated")
        pa = np.array([c.prior_a for c in self.components], dtype=np.float64)
        pb = np.array([c.prior_b for c in self.components], dtype=np.float64)
        return pa, pb

    def membership(self, data: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
        """Boolean ``(n, K)`` masks of group-a and group-b events."""
        masks = [c.membership(data) for c in self.components]
        return np.stack([m[0] for m in masks], axis=1), np.stack([m[1] for m in masks], axis=1)


def demographic_parity(attr: str = "A") -> CriterionSpec:
    return CriterionSpec((Component("0", {attr: 0}, {attr: 1}),), kind="dp")


def equal_opportunity(attr: str = "A") -> CriterionSpec:
    return CriterionSpec((Component("1", {attr: 0, LABEL: 1}, {attr: 1, LABEL: 1}),), kind="eop")


def equalized_odds(attr: str = "A") -> CriterionSpec:
    comps = tuple(Component(str(y), {attr: 0, LABEL: y}, {attr: 1, LABEL: y}) for y in (0, 1))
    return CriterionSpec(comps, kind="eo")


def multi_parity(attrs: Sequence[str]) -> CriterionSpec:
    """Maximum of demographic parities over several binary attributes."""
    comps = tuple(Component(a, {a: 0}, {a: 1}) for a in attrs)
    return CriterionSpec(comps, kind="custom")


CRITERIA = {"dp": demographic_parity, "eop": equal_opportunity, "eo": equalized_odds}


def make_criterion(kind: str, attr: str = "A") -> CriterionSpec:
    try:
        return CRITERIA[kind.lower()](attr)
    except KeyError:
        raise ValueError(f"unknown criterion {kind!r}; choose from {sorted(CRITERIA)}") from None


def estimate_priors(data: LabeledDataset, criterion: CriterionSpec) -> CriterionSpec:
    """Fill component priors with empirical group frequencies of ``data``."""
    if data.n == 0:
        raise EmptyGroupError("cannot estimate priors from an empty dataset")
    comps = []
    for c in criterion.components:
        in_a, in_b = c.membership(data)
        if not in_a.any() or not in_b.any():
            which = "a" if not in_a.any() else "b"
            raise EmptyGroupError(f"component {c.name!r}: group {which} is empty")
        comps.append(c.with_priors(in_a.mean(), in_b.mean()))
    return replace(criterion, components=tuple(comps))


@dataclass(frozen=True, eq=False)
class ProbTable:
    """Auxiliary-model probabilities: ``p_y`` and per-component ``p_a``/``p_b`` columns."""

    p_y: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        p_y = np.asarray(self.p_y, dtype=np.float64)
        p_a = np.asarray(self.p_a, dtype=np.float64)
        p_b = np.asarray(self.p_b, dtype=np.float64)
        if p_a.ndim == 1:
            p_a = p_a[:, None]
        if p_b.ndim == 1:
            p_b = p_b[:, None]
        n = p_y.shape[0]
        if p_y.ndim != 1 or p_a.shape != p_b.shape or p_a.shape[0] != n:
            raise ValueError(f"inconsistent shapes p_y={p_y.shape} p_a={p_a.shape} p_b={p_b.shape}")
        for label, arr in (("p_y", p_y), ("p_a", p_a), ("p_b", p_b)):
            if not np.all((arr >= 0.0) & (arr <= 1.0)):
                raise ValueError(f"{label} has entries outside [0, 1]")
        names = self.names or tuple(str(k) for k in range(p_a.shape[1]))
        if len(names) != p_a.shape[1]:
            raise ValueError("one name per component required")
        object.__setattr__(self, "p_y", p_y)
        object.__setattr__(self, "p_a", p_a)
        object.__setattr__(self, "p_b", p_b)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self) -> int:
        return int(self.p_y.shape[0])

    @property
    def K(self) -> int:
        return int(self.p_a.shape[1])


# class index of the joint (Y, A) model is 2*Y + A
JOINT_COLUMNS = ("p_y0a0", "p_y0a1", "p_y1a0", "p_y1a1")


def probs_from_joint(joint: np.ndarray, criterion: CriterionSpec, p_y: np.ndarray | None = None) -> ProbTable:
    """Map ``(n, 4)`` joint probabilities p(Y, A | X) onto a criterion's components."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or joint.shape[1] != 4:
        raise ValueError(f"joint table must have 4 columns (class 2Y+A), got shape {joint.shape}")
    if p_y is None:
        p_y = joint[:, 2] + joint[:, 3]
    cols_a, cols_b = [], []
    for c in criterion.components:
        cols_a.append(_joint_event(joint, c.group_a))
        cols_b.append(_joint_event(joint, c.group_b))
    return ProbTable(np.clip(p_y, 0.0, 1.0), np.stack(cols_a, 1), np.stack(cols_b, 1), criterion.names)


def _joint_event(joint: np.ndarray, event: Mapping[str, int]) -> np.ndarray:
    extra = set(event) - {LABEL, "A"}
    if extra:
        raise ValueError(f"joint (Y, A) probabilities cannot express conditions on {sorted(extra)}")
    total = np.zeros(joint.shape[0])
    for y in (0, 1):
        for a in (0, 1):
            if event.get(LABEL, y) == y and event.get("A", a) == a:
                total = total + joint[:, 2 * y + a]
    return np.clip(total, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class ModificationRule:
    """Linear flipping rule ``kappa(s) = 1{ weights . s > scale }`` with ``scale > 0``.

    ``z = weights / scale`` is the canonical weight vector of the rule
    ``1{ z . s > 1 }``; the pair is kept so fitted decisions replay bit-exactly.
    """

    weights: np.ndarray
    scale: float = 1.0
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise ValueError("rule weights must be a finite vector")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"rule scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "provenance", dict(self.provenance))

    @classmethod
    def identity(cls, K: int, **provenance) -> ModificationRule:
        return cls(np.zeros(K), 1.0, provenance)

    @property
    def K(self) -> int:
        return int(self.weights.shape[0])

    @property
    def z(self) -> np.ndarray:
        return self.weights / self.scale

    def decide(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[1] != self.K:
            raise ValueError(f"rule has {self.K} weights but scores have {s.shape[1]} columns")
        return project(s, self.weights) > self.scale


def project(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``s @ w`` summed column by column.

    Avoids BLAS so a rule evaluated one at a time and a batch of candidate
    rules evaluated together produce bit-identical projections.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        out = s[:, 0] * w[0]
        for k in range(1, w.shape[0]):
            out = out + s[:, k] * w[k]
        return out
    out = s[:, 0:1] * w[0][None, :]
    for k in range(1, w.shape[0]):
        out = out + s[:, k : k + 1] * w[k][None, :]
    return out


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    disparities: tuple[float, ...]
    cc: float
    flip_count: int = 0

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "disparities": list(self.disparities),
            "cc": self.cc,
            "flip_count": self.flip_count,
        }


# ---------------------------------------------------------------------------
# delimited files


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
            rows.append(row)
    return header, rows


def _column(path, header, rows, name, *, binary=False) -> np.ndarray:
    try:
        j = header.index(name)
    except ValueError:
        raise SchemaError(f"{path}: missing column {name!r}") from None
    out = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        try:
            out[i] = float(row[j])
        except ValueError:
            raise SchemaError(f"{path}: row {i + 1}, column {name!r}: {row[j]!r} is not a number") from None
        if binary and out[i] not in (0.0, 1.0):
            raise SchemaError(f"{path}: row {i + 1}, column {name!r}: value {row[j]!r} is not 0 or 1")
    return out


def load_labeled(path, schema: Schema = Schema()) -> LabeledDataset:
    header, rows = _read_table(path)
    labels = _column(path, header, rows, schema.label, binary=True).astype(np.int64)
    attrs = {a: _column(path, header, rows, a, binary=True).astype(np.int64) for a in schema.attributes}
    features = None
    if schema.features:
        features = np.stack([_column(path, header, rows, f) for f in schema.features], axis=1)
    return LabeledDataset(labels, attrs, features, tuple(schema.features))


def infer_schema(path, label: str = LABEL, attributes: Sequence[str] = ("A",)) -> Schema:
    """Schema whose features are every column other than label and attributes."""
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh))]
    feats = tuple(h for h in header if h != label and h not in attributes)
    return Schema(label, tuple(attributes), feats)


def write_labeled(data: LabeledDataset, path, label: str = LABEL) -> None:
    cols: dict[str, np.ndarray] = {label: data.labels}
    cols.update(data.attributes)
    if data.features is not None:
        for j, name in enumerate(data.feature_names):
            cols[name] = data.features[:, j]
    write_columns(path, cols)


def write_columns(path, columns: Mapping[str, np.ndarray]) -> None:
    """Comma-separated file; floats written with ``repr`` so they re-read bit-exactly."""
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(arrays[0]) if arrays else 0):
            w.writerow([_fmt(a[i]) for a in arrays])


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int, np.bool_, bool)):
        return str(int(v))
    return repr(float(v))


def prob_columns(name: str) -> tuple[str, str]:
    return f"p_a{name}", f"p_b{name}"


def load_probs(path, criterion: CriterionSpec) -> ProbTable:
    """Read ``p_y`` and per-component ``p_a<name>``/``p_b<name>`` columns.

    Files carrying the four joint columns ``p_y<y>a<a>`` instead are mapped
    onto the criterion's components; ``p_y`` then defaults to their Y=1 sum.
    """
    header, rows = _read_table(path)
    wanted = [c for name in criterion.names for c in prob_columns(name)]
    if all(c in header for c in wanted):
        p_y = _column(path, header, rows, "p_y")
        cols = {c: _column(path, header, rows, c) for c in wanted}
        p_a = np.stack([cols[prob_columns(n)[0]] for n in criterion.names], axis=1)
        p_b = np.stack([cols[prob_columns(n)[1]] for n in criterion.names], axis=1)
        table = (p_y, p_a, p_b)
    elif all(c in header for c in JOINT_COLUMNS):
        joint = np.stack([_column(path, header, rows, c) for c in JOINT_COLUMNS], axis=1)
        p_y = _column(path, header, rows, "p_y") if "p_y" in header else None
        _check_range(path, joint, "joint")
        if p_y is not None:
            _check_range(path, p_y, "p_y")
        return probs_from_joint(joint, criterion, p_y)
    else:
        missing = [c for c in wanted if c not in header]
        raise SchemaError(f"{path}: missing probability column(s) {missing}")
    for label, arr in zip(("p_y", "p_a", "p_b"), table):
        _check_range(path, arr, label)
    return ProbTable(*table, names=criterion.names)


def _check_range(path, arr, label):
    bad = np.argwhere(~((arr >= 0.0) & (arr <= 1.0)))
    if bad.size:
        i = bad[0][0]
        raise SchemaError(f"{path}: row {i + 1}: {label} value {arr[tuple(bad[0])]} outside [0, 1]")


def write_probs(probs: ProbTable, path) -> None:
    cols = {"p_y": probs.p_y}
    for k, name in enumerate(probs.names):
        ca, cb = prob_columns(name)
        cols[ca] = probs.p_a[:, k]
        cols[cb] = probs.p_b[:, k]
    write_columns(path, cols)


# ---------------------------------------------------------------------------
# rule files: one ``key = value`` pair per line


def to_jsonable(v):
    """``json.dumps`` fallback for numpy scalars and arrays."""
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"{type(v).__name__} is not JSON serializable")


def write_rule(rule: ModificationRule, path) -> None:
    lines = [
        "weights = " + ",".join(repr(float(w)) for w in rule.weights),
        f"scale = {rule.scale!r}",
        "z = " + ",".join(repr(float(v)) for v in rule.z),
        "provenance = " + json.dumps(rule.provenance, sort_keys=True, default=to_jsonable),
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def load_rule(path) -> ModificationRule:
    fields: dict[str, str] = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SchemaError(f"{path}: line {i} is not a 'key = value' pair")
        fields[key.strip()] = value.strip()
    if "weights" not in fields:
        raise SchemaError(f"{path}: rule file has no weights")
    try:
        weights = [float(v) for v in fields["weights"].split(",")]
        scale = float(fields.get("scale", "1.0"))
        prov = json.loads(fields.get("provenance", "{}"))
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed rule file ({exc})") from None
    return ModificationRule(np.array(weights), scale, prov)
