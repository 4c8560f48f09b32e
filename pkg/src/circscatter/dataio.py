"""Far-field data generation and dataset I/O.

The forward map from boundary to far-field pattern is a deterministic
single-layer-potential surrogate: for incidence direction
d = (cos phi, sin phi) and observation directions x_hat(t_j) on the
uniform angle grid, the two patterns are quadratures over the boundary
nodes x_k with weights w_k = |x'(tau_k)| * 2*pi/T,

    e(t_j) = (sin(theta)/sqrt(eps0)) * (1/(1+lambda))
             * sum_k exp(i*kappa0*(d - x_hat_j).x_k) * w_k
    h(t_j) = (lambda/(1+lambda))
             * sum_k exp(i*kappa0*(d - x_hat_j).x_k) * (n_k.x_hat_j) * w_k

with n the outward unit normal.  Features are the real/imaginary parts
of these patterns stacked channel-major: features[c*T0 + i] = X[i, c].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, LayoutError, ValidationError
from .geometry import (
    BoundaryShape,
    ScatterConfig,
    ShapeClass,
    boundary_grid,
    eval_curve,
    sample_shape,
    shape_to_targets,
)
from .serial import format_double

TEXT_MAGIC = "circscatter-v1"
BINARY_MAGIC = b"CSC1"
STD_FLOOR = 1e-12


# ---------------------------------------------------------------- layouts


@dataclass(frozen=True)
class ChannelLayout:
    """Ordered channel descriptors (field, part, phi) with field in
    {"E", "H"} and part in {"re", "im"}.  Only the three standard
    assemblies are valid: 2 channels (E at one phi), 4 channels (E and H
    at one phi), 8 channels (E and H at phi=0 then phi=pi)."""

    channels: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        phis = []
        for p in self.channels:
            if p[2] not in phis:
                phis.append(p[2])
        if self.channels != ChannelLayout._standard_tuple(len(self.channels), tuple(phis)):
            raise LayoutError(f"non-standard channel layout {self.channels!r}")

    def __len__(self):
        return len(self.channels)

    @staticmethod
    def _standard_tuple(c0, phis):
        if c0 == 2 and len(phis) == 1:
            p = phis[0]
            return (("E", "re", p), ("E", "im", p))
        if c0 == 4 and len(phis) == 1:
            p = phis[0]
            return (("E", "re", p), ("E", "im", p), ("H", "re", p), ("H", "im", p))
        if c0 == 8 and len(phis) == 2:
            return tuple(
                (f, part, p) for p in phis for f in ("E", "H") for part in ("re", "im")
            )
        return None

    @classmethod
    def standard(cls, c0: int, phis) -> "ChannelLayout":
        phis = tuple(float(p) for p in phis)
        channels = cls._standard_tuple(c0, phis)
        if channels is None:
            raise LayoutError(f"no standard layout for c0={c0}, phis={phis}")
        return cls(channels)


def surrogate_farfield(shape: BoundaryShape, config: ScatterConfig, phi: float):
    """Quadrature surrogate far-field pair (e, h) on the T0 angle grid.

    Returns two complex ndarrays of shape (config.t0,).
    """
    if float(phi) not in config.phis:
        raise ValidationError(f"phi={phi} not in config.phis={config.phis}")
    tau = boundary_grid(config.t_boundary)
    pts, deriv = eval_curve(shape, tau)
    speed = np.hypot(deriv[:, 0], deriv[:, 1])
    if np.any(speed <= 0.0):
        raise ValidationError("boundary parametrization has a stationary point")
    weights = speed * (2.0 * np.pi / config.t_boundary)
    # outward unit normal for a counter-clockwise parametrization
    normal = np.stack([deriv[:, 1], -deriv[:, 0]], axis=1) / speed[:, None]

    t = boundary_grid(config.t0)
    xhat = np.stack([np.cos(t), np.sin(t)], axis=1)          # (T0, 2)
    d = np.array([math.cos(phi), math.sin(phi)])
    phase = config.kappa0 * ((d[None, :] - xhat) @ pts.T)     # (T0, T)
    kernel = np.exp(1j * phase)
    lam = shape.impedance
    e = (math.sin(config.theta) / math.sqrt(config.eps0)) / (1.0 + lam) * (kernel @ weights)
    h = (lam / (1.0 + lam)) * ((kernel * (xhat @ normal.T)) @ weights)
    return e, h


def assemble_channels(fields: dict, layout: ChannelLayout, t0: int) -> np.ndarray:
    """Flatten far-field pairs into the channel-major feature vector.

    ``fields`` maps phi -> (e, h) complex arrays of length t0.
    """
    parts = []
    for fld, part, phi in layout.channels:
        if phi not in fields:
            raise LayoutError(f"layout needs phi={phi} but fields only has {sorted(fields)}")
        e, h = fields[phi]
        arr = e if fld == "E" else h
        if arr.shape != (t0,):
            raise LayoutError(f"field array for phi={phi} has shape {arr.shape}, want ({t0},)")
        parts.append(arr.real if part == "re" else arr.imag)
    return np.concatenate(parts).astype(np.float64)


def reshape_to_tensor(features: np.ndarray, t0: int, c0: int) -> np.ndarray:
    """Feature vector(s) -> (t0, c0) tensor(s): X[i, c] = features[c*t0 + i].
    Accepts a single vector or a batch (n, t0*c0)."""
    features = np.asarray(features)
    if features.shape[-1] != t0 * c0:
        raise LayoutError(f"feature length {features.shape[-1]} != t0*c0 = {t0 * c0}")
    if features.ndim == 1:
        return features.reshape(c0, t0).T
    if features.ndim == 2:
        return features.reshape(-1, c0, t0).transpose(0, 2, 1)
    raise LayoutError("features must be a vector or a batch of vectors")


def flatten_tensor(x: np.ndarray) -> np.ndarray:
    """Inverse of reshape_to_tensor."""
    x = np.asarray(x)
    if x.ndim == 2:
        return x.T.reshape(-1)
    if x.ndim == 3:
        return x.transpose(0, 2, 1).reshape(x.shape[0], -1)
    raise LayoutError("tensor must be (t0, c0) or (n, t0, c0)")


# ---------------------------------------------------------------- datasets


@dataclass
class FarFieldSample:
    features: np.ndarray
    target: np.ndarray
    shape_id: str


@dataclass
class Dataset:
    """In-memory dataset: features (n, t0*c0) float64, targets either
    (n,) integer labels (task "class") or (n, p) doubles (task "reg")."""

    features: np.ndarray
    targets: np.ndarray
    task: str
    t0: int
    c0: int
    classes: tuple[int, ...]
    shape_ids: list[str]
    fixed_impedance: float | None = None

    def __post_init__(self):
        if self.task not in ("class", "reg"):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.features.ndim != 2 or self.features.shape[1] != self.t0 * self.c0:
            raise ValidationError("features must be (n, t0*c0)")
        if len(self.shape_ids) != len(self.features):
            raise ValidationError("one shape_id per row required")
        if self.task == "class":
            self.targets = np.asarray(self.targets, dtype=np.int64)
            if self.targets.shape != (len(self.features),):
                raise ValidationError("class targets must be a label vector")
            bad = set(np.unique(self.targets)) - set(self.classes)
            if bad:
                raise ValidationError(f"labels {sorted(bad)} not in classes {self.classes}")
        else:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.ndim != 2 or self.targets.shape[0] != len(self.features):
                raise ValidationError("regression targets must be (n, p)")

    def __len__(self):
        return len(self.features)

    @property
    def target_dim(self) -> int:
        return 1 if self.task == "class" else self.targets.shape[1]

    def sample(self, i: int) -> FarFieldSample:
        return FarFieldSample(self.features[i], self.targets[i], self.shape_ids[i])


def generate_dataset(class_tags, n: int, config: ScatterConfig, seed: int,
                     impedance="variable") -> Dataset:
    """Generate n samples cycling through ``class_tags`` round-robin.

    One class tag gives a regression dataset (targets are the shape
    parameter vectors); several tags give a classification dataset
    (targets are the class labels).  ``impedance`` is "variable" or a
    fixed float; the impedance enters the regression targets only when
    variable.  Each row is a pure function of (seed, row index, config),
    so generation order or chunking cannot change the result.
    """
    tags = [ShapeClass(t) for t in class_tags]
    if not tags:
        raise ValidationError("need at least one class tag")
    if n < 1:
        raise ValidationError("n must be positive")
    if impedance == "variable":
        fixed = None
    else:
        fixed = float(impedance)
        lo, hi = 0.1, 10.0
        if not lo <= fixed <= hi:
            raise ValidationError(f"fixed impedance {fixed} outside [{lo}, {hi}]")
    task = "class" if len(tags) > 1 else "reg"
    include_imp = fixed is None
    layout = ChannelLayout.standard(config.c0, config.phis)

    children = np.random.SeedSequence(seed).spawn(n)
    features = np.empty((n, config.t0 * config.c0), dtype=np.float64)
    shape_ids = []
    if task == "class":
        targets = np.empty(n, dtype=np.int64)
    else:
        p = {ShapeClass.PEANUT: 2, ShapeClass.KITE: 3, ShapeClass.STAR: 11}[tags[0]]
        targets = np.empty((n, p + 2 + (1 if include_imp else 0)), dtype=np.float64)

    for i in range(n):
        tag = tags[i % len(tags)]
        rng = np.random.default_rng(children[i])
        shape = sample_shape(tag, rng, config, fixed_impedance=fixed)
        fields = {phi: surrogate_farfield(shape, config, phi) for phi in config.phis}
        features[i] = assemble_channels(fields, layout, config.t0)
        if task == "class":
            targets[i] = int(tag)
        else:
            targets[i] = shape_to_targets(shape, include_impedance=include_imp)
        shape_ids.append(f"{seed}:{i}")

    classes = tuple(sorted(int(t) for t in set(tags)))
    return Dataset(features, targets, task, config.t0, config.c0, classes,
                   shape_ids, fixed_impedance=fixed)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int


def split_dataset(n: int, seed: int) -> DatasetSplit:
    """Disjoint 80/10/10 split of range(n) by a seeded permutation.

    Valid and test sizes are round(n/10) each (ties round half up);
    train takes the rest.
    """
    if n < 10:
        raise ValidationError("need at least 10 samples to split")
    n_valid = int(math.floor(n / 10 + 0.5))
    n_test = n_valid
    perm = np.random.default_rng(seed).permutation(n)
    train = perm[: n - n_valid - n_test]
    valid = perm[n - n_valid - n_test: n - n_test]
    test = perm[n - n_test:]
    return DatasetSplit(np.sort(train), np.sort(valid), np.sort(test), seed)


# ---------------------------------------------------------------- scaling


@dataclass
class Standardizer:
    """Per-feature affine map fitted on training rows only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Standardizer":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or len(rows) < 2:
            raise ValidationError("need a (n>=2, d) matrix to fit a standardizer")
        mean = rows.mean(axis=0)
        std = np.maximum(rows.std(axis=0), STD_FLOOR)
        return cls(mean, std)

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.std

    def invert(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(rows, dtype=np.float64) * self.std + self.mean

    def to_json_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Standardizer":
        try:
            return cls(np.asarray(obj["mean"], dtype=np.float64),
                       np.asarray(obj["std"], dtype=np.float64))
        except KeyError as exc:
            raise FormatError(f"standardizer JSON missing key {exc}") from exc


def add_noise(rows: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """rows + level * standard normal draws, applied to standardized features."""
    if level < 0:
        raise ValidationError("noise level must be non-negative")
    return rows + level * rng.standard_normal(rows.shape)


# ---------------------------------------------------------------- text files


def _header_line(ds: Dataset) -> str:
    head = (f"{TEXT_MAGIC} T0={ds.t0} C0={ds.c0} P={ds.target_dim} "
            f"task={ds.task} classes={','.join(str(c) for c in ds.classes)}")
    if ds.fixed_impedance is not None:
        head += f" fixed_lambda={format_double(ds.fixed_impedance)}"
    return head


def _parse_header(line: str) -> dict:
    tokens = line.split()
    if not tokens or tokens[0] != TEXT_MAGIC:
        raise FormatError(f"bad magic, expected {TEXT_MAGIC!r}", line=1)
    out = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}", line=1)
        key, value = tok.split("=", 1)
        out[key] = value
    try:
        parsed = {
            "t0": int(out["T0"]),
            "c0": int(out["C0"]),
            "p": int(out["P"]),
            "task": out["task"],
            "classes": tuple(int(c) for c in out["classes"].split(",")),
        }
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid header: {exc}", line=1) from exc
    parsed["fixed_lambda"] = float(out["fixed_lambda"]) if "fixed_lambda" in out else None
    if parsed["task"] not in ("class", "reg"):
        raise FormatError(f"unknown task {parsed['task']!r}", line=1)
    if any(c not in (1, 2, 3) for c in parsed["classes"]):
        raise FormatError(f"unknown class tags {parsed['classes']}", line=1)
    return parsed


def write_dataset_text(path, ds: Dataset) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_header_line(ds) + "\n")
        for i in range(len(ds)):
            cols = [format_double(v) for v in ds.features[i]]
            if ds.task == "class":
                cols.append(str(int(ds.targets[i])))
            else:
                cols.extend(format_double(v) for v in ds.targets[i])
            cols.append(ds.shape_ids[i])
            fh.write(",".join(cols) + "\n")


def read_dataset_text(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        head = _parse_header(fh.readline().rstrip("\n"))
        d = head["t0"] * head["c0"]
        n_target = 1 if head["task"] == "class" else head["p"]
        features, targets, shape_ids = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split(",")
            if len(cols) != d + n_target + 1:
                raise FormatError(
                    f"expected {d + n_target + 1} columns, got {len(cols)}", line=lineno)
            try:
                features.append([float(v) for v in cols[:d]])
                if head["task"] == "class":
                    targets.append(int(cols[d]))
                else:
                    targets.append([float(v) for v in cols[d:d + n_target]])
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from exc
            shape_ids.append(cols[-1])
    if not features:
        raise FormatError("dataset has no rows", line=2)
    features = np.asarray(features, dtype=np.float64)
    if head["task"] == "class":
        targets = np.asarray(targets, dtype=np.int64)
        bad = set(np.unique(targets)) - set(head["classes"])
        if bad:
            raise FormatError(f"labels {sorted(bad)} not in declared classes")
        targets_arr = targets
    else:
        targets_arr = np.asarray(targets, dtype=np.float64)
    return Dataset(features, targets_arr, head["task"], head["t0"], head["c0"],
                   head["classes"], shape_ids, fixed_impedance=head["fixed_lambda"])


# ---------------------------------------------------------------- binary files


def write_dataset_binary(path, ds: Dataset) -> None:
    header = {
        "t0": ds.t0, "c0": ds.c0, "p": ds.target_dim, "task": ds.task,
        "classes": list(ds.classes), "n": len(ds), "shape_ids": ds.shape_ids,
        "fixed_lambda": ds.fixed_impedance,
    }
    blob = json.dumps(header, separators=(",", ":")).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(np.array(len(blob), dtype="<u4").tobytes())
        fh.write(blob)
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.targets, dtype="<f8").tobytes())


def read_dataset_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise FormatError("truncated header length")
        hlen = int(np.frombuffer(raw_len, dtype="<u4")[0])
        try:
            header = json.loads(fh.read(hlen).decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad binary header: {exc}") from exc
        n, t0, c0, p = header["n"], header["t0"], header["c0"], header["p"]
        task = header["task"]
        d = t0 * c0
        features = np.frombuffer(fh.read(8 * n * d), dtype="<f8")
        if features.size != n * d:
            raise FormatError("truncated feature payload")
        features = features.reshape(n, d).astype(np.float64)
        n_target = 1 if task == "class" else p
        targets = np.frombuffer(fh.read(8 * n * n_target), dtype="<f8")
        if targets.size != n * n_target:
            raise FormatError("truncated target payload")
        if task == "class":
            targets = targets.astype(np.int64)
        else:
            targets = targets.reshape(n, p).astype(np.float64)
        if fh.read(1):
            raise FormatError("trailing bytes after payload")
    fixed = header.get("fixed_lambda")
    return Dataset(features, targets, task, t0, c0, tuple(header["classes"]),
                   list(header["shape_ids"]), fixed_impedance=fixed)


def write_dataset(path, ds: Dataset, binary: bool = False) -> None:
    if binary:
        write_dataset_binary(path, ds)
    else:
        write_dataset_text(path, ds)


def read_dataset(path) -> Dataset:
    """Sniff the on-disk format by magic bytes and dispatch."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == BINARY_MAGIC:
        return read_dataset_binary(path)
    return read_dataset_text(path)
