"""Two-stage inverse solver and experiment driver.

The divide-and-conquer pipeline: a classifier picks the obstacle's shape
class from far-field features, the class-specific regressor recovers the
boundary coefficients (and impedance), and the curve is rebuilt from the
parametrization.  This module owns the experiment suites, the on-disk
model registry, and the misclassification analysis.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, geometry, training
from .dataio import ChannelLayout, Dataset, Standardizer
from .errors import (
    DegenerateShapeError,
    FormatError,
    LayoutError,
    ValidationError,
)
from .geometry import (
    BoundaryShape,
    ScatterConfig,
    ShapeClass,
    boundary_grid,
    eval_curve,
    sample_shape,
    targets_to_shape,
    validate_shape,
)
from .nncore import NetworkSpec, Parameters, load_model, preset_spec, save_model
from .serial import format_double
from .training import (
    TrainHistory,
    evaluate_classification,
    evaluate_regression,
    forward_eval,
    noise_sweep,
    preset_train_config,
    train,
)

SUPERSET_T0 = 128
SUPERSET_C0 = 8
DEFAULT_NOISE_LEVELS = (0.005, 0.01, 0.02, 0.05)
REGISTRY_FORMAT = "circscatter-registry-v1"
MANIFEST_NAME = "manifest.json"
_TAG_TO_NAME = {1: "peanut", 2: "kite", 3: "star"}


# ---------------------------------------------------------------- suites


@dataclass(frozen=True)
class SuiteSpec:
    """One experiment suite: dataset recipe plus the matching preset."""

    name: str
    class_tags: tuple
    n_full: int
    t0: int
    c0: int
    phis: tuple
    preset: str
    fixed_impedance: float | None = None

    @property
    def task(self) -> str:
        return "class" if len(self.class_tags) > 1 else "reg"

    @property
    def registry_name(self) -> str:
        if self.task == "class":
            return "classifier"
        return _TAG_TO_NAME[int(self.class_tags[0])]

    def config(self, base: ScatterConfig | None = None) -> ScatterConfig:
        if base is None:
            return ScatterConfig(t0=self.t0, c0=self.c0, phis=self.phis)
        return dataclasses.replace(base, t0=self.t0, c0=self.c0, phis=self.phis)

    def n_at_scale(self, scale: float) -> int:
        if not 0.0 < scale <= 1.0:
            raise ValidationError(f"scale must be in (0, 1], got {scale}")
        return int(math.floor(scale * self.n_full + 0.5))


SUITES = {
    "classification": SuiteSpec("classification", (1, 2, 3), 90000, 32, 2, (0.0,), "ap1"),
    "peanut": SuiteSpec("peanut", (1,), 30000, 32, 2, (0.0,), "ap2"),
    "kite": SuiteSpec("kite", (2,), 30000, 32, 2, (0.0,), "ap4"),
    "star_fixed": SuiteSpec("star_fixed", (3,), 80000, 128, 4, (0.0,), "ap7",
                            fixed_impedance=2.0),
    "star_variable": SuiteSpec("star_variable", (3,), 120000, 128, 8,
                               (0.0, math.pi), "ap10"),
}


def suite_spec(name: str) -> SuiteSpec:
    try:
        return SUITES[name]
    except KeyError:
        raise ValidationError(
            f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None


def suite_dataset(name: str, scale: float = 1.0, seed: int = 0,
                  config: ScatterConfig | None = None) -> Dataset:
    """Generate the suite's dataset at the given scale (round half up)."""
    s = suite_spec(name)
    cfg = s.config(config)
    imp = "variable" if s.fixed_impedance is None else s.fixed_impedance
    return dataio.generate_dataset(s.class_tags, s.n_at_scale(scale), cfg, seed,
                                   impedance=imp)


# ------------------------------------------------------- superset layouts


def superset_config(base: ScatterConfig | None = None) -> ScatterConfig:
    """The (T0=128, C0=8, two incidences) layout every model can be fed
    from; sub-layouts are channel prefixes plus angle subsampling."""
    if base is None:
        base = ScatterConfig()
    return dataclasses.replace(base, t0=SUPERSET_T0, c0=SUPERSET_C0,
                               phis=(0.0, math.pi))


def derive_features(features: np.ndarray, t0: int, c0: int) -> np.ndarray:
    """Slice superset feature rows down to a sub-layout.

    Channels of the standard 8-channel order start with (E, H) at phi=0,
    so C0 in {2, 4} is a prefix; angles of the coarse grid sit at stride
    128/t0 of the fine grid (identical tau values), so subsampling is
    exact, not interpolated.
    """
    if c0 not in (2, 4, 8) or c0 > SUPERSET_C0:
        raise LayoutError(f"cannot derive c0={c0} from the superset")
    if t0 not in (32, 128):
        raise LayoutError(f"cannot derive t0={t0} from the superset")
    x = dataio.reshape_to_tensor(np.asarray(features, dtype=np.float64),
                                 SUPERSET_T0, SUPERSET_C0)
    stride = SUPERSET_T0 // t0
    return dataio.flatten_tensor(x[..., ::stride, :c0])


def derive_dataset(ds: Dataset, t0: int, c0: int) -> Dataset:
    """A new Dataset with features restricted to a sub-layout; targets,
    ids and impedance mode carry over unchanged."""
    if ds.t0 != SUPERSET_T0 or ds.c0 != SUPERSET_C0:
        raise LayoutError(
            f"derivation needs the (t0={SUPERSET_T0}, c0={SUPERSET_C0}) superset, "
            f"got (t0={ds.t0}, c0={ds.c0})")
    feats = derive_features(ds.features, t0, c0)
    return Dataset(feats, ds.targets.copy(), ds.task, t0, c0, ds.classes,
                   list(ds.shape_ids), fixed_impedance=ds.fixed_impedance)


def generate_superset(class_tags, n: int, seed: int,
                      config: ScatterConfig | None = None,
                      impedance="variable") -> Dataset:
    """Generate directly in the superset layout (one stored sample serves
    every model layout via derive_features)."""
    return dataio.generate_dataset(class_tags, n, superset_config(config), seed,
                                   impedance=impedance)


def superset_features(shape: BoundaryShape,
                      config: ScatterConfig | None = None) -> np.ndarray:
    """One obstacle's feature row in the superset layout."""
    cfg = superset_config(config)
    fields = {phi: dataio.surrogate_farfield(shape, cfg, phi) for phi in cfg.phis}
    layout = ChannelLayout.standard(cfg.c0, cfg.phis)
    return dataio.assemble_channels(fields, layout, cfg.t0)


def dataset_config(ds: Dataset, base: ScatterConfig | None = None) -> ScatterConfig:
    """The ScatterConfig a dataset was (or would be) generated under."""
    phis = (0.0, math.pi) if ds.c0 == 8 else (0.0,)
    if base is None:
        return ScatterConfig(t0=ds.t0, c0=ds.c0, phis=phis)
    return dataclasses.replace(base, t0=ds.t0, c0=ds.c0, phis=phis)


def regenerate_shape(ds: Dataset, i: int,
                     config: ScatterConfig | None = None) -> BoundaryShape:
    """Rebuild the exact obstacle behind dataset row i.

    Rows are pure functions of (seed, index) via spawned child seeds, so
    the dataset stores "{seed}:{index}" ids instead of shape parameters.
    """
    sid = ds.shape_ids[i]
    try:
        seed_text, idx_text = sid.split(":")
        seed, idx = int(seed_text), int(idx_text)
    except ValueError:
        raise FormatError(f"shape id {sid!r} is not '<seed>:<index>'") from None
    if ds.task == "class":
        tag = int(ds.targets[i])
    else:
        tag = int(ds.classes[0])
    cfg = dataset_config(ds, config)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
    return sample_shape(tag, rng, cfg, fixed_impedance=ds.fixed_impedance)


# --------------------------------------------------------------- registry


@dataclass
class TrainedModel:
    """A trained network plus the scalers needed to feed it raw features
    and read its outputs in original units."""

    spec: NetworkSpec
    params: Parameters
    feature_scaler: Standardizer
    target_scaler: Standardizer | None
    preset: str
    seed: int
    classes: tuple | None = None          # classifier only
    class_tag: int | None = None          # regressors only
    fixed_impedance: float | None = None  # regressor trained at fixed lambda

    @property
    def t0(self) -> int:
        return self.spec.input_t

    @property
    def c0(self) -> int:
        return self.spec.input_c

    def predict_probs(self, raw_features: np.ndarray) -> np.ndarray:
        if self.spec.task != "class":
            raise ValidationError("not a classifier")
        x = self.feature_scaler.apply(np.atleast_2d(np.asarray(raw_features)))
        return forward_eval(self.spec, self.params, x)

    def predict_labels(self, raw_features: np.ndarray) -> np.ndarray:
        probs = self.predict_probs(raw_features)
        return np.asarray(self.classes)[np.argmax(probs, axis=1)]

    def predict_params(self, raw_features: np.ndarray) -> np.ndarray:
        """Regression outputs in original (unstandardized) units."""
        if self.spec.task != "reg":
            raise ValidationError("not a regressor")
        x = self.feature_scaler.apply(np.atleast_2d(np.asarray(raw_features)))
        out = forward_eval(self.spec, self.params, x).astype(np.float64)
        if self.target_scaler is not None:
            out = self.target_scaler.invert(out)
        return out

    def meta_dict(self) -> dict:
        phis = [0.0, math.pi] if self.c0 == 8 else [0.0]
        return {
            "preset": self.preset,
            "seed": self.seed,
            "task": self.spec.task,
            "t0": self.t0,
            "c0": self.c0,
            "phis": phis,
            "classes": list(self.classes) if self.classes is not None else None,
            "class_tag": self.class_tag,
            "fixed_impedance": self.fixed_impedance,
        }

    def save(self, directory, name: str) -> dict:
        """Write <name>.model and <name>.scaler.json; returns the meta
        entry for the registry manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(directory / f"{name}.model", self.spec, self.params)
        blob = {
            "features": self.feature_scaler.to_json_dict(),
            "targets": (self.target_scaler.to_json_dict()
                        if self.target_scaler is not None else None),
            "meta": self.meta_dict(),
        }
        with open(directory / f"{name}.scaler.json", "w") as fh:
            json.dump(blob, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return self.meta_dict()

    @classmethod
    def load(cls, directory, name: str) -> "TrainedModel":
        directory = Path(directory)
        spec, params = load_model(directory / f"{name}.model")
        with open(directory / f"{name}.scaler.json") as fh:
            blob = json.load(fh)
        try:
            meta = blob["meta"]
            feature_scaler = Standardizer.from_json_dict(blob["features"])
            target_scaler = (Standardizer.from_json_dict(blob["targets"])
                             if blob["targets"] is not None else None)
            classes = tuple(meta["classes"]) if meta["classes"] is not None else None
            return cls(spec, params, feature_scaler, target_scaler,
                       preset=meta["preset"], seed=meta["seed"], classes=classes,
                       class_tag=meta["class_tag"],
                       fixed_impedance=meta["fixed_impedance"])
        except KeyError as exc:
            raise FormatError(f"{name}.scaler.json missing key {exc}") from None


def _update_manifest(directory, name: str, meta: dict) -> None:
    path = Path(directory) / MANIFEST_NAME
    data = {"format": REGISTRY_FORMAT, "models": {}}
    if path.exists():
        with open(path) as fh:
            data = json.load(fh)
        if data.get("format") != REGISTRY_FORMAT:
            raise FormatError(f"{path}: unknown manifest format {data.get('format')!r}")
        data.setdefault("models", {})
    data["models"][name] = meta
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ModelRegistry:
    """The assembled two-stage solver: one classifier plus per-class
    regressors keyed by shape class tag."""

    classifier: TrainedModel | None = None
    regressors: dict = field(default_factory=dict)

    def add(self, name: str, model: TrainedModel) -> None:
        if name == "classifier":
            self.classifier = model
        elif name in _TAG_TO_NAME.values():
            tag = {v: k for k, v in _TAG_TO_NAME.items()}[name]
            self.regressors[tag] = model
        else:
            raise ValidationError(f"unknown registry model name {name!r}")

    def save(self, directory) -> None:
        directory = Path(directory)
        if self.classifier is not None:
            meta = self.classifier.save(directory, "classifier")
            _update_manifest(directory, "classifier", meta)
        for tag, model in sorted(self.regressors.items()):
            name = _TAG_TO_NAME[int(tag)]
            meta = model.save(directory, name)
            _update_manifest(directory, name, meta)

    @classmethod
    def load(cls, directory) -> "ModelRegistry":
        directory = Path(directory)
        path = directory / MANIFEST_NAME
        with open(path) as fh:
            data = json.load(fh)
        if data.get("format") != REGISTRY_FORMAT:
            raise FormatError(f"{path}: unknown manifest format {data.get('format')!r}")
        reg = cls()
        for name in sorted(data.get("models", {})):
            reg.add(name, TrainedModel.load(directory, name))
        return reg


# -------------------------------------------------------------- inference


@dataclass(frozen=True)
class InverseSolution:
    """Output of the two-stage inversion for one obstacle."""

    class_probs: np.ndarray
    classes: tuple
    predicted_class: int
    shape: BoundaryShape
    in_sampling_ranges: bool
    diagnostics: geometry.ShapeDiagnostics
    provenance: dict


def _features_map(features) -> dict:
    if isinstance(features, np.ndarray):
        if features.ndim != 1:
            raise LayoutError("infer takes one sample; pass a 1-d feature row")
        if features.shape[0] != SUPERSET_T0 * SUPERSET_C0:
            raise LayoutError(
                "a bare array must be a superset row of length "
                f"{SUPERSET_T0 * SUPERSET_C0}; otherwise pass a {{(t0, c0): row}} map")
        return {(SUPERSET_T0, SUPERSET_C0): features}
    return {(int(k[0]), int(k[1])): np.asarray(v) for k, v in dict(features).items()}


def _layout_row(feats: dict, t0: int, c0: int, who: str) -> np.ndarray:
    key = (t0, c0)
    if key in feats:
        return feats[key]
    sup = feats.get((SUPERSET_T0, SUPERSET_C0))
    if sup is not None:
        return derive_features(sup, t0, c0)
    raise LayoutError(f"no features in layout (t0={t0}, c0={c0}) for the {who}")


def shape_in_ranges(shape: BoundaryShape) -> bool:
    """Whether every parameter falls inside the training sampling box."""

    def inside(values, bounds) -> bool:
        lo, hi = bounds
        v = np.asarray(values)
        return bool(np.all(v >= lo) and np.all(v <= hi))

    c = shape.coeffs
    if shape.class_tag == ShapeClass.PEANUT:
        ok = inside(c, geometry.PEANUT_AXIS_RANGE)
    elif shape.class_tag == ShapeClass.KITE:
        ok = (inside(c[0], geometry.KITE_ALPHA_RANGE)
              and inside(c[1], geometry.KITE_BETA_RANGE)
              and inside(c[2], geometry.KITE_GAMMA_RANGE))
    else:
        ok = (inside(c[0], geometry.STAR_BASE_RANGE)
              and inside(c[1:], geometry.STAR_HARMONIC_RANGE))
    return (ok and inside(shape.center, geometry.CENTER_RANGE)
            and inside(shape.impedance, geometry.IMPEDANCE_RANGE))


def infer(registry: ModelRegistry, features,
          config: ScatterConfig | None = None) -> InverseSolution:
    """Classify, route to that class's regressor, assemble the shape.

    ``features``: either one superset-layout row or a mapping
    {(t0, c0): row} covering the layouts the routed models need.  The
    regressed parameters are reported raw (no clamping into the sampling
    ranges); range and admissibility diagnostics ride along instead.
    """
    if registry.classifier is None:
        raise ValidationError("registry has no classifier")
    feats = _features_map(features)
    clf = registry.classifier
    x = _layout_row(feats, clf.t0, clf.c0, "classifier")
    probs = clf.predict_probs(x)[0]
    tag = int(clf.classes[int(np.argmax(probs))])

    reg = registry.regressors.get(tag)
    if reg is None:
        raise LayoutError(f"no regressor for predicted class {ShapeClass(tag).name}")
    xr = _layout_row(feats, reg.t0, reg.c0, f"{_TAG_TO_NAME[tag]} regressor")
    values = reg.predict_params(xr)[0]
    shape = targets_to_shape(tag, values, fixed_impedance=reg.fixed_impedance,
                             check_ranges=False)
    diag = validate_shape(shape, config or ScatterConfig())
    return InverseSolution(
        class_probs=probs,
        classes=clf.classes,
        predicted_class=tag,
        shape=shape,
        in_sampling_ranges=shape_in_ranges(shape),
        diagnostics=diag,
        provenance={
            "classifier": {"preset": clf.preset, "seed": clf.seed},
            "regressor": {"name": _TAG_TO_NAME[tag], "preset": reg.preset,
                          "seed": reg.seed},
        },
    )


# ----------------------------------------------------------------- curves


@dataclass
class CurveReconstruction:
    tau: np.ndarray
    pred_points: np.ndarray
    true_points: np.ndarray | None
    degenerate: bool
    discrepancy: float | None


def reconstruct_curve(solution, t: int = 256,
                      true_shape: BoundaryShape | None = None) -> CurveReconstruction:
    """Evaluate the predicted boundary on a tau grid (optionally next to
    the truth).  A degenerate radial profile is flagged but still emitted
    so failures stay inspectable."""
    shape = solution.shape if isinstance(solution, InverseSolution) else solution
    tau = boundary_grid(t)
    degenerate = False
    try:
        pred, _ = eval_curve(shape, tau)
    except DegenerateShapeError:
        degenerate = True
        pred, _ = eval_curve(shape, tau, allow_degenerate=True)
    true_points = None
    disc = None
    if true_shape is not None:
        true_points, _ = eval_curve(true_shape, tau)
        diff = pred - true_points
        disc = float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
    return CurveReconstruction(tau, pred, true_points, degenerate, disc)


def write_curve_csv(path, rec: CurveReconstruction) -> None:
    if rec.true_points is None:
        raise ValidationError("curve file needs a truth curve alongside the prediction")
    lines = ["tau,x_true,y_true,x_pred,y_pred"]
    for i in range(rec.tau.shape[0]):
        lines.append(",".join(format_double(v) for v in (
            rec.tau[i], rec.true_points[i, 0], rec.true_points[i, 1],
            rec.pred_points[i, 0], rec.pred_points[i, 1])))
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve_csv(path):
    """Returns (tau, true_points, pred_points)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "tau,x_true,y_true,x_pred,y_pred":
        raise FormatError(f"{path}: not a curve file")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise FormatError(f"{path}: malformed curve rows")
    return rows[:, 0], rows[:, 1:3], rows[:, 3:5]


def aligned_discrepancy(pred_shape: BoundaryShape, true_shape: BoundaryShape,
                        t: int = 128) -> float:
    """Matched-tau RMS minimized over cyclic shifts of the parameter
    origin.  Cross-class comparisons have no canonical origin pairing, so
    the shift giving the best overlay is reported."""
    tau = boundary_grid(t)
    pred, _ = eval_curve(pred_shape, tau, allow_degenerate=True)
    true, _ = eval_curve(true_shape, tau)
    best = math.inf
    for s in range(t):
        diff = pred - np.roll(true, s, axis=0)
        best = min(best, float(np.mean(np.sum(diff * diff, axis=1))))
    return math.sqrt(best)


# ------------------------------------------------- misclassification view


@dataclass
class MisclassifiedSample:
    index: int
    true_class: int
    predicted_class: int
    probs: tuple
    discrepancy: float | None
    degenerate: bool

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "true_class": self.true_class,
            "predicted_class": self.predicted_class,
            "probs": list(self.probs),
            "discrepancy": self.discrepancy,
            "degenerate": self.degenerate,
        }


@dataclass
class MisclassificationReport:
    total: int
    entries: list
    counts: np.ndarray
    classes: tuple

    @property
    def n_misclassified(self) -> int:
        return len(self.entries)

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "n_misclassified": self.n_misclassified,
            "counts": self.counts.tolist(),
            "classes": list(self.classes),
            "entries": [e.to_json_dict() for e in self.entries],
        }


def misclassification_report(registry: ModelRegistry, ds: Dataset,
                             config: ScatterConfig | None = None,
                             curve_points: int = 128) -> MisclassificationReport:
    """Route every misclassified test obstacle through the (wrong-class)
    regressor it lands on and measure the resulting boundary error.

    The truth obstacle is regenerated from the dataset's shape ids; the
    routed regressor's features come from the row itself when the layout
    matches, otherwise from the surrogate in the regressor's layout.
    """
    if ds.task != "class":
        raise ValidationError("misclassification analysis needs a classification dataset")
    if registry.classifier is None:
        raise ValidationError("registry has no classifier")
    clf = registry.classifier
    if (ds.t0, ds.c0) != (clf.t0, clf.c0):
        raise LayoutError(
            f"dataset layout (t0={ds.t0}, c0={ds.c0}) does not match the "
            f"classifier (t0={clf.t0}, c0={clf.c0})")
    probs = clf.predict_probs(ds.features)
    pred = np.asarray(clf.classes)[np.argmax(probs, axis=1)]
    true = np.asarray(ds.targets)
    rep = training.classification_metrics(pred, true, ds.classes)

    entries = []
    for i in np.nonzero(pred != true)[0]:
        pred_tag = int(pred[i])
        true_shape = regenerate_shape(ds, int(i), config)
        reg = registry.regressors.get(pred_tag)
        disc = None
        degenerate = False
        if reg is not None:
            if (reg.t0, reg.c0) == (ds.t0, ds.c0):
                row = ds.features[i]
            else:
                row = derive_features(superset_features(true_shape, config),
                                      reg.t0, reg.c0)
            values = reg.predict_params(row)[0]
            pred_shape = targets_to_shape(pred_tag, values,
                                          fixed_impedance=reg.fixed_impedance,
                                          check_ranges=False)
            try:
                eval_curve(pred_shape, boundary_grid(curve_points))
            except DegenerateShapeError:
                degenerate = True
            disc = aligned_discrepancy(pred_shape, true_shape, curve_points)
        entries.append(MisclassifiedSample(
            index=int(i), true_class=int(true[i]), predicted_class=pred_tag,
            probs=tuple(float(p) for p in probs[i]),
            discrepancy=disc, degenerate=degenerate))
    return MisclassificationReport(total=len(ds), entries=entries,
                                   counts=rep.counts, classes=ds.classes)


# ------------------------------------------------------------ experiments


@dataclass
class ExperimentResult:
    suite: str
    n: int
    preset: str
    seed: int
    scale: float
    model: TrainedModel
    history: TrainHistory
    clean: object
    noise: list
    out_dir: Path | None
    files: dict


def _check_dataset_matches(ds: Dataset, s: SuiteSpec, spec: NetworkSpec) -> None:
    if (ds.t0, ds.c0) != (s.t0, s.c0):
        raise ValidationError(
            f"dataset layout (t0={ds.t0}, c0={ds.c0}) does not match suite "
            f"{s.name!r} (t0={s.t0}, c0={s.c0})")
    if ds.task != s.task:
        raise ValidationError(f"dataset task {ds.task!r} != suite task {s.task!r}")
    if s.task == "class":
        if ds.classes != tuple(int(t) for t in s.class_tags):
            raise ValidationError(
                f"dataset classes {ds.classes} do not match suite {s.name!r} "
                f"classes {tuple(int(t) for t in s.class_tags)}")
    else:
        if ds.classes != (int(s.class_tags[0]),):
            raise ValidationError(
                f"dataset holds class {ds.classes} but suite {s.name!r} "
                f"regresses class {int(s.class_tags[0])}")
        if ds.target_dim != spec.output_dim:
            raise ValidationError(
                f"dataset has {ds.target_dim} targets but preset {s.preset} "
                f"outputs {spec.output_dim} (fixed vs variable impedance?)")


def _hist_csv(path, errors: np.ndarray, bins: int = 40) -> None:
    counts, edges = np.histogram(errors, bins=bins)
    lines = ["bin_left,bin_right,count"]
    for i, c in enumerate(counts):
        lines.append(f"{format_double(edges[i])},{format_double(edges[i + 1])},{int(c)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _regression_curves(model: TrainedModel, ds: Dataset, indices: np.ndarray,
                       out_dir: Path, prefix: str, seed: int,
                       curve_points: int, config: ScatterConfig | None) -> dict:
    """Write max/min/random truth-vs-prediction curve files over the given
    rows; returns {kind: path}."""
    preds = model.predict_params(ds.features[indices])
    truth = np.asarray(ds.targets)[indices]
    err = np.sqrt(np.sum((preds - truth) ** 2, axis=1))
    picks = {
        "max": int(np.argmax(err)),
        "min": int(np.argmin(err)),
        "random": int(np.random.default_rng(seed).integers(len(indices))),
    }
    tag = int(ds.classes[0])
    files = {}
    for kind, j in picks.items():
        row_index = int(indices[j])
        true_shape = regenerate_shape(ds, row_index, config)
        pred_shape = targets_to_shape(tag, preds[j],
                                      fixed_impedance=ds.fixed_impedance,
                                      check_ranges=False)
        rec = reconstruct_curve(pred_shape, curve_points, true_shape=true_shape)
        path = out_dir / f"{prefix}reconstruction_{kind}.csv"
        write_curve_csv(path, rec)
        files[f"reconstruction_{kind}"] = path
    return files


def run_experiment(suite: str, out_dir=None, scale: float = 1.0, seed: int = 0,
                   data=None, train_overrides: dict | None = None,
                   noise_levels=DEFAULT_NOISE_LEVELS, noise_trials: int = 5,
                   curve_points: int = 256, save_dataset: bool = False,
                   config: ScatterConfig | None = None,
                   verbose: bool = False) -> ExperimentResult:
    """Run one suite end to end: data, preset training, clean evaluation,
    noise sweep, and (for regression) error histogram plus max/min/random
    reconstruction curves.  ``data`` may be a Dataset or a dataset path;
    omitted, the suite's dataset is generated at ``scale``.
    ``train_overrides`` update the preset TrainConfig fields."""
    s = suite_spec(suite)
    spec = preset_spec(s.preset)
    if data is None:
        ds = suite_dataset(suite, scale, seed, config)
    elif isinstance(data, Dataset):
        ds = data
    else:
        ds = dataio.read_dataset(data)
    _check_dataset_matches(ds, s, spec)

    n = len(ds)
    split = dataio.split_dataset(n, seed)
    feature_scaler = Standardizer.fit(ds.features[split.train])
    x = feature_scaler.apply(ds.features)
    if s.task == "class":
        y = ds.targets
        target_scaler = None
        classes = ds.classes
    else:
        target_scaler = Standardizer.fit(np.asarray(ds.targets)[split.train])
        y = target_scaler.apply(np.asarray(ds.targets))
        classes = None

    cfg = preset_train_config(s.preset, seed=seed, **(train_overrides or {}))
    params, history = train(spec, x, y, split, cfg, classes=classes, verbose=verbose)
    model = TrainedModel(
        spec, params, feature_scaler, target_scaler, preset=s.preset, seed=seed,
        classes=ds.classes if s.task == "class" else None,
        class_tag=None if s.task == "class" else int(ds.classes[0]),
        fixed_impedance=ds.fixed_impedance)

    x_test = x[split.test]
    levels = [0.0] + [float(v) for v in noise_levels]
    if s.task == "class":
        labels_test = np.asarray(ds.targets)[split.test]
        clean = evaluate_classification(spec, params, x_test, labels_test, ds.classes)
        noise = noise_sweep(spec, params, x_test, labels_test, levels, seed=seed,
                            trials=noise_trials, classes=ds.classes)
    else:
        targets_test = np.asarray(ds.targets)[split.test]
        clean = evaluate_regression(spec, params, x_test, targets_test, target_scaler)
        noise = noise_sweep(spec, params, x_test, targets_test, levels, seed=seed,
                            trials=noise_trials, target_scaler=target_scaler)

    files = {}
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        prefix = f"{suite}_"

        run_config = {
            "suite": suite, "scale": scale, "seed": seed, "preset": s.preset,
            "n": n, "train": dataclasses.asdict(cfg),
            "noise_levels": levels, "noise_trials": noise_trials,
            "data": None if data is None or isinstance(data, Dataset) else str(data),
        }
        files["config"] = out_path / f"{prefix}config.json"
        with open(files["config"], "w") as fh:
            json.dump(run_config, fh, indent=2, sort_keys=True)
            fh.write("\n")

        files["history"] = out_path / f"{prefix}history.csv"
        history.to_csv(files["history"])

        report = {
            "suite": suite, "n": n, "preset": s.preset, "seed": seed,
            "best_epoch": history.best_epoch, "stopped_epoch": history.stopped_epoch,
            "clean": clean.to_json_dict(), "noise": noise,
        }
        files["report"] = out_path / f"{prefix}report.json"
        with open(files["report"], "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")

        name = s.registry_name
        meta = model.save(out_path, name)
        _update_manifest(out_path, name, meta)
        files["model"] = out_path / f"{name}.model"
        files["scaler"] = out_path / f"{name}.scaler.json"

        if save_dataset:
            files["dataset"] = out_path / f"{prefix}dataset.csc"
            dataio.write_dataset(files["dataset"], ds, binary=True)

        if s.task == "reg":
            preds = model.predict_params(ds.features[split.test])
            err = np.sqrt(np.sum((preds - np.asarray(ds.targets)[split.test]) ** 2,
                                 axis=1))
            files["errors_hist"] = out_path / f"{prefix}errors_hist.csv"
            _hist_csv(files["errors_hist"], err)
            files.update(_regression_curves(model, ds, split.test, out_path, prefix,
                                            seed, curve_points, config))

    return ExperimentResult(suite=suite, n=n, preset=s.preset, seed=seed,
                            scale=scale, model=model, history=history, clean=clean,
                            noise=noise, out_dir=out_path, files=files)


# ------------------------------------------------ standalone model tools


def load_trained(directory, name: str) -> TrainedModel:
    return TrainedModel.load(directory, name)


def _check_model_dataset(model: TrainedModel, ds: Dataset) -> None:
    if (ds.t0, ds.c0) != (model.t0, model.c0):
        raise ValidationError(
            f"dataset layout (t0={ds.t0}, c0={ds.c0}) does not match the model "
            f"(t0={model.t0}, c0={model.c0})")
    if ds.task != model.spec.task:
        raise ValidationError(f"dataset task {ds.task!r} != model task {model.spec.task!r}")
    if ds.task == "class" and ds.classes != model.classes:
        raise ValidationError(f"dataset classes {ds.classes} != model classes {model.classes}")
    if ds.task == "reg" and ds.target_dim != model.spec.output_dim:
        raise ValidationError(
            f"dataset has {ds.target_dim} targets but the model outputs "
            f"{model.spec.output_dim}")


def evaluate_model(model: TrainedModel, ds: Dataset):
    """Clean metrics of a trained model over a whole dataset file."""
    _check_model_dataset(model, ds)
    x = model.feature_scaler.apply(ds.features)
    if ds.task == "class":
        return evaluate_classification(model.spec, model.params, x, ds.targets,
                                       model.classes)
    return evaluate_regression(model.spec, model.params, x, ds.targets,
                               model.target_scaler)


def sweep_model(model: TrainedModel, ds: Dataset, levels=DEFAULT_NOISE_LEVELS,
                trials: int = 5, seed: int = 0) -> list:
    """Noise sweep of a trained model over a whole dataset file."""
    _check_model_dataset(model, ds)
    x = model.feature_scaler.apply(ds.features)
    classes = model.classes if ds.task == "class" else None
    scaler = model.target_scaler if ds.task == "reg" else None
    return noise_sweep(model.spec, model.params, x, ds.targets,
                       [float(v) for v in levels], seed=seed, trials=trials,
                       classes=classes, target_scaler=scaler)


def reconstruct_samples(model: TrainedModel, ds: Dataset, out_dir, seed: int = 0,
                        curve_points: int = 256,
                        config: ScatterConfig | None = None) -> dict:
    """Emit max/min/random truth-vs-prediction curve files for a
    regression dataset under a trained model."""
    _check_model_dataset(model, ds)
    if ds.task != "reg":
        raise ValidationError("curve reconstruction needs a regression dataset")
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    return _regression_curves(model, ds, np.arange(len(ds)), out_path, "",
                              seed, curve_points, config)
