"""Weighted linear edge scorers: logistic regression and a squared-hinge SVM.

Both minimise  0.5 |w|^2 + C * sum_e c_{y_e} * loss(y_e, w.x_e + b)
by deterministic full-batch gradient descent with Armijo backtracking. The
bias is not regularised. Scores are sigmoid(w.x + b) for both losses so the
pruning temperature acts on a common (0, 1) scale.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .features import (
    FAMILY_NAMES,
    FEATURE_FAMILIES,
    FEATURE_NAMES,
    FEATURE_VERSION,
    N_FEATURES,
    Standardizer,
    active_mask,
    fit_standardizer,
)

__all__ = [
    "LOSS_KINDS",
    "TrainSet",
    "TrainConfig",
    "LinearModel",
    "ModelFormatError",
    "objective",
    "gradient",
    "train_logistic",
    "train_svm",
    "train",
    "score_edges",
    "feature_importance",
    "save_model",
    "load_model",
    "dumps_model",
    "loads_model",
    "write_training_log",
]

LOSS_KINDS = ("logistic", "squared_hinge")
MODEL_FORMAT = "linear-model-v1"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrainSet:
    """Pooled candidate-edge rows; ``groups`` holds the instance id per row."""

    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    mode: str = "union"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y).astype(np.int8)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise ValueError(f"X must be (m, {N_FEATURES})")
        if len(y) != len(X) or len(self.groups) != len(X):
            raise ValueError("X, y and groups must have the same length")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "groups", np.asarray(self.groups))

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def concat(cls, parts: list["TrainSet"]) -> "TrainSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        modes = {p.mode for p in parts}
        if len(modes) != 1:
            raise ValueError("cannot mix feature modes")
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.groups for p in parts]),
            parts[0].mode,
        )


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    max_iter: int = 2000
    tol: float = 1e-9
    seed: int = 0
    armijo: float = 1e-4


@dataclass(eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    loss_kind: str
    standardizer: Standardizer
    mode: str = "union"
    feature_version: str = FEATURE_VERSION
    calibrated_eta: float | None = None
    train_meta: dict = field(default_factory=dict)
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (N_FEATURES,):
            raise ValueError(f"weights must have {N_FEATURES} entries")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.calibrated_eta is not None and not 0.0 < self.calibrated_eta <= 1.0:
            raise ValueError("calibrated_eta must lie in (0, 1]")

    @classmethod
    def zero(cls, loss_kind: str = "logistic") -> "LinearModel":
        return cls(np.zeros(N_FEATURES), 0.0, loss_kind, Standardizer.identity())

    def linear(self, X: np.ndarray) -> np.ndarray:
        return self.standardizer.apply(X) @ self.weights + self.bias


# --------------------------------------------------------------------------
# objective and gradient on standardised rows


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _row_loss(kind: str, margin: np.ndarray) -> np.ndarray:
    if kind == "logistic":
        return np.logaddexp(0.0, -margin)
    return np.maximum(0.0, 1.0 - margin) ** 2


def _row_dloss(kind: str, margin: np.ndarray) -> np.ndarray:
    """Derivative of the per-row loss with respect to the margin."""
    if kind == "logistic":
        return -_sigmoid(-margin)
    return -2.0 * np.maximum(0.0, 1.0 - margin)


def class_weights(y: np.ndarray) -> tuple[float, float]:
    """Balanced inverse-frequency weights N / (2 N_c)."""
    m = len(y)
    pos = int(np.sum(y == 1))
    neg = m - pos
    if pos == 0 or neg == 0:
        raise ValueError("training needs both classes")
    return m / (2.0 * neg), m / (2.0 * pos)


def objective(kind: str, w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray,
              C: float, cw: tuple[float, float]) -> float:
    ys = 2.0 * y - 1.0
    margin = ys * (Z @ w + b)
    rw = np.where(y == 1, cw[1], cw[0])
    return 0.5 * float(w @ w) + C * float(np.sum(rw * _row_loss(kind, margin)))


def gradient(kind: str, w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray,
             C: float, cw: tuple[float, float]) -> tuple[np.ndarray, float]:
    ys = 2.0 * y - 1.0
    margin = ys * (Z @ w + b)
    rw = np.where(y == 1, cw[1], cw[0])
    r = C * rw * _row_dloss(kind, margin) * ys
    return w + Z.T @ r, float(np.sum(r))


def _fit(kind: str, ts: TrainSet, cfg: TrainConfig) -> LinearModel:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if len(ts) == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(ts.X)):
        raise ValueError("training features contain NaN or infinity")
    cw = class_weights(ts.y)
    mask = active_mask(ts.mode)
    std = fit_standardizer(ts.X)
    Z = std.apply(ts.X)
    Z[:, ~mask] = 0.0
    y = ts.y.astype(np.float64)

    w = np.zeros(N_FEATURES)
    b = 0.0
    f = objective(kind, w, b, Z, y, cfg.C, cw)
    gw, gb = gradient(kind, w, b, Z, y, cfg.C, cw)
    # a safe first step from the Lipschitz bound of the data term
    lip = 1.0 + cfg.C * max(cw) * (np.sum(Z * Z) + len(Z)) * (0.25 if kind == "logistic" else 2.0)
    step = 1.0 / lip
    history = [(0, f, math.sqrt(float(gw @ gw) + gb * gb))]
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g2 = float(gw @ gw) + gb * gb
        if g2 == 0.0:
            break
        while True:
            nw = w - step * gw
            nb = b - step * gb
            nf = objective(kind, nw, nb, Z, y, cfg.C, cw)
            if nf <= f - cfg.armijo * step * g2 or step < 1e-300:
                break
            step *= 0.5
        if nf > f:
            break
        rel = abs(f - nf) / max(abs(f), 1e-300)
        w, b, f = nw, nb, nf
        gw, gb = gradient(kind, w, b, Z, y, cfg.C, cw)
        history.append((it, f, math.sqrt(float(gw @ gw) + gb * gb)))
        step *= 2.0
        if rel < cfg.tol:
            break
    meta = {
        "C": float(cfg.C),
        "class_weight_0": float(cw[0]),
        "class_weight_1": float(cw[1]),
        "seed": int(cfg.seed),
        "iterations": int(history[-1][0]),
        "objective": float(f),
        "grad_norm": float(history[-1][2]),
        "rows": int(len(ts)),
    }
    return LinearModel(w, float(b), kind, std, mode=ts.mode, train_meta=meta, history=history)


def train_logistic(ts: TrainSet, cfg: TrainConfig | None = None) -> LinearModel:
    return _fit("logistic", ts, cfg or TrainConfig())


def train_svm(ts: TrainSet, cfg: TrainConfig | None = None) -> LinearModel:
    return _fit("squared_hinge", ts, cfg or TrainConfig())


def train(kind: str, ts: TrainSet, cfg: TrainConfig | None = None) -> LinearModel:
    aliases = {"logistic": "logistic", "lr": "logistic", "svm": "squared_hinge", "squared_hinge": "squared_hinge"}
    if kind not in aliases:
        raise ValueError(f"unknown model kind {kind!r}")
    return _fit(aliases[kind], ts, cfg or TrainConfig())


def score_edges(m: LinearModel, X: np.ndarray, feature_version: str = FEATURE_VERSION) -> np.ndarray:
    """sigmoid(w . standardize(x) + b) per row."""
    if m.feature_version != feature_version:
        raise ModelFormatError(
            f"model expects features {m.feature_version!r}, extractor provides {feature_version!r}"
        )
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"rows must be (m, {N_FEATURES})")
    return _sigmoid(m.linear(X))


def feature_importance(m: LinearModel) -> dict:
    """|w| normalised to sum 1, plus shares summed per feature family."""
    a = np.abs(m.weights)
    total = a.sum()
    share = a / total if total > 0 else np.zeros_like(a)
    fam = np.zeros(len(FAMILY_NAMES))
    for k, f in enumerate(FEATURE_FAMILIES):
        fam[f] += share[k]
    return {
        "features": dict(zip(FEATURE_NAMES, share.tolist())),
        "families": dict(zip(FAMILY_NAMES, fam.tolist())),
    }


# --------------------------------------------------------------------------
# persistence: line-based "key = value" text, floats written with repr


_REQUIRED = (
    "format",
    "feature_version",
    "feature_names",
    "loss_kind",
    "mode",
    "bias",
    "weights",
    "std_mean",
    "std_scale",
    "std_mask",
    "calibrated_eta",
    "C",
    "class_weight_0",
    "class_weight_1",
    "seed",
    "iterations",
    "objective",
    "grad_norm",
    "rows",
)


def _floats(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def dumps_model(m: LinearModel) -> str:
    meta = m.train_meta
    lines = [
        "# linear edge-scoring model",
        f"format = {MODEL_FORMAT}",
        f"feature_version = {m.feature_version}",
        f"feature_names = {','.join(FEATURE_NAMES)}",
        f"loss_kind = {m.loss_kind}",
        f"mode = {m.mode}",
        f"bias = {float(m.bias)!r}",
        f"weights = {_floats(m.weights)}",
        f"std_mean = {_floats(m.standardizer.mean)}",
        f"std_scale = {_floats(m.standardizer.scale)}",
        f"std_mask = {','.join(str(int(x)) for x in m.standardizer.mask)}",
        f"calibrated_eta = {'none' if m.calibrated_eta is None else repr(float(m.calibrated_eta))}",
        f"C = {float(meta.get('C', 1.0))!r}",
        f"class_weight_0 = {float(meta.get('class_weight_0', 1.0))!r}",
        f"class_weight_1 = {float(meta.get('class_weight_1', 1.0))!r}",
        f"seed = {int(meta.get('seed', 0))}",
        f"iterations = {int(meta.get('iterations', 0))}",
        f"objective = {float(meta.get('objective', 0.0))!r}",
        f"grad_norm = {float(meta.get('grad_norm', 0.0))!r}",
        f"rows = {int(meta.get('rows', 0))}",
    ]
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LinearModel:
    fields: dict[str, str] = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise ModelFormatError(f"malformed line {ln!r}")
        key, value = (s.strip() for s in ln.split("=", 1))
        fields[key] = value
    for key in _REQUIRED:
        if key not in fields:
            raise ModelFormatError(f"model file is missing field '{key}'")
    if fields["format"] != MODEL_FORMAT:
        raise ModelFormatError(f"unknown model format {fields['format']!r}")
    if fields["feature_version"] != FEATURE_VERSION:
        raise ModelFormatError(
            f"model uses features {fields['feature_version']!r}, this extractor is {FEATURE_VERSION!r}"
        )
    if tuple(fields["feature_names"].split(",")) != FEATURE_NAMES:
        raise ModelFormatError("feature names do not match this extractor")

    def vec(key):
        try:
            v = np.array([float(x) for x in fields[key].split(",")])
        except ValueError:
            raise ModelFormatError(f"field '{key}' is not a list of numbers") from None
        if v.shape != (N_FEATURES,):
            raise ModelFormatError(f"field '{key}' must have {N_FEATURES} entries")
        return v

    try:
        eta = None if fields["calibrated_eta"] == "none" else float(fields["calibrated_eta"])
        meta = {
            "C": float(fields["C"]),
            "class_weight_0": float(fields["class_weight_0"]),
            "class_weight_1": float(fields["class_weight_1"]),
            "seed": int(fields["seed"]),
            "iterations": int(fields["iterations"]),
            "objective": float(fields["objective"]),
            "grad_norm": float(fields["grad_norm"]),
            "rows": int(fields["rows"]),
        }
        bias = float(fields["bias"])
    except ValueError as exc:
        raise ModelFormatError(f"bad numeric field: {exc}") from None
    std = Standardizer(vec("std_mean"), vec("std_scale"), vec("std_mask").astype(bool))
    return LinearModel(vec("weights"), bias, fields["loss_kind"], std, mode=fields["mode"],
                       calibrated_eta=eta, train_meta=meta)


def save_model(m: LinearModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(m))


def load_model(path) -> LinearModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


def write_training_log(history) -> str:
    buf = io.StringIO()
    buf.write("iteration,objective,grad_norm\n")
    for it, f, g in history:
        buf.write(f"{it},{f!r},{g!r}\n")
    return buf.getvalue()
