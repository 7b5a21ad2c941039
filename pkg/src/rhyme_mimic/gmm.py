"""Gaussian-mixture pose classifier: EM training, classification, evaluation.

One mixture per pose class, fit on that class's samples only; classification
is argmax over log prior + mixture log-density.  All density sums go through
log-sum-exp; 16-dimensional Gaussians underflow naive arithmetic long before
the poses get interesting.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .features import DEFAULT_REFERENCE_INDICES, FEATURE_DIM, NormalizedPose

MODEL_FORMAT_VERSION = 1

# Slack for the EM monotonicity guard; anything past this is a real regression.
MONOTONE_SLACK = 1e-8

REJECTED_COLUMN = "__rejected__"

_LOG_2PI = math.log(2.0 * math.pi)


class GmmError(Exception):
    """Base for classifier failures."""


class InsufficientSamples(GmmError):
    pass


class SingularCovariance(GmmError):
    pass


class DimensionMismatch(GmmError):
    pass


class EmptyDataset(GmmError):
    pass


class VersionMismatch(GmmError):
    pass


class CorruptModel(GmmError):
    pass


# ---------------------------------------------------------------------------
# data containers


@dataclass
class LabeledDataset:
    """(label, feature-vector) records; features share one dimension."""

    records: list[tuple[str, np.ndarray]]

    def __post_init__(self) -> None:
        cleaned = []
        dim = None
        for label, vec in self.records:
            arr = np.asarray(vec, dtype=np.float64).ravel()
            if dim is None:
                dim = arr.shape[0]
            elif arr.shape[0] != dim:
                raise ValueError(f"mixed feature dimensions: {arr.shape[0]} vs {dim}")
            cleaned.append((str(label), arr))
        self.records = cleaned

    def __len__(self) -> int:
        return len(self.records)

    @property
    def feature_dim(self) -> int:
        return self.records[0][1].shape[0] if self.records else FEATURE_DIM

    @property
    def labels(self) -> list[str]:
        return sorted({label for label, _ in self.records})

    def by_class(self) -> dict[str, np.ndarray]:
        groups: dict[str, list[np.ndarray]] = {}
        for label, vec in self.records:
            groups.setdefault(label, []).append(vec)
        return {label: np.vstack(vecs) for label, vecs in groups.items()}


@dataclass(frozen=True)
class TrainingConfig:
    components_per_class: int = 1
    covariance_kind: str = "diagonal"  # or "full"
    max_iterations: int = 200
    log_likelihood_tolerance: float = 1e-6
    variance_floor: float = 1e-6
    ridge_lambda: float = 1e-4
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.components_per_class < 1:
            raise ValueError("components_per_class must be >= 1")
        if self.covariance_kind not in ("diagonal", "full"):
            raise ValueError(f"unknown covariance_kind {self.covariance_kind!r}")
        for name in ("max_iterations", "log_likelihood_tolerance", "variance_floor", "ridge_lambda"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray  # (D,)
    covariance: np.ndarray  # (D,) variances, or (D, D) full

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.covariance = np.asarray(self.covariance, dtype=np.float64)

    @property
    def is_diagonal(self) -> bool:
        return self.covariance.ndim == 1


@dataclass
class ClassModel:
    label: str
    components: list[GaussianComponent]

    @property
    def feature_dim(self) -> int:
        return self.components[0].mean.shape[0]

    def log_density(self, pose) -> float:
        return log_density(self, pose)


@dataclass
class GmmClassifier:
    classes: list[ClassModel]
    priors: np.ndarray
    rejection_log_density: float | None = None
    feature_dim: int = FEATURE_DIM
    reference_indices: tuple[int, int, int, int] = DEFAULT_REFERENCE_INDICES

    def __post_init__(self) -> None:
        self.priors = np.asarray(self.priors, dtype=np.float64).ravel()
        self.reference_indices = tuple(int(i) for i in self.reference_indices)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.classes]

    def validate(self) -> None:
        """Check the invariants producers (train/load) must establish."""
        if len(self.classes) != self.priors.shape[0]:
            raise ValueError("one prior per class required")
        if abs(float(self.priors.sum()) - 1.0) > 1e-9:
            raise ValueError(f"priors sum to {self.priors.sum()}, not 1")
        for model in self.classes:
            if model.feature_dim != self.feature_dim:
                raise ValueError(f"class {model.label} has dim {model.feature_dim}")
            weight_sum = sum(c.weight for c in model.components)
            if abs(weight_sum - 1.0) > 1e-9:
                raise ValueError(f"class {model.label} component weights sum to {weight_sum}")

    def classify(self, pose):
        return classify(self, pose)


class Classification(NamedTuple):
    label: str
    score: float  # winning unnormalized log-posterior


@dataclass(frozen=True)
class Rejected:
    """No class's density reached the rejection threshold for this pose."""

    label: str  # what the winner would have been
    log_density: float


# ---------------------------------------------------------------------------
# density evaluation


def _pose_vector(pose, expected_dim: int) -> np.ndarray:
    if isinstance(pose, NormalizedPose):
        vec = pose.features
    else:
        vec = np.asarray(pose, dtype=np.float64).ravel()
    if vec.shape[0] != expected_dim:
        raise DimensionMismatch(f"pose has dim {vec.shape[0]}, model expects {expected_dim}")
    return vec


def _stack_mixture(components: Sequence[GaussianComponent]):
    weights = np.array([c.weight for c in components], dtype=np.float64)
    means = np.vstack([c.mean for c in components])
    if components[0].is_diagonal:
        covs = np.vstack([c.covariance for c in components])
        kind = "diagonal"
    else:
        covs = np.stack([c.covariance for c in components])
        kind = "full"
    return weights, means, covs, kind


def _component_log_densities(x: np.ndarray, means: np.ndarray, covs: np.ndarray, kind: str):
    """(N, K) matrix of per-component Gaussian log-densities."""
    if kind == "diagonal":
        return kernels.component_log_densities_diag(x, means, covs)
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    for j in range(k):
        try:
            chol = np.linalg.cholesky(covs[j])
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance(f"component {j} covariance not positive definite") from exc
        diff = x - means[j]
        solved = np.linalg.solve(chol, diff.T)
        quad = np.sum(solved * solved, axis=0)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        out[:, j] = -0.5 * (d * _LOG_2PI + logdet + quad)
    return out


def _mixture_log_density(x: np.ndarray, weights, means, covs, kind) -> np.ndarray:
    logdens = _component_log_densities(x, means, covs, kind)
    log_w = np.log(np.maximum(weights, 1e-300))
    return kernels.logsumexp_rows(logdens + log_w[None, :])


def log_density(model: ClassModel, pose) -> float:
    """log sum_k w_k N(pose; mu_k, cov_k), log-sum-exp stabilized."""
    vec = _pose_vector(pose, model.feature_dim)
    weights, means, covs, kind = _stack_mixture(model.components)
    return float(_mixture_log_density(vec[None, :], weights, means, covs, kind)[0])


def classify(classifier: GmmClassifier, pose) -> Classification | Rejected:
    """Argmax of log prior + class log-density; ties go to the lowest class index."""
    vec = _pose_vector(pose, classifier.feature_dim)
    densities = np.empty(len(classifier.classes), dtype=np.float64)
    for i, model in enumerate(classifier.classes):
        weights, means, covs, kind = _stack_mixture(model.components)
        densities[i] = _mixture_log_density(vec[None, :], weights, means, covs, kind)[0]
    scores = densities + np.log(np.maximum(classifier.priors, 1e-300))
    best = int(np.argmax(scores))  # argmax returns the first maximum: lowest index wins ties
    label = classifier.classes[best].label
    if (
        classifier.rejection_log_density is not None
        and densities[best] < classifier.rejection_log_density
    ):
        return Rejected(label=label, log_density=float(densities[best]))
    return Classification(label=label, score=float(scores[best]))


# ---------------------------------------------------------------------------
# EM fitting


@dataclass
class EmFit:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D) or (K, D, D)
    kind: str
    log_likelihoods: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iterations(self) -> int:
        return len(self.log_likelihoods)


def _kmeans_pp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _estep(x, weights, means, covs, kind):
    logdens = _component_log_densities(x, means, covs, kind)
    weighted = logdens + np.log(np.maximum(weights, 1e-300))[None, :]
    per_sample = kernels.logsumexp_rows(weighted)
    resp = np.exp(weighted - per_sample[:, None])
    return resp, float(per_sample.sum())


def _mstep(x, resp, kind, config: TrainingConfig):
    n, d = x.shape
    if kind == "diagonal":
        nk, means, variances = kernels.weighted_moments_diag(x, resp)
        covs = np.maximum(variances, config.variance_floor)
    else:
        nk, means, _ = kernels.weighted_moments_diag(x, resp)
        k = resp.shape[1]
        covs = np.empty((k, d, d), dtype=np.float64)
        eye = np.eye(d)
        for j in range(k):
            diff = x - means[j]
            weighted = resp[:, j, None] * diff
            sigma = (weighted.T @ diff) / max(float(nk[j]), 1e-300)
            covs[j] = 0.5 * (sigma + sigma.T) + config.ridge_lambda * eye
    weights = nk / n
    if not np.all(np.isfinite(covs)):
        raise SingularCovariance("covariance update produced non-finite values")
    return weights, means, covs


def em_fit(
    samples: np.ndarray,
    k: int,
    config: TrainingConfig,
    rng: np.random.Generator | None = None,
) -> EmFit:
    """Fit a k-component mixture by EM from a k-means++ start.

    The recorded log-likelihood trace is nondecreasing: if a regularized
    M step ever fails to improve the likelihood, the previous iterate is
    kept and fitting stops there.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if n < k + 1:
        raise InsufficientSamples(f"{n} samples cannot support {k} components (need >= {k + 1})")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    kind = config.covariance_kind

    centers = _kmeans_pp_centers(x, k, rng)
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((n, k), dtype=np.float64)
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs = _mstep(x, resp, kind, config)
    weights = np.maximum(weights, 1.0 / (10.0 * n))
    weights = weights / weights.sum()

    trace: list[float] = []
    converged = False
    previous = None
    for _ in range(config.max_iterations):
        resp, total = _estep(x, weights, means, covs, kind)
        if trace and total < trace[-1] - MONOTONE_SLACK:
            weights, means, covs = previous
            converged = True
            break
        trace.append(total)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < config.log_likelihood_tolerance:
            converged = True
            break
        previous = (weights, means, covs)
        weights, means, covs = _mstep(x, resp, kind, config)
    else:
        _, total = _estep(x, weights, means, covs, kind)
        if total >= trace[-1] - MONOTONE_SLACK:
            trace.append(total)
        else:
            weights, means, covs = previous

    return EmFit(weights, means, covs, kind, trace, converged)


def train_with_report(data: LabeledDataset, config: TrainingConfig | None = None):
    """Fit one mixture per class; returns (classifier, per-class fit report)."""
    config = config or TrainingConfig()
    if not data.records:
        raise EmptyDataset("cannot train on an empty dataset")
    groups = data.by_class()
    labels = sorted(groups)
    k = config.components_per_class
    for label, grp in groups.items():
        if grp.shape[0] < k + 1:
            raise InsufficientSamples(
                f"class {label!r} has {grp.shape[0]} samples; {k} components need >= {k + 1}"
            )

    seeds = np.random.SeedSequence(config.rng_seed).spawn(len(labels))
    classes = []
    report: dict[str, dict] = {}
    for label, seed in zip(labels, seeds):
        fit = em_fit(groups[label], k, config, rng=np.random.default_rng(seed))
        components = [
            GaussianComponent(float(w), m, c)
            for w, m, c in zip(fit.weights, fit.means, fit.covariances)
        ]
        classes.append(ClassModel(label, components))
        report[label] = {
            "log_likelihoods": list(fit.log_likelihoods),
            "iterations": fit.n_iterations,
            "converged": fit.converged,
        }

    total = len(data)
    priors = np.array([groups[label].shape[0] / total for label in labels])
    classifier = GmmClassifier(
        classes=classes,
        priors=priors,
        feature_dim=data.feature_dim,
        reference_indices=DEFAULT_REFERENCE_INDICES,
    )
    classifier.validate()
    return classifier, report


def train(data: LabeledDataset, config: TrainingConfig | None = None) -> GmmClassifier:
    return train_with_report(data, config)[0]


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    accuracy: float
    per_class_recall: dict[str, float]
    confusion: dict[str, dict[str, int]]  # true label -> predicted label -> count
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_recall": self.per_class_recall,
            "confusion": self.confusion,
            "n_samples": self.n_samples,
        }


def evaluate(classifier: GmmClassifier, test: LabeledDataset) -> EvaluationReport:
    if not test.records:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    known = set(classifier.labels)
    unknown = {label for label, _ in test.records} - known
    if unknown:
        raise ValueError(f"test labels not in classifier: {sorted(unknown)}")

    columns = classifier.labels + [REJECTED_COLUMN]
    confusion = {label: {col: 0 for col in columns} for label in classifier.labels}
    correct = 0
    for label, vec in test.records:
        result = classify(classifier, vec)
        predicted = REJECTED_COLUMN if isinstance(result, Rejected) else result.label
        confusion[label][predicted] += 1
        if predicted == label:
            correct += 1

    recall = {}
    for label in classifier.labels:
        row_total = sum(confusion[label].values())
        recall[label] = confusion[label][label] / row_total if row_total else 0.0
    return EvaluationReport(
        accuracy=correct / len(test),
        per_class_recall=recall,
        confusion=confusion,
        n_samples=len(test),
    )


def split(data: LabeledDataset, train_fraction: float, rng_seed: int):
    """Stratified per-class split, deterministic under the seed."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    groups: dict[str, list[tuple[str, np.ndarray]]] = {}
    for record in data.records:
        groups.setdefault(record[0], []).append(record)
    rng = np.random.default_rng(rng_seed)
    train_records: list[tuple[str, np.ndarray]] = []
    test_records: list[tuple[str, np.ndarray]] = []
    for label in sorted(groups):
        records = groups[label]
        n = len(records)
        if n < 2:
            raise InsufficientSamples(f"class {label!r} has {n} sample(s); need >= 2 to split")
        n_train = min(max(int(n * train_fraction + 0.5), 1), n - 1)
        order = rng.permutation(n)
        train_records.extend(records[i] for i in order[:n_train])
        test_records.extend(records[i] for i in order[n_train:])
    return LabeledDataset(train_records), LabeledDataset(test_records)


# ---------------------------------------------------------------------------
# persistence


def _component_to_doc(component: GaussianComponent) -> dict:
    cov = component.covariance
    return {
        "weight": component.weight,
        "mean": component.mean.tolist(),
        "covariance": cov.tolist(),
    }


def save_model(classifier: GmmClassifier, destination=None) -> bytes:
    """Serialize to the versioned model document; returns the bytes either way."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "feature_dim": classifier.feature_dim,
        "reference_indices": list(classifier.reference_indices),
        "covariance_kind": "diagonal" if classifier.classes[0].components[0].is_diagonal else "full",
        "rejection_log_density": classifier.rejection_log_density,
        "classes": [
            {
                "label": model.label,
                "prior": float(prior),
                "components": [_component_to_doc(c) for c in model.components],
            }
            for model, prior in zip(classifier.classes, classifier.priors)
        ],
    }
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if destination is not None:
        Path(destination).write_bytes(raw)
    return raw


def _looks_like_path(text: str) -> bool:
    if "\n" in text or "{" in text:
        return False
    try:
        return Path(text).exists()
    except OSError:
        return False


def load_model(source) -> GmmClassifier:
    """Read a model document from bytes, str, or a file path."""
    if isinstance(source, Path) or (isinstance(source, str) and _looks_like_path(source)):
        raw = Path(source).read_bytes()
    elif isinstance(source, bytes):
        raw = source
    elif isinstance(source, str):
        raw = source.encode("utf-8")
    else:
        raise CorruptModel(f"cannot read model from {type(source).__name__}")
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"model document unreadable: {exc}") from exc
    if not isinstance(doc, dict):
        raise CorruptModel("model document is not an object")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"model version {version!r}, expected {MODEL_FORMAT_VERSION}")
    try:
        kind = doc["covariance_kind"]
        classes = []
        priors = []
        for entry in doc["classes"]:
            components = []
            for comp in entry["components"]:
                cov = np.asarray(comp["covariance"], dtype=np.float64)
                if kind == "diagonal" and cov.ndim != 1:
                    raise CorruptModel("diagonal model carries a non-vector covariance")
                if kind == "full" and cov.ndim != 2:
                    raise CorruptModel("full model carries a non-matrix covariance")
                components.append(GaussianComponent(float(comp["weight"]), comp["mean"], cov))
            classes.append(ClassModel(str(entry["label"]), components))
            priors.append(float(entry["prior"]))
        classifier = GmmClassifier(
            classes=classes,
            priors=np.array(priors),
            rejection_log_density=doc["rejection_log_density"],
            feature_dim=int(doc["feature_dim"]),
            reference_indices=tuple(doc["reference_indices"]),
        )
        classifier.validate()
    except CorruptModel:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptModel(f"model document malformed: {exc}") from exc
    return classifier


def with_rejection_threshold(classifier: GmmClassifier, threshold: float | None) -> GmmClassifier:
    return replace(classifier, rejection_log_density=threshold)
