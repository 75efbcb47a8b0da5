"""Black-box leaker verification and collision diagnostics."""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn


@dataclass
class VerificationReport:
    per_label_accuracy: np.ndarray
    predicted_owner_label: int
    assigned_label: int
    verified: bool
    confidence: float = float("nan")
    leakage: float = float("nan")
    client_id: int = -1

    def to_json(self):
        d = asdict(self)
        d["per_label_accuracy"] = [float(a) for a in self.per_label_accuracy]
        return {
            "client_id": int(self.client_id),
            "per_label_accuracy": d["per_label_accuracy"],
            "predicted": int(self.predicted_owner_label),
            "assigned": int(self.assigned_label),
            "verified": bool(self.verified),
            "confidence": _num(self.confidence),
            "leakage": _num(self.leakage),
        }


def _num(x):
    return None if x is None or np.isnan(x) else float(x)


@dataclass
class CollisionReport:
    pairwise_kl: np.ndarray
    sigma: float
    colliding_pairs: list = field(default_factory=list)

    def min_offdiagonal(self):
        n = self.pairwise_kl.shape[0]
        off = self.pairwise_kl[~np.eye(n, dtype=bool)]
        return float(off.min())

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            n = self.pairwise_kl.shape[0]
            w.writerow([""] + [str(j) for j in range(n)])
            for i in range(n):
                w.writerow([str(i)] + [repr(float(v)) for v in self.pairwise_kl[i]])


def per_label_accuracy(spec, model, inputs, labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty watermark test set")
    pred = nn.predict(spec, model, inputs)
    C = spec.num_classes
    hits = np.bincount(labels[pred == labels], minlength=C)[:C]
    counts = np.bincount(labels, minlength=C)[:C]
    acc = np.zeros(C, dtype=np.float64)
    present = counts > 0
    acc[present] = hits[present] / counts[present]
    return acc


def argmax_unique(acc):
    best = int(np.argmax(acc))
    return best, int(np.sum(acc == acc[best])) == 1


def verify_leaker(spec, model, assigned_label, inputs, labels):
    """Attribute ``model`` to the label with strictly highest per-label accuracy."""
    acc = per_label_accuracy(spec, model, inputs, labels)
    pred, unique = argmax_unique(acc)
    return VerificationReport(acc, pred, int(assigned_label), bool(unique and pred == assigned_label))


def verification_rate(spec, models, wm_sets, testset=None):
    """Fraction of models attributed to their own client.

    With more clients than labels, a model whose label is shared must also
    answer its own holdout better than every co-labelled client's holdout.
    """
    if len(models) != len(wm_sets):
        raise ValueError("one watermark set per model required")
    if testset is None:
        x = np.concatenate([w.holdout_triggers for w in wm_sets])
        y = np.concatenate([w.holdout_labels() for w in wm_sets])
    else:
        x, y = testset
    flags = []
    for i, (model, wm) in enumerate(zip(models, wm_sets)):
        ok = verify_leaker(spec, model, wm.target_label, x, y).verified
        peers = [w for w in wm_sets if w.target_label == wm.target_label and w.owner != wm.owner]
        if ok and peers:
            own = _holdout_acc(spec, model, wm)
            ok = all(own > _holdout_acc(spec, model, p) for p in peers)
        flags.append(ok)
    return float(np.mean(flags))


def _holdout_acc(spec, model, wm):
    return nn.accuracy(spec, model, wm.holdout_triggers, wm.holdout_labels())


def accuracy_matrix(spec, models, wm_sets):
    """``A[i, j]`` = accuracy of model i on client j's holdout w.r.t. label phi_j."""
    n = len(models)
    A = np.zeros((n, len(wm_sets)))
    for i, model in enumerate(models):
        for j, wm in enumerate(wm_sets):
            A[i, j] = _holdout_acc(spec, model, wm)
    return A


def confidence_and_leakage(spec, models, wm_sets):
    n = len(models)
    if n < 2:
        raise ValueError("need at least two clients")
    A = accuracy_matrix(spec, models, wm_sets)
    confidence = float(np.mean(np.diag(A)))
    off = ~np.eye(n, dtype=bool)
    leakage = float(np.mean(A[off].reshape(n, n - 1).mean(axis=1)))
    return confidence, leakage, confidence - leakage


def ownership_verify(spec, model, triggers, target_label, nu):
    """True iff at least a ``nu`` fraction of triggers map to ``target_label``."""
    if not 0 < nu <= 1:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    labels = np.full(triggers.shape[0], target_label)
    return nn.accuracy(spec, model, triggers, labels) >= nu


def mean_kl(p, q):
    p = np.clip(p, nn.PROB_FLOOR, 1.0)
    q = np.clip(q, nn.PROB_FLOOR, 1.0)
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=1)))


def collision_report(spec, models, wm_sets, sigma):
    n = len(models)
    if n < 2:
        raise ValueError("need at least two clients")
    kl = np.zeros((n, n))
    for i in range(n):
        x = wm_sets[i].holdout_triggers
        probs = [nn.forward(spec, m, x) for m in models]
        for j in range(n):
            if i != j:
                kl[i, j] = max(mean_kl(probs[i], probs[j]), 0.0)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
             if kl[i, j] <= sigma or kl[j, i] <= sigma]
    return CollisionReport(kl, float(sigma), pairs)


def write_reports(path, reports):
    with open(path, "w") as f:
        json.dump([r.to_json() for r in reports], f, indent=2)
