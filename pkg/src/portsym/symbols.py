"""Preconditions, effect symbols and portable rules.

A precondition is an RBF support vector machine whose decision values are
mapped to probabilities by Platt scaling fitted on cross-validated decision
values. An effect is a product-Gaussian kernel density over the variables the
option changes (its mask). Effects that describe the same distribution are
unified into one vocabulary symbol.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import expit, logsumexp
from sklearn.svm import SVC

from .core import Dataset
from .partition import Partition, dbscan_labels

MIN_CLASS_SIZE = 10
DISCARD_THRESHOLD = 0.05
SIMILARITY_THRESHOLD = 0.1


class InsufficientDataError(ValueError):
    pass


# -- calibrated classifier -----------------------------------------------------

def _platt(decision: np.ndarray, y: np.ndarray, ridge: float = 0.01, weights=None) -> tuple[float, float]:
    """Fit p(y=1|f) = 1 / (1 + exp(a f + b)) by (weighted) maximum likelihood.

    A small ridge penalty on the slope keeps ``a`` finite when the decision
    values separate the classes perfectly.
    """
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    t = y.astype(float)
    n_pos, n_neg = float(np.sum(w * t)), float(np.sum(w * (1 - t)))

    def nll(ab):
        z = ab[0] * decision + ab[1]
        # -log p = log(1 + e^z), -log(1-p) = log(1 + e^-z)
        return float(np.sum(w * (t * np.logaddexp(0, z) + (1 - t) * np.logaddexp(0, -z))) + ridge * ab[0] ** 2)

    # convex in (a, b): damped Newton steps converge in a handful of iterations
    ab = np.array([0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))])
    f = nll(ab)
    for _ in range(100):
        p = expit(ab[0] * decision + ab[1])
        g = w * (p - (1 - t))
        h = w * p * (1 - p)
        grad = np.array([np.sum(g * decision) + 2 * ridge * ab[0], np.sum(g)])
        hess = np.array([[np.sum(h * decision ** 2) + 2 * ridge, np.sum(h * decision)],
                         [np.sum(h * decision), np.sum(h) + 1e-12]])
        step = np.linalg.solve(hess, grad)
        size = 1.0
        while size > 1e-10:
            cand = ab - size * step
            fc = nll(cand)
            if fc <= f:
                break
            size *= 0.5
        else:
            break
        done = f - fc < 1e-12 * max(1.0, abs(f))
        ab, f = cand, fc
        if done:
            break
    return float(ab[0]), float(ab[1])


@dataclass
class Classifier:
    """Kernel expansion ``f(x) = sum_i c_i exp(-gamma |s_i - x/scale|^2) + b``
    followed by a sigmoid. Stored as plain arrays so it serializes exactly."""

    support: np.ndarray
    dual: np.ndarray
    intercept: float
    gamma: float
    scale: np.ndarray
    a: float
    b: float

    def decision(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float)) / self.scale
        k = np.exp(-self.gamma * cdist(x, self.support, "sqeuclidean"))
        return k @ self.dual + self.intercept

    def predict_proba(self, x) -> np.ndarray:
        return expit(-(self.a * self.decision(x) + self.b))

    __call__ = predict_proba

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "dual": self.dual.tolist(), "intercept": self.intercept,
                "gamma": self.gamma, "scale": self.scale.tolist(), "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d: dict) -> "Classifier":
        dim = len(d["scale"])
        return cls(np.asarray(d["support"], dtype=float).reshape(-1, dim), np.asarray(d["dual"], dtype=float),
                   float(d["intercept"]), float(d["gamma"]), np.asarray(d["scale"], dtype=float),
                   float(d["a"]), float(d["b"]))


C_GRID = (1.0, 10.0, 100.0)
# multiples of the "scale" kernel width tried during cross-validation
GAMMA_FACTORS = (1.0, 10.0, 100.0)


def _weighted_rows(x: np.ndarray, limit: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``x`` with their multiplicities; if there are more than
    ``limit`` distinct rows, a random subset (drawn in proportion to
    multiplicity) keeps its counts."""
    uniq, counts = np.unique(x, axis=0, return_counts=True)
    if len(uniq) > limit:
        keep = np.sort(rng.choice(len(uniq), limit, replace=False, p=counts / counts.sum()))
        uniq, counts = uniq[keep], counts[keep]
    return uniq, counts.astype(float)


def fit_classifier(positives, negatives, *, scale=None, gamma="scale", C=C_GRID, gamma_factors=GAMMA_FACTORS,
                   max_per_class: int = 500, folds: int = 3, seed: int = 0) -> Classifier:
    """Calibrated probability that a vector belongs to the positive class.

    Duplicate rows are collapsed into sample weights, and each class keeps at
    most ``max_per_class`` distinct rows. ``C`` may be a sequence; with
    ``gamma="scale"`` each factor in ``gamma_factors`` multiplies the default
    kernel width. The (gamma, C) pair with the best out-of-fold calibrated
    log-likelihood is kept (ties go to the earlier, smoother pair).
    """
    pos = np.atleast_2d(np.asarray(positives, dtype=float))
    neg = np.atleast_2d(np.asarray(negatives, dtype=float))
    if len(pos) < MIN_CLASS_SIZE or len(neg) < MIN_CLASS_SIZE:
        raise InsufficientDataError(
            f"need at least {MIN_CLASS_SIZE} positives and negatives, got {len(pos)} and {len(neg)}")
    rng = np.random.default_rng(seed)
    pos, w_pos = _weighted_rows(pos, max_per_class, rng)
    neg, w_neg = _weighted_rows(neg, max_per_class, rng)
    x = np.vstack([pos, neg])
    y = np.r_[np.ones(len(pos), dtype=int), np.zeros(len(neg), dtype=int)]
    w = np.r_[w_pos, w_neg]
    if scale is None:
        span = x.max(axis=0) - x.min(axis=0)
        scale = np.where(span > 1e-12, span, 1.0)
    scale = np.asarray(scale, dtype=float)
    xs = x / scale
    if gamma == "scale":
        var = xs.var()
        base = 1.0 / (xs.shape[1] * var) if var > 0 else 1.0
        gammas = [base * f for f in gamma_factors]
    else:
        gammas = [float(gamma)]

    # fold assignment of the original copies of every distinct row
    copies = np.repeat(np.arange(len(y)), w.astype(int))
    fold_of = np.empty(len(copies), dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(y[copies] == cls)
        fold_of[idx] = rng.permutation(len(idx)) % folds
    in_fold = np.zeros((len(y), folds))
    np.add.at(in_fold, (copies, fold_of), 1.0)

    best = None
    grid = [(g, c) for g in gammas for c in sorted(np.atleast_1d(np.asarray(C, dtype=float)))]
    for gamma, c in grid:
        # out-of-fold decision values for calibration
        dec, lab, wt = [], [], []
        for f in range(folds):
            train_w = w - in_fold[:, f]
            tr = train_w > 0
            test = in_fold[:, f] > 0
            if len(np.unique(y[tr])) < 2 or not test.any():
                continue
            svm = SVC(C=c, kernel="rbf", gamma=gamma).fit(xs[tr], y[tr], sample_weight=train_w[tr])
            dec.append(svm.decision_function(xs[test]))
            lab.append(y[test])
            wt.append(in_fold[test, f])
        dec, lab, wt = np.concatenate(dec), np.concatenate(lab), np.concatenate(wt)
        a, b = _platt(dec, lab, weights=wt)
        z = a * dec + b
        nll = float(np.sum(wt * (lab * np.logaddexp(0, z) + (1 - lab) * np.logaddexp(0, -z))))
        if best is None or nll < best[0] - 1e-9:
            best = (nll, gamma, c, a, b)
    _, gamma, c, a, b = best
    svm = SVC(C=c, kernel="rbf", gamma=gamma).fit(xs, y, sample_weight=w)
    return Classifier(svm.support_vectors_.copy(), svm.dual_coef_[0].copy(), float(svm.intercept_[0]),
                      gamma, scale, a, b)


# -- kernel density ------------------------------------------------------------

@dataclass
class KDE:
    """Product-Gaussian kernel density with one bandwidth per variable."""

    points: np.ndarray
    bandwidth: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = cdist(x / self.bandwidth, self.points / self.bandwidth, "sqeuclidean")
        norm = np.sum(np.log(self.bandwidth)) + 0.5 * self.dim * math.log(2 * math.pi)
        return logsumexp(-0.5 * z, axis=1) - math.log(len(self.points)) - norm

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, n: int, rng) -> np.ndarray:
        idx = rng.integers(len(self.points), size=n)
        return self.points[idx] + rng.normal(size=(n, self.dim)) * self.bandwidth

    def widened(self, factor: float) -> "KDE":
        return KDE(self.points, self.bandwidth * factor)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "bandwidth": self.bandwidth.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KDE":
        bw = np.asarray(d["bandwidth"], dtype=float)
        return cls(np.asarray(d["points"], dtype=float).reshape(-1, len(bw)), bw)


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    n, d = x.shape
    return x.std(axis=0, ddof=1 if n > 1 else 0) * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def fit_kde(x, floor=None, max_points: int = 300, seed: int = 0) -> KDE:
    """Silverman-bandwidth KDE, bandwidth bounded below by ``floor`` (and by a
    tiny positive number so point masses stay proper densities)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(x) == 0:
        raise InsufficientDataError("cannot fit a density to zero points")
    h = silverman_bandwidth(x)
    if floor is not None:
        h = np.maximum(h, floor)
    h = np.maximum(h, 1e-6)
    if len(x) > max_points:
        x = x[np.sort(np.random.default_rng(seed).choice(len(x), max_points, replace=False))]
    return KDE(x.copy(), h)


def mc_integral(kde: KDE, n: int = 10_000, seed: int = 0, widen: float = 1.5) -> float:
    """Importance-sampling estimate of the integral of ``kde`` using a wider
    copy of itself as the proposal."""
    rng = np.random.default_rng(seed)
    proposal = kde.widened(widen)
    x = proposal.sample(n, rng)
    return float(np.mean(np.exp(kde.logpdf(x) - proposal.logpdf(x))))


def _gauss_overlap(p: KDE, q: KDE) -> float:
    """Closed form of the integral of p(x) q(x) for product-Gaussian KDEs."""
    var = p.bandwidth ** 2 + q.bandwidth ** 2
    z = cdist(p.points / np.sqrt(var), q.points / np.sqrt(var), "sqeuclidean")
    log_norm = -0.5 * np.sum(np.log(2 * math.pi * var))
    return float(np.exp(logsumexp(-0.5 * z) + log_norm - math.log(z.size)))


def density_distance(p: KDE, q: KDE) -> float:
    """Normalized squared L2 distance ||p - q||^2 / (||p||^2 + ||q||^2), in [0, 1]."""
    pp, qq, pq = _gauss_overlap(p, p), _gauss_overlap(q, q), _gauss_overlap(p, q)
    return max(0.0, (pp + qq - 2 * pq) / (pp + qq))


# -- symbols and vocabulary ----------------------------------------------------

@dataclass
class Symbol:
    symbol_id: int
    mask: tuple[int, ...]
    density: KDE
    name: str = ""

    def __post_init__(self):
        if not self.mask:
            raise ValueError("a symbol needs a non-empty mask")
        if not self.name:
            self.name = f"symbol{self.symbol_id}"

    def to_dict(self) -> dict:
        return {"id": self.symbol_id, "name": self.name, "mask": list(self.mask), "density": self.density.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Symbol":
        return cls(int(d["id"]), tuple(d["mask"]), KDE.from_dict(d["density"]), d.get("name", ""))


@dataclass
class Vocabulary:
    symbols: dict[int, Symbol] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, symbol_id: int) -> Symbol:
        return self.symbols[symbol_id]

    def __iter__(self):
        return iter(self.symbols[k] for k in sorted(self.symbols))

    def add(self, mask, density: KDE, name: str = "") -> int:
        sid = max(self.symbols, default=-1) + 1
        self.symbols[sid] = Symbol(sid, tuple(int(m) for m in mask), density, name)
        return sid

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self]

    @classmethod
    def from_list(cls, rows) -> "Vocabulary":
        return cls({int(r["id"]): Symbol.from_dict(r) for r in rows})


def dedupe(vocab: Vocabulary, similarity_threshold: float = SIMILARITY_THRESHOLD) -> tuple[Vocabulary, dict[int, int]]:
    """Unify symbols with equal masks whose densities are closer than the
    threshold. Returns the new vocabulary (dense ids, first occurrence kept)
    and the old-to-new id map."""
    reps: list[Symbol] = []
    mapping: dict[int, int] = {}
    for s in vocab:
        for new_id, r in enumerate(reps):
            if r.mask == s.mask and density_distance(r.density, s.density) < similarity_threshold:
                mapping[s.symbol_id] = new_id
                break
        else:
            mapping[s.symbol_id] = len(reps)
            reps.append(s)
    out = Vocabulary({i: Symbol(i, r.mask, r.density, r.name if not r.name.startswith("symbol") else "")
                      for i, r in enumerate(reps)})
    return out, mapping


def change_mask(starts, effects, noise, min_change: float = 1e-6) -> tuple[int, ...]:
    """Variables whose mean absolute change exceeds three times their noise."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    effects = np.atleast_2d(np.asarray(effects, dtype=float))
    change = np.abs(effects - starts).mean(axis=0)
    threshold = np.maximum(3.0 * np.asarray(noise, dtype=float), min_change)
    return tuple(int(i) for i in np.flatnonzero(change > threshold))


def fit_effect(effects, starts, noise, vocab: Vocabulary | None = None, min_samples: int = 5,
               floor=None, seed: int = 0) -> tuple[tuple[int, ...], KDE | None, int | None]:
    """Mask and masked density of an effect cluster; registers the symbol in
    ``vocab`` when given. Returns (mask, density, symbol id); density and id
    are None when the option changes nothing."""
    effects = np.atleast_2d(np.asarray(effects, dtype=float))
    if len(effects) < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} effect vectors, got {len(effects)}")
    mask = change_mask(starts, effects, noise)
    if not mask:
        return mask, None, None
    fl = None if floor is None else np.asarray(floor, dtype=float)[list(mask)]
    kde = fit_kde(effects[:, list(mask)], floor=fl, seed=seed)
    sid = vocab.add(mask, kde) if vocab is not None else None
    return mask, kde, sid


# -- preconditions and rules ---------------------------------------------------

@dataclass
class PreconditionModel:
    classifier: Classifier
    # conjunction of disjunctions of symbol ids
    symbolic: tuple[tuple[int, ...], ...] = ()

    def __call__(self, x) -> np.ndarray:
        return self.classifier.predict_proba(x)

    def to_dict(self) -> dict:
        return {"classifier": self.classifier.to_dict(), "symbolic": [list(c) for c in self.symbolic]}

    @classmethod
    def from_dict(cls, d: dict) -> "PreconditionModel":
        return cls(Classifier.from_dict(d["classifier"]), tuple(tuple(c) for c in d["symbolic"]))


@dataclass
class Outcome:
    probability: float
    symbols: tuple[int, ...]  # effect symbols (masks pairwise disjoint)
    mask: tuple[int, ...]  # variables overwritten by the outcome

    def to_dict(self) -> dict:
        return {"probability": self.probability, "symbols": list(self.symbols), "mask": list(self.mask)}

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(float(d["probability"]), tuple(d["symbols"]), tuple(d["mask"]))


@dataclass
class PortableRule:
    option_id: int
    option_name: str
    partition: int
    precondition: PreconditionModel
    outcomes: list[Outcome]

    def __post_init__(self):
        total = sum(o.probability for o in self.outcomes)
        if self.outcomes and abs(total - 1.0) > 0.01:
            raise ValueError(f"outcome probabilities sum to {total}")

    @property
    def name(self) -> str:
        return f"{self.option_name}_{self.partition}"

    def to_dict(self) -> dict:
        return {"option_id": self.option_id, "option_name": self.option_name, "partition": self.partition,
                "precondition": self.precondition.to_dict(), "outcomes": [o.to_dict() for o in self.outcomes]}

    @classmethod
    def from_dict(cls, d: dict) -> "PortableRule":
        return cls(int(d["option_id"]), d["option_name"], int(d["partition"]),
                   PreconditionModel.from_dict(d["precondition"]), [Outcome.from_dict(o) for o in d["outcomes"]])


def symbolic_precondition(classifier: Classifier, positives: np.ndarray, vocab: Vocabulary,
                          samples: int = 50, seed: int = 0) -> tuple[tuple[int, ...], ...]:
    """Symbolic reading of a precondition.

    A symbol is accepted when overwriting its mask in the positive start
    vectors with draws from its density keeps the mean classifier score at
    0.5 or above. Symbols sharing a mask form a disjunction, used only if the
    mask matters (some symbol with that mask is rejected). Disjunctions with
    pairwise disjoint masks are conjoined, largest masks first.
    """
    rng = np.random.default_rng(seed)
    base = positives[rng.choice(len(positives), min(samples, len(positives)), replace=False)]
    by_mask: dict[tuple[int, ...], list[tuple[int, bool]]] = {}
    for s in vocab:
        x = base.copy()
        x[:, list(s.mask)] = s.density.sample(len(x), rng)
        ok = float(classifier.predict_proba(x).mean()) >= 0.5
        by_mask.setdefault(s.mask, []).append((s.symbol_id, ok))
    clauses, used = [], set()
    for mask in sorted(by_mask, key=lambda m: (-len(m), m)):
        entries = by_mask[mask]
        accepted = tuple(sid for sid, ok in entries if ok)
        if not accepted or len(accepted) == len(entries) or used & set(mask):
            continue
        clauses.append(accepted)
        used |= set(mask)
    return tuple(sorted(clauses))


@dataclass
class PortableModel:
    vocabulary: Vocabulary
    rules: list[PortableRule]
    option_names: dict[int, str] = field(default_factory=dict)
    obs_dim: int = 0

    def rule(self, option_id: int, partition: int) -> PortableRule:
        for r in self.rules:
            if r.option_id == option_id and r.partition == partition:
                return r
        raise KeyError((option_id, partition))

    def rules_for(self, option_id: int) -> list[PortableRule]:
        return [r for r in self.rules if r.option_id == option_id]

    def to_dict(self) -> dict:
        return {"obs_dim": self.obs_dim, "option_names": {str(k): v for k, v in sorted(self.option_names.items())},
                "vocabulary": self.vocabulary.to_list(), "rules": [r.to_dict() for r in self.rules]}

    def rules_bytes(self) -> bytes:
        """Canonical serialization of vocabulary and rules."""
        d = self.to_dict()
        return json.dumps({"vocabulary": d["vocabulary"], "rules": d["rules"]}, sort_keys=True).encode()

    @classmethod
    def from_dict(cls, d: dict) -> "PortableModel":
        return cls(Vocabulary.from_list(d["vocabulary"]), [PortableRule.from_dict(r) for r in d["rules"]],
                   {int(k): v for k, v in d.get("option_names", {}).items()}, int(d.get("obs_dim", 0)))


def merge_models(base: PortableModel, extra: PortableModel,
                 similarity_threshold: float = SIMILARITY_THRESHOLD) -> PortableModel:
    """Accumulate ``extra`` into ``base``: vocabularies are joined and
    deduplicated, and rules of ``extra`` that are new at the symbolic level
    are appended with partition indices shifted past those already used by
    the same option."""
    if base.obs_dim and extra.obs_dim and base.obs_dim != extra.obs_dim:
        raise ValueError(f"observation dimensions differ ({base.obs_dim} vs {extra.obs_dim})")
    joined = Vocabulary(dict(base.vocabulary.symbols))
    shift = {}
    for sym in extra.vocabulary:
        shift[sym.symbol_id] = joined.add(sym.mask, sym.density)
    vocab, mapping = dedupe(joined, similarity_threshold)

    def remap(rule: PortableRule, ids: dict[int, int], partition: int) -> PortableRule:
        pre = PreconditionModel(rule.precondition.classifier,
                                tuple(tuple(sorted({mapping[ids[x]] for x in c})) for c in rule.precondition.symbolic))
        outs = [Outcome(o.probability, tuple(sorted({mapping[ids[x]] for x in o.symbols})), o.mask)
                for o in rule.outcomes]
        return PortableRule(rule.option_id, rule.option_name, partition, pre, outs)

    same = {sid: sid for sid in base.vocabulary.symbols}
    rules = [remap(r, same, r.partition) for r in base.rules]
    next_index: dict[int, int] = {}
    for r in base.rules:
        next_index[r.option_id] = max(next_index.get(r.option_id, 0), r.partition + 1)
    def signature(rule: PortableRule):
        return (rule.option_id, rule.precondition.symbolic,
                tuple(sorted((o.symbols, o.mask) for o in rule.outcomes)))

    seen = {signature(r) for r in rules}
    for r in extra.rules:
        k = next_index.get(r.option_id, 0)
        new = remap(r, shift, k)
        # a rule already known symbolically is kept from the base model
        if signature(new) in seen:
            continue
        seen.add(signature(new))
        next_index[r.option_id] = k + 1
        rules.append(new)
    names = {**extra.option_names, **base.option_names}
    return PortableModel(vocab, rules, names, base.obs_dim or extra.obs_dim)


def precondition_negatives(ds: Dataset, part: Partition, parts: list[Partition], space: str,
                           negatives: str = "failures", exclude_radius: float | None = None,
                           scale=None) -> np.ndarray:
    """Negative examples for one partition's precondition.

    ``"failures"``: failed initiations of the option plus the starts of the
    option's other partitions. ``"other"``: starts of successful executions of
    other options.

    With ``exclude_radius``, starts of other partitions lying within that
    (scaled) distance of one of this partition's own starts are dropped:
    where two partitions of an option share start states, both rules apply
    and the task's linking function decides between them.
    """
    starts = ds.vectors(space, "start")
    if negatives == "failures":
        idx = list(np.flatnonzero((ds.option_ids == part.option_id) & ~ds.success))
        others = [i for q in parts if q.option_id == part.option_id and q.partition_index != part.partition_index
                  for i in q.members]
        if others and exclude_radius is not None:
            sc = np.ones(starts.shape[1]) if scale is None else np.asarray(scale, dtype=float)
            own = np.unique(starts[list(part.members)] / sc, axis=0)
            d, _ = cKDTree(own).query(starts[others] / sc, k=1)
            others = [i for i, di in zip(others, d) if di > exclude_radius]
        idx.extend(others)
    elif negatives == "other":
        idx = list(np.flatnonzero((ds.option_ids != part.option_id) & ds.success))
    else:
        raise ValueError(f"unknown negative-example source {negatives!r}")
    if not idx:
        return np.zeros((0, starts.shape[1]))
    return starts[np.array(sorted(set(idx)))]


def _outcome_frequencies(ds: Dataset, part: Partition, starts: np.ndarray, eps: float | None,
                         scale, min_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Pooled outcome frequencies of a partition, and each outcome's highest
    frequency within one start context.

    A context is one task's members whose start vectors are connected at
    ``eps`` (the whole task when ``eps`` is None). An outcome that is common
    somewhere stays relevant however rare it is across the pool; it must
    occur at least ``min_count`` times in that context (or every time it
    occurs at all, if that is fewer).
    """
    outcomes = np.asarray(part.outcomes)
    members = np.asarray(part.members)
    n_out = int(outcomes.max()) + 1
    totals = np.bincount(outcomes, minlength=n_out)
    freqs = totals / len(outcomes)
    need = np.minimum(min_count, totals)
    tasks = np.array([ds.transitions[m].task_id for m in members])
    peak = np.zeros(n_out)
    for t in np.unique(tasks):
        in_task = np.flatnonzero(tasks == t)
        if eps is None:
            groups = [in_task]
        else:
            sc = np.ones(starts.shape[1]) if scale is None else np.asarray(scale, dtype=float)
            comp = dbscan_labels(starts[members[in_task]] / sc, eps, 1)
            groups = [in_task[comp == k] for k in np.unique(comp)]
        for g in groups:
            counts = np.bincount(outcomes[g], minlength=n_out)
            freq = np.where(counts >= need, counts / len(g), 0.0)
            peak = np.maximum(peak, freq)
    return freqs, peak


def build_portable_rules(ds: Dataset, partitions: list[Partition], vocab: Vocabulary | None = None, *,
                         noise, space: str = "ego", option_names: dict[int, str] | None = None,
                         discard_threshold: float = DISCARD_THRESHOLD,
                         similarity_threshold: float = SIMILARITY_THRESHOLD,
                         negatives: str = "failures", min_samples: int = 5, scale=None,
                         classifier_kwargs: dict | None = None, bandwidth_floor=None,
                         eps: float | None = None, seed: int = 0) -> PortableModel:
    """One rule per partition with enough data.

    Partitions whose precondition cannot be fit (fewer than ``MIN_CLASS_SIZE``
    positives or negatives) are skipped with a warning.
    """
    vocab = Vocabulary() if vocab is None else Vocabulary(dict(vocab.symbols))
    option_names = dict(option_names or {})
    classifier_kwargs = dict(classifier_kwargs or {})
    starts_all, effects_all = ds.vectors(space, "start"), ds.vectors(space, "effect")
    if scale is None and len(ds):
        allv = np.vstack([starts_all, effects_all])
        span = allv.max(axis=0) - allv.min(axis=0)
        scale = np.where(span > 1e-12, span, 1.0)
    if bandwidth_floor is None and scale is not None:
        bandwidth_floor = np.maximum(np.asarray(noise, dtype=float), 0.01 * scale)
    pending = []
    for part in partitions:
        pos = starts_all[list(part.members)]
        neg = precondition_negatives(ds, part, partitions, space, negatives, eps, scale)
        try:
            clf = fit_classifier(pos, neg, scale=scale, seed=seed, **classifier_kwargs)
        except InsufficientDataError as exc:
            warnings.warn(f"option {part.option_id} partition {part.partition_index}: rule skipped ({exc})")
            continue
        freqs, peak = _outcome_frequencies(ds, part, starts_all, eps, scale, min_samples)
        outcomes = []
        for k in np.argsort(-freqs, kind="stable"):
            if peak[k] < discard_threshold:
                continue
            members = list(part.outcome_members(int(k)))
            try:
                mask, _, sid = fit_effect(effects_all[members], starts_all[members], noise, vocab,
                                          min_samples=1, floor=bandwidth_floor, seed=seed)
            except InsufficientDataError:
                continue
            outcomes.append([float(freqs[k]), () if sid is None else (sid,), mask])
        total = sum(o[0] for o in outcomes)
        for o in outcomes:
            o[0] /= total
        pending.append((part, clf, pos, outcomes))

    vocab, mapping = dedupe(vocab, similarity_threshold)
    rules = []
    for part, clf, pos, outcomes in pending:
        symbolic = symbolic_precondition(clf, pos, vocab, seed=seed)
        outs = [Outcome(p, tuple(sorted({mapping[s] for s in sids})), mask) for p, sids, mask in outcomes]
        rules.append(PortableRule(part.option_id, option_names.get(part.option_id, f"option{part.option_id}"),
                                  part.partition_index, PreconditionModel(clf, symbolic), outs))
    obs_dim = starts_all.shape[1] if len(ds) else 0
    return PortableModel(vocab, rules, option_names, obs_dim)
