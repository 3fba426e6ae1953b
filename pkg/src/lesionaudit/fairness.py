"""Group error rates, equalized-odds audits, and calibrated equalized-odds postprocessing.

Hard rates (FPR/FNR) count thresholded predictions. Generalized rates use
the scores directly: gFPR is the mean score over true negatives and gFNR the
mean of (1 - score) over true positives. Mitigation works on generalized
rates; audits report both families.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .dataset.schema import DANGEROUS, LESION_CLASSES

log = logging.getLogger(__name__)

GROUP_ORDER = {"sex": ("male", "female"), "tone": ("light", "dark")}
COST_CONSTRAINTS = ("fnr", "fpr", "weighted")
DEFAULT_TOLERANCE = 0.05


class FairnessError(ValueError):
    pass


class UndefinedRateError(FairnessError):
    """A group lacks positives (FNR undefined) or negatives (FPR undefined)."""


@dataclass(frozen=True)
class PredictionRecord:
    """One scored sample.

    For binary models ``score`` is P(Dangerous) and ``predicted``/``truth``
    are 0/1. Seven-way models also carry ``class_probs``; their
    ``predicted``/``truth`` are class indices and ``score`` is the summed
    probability of the Dangerous classes.
    """

    sample_id: str
    score: float
    predicted: int
    truth: int
    sex: str = "unknown"
    tone2: str = "unknown"
    threshold: float = 0.5
    class_probs: tuple[float, ...] | None = None

    def group(self, axis: str) -> str:
        if axis == "sex":
            return self.sex
        if axis == "tone":
            return self.tone2
        raise FairnessError(f"unknown group axis {axis!r}")

    def binary(self) -> "PredictionRecord":
        """Dangerous-vs-Benign view of this record."""
        if self.class_probs is None:
            return self
        truth = int(LESION_CLASSES[self.truth] in DANGEROUS)
        return replace(self, truth=truth, predicted=int(self.score >= self.threshold), class_probs=None)


@dataclass(frozen=True)
class GroupRates:
    group: str
    n_pos: int
    n_neg: int
    fpr: float
    fnr: float
    gfpr: float
    gfnr: float

    @property
    def base_rate(self) -> float:
        return self.n_pos / (self.n_pos + self.n_neg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_rate"] = self.base_rate
        return d


@dataclass(frozen=True)
class EqOddsReport:
    axis: str
    groups: tuple[str, str]
    rates: tuple[GroupRates, GroupRates]
    fpr_diff: float
    fnr_diff: float
    gfpr_diff: float
    gfnr_diff: float
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def satisfied(self) -> bool:
        return max(abs(self.fpr_diff), abs(self.fnr_diff)) <= self.tolerance

    def to_dict(self) -> dict:
        return {"axis": self.axis, "groups": list(self.groups),
                "rates": [r.to_dict() for r in self.rates],
                "fpr_diff": self.fpr_diff, "fnr_diff": self.fnr_diff,
                "gfpr_diff": self.gfpr_diff, "gfnr_diff": self.gfnr_diff,
                "tolerance": self.tolerance, "satisfied": self.satisfied}


@dataclass(frozen=True)
class MitigationPolicy:
    axis: str
    target_group: str
    mix_probability: float
    base_rate: float
    cost_constraint: str = "fnr"
    threshold: float = 0.5
    costs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.mix_probability <= 1.0:
            raise FairnessError(f"mix probability {self.mix_probability} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# rates


def _binary_records(records) -> list[PredictionRecord]:
    return [r.binary() for r in records]


def _rates(group: str, scores, preds, truth) -> GroupRates:
    scores = np.asarray(scores, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    pos, neg = truth == 1, truth == 0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0:
        raise UndefinedRateError(f"group {group!r} has no positives; FNR undefined")
    if n_neg == 0:
        raise UndefinedRateError(f"group {group!r} has no negatives; FPR undefined")
    cm = metrics.confusion(preds, truth, 2)
    fp, fn = int(cm[0, 1]), int(cm[1, 0])
    return GroupRates(group, n_pos, n_neg,
                      fpr=fp / n_neg, fnr=fn / n_pos,
                      gfpr=float(scores[neg].mean()), gfnr=float((1.0 - scores[pos]).mean()))


def _groups(records, axis: str) -> dict[str, list[PredictionRecord]]:
    order = GROUP_ORDER.get(axis)
    if order is None:
        raise FairnessError(f"unknown group axis {axis!r}")
    groups: dict[str, list[PredictionRecord]] = {g: [] for g in order}
    for r in records:
        g = r.group(axis)
        if g in groups:
            groups[g].append(r)
    return {g: rs for g, rs in groups.items() if rs}


def group_rates(records, axis: str, threshold: float | None = None) -> dict[str, GroupRates]:
    """Hard and generalized error rates per group; records with unknown group are skipped.

    With ``threshold`` set, predictions are recomputed as ``score >= threshold``.
    """
    out = {}
    for g, rs in _groups(_binary_records(records), axis).items():
        scores = [r.score for r in rs]
        preds = [r.predicted for r in rs] if threshold is None else [int(s >= threshold) for s in scores]
        out[g] = _rates(g, scores, preds, [r.truth for r in rs])
    return out


def eq_odds_gap(rates_by_group: dict[str, GroupRates], axis: str = "",
                tolerance: float = DEFAULT_TOLERANCE, order=None) -> EqOddsReport:
    """First-minus-second differences of the two groups' rates."""
    if len(rates_by_group) != 2:
        raise FairnessError(f"equalized-odds gap needs exactly 2 groups, got {len(rates_by_group)}")
    a, b = order if order is not None else tuple(rates_by_group)
    ra, rb = rates_by_group[a], rates_by_group[b]
    return EqOddsReport(axis, (a, b), (ra, rb),
                        fpr_diff=ra.fpr - rb.fpr, fnr_diff=ra.fnr - rb.fnr,
                        gfpr_diff=ra.gfpr - rb.gfpr, gfnr_diff=ra.gfnr - rb.gfnr,
                        tolerance=tolerance)


# ---------------------------------------------------------------------------
# calibrated equalized odds


def group_cost(rates: GroupRates, constraint: str, fnr_weight: float = 0.5) -> float:
    if constraint == "fnr":
        return rates.gfnr
    if constraint == "fpr":
        return rates.gfpr
    if constraint == "weighted":
        return fnr_weight * rates.gfnr + (1 - fnr_weight) * rates.gfpr
    raise FairnessError(f"unknown cost constraint {constraint!r}; expected one of {COST_CONSTRAINTS}")


def trivial_cost(base_rate: float, constraint: str, fnr_weight: float = 0.5) -> float:
    """Cost of the constant predictor that outputs the group base rate."""
    trivial = GroupRates("trivial", 1, 1, fpr=0.0, fnr=0.0, gfpr=base_rate, gfnr=1.0 - base_rate)
    return group_cost(trivial, constraint, fnr_weight)


def fit_calibrated_eq_odds(records, axis: str = "tone", cost_constraint: str = "fnr",
                           fnr_weight: float = 0.5) -> MitigationPolicy:
    """Pick the lower-cost group and the probability of replacing its scores by its base rate.

    Mixing with probability ``p`` moves the group's expected cost linearly
    from ``c_low`` toward the trivial cost; ``p`` is solved so the mixed cost
    meets the higher-cost group's, then clipped to [0, 1].
    """
    if cost_constraint not in COST_CONSTRAINTS:
        raise FairnessError(f"unknown cost constraint {cost_constraint!r}")
    rates = group_rates(records, axis)
    if len(rates) != 2:
        raise FairnessError(f"axis {axis!r} needs exactly two groups, found {sorted(rates)}")
    thresholds = {r.threshold for r in records}
    if len(thresholds) != 1:
        raise FairnessError("records use different thresholds")
    threshold = thresholds.pop()
    (ga, ra), (gb, rb) = rates.items()
    ca, cb = group_cost(ra, cost_constraint, fnr_weight), group_cost(rb, cost_constraint, fnr_weight)
    low, high = (ga, gb) if ca <= cb else (gb, ga)
    c_low, c_high = min(ca, cb), max(ca, cb)
    mu = rates[low].base_rate
    c_triv = trivial_cost(mu, cost_constraint, fnr_weight)
    denom = c_triv - c_low
    if c_high == c_low:
        p = 0.0
    elif abs(denom) < 1e-9:
        log.warning("trivial and current cost coincide for group %s; using p = 0", low)
        p = 0.0
    else:
        p = float(np.clip((c_high - c_low) / denom, 0.0, 1.0))
    costs = {ga: ca, gb: cb, "trivial": c_triv}
    return MitigationPolicy(axis, low, p, mu, cost_constraint, threshold, costs)


def mixed_cost(policy: MitigationPolicy, p: float | None = None) -> float:
    p = policy.mix_probability if p is None else p
    c_low = policy.costs[policy.target_group]
    return (1 - p) * c_low + p * policy.costs["trivial"]


def apply_policy_sampled(records, policy: MitigationPolicy, seed: int = 0) -> list[PredictionRecord]:
    """Replace each target-group score with the base rate with probability p, then re-threshold."""
    rng = np.random.default_rng(seed)
    out = []
    for r in records:
        if r.group(policy.axis) != policy.target_group:
            out.append(r)
            continue
        if rng.random() < policy.mix_probability:
            b = r.binary()
            out.append(replace(b, score=policy.base_rate, predicted=int(policy.base_rate >= b.threshold)))
        else:
            out.append(r)
    return out


def expected_rates(records, policy: MitigationPolicy) -> dict[str, GroupRates]:
    """Group rates after mixing, in expectation over the replacement draws."""
    rates = group_rates(records, policy.axis)
    if policy.target_group not in rates:
        raise FairnessError(f"policy group {policy.target_group!r} not present")
    r = rates[policy.target_group]
    p, mu = policy.mix_probability, policy.base_rate
    triv_pos_pred = float(mu >= policy.threshold)
    rates[policy.target_group] = replace(
        r,
        fpr=(1 - p) * r.fpr + p * triv_pos_pred,
        fnr=(1 - p) * r.fnr + p * (1.0 - triv_pos_pred),
        gfpr=(1 - p) * r.gfpr + p * mu,
        gfnr=(1 - p) * r.gfnr + p * (1.0 - mu),
    )
    return rates


def apply_policy(records, policy: MitigationPolicy, mode: str = "sampled", seed: int = 0):
    """``sampled`` returns new records; ``expected`` returns mixed GroupRates by group."""
    if mode == "sampled":
        return apply_policy_sampled(records, policy, seed)
    if mode == "expected":
        return expected_rates(records, policy)
    raise FairnessError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# audit


@dataclass
class AuditReport:
    axes: dict[str, EqOddsReport]
    overall: metrics.MetricsBundle
    post_axes: dict[str, EqOddsReport] | None = None
    post_overall: metrics.MetricsBundle | None = None
    policy: MitigationPolicy | None = None
    mode: str | None = None

    @property
    def auc_change(self) -> float | None:
        if self.post_overall is None:
            return None
        return self.post_overall.auc - self.overall.auc

    def to_dict(self) -> dict:
        d = {"pre": {"axes": {k: v.to_dict() for k, v in self.axes.items()},
                     "overall": self.overall.to_dict()}}
        if self.post_axes is not None:
            d["post"] = {"axes": {k: v.to_dict() for k, v in self.post_axes.items()},
                         "overall": self.post_overall.to_dict()}
            d["auc_before"] = self.overall.auc
            d["auc_after"] = self.post_overall.auc
            d["auc_change"] = self.auc_change
        if self.policy is not None:
            d["policy"] = self.policy.to_dict()
            d["mode"] = self.mode
        return d


def overall_bundle(records) -> metrics.MetricsBundle:
    recs = _binary_records(records)
    if not recs:
        raise FairnessError("no records")
    scores = np.array([r.score for r in recs])
    truth = np.array([r.truth for r in recs])
    preds = np.array([r.predicted for r in recs])
    cm = metrics.confusion(preds, truth, 2)
    return metrics.MetricsBundle(metrics.accuracy(cm), metrics.roc_auc_binary(scores, truth),
                                 metrics.recall(cm, positive=1),
                                 tuple(float(v) for v in metrics.per_class_recall(cm)))


def _axis_reports(records, axes, tolerance) -> dict[str, EqOddsReport]:
    out = {}
    for axis in axes:
        rates = group_rates(records, axis)
        if len(rates) < 2:
            raise FairnessError(f"axis {axis!r} has fewer than 2 defined groups")
        out[axis] = eq_odds_gap(rates, axis, tolerance, order=GROUP_ORDER[axis])
    return out


def audit(records, axes=("sex", "tone"), policy: MitigationPolicy | None = None,
          mitigated=None, mode: str = "sampled", seed: int = 0,
          tolerance: float = DEFAULT_TOLERANCE) -> AuditReport:
    """Equalized-odds report per axis, optionally before and after mitigation.

    Pass ``policy`` to mitigate here (sampled or expected mode), or
    ``mitigated`` records produced elsewhere.
    """
    records = list(records)
    if not records:
        raise FairnessError("audit needs at least one record")
    report = AuditReport(_axis_reports(records, axes, tolerance), overall_bundle(records))
    if policy is None and mitigated is None:
        return report
    if policy is not None and mode == "expected":
        post_axes = {}
        for axis in axes:
            rates = expected_rates(records, policy) if axis == policy.axis else group_rates(records, axis)
            post_axes[axis] = eq_odds_gap(rates, axis, tolerance, order=GROUP_ORDER[axis])
        # AUC has no closed form under mixing; the overall bundle uses one sampled draw
        post_records = apply_policy_sampled(records, policy, seed)
        report.post_axes = post_axes
        report.post_overall = overall_bundle(post_records)
    else:
        post_records = list(mitigated) if mitigated is not None else apply_policy_sampled(records, policy, seed)
        report.post_axes = _axis_reports(post_records, axes, tolerance)
        report.post_overall = overall_bundle(post_records)
    report.policy, report.mode = policy, (mode if policy is not None else "supplied")
    return report


def _fmt(v: float) -> str:
    return f"{v:+.2f}" if v < 0 else f"{v:.2f}"


def format_axis_table(rep: EqOddsReport) -> str:
    a, b = rep.groups
    lines = [f"Group identity ({a} - {b})",
             f"{'Group':<12}{'FPR':>8}{'FNR':>8}{'gFPR':>8}{'gFNR':>8}{'n_pos':>8}{'n_neg':>8}"]
    for r in rep.rates:
        lines.append(f"{r.group:<12}{r.fpr:>8.2f}{r.fnr:>8.2f}{r.gfpr:>8.3f}{r.gfnr:>8.3f}{r.n_pos:>8d}{r.n_neg:>8d}")
    lines.append(f"{'Difference':<12}{_fmt(rep.fpr_diff):>8}{_fmt(rep.fnr_diff):>8}"
                 f"{rep.gfpr_diff:>8.3f}{rep.gfnr_diff:>8.3f}")
    lines.append(f"Equalized odds satisfied (tolerance {rep.tolerance:.2f}): {'yes' if rep.satisfied else 'no'}")
    return "\n".join(lines)


def format_report(report: AuditReport) -> str:
    parts = ["== Fairness audit (before mitigation) =="]
    for axis, rep in report.axes.items():
        parts += [f"-- axis: {axis}", format_axis_table(rep)]
    o = report.overall
    parts.append(f"Overall: accuracy {o.accuracy:.4f}  AUC {o.auc:.4f}  recall {o.recall:.4f}")
    if report.post_axes is not None:
        if report.policy is not None:
            pol = report.policy
            parts.append(f"== Mitigation policy: calibrated equalized odds ({pol.cost_constraint}) ==")
            parts.append(f"axis {pol.axis}; target group {pol.target_group}; p = {pol.mix_probability:.6f}; "
                         f"base rate = {pol.base_rate:.6f}; mode {report.mode}")
        parts.append("== Fairness audit (after mitigation) ==")
        for axis, rep in report.post_axes.items():
            parts += [f"-- axis: {axis}", format_axis_table(rep)]
        p = report.post_overall
        parts.append(f"Overall: accuracy {p.accuracy:.4f}  AUC {p.auc:.4f}  recall {p.recall:.4f}")
        parts.append(f"AUC before {o.auc:.4f} -> after {p.auc:.4f} (change {report.auc_change:+.4f})")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# prediction log I/O

_LOG_FIELDS = ("sample_id", "score", "predicted", "truth", "sex", "tone2", "threshold")


def write_predictions(records, path) -> Path:
    path = Path(path)
    records = list(records)
    n_probs = max((len(r.class_probs) for r in records if r.class_probs is not None), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(_LOG_FIELDS) + [f"p_{LESION_CLASSES[k]}" for k in range(n_probs)])
        for r in records:
            probs = [repr(float(v)) for v in r.class_probs] if r.class_probs is not None else [""] * n_probs
            w.writerow([r.sample_id, repr(float(r.score)), r.predicted, r.truth, r.sex, r.tone2,
                        repr(float(r.threshold))] + probs)
    return path


def read_predictions(path) -> list[PredictionRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _LOG_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise FairnessError(f"{path}: prediction log missing column(s) {missing}")
        prob_cols = [c for c in reader.fieldnames if c.startswith("p_")]
        out = []
        for row in reader:
            cells = [row[c] for c in prob_cols]
            probs = tuple(float(v) for v in cells) if cells and all(cells) else None
            out.append(PredictionRecord(row["sample_id"], float(row["score"]), int(row["predicted"]),
                                        int(row["truth"]), row["sex"], row["tone2"],
                                        float(row["threshold"]), probs))
    return out
