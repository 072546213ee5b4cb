"""Word-level P/R/F, OOV recall, and switch-distribution aggregation."""
from dataclasses import dataclass

import numpy as np

from switchseg.errors import InvalidInputError


def spans(words):
    out, pos = [], 0
    for w in words:
        out.append((pos, pos + len(w)))
        pos += len(w)
    return out


@dataclass
class EvalReport:
    precision: float
    recall: float
    f: float
    oov_recall: float = None   # None when the OOV set is empty
    n_gold: int = 0
    n_pred: int = 0
    n_correct: int = 0


def _f(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _check_pair(gold, pred):
    if len(gold) != len(pred):
        raise InvalidInputError(f"{len(gold)} gold sentences but {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if sum(map(len, g)) != sum(map(len, p)):
            raise InvalidInputError(f"sentence {i}: character counts differ")


def prf(gold, pred):
    """Micro-averaged span P/R/F over a corpus of word lists."""
    _check_pair(gold, pred)
    n_gold = n_pred = n_correct = 0
    for g, p in zip(gold, pred):
        gs, ps = set(spans(g)), spans(p)
        n_gold += len(gs)
        n_pred += len(ps)
        n_correct += sum(1 for s in ps if s in gs)
    P = n_correct / n_pred if n_pred else 0.0
    R = n_correct / n_gold if n_gold else 0.0
    return EvalReport(P, R, _f(P, R), None, n_gold, n_pred, n_correct)


def oov_recall(gold, pred, oov):
    """Recall over gold words whose type is in ``oov``; None if none occur."""
    _check_pair(gold, pred)
    total = hit = 0
    for g, p in zip(gold, pred):
        ps = set(spans(p))
        for w, s in zip(g, spans(g)):
            if w in oov:
                total += 1
                hit += s in ps
    if not oov or total == 0:
        return None
    return hit / total


def evaluate(gold, pred, oov=None):
    report = prf(gold, pred)
    if oov is not None:
        report.oov_recall = oov_recall(gold, pred, oov)
    return report


def average_f(reports):
    """Unweighted mean of per-task F values."""
    reports = list(reports)
    return float(np.mean([r.f for r in reports])) if reports else 0.0


def _mean_defined(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


REPORT_HEADER = ("task", "P", "R", "F", "OOV", "gold", "pred", "correct")


def report_tsv(reports):
    """``reports``: ``{task: EvalReport}``; last row is the unweighted ``Avg``."""
    def fmt(v):
        return "NA" if v is None else f"{v:.4f}"

    lines = ["\t".join(REPORT_HEADER)]
    for task, r in reports.items():
        lines.append("\t".join([task, fmt(r.precision), fmt(r.recall), fmt(r.f),
                                fmt(r.oov_recall), str(r.n_gold), str(r.n_pred),
                                str(r.n_correct)]))
    rs = list(reports.values())
    avg = [_mean_defined([r.precision for r in rs]), _mean_defined([r.recall for r in rs]),
           average_f(rs), _mean_defined([r.oov_recall for r in rs])]
    lines.append("\t".join(["Avg"] + [fmt(v) for v in avg] + ["-", "-", "-"]))
    return "\n".join(lines) + "\n"


def report_table(reports):
    """Plain-text block with one row per metric and one column per task (percent)."""
    tasks = list(reports)
    rs = [reports[t] for t in tasks]
    cols = tasks + ["Avg."]
    width = max(8, *(len(c) + 2 for c in cols))
    out = ["".ljust(5) + "".join(c.rjust(width) for c in cols)]
    for label, get in (("P", lambda r: r.precision), ("R", lambda r: r.recall),
                       ("F", lambda r: r.f), ("OOV", lambda r: r.oov_recall)):
        vals = [get(r) for r in rs]
        vals.append(_mean_defined(vals))
        cells = ["-" if v is None else f"{100 * v:.2f}" for v in vals]
        out.append(label.ljust(5) + "".join(c.rjust(width) for c in cells))
    return "\n".join(out) + "\n"


def switch_distribution(traces):
    """Global switch distribution per ``(task, direction)``.

    ``traces`` is a list of :class:`switchseg.switch.SwitchTrace`. Each result
    is the mean of ``a_t`` over every position of every sentence,
    renormalized to sum to one.
    """
    if not traces:
        raise InvalidInputError("no traces")
    sums, counts = {}, {}
    for tr in traces:
        for direction, A in (("fw", tr.forward), ("bw", tr.backward)):
            key = (tr.task, direction)
            sums[key] = sums.get(key, 0.0) + A.sum(0)
            counts[key] = counts.get(key, 0) + A.shape[0]
    out = {}
    for key, total in sums.items():
        mean = total / counts[key]
        out[key] = mean / mean.sum()
    return out


def switch_distribution_tsv(dist):
    if not dist:
        return "task\tdirection\n"
    k = len(next(iter(dist.values())))
    lines = ["\t".join(["task", "direction"] + [f"k{i + 1}" for i in range(k)])]
    for (task, direction), v in dist.items():
        lines.append("\t".join([str(task), direction] + [f"{x:.6f}" for x in v]))
    return "\n".join(lines) + "\n"
