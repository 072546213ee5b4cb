"""Synthetic multi-criteria segmentation corpora with planted conflicts.

A lexicon of multi-character *units* partitions a synthetic alphabet, so the
unit parse of any surface string is unambiguous. Every criterion segments a
unit either atomically or at listed split positions. Conflicting units are
arranged in groups, and a criterion is a per-group choice of convention,
which lets new criteria be assembled from the conventions of existing ones.
"""
import itertools
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from switchseg.corpus import dumps_segmented
from switchseg.errors import InvalidInputError
from switchseg.numerics import make_rng

ALPHABET_START = 0x4E00  # CJK unified ideographs
SHARED = "shared"
EXACT_TIE_SEARCH = 16


@dataclass
class CriterionSpec:
    lexicon: list                 # unit strings
    rules: dict                   # criterion -> {unit: tuple of split offsets}
    groups: dict = field(default_factory=dict)  # unit -> group label

    @property
    def criteria(self):
        return list(self.rules)

    def segment_unit(self, criterion, unit):
        cuts = (0,) + tuple(self.rules[criterion].get(unit, ())) + (len(unit),)
        return [unit[a:b] for a, b in zip(cuts, cuts[1:])]

    def segment(self, criterion, units):
        return [w for u in units for w in self.segment_unit(criterion, u)]

    def conflicting_units(self):
        crits = self.criteria
        return [u for u in self.lexicon
                if len({tuple(self.rules[c].get(u, ())) for c in crits}) > 1]

    def conflict_fraction(self):
        return len(self.conflicting_units()) / len(self.lexicon) if self.lexicon else 0.0

    def to_dict(self):
        return {"lexicon": self.lexicon,
                "rules": {c: {u: list(v) for u, v in r.items()} for c, r in self.rules.items()},
                "groups": self.groups}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["lexicon"]),
                   {c: {u: tuple(v) for u, v in r.items()} for c, r in d["rules"].items()},
                   dict(d.get("groups", {})))


@dataclass
class GenConfig:
    alphabet_size: int = 50
    unit_len: tuple = (2, 3)
    sentence_units: tuple = (3, 10)
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    conflict_fraction: float = 0.5
    criteria: tuple = ("A", "B")
    conflict_groups: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.conflict_fraction <= 1.0:
            raise InvalidInputError("conflict fraction must lie in [0, 1]")
        self.unit_len = tuple(self.unit_len)
        self.sentence_units = tuple(self.sentence_units)
        self.criteria = tuple(self.criteria)


def make_spec(config):
    """Random lexicon and criteria following ``config``.

    Exactly ``round(conflict_fraction * units)`` units conflict. Conflict
    group ``g`` is split by the first two criteria in alternation
    (criterion ``c`` splits it iff ``c + g`` is odd), so those two disagree on
    every conflicting unit; further criteria pick a convention per group at
    random. Shared units get one convention common to all criteria.
    """
    rng = make_rng(config.seed)
    lo, hi = config.unit_len
    if lo < 2 or hi < lo:
        raise InvalidInputError("unit lengths must satisfy 2 <= min <= max")
    chars = [chr(ALPHABET_START + i) for i in range(config.alphabet_size)]
    chars = [chars[i] for i in rng.permutation(len(chars))]
    lexicon, pos = [], 0
    while len(chars) - pos >= lo:
        n = int(rng.integers(lo, hi + 1))
        n = min(n, len(chars) - pos)
        lexicon.append("".join(chars[pos:pos + n]))
        pos += n
    if not lexicon:
        raise InvalidInputError("alphabet too small for a single unit")
    cut = {u: int(rng.integers(1, len(u))) for u in lexicon}

    n_conf = int(np.floor(config.conflict_fraction * len(lexicon) + 0.5))
    conflict = [lexicon[i] for i in sorted(rng.permutation(len(lexicon))[:n_conf])]
    groups = {u: SHARED for u in lexicon}
    for j, u in enumerate(conflict):
        groups[u] = f"g{j % config.conflict_groups}"
    shared_split = {u: bool(rng.integers(2)) for u in lexicon if groups[u] == SHARED}

    group_names = [f"g{g}" for g in range(config.conflict_groups)]
    rules = {}
    for c, name in enumerate(config.criteria):
        if c < 2:
            choice = {g: (c + j) % 2 == 1 for j, g in enumerate(group_names)}
        else:
            choice = {g: bool(rng.integers(2)) for g in group_names}
        r = {}
        for u in lexicon:
            split = shared_split[u] if groups[u] == SHARED else choice[groups[u]]
            if split:
                r[u] = (cut[u],)
        rules[name] = r
    return CriterionSpec(lexicon, rules, groups)


def derive_criterion(spec, name, sources):
    """Add criterion ``name`` that copies, per group, the convention of ``sources[group]``.

    Groups missing from ``sources`` (including shared units) follow the
    first existing criterion.
    """
    default = spec.criteria[0]
    rule = {}
    for u in spec.lexicon:
        src = sources.get(spec.groups.get(u, SHARED), default)
        if spec.rules[src].get(u):
            rule[u] = spec.rules[src][u]
    rules = dict(spec.rules)
    rules[name] = rule
    return CriterionSpec(spec.lexicon, rules, dict(spec.groups))


@dataclass
class SynthData:
    spec: CriterionSpec
    units: dict      # split -> list of unit sequences (shared by all criteria)
    corpora: dict    # criterion -> split -> list of word lists

    def split(self, criterion, split):
        return self.corpora[criterion][split]


SPLITS = ("train", "dev", "test")


def gen_corpora(spec, config):
    """Surface sentences shared by every criterion, each with its own gold."""
    if not spec.lexicon:
        raise InvalidInputError("degenerate spec: empty lexicon")
    rng = make_rng(config.seed + 1)
    lo, hi = config.sentence_units
    sizes = {"train": config.n_train, "dev": config.n_dev, "test": config.n_test}
    units = {}
    for split in SPLITS:
        sents = []
        for _ in range(sizes[split]):
            n = int(rng.integers(lo, hi + 1))
            sents.append([spec.lexicon[i] for i in rng.integers(len(spec.lexicon), size=n)])
        units[split] = sents
    corpora = {c: {s: [spec.segment(c, us) for us in units[s]] for s in SPLITS}
               for c in spec.criteria}
    return SynthData(spec, units, corpora)


def resegment(data, spec):
    """Same surface sentences under a (possibly extended) spec."""
    corpora = {c: {s: [spec.segment(c, us) for us in data.units[s]] for s in SPLITS}
               for c in spec.criteria}
    return SynthData(spec, data.units, corpora)


def _unit_counts(spec, unit, seg, criterion):
    """(correct, predicted, gold) word counts inside one unit occurrence."""
    def spans(words):
        out, p = set(), 0
        for w in words:
            out.add((p, p + len(w)))
            p += len(w)
        return out
    gold = spans(spec.segment_unit(criterion, unit))
    pred = spans(seg)
    return len(gold & pred), len(pred), len(gold)


@dataclass
class OracleBound:
    per_criterion: dict
    mean: float
    policy: dict      # unit -> chosen segmentation (list of words)


def oracle_upper_bound(spec, sentences):
    """F of the best task-blind majority policy on ``sentences`` (unit sequences).

    A task-blind segmenter must give each unit the same segmentation for
    every criterion. Each unit takes the segmentation most criteria use;
    ties are resolved to maximize the mean F over criteria (exhaustively for
    up to 16 tied units, by coordinate ascent beyond that).
    """
    crits = spec.criteria
    freq = {}
    for us in sentences:
        for u in us:
            freq[u] = freq.get(u, 0) + 1
    # base counts from untied units; tied units keep their option tables
    base = np.zeros((len(crits), 3))
    tied, policy = [], {}
    for u, n in freq.items():
        options, votes = [], []
        for c in crits:
            seg = spec.segment_unit(c, u)
            if seg in options:
                votes[options.index(seg)] += 1
            else:
                options.append(seg)
                votes.append(1)
        best = max(votes)
        cands = [o for o, v in zip(options, votes) if v == best]
        table = np.array([[_unit_counts(spec, u, o, c) for c in crits] for o in cands]) * n
        if len(cands) == 1:
            base += table[0]
            policy[u] = cands[0]
        else:
            tied.append((u, cands, table))

    def mean_f(counts):
        corr, pred, gold = counts[..., 0], counts[..., 1], counts[..., 2]
        denom = pred + gold
        f = np.where(denom > 0, 2 * corr / np.where(denom > 0, denom, 1), 1.0)
        return f.mean(-1), f

    if tied and np.prod([len(c) for _, c, _ in tied], dtype=float) <= 2 ** EXACT_TIE_SEARCH:
        combos = np.array(list(itertools.product(*[range(len(c)) for _, c, _ in tied])))
        total = np.broadcast_to(base, (len(combos),) + base.shape).copy()
        for j, (_, _, table) in enumerate(tied):
            total += table[combos[:, j]]
        best = int(np.argmax(mean_f(total)[0]))
        choice = combos[best]
    else:
        choice = np.zeros(len(tied), dtype=int)
        for _ in range(20):
            changed = False
            for j in range(len(tied)):
                scores = []
                for o in range(len(tied[j][1])):
                    trial = base + sum(t[2][o if i == j else choice[i]]
                                       for i, t in enumerate(tied))
                    scores.append(mean_f(trial)[0])
                o = int(np.argmax(scores))
                changed |= o != choice[j]
                choice[j] = o
            if not changed:
                break
    total = base.copy()
    for j, (u, cands, table) in enumerate(tied):
        total += table[choice[j]]
        policy[u] = cands[choice[j]]
    m, f = mean_f(total)
    return OracleBound({c: float(v) for c, v in zip(crits, f)}, float(m), policy)


def write_corpora(data, outdir, config=None, bound=None):
    """``<criterion>.<split>.txt`` files plus ``manifest.json``."""
    os.makedirs(outdir, exist_ok=True)
    files = {}
    for c, splits in data.corpora.items():
        for s, corpus in splits.items():
            path = os.path.join(outdir, f"{c}.{s}.txt")
            with open(path, "w", encoding="utf-8") as f:
                f.write(dumps_segmented(corpus))
            files[f"{c}.{s}"] = os.path.basename(path)
    manifest = {"spec": data.spec.to_dict(), "files": files,
                "conflict_fraction": data.spec.conflict_fraction()}
    if config is not None:
        manifest["config"] = asdict(config)
    if bound is not None:
        manifest["oracle_bound"] = {"per_criterion": bound.per_criterion, "mean": bound.mean}
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=1, sort_keys=True)
    return manifest
