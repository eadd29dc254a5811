"""Scoring, slices, corpus statistics and ablation grids."""
from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Hashable, Iterable, Mapping, Sequence

from .data import DEFAULT_INVENTORY, ChainType, Dialogue, RelationInventory, chain_mentions, find_surface, mentions_of_argument
from .errors import AmbiguousHeadError, MissingPrediction

PairKey = Hashable  # (dialogue id, pair index) throughout


@dataclass
class LabelScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class F1Report:
    tp: int
    fp: int
    fn: int
    per_label: dict[str, LabelScore] = field(default_factory=dict)
    pairs: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "support": self.support,
            "pairs": self.pairs,
            "per_label": {
                k: {"precision": v.precision, "recall": v.recall, "f1": v.f1, "support": v.support, **asdict(v)}
                for k, v in sorted(self.per_label.items())
            },
        }


def score(
    predictions: Mapping[PairKey, Iterable[str]],
    gold: Mapping[PairKey, Iterable[str]],
    inventory: RelationInventory = DEFAULT_INVENTORY,
) -> F1Report:
    """Micro P/R/F1 over (pair, label) instances, no-relation label excluded.

    Every gold pair needs a prediction; predictions for pairs absent from
    ``gold`` are ignored.
    """
    missing = [k for k in gold if k not in predictions]
    if missing:
        raise MissingPrediction(f"{len(missing)} gold pairs have no prediction", missing)
    per: dict[str, LabelScore] = {}
    tp = fp = fn = 0
    for key, g in gold.items():
        gs = {x for x in g if x != inventory.no_relation}
        ps = {x for x in predictions[key] if x != inventory.no_relation}
        for label in gs | ps:
            s = per.setdefault(label, LabelScore())
            if label in gs and label in ps:
                s.tp += 1
                tp += 1
            elif label in ps:
                s.fp += 1
                fp += 1
            else:
                s.fn += 1
                fn += 1
    return F1Report(tp, fp, fn, per, len(gold))


@dataclass
class SliceReport:
    name: str
    slices: dict[str, F1Report]
    assignment: dict[PairKey, str]

    @property
    def support(self) -> int:
        return sum(r.support for r in self.slices.values())

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "slices": {k: v.to_json() for k, v in self.slices.items()},
            "pairs": {k: sum(1 for v in self.assignment.values() if v == k) for k in self.slices},
        }


def _sliced(name, keys_order, assignment, predictions, gold, inventory) -> SliceReport:
    slices = {}
    for k in keys_order:
        g = {p: v for p, v in gold.items() if assignment[p] == k}
        slices[k] = score(predictions, g, inventory)
    return SliceReport(name, slices, assignment)


def _gold(dialogues: Sequence[Dialogue]) -> dict:
    return {(d.id, k): p.positive_labels for d in dialogues for k, p in enumerate(d.pairs)}


def _located(d: Dialogue, arg: str, chain_aware: bool) -> set[int]:
    if not chain_aware:
        return {m.utterance_index for m in find_surface(d, arg)}
    try:
        ms = mentions_of_argument(d, arg)
    except AmbiguousHeadError:
        ms = chain_mentions(d, arg)
    return {m.utterance_index for m in ms}


def inter_intra(d: Dialogue, pair_index: int, chain_aware: bool = True) -> str:
    """INTRA when one utterance holds a mention of each argument."""
    p = d.pairs[pair_index]
    return "intra" if _located(d, p.subject, chain_aware) & _located(d, p.object, chain_aware) else "inter"


def slice_inter_intra(
    dialogues: Sequence[Dialogue],
    predictions: Mapping[PairKey, Iterable[str]],
    chain_aware: bool = True,
    inventory: RelationInventory = DEFAULT_INVENTORY,
) -> SliceReport:
    assignment = {(d.id, k): inter_intra(d, k, chain_aware) for d in dialogues for k in range(len(d.pairs))}
    name = "inter_intra" if chain_aware else "inter_intra_names"
    return _sliced(name, ("intra", "inter"), assignment, predictions, _gold(dialogues), inventory)


def slice_disagreement(dialogues: Sequence[Dialogue]) -> list[PairKey]:
    """Pairs whose inter/intra slice differs between the chain-aware and name-only definitions."""
    return [
        (d.id, k)
        for d in dialogues
        for k in range(len(d.pairs))
        if inter_intra(d, k, True) != inter_intra(d, k, False)
    ]


SPEAKER_BUCKETS = ("2", "3", "4", "≥5")


def speaker_bucket(n: int) -> str:
    # dialogues with a single speaker fall in the smallest bucket
    if n <= 2:
        return "2"
    return str(n) if n < 5 else "≥5"


def slice_speakers(
    dialogues: Sequence[Dialogue],
    predictions: Mapping[PairKey, Iterable[str]],
    inventory: RelationInventory = DEFAULT_INVENTORY,
) -> SliceReport:
    assignment = {(d.id, k): speaker_bucket(len(d.speakers)) for d in dialogues for k in range(len(d.pairs))}
    return _sliced("speakers", SPEAKER_BUCKETS, assignment, predictions, _gold(dialogues), inventory)


STAT_ROWS = (
    "speaker_chains",
    "person_chains",
    "location_chains",
    "organization_chains",
    "mentions",
    "chains",
    "dialogues",
    "utterances",
    "pairs",
)


def split_stats(dialogues: Sequence[Dialogue]) -> dict[str, int]:
    row = dict.fromkeys(STAT_ROWS, 0)
    for d in dialogues:
        row["dialogues"] += 1
        row["utterances"] += len(d.utterances)
        row["pairs"] += len(d.pairs)
        row["chains"] += len(d.chains)
        for c in d.chains:
            row[f"{ChainType(c.chain_type).value}_chains"] += 1
            row["mentions"] += len(c.mentions)
    return row


def stats(splits: Mapping[str, Sequence[Dialogue]]) -> dict:
    """Per-split counts plus a total column and mentions-per-chain ratios."""
    out = {name: split_stats(ds) for name, ds in splits.items()}
    total = dict.fromkeys(STAT_ROWS, 0)
    for row in out.values():
        for k in STAT_ROWS:
            total[k] += row[k]
    out["total"] = total
    for row in out.values():
        row["mentions_per_chain"] = row["mentions"] / row["chains"] if row["chains"] else 0.0
    return out


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    def cell(x):
        if isinstance(x, float):
            return f"{x:.4f}"
        if isinstance(x, int):
            return f"{x:,}"
        return str(x)

    body = [[cell(x) for x in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in body)) if body else len(str(h)) for i, h in enumerate(headers)]
    lines = ["  ".join(str(h).ljust(w) if i == 0 else str(h).rjust(w) for i, (h, w) in enumerate(zip(headers, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(x.ljust(w) if i == 0 else x.rjust(w) for i, (x, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def stats_table(st: Mapping[str, Mapping]) -> str:
    cols = list(st)
    rows = [[k] + [st[c][k] for c in cols] for k in STAT_ROWS + ("mentions_per_chain",)]
    return format_table([""] + cols, rows)


def report_table(rep: F1Report, title: str = "overall") -> str:
    rows = [[title, rep.precision, rep.recall, rep.f1, rep.support]]
    rows += [[k, v.precision, v.recall, v.f1, v.support] for k, v in sorted(rep.per_label.items())]
    return format_table(["label", "P", "R", "F1", "support"], rows)


def slice_table(sr: SliceReport) -> str:
    rows = [[k, v.precision, v.recall, v.f1, v.support] for k, v in sr.slices.items()]
    return format_table([sr.name, "P", "R", "F1", "support"], rows)


# ------------------------------------------------------------------ ablations

@dataclass
class AblationRow:
    strip: tuple[str, ...]
    seeds: list[int]
    dev_f1: list[float]
    test_f1: list[float]

    @staticmethod
    def _mean_std(xs):
        if not xs:
            return 0.0, 0.0
        return statistics.fmean(xs), statistics.stdev(xs) if len(xs) > 1 else 0.0

    def to_json(self) -> dict:
        dm, ds = self._mean_std(self.dev_f1)
        tm, ts = self._mean_std(self.test_f1)
        return {
            "strip": list(self.strip),
            "seeds": self.seeds,
            "dev_f1": self.dev_f1,
            "test_f1": self.test_f1,
            "dev_mean": dm,
            "dev_std": ds,
            "test_mean": tm,
            "test_std": ts,
        }


def run_ablation(
    train: Sequence[Dialogue],
    dev: Sequence[Dialogue],
    test: Sequence[Dialogue],
    cfg,
    edge_sets: Sequence[Iterable[str]] = ((), ("CC",), ("MU",), ("CC", "MU")),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    sidecars=None,
    log_fn=None,
) -> list[AblationRow]:
    """Train one independent model per (edge set, seed) and collect dev/test F1.

    Dev F1 is the best epoch's score; test F1 is measured with that checkpoint.
    """
    from .model import evaluate_dre, gold_of, train_dre

    rows = []
    for kinds in edge_sets:
        kinds = tuple(sorted(k.upper() for k in kinds))
        row = AblationRow(kinds, list(seeds), [], [])
        for seed in seeds:
            trained = train_dre(train, dev, replace(cfg, strip=kinds, seed=seed), sidecars)
            best = trained.log[trained.best_epoch]["dev_f1"] if trained.log else 0.0
            preds = evaluate_dre(trained, test, sidecars)
            rep = score({k: v.labels for k, v in preds.items()}, gold_of(test))
            row.dev_f1.append(best)
            row.test_f1.append(rep.f1)
            if log_fn:
                log_fn({"strip": list(kinds), "seed": seed, "dev_f1": best, "test_f1": rep.f1})
        rows.append(row)
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    out = []
    for r in rows:
        j = r.to_json()
        name = "w/o " + "+".join(r.strip) if r.strip else "full"
        out.append([name, j["dev_mean"], j["dev_std"], j["test_mean"], j["test_std"], len(r.seeds)])
    return format_table(["setting", "dev F1", "dev σ", "test F1", "test σ", "runs"], out)


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


# ------------------------------------------------------------------ plots

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_per_relation(rep: F1Report, path) -> None:
    plt = _pyplot()
    labels = sorted(rep.per_label)
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(labels)), 4))
    ax.bar(range(len(labels)), [rep.per_label[k].f1 for k in labels])
    ax.set_xticks(range(len(labels)), labels, rotation=75, ha="right", fontsize=7)
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_slices(sr: SliceReport, path) -> None:
    plt = _pyplot()
    keys = list(sr.slices)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(keys, [sr.slices[k].f1 for k in keys])
    ax.set_xlabel(sr.name)
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
