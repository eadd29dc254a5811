"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
Criterion 1 uses the released corpus when ``COREFDRE_CPLUS_DIR`` points at a
directory holding ``{train,dev,test}.json`` and ``{train,dev,test}.chains.json``;
otherwise it checks the bundled fixture against hand counts.
"""
import contextlib
import json
import math
import os
import random
import statistics
import sys
import time
from collections import Counter
from math import comb
from pathlib import Path

import pytest
import torch

from conftest import ACCEPTANCE, write_split
from corefdre.cli import main as cli_main
from corefdre.common import Vocab
from corefdre.coref import (
    CorefConfig,
    CorefModel,
    decode_clusters,
    encode_doc,
    enumerate_spans,
    gold_clusters,
    marginal_loss,
    predict_chains,
    train_resolver,
)
from corefdre.corpus import load_corpus
from corefdre.data import NO_RELATION, RELATIONS
from corefdre.errors import OrderViolation
from corefdre.evaluation import score, slice_inter_intra, slice_speakers, stats
from corefdre.graphs import EdgeKind, NodeKind, Recipe, build, build_tucore, strip_edges
from corefdre import model as M
from corefdre.synthetic import chain_dependent_dre_corpus, planted_coref_corpus
from gradutil import fd_check
from test_coref import components
from test_evaluation import oracle_f1

E = EdgeKind
RELEASED_ENV = "COREFDRE_CPLUS_DIR"

# published corpus statistics, rows x (train, dev, test)
TABLE1 = {
    "speaker_chains": (2277, 748, 784),
    "person_chains": (645, 225, 232),
    "location_chains": (48, 20, 37),
    "organization_chains": (26, 8, 18),
    "mentions": (21990, 7183, 7196),
    "chains": (2996, 1001, 1071),
    "dialogues": (1073, 358, 357),
    "utterances": (14024, 4685, 4420),
    "pairs": (5997, 1914, 1862),
}
TOTAL_MENTIONS, TOTAL_CHAINS = 36369, 5068


@contextlib.contextmanager
def criterion(n, title, limit=None):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - t0
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
    except BaseException as e:
        line = f"ACCEPTANCE {n} FAIL  {title}: {e!s:.200}"
        ACCEPTANCE[n] = line
        print(line)
        raise
    extra = " ".join(f"{k}={v}" for k, v in detail.items())
    line = f"ACCEPTANCE {n} PASS  {title} ({time.perf_counter() - t0:.1f}s) {extra}".rstrip()
    ACCEPTANCE[n] = line
    print(line)


def kind_counts(g):
    return Counter(k for _, _, k in g.edges)


# 1 ---------------------------------------------------------------------------

def test_1_dataset_statistics(fixture_corpus):
    root = os.environ.get(RELEASED_ENV)
    with criterion(1, "dataset statistics", limit=30) as info:
        if root:
            splits = {
                s: load_corpus(Path(root) / f"{s}.json", Path(root) / f"{s}.chains.json", validate=False)
                for s in ("train", "dev", "test")
            }
            st = stats(splits)
            for row, cols in TABLE1.items():
                assert tuple(st[s][row] for s in ("train", "dev", "test")) == cols, row
            assert st["total"]["mentions"] == TOTAL_MENTIONS and st["total"]["chains"] == TOTAL_CHAINS
            assert abs(st["total"]["mentions_per_chain"] - TOTAL_MENTIONS / TOTAL_CHAINS) < 0.01
            info["source"] = "released"
        else:
            # the published table is internally consistent
            for k in range(3):
                assert sum(TABLE1[f"{t}_chains"][k] for t in ("speaker", "person", "location", "organization")) == TABLE1["chains"][k]
            assert sum(TABLE1["mentions"]) == TOTAL_MENTIONS and sum(TABLE1["chains"]) == TOTAL_CHAINS
            assert round(TOTAL_MENTIONS / TOTAL_CHAINS, 2) == 7.18
            st = stats({"fixture": fixture_corpus})["fixture"]
            hand = {
                "speaker_chains": 3,  # S2 and S1 in dialogue 0, S3 in dialogue 1
                "person_chains": 1,  # Frank
                "location_chains": 1,  # Uruguay
                "organization_chains": 1,  # Paul's Café
                "mentions": 5 + 5 + 1 + 3 + 3 + 3,
                "chains": 6,
                "dialogues": 4,
                "utterances": 7 + 4 + 3 + 3,
                "pairs": 3 + 2 + 1 + 1,
            }
            assert {k: st[k] for k in hand} == hand
            assert st["mentions_per_chain"] == pytest.approx(20 / 6)
            info["source"] = "fixture"


# 2 ---------------------------------------------------------------------------

def test_2_graph_structure_oracle(fixture_corpus):
    with criterion(2, "graph-structure oracle", limit=5) as info:
        frank_dialogue = fixture_corpus[0]
        checked = 0
        for d in fixture_corpus:
            for p in d.pairs:
                sub = [m for c in d.chains if c.head == p.subject for m in c.mentions]
                obj = [m for c in d.chains if c.head == p.object for m in c.mentions]
                mentions = {m.span for m in sub} | {m.span for m in obj}
                g = build_tucore(d, p)
                c = kind_counts(g)
                assert c[E.CC] == comb(len(sub), 2) + comb(len(obj), 2)
                assert c[E.MU] == len(mentions)
                assert c[E.DU] == len(d.utterances) and c[E.UU] == len(d.utterances) - 1
                assert Counter(n.kind for n in g.nodes) == Counter(
                    {NodeKind.DIALOGUE: 1, NodeKind.UTTERANCE: len(d.utterances), NodeKind.ARGUMENT: 2, NodeKind.MENTION: len(mentions)}
                )
                (r,) = build(Recipe.REDIALOG, d, p)
                n = 2 + len(mentions)
                assert len(r.nodes) == n and len(r.edges) == comb(n, 2)
                checked += 1
        # hand enumeration of the first fixture dialogue, pair (S2, Pheebs)
        p = frank_dialogue.pairs[0]
        (t,) = build(Recipe.TUCORE, frank_dialogue, p)
        assert kind_counts(t) == {E.DU: 7, E.UU: 6, E.AU: 4, E.MU: 5, E.CC: 10}
        (h,) = build(Recipe.HGAT, frank_dialogue, p)
        hc = kind_counts(h)
        assert len(hc) == 8
        assert hc == {E.UW: 48, E.UA: 4, E.US: 7, E.TW: 1, E.TA: 2, E.CW: 4, E.CS: 1, E.CU: 4}
        assert Counter(n.kind for n in h.nodes) == {
            NodeKind.ARGUMENT: 2, NodeKind.UTTERANCE: 7, NodeKind.SPEAKER: 2, NodeKind.TYPE: 1, NodeKind.WORD: 38,
        }
        mg, eg = build(Recipe.GAIN_MENTION, frank_dialogue, p)
        assert kind_counts(mg) == {E.IE: 20, E.IU: 5, E.DM: 10} and len(mg.nodes) == 11
        assert kind_counts(eg) == {E.EE: 2} and len(eg.nodes) == 3
        # pair (S2, Frank): two 5-mention chains
        (t,) = build(Recipe.TUCORE, frank_dialogue, frank_dialogue.pairs[1])
        assert kind_counts(t) == {E.DU: 7, E.UU: 6, E.AU: 3, E.MU: 10, E.CC: 20}
        info["pairs"] = checked


# 3 ---------------------------------------------------------------------------

def test_3_ablation_identity(fixture_corpus):
    with criterion(3, "ablation identity") as info:
        torch.manual_seed(0)
        cfg = M.DREConfig(embed_dim=16, hidden_dim=16, dtype="float64")
        net = M.DREModel(Vocab.from_dialogues(fixture_corpus), cfg).double().eval()
        for d in fixture_corpus:
            enc = net.encode(d)
            for p in d.pairs:
                a = strip_edges(build_tucore(d, p), {E.CC, E.MU})
                b = build_tucore(d.without_chains(), p)
                assert a.nodes == b.nodes and a.edges == b.edges
                ja, jb = a.to_json(), b.to_json()
                ja.pop("warnings", None), jb.pop("warnings", None)
                assert ja == jb
                la = net.logits((M.graph_tensors(d, a),), enc)
                lb = net.logits((M.graph_tensors(d, b),), enc)
                assert torch.equal(la, lb)
        # end to end: training with stripped gold graphs equals training without chains
        ds = chain_dependent_dre_corpus(24, seed=5)
        base = M.DREConfig(embed_dim=16, hidden_dim=16, epochs=3, lr=3e-3, seed=11)
        stripped = M.train_dre(ds[:14], ds[14:19], M.DREConfig(**{**base.__dict__, "strip": ("CC", "MU")}))
        none = M.train_dre(ds[:14], ds[14:19], M.DREConfig(**{**base.__dict__, "chain_source": "none"}))
        assert stripped.log == none.log
        pa = M.evaluate_dre(stripped, ds[19:])
        pb = M.evaluate_dre(none, [d.without_chains() for d in ds[19:]])
        assert {k: v.probabilities for k, v in pa.items()} == {k: v.probabilities for k, v in pb.items()}
        info["log_epochs"] = len(none.log)


# 4 ---------------------------------------------------------------------------

def test_4_coreference_scorer_algebra():
    with criterion(4, "coreference scorer algebra", limit=10) as info:
        torch.manual_seed(1)
        d = planted_coref_corpus(1, seed=3)[0]
        vocab = Vocab.from_dialogues([d])
        cfg = CorefConfig(embed_dim=8, hidden_dim=8, ffnn_dim=12, feature_dim=4, dtype="float64", beam=8)
        model = CorefModel(len(vocab), cfg).double().eval()
        ds = model.score_document(encode_doc(d, vocab), enumerate_spans(d, cfg.max_width))
        K = len(ds.kept)
        pairs = 0
        for i in range(K):
            assert ds.scores[i, 0] == 0 and float(ds.total_score(i, None).total) == 0.0
            for col in range(ds.antecedents.shape[1]):
                j = int(ds.antecedents[i, col])
                if j < 0:
                    continue
                assert j < i
                ps = ds.total_score(i, j)
                assert torch.equal(ps.total, ps.mention_i + ps.mention_j + ps.antecedent)
                assert torch.allclose(ds.scores[i, col + 1], ps.total, rtol=0, atol=1e-12)
                pairs += 1
            with pytest.raises(OrderViolation):
                ds.total_score(i, i)
        assert all(a is None or a < i for i, a in enumerate(ds.assignments()))
        rng = random.Random(2024)
        for _ in range(1000):
            n = rng.randint(0, 30)
            a = [None if i == 0 or rng.random() < rng.random() else rng.randrange(i) for i in range(n)]
            assert sorted(decode_clusters(a)) == components(a)
        info["pairs"] = pairs
        info["fixtures"] = 1000


# 5 ---------------------------------------------------------------------------

def test_5_gradient_checks(fixture_corpus):
    with criterion(5, "gradient checks", limit=60) as info:
        torch.manual_seed(2)
        d = planted_coref_corpus(1, seed=8)[0]
        vocab = Vocab.from_dialogues([d])
        cfg = CorefConfig(embed_dim=8, hidden_dim=6, ffnn_dim=10, feature_dim=4, dtype="float64")
        cm = CorefModel(len(vocab), cfg).double()
        doc = encode_doc(d, vocab)
        spans = enumerate_spans(d, cfg.max_width)
        g = cm.span_representations(doc, spans[:8]).detach()
        phi = cm.pair_features(torch.tensor([1, 2, 6, 40]), torch.tensor([True, False, False, True])).detach()
        errs = {
            "mention": fd_check(lambda: cm.mention_score(g).sum(), [cm.ffnn_m[0].weight, cm.ffnn_m[3].weight, cm.w_m.weight]),
            "antecedent": fd_check(
                lambda: cm.antecedent_score(g[:4], g[4:8], phi).sum(),
                [cm.ffnn_a[0].weight, cm.w_a.weight, cm.dist_emb.weight],
            ),
        }
        gcn = M.RelationalGCN(6, M.RECIPE_KINDS[Recipe.TUCORE], 2).double()
        gr = build_tucore(fixture_corpus[0], fixture_corpus[0].pairs[1])
        gt = M.GraphTensors(gr, None, M.edge_tensors(gr), gr.node_index(), 0, 1)
        x = torch.randn(len(gr.nodes), 6, dtype=torch.float64, requires_grad=True)
        errs["propagate"] = fd_check(
            lambda: M.propagate(gcn, gt, x).pow(2).sum(),
            [x, gcn.rel[0]["CC"].weight, gcn.rel[1]["MU"].weight, gcn.self_loop[0].weight],
        )
        dcfg = M.DREConfig(embed_dim=8, hidden_dim=8, dtype="float64")
        net = M.DREModel(Vocab.from_dialogues(fixture_corpus), dcfg).double()
        (ex,) = M.prepare(fixture_corpus[:1], dcfg, net.vocab)
        errs["dre_loss"] = fd_check(
            lambda: M.example_loss(net, ex),
            [net.encoder.embed.weight, net.encoder.lstm.weight_ih_l0, net.encoder.attn.out_proj.weight,
             net.gcn.rel[0]["AU"].weight, net.head.mlp[2].weight],
        )
        worst = max(errs.values())
        assert worst < 1e-4, errs
        info["max_rel_err"] = f"{worst:.1e}"


# 6 ---------------------------------------------------------------------------

PLANTED_CFG = CorefConfig(epochs=10, embed_dim=32, hidden_dim=32, ffnn_dim=64, feature_dim=16, lr=3e-3, dropout=0.2)


def chain_sets_of_prediction(chains):
    return {frozenset((m["u"], m["s"], m["e"]) for m in c["mentions"]) for c in chains}


def test_6_planted_chain_recovery():
    with criterion(6, "planted-chain recovery", limit=600) as info:
        train = planted_coref_corpus(200, seed=1)
        test = planted_coref_corpus(100, seed=7)
        res = train_resolver(train, PLANTED_CFG)
        hits = 0
        for d in test:
            gold = {frozenset(m.span for m in c.mentions) for c in d.chains}
            hits += chain_sets_of_prediction(predict_chains(d, res)) == gold
        rate = hits / len(test)
        info["exact_match"] = rate
        assert rate >= 0.95, f"exact-match {rate:.2f}"


# 7 ---------------------------------------------------------------------------

def test_7_directional_coreference_benefit():
    with criterion(7, "coreference benefit gold vs none", limit=1800) as info:
        data = chain_dependent_dre_corpus(200, seed=0)
        train, dev, test = data[:120], data[120:160], data[160:]
        gold = M.gold_of(test)
        f1 = {"gold": [], "none": []}
        for seed in (0, 1, 2):
            for source in f1:
                cfg = M.DREConfig(recipe="TUCORE", chain_source=source, embed_dim=32, hidden_dim=32,
                                  epochs=15, lr=3e-3, seed=seed)
                trained = M.train_dre(train, dev, cfg)
                preds = M.evaluate_dre(trained, test)
                f1[source].append(score({k: v.labels for k, v in preds.items()}, gold).f1)
        gap = 100 * (statistics.fmean(f1["gold"]) - statistics.fmean(f1["none"]))
        info["gold"] = f"{statistics.fmean(f1['gold']):.3f}"
        info["none"] = f"{statistics.fmean(f1['none']):.3f}"
        info["gap_points"] = f"{gap:.1f}"
        assert gap >= 5.0, f1


# 8 ---------------------------------------------------------------------------

def test_8_scorer_oracle_and_partitions(fixture_corpus):
    with criterion(8, "scorer oracle equivalence") as info:
        rng = random.Random(7)
        labels = list(RELATIONS) + [NO_RELATION]
        for _ in range(1000):
            gold = {(f"d{rng.randrange(5)}", i): set(rng.sample(labels, rng.randint(1, 4))) for i in range(rng.randint(1, 20))}
            pred = {k: set(rng.sample(labels, rng.randint(1, 4))) for k in gold}
            rep = score(pred, gold)
            assert (rep.precision, rep.recall, rep.f1) == oracle_f1(pred, gold)
        corpus = fixture_corpus + chain_dependent_dre_corpus(30, seed=4)
        g = M.gold_of(corpus)
        pred = {k: set(rng.sample(labels, 2)) for k in g}
        total = score(pred, g)
        for sr in (slice_inter_intra(corpus, pred), slice_inter_intra(corpus, pred, chain_aware=False),
                   slice_speakers(corpus, pred)):
            assert sr.support == total.support
            assert sum(r.pairs for r in sr.slices.values()) == len(g)
        info["fixtures"] = 1000


# 9 ---------------------------------------------------------------------------

def test_9_determinism(tmp_path, capsys):
    with criterion(9, "pipeline determinism") as info:
        data = tmp_path / "data"
        data.mkdir()
        ds = chain_dependent_dre_corpus(24, seed=6)
        write_split(ds[:14], data, "train")
        write_split(ds[14:19], data, "dev")
        write_split(ds[19:], data, "test")
        (data / "run.json").write_text(json.dumps({
            "data_root": str(data), "train": "train.json", "dev": "dev.json", "test": "test.json",
            "train_chains": "train.chains.json", "dev_chains": "dev.chains.json", "test_chains": "test.chains.json",
            "epochs": 2, "lr": 0.003, "embed_dim": 16, "hidden_dim": 16,
            "coref": {"epochs": 2, "embed_dim": 8, "hidden_dim": 8, "ffnn_dim": 8, "feature_dim": 4},
        }))
        artifacts = []
        for run in ("a", "b"):
            out = tmp_path / run
            cfg = ["--config", str(data / "run.json"), "--out", str(out)]
            assert cli_main(["train-coref", *cfg]) == 0
            assert cli_main(["train-dre", *cfg]) == 0
            assert cli_main(["eval-dre", *cfg, "--checkpoint", str(out / "checkpoints" / "dre.pt")]) == 0
            for recipe in ("TUCORE", "REDIALOG", "GAIN", "HGAT"):
                assert cli_main(["build-graph", str(data / "test.json"), "--chains", str(data / "test.chains.json"),
                                 "--dialogue", "test-0", "--pair", "1", "--recipe", recipe, *cfg]) == 0
            files = sorted(p for p in out.rglob("*.json"))
            artifacts.append({p.relative_to(out): p.read_bytes() for p in files})
        capsys.readouterr()
        assert artifacts[0].keys() == artifacts[1].keys()
        for k in artifacts[0]:
            assert artifacts[0][k] == artifacts[1][k], k
        info["artifacts"] = len(artifacts[0])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
