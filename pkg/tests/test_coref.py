import math
import random

import pytest
import torch

from corefdre.common import Vocab
from corefdre.coref import (
    CorefConfig,
    CorefModel,
    Resolver,
    build_resolver,
    decode_chains,
    decode_clusters,
    distance_bucket,
    encode_doc,
    enumerate_spans,
    gold_clusters,
    marginal_loss,
    predict_chains,
    prune_spans,
    train_resolver,
    type_chain,
    width_bucket,
)
from corefdre.data import ChainType, Mention, make_mention
from corefdre.errors import CheckpointMismatch, NoGoldChains, OrderViolation
from corefdre.synthetic import planted_coref_corpus
from gradutil import fd_check

TINY = CorefConfig(embed_dim=8, hidden_dim=6, ffnn_dim=10, feature_dim=4, dtype="float64", lam=0.5, beam=6)


def components(assignments):
    """Independent oracle: BFS over the undirected link graph."""
    n = len(assignments)
    adj = {i: set() for i in range(n)}
    for i, j in enumerate(assignments):
        if j is not None:
            adj[i].add(j)
            adj[j].add(i)
    seen, out = set(), []
    for i in range(n):
        if i in seen:
            continue
        stack, comp = [i], []
        seen.add(i)
        while stack:
            x = stack.pop()
            comp.append(x)
            for y in adj[x] - seen:
                seen.add(y)
                stack.append(y)
        if len(comp) > 1:
            out.append(sorted(comp))
    return sorted(out)


def test_buckets():
    assert [width_bucket(w) for w in (1, 2, 3, 4, 5, 8, 9, 64, 65, 1000)] == [0, 1, 2, 2, 3, 3, 4, 6, 7, 7]
    assert [distance_bucket(d) for d in (0, 1, 4, 5, 7, 8, 15, 16, 63, 64, 500)] == [0, 1, 4, 5, 5, 6, 6, 7, 8, 9, 9]
    with pytest.raises(ValueError):
        distance_bucket(-1)


def test_enumerate_spans(frank_dialogue):
    spans = enumerate_spans(frank_dialogue, 3)
    want = sum(min(3, len(u.tokens) - s) for u in frank_dialogue.utterances for s in range(len(u.tokens)))
    assert len(spans) == want == len(set(spans))
    assert spans == sorted(spans)
    assert all(e - s < 3 for _, s, e in spans)
    with pytest.raises(ValueError):
        enumerate_spans(frank_dialogue, 0)


def test_prune_keeps_ceil_lambda_t_with_stable_ties():
    assert prune_spans([0.5, 0.9, 0.5, 0.5, 0.1], 0.4, 5) == [0, 1]
    assert prune_spans([1.0, 1.0, 1.0], 0.5, 3) == [0, 1]
    assert len(prune_spans(torch.randn(50), 0.4, 23)) == math.ceil(0.4 * 23)
    with pytest.raises(ValueError):
        prune_spans([1.0], 0.0, 1)


def test_decode_matches_union_find_oracle():
    rng = random.Random(3)
    for _ in range(300):
        n = rng.randint(0, 15)
        a = [None if i == 0 or rng.random() < 0.4 else rng.randrange(i) for i in range(n)]
        assert sorted(decode_clusters(a)) == components(a)


def test_decode_rejects_forward_links():
    with pytest.raises(OrderViolation):
        decode_clusters([None, 1])
    with pytest.raises(OrderViolation):
        decode_clusters([None, None, 5])


def test_type_chain(frank_dialogue):
    ms = [make_mention(frank_dialogue, 4, 0, 0)]  # "I" said by S1
    assert type_chain(frank_dialogue, ms) == (ChainType.SPEAKER, "S1")
    ms = [make_mention(frank_dialogue, 2, 3, 4), make_mention(frank_dialogue, 3, 3, 3)]
    assert type_chain(frank_dialogue, ms) == (ChainType.PERSON, "your brother")
    ms = [make_mention(frank_dialogue, 4, 2, 2)]  # "you" addressed by S1 -> previous other speaker
    assert type_chain(frank_dialogue, ms) == (ChainType.SPEAKER, "S2")
    chains = decode_chains(frank_dialogue, [(3, 3, 3), (4, 5, 5), (6, 3, 3)], [None, 0, 1])
    assert [m.surface for m in chains[0].mentions] == ["he's", "him", "he'll"]


@pytest.fixture(scope="module")
def tiny_scores():
    torch.manual_seed(0)
    d = planted_coref_corpus(1, seed=5)[0]
    vocab = Vocab.from_dialogues([d])
    model = CorefModel(len(vocab), TINY).double().eval()
    doc = encode_doc(d, vocab)
    spans = enumerate_spans(d, TINY.max_width)
    return d, vocab, model, doc, spans, model.score_document(doc, spans)


def test_score_decomposition_is_exact(tiny_scores):
    *_, ds = tiny_scores
    K = len(ds.kept)
    assert K == math.ceil(TINY.lam * sum(len(u.tokens) for u in tiny_scores[0].utterances))
    assert torch.all(ds.scores[:, 0] == 0)
    for i in range(K):
        assert float(ds.total_score(i, None).total) == 0.0
        for col in range(ds.antecedents.shape[1]):
            j = int(ds.antecedents[i, col])
            if j < 0:
                assert ds.scores[i, col + 1] == float("-inf")
                continue
            ps = ds.total_score(i, j)
            assert j < i
            assert torch.allclose(ps.total, ps.mention_i + ps.mention_j + ps.antecedent, rtol=0, atol=0)
            assert torch.allclose(ds.scores[i, col + 1], ps.total, rtol=0, atol=1e-12)
    with pytest.raises(OrderViolation):
        ds.total_score(1, 1)


def test_argmax_tie_goes_to_dummy(tiny_scores):
    *_, ds = tiny_scores
    scores = ds.scores.clone()
    scores[:, 1:] = torch.where(torch.isfinite(scores[:, 1:]), torch.zeros_like(scores[:, 1:]), scores[:, 1:])
    ds2 = type(ds)(ds.spans, ds.kept, ds.g, ds.mention, ds.antecedents, ds.pair, scores, ds.model, ds.speakers)
    assert ds2.assignments() == [None] * len(ds.kept)
    scores[:, 0] = -1.0
    ds3 = type(ds)(ds.spans, ds.kept, ds.g, ds.mention, ds.antecedents, ds.pair, scores, ds.model, ds.speakers)
    first = [None if i == 0 else 0 if i <= TINY.beam else i - TINY.beam for i in range(len(ds.kept))]
    assert ds3.assignments() == first


def test_marginal_loss_sanity(tiny_scores):
    d, _, _, _, _, ds = tiny_scores
    loss = marginal_loss(ds, gold_clusters(d))
    assert loss.item() >= 0
    # with no gold clusters every span's gold set is the dummy alone
    none = marginal_loss(ds, {})
    assert torch.allclose(none, torch.logsumexp(ds.scores, dim=1).sum())
    # putting every kept span in one cluster can only lower the loss
    allin = marginal_loss(ds, {ds.spans[k]: 0 for k in ds.kept})
    assert allin.item() <= none.item() + 1e-12


def test_gradients_match_finite_differences(tiny_scores):
    d, vocab, model, doc, spans, _ = tiny_scores
    g = model.span_representations(doc, spans[:6]).detach()
    phi = model.pair_features(torch.tensor([1, 3, 9]), torch.tensor([True, False, True])).detach()
    m_params = [model.ffnn_m[0].weight, model.w_m.weight]
    assert fd_check(lambda: model.mention_score(g).sum(), m_params) < 1e-4
    a_params = [model.ffnn_a[0].weight, model.ffnn_a[3].bias, model.w_a.weight]
    assert fd_check(lambda: model.antecedent_score(g[:3], g[3:6], phi).pow(2).sum(), a_params) < 1e-4
    clusters = gold_clusters(d)
    full = [model.lstm.weight_ih_l0, model.head_attn.weight, model.w_a.weight]
    assert fd_check(lambda: marginal_loss(model.score_document(doc, spans), clusters), full) < 1e-4


def test_training_reduces_loss_and_checkpoints_round_trip(tmp_path):
    train = planted_coref_corpus(12, seed=2)
    cfg = CorefConfig(embed_dim=12, hidden_dim=12, ffnn_dim=16, feature_dim=4, epochs=4, lr=3e-3)
    res = train_resolver(train, cfg)
    assert res.loss_log[-1] < res.loss_log[0]
    res.save(tmp_path / "c.pt")
    back = Resolver.load(tmp_path / "c.pt", expected=cfg)
    d = train[0]
    assert torch.equal(res.scores(d)[0].scores, back.scores(d)[0].scores)
    assert predict_chains(d, res) == predict_chains(d, back)
    with pytest.raises(CheckpointMismatch):
        Resolver.load(tmp_path / "c.pt", expected=CorefConfig(embed_dim=13))


def test_training_is_deterministic():
    train = planted_coref_corpus(4, seed=2)
    cfg = CorefConfig(embed_dim=8, hidden_dim=8, ffnn_dim=8, feature_dim=4, epochs=2)
    assert train_resolver(train, cfg).loss_log == train_resolver(train, cfg).loss_log


def test_requires_gold_chains():
    with pytest.raises(NoGoldChains):
        train_resolver([d.without_chains() for d in planted_coref_corpus(2)], CorefConfig(epochs=1))


def test_predicted_chains_are_sidecar_dicts():
    d = planted_coref_corpus(1, seed=4)[0]
    res = build_resolver([d], CorefConfig(embed_dim=8, hidden_dim=8, ffnn_dim=8, feature_dim=4))
    for c in predict_chains(d, res):
        assert set(c) == {"type", "head", "mentions"}
        assert len(c["mentions"]) >= 2
        assert all(set(m) == {"u", "s", "e", "text"} for m in c["mentions"])
