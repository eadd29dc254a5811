"""End-to-end span-ranking coreference resolution.

Every span of up to ``max_width`` tokens inside one utterance is a mention
candidate. For span i and an earlier span j::

    s_m(i)   = w_m . FFNN_m(g_i)
    s_a(i,j) = w_a . FFNN_a([g_i, g_j, g_i * g_j, phi(i,j)])
    s(i,j)   = s_m(i) + s_m(j) + s_a(i,j),     s(i, eps) = 0

``g_i`` concatenates BiLSTM states at the span boundaries, an attention
weighted sum of the span's word embeddings, and a width embedding.
``phi(i,j)`` embeds the bucketed antecedent offset and a same-speaker flag.
Training maximises the marginal likelihood of gold antecedents.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn

from .common import DTYPES, Vocab, fingerprint, load_word_vectors, seed_everything
from .corpus import chain_to_json
from .data import ChainType, CoreferenceChain, Dialogue, Mention, sorted_mentions
from .errors import CheckpointMismatch, NoGoldChains, NonFiniteLoss, OrderViolation

log = logging.getLogger(__name__)

WIDTH_BUCKETS = 8
DISTANCE_BUCKETS = 10
CHECKPOINT_FORMAT = "corefdre.coref/1"


@dataclass
class CorefConfig:
    seed: int = 13
    embed_dim: int = 50
    hidden_dim: int = 64
    ffnn_dim: int = 100
    feature_dim: int = 20
    max_width: int = 10
    lam: float = 0.4
    beam: int = 50
    lr: float = 1e-3
    epochs: int = 20
    dropout: float = 0.0
    embeddings_path: str | None = None
    dtype: str = "float32"

    DIM_KEYS = ("embed_dim", "hidden_dim", "ffnn_dim", "feature_dim")

    def fingerprint(self) -> str:
        return fingerprint(self)


Span = tuple  # (utterance_index, token_start, token_end)


def width_bucket(width: int) -> int:
    """1, 2, 3-4, 5-8, ..., 65+ -> 0..7."""
    if width <= 1:
        return 0
    return min(WIDTH_BUCKETS - 1, max(0, math.ceil(math.log2(width))))


def distance_bucket(distance: int) -> int:
    """0, 1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+ -> 0..9."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    if distance <= 4:
        return distance
    if distance <= 7:
        return 5
    return min(DISTANCE_BUCKETS - 1, int(math.log2(distance)) + 3)


def enumerate_spans(d: Dialogue, max_width: int) -> list[Span]:
    """All within-utterance spans of width <= max_width, in document order."""
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    spans = []
    for u in d.utterances:
        n = len(u.tokens)
        for s in range(n):
            for e in range(s, min(n, s + max_width)):
                spans.append((u.index, s, e))
    return spans


def prune_spans(scores: Sequence[float] | torch.Tensor, lam: float, total_tokens: int) -> list[int]:
    """Indices of the ceil(lam * T) best-scoring spans, returned in document order.

    Ties go to the earlier span.
    """
    if not 0 < lam <= 1:
        raise ValueError("lam must be in (0, 1]")
    scores = torch.as_tensor(scores, dtype=torch.float64).detach().flatten()
    k = min(len(scores), math.ceil(lam * total_tokens))
    order = torch.argsort(-scores, stable=True)[:k]
    return sorted(order.tolist())


def decode_clusters(assignments: Sequence[int | None]) -> list[list[int]]:
    """Connected components of the antecedent links, singletons dropped.

    ``assignments[i]`` is None for the dummy antecedent or an index < i.
    """
    parent = list(range(len(assignments)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in enumerate(assignments):
        if j is None:
            continue
        if not 0 <= j < i:
            raise OrderViolation(f"span {i} points to antecedent {j}; antecedents must precede")
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(len(assignments)):
        groups.setdefault(find(i), []).append(i)
    return [g for _, g in sorted(groups.items()) if len(g) > 1]


FIRST_PERSON = frozenset("i me my mine myself".split())
SECOND_PERSON = frozenset("you your yours yourself".split())
PRONOUNS = FIRST_PERSON | SECOND_PERSON | frozenset(
    "he him his himself she her hers herself it its itself they them their theirs this that".split()
)


def type_chain(d: Dialogue, mentions: Sequence[Mention]) -> tuple[ChainType, str]:
    """Chain type and head for a predicted cluster.

    A chain is SPEAKER when a member is a speaker label or a first/second
    person pronoun that can be pinned to a speaker; everything else is PERSON.
    """
    speakers = d.speakers
    head = None
    for m in mentions:
        if m.surface in speakers:
            head = m.surface
            break
    if head is None:
        for m in mentions:
            if m.surface.lower() in FIRST_PERSON:
                head = d.utterances[m.utterance_index].speaker_id
                break
    if head is None:
        for m in mentions:
            if m.surface.lower() in SECOND_PERSON:
                me = d.utterances[m.utterance_index].speaker_id
                before = [u.speaker_id for u in d.utterances[: m.utterance_index] if u.speaker_id != me]
                after = [u.speaker_id for u in d.utterances[m.utterance_index + 1 :] if u.speaker_id != me]
                cand = before[-1] if before else (after[0] if after else None)
                if cand is not None:
                    head = cand
                    break
    if head is not None:
        return ChainType.SPEAKER, head
    names = [m.surface for m in mentions if m.surface.lower() not in PRONOUNS]
    return ChainType.PERSON, names[0] if names else mentions[0].surface


def decode_chains(d: Dialogue, spans: Sequence[Span], assignments: Sequence[int | None]) -> list[CoreferenceChain]:
    chains = []
    for cluster in decode_clusters(assignments):
        ms = sorted_mentions(
            Mention(u, s, e, d.span_text(u, s, e)) for u, s, e in (spans[i] for i in cluster)
        )
        ctype, head = type_chain(d, ms)
        chains.append(CoreferenceChain(ctype, head, ms))
    return chains


def _bucket_lookup(values: torch.Tensor, fn) -> torch.Tensor:
    top = int(values.max()) if values.numel() else 0
    table = torch.tensor([fn(v) for v in range(top + 1)], dtype=torch.long)
    return table[values.long()]


class PairScore(NamedTuple):
    total: torch.Tensor
    mention_i: torch.Tensor
    mention_j: torch.Tensor
    antecedent: torch.Tensor


@dataclass
class EncodedDoc:
    token_ids: torch.Tensor  # [U, L] padded
    lengths: list[int]
    speakers: list[int]  # first-appearance speaker index per utterance
    offsets: list[int]  # flat offset of each utterance
    total_tokens: int


def encode_doc(d: Dialogue, vocab: Vocab) -> EncodedDoc:
    lengths = [len(u.tokens) for u in d.utterances]
    width = max(lengths, default=0) or 1
    ids = torch.zeros(len(d.utterances), width, dtype=torch.long)
    for i, u in enumerate(d.utterances):
        if u.tokens:
            ids[i, : len(u.tokens)] = torch.tensor([vocab(t) for t in u.tokens])
    order = {s: k for k, s in enumerate(d.speakers)}
    offsets, acc = [], 0
    for n in lengths:
        offsets.append(acc)
        acc += n
    return EncodedDoc(ids, lengths, [order[u.speaker_id] for u in d.utterances], offsets, acc)


@dataclass
class DocScores:
    """Scores for one document; all indices refer to ``kept`` order."""

    spans: list[Span]
    kept: list[int]
    g: torch.Tensor  # [N, G] for all candidate spans
    mention: torch.Tensor  # [N]
    antecedents: torch.Tensor  # [K, A] indices into kept, -1 = none
    pair: torch.Tensor  # [K, A] s_a for valid entries
    scores: torch.Tensor  # [K, A + 1]; column 0 is the dummy
    model: "CorefModel" = field(repr=False, default=None)
    speakers: list[int] = field(repr=False, default_factory=list)

    def total_score(self, i: int, j: int | None) -> PairScore:
        """s(i, j) for kept spans i and j (j=None is the dummy antecedent)."""
        zero = self.mention.new_zeros(())
        if j is None:
            return PairScore(zero, zero, zero, zero)
        if j >= i:
            raise OrderViolation(f"antecedent {j} does not precede span {i}")
        si, sj = self.kept[i], self.kept[j]
        phi = self.model.pair_features(
            torch.tensor([i - j]),
            torch.tensor([self.speakers[self.spans[si][0]] == self.speakers[self.spans[sj][0]]]),
        )
        s_a = self.model.antecedent_score(self.g[si : si + 1], self.g[sj : sj + 1], phi)[0]
        m_i, m_j = self.mention[si], self.mention[sj]
        return PairScore(m_i + m_j + s_a, m_i, m_j, s_a)

    def assignments(self) -> list[int | None]:
        """Argmax antecedent per kept span; ties go to the dummy, then the earliest."""
        best = torch.argmax(self.scores, dim=1).tolist()
        out = []
        for k, b in enumerate(best):
            out.append(None if b == 0 else int(self.antecedents[k, b - 1]))
        return out


class CorefModel(nn.Module):
    def __init__(self, vocab_size: int, cfg: CorefConfig, embeddings: torch.Tensor | None = None):
        super().__init__()
        self.cfg = cfg
        E, H, D, Fd = cfg.embed_dim, cfg.hidden_dim, cfg.ffnn_dim, cfg.feature_dim
        self.embed = nn.Embedding(vocab_size, E, padding_idx=0)
        if embeddings is not None:
            self.embed.weight.data.copy_(embeddings)
        self.lstm = nn.LSTM(E, H, batch_first=True, bidirectional=True)
        self.head_attn = nn.Linear(2 * H, 1)
        self.width_emb = nn.Embedding(WIDTH_BUCKETS, Fd)
        self.span_dim = 4 * H + E + Fd
        G = self.span_dim
        self.ffnn_m = nn.Sequential(nn.Linear(G, D), nn.ReLU(), nn.Dropout(cfg.dropout), nn.Linear(D, D), nn.ReLU())
        self.w_m = nn.Linear(D, 1, bias=False)
        self.dist_emb = nn.Embedding(DISTANCE_BUCKETS, Fd)
        self.speaker_emb = nn.Embedding(2, Fd)
        self.ffnn_a = nn.Sequential(
            nn.Linear(3 * G + 2 * Fd, D), nn.ReLU(), nn.Dropout(cfg.dropout), nn.Linear(D, D), nn.ReLU()
        )
        self.w_a = nn.Linear(D, 1, bias=False)
        self.dropout = nn.Dropout(cfg.dropout)

    # --- scorers

    def mention_score(self, g: torch.Tensor) -> torch.Tensor:
        return self.w_m(self.ffnn_m(g)).squeeze(-1)

    def pair_features(self, offsets: torch.Tensor, same_speaker: torch.Tensor) -> torch.Tensor:
        buckets = _bucket_lookup(offsets, distance_bucket)
        return torch.cat([self.dist_emb(buckets), self.speaker_emb(same_speaker.long())], dim=-1)

    def antecedent_score(self, g_i: torch.Tensor, g_j: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
        x = torch.cat([g_i, g_j, g_i * g_j, phi], dim=-1)
        return self.w_a(self.ffnn_a(x)).squeeze(-1)

    # --- representations

    def span_representations(self, doc: EncodedDoc, spans: Sequence[Span]) -> torch.Tensor:
        dtype = self.head_attn.weight.dtype
        x = self.dropout(self.embed(doc.token_ids).to(dtype))
        packed = nn.utils.rnn.pack_padded_sequence(
            x, torch.tensor([max(n, 1) for n in doc.lengths]), batch_first=True, enforce_sorted=False
        )
        h, _ = self.lstm(packed)
        h, _ = nn.utils.rnn.pad_packed_sequence(h, batch_first=True, total_length=x.shape[1])
        h = self.dropout(h)
        h_flat = torch.cat([h[i, :n] for i, n in enumerate(doc.lengths)], dim=0)
        x_flat = torch.cat([x[i, :n] for i, n in enumerate(doc.lengths)], dim=0)
        return self._spans_from_states(h_flat, x_flat, doc, spans)

    def _spans_from_states(self, h_flat, x_flat, doc: EncodedDoc, spans):
        starts = torch.tensor([doc.offsets[u] + s for u, s, _ in spans])
        ends = torch.tensor([doc.offsets[u] + e for u, _, e in spans])
        widths = ends - starts + 1
        W = int(widths.max())
        idx = starts[:, None] + torch.arange(W)[None, :]
        mask = idx <= ends[:, None]
        idx = torch.where(mask, idx, ends[:, None])
        logits = self.head_attn(h_flat).squeeze(-1)[idx].masked_fill(~mask, float("-inf"))
        attn = torch.softmax(logits, dim=1)
        head = (attn.unsqueeze(-1) * x_flat[idx]).sum(1)
        wb = _bucket_lookup(widths, width_bucket)
        return torch.cat([h_flat[starts], h_flat[ends], head, self.width_emb(wb)], dim=-1)

    # --- document scoring

    def score_document(self, doc: EncodedDoc, spans: Sequence[Span]) -> DocScores:
        g = self.span_representations(doc, spans)
        s_m = self.mention_score(g)
        kept = prune_spans(s_m, self.cfg.lam, doc.total_tokens)
        K = len(kept)
        A = max(1, min(self.cfg.beam, K - 1)) if K else 1
        ant = torch.full((K, A), -1, dtype=torch.long)
        for i in range(K):
            lo = max(0, i - self.cfg.beam)
            cands = list(range(lo, i))[-A:]
            if cands:
                ant[i, A - len(cands) :] = torch.tensor(cands)
        valid = ant >= 0
        kept_t = torch.tensor(kept, dtype=torch.long)
        if K == 0:
            empty = g.new_zeros((0, A))
            return DocScores(list(spans), kept, g, s_m, ant, empty, g.new_zeros((0, A + 1)), self, doc.speakers)
        safe = torch.where(valid, ant, torch.zeros_like(ant))
        gi = g[kept_t][:, None, :].expand(K, A, -1)
        gj = g[kept_t[safe]]
        offsets = torch.where(valid, torch.arange(K)[:, None] - safe, torch.zeros_like(safe))
        spk = torch.tensor([doc.speakers[spans[k][0]] for k in kept])
        same = spk[:, None] == spk[safe]
        phi = self.pair_features(offsets, same)
        s_a = self.antecedent_score(gi, gj, phi)
        sm_k = s_m[kept_t]
        total = sm_k[:, None] + sm_k[safe] + s_a
        total = total.masked_fill(~valid, float("-inf"))
        scores = torch.cat([total.new_zeros(K, 1), total], dim=1)
        return DocScores(list(spans), kept, g, s_m, ant, s_a, scores, self, doc.speakers)


def gold_clusters(d: Dialogue) -> dict[Span, int]:
    return {m.span: k for k, c in enumerate(d.chains) for m in c.mentions}


def marginal_loss(ds: DocScores, clusters: dict[Span, int]) -> torch.Tensor:
    """-log sum_{j in GOLD(i)} exp s(i,j) + log sum_{j in Y(i)} exp s(i,j), summed over kept spans."""
    K = len(ds.kept)
    if K == 0:
        return ds.scores.sum()
    cid = torch.tensor([clusters.get(ds.spans[k], -1) for k in ds.kept])
    valid = ds.antecedents >= 0
    safe = torch.where(valid, ds.antecedents, torch.zeros_like(ds.antecedents))
    gold = valid & (cid[:, None] >= 0) & (cid[safe] == cid[:, None])
    dummy = ~gold.any(dim=1, keepdim=True)
    gold = torch.cat([dummy, gold], dim=1)
    gold_scores = ds.scores.masked_fill(~gold, float("-inf"))
    return (torch.logsumexp(ds.scores, dim=1) - torch.logsumexp(gold_scores, dim=1)).sum()


@dataclass
class Resolver:
    model: CorefModel
    vocab: Vocab
    config: CorefConfig
    loss_log: list[float] = field(default_factory=list)

    def scores(self, d: Dialogue) -> tuple[DocScores | None, list[Span]]:
        spans = enumerate_spans(d, self.config.max_width)
        if not spans:
            return None, spans
        return self.model.score_document(encode_doc(d, self.vocab), spans), spans

    def save(self, path) -> None:
        import io

        from .corpus import write_atomic

        buf = io.BytesIO()
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "config": asdict(self.config),
                "fingerprint": self.config.fingerprint(),
                "vocab": self.vocab.itos,
                "loss_log": self.loss_log,
                "state_dict": self.model.state_dict(),
            },
            buf,
        )
        write_atomic(path, buf.getvalue())

    @classmethod
    def load(cls, path, expected: CorefConfig | None = None) -> "Resolver":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointMismatch(f"{path}: not a coreference checkpoint ({blob.get('format')!r})")
        cfg = CorefConfig(**blob["config"])
        if expected is not None:
            diff = [k for k in CorefConfig.DIM_KEYS if getattr(expected, k) != getattr(cfg, k)]
            if diff:
                raise CheckpointMismatch(f"{path}: dimension mismatch in {diff}")
        vocab = Vocab()
        vocab.itos = list(blob["vocab"])
        vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
        model = CorefModel(len(vocab), cfg).to(DTYPES[cfg.dtype])
        try:
            model.load_state_dict(blob["state_dict"])
        except RuntimeError as e:
            raise CheckpointMismatch(f"{path}: {e}") from e
        model.eval()
        return cls(model, vocab, cfg, list(blob.get("loss_log", [])))


def build_resolver(dialogues: Sequence[Dialogue], cfg: CorefConfig, vocab: Vocab | None = None) -> Resolver:
    seed_everything(cfg.seed)
    vocab = vocab or Vocab.from_dialogues(dialogues)
    emb = load_word_vectors(cfg.embeddings_path, vocab, cfg.embed_dim) if cfg.embeddings_path else None
    model = CorefModel(len(vocab), cfg, emb).to(DTYPES[cfg.dtype])
    return Resolver(model, vocab, cfg)


def train_resolver(dialogues: Sequence[Dialogue], cfg: CorefConfig, log_fn=None, resolver: Resolver | None = None) -> Resolver:
    """Fit a resolver on gold chains; returns it with a per-epoch mean loss log.

    Passing ``resolver`` continues training it (fresh optimizer) instead of
    starting from a new model, e.g. to fine-tune after a first corpus.
    """
    if not any(d.chains for d in dialogues):
        raise NoGoldChains("training corpus contains no coreference chains")
    res = resolver if resolver is not None else build_resolver(dialogues, cfg)
    model = res.model
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    docs = [(encode_doc(d, res.vocab), enumerate_spans(d, cfg.max_width), gold_clusters(d), d.id) for d in dialogues]
    docs = [x for x in docs if x[1]]
    for epoch in range(cfg.epochs):
        model.train()
        total = 0.0
        for k in torch.randperm(len(docs), generator=gen).tolist():
            doc, spans, clusters, did = docs[k]
            ds = model.score_document(doc, spans)
            loss = marginal_loss(ds, clusters)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch} document {did}: loss={loss.item()}", epoch=epoch, document=did)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        mean = total / max(1, len(docs))
        res.loss_log.append(mean)
        if log_fn:
            log_fn(epoch, mean)
        log.info("coref epoch %d loss %.4f", epoch, mean)
    model.eval()
    return res


@torch.no_grad()
def predict_chains(d: Dialogue, res: Resolver) -> list[dict]:
    """Sidecar-format chains for ``d``."""
    ds, spans = res.scores(d)
    if ds is None or not ds.kept:
        return []
    kept_spans = [spans[k] for k in ds.kept]
    chains = decode_chains(d, kept_spans, ds.assignments())
    return [chain_to_json(c) for c in chains]


def predict_corpus(dialogues: Sequence[Dialogue], res: Resolver) -> dict[str, list[dict]]:
    res.model.eval()
    return {d.id: predict_chains(d, res) for d in dialogues}
