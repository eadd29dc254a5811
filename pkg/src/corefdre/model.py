"""Graph-neural dialogue relation classifier.

Pipeline per dialogue: token encoder (embeddings + per-turn BiLSTM + masked
multi-head self-attention within each turn) -> node states initialised by
node kind -> relational GCN over the recipe's graph -> multi-label head on
the concatenated subject/object states.
"""
from __future__ import annotations

import copy
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import torch
import torch.nn as nn

from .common import DTYPES, Vocab, fingerprint, load_word_vectors, seed_everything
from .coref import EncodedDoc, encode_doc
from .corpus import attach_chains, chain_from_json, write_atomic
from .data import DEFAULT_INVENTORY, ArgumentPair, Dialogue, RelationInventory, Utterance
from .errors import CheckpointMismatch, ConfigError, EmptyDialogue, EmptySplit, MissingState, NonFiniteLoss, UnknownKindError
from .graphs import (
    RECIPE_KINDS,
    DialogueGraph,
    EdgeKind,
    NodeKind,
    Recipe,
    build_gain,
    build_hgat,
    build_redialog,
    build_tucore,
    parse_kinds,
    strip_edges,
)

log = logging.getLogger(__name__)

MODEL_RECIPES = ("TUCORE", "REDIALOG", "GAIN", "HGAT")
CHAIN_SOURCES = ("none", "gold", "predicted", "external")
# learning rates for TUCORE-GCN, REDialog, GAIN and HGAT backbones
RECIPE_LR = {"TUCORE": 3e-5, "REDIALOG": 1e-5, "GAIN": 1e-3, "HGAT": 1e-4}
TYPE_TAGS = ("PER", "GPE", "ORG", "STRING", "VALUE")
MAX_SPEAKERS = 32
CHECKPOINT_FORMAT = "corefdre.dre/1"


@dataclass
class DREConfig:
    recipe: str = "TUCORE"
    chain_source: str = "gold"
    encoder: str = "bilstm"
    embed_dim: int = 64
    hidden_dim: int = 64
    heads: int = 2
    gcn_layers: int = 2
    lr: float | None = None
    epochs: int = 20
    seed: int = 13
    tau: float = 0.5
    dropout: float = 0.0
    max_tokens: int = 512
    use_speaker: bool = True
    strip: tuple[str, ...] = ()
    embeddings_path: str | None = None
    dtype: str = "float32"

    DIM_KEYS = ("embed_dim", "hidden_dim", "heads", "gcn_layers")

    def __post_init__(self):
        self.recipe = self.recipe.upper()
        if self.recipe not in MODEL_RECIPES:
            raise ConfigError(f"unknown recipe {self.recipe!r}; expected one of {MODEL_RECIPES}")
        if self.chain_source not in CHAIN_SOURCES:
            raise ConfigError(f"unknown chain_source {self.chain_source!r}; expected one of {CHAIN_SOURCES}")
        if self.encoder != "bilstm":
            raise ConfigError(f"encoder {self.encoder!r} is not available; only 'bilstm' is built in")
        if self.hidden_dim % 2 or self.hidden_dim % self.heads:
            raise ConfigError("hidden_dim must be even and divisible by heads")
        self.strip = tuple(sorted(str(k).upper() for k in self.strip))

    @property
    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else RECIPE_LR[self.recipe]

    def fingerprint(self) -> str:
        return fingerprint(self)


# ------------------------------------------------------------------ encoder

@dataclass
class EncoderOutput:
    tokens: torch.Tensor  # [T, H] flat over the dialogue
    utterances: torch.Tensor  # [U, H]
    offsets: list[int]
    lengths: list[int]


class DialogueEncoder(nn.Module):
    """Per-turn BiLSTM followed by multi-head self-attention masked to the turn."""

    def __init__(self, vocab_size: int, cfg: DREConfig, concat_speaker: bool, embeddings=None):
        super().__init__()
        E, H = cfg.embed_dim, cfg.hidden_dim
        self.use_speaker = cfg.use_speaker
        self.concat_speaker = concat_speaker and cfg.use_speaker
        self.embed = nn.Embedding(vocab_size, E, padding_idx=0)
        if embeddings is not None:
            self.embed.weight.data.copy_(embeddings)
        self.speaker = nn.Embedding(MAX_SPEAKERS, E if self.concat_speaker else H)
        self.lstm = nn.LSTM(E * (2 if self.concat_speaker else 1), H // 2, batch_first=True, bidirectional=True)
        self.attn = nn.MultiheadAttention(H, cfg.heads, batch_first=True)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, doc: EncodedDoc) -> EncoderOutput:
        if not doc.lengths or doc.total_tokens == 0:
            raise EmptyDialogue("dialogue has no tokens")
        dtype = self.attn.in_proj_weight.dtype
        x = self.embed(doc.token_ids).to(dtype)
        spk = torch.tensor(doc.speakers, dtype=torch.long).clamp(max=MAX_SPEAKERS - 1)
        if self.concat_speaker:
            x = torch.cat([x, self.speaker(spk)[:, None, :].expand(-1, x.shape[1], -1)], dim=-1)
        x = self.dropout(x)
        lengths = torch.tensor([max(n, 1) for n in doc.lengths])
        packed = nn.utils.rnn.pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        h, _ = self.lstm(packed)
        h, _ = nn.utils.rnn.pad_packed_sequence(h, batch_first=True, total_length=x.shape[1])
        pad = torch.arange(x.shape[1])[None, :] >= lengths[:, None]
        a, _ = self.attn(h, h, h, key_padding_mask=pad, need_weights=False)
        tok = self.dropout(h + a)
        valid = (~pad).to(dtype)
        real = torch.tensor([n > 0 for n in doc.lengths], dtype=dtype)
        utt = (tok * valid[..., None]).sum(1) / valid.sum(1, keepdim=True) * real[:, None]
        if self.use_speaker and not self.concat_speaker:
            utt = utt + self.speaker(spk)
        flat = torch.cat([tok[i, :n] for i, n in enumerate(doc.lengths) if n], dim=0)
        return EncoderOutput(flat, utt, doc.offsets, doc.lengths)


def truncate_dialogue(d: Dialogue, max_tokens: int) -> Dialogue:
    """Drop trailing turns until the dialogue fits; chains lose dropped mentions."""
    total, keep = 0, 0
    for u in d.utterances:
        if keep and total + len(u.tokens) > max_tokens:
            break
        total += len(u.tokens)
        keep += 1
    if keep == len(d.utterances):
        return d
    log.warning("truncating %s from %d to %d turns (%d tokens)", d.id, len(d.utterances), keep, total)
    chains = []
    for c in d.chains:
        ms = tuple(m for m in c.mentions if m.utterance_index < keep)
        if ms:
            chains.append(replace(c, mentions=ms))
    return replace(d, utterances=d.utterances[:keep], chains=tuple(chains))


# ------------------------------------------------------------------ graph tensors

@dataclass
class GraphTensors:
    """Index form of a DialogueGraph for one dialogue encoding.

    ``init`` averages rows of the source table [tokens | utterances | type
    embeddings | unknown-argument vector] into initial node states.
    """

    graph: DialogueGraph
    init: torch.Tensor  # [N, S] averaging weights
    edges: dict[EdgeKind, tuple[torch.Tensor, torch.Tensor]]
    index: dict[str, int]
    subject: int
    object: int
    # GAIN entity graphs read mention states from the companion graph
    from_mentions: torch.Tensor | None = None  # [N, N_mention]


def _source_layout(d: Dialogue):
    offsets, acc = [], 0
    for u in d.utterances:
        offsets.append(acc)
        acc += len(u.tokens)
    T, U = acc, len(d.utterances)
    # one extra type row for unseen tags, then the unknown-argument row
    return offsets, T, U, T + U + len(TYPE_TAGS) + 2


def _rows_for_span(offsets, span):
    u, s, e = span
    return [offsets[u] + t for t in range(s, e + 1)]


def edge_tensors(g: DialogueGraph) -> dict[EdgeKind, tuple[torch.Tensor, torch.Tensor]]:
    """Endpoint index tensors per edge kind, in node order of ``g``."""
    idx = g.node_index()
    edges = {}
    for kind in RECIPE_KINDS[g.recipe]:
        pairs = [(idx[a], idx[b]) for a, b, k in g.edges if k == kind]
        if pairs:
            a, b = zip(*pairs)
            edges[kind] = (torch.tensor(a), torch.tensor(b))
    return edges


def graph_tensors(d: Dialogue, g: DialogueGraph, mention_graph: GraphTensors | None = None) -> GraphTensors:
    offsets, T, U, S = _source_layout(d)
    utt_row = lambda i: T + i  # noqa: E731
    type_row = lambda tag: T + U + (TYPE_TAGS.index(tag) if tag in TYPE_TAGS else len(TYPE_TAGS))  # noqa: E731
    unk_row = S - 1
    idx = g.node_index()
    N = len(g.nodes)
    init = torch.zeros(N, S, dtype=torch.float64)
    from_m = None
    if mention_graph is not None:
        from_m = torch.zeros(N, len(mention_graph.graph.nodes), dtype=torch.float64)

    word_rows: dict[str, list[int]] = {}
    for u in d.utterances:
        for t, tok in enumerate(u.tokens):
            word_rows.setdefault(tok.lower(), []).append(offsets[u.index] + t)

    def spread(i, rows):
        for r in rows:
            init[i, r] += 1.0 / len(rows)

    def mean_of_spans(spans):
        acc = torch.zeros(S, dtype=torch.float64)
        for sp in spans:
            rows = _rows_for_span(offsets, sp)
            for r in rows:
                acc[r] += 1.0 / len(rows) / len(spans)
        return acc

    for i, n in enumerate(g.nodes):
        p = n.payload
        if n.kind == NodeKind.UTTERANCE:
            init[i, utt_row(p["index"])] = 1.0
        elif n.kind == NodeKind.DIALOGUE:
            spread(i, [utt_row(k) for k in range(U)])
        elif n.kind in (NodeKind.MENTION, NodeKind.MDP):
            spread(i, _rows_for_span(offsets, p["span"]))
        elif n.kind == NodeKind.SPEAKER:
            spread(i, [utt_row(k) for k in p["turns"]] or [unk_row])
        elif n.kind == NodeKind.TYPE:
            init[i, type_row(p["name"])] = 1.0
        elif n.kind == NodeKind.WORD:
            spread(i, word_rows.get(p["word"], [unk_row]))
        elif n.kind == NodeKind.ARGUMENT:
            mentions = [m for m in p.get("mentions", [])]
            if from_m is not None:
                present = [mention_graph.index[m] for m in mentions if m in mention_graph.index]
                if present:
                    for m in present:
                        from_m[i, m] = 1.0 / len(present)
                    continue
            else:
                spans = [g.nodes[idx[m]].payload["span"] for m in mentions if m in idx]
                if spans:
                    init[i] = mean_of_spans(spans)
                    continue
            occ = p.get("occurrences", [])
            if occ:
                init[i] = mean_of_spans(occ)
            elif p.get("speaker_turns"):
                spread(i, [utt_row(k) for k in p["speaker_turns"]])
            else:
                init[i, unk_row] = 1.0

    edges = edge_tensors(g)
    roles = {n.payload.get("role"): i for i, n in enumerate(g.nodes) if n.kind == NodeKind.ARGUMENT}
    subj = roles.get("subject", -1)
    return GraphTensors(g, init, edges, idx, subj, roles.get("object", subj), from_m)


# ------------------------------------------------------------------ message passing

class RelationalGCN(nn.Module):
    """Per-edge-kind linear messages, symmetric degree normalisation, residual."""

    def __init__(self, dim: int, kinds: Sequence[EdgeKind], layers: int):
        super().__init__()
        self.kinds = tuple(EdgeKind(k) for k in kinds)
        self.layers = layers
        self.self_loop = nn.ModuleList(nn.Linear(dim, dim) for _ in range(layers))
        self.rel = nn.ModuleList(
            nn.ModuleDict({k.value: nn.Linear(dim, dim, bias=False) for k in self.kinds}) for _ in range(layers)
        )

    def forward(self, x: torch.Tensor, edges: Mapping[EdgeKind, tuple[torch.Tensor, torch.Tensor]], layers: int | None = None):
        L = self.layers if layers is None else layers
        if L > self.layers:
            raise ValueError(f"model has {self.layers} layers, asked for {L}")
        N = x.shape[0]
        deg = torch.ones(N, dtype=x.dtype)
        for a, b in edges.values():
            deg.index_add_(0, a, torch.ones(len(a), dtype=x.dtype))
            deg.index_add_(0, b, torch.ones(len(b), dtype=x.dtype))
        inv = deg.rsqrt()
        for layer in range(L):
            out = self.self_loop[layer](x)
            for kind, (a, b) in edges.items():
                w = self.rel[layer][kind.value]
                norm = (inv[a] * inv[b])[:, None]
                hx = w(x)
                out = out.index_add(0, a, hx[b] * norm).index_add(0, b, hx[a] * norm)
            x = x + torch.relu(out)
        return x


def propagate(gcn: RelationalGCN, gt: GraphTensors, states: torch.Tensor, layers: int | None = None) -> torch.Tensor:
    if states.shape[0] != len(gt.graph.nodes):
        raise MissingState(f"{states.shape[0]} states for {len(gt.graph.nodes)} nodes")
    return gcn(states, gt.edges, layers)


# ------------------------------------------------------------------ classification

@dataclass
class RelationPrediction:
    probabilities: list[float]
    labels: frozenset[str]


class RelationHead(nn.Module):
    def __init__(self, dim: int, n_labels: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(2 * dim, dim), nn.ReLU(), nn.Linear(dim, n_labels))

    def forward(self, subject: torch.Tensor, obj: torch.Tensor) -> torch.Tensor:
        return self.mlp(torch.cat([subject, obj], dim=-1))


def decide(probs: Sequence[float] | torch.Tensor, tau: float, inventory: RelationInventory = DEFAULT_INVENTORY) -> frozenset[str]:
    """Labels with p >= tau; falls back to the single argmax label when none pass."""
    p = torch.as_tensor(probs, dtype=torch.float64)
    chosen = [inventory.labels[i] for i in range(len(p)) if p[i] >= tau]
    if not chosen:
        chosen = [inventory.labels[int(torch.argmax(p))]]
    return frozenset(chosen)


def classify(head: RelationHead, subject: torch.Tensor, obj: torch.Tensor, tau: float,
             inventory: RelationInventory = DEFAULT_INVENTORY) -> RelationPrediction:
    probs = torch.sigmoid(head(subject, obj)).tolist()
    return RelationPrediction(probs, decide(probs, tau, inventory))


# ------------------------------------------------------------------ full model

class DREModel(nn.Module):
    def __init__(self, vocab: Vocab, cfg: DREConfig, inventory: RelationInventory = DEFAULT_INVENTORY):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.inventory = inventory
        H = cfg.hidden_dim
        emb = load_word_vectors(cfg.embeddings_path, vocab, cfg.embed_dim) if cfg.embeddings_path else None
        self.encoder = DialogueEncoder(len(vocab), cfg, concat_speaker=cfg.recipe == "REDIALOG", embeddings=emb)
        self.type_emb = nn.Parameter(torch.randn(len(TYPE_TAGS) + 1, H) * 0.1)
        self.unk_arg = nn.Parameter(torch.zeros(1, H))
        if cfg.recipe == "GAIN":
            self.gcn = RelationalGCN(H, RECIPE_KINDS[Recipe.GAIN_MENTION], cfg.gcn_layers)
            self.entity_gcn = RelationalGCN(H, RECIPE_KINDS[Recipe.GAIN_ENTITY], cfg.gcn_layers)
        else:
            self.gcn = RelationalGCN(H, RECIPE_KINDS[Recipe(cfg.recipe)], cfg.gcn_layers)
        self.head = RelationHead(H, len(inventory))

    def encode(self, d: Dialogue) -> EncoderOutput:
        return self.encoder(encode_doc(d, self.vocab))

    def source_table(self, enc: EncoderOutput) -> torch.Tensor:
        return torch.cat([enc.tokens, enc.utterances, self.type_emb, self.unk_arg], dim=0)

    def initial_states(self, gt: GraphTensors, src: torch.Tensor) -> torch.Tensor:
        return gt.init.to(src.dtype) @ src

    def pair_states(self, graphs: Sequence[GraphTensors], enc: EncoderOutput):
        src = self.source_table(enc)
        if self.cfg.recipe == "GAIN":
            mg, eg = graphs
            hm = propagate(self.gcn, mg, self.initial_states(mg, src))
            x0 = self.initial_states(eg, src) + eg.from_mentions.to(src.dtype) @ hm
            he = propagate(self.entity_gcn, eg, x0)
            return he[eg.subject], he[eg.object]
        (gt,) = graphs
        h = propagate(self.gcn, gt, self.initial_states(gt, src))
        return h[gt.subject], h[gt.object]

    def logits(self, graphs: Sequence[GraphTensors], enc: EncoderOutput) -> torch.Tensor:
        s, o = self.pair_states(graphs, enc)
        return self.head(s, o)


def build_graphs(recipe: str, d: Dialogue, pair: ArgumentPair, strip: Sequence[str] = (), **kw) -> tuple[DialogueGraph, ...]:
    if recipe == "TUCORE":
        gs = (build_tucore(d, pair),)
    elif recipe == "REDIALOG":
        gs = (build_redialog(d, pair, **kw),)
    elif recipe == "GAIN":
        gs = build_gain(d, pair, **kw)
    elif recipe == "HGAT":
        gs = (build_hgat(d, pair),)
    else:
        raise ConfigError(f"unknown recipe {recipe!r}")
    if strip:
        kinds = parse_kinds(strip)
        unknown = kinds - {k for g in gs for k in RECIPE_KINDS[g.recipe]}
        if unknown:
            raise UnknownKindError(f"{sorted(k.value for k in unknown)} not in recipe {recipe}")
        gs = tuple(strip_edges(g, kinds & set(RECIPE_KINDS[g.recipe])) for g in gs)
    return gs


def tensors_for(recipe: str, d: Dialogue, graphs: Sequence[DialogueGraph]) -> tuple[GraphTensors, ...]:
    if recipe == "GAIN":
        mg = graph_tensors(d, graphs[0])
        return (mg, graph_tensors(d, graphs[1], mg))
    return (graph_tensors(d, graphs[0]),)


def apply_chain_source(dialogues: Sequence[Dialogue], source: str, sidecar: Mapping | None = None) -> list[Dialogue]:
    """Swap each dialogue's chains for the requested source.

    ``none`` removes chains (backbone graphs), ``gold`` keeps the loaded
    annotation, ``predicted``/``external`` take chains from ``sidecar``
    (dialogue id -> chain dicts or CoreferenceChain objects).
    """
    if source == "none":
        return [d.without_chains() for d in dialogues]
    if source == "gold":
        return list(dialogues)
    if source not in ("predicted", "external"):
        raise ConfigError(f"unknown chain_source {source!r}")
    if sidecar is None:
        raise ConfigError(f"chain_source={source} needs a sidecar")
    absent = [d.id for d in dialogues if d.id not in sidecar]
    if absent:
        log.warning("%d of %d dialogues have no entry in the %s sidecar (e.g. %s)", len(absent), len(dialogues), source, absent[0])
    out = []
    for d in dialogues:
        raw = sidecar.get(d.id, [])
        chains = [c if not isinstance(c, dict) else chain_from_json(c, d.id) for c in raw]
        out.append(attach_chains(d, chains))
    return out


@dataclass
class Example:
    dialogue: Dialogue
    doc: EncodedDoc
    graphs: list[tuple[GraphTensors, ...]]
    targets: torch.Tensor  # [P, n_labels]


def prepare(dialogues: Sequence[Dialogue], cfg: DREConfig, vocab: Vocab,
            inventory: RelationInventory = DEFAULT_INVENTORY, **graph_kw) -> list[Example]:
    out = []
    for d in dialogues:
        d = truncate_dialogue(d, cfg.max_tokens)
        if not d.pairs or d.num_tokens == 0:
            continue
        graphs = [tensors_for(cfg.recipe, d, build_graphs(cfg.recipe, d, p, cfg.strip, **graph_kw)) for p in d.pairs]
        y = torch.zeros(len(d.pairs), len(inventory))
        for k, p in enumerate(d.pairs):
            for label in p.positive_labels:
                y[k, inventory.index(label)] = 1.0
        out.append(Example(d, encode_doc(d, vocab), graphs, y))
    return out


def example_logits(model: DREModel, ex: Example) -> torch.Tensor:
    enc = model.encoder(ex.doc)
    return torch.stack([model.logits(g, enc) for g in ex.graphs])


def example_loss(model: DREModel, ex: Example) -> torch.Tensor:
    logits = example_logits(model, ex)
    return nn.functional.binary_cross_entropy_with_logits(logits, ex.targets.to(logits.dtype), reduction="sum")


@torch.no_grad()
def predict(model: DREModel, examples: Sequence[Example]) -> dict[tuple[str, int], RelationPrediction]:
    model.eval()
    out = {}
    for ex in examples:
        probs = torch.sigmoid(example_logits(model, ex))
        for k in range(len(ex.graphs)):
            p = probs[k].tolist()
            out[(ex.dialogue.id, k)] = RelationPrediction(p, decide(p, model.cfg.tau, model.inventory))
    return out


@dataclass
class TrainedDRE:
    model: DREModel
    config: DREConfig
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def save(self, path) -> None:
        buf = io.BytesIO()
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "recipe": self.config.recipe,
                "chain_source": self.config.chain_source,
                "config": asdict(self.config),
                "fingerprint": self.config.fingerprint(),
                "metric_log": self.log,
                "best_epoch": self.best_epoch,
                "vocab": self.model.vocab.itos,
                "labels": list(self.model.inventory.labels),
                "state_dict": self.model.state_dict(),
            },
            buf,
        )
        write_atomic(path, buf.getvalue())

    @classmethod
    def load(cls, path, expected: DREConfig | None = None) -> "TrainedDRE":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointMismatch(f"{path}: not a relation-model checkpoint")
        raw = dict(blob["config"])
        raw["strip"] = tuple(raw.get("strip", ()))
        cfg = DREConfig(**raw)
        if expected is not None:
            diff = [k for k in DREConfig.DIM_KEYS + ("recipe",) if getattr(expected, k) != getattr(cfg, k)]
            if diff:
                raise CheckpointMismatch(f"{path}: mismatch in {diff}")
        vocab = Vocab()
        vocab.itos = list(blob["vocab"])
        vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
        model = DREModel(vocab, replace(cfg, embeddings_path=None), RelationInventory(tuple(blob["labels"])))
        model = model.to(DTYPES[cfg.dtype])
        try:
            model.load_state_dict(blob["state_dict"])
        except RuntimeError as e:
            raise CheckpointMismatch(f"{path}: {e}") from e
        model.eval()
        return cls(model, cfg, list(blob["metric_log"]), blob.get("best_epoch", -1))


def new_model(train: Sequence[Dialogue], cfg: DREConfig, inventory: RelationInventory = DEFAULT_INVENTORY) -> DREModel:
    seed_everything(cfg.seed)
    vocab = Vocab.from_dialogues(train)
    return DREModel(vocab, cfg, inventory).to(DTYPES[cfg.dtype])


def _round(x: float) -> float:
    return float(f"{x:.6f}")


def train_dre(
    train: Sequence[Dialogue],
    dev: Sequence[Dialogue],
    cfg: DREConfig,
    sidecars: Mapping[str, Mapping] | None = None,
    inventory: RelationInventory = DEFAULT_INVENTORY,
    log_fn=None,
) -> TrainedDRE:
    """Train on ``train``, select the epoch with the best dev F1.

    ``sidecars`` supplies chains for chain_source predicted/external, keyed by
    dialogue id (one mapping may cover both splits).
    """
    from .evaluation import score

    if not train:
        raise EmptySplit("training split is empty")
    if not dev:
        raise EmptySplit("dev split is empty")
    train = apply_chain_source(train, cfg.chain_source, sidecars)
    dev = apply_chain_source(dev, cfg.chain_source, sidecars)
    model = new_model(train, cfg, inventory)
    tr = prepare(train, cfg, model.vocab, inventory)
    dv = prepare(dev, cfg, model.vocab, inventory)
    if not tr:
        raise EmptySplit("training split has no argument pairs")
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    result = TrainedDRE(model, cfg)
    best_f1, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        model.train()
        total = 0.0
        for k in torch.randperm(len(tr), generator=gen).tolist():
            loss = example_loss(model, tr[k])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, {tr[k].dialogue.id}: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        preds = predict(model, dv)
        rep = score({k: v.labels for k, v in preds.items()}, gold_of(dev), inventory)
        row = {"epoch": epoch, "train_loss": _round(total / len(tr)), "dev_f1": _round(rep.f1),
               "dev_precision": _round(rep.precision), "dev_recall": _round(rep.recall)}
        result.log.append(row)
        if log_fn:
            log_fn(row)
        log.info("epoch %d loss %.4f dev F1 %.4f", epoch, row["train_loss"], rep.f1)
        if rep.f1 > best_f1:
            best_f1, best_state, result.best_epoch = rep.f1, copy.deepcopy(model.state_dict()), epoch
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def gold_of(dialogues: Sequence[Dialogue]) -> dict[tuple[str, int], frozenset[str]]:
    return {(d.id, k): p.positive_labels for d in dialogues for k, p in enumerate(d.pairs)}


def evaluate_dre(trained: TrainedDRE, dialogues: Sequence[Dialogue], sidecars: Mapping | None = None):
    """Predictions for every pair of ``dialogues`` under the model's chain source."""
    cfg = trained.config
    ds = apply_chain_source(dialogues, cfg.chain_source, sidecars)
    ex = prepare(ds, cfg, trained.model.vocab, trained.model.inventory)
    return predict(trained.model, ex)
