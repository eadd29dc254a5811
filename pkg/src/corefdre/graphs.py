"""Coreference-enhanced heterogeneous dialogue graphs.

Four recipes are built from a Dialogue and a target ArgumentPair:

* TUCORE: dialogue / utterance / argument / mention nodes with DU, UU, AU,
  MU and CC edges.
* REDIALOG: argument, mention and (optional) dependency-path nodes, fully
  connected.
* GAIN: a mention-level graph (IE, IU, DM edges) plus an entity-level graph
  whose EE edges join entities co-occurring in a turn.
* HGAT: argument, utterance, speaker, type and word nodes; five base edge
  kinds plus the chain-induced CW, CS and CU kinds.

Node ids are derived from (kind, anchor) so two builds of the same input
compare equal. Edges are undirected and stored once, ordered by node
position. Only chain-derived structure (mention nodes and the coreference
edge kinds) ever reads ``Dialogue.chains``; everything else is computed from
tokens and speakers, so building from a chain-free copy of a dialogue gives
the backbone graph.
"""
from __future__ import annotations

import copy
import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Sequence

from .data import (
    ArgumentPair,
    Dialogue,
    Mention,
    chain_mentions,
    chains_for,
    find_surface,
    speaker_turns,
)
from .errors import UnknownKindError

log = logging.getLogger(__name__)


class NodeKind(str, enum.Enum):
    DIALOGUE = "DIALOGUE"
    UTTERANCE = "UTTERANCE"
    SPEAKER = "SPEAKER"
    ARGUMENT = "ARGUMENT"
    MENTION = "MENTION"
    TYPE = "TYPE"
    WORD = "WORD"
    MDP = "MDP"


class EdgeKind(str, enum.Enum):
    DU = "DU"  # dialogue-utterance
    UU = "UU"  # adjacent utterances
    AU = "AU"  # argument-utterance
    MU = "MU"  # mention-utterance
    CC = "CC"  # coreference chain clique
    FC = "FC"  # REDialog complete graph
    IE = "IE"  # GAIN intra-entity
    IU = "IU"  # GAIN intra-utterance
    DM = "DM"  # GAIN dialogue-mention
    EE = "EE"  # GAIN entity co-occurrence
    UW = "UW"  # HGAT utterance-word
    UA = "UA"  # HGAT utterance-argument
    US = "US"  # HGAT utterance-speaker
    TW = "TW"  # HGAT type-word
    TA = "TA"  # HGAT type-argument
    CW = "CW"  # HGAT coreference-word
    CS = "CS"  # HGAT coreference-speaker
    CU = "CU"  # HGAT coreference-utterance


class Recipe(str, enum.Enum):
    TUCORE = "TUCORE"
    REDIALOG = "REDIALOG"
    GAIN_MENTION = "GAIN_MENTION"
    GAIN_ENTITY = "GAIN_ENTITY"
    HGAT = "HGAT"


E = EdgeKind
RECIPE_KINDS: dict[Recipe, tuple[EdgeKind, ...]] = {
    Recipe.TUCORE: (E.DU, E.UU, E.AU, E.MU, E.CC),
    Recipe.REDIALOG: (E.FC,),
    Recipe.GAIN_MENTION: (E.IE, E.IU, E.DM),
    Recipe.GAIN_ENTITY: (E.EE,),
    Recipe.HGAT: (E.UW, E.UA, E.US, E.TW, E.TA, E.CW, E.CS, E.CU),
}
COREF_KINDS = frozenset({E.CC, E.MU, E.CW, E.CS, E.CU})
_KIND_ORDER = {k: i for i, k in enumerate(EdgeKind)}


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    payload: dict = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class DialogueGraph:
    recipe: Recipe
    nodes: tuple[Node, ...]
    edges: tuple[tuple[str, str, EdgeKind], ...]
    warnings: tuple[str, ...] = ()

    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def nodes_of(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def edges_of(self, kind: EdgeKind) -> list[tuple[str, str, EdgeKind]]:
        return [e for e in self.edges if e[2] == kind]

    @property
    def edge_kinds(self) -> set[EdgeKind]:
        return {k for _, _, k in self.edges}

    def degree(self) -> Counter:
        deg = Counter({n.id: 0 for n in self.nodes})
        for a, b, _ in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def node_multiset(self) -> Counter:
        return Counter((n.id, n.kind) for n in self.nodes)

    def edge_multiset(self) -> Counter:
        return Counter(self.edges)

    def to_json(self) -> dict:
        return {
            "recipe": self.recipe.value,
            "nodes": [{"id": n.id, "kind": n.kind.value, "payload": n.payload} for n in self.nodes],
            "edges": [[a, b, k.value] for a, b, k in self.edges],
            "warnings": list(self.warnings),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, obj) -> "DialogueGraph":
        return cls(
            Recipe(obj["recipe"]),
            tuple(Node(n["id"], NodeKind(n["kind"]), n["payload"]) for n in obj["nodes"]),
            tuple((a, b, EdgeKind(k)) for a, b, k in obj["edges"]),
            tuple(obj.get("warnings", ())),
        )


class _Builder:
    def __init__(self, recipe: Recipe):
        self.recipe = recipe
        self.nodes: dict[str, Node] = {}
        self.order: list[str] = []
        self.edges: list[tuple[str, str, EdgeKind]] = []
        self.seen: set[tuple[str, str, EdgeKind]] = set()
        self.warnings: list[str] = []

    def node(self, node_id: str, kind: NodeKind, **payload) -> str:
        if node_id not in self.nodes:
            self.nodes[node_id] = Node(node_id, kind, payload)
            self.order.append(node_id)
        return node_id

    def edge(self, a: str, b: str, kind: EdgeKind) -> None:
        if a == b:
            return
        key = (a, b, kind) if (a, b) <= (b, a) else (b, a, kind)
        if key not in self.seen:
            self.seen.add(key)
            self.edges.append(key)

    def warn(self, msg: str) -> None:
        log.warning(msg)
        self.warnings.append(msg)

    def build(self) -> DialogueGraph:
        pos = {nid: i for i, nid in enumerate(self.order)}
        edges = []
        for a, b, k in self.edges:
            if pos[a] > pos[b]:
                a, b = b, a
            edges.append((a, b, k))
        edges.sort(key=lambda e: (_KIND_ORDER[e[2]], pos[e[0]], pos[e[1]]))
        return DialogueGraph(self.recipe, tuple(self.nodes[n] for n in self.order), tuple(edges), tuple(self.warnings))


def mention_id(m: Mention) -> str:
    return f"mention:{m.utterance_index}:{m.token_start}:{m.token_end}"


def _span(m: Mention) -> list[int]:
    return [m.utterance_index, m.token_start, m.token_end]


def _argument(b: _Builder, d: Dialogue, name: str, role: str, arg_type: str):
    """Add an argument node; returns (node id, chain mentions, surface hits, turns)."""
    if len(chains_for(d, name)) > 1:
        b.warn(f"AMBIGUOUS_HEAD: {d.id} has several chains headed {name!r}; merging them")
    chain = chain_mentions(d, name)
    occ = find_surface(d, name)
    turns = speaker_turns(d, name)
    if not chain and not occ and not turns:
        b.warn(f"UNRESOLVED_ARGUMENT: {name!r} has no chain, surface match, or turn in {d.id}")
    nid = b.node(
        f"arg:{role}",
        NodeKind.ARGUMENT,
        name=name,
        role=role,
        type=arg_type,
        mentions=[mention_id(m) for m in chain],
        occurrences=[_span(m) for m in occ],
        speaker_turns=turns,
    )
    return nid, chain, occ, turns


def _mention_node(b: _Builder, m: Mention, **extra) -> str:
    nid = mention_id(m)
    if nid in b.nodes:
        for key, val in extra.items():
            ents = b.nodes[nid].payload.setdefault(key, [])
            for v in val:
                if v not in ents:
                    ents.append(v)
        return nid
    return b.node(nid, NodeKind.MENTION, span=_span(m), surface=m.surface, **extra)


def build_tucore(d: Dialogue, pair: ArgumentPair) -> DialogueGraph:
    b = _Builder(Recipe.TUCORE)
    b.node("dialogue", NodeKind.DIALOGUE)
    for u in d.utterances:
        b.node(f"utt:{u.index}", NodeKind.UTTERANCE, index=u.index, speaker=u.speaker_id)
    args = []
    for role, name, tag in (("subject", pair.subject, pair.subject_type), ("object", pair.object, pair.object_type)):
        args.append(_argument(b, d, name, role, tag))
    for _, chain, _, _ in args:
        for m in chain:
            _mention_node(b, m)

    for u in d.utterances:
        b.edge("dialogue", f"utt:{u.index}", E.DU)
    for u, v in zip(d.utterances, d.utterances[1:]):
        b.edge(f"utt:{u.index}", f"utt:{v.index}", E.UU)
    for nid, _, occ, turns in args:
        for ui in sorted({m.utterance_index for m in occ} | set(turns)):
            b.edge(nid, f"utt:{ui}", E.AU)
    for _, chain, _, _ in args:
        for m in chain:
            b.edge(mention_id(m), f"utt:{m.utterance_index}", E.MU)
        for m1, m2 in combinations(chain, 2):
            b.edge(mention_id(m1), mention_id(m2), E.CC)
    return b.build()


MdpProvider = Callable[[Dialogue, Sequence[Mention], Sequence[Mention]], Iterable[tuple[int, int]]]


def build_redialog(d: Dialogue, pair: ArgumentPair, mdp_provider: MdpProvider | None = None) -> DialogueGraph:
    """Complete graph over argument, mention and MDP nodes.

    ``mdp_provider(d, subject_mentions, object_mentions)`` returns
    ``(utterance, token)`` positions on shortest dependency paths; without
    one the MDP node set is empty.
    """
    b = _Builder(Recipe.REDIALOG)
    args = []
    for role, name, tag in (("subject", pair.subject, pair.subject_type), ("object", pair.object, pair.object_type)):
        args.append(_argument(b, d, name, role, tag))
    for nid, _, _, _ in args:
        b.nodes[nid].payload["pooling"] = "mean_of_mentions"
    for _, chain, _, _ in args:
        for m in chain:
            _mention_node(b, m)
    if mdp_provider is not None:
        for u, t in sorted(set(mdp_provider(d, args[0][1], args[1][1]))):
            b.node(f"mdp:{u}:{t}", NodeKind.MDP, span=[u, t, t], surface=d.utterances[u].tokens[t])
    for a, c in combinations(b.order, 2):
        b.edge(a, c, E.FC)
    return b.build()


def _gain_entities(d: Dialogue, include_all_chains: bool):
    names = []
    for p in d.pairs:
        for n in (p.subject, p.object):
            if n not in names:
                names.append(n)
    if include_all_chains:
        for c in d.chains:
            if c.head not in names:
                names.append(c.head)
    out = []
    for n in names:
        ms = chain_mentions(d, n)
        out.append((n, ms if ms else find_surface(d, n)))
    return out


def build_gain(d: Dialogue, pair: ArgumentPair, include_all_chains: bool = False) -> tuple[DialogueGraph, DialogueGraph]:
    """Mention-level and entity-level graphs.

    Entities are the arguments of every pair in ``d``; each contributes its
    chain mentions, or its surface occurrences when it heads no chain.
    ``include_all_chains`` adds chains whose head is not a pair argument.
    """
    entities = _gain_entities(d, include_all_chains)
    mb = _Builder(Recipe.GAIN_MENTION)
    mb.node("dialogue", NodeKind.DIALOGUE)
    for name, ms in entities:
        for m in ms:
            _mention_node(mb, m, entities=[name])
    for name, ms in entities:
        for m1, m2 in combinations(ms, 2):
            mb.edge(mention_id(m1), mention_id(m2), E.IE)
    by_utt: dict[int, list[str]] = {}
    for nid in mb.order[1:]:
        by_utt.setdefault(mb.nodes[nid].payload["span"][0], []).append(nid)
    for ids in by_utt.values():
        for a, c in combinations(ids, 2):
            mb.edge(a, c, E.IU)
    for nid in mb.order[1:]:
        mb.edge("dialogue", nid, E.DM)

    eb = _Builder(Recipe.GAIN_ENTITY)
    for name, ms in entities:
        role = "subject" if name == pair.subject else "object" if name == pair.object else None
        if not ms and not speaker_turns(d, name):
            eb.warn(f"UNRESOLVED_ARGUMENT: {name!r} has no chain, surface match, or turn in {d.id}")
        eb.node(
            f"ent:{name}",
            NodeKind.ARGUMENT,
            name=name,
            role=role,
            mentions=[mention_id(m) for m in ms],
            speaker_turns=speaker_turns(d, name),
        )
    utts = {name: {m.utterance_index for m in ms} for name, ms in entities}
    for (n1, _), (n2, _) in combinations(entities, 2):
        if utts[n1] & utts[n2]:
            eb.edge(f"ent:{n1}", f"ent:{n2}", E.EE)
    return mb.build(), eb.build()


def build_hgat(d: Dialogue, pair: ArgumentPair) -> DialogueGraph:
    b = _Builder(Recipe.HGAT)
    args = []
    for role, name, tag in (("subject", pair.subject, pair.subject_type), ("object", pair.object, pair.object_type)):
        args.append((_argument(b, d, name, role, tag), tag))
    for u in d.utterances:
        b.node(f"utt:{u.index}", NodeKind.UTTERANCE, index=u.index, speaker=u.speaker_id)
    for s in d.speakers:
        b.node(f"speaker:{s}", NodeKind.SPEAKER, name=s, turns=speaker_turns(d, s))
    # argument types of every pair in the dialogue act as a word typer
    typed_words: dict[str, list[str]] = {}
    for p in d.pairs:
        for name, tag in ((p.subject, p.subject_type), (p.object, p.object_type)):
            if not tag:
                continue
            words = typed_words.setdefault(tag, [])
            for m in find_surface(d, name):
                for tok in d.utterances[m.utterance_index].tokens[m.token_start : m.token_end + 1]:
                    if tok.lower() not in words:
                        words.append(tok.lower())
    for tag in typed_words:
        b.node(f"type:{tag}", NodeKind.TYPE, name=tag)
    vocab = []
    for u in d.utterances:
        for tok in u.tokens:
            if tok.lower() not in vocab:
                vocab.append(tok.lower())
    for w in vocab:
        b.node(f"word:{w}", NodeKind.WORD, word=w)

    for u in d.utterances:
        for tok in u.tokens:
            b.edge(f"utt:{u.index}", f"word:{tok.lower()}", E.UW)
    for (nid, _, occ, turns), _ in args:
        for ui in sorted({m.utterance_index for m in occ} | set(turns)):
            b.edge(f"utt:{ui}", nid, E.UA)
    for u in d.utterances:
        b.edge(f"utt:{u.index}", f"speaker:{u.speaker_id}", E.US)
    for tag, words in typed_words.items():
        for w in words:
            b.edge(f"type:{tag}", f"word:{w}", E.TW)
    for (nid, _, _, _), tag in args:
        if tag:
            b.edge(f"type:{tag}", nid, E.TA)
    for (nid, chain, _, _), _ in args:
        if not chain:
            continue
        for m in chain:
            for tok in d.utterances[m.utterance_index].tokens[m.token_start : m.token_end + 1]:
                b.edge(nid, f"word:{tok.lower()}", E.CW)
        name = b.nodes[nid].payload["name"]
        if name in d.speakers:
            b.edge(nid, f"speaker:{name}", E.CS)
        for ui in sorted({m.utterance_index for m in chain}):
            b.edge(nid, f"utt:{ui}", E.CU)
    return b.build()


def build(recipe: Recipe | str, d: Dialogue, pair: ArgumentPair, **kw) -> tuple[DialogueGraph, ...]:
    """Dispatch by recipe name; always returns a tuple (GAIN yields two graphs)."""
    recipe = Recipe(recipe) if not isinstance(recipe, Recipe) else recipe
    if recipe == Recipe.TUCORE:
        return (build_tucore(d, pair),)
    if recipe == Recipe.REDIALOG:
        return (build_redialog(d, pair, **kw),)
    if recipe in (Recipe.GAIN_MENTION, Recipe.GAIN_ENTITY):
        return build_gain(d, pair, **kw)
    if recipe == Recipe.HGAT:
        return (build_hgat(d, pair),)
    raise ValueError(recipe)


def parse_kinds(kinds: Iterable[str | EdgeKind] | str) -> frozenset[EdgeKind]:
    if isinstance(kinds, str):
        kinds = [k for k in kinds.split(",") if k.strip()]
    out = set()
    for k in kinds:
        try:
            out.add(EdgeKind(k.strip().upper() if isinstance(k, str) else k))
        except ValueError as e:
            raise UnknownKindError(f"unknown edge kind {k!r}") from e
    return frozenset(out)


def strip_edges(g: DialogueGraph, kinds: Iterable[str | EdgeKind]) -> DialogueGraph:
    """Copy of ``g`` without the given edge kinds.

    MENTION nodes that lose all their edges are dropped, along with references
    to them in argument payloads.
    """
    kinds = parse_kinds(kinds)
    bad = kinds - set(RECIPE_KINDS[g.recipe])
    if bad:
        raise UnknownKindError(f"{sorted(k.value for k in bad)} not used by recipe {g.recipe.value}")
    if not kinds:
        return copy.deepcopy(g)
    before = g.degree()
    edges = tuple(e for e in g.edges if e[2] not in kinds)
    after = Counter({n.id: 0 for n in g.nodes})
    for a, b, _ in edges:
        after[a] += 1
        after[b] += 1
    dropped = {
        n.id for n in g.nodes if n.kind == NodeKind.MENTION and before[n.id] > 0 and after[n.id] == 0
    }
    nodes = []
    for n in g.nodes:
        if n.id in dropped:
            continue
        payload = copy.deepcopy(n.payload)
        if "mentions" in payload:
            payload["mentions"] = [m for m in payload["mentions"] if m not in dropped]
        nodes.append(Node(n.id, n.kind, payload))
    return DialogueGraph(g.recipe, tuple(nodes), edges, g.warnings)
