"""In-memory dialogue model and annotation-scheme validation."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import AmbiguousHeadError
from .tokenize import normalize_ws, tokenize

# DialogRE relation inventory. Index i of a label vector corresponds to
# RELATIONS[i]; the corpus rid of RELATIONS[i] is i + 1.
RELATIONS: tuple[str, ...] = (
    "per:positive_impression",
    "per:negative_impression",
    "per:acquaintance",
    "per:alumni",
    "per:boss",
    "per:subordinate",
    "per:client",
    "per:dates",
    "per:friends",
    "per:girl/boyfriend",
    "per:neighbor",
    "per:roommate",
    "per:children",
    "per:other_family",
    "per:parents",
    "per:siblings",
    "per:spouse",
    "per:place_of_residence",
    "per:place_of_birth",
    "per:visited_place",
    "per:origin",
    "per:employee_or_member_of",
    "per:schools_attended",
    "per:works",
    "per:age",
    "per:date_of_birth",
    "per:major",
    "per:place_of_work",
    "per:title",
    "per:alternate_names",
    "per:pet",
    "gpe:residents_of_place",
    "gpe:births_in_place",
    "gpe:visitors_of_place",
    "org:employees_or_members",
    "org:students",
)
NO_RELATION = "unanswerable"
NO_RELATION_RID = len(RELATIONS) + 1


@dataclass(frozen=True)
class RelationInventory:
    """Closed label set. ``labels`` excludes the no-relation marker."""

    labels: tuple[str, ...] = RELATIONS
    no_relation: str = NO_RELATION

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __contains__(self, label) -> bool:
        return label == self.no_relation or label in self.labels


DEFAULT_INVENTORY = RelationInventory()


class ChainType(str, enum.Enum):
    SPEAKER = "speaker"
    PERSON = "person"
    LOCATION = "location"
    ORGANIZATION = "organization"


_ANON_SPEAKER = re.compile(r"^(?:S|Speaker ?)\d+$")


def is_anonymized_speaker(label: str) -> bool:
    return bool(_ANON_SPEAKER.match(label))


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker_id: str
    tokens: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True, order=True)
class Mention:
    utterance_index: int
    token_start: int
    token_end: int  # inclusive
    surface: str = field(default="", compare=False)

    @property
    def span(self) -> tuple[int, int, int]:
        return (self.utterance_index, self.token_start, self.token_end)

    @property
    def width(self) -> int:
        return self.token_end - self.token_start + 1


@dataclass(frozen=True)
class CoreferenceChain:
    chain_type: ChainType
    head: str
    mentions: tuple[Mention, ...]


@dataclass(frozen=True)
class ArgumentPair:
    subject: str
    object: str
    relations: tuple[str, ...]
    subject_type: str = ""
    object_type: str = ""
    rids: tuple[int, ...] = ()
    triggers: tuple[str, ...] = ()

    @property
    def positive_labels(self) -> frozenset[str]:
        return frozenset(r for r in self.relations if r != NO_RELATION)


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]
    pairs: tuple[ArgumentPair, ...] = ()
    chains: tuple[CoreferenceChain, ...] = ()

    @property
    def speakers(self) -> list[str]:
        """Distinct speaker labels in order of first appearance."""
        seen = []
        for u in self.utterances:
            if u.speaker_id not in seen:
                seen.append(u.speaker_id)
        return seen

    @property
    def num_tokens(self) -> int:
        return sum(len(u.tokens) for u in self.utterances)

    def span_text(self, u: int, s: int, e: int) -> str:
        return " ".join(self.utterances[u].tokens[s : e + 1])

    def without_chains(self) -> "Dialogue":
        return replace(self, chains=())

    def with_chains(self, chains: Iterable[CoreferenceChain]) -> "Dialogue":
        return replace(self, chains=tuple(chains))


def make_mention(d: Dialogue, u: int, s: int, e: int) -> Mention:
    return Mention(u, s, e, d.span_text(u, s, e))


@dataclass(frozen=True)
class Violation:
    dialogue_id: str
    chain_index: int | None
    mention_index: int | None
    rule: str
    detail: str = ""

    def __str__(self):
        where = self.dialogue_id
        if self.chain_index is not None:
            where += f" chain {self.chain_index}"
        if self.mention_index is not None:
            where += f" mention {self.mention_index}"
        return f"{self.rule} at {where}: {self.detail}"


def validate_dialogue(d: Dialogue, inventory: RelationInventory = DEFAULT_INVENTORY) -> list[Violation]:
    """Return every annotation-scheme violation in ``d``; empty means valid."""
    report: list[Violation] = []

    def flag(rule, detail, chain=None, mention=None):
        report.append(Violation(d.id, chain, mention, rule, detail))

    for pos, u in enumerate(d.utterances):
        if u.index != pos:
            flag("NONCONTIGUOUS_UTTERANCE_INDEX", f"utterance at position {pos} has index {u.index}")
        if not u.speaker_id or not u.speaker_id.strip():
            flag("EMPTY_SPEAKER", f"utterance {pos} has no speaker label")

    for p_idx, pair in enumerate(d.pairs):
        if not pair.relations:
            flag("EMPTY_RELATIONS", f"pair {p_idx} ({pair.subject}, {pair.object}) has no labels")
        for label in pair.relations:
            if label not in inventory:
                flag("UNKNOWN_RELATION", f"pair {p_idx} label {label!r}")

    speakers = set(d.speakers)
    owner: dict[tuple[int, int, int], int] = {}
    for c_idx, chain in enumerate(d.chains):
        if not isinstance(chain.chain_type, ChainType):
            flag("BAD_CHAIN_TYPE", f"{chain.chain_type!r}", c_idx)
        if not chain.mentions:
            flag("EMPTY_CHAIN", f"chain headed {chain.head!r} has no mentions", c_idx)
        if chain.chain_type == ChainType.SPEAKER and chain.head not in speakers:
            flag("SPEAKER_HEAD_UNKNOWN", f"head {chain.head!r} is not a speaker of this dialogue", c_idx)
        seen_in_chain = set()
        prev = None
        for m_idx, m in enumerate(chain.mentions):
            key = m.span
            if prev is not None and (m.utterance_index, m.token_start) < prev:
                flag("UNSORTED_MENTIONS", f"mention {key} precedes {prev}", c_idx, m_idx)
            prev = (m.utterance_index, m.token_start)
            if key in seen_in_chain:
                flag("DUPLICATE_IN_CHAIN", f"span {key} repeated", c_idx, m_idx)
                continue
            seen_in_chain.add(key)
            if not 0 <= m.utterance_index < len(d.utterances):
                flag("SPAN_OUT_OF_RANGE", f"utterance index {m.utterance_index} not in [0, {len(d.utterances)})", c_idx, m_idx)
                continue
            n = len(d.utterances[m.utterance_index].tokens)
            if not 0 <= m.token_start <= m.token_end < n:
                flag("SPAN_OUT_OF_RANGE", f"tokens [{m.token_start}, {m.token_end}] outside utterance of length {n}", c_idx, m_idx)
                continue
            expected = d.span_text(*key)
            if normalize_ws(m.surface) != expected:
                flag("SURFACE_MISMATCH", f"surface {m.surface!r} != tokens {expected!r}", c_idx, m_idx)
            if key in owner:
                flag("DUPLICATE_MENTION", f"span {key} already in chain {owner[key]}", c_idx, m_idx)
            else:
                owner[key] = c_idx
    return report


def find_surface(d: Dialogue, text: str) -> list[Mention]:
    """Exact, case-sensitive token-sequence occurrences of ``text``."""
    needle = tuple(tokenize(text))
    if not needle:
        return []
    k = len(needle)
    hits = []
    for u in d.utterances:
        toks = u.tokens
        for s in range(len(toks) - k + 1):
            if toks[s : s + k] == needle:
                hits.append(Mention(u.index, s, s + k - 1, " ".join(needle)))
    return hits


def chains_for(d: Dialogue, arg: str) -> list[int]:
    """Indices of chains whose head matches ``arg``."""
    key = arg if arg in d.speakers else normalize_ws(arg)
    return [i for i, c in enumerate(d.chains) if (c.head if c.head in d.speakers else normalize_ws(c.head)) == key]


def mentions_of_argument(d: Dialogue, arg: str) -> list[Mention]:
    """Mentions of a pair member: its chain if one is headed by it, else surface hits.

    Raises AmbiguousHeadError when more than one chain carries the head.
    """
    hits = chains_for(d, arg)
    if len(hits) > 1:
        raise AmbiguousHeadError(f"{len(hits)} chains headed {arg!r} in {d.id}", hits)
    if hits:
        return list(d.chains[hits[0]].mentions)
    return find_surface(d, arg)


def chain_mentions(d: Dialogue, arg: str) -> list[Mention]:
    """Mentions of ``arg`` drawn from chains only; ambiguous heads are merged.

    Graph recipes use this so that stripping chains never changes the
    non-coreference part of a graph.
    """
    hits = chains_for(d, arg)
    merged = sorted({m for i in hits for m in d.chains[i].mentions})
    return merged


def argument_occurrences(d: Dialogue, arg: str) -> list[Mention]:
    return find_surface(d, arg)


def speaker_turns(d: Dialogue, arg: str) -> list[int]:
    return [u.index for u in d.utterances if u.speaker_id == arg]


def sorted_mentions(mentions: Sequence[Mention]) -> tuple[Mention, ...]:
    return tuple(sorted(mentions, key=lambda m: m.span))
