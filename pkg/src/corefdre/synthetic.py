"""Deterministic synthetic corpora with planted coreference structure.

The generators double as oracles: every chain and relation they emit is
known by construction.
"""
from __future__ import annotations

import random

from .data import ArgumentPair, ChainType, CoreferenceChain, Dialogue, Mention, Utterance, sorted_mentions
from .tokenize import tokenize

NAMES = (
    "Frank", "Mary", "Alex", "Sam", "Jordan", "Taylor", "Chris", "Pat", "Robin", "Casey",
    "Jamie", "Morgan", "Riley", "Quinn", "Avery", "Drew", "Emery", "Kai", "Lee", "Jesse",
)
PRONOUN_SETS = (
    {"SUBJ": "he", "OBJ": "him", "POSS": "his"},
    {"SUBJ": "she", "OBJ": "her", "POSS": "her"},
)

INTRO = (
    "Have you talked to {NAME} lately ?",
    "I ran into {NAME} at the station .",
    "{NAME} called this morning .",
    "Guess who I met today , {NAME} !",
)
FOLLOW = (
    "Really ? How is {SUBJ} doing ?",
    "{SUBJ} said the trip was great .",
    "I think {SUBJ} is moving to Boston .",
    "Did you give {OBJ} the keys ?",
    "Yes , and {POSS} car is fixed now .",
    "Tell {OBJ} to call me .",
    "Maybe {SUBJ} will come over on Friday .",
)
FILLER = ("Okay .", "Sounds good .", "That is great news .", "Sure , why not ?", "Hmm .")


class _Writer:
    """Accumulates turns and records spans of slot fillers."""

    def __init__(self):
        self.turns: list[tuple[str, list[str]]] = []
        self.slots: dict[str, list[tuple[int, int, int]]] = {}

    def say(self, speaker: str, template: str, fill: dict[str, tuple[str, str]]):
        """``fill`` maps slot -> (text, tag); spans are recorded under the tag."""
        toks: list[str] = []
        for piece in template.split(" "):
            if piece.startswith("{") and piece.endswith("}") and piece[1:-1] in fill:
                text, tag = fill[piece[1:-1]]
                words = tokenize(text)
                if not toks:
                    words[0] = words[0][:1].upper() + words[0][1:]
                self.slots.setdefault(tag, []).append((len(self.turns), len(toks), len(toks) + len(words) - 1))
                toks.extend(words)
            else:
                toks.extend(tokenize(piece))
        self.turns.append((speaker, toks))

    def utterances(self):
        return tuple(Utterance(i, s, tuple(t)) for i, (s, t) in enumerate(self.turns))


def _chain(utts, spans, ctype, head) -> CoreferenceChain:
    ms = [Mention(u, s, e, " ".join(utts[u].tokens[s : e + 1])) for u, s, e in spans]
    return CoreferenceChain(ctype, head, sorted_mentions(ms))


def planted_coref_corpus(n: int, seed: int = 0) -> list[Dialogue]:
    """Dialogues with exactly one third-person entity and its pronoun chain."""
    rng = random.Random(seed)
    out = []
    for k in range(n):
        name = rng.choice(NAMES)
        prons = rng.choice(PRONOUN_SETS)
        w = _Writer()
        speakers = ["S1", "S2"]
        w.say("S1", rng.choice(INTRO), {"NAME": (name, "ent")})
        follows = rng.sample(FOLLOW, rng.randint(2, 4))
        turn = 1
        for t in follows:
            if rng.random() < 0.3:
                w.say(speakers[turn % 2], rng.choice(FILLER), {})
                turn += 1
            fill = {slot: (prons[slot], "ent") for slot in ("SUBJ", "OBJ", "POSS")}
            w.say(speakers[turn % 2], t, fill)
            turn += 1
        utts = w.utterances()
        chain = _chain(utts, w.slots["ent"], ChainType.PERSON, name)
        pair = ArgumentPair("S1", name, ("unanswerable",), "PER", "PER", (37,))
        out.append(Dialogue(f"planted-{seed}-{k}", utts, (pair,), (chain,)))
    return out


RELATION_TRIGGERS = {
    "boss": "per:boss",
    "neighbor": "per:neighbor",
    "roommate": "per:roommate",
    "friend": "per:friends",
    "client": "per:client",
}


def chain_dependent_dre_corpus(n: int, seed: int = 0) -> list[Dialogue]:
    """Dialogues whose relations are recoverable only by following pronoun chains.

    Two people are introduced together in the first turn; later turns
    describe each one's relation to S1 using only a pronoun. Pronoun gender
    is assigned at random per dialogue, so names carry no cue.
    """
    from .data import RELATIONS

    rng = random.Random(seed)
    triggers = sorted(RELATION_TRIGGERS)
    out = []
    for k in range(n):
        a, b = rng.sample(NAMES, 2)
        pa, pb = rng.sample(PRONOUN_SETS, 2)
        ta, tb = rng.sample(triggers, 2)
        w = _Writer()
        w.say("S1", "I saw {A} and {B} at the party .", {"A": (a, "a"), "B": (b, "b")})
        # speaker chain for S1 starts with the intro's "I"
        w.slots.setdefault("s1", []).append((0, 0, 0))
        order = [(a, pa, ta, "a"), (b, pb, tb, "b")]
        rng.shuffle(order)
        for name, prons, trig, tag in order:
            w.say("S2", rng.choice(("Oh , who is {SUBJ} ?", "And what about {OBJ} ?", "Wait , who is {SUBJ} ?")),
                  {"SUBJ": (prons["SUBJ"], tag), "OBJ": (prons["OBJ"], tag)})
            if rng.random() < 0.3:
                w.say("S2", rng.choice(FILLER), {})
            w.say("S1", "{SUBJ} is {MY} " + trig + " .", {"SUBJ": (prons["SUBJ"], tag), "MY": ("my", "s1")})
        utts = w.utterances()
        chains = (
            _chain(utts, w.slots["s1"], ChainType.SPEAKER, "S1"),
            _chain(utts, w.slots["a"], ChainType.PERSON, a),
            _chain(utts, w.slots["b"], ChainType.PERSON, b),
        )
        pairs = tuple(
            ArgumentPair("S1", name, (RELATION_TRIGGERS[t],), "PER", "PER", (RELATIONS.index(RELATION_TRIGGERS[t]) + 1,), (t,))
            for name, t in ((a, ta), (b, tb))
        )
        out.append(Dialogue(f"chaindre-{seed}-{k}", utts, pairs, chains))
    return out
