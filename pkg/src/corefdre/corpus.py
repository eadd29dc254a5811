"""Readers and writers: corpus JSON, chain sidecars, Brat standoff, CoNLL export."""
from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

from .data import (
    DEFAULT_INVENTORY,
    ArgumentPair,
    ChainType,
    CoreferenceChain,
    Dialogue,
    Mention,
    RelationInventory,
    Utterance,
    sorted_mentions,
    validate_dialogue,
)
from .errors import ParseError, SchemaError, ValidationError
from .tokenize import tokenize, tokenize_with_offsets

log = logging.getLogger(__name__)

_PREFIX = re.compile(r"^\s*(S\d+|Speaker ?\d+|[A-Z][\w.'\- ]{0,40}?)\s*:\s?")

SIDECAR_FIELDS = ("type", "head", "mentions", "u", "s", "e", "text")


def split_turn(turn: str) -> tuple[str, str]:
    """Split ``"S1: Hey Pheebs."`` into ``("S1", "Hey Pheebs.")``."""
    m = _PREFIX.match(turn)
    if not m:
        raise SchemaError(f"turn has no speaker prefix: {turn[:40]!r}")
    return m.group(1).strip(), turn[m.end():]


def write_atomic(path, data: str | bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise ParseError(f"no such file: {path}", path=str(path)) from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}", path=str(path)) from e


# ---------------------------------------------------------------- corpus JSON

def parse_record(record, dialogue_id: str) -> Dialogue:
    if not isinstance(record, (list, tuple)) or len(record) < 2:
        raise SchemaError(f"{dialogue_id}: record must be [turns, relations]")
    turns, rels = record[0], record[1]
    if not isinstance(turns, list) or not turns:
        raise SchemaError(f"{dialogue_id}: record needs at least one turn")
    if not isinstance(rels, list) or not rels:
        raise SchemaError(f"{dialogue_id}: record needs at least one relation entry")
    utterances = []
    for i, turn in enumerate(turns):
        if not isinstance(turn, str):
            raise SchemaError(f"{dialogue_id}: turn {i} is not a string")
        speaker, body = split_turn(turn)
        utterances.append(Utterance(i, speaker, tuple(tokenize(body))))
    pairs = []
    for j, r in enumerate(rels):
        try:
            x, y, labels = r["x"], r["y"], r["r"]
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{dialogue_id}: relation {j} missing field {e}") from e
        rids = r.get("rid", [])
        for rid in rids:
            if not isinstance(rid, int) or not 1 <= rid <= len(DEFAULT_INVENTORY) + 1:
                raise SchemaError(f"{dialogue_id}: relation {j} has rid {rid!r} outside the inventory")
        pairs.append(
            ArgumentPair(
                subject=x,
                object=y,
                relations=tuple(labels),
                subject_type=r.get("x_type", ""),
                object_type=r.get("y_type", ""),
                rids=tuple(rids),
                triggers=tuple(r.get("t", [])),
            )
        )
    return Dialogue(dialogue_id, tuple(utterances), tuple(pairs))


def record_of(d: Dialogue, raw_turns: list[str] | None = None) -> list:
    turns = raw_turns or [f"{u.speaker_id}: {' '.join(u.tokens)}" for u in d.utterances]
    rels = []
    for p in d.pairs:
        entry = {"y": p.object, "x": p.subject, "rid": list(p.rids), "r": list(p.relations), "t": list(p.triggers)}
        entry["x_type"], entry["y_type"] = p.subject_type, p.object_type
        rels.append(entry)
    return [turns, rels]


def dump_corpus(dialogues: Iterable[Dialogue], path) -> None:
    records = [record_of(d) for d in dialogues]
    write_atomic(path, json.dumps(records, ensure_ascii=False, indent=1) + "\n")


# ---------------------------------------------------------------- sidecars

def chain_to_json(chain: CoreferenceChain) -> dict:
    return {
        "type": chain.chain_type.value,
        "head": chain.head,
        "mentions": [
            {"u": m.utterance_index, "s": m.token_start, "e": m.token_end, "text": m.surface}
            for m in chain.mentions
        ],
    }


def chain_from_json(obj, where: str, field_map: Mapping[str, str] | None = None) -> CoreferenceChain:
    f = {k: k for k in SIDECAR_FIELDS}
    if field_map:
        f.update(field_map)
    try:
        ctype = ChainType(str(obj[f["type"]]).lower())
    except KeyError as e:
        raise SchemaError(f"{where}: chain missing field {e}") from e
    except ValueError as e:
        raise SchemaError(f"{where}: unknown chain type {obj[f['type']]!r}") from e
    try:
        head = obj[f["head"]]
        raw = obj[f["mentions"]]
        mentions = []
        for m in raw:
            u, s, e = m[f["u"]], m[f["s"]], m[f["e"]]
            if not all(isinstance(v, int) and v >= 0 for v in (u, s, e)):
                raise SchemaError(f"{where}: mention indices must be integers >= 0, got {(u, s, e)}")
            mentions.append(Mention(u, s, e, m.get(f["text"], "")))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{where}: malformed chain ({e})") from e
    return CoreferenceChain(ctype, head, tuple(mentions))


def load_sidecar(path, field_map: Mapping[str, str] | None = None) -> dict | list:
    """Read a sidecar file.

    Returns a dict ``{dialogue_id: [CoreferenceChain, ...]}`` when the file is an
    object keyed by id, or a list aligned with corpus record order.
    ``field_map`` renames canonical keys (type, head, mentions, u, s, e, text)
    to whatever the file uses.
    """
    raw = _read_json(path)
    if isinstance(raw, dict):
        return {
            str(k): [chain_from_json(c, f"{path}:{k}", field_map) for c in (v or [])]
            for k, v in raw.items()
        }
    if isinstance(raw, list):
        return [[chain_from_json(c, f"{path}:{i}", field_map) for c in (v or [])] for i, v in enumerate(raw)]
    raise SchemaError(f"{path}: sidecar must be an object or a list")


def sidecar_of(dialogues: Iterable[Dialogue]) -> dict:
    return {d.id: [chain_to_json(c) for c in d.chains] for d in dialogues}


def dump_sidecar(sidecar: Mapping[str, list], path) -> None:
    """``sidecar`` maps dialogue id to chain dicts or CoreferenceChain objects."""
    norm = {
        k: [c if isinstance(c, dict) else chain_to_json(c) for c in v]
        for k, v in sidecar.items()
    }
    write_atomic(path, json.dumps(norm, ensure_ascii=False, indent=1, sort_keys=True) + "\n")


def attach_chains(d: Dialogue, chains: Iterable[CoreferenceChain]) -> Dialogue:
    """Attach chains, filling empty mention surfaces from the tokens."""
    fixed = []
    for c in chains:
        ms = []
        for m in c.mentions:
            if not m.surface and 0 <= m.utterance_index < len(d.utterances):
                toks = d.utterances[m.utterance_index].tokens
                m = Mention(m.utterance_index, m.token_start, m.token_end, " ".join(toks[m.token_start : m.token_end + 1]))
            ms.append(m)
        fixed.append(CoreferenceChain(c.chain_type, c.head, tuple(ms)))
    return d.with_chains(fixed)


def load_corpus(
    path,
    sidecar_path=None,
    *,
    field_map: Mapping[str, str] | None = None,
    id_prefix: str | None = None,
    inventory: RelationInventory = DEFAULT_INVENTORY,
    validate: bool = True,
) -> list[Dialogue]:
    """Load a corpus file, optionally attaching chains from a sidecar.

    Dialogue ids are ``"{prefix}-{index}"`` with the prefix defaulting to the
    file stem. Raises ValidationError (report attached) if any dialogue breaks
    the annotation scheme.
    """
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: corpus must be a JSON array")
    prefix = Path(path).stem if id_prefix is None else id_prefix
    dialogues = [parse_record(rec, f"{prefix}-{i}") for i, rec in enumerate(raw)]
    if sidecar_path is not None:
        side = load_sidecar(sidecar_path, field_map)
        if isinstance(side, dict) and side:
            known = {d.id for d in dialogues} | {str(i) for i in range(len(dialogues))}
            stray = sorted(set(side) - known)
            if len(stray) == len(side):
                raise SchemaError(f"{sidecar_path}: no sidecar key matches a dialogue id of {path} (e.g. {stray[0]!r})")
            if stray:
                log.warning("%s: %d sidecar keys match no dialogue", sidecar_path, len(stray))
        out = []
        for i, d in enumerate(dialogues):
            if isinstance(side, dict):
                chains = side.get(d.id, side.get(str(i), []))
            else:
                chains = side[i] if i < len(side) else []
            out.append(attach_chains(d, chains))
        dialogues = out
    if validate:
        report = [v for d in dialogues for v in validate_dialogue(d, inventory)]
        if report:
            raise ValidationError(f"{len(report)} annotation violation(s) in {path}", report)
    return dialogues


# ---------------------------------------------------------------- Brat standoff

@dataclass(frozen=True)
class StandoffIssue:
    file: str
    offset: int
    rule: str
    detail: str


_TYPE_ALIASES = {t.value: t for t in ChainType}
_TYPE_ALIASES.update({"per": ChainType.PERSON, "loc": ChainType.LOCATION, "gpe": ChainType.LOCATION, "org": ChainType.ORGANIZATION})


def _ann_entities_and_links(ann_text: str):
    entities, links, notes = {}, [], {}
    for line in ann_text.splitlines():
        if not line.strip():
            continue
        cols = line.split("\t")
        tag = cols[0]
        if tag.startswith("T") and len(cols) >= 2:
            label, *spans = cols[1].split(" ", 1)
            frags = spans[0].split(";") if spans else []
            # discontinuous entities use the outer extent
            offs = [tuple(int(x) for x in fr.split()) for fr in frags if fr.strip()]
            if not offs:
                continue
            entities[tag] = (label, min(o[0] for o in offs), max(o[1] for o in offs))
        elif tag.startswith("R") and len(cols) >= 2:
            parts = cols[1].split()
            args = [p.split(":", 1)[1] for p in parts[1:] if ":" in p]
            if parts[0].lower() in ("coref", "coreference") and len(args) == 2:
                links.append(tuple(args))
        elif tag.startswith("#") and len(cols) >= 3:
            parts = cols[1].split()
            if parts[0] == "AnnotatorNotes" and len(parts) == 2 and cols[2].startswith("head="):
                notes[parts[1]] = cols[2][len("head="):]
        elif tag == "*" and len(cols) >= 2:
            parts = cols[1].split()
            if parts[0].lower() in ("coref", "coreference", "equiv"):
                ids = parts[1:]
                links.extend((ids[0], other) for other in ids[1:])
    return entities, links, notes


def _line_index(text: str):
    """Per turn line: (line start offset, speaker id, speaker span, token offsets)."""
    lines = []
    pos = 0
    for raw in text.split("\n"):
        if raw.strip():
            m = _PREFIX.match(raw)
            if m:
                speaker = m.group(1).strip()
                sp_start = pos + raw.index(speaker)
                body_start = pos + m.end()
                toks = [(t, body_start + a, body_start + b) for t, a, b in tokenize_with_offsets(raw[m.end():])]
                lines.append((speaker, (sp_start, sp_start + len(speaker)), toks))
        pos += len(raw) + 1
    return lines


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


_PRONOUNS = frozenset(
    "i me my mine myself you your yours yourself he him his himself she her hers herself "
    "it its itself they them their theirs this that".split()
)


def import_standoff(text_dir, ann_dir) -> tuple[dict, list[StandoffIssue]]:
    """Convert Brat ``.txt``/``.ann`` pairs to sidecar chains.

    Each ``.txt`` holds one ``"Sk: ..."`` turn per line. Coreference links are
    closed transitively; the chain type comes from the entity label. An
    entity covering a turn's speaker prefix names the chain head. Entities
    whose character span does not fall on token boundaries are skipped and
    reported as OFFSET_MISALIGNED. An ``AnnotatorNotes`` line of the form
    ``head=<name>`` on any chain member overrides head detection.

    Returns ``(sidecar, issues)`` where sidecar maps file stem to chain dicts.
    """
    text_dir, ann_dir = Path(text_dir), Path(ann_dir)
    sidecar: dict[str, list] = {}
    issues: list[StandoffIssue] = []
    for txt_path in sorted(text_dir.glob("*.txt")):
        doc_id = txt_path.stem
        ann_path = ann_dir / f"{doc_id}.ann"
        text = txt_path.read_text(encoding="utf-8")
        ann = ann_path.read_text(encoding="utf-8") if ann_path.exists() else ""
        entities, links, notes = _ann_entities_and_links(ann)
        lines = _line_index(text)

        starts, ends, speaker_spans = {}, {}, {}
        for u, (speaker, sp, toks) in enumerate(lines):
            speaker_spans[sp] = speaker
            for t_idx, (_, a, b) in enumerate(toks):
                starts[a] = (u, t_idx)
                ends[b] = (u, t_idx)

        resolved = {}  # entity id -> ("mention", (u, s, e)) | ("speaker", label)
        for eid, (label, a, b) in sorted(entities.items(), key=lambda kv: kv[1][1]):
            if (a, b) in speaker_spans:
                resolved[eid] = ("speaker", speaker_spans[(a, b)])
                continue
            if a in starts and b in ends and starts[a][0] == ends[b][0] and starts[a][1] <= ends[b][1]:
                resolved[eid] = ("mention", (starts[a][0], starts[a][1], ends[b][1]))
            else:
                issues.append(StandoffIssue(str(ann_path), a, "OFFSET_MISALIGNED", f"{eid} [{a}, {b}) {text[a:b]!r}"))

        uf = _UnionFind()
        for a, b in links:
            if a in resolved and b in resolved:
                uf.union(a, b)
        groups = defaultdict(list)
        for eid in resolved:
            if eid in uf.parent:
                groups[uf.find(eid)].append(eid)

        chains = []
        for members in groups.values():
            labels = [entities[e][0].lower() for e in members]
            ctype = next((_TYPE_ALIASES[l] for l in labels if l in _TYPE_ALIASES), ChainType.PERSON)
            spans = sorted({resolved[e][1] for e in members if resolved[e][0] == "mention"})
            heads = [resolved[e][1] for e in members if resolved[e][0] == "speaker"]
            if not spans:
                continue
            mentions = [
                {"u": u, "s": s, "e": e, "text": " ".join(t for t, _, _ in lines[u][2][s : e + 1])}
                for u, s, e in spans
            ]
            noted = [notes[e] for e in members if e in notes]
            if noted:
                head = noted[0]
            elif heads:
                head = heads[0]
            else:
                names = [m["text"] for m in mentions if m["text"].lower() not in _PRONOUNS]
                head = names[0] if names else mentions[0]["text"]
            chains.append({"type": ctype.value, "head": head, "mentions": mentions})
        chains.sort(key=lambda c: (c["mentions"][0]["u"], c["mentions"][0]["s"], c["mentions"][0]["e"]))
        sidecar[doc_id] = chains
    for issue in issues:
        log.warning("%s %s offset %d: %s", issue.rule, issue.file, issue.offset, issue.detail)
    return sidecar, issues


def export_standoff(d: Dialogue, text_dir, ann_dir) -> None:
    """Write a dialogue and its chains as a Brat ``.txt``/``.ann`` pair."""
    lines, offsets = [], []
    pos = 0
    for u in d.utterances:
        prefix = f"{u.speaker_id}: "
        body = " ".join(u.tokens)
        tok_offs, cur = [], pos + len(prefix)
        for t in u.tokens:
            tok_offs.append((cur, cur + len(t)))
            cur += len(t) + 1
        offsets.append(((pos, pos + len(u.speaker_id)), tok_offs))
        lines.append(prefix + body)
        pos += len(prefix) + len(body) + 1
    text = "\n".join(lines) + "\n"
    ann, t_id, r_id, n_id = [], 1, 1, 1
    label_of = {t: t.value.capitalize() for t in ChainType}
    for c in d.chains:
        ids = []
        if c.chain_type == ChainType.SPEAKER:
            for u in d.utterances:
                if u.speaker_id == c.head:
                    a, b = offsets[u.index][0]
                    ann.append(f"T{t_id}\t{label_of[c.chain_type]} {a} {b}\t{c.head}")
                    ids.append(f"T{t_id}")
                    t_id += 1
                    break
        for m in c.mentions:
            a = offsets[m.utterance_index][1][m.token_start][0]
            b = offsets[m.utterance_index][1][m.token_end][1]
            ann.append(f"T{t_id}\t{label_of[c.chain_type]} {a} {b}\t{text[a:b]}")
            ids.append(f"T{t_id}")
            t_id += 1
        for prev, cur in zip(ids, ids[1:]):
            ann.append(f"R{r_id}\tCoref Arg1:{prev} Arg2:{cur}")
            r_id += 1
        if ids:
            ann.append(f"#{n_id}\tAnnotatorNotes {ids[0]}\thead={c.head}")
            n_id += 1
    write_atomic(Path(text_dir) / f"{d.id}.txt", text)
    write_atomic(Path(ann_dir) / f"{d.id}.ann", "\n".join(ann) + ("\n" if ann else ""))


# ---------------------------------------------------------------- CoNLL

def export_conll(dialogues: Iterable[Dialogue]) -> Iterator[str]:
    """Yield lines of a CoNLL-style document stream, one document per dialogue.

    Columns: doc_id, utterance_index, token_index, token, speaker_id, coref.
    Chain ids are chain positions within the dialogue. ``#chain`` comment
    lines carry each chain's type and head so the import is lossless.
    """
    for d in dialogues:
        yield f"#begin document ({d.id});"
        for k, c in enumerate(d.chains):
            yield f"#chain\t{k}\t{c.chain_type.value}\t{c.head}"
        marks: dict[tuple[int, int], list[tuple[int, str]]] = defaultdict(list)
        for k, c in enumerate(d.chains):
            for m in c.mentions:
                if m.token_start == m.token_end:
                    marks[(m.utterance_index, m.token_start)].append((1, f"({k})"))
                else:
                    # closes precede opens on a token so a reader's stack pops the right start
                    marks[(m.utterance_index, m.token_start)].append((2, f"({k}"))
                    marks[(m.utterance_index, m.token_end)].append((0, f"{k})"))
        for u in d.utterances:
            for t, tok in enumerate(u.tokens):
                col = "|".join(s for _, s in sorted(marks.get((u.index, t), []), key=lambda x: x[0])) or "-"
                yield "\t".join((d.id, str(u.index), str(t), tok, u.speaker_id, col))
            yield ""
        yield "#end document"


def write_conll(dialogues: Iterable[Dialogue], path) -> None:
    write_atomic(path, "\n".join(export_conll(dialogues)) + "\n")


def read_conll(lines: Iterable[str] | IO[str]) -> list[Dialogue]:
    """Parse the stream produced by :func:`export_conll` back into dialogues."""
    docs = []
    cur = None

    def finish():
        toks = cur["tokens"]
        utts = tuple(
            Utterance(u, cur["speakers"][u], tuple(toks[u])) for u in sorted(toks)
        )
        chains = []
        for k in sorted(cur["spans"]):
            ctype, head = cur["meta"].get(k, (ChainType.PERSON, ""))
            ms = [Mention(u, s, e, " ".join(toks[u][s : e + 1])) for u, s, e in cur["spans"][k]]
            chains.append(CoreferenceChain(ctype, head or ms[0].surface, sorted_mentions(ms)))
        docs.append(Dialogue(cur["id"], utts, (), tuple(chains)))

    for raw in lines:
        line = raw.rstrip("\n")
        if line.startswith("#begin document"):
            m = re.match(r"#begin document \((.*)\);?", line)
            cur = {"id": m.group(1) if m else str(len(docs)), "tokens": defaultdict(list), "speakers": {},
                   "spans": defaultdict(list), "open": defaultdict(list), "meta": {}}
            continue
        if cur is None:
            continue
        if line.startswith("#end document"):
            finish()
            cur = None
            continue
        if line.startswith("#chain"):
            _, k, ctype, head = line.split("\t", 3)
            cur["meta"][int(k)] = (ChainType(ctype), head)
            continue
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ParseError(f"expected 6 tab-separated columns, got {len(cols)}: {line!r}")
        _, u, t, tok, speaker, col = cols
        u, t = int(u), int(t)
        cur["tokens"][u].append(tok)
        cur["speakers"][u] = speaker
        if col != "-":
            for part in col.split("|"):
                if part.startswith("(") and part.endswith(")"):
                    cur["spans"][int(part[1:-1])].append((u, t, t))
                elif part.startswith("("):
                    cur["open"][int(part[1:])].append((u, t))
                elif part.endswith(")"):
                    k = int(part[:-1])
                    su, st = cur["open"][k].pop()
                    cur["spans"][k].append((su, st, t))
    if cur is not None:
        raise ParseError("unterminated document in CoNLL stream")
    return docs


def fixture_paths() -> tuple[Path, Path]:
    """Bundled four-dialogue fixture corpus and its chain sidecar."""
    base = Path(__file__).with_name("data")
    return base / "fixture.json", base / "fixture.chains.json"
