"""Vocabulary, seeding and fingerprint helpers shared by the neural modules."""
from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import asdict, is_dataclass
from typing import Iterable

import numpy as np
import torch

PAD, UNK = "<pad>", "<unk>"


class Vocab:
    """Lower-cased token vocabulary; index 0 is padding, 1 is unknown."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        w = word.lower()
        if w not in self.stoi:
            self.stoi[w] = len(self.itos)
            self.itos.append(w)
        return self.stoi[w]

    def __len__(self):
        return len(self.itos)

    def __call__(self, word: str) -> int:
        return self.stoi.get(word.lower(), 1)

    @classmethod
    def from_dialogues(cls, dialogues, min_count: int = 1) -> "Vocab":
        counts = Counter(t.lower() for d in dialogues for u in d.utterances for t in u.tokens)
        # sorted so the vocabulary does not depend on corpus order
        return cls(sorted(w for w, c in counts.items() if c >= min_count))


def load_word_vectors(path, vocab: Vocab, dim: int) -> torch.Tensor:
    """Read GloVe-style ``word v1 v2 ...`` lines into a ``len(vocab) x dim`` matrix.

    Rows for words missing from the file keep a small random init.
    """
    gen = torch.Generator().manual_seed(0)
    table = torch.randn(len(vocab), dim, generator=gen) * 0.1
    table[0] = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1:
                continue
            idx = vocab.stoi.get(parts[0].lower())
            if idx is not None:
                table[idx] = torch.tensor([float(x) for x in parts[1:]])
    return table


def seed_everything(seed: int) -> torch.Generator:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def fingerprint(obj) -> str:
    """Stable short hash of a config (dataclass or mapping)."""
    if is_dataclass(obj):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


DTYPES = {"float32": torch.float32, "float64": torch.float64}
