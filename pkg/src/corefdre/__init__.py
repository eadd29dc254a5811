"""Dialogue relation extraction with coreference chains."""
from .data import (
    DEFAULT_INVENTORY,
    NO_RELATION,
    RELATIONS,
    ArgumentPair,
    ChainType,
    CoreferenceChain,
    Dialogue,
    Mention,
    RelationInventory,
    Utterance,
    validate_dialogue,
)
from .errors import CorefDREError

__version__ = "0.1.0"
