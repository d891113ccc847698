from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Tuple


@dataclass(frozen=True)
class TraitSpec:
    name: str
    questionnaire: str
    num_classes: int


# 17 psychological attributes, grouped by questionnaire.
TRAITS: Tuple[TraitSpec, ...] = (
    TraitSpec("bfi_openness", "BFI", 4),
    TraitSpec("bfi_conscientiousness", "BFI", 4),
    TraitSpec("bfi_extraversion", "BFI", 4),
    TraitSpec("bfi_agreeableness", "BFI", 4),
    TraitSpec("bfi_neuroticism", "BFI", 4),
    TraitSpec("rse_esteem", "RSE", 3),
    TraitSpec("bpaq_physical", "BPAQ", 4),
    TraitSpec("bpaq_verbal", "BPAQ", 4),
    TraitSpec("bpaq_anger", "BPAQ", 4),
    TraitSpec("bpaq_hostility", "BPAQ", 4),
    TraitSpec("ofer_chronic", "OFER", 4),
    TraitSpec("ofer_acute", "OFER", 4),
    TraitSpec("ofer_recovery", "OFER", 4),
    TraitSpec("dass_depression", "DASS", 5),
    TraitSpec("dass_anxiety", "DASS", 5),
    TraitSpec("dass_stress", "DASS", 5),
    TraitSpec("ghq", "GHQ", 3),
)

TRAIT_NAMES: Tuple[str, ...] = tuple(t.name for t in TRAITS)
TRAIT_CLASSES: Dict[str, int] = {t.name: t.num_classes for t in TRAITS}


def trait_spec(name: str) -> TraitSpec:
    for t in TRAITS:
        if t.name == name:
            return t
    raise KeyError(name)
