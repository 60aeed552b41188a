"""The shipped synthetic corpora: fixed recipes used by tests, scripts and the bench.

Two families:

* accuracy corpora (dev / eval / clean) at margin 40, where a substituted
  phone stays acoustically close (penalty 2..8 per frame) and decoys are
  planted keywords with one or two phones changed;
* speed corpora (triphone inventory, keyword scaling) at margin 50, a
  sharper landscape in which beam pruning bites harder.

How much work the beam saves depends on the ratio of the beam to the
per-frame mismatch cost, so the speed numbers are reported for the speed
family and should be read with that in mind (``scripts/run_bench.py``
also prints the scaling at the accuracy margin).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .synth import Corpus, make_corpus, synthetic_inventory, synthetic_keywords

ACCURACY_MARGIN = 40.0
SPEED_MARGIN = 50.0


@dataclass(frozen=True)
class Recipe:
    name: str
    minutes: float
    seed: int
    target_margin: float = ACCURACY_MARGIN
    substitution_rate: float = 0.15
    decoys_per_minute: float = 8.0
    decoy_substitutions: tuple = (1, 2)
    substitution_penalty: tuple = (2.0, 8.0)
    occurrences_per_minute: float = 12.0
    n_physical: int = None
    context_mode: str = "monophone"
    plant_from: int = None
    extra: dict = field(default_factory=dict)

    def build(self, keywords) -> Corpus:
        return make_corpus(
            minutes=self.minutes, occurrences_per_minute=self.occurrences_per_minute,
            substitution_rate=self.substitution_rate, decoys_per_minute=self.decoys_per_minute,
            decoy_substitutions=self.decoy_substitutions, target_margin=self.target_margin,
            n_physical=self.n_physical, context_mode=self.context_mode, seed=self.seed,
            keywords=keywords, name=self.name, plant_from=self.plant_from,
            substitution_penalty=self.substitution_penalty, **self.extra)


DEV = Recipe("dev", minutes=10, seed=11)
EVAL = Recipe("eval", minutes=20, seed=12)
CLEAN = replace(DEV, name="clean", minutes=5, seed=13, substitution_rate=0.0, decoys_per_minute=0.0)
TRIPHONE = Recipe("triphone", minutes=2, seed=21, target_margin=SPEED_MARGIN, n_physical=2000,
                  context_mode="triphone")
SCALING = Recipe("scaling", minutes=10, seed=22, target_margin=SPEED_MARGIN, plant_from=555)

RECIPES = {r.name: r for r in (DEV, EVAL, CLEAN, TRIPHONE, SCALING)}


def shipped_keywords(n_lemmas: int = 60):
    phones = synthetic_inventory().phones
    return synthetic_keywords(n_lemmas, phones, seed=1)


def scaling_keywords(n: int = 10000):
    """Three forms per lemma; the first 555 forms are a prefix of any longer list."""
    phones = synthetic_inventory().phones
    n_lemmas = -(-n // 3)
    return synthetic_keywords(n_lemmas, phones, forms_per_lemma=3, seed=31)[:n]


def build(name: str, **overrides) -> Corpus:
    """Build a shipped corpus by recipe name (dev, eval, clean, triphone, scaling)."""
    try:
        recipe = RECIPES[name]
    except KeyError:
        raise ValueError(f"unknown corpus {name!r}; choose from {sorted(RECIPES)}") from None
    if overrides:
        recipe = replace(recipe, **overrides)
    keywords = scaling_keywords() if name == "scaling" else shipped_keywords()
    return recipe.build(keywords)
