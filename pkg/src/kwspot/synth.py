"""Synthetic likelihood streams with planted keyword occurrences.

Every frame has one "aligned" state scoring ``noise_floor + target_margin``;
all other states score ``noise_floor`` plus uniform jitter in
``[0, target_margin / 2)``. Background frames are aligned to random filler
models, planted spans to the keyword's own states (optionally with some
phones substituted). Values are quantised to 1/4096 so that every
accumulated score and every per-frame score difference is exactly
representable in 32-bit floats; this keeps cache replays bit-exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .likelihood import LikelihoodMatrix
from .model import KeywordEntry, PhonemeInventory, build_keyword_model

log = logging.getLogger(__name__)

QUANTUM = 1.0 / 4096


@dataclass(frozen=True)
class Occurrence:
    keyword: int
    start: int
    end: int  # inclusive
    substitutions: int = 0
    decoy: bool = False


@dataclass
class SynthSpec:
    num_frames: int
    planted: list = field(default_factory=list)
    noise_floor: float = -40.0
    target_margin: float = 30.0
    seed: int = 0
    frame_shift_ms: int = 10
    max_state_frames: int = 4
    # a substituted phone is acoustically close: the keyword's own state scores
    # this far (uniform per phone) below the aligned one; None leaves it at the floor
    substitution_penalty: Optional[tuple] = None

    def __post_init__(self):
        if self.target_margin < 0:
            raise ValueError("target_margin must be >= 0")
        if self.substitution_penalty is not None:
            lo, hi = self.substitution_penalty
            if not 0 < lo <= hi:
                raise ValueError("substitution_penalty needs 0 < lo <= hi")
        spans = sorted(self.planted, key=lambda o: o.start)
        for o in spans:
            if not 0 <= o.start <= o.end < self.num_frames:
                raise ValueError(f"planted span {o.start}-{o.end} outside stream of {self.num_frames} frames")
        for a, b in zip(spans, spans[1:]):
            if b.start <= a.end:
                raise ValueError(f"planted spans {a.start}-{a.end} and {b.start}-{b.end} overlap")


def _split_frames(n_frames, n_states, rng):
    """Random durations >= 1 for ``n_states`` states summing to ``n_frames``."""
    extra = rng.multinomial(n_frames - n_states, np.full(n_states, 1.0 / n_states))
    return 1 + extra


def _quantize(x):
    return np.floor(np.asarray(x, dtype=np.float64) / QUANTUM) * QUANTUM


def keyword_alignment_states(unit, entry, inventory, n_subst, rng):
    """Keyword state sequence with ``n_subst`` phones swapped for other phones.

    Also returns the indices of the phones that were swapped.
    """
    spp = inventory.states_per_phone
    states = list(unit.state_ids)
    where = []
    if n_subst:
        where = sorted(int(i) for i in rng.choice(len(entry.phones),
                                                  size=min(n_subst, len(entry.phones)), replace=False))
        for i in where:
            others = [p for p in inventory.phones if p != entry.phones[i]]
            sub = others[rng.integers(len(others))]
            states[i * spp:(i + 1) * spp] = inventory.ci_states(sub)
    return states, where


def _background(gap, models, max_dur, rng):
    """Aligned state ids for a gap of ``gap`` frames filled with random filler models."""
    out = []
    r = gap
    while r > 0:
        if r < 3:
            if out:
                out.extend([out[-1]] * r)
            else:
                out.extend([-1] * r)
            break
        ids = models[rng.integers(len(models))]
        n = len(ids)
        if r <= n * max_dur:
            durs = _split_frames(r, n, rng) if r >= n else None
            if durs is None:
                out.extend([-1] * r)
                break
        else:
            durs = rng.integers(1, max_dur + 1, size=n)
            if 0 < r - durs.sum() < 3:
                durs[-1] += r - durs.sum()
        for sid, k in zip(ids, durs):
            out.extend([sid] * int(k))
        r -= int(durs.sum())
    return out


def synth_generate(spec: SynthSpec, keywords, inventory: PhonemeInventory,
                   context_mode: str = "triphone", background_models=None):
    """Build a likelihood matrix with the planted occurrences.

    Returns ``(matrix, truth, alignment)`` where ``truth`` lists the
    non-decoy occurrences and ``alignment`` holds the aligned state per
    frame (-1 where no model fits).
    """
    rng = np.random.default_rng(spec.seed)
    units = [build_keyword_model(e, inventory, context_mode, i) for i, e in enumerate(keywords)]
    for o in spec.planted:
        n_s = units[o.keyword].num_states
        if o.end - o.start + 1 < n_s:
            raise ValueError(f"span {o.start}-{o.end} shorter than the {n_s} states of "
                             f"{keywords[o.keyword].form!r}")
    if background_models is None:
        background_models = [ids for _, ids in inventory.physical_models()]

    align = []
    near = []  # (frame, keyword's own state, penalty) inside substituted phones
    spp = inventory.states_per_phone
    pos = 0
    for o in sorted(spec.planted, key=lambda o: o.start):
        align.extend(_background(o.start - pos, background_models, spec.max_state_frames, rng))
        own = units[o.keyword].state_ids
        states, swapped = keyword_alignment_states(units[o.keyword], keywords[o.keyword], inventory,
                                                   o.substitutions, rng)
        durs = _split_frames(o.end - o.start + 1, len(states), rng)
        pen = {}
        if spec.substitution_penalty is not None:
            pen = {i: float(_quantize(rng.uniform(*spec.substitution_penalty))) for i in swapped}
        f = o.start
        for j, (sid, k) in enumerate(zip(states, durs)):
            align.extend([sid] * int(k))
            if j // spp in pen:
                near.extend((f + q, own[j], pen[j // spp]) for q in range(int(k)))
            f += int(k)
        pos = o.end + 1
    align.extend(_background(spec.num_frames - pos, background_models, spec.max_state_frames, rng))
    align = np.array(align, dtype=np.int64)
    assert align.size == spec.num_frames

    n_states = inventory.num_states
    floor = float(_quantize(spec.noise_floor))
    top = float(_quantize(spec.noise_floor + spec.target_margin))
    half = spec.target_margin / 2
    values = np.empty((spec.num_frames, n_states), dtype=np.float32)
    chunk = max(1, 2 ** 22 // n_states)
    for lo in range(0, spec.num_frames, chunk):
        hi = min(lo + chunk, spec.num_frames)
        jitter = rng.random((hi - lo, n_states))
        block = floor + np.floor(jitter * half / QUANTUM) * QUANTUM
        # keep the jitter strictly under the margin after quantisation
        block = np.minimum(block, top - QUANTUM) if spec.target_margin > 0 else np.full_like(block, floor)
        values[lo:hi] = block
    rows = np.flatnonzero(align >= 0)
    values[rows, align[rows]] = top
    for f, sid, p in near:
        if sid != align[f]:
            values[f, sid] = top - p
    truth = [o for o in sorted(spec.planted, key=lambda o: o.start) if not o.decoy]
    m = LikelihoodMatrix(values, frame_shift_ms=spec.frame_shift_ms)
    return m, truth, align


# ---------------------------------------------------------------------------
# corpus construction helpers

def synthetic_inventory(n_phones=40, n_noises=8, n_physical=None, contexts=(), seed=0,
                        states_per_phone=3) -> PhonemeInventory:
    """Inventory of ``p0..`` phones and ``n0..`` noises.

    ``contexts`` are (center, left, right) triples that must get a triphone
    variant; extra random variants are added until the inventory has
    ``n_physical`` distinct models. Variant states are untied.
    """
    rng = np.random.default_rng(seed)
    phones = [f"p{i}" for i in range(n_phones)]
    noises = [f"n{i}" for i in range(n_noises)]
    base = (n_phones + n_noises) * states_per_phone
    variants = {}
    next_id = base

    def add(key):
        nonlocal next_id
        if key not in variants:
            variants[key] = tuple(range(next_id, next_id + states_per_phone))
            next_id += states_per_phone

    for key in contexts:
        add(tuple(key))
    if n_physical is not None:
        n_ci = n_phones + n_noises
        if len(variants) + n_ci > n_physical:
            raise ValueError(f"{len(variants) + n_ci} models already exceed n_physical={n_physical}")
        while len(variants) + n_ci < n_physical:
            c, l, r = rng.integers(n_phones, size=3)
            add((phones[c], phones[l], phones[r]))
    return PhonemeInventory(phones, noises, states_per_phone, variants)


def internal_contexts(entries):
    out = []
    for e in entries:
        p = e.phones
        out.extend((p[i], p[i - 1], p[i + 1]) for i in range(1, len(p) - 1))
    return list(dict.fromkeys(out))


def synthetic_keywords(n_lemmas, phones, forms_per_lemma=1, min_phones=5, max_phones=9,
                       seed=0, prefix="kw"):
    """Random keyword list; forms of one lemma share a stem and differ in a final phone."""
    rng = np.random.default_rng(seed)
    phones = list(phones)
    entries, seen = [], set()
    while len(entries) < n_lemmas * forms_per_lemma:
        lemma = f"{prefix}{len(entries) // forms_per_lemma}"
        n = int(rng.integers(min_phones, max_phones + 1))
        stem = [phones[i] for i in rng.integers(len(phones), size=n - 1)]
        finals = rng.choice(len(phones), size=forms_per_lemma, replace=False)
        group = [tuple(stem + [phones[f]]) for f in finals]
        if any(g in seen for g in group):
            continue
        for j, g in enumerate(group):
            seen.add(g)
            form = lemma if forms_per_lemma == 1 else f"{lemma}{'abcdefghij'[j]}"
            entries.append(KeywordEntry(form, lemma, g))
    return entries


def lay_out_occurrences(num_frames, lengths, rng, min_gap=30, frames_per_state=(1.5, 3.0)):
    """Place spans for keyword state counts ``lengths`` at random, non-overlapping, in order."""
    spans = []
    durs = [int(np.ceil(n * rng.uniform(*frames_per_state))) for n in lengths]
    slack = num_frames - sum(durs) - min_gap * (len(durs) + 1)
    if slack < 0:
        raise ValueError("stream too short for the requested occurrences")
    cuts = np.sort(rng.integers(0, slack + 1, size=len(durs)))
    pos = min_gap
    prev_cut = 0
    for dur, cut in zip(durs, cuts):
        pos += int(cut - prev_cut)
        prev_cut = cut
        spans.append((pos, pos + dur - 1))
        pos += dur + min_gap
    return spans


@dataclass
class Corpus:
    matrix: LikelihoodMatrix
    inventory: PhonemeInventory
    keywords: list
    occurrences: list
    truth: list
    alignment: np.ndarray = None
    name: str = "synthetic"

    @property
    def references(self):
        from .evaluation import ReferenceWord
        shift = self.matrix.frame_shift_ms / 1000.0
        return [ReferenceWord(self.keywords[o.keyword].form, self.keywords[o.keyword].lemma,
                              round(o.start * shift, 2), round((o.end + 1) * shift, 2))
                for o in self.truth]


def make_corpus(minutes=30.0, n_lemmas=60, forms_per_lemma=1, occurrences_per_minute=12.0,
                substitution_rate=0.0, decoys_per_minute=0.0, decoy_substitutions=(1,),
                noise_floor=-40.0, target_margin=30.0, n_physical=None, context_mode="monophone",
                seed=0, keywords=None, frame_shift_ms=10, name="synthetic",
                plant_from=None, substitution_penalty=None) -> Corpus:
    """Synthetic stream plus keyword list and ground truth.

    ``substitution_rate`` is the share of true occurrences planted with one
    phone substituted; decoys are keywords planted with
    ``decoy_substitutions`` phones changed and are not part of the truth.
    """
    rng = np.random.default_rng(seed)
    n_frames = int(round(minutes * 60 * 1000 / frame_shift_ms))
    if keywords is None:
        base = synthetic_inventory(seed=seed)
        keywords = synthetic_keywords(n_lemmas, base.phones, forms_per_lemma, seed=seed + 1)
    ctx = internal_contexts(keywords) if context_mode == "triphone" or n_physical else ()
    inventory = synthetic_inventory(n_physical=n_physical, contexts=ctx, seed=seed + 2)

    n_true = int(round(minutes * occurrences_per_minute))
    n_decoy = int(round(minutes * decoys_per_minute))
    pool = len(keywords) if plant_from is None else min(plant_from, len(keywords))
    picks = rng.integers(pool, size=n_true + n_decoy)
    kinds = np.array([False] * n_true + [True] * n_decoy)
    order = rng.permutation(n_true + n_decoy)
    picks, kinds = picks[order], kinds[order]
    spp = inventory.states_per_phone
    lengths = [len(keywords[k].phones) * spp for k in picks]
    spans = lay_out_occurrences(n_frames, lengths, rng)
    occ = []
    for k, decoy, (a, b) in zip(picks, kinds, spans):
        if decoy:
            subs = int(rng.choice(decoy_substitutions))
        else:
            subs = int(rng.random() < substitution_rate)
        occ.append(Occurrence(int(k), a, b, subs, bool(decoy)))
    spec = SynthSpec(n_frames, occ, noise_floor, target_margin, seed=seed + 3,
                     frame_shift_ms=frame_shift_ms, substitution_penalty=substitution_penalty)
    m, truth, align = synth_generate(spec, keywords, inventory, context_mode)
    return Corpus(m, inventory, keywords, occ, truth, align, name)
