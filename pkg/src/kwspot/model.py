"""Phoneme inventories, keyword lists and HMM unit construction.

Every phone and noise is a left-to-right model of ``states_per_phone``
states. Context-independent (CI) state ids are assigned in inventory
order, ``symbol_index * states_per_phone + position``, so the CI block
doubles as the pooled quasi-monophone state space. Triphone variants carry
explicit (possibly tied) state ids.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .likelihood import StateMap

log = logging.getLogger(__name__)

FILLER = "filler"
KEYWORD = "keyword"
MODES = ("triphone", "monophone", "quasi_monophone")
_MODE_ALIASES = {"mono": "monophone", "quasi": "quasi_monophone", "tri": "triphone"}


def canonical_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown filler mode {mode!r}; expected one of {MODES}")
    return mode


class InventoryError(ValueError):
    pass


class KeywordListError(ValueError):
    pass


@dataclass(frozen=True)
class PhonemeInventory:
    phones: tuple
    noises: tuple = ()
    states_per_phone: int = 3
    # (center, left, right) -> state ids, one per position
    variants: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "phones", tuple(self.phones))
        object.__setattr__(self, "noises", tuple(self.noises))
        syms = self.phones + self.noises
        if not syms:
            raise InventoryError("inventory is empty")
        if len(set(syms)) != len(syms):
            dup = sorted({s for s in syms if syms.count(s) > 1})
            raise InventoryError(f"duplicate symbols {dup}")
        if self.states_per_phone < 1:
            raise InventoryError("states_per_phone must be >= 1")
        index = {s: i for i, s in enumerate(syms)}
        object.__setattr__(self, "_index", index)
        for key, ids in self.variants.items():
            if len(key) != 3 or key[0] not in index:
                raise InventoryError(f"variant {key} has unknown center")
            if len(ids) != self.states_per_phone:
                raise InventoryError(f"variant {key} has {len(ids)} states")
            if min(ids) < 0:
                raise InventoryError(f"variant {key} has a negative state id")

    @property
    def symbols(self) -> tuple:
        return self.phones + self.noises

    def is_phone(self, sym) -> bool:
        return sym in self._index and self._index[sym] < len(self.phones)

    def ci_states(self, sym) -> tuple:
        i = self._index[sym]
        n = self.states_per_phone
        return tuple(range(i * n, (i + 1) * n))

    @property
    def num_ci_states(self) -> int:
        return len(self.symbols) * self.states_per_phone

    @property
    def num_states(self) -> int:
        top = self.num_ci_states - 1
        for ids in self.variants.values():
            top = max(top, max(ids))
        return top + 1

    @property
    def state_ids(self) -> dict:
        """(symbol, position, variant) -> state id; variant is None or (left, right)."""
        out = {}
        for sym in self.symbols:
            for pos, sid in enumerate(self.ci_states(sym)):
                out[(sym, pos, None)] = sid
        for (center, left, right), ids in self.variants.items():
            for pos, sid in enumerate(ids):
                out[(center, pos, (left, right))] = sid
        return out

    def physical_models(self) -> list:
        """Distinct state sequences, CI models first, as (center, states) pairs."""
        seen = set()
        out = []
        for sym in self.symbols:
            ids = self.ci_states(sym)
            if ids not in seen:
                seen.add(ids)
                out.append((sym, ids))
        for (center, _, _), ids in self.variants.items():
            ids = tuple(ids)
            if ids not in seen:
                seen.add(ids)
                out.append((center, ids))
        return out

    def quasi_state_map(self) -> StateMap:
        n = self.states_per_phone
        target = np.full(self.num_states, -1, dtype=np.int64)
        target[:self.num_ci_states] = np.arange(self.num_ci_states)
        for (center, _, _), ids in self.variants.items():
            base = self._index[center] * n
            for pos, sid in enumerate(ids):
                if target[sid] == -1:
                    target[sid] = base + pos
                elif target[sid] != base + pos:
                    log.warning("state %d tied across centers/positions; keeping first mapping", sid)
        if (target < 0).any():
            unused = np.flatnonzero(target < 0)[:5].tolist()
            raise InventoryError(f"state ids {unused} belong to no model")
        return StateMap(target, self.num_ci_states)

    def fingerprint(self, mode: str) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        h.update(canonical_mode(mode).encode())
        h.update(f"|{self.states_per_phone}|".encode())
        h.update("\x1f".join(self.phones).encode())
        h.update(b"|")
        h.update("\x1f".join(self.noises).encode())
        for key in sorted(self.variants):
            h.update(("\x1e" + ",".join(key) + ":" + ",".join(map(str, self.variants[key]))).encode())
        return h.digest()


def load_inventory(path, states_per_phone=3) -> PhonemeInventory:
    phones, noises, variants = [], [], {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "," in line:
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3 + states_per_phone:
                raise InventoryError(f"{path}:{lineno}: variant row needs {3 + states_per_phone} fields")
            try:
                ids = tuple(int(p) for p in parts[3:])
            except ValueError:
                raise InventoryError(f"{path}:{lineno}: non-integer state id") from None
            variants[tuple(parts[:3])] = ids
        elif line.startswith("noise:"):
            noises.append(line[len("noise:"):].strip())
        else:
            phones.append(line)
    try:
        return PhonemeInventory(phones, noises, states_per_phone, variants)
    except InventoryError as e:
        raise InventoryError(f"{path}: {e}") from None


def write_inventory(inv: PhonemeInventory, path) -> None:
    lines = list(inv.phones) + [f"noise:{n}" for n in inv.noises]
    lines += [",".join(key) + "," + ",".join(map(str, ids)) for key, ids in inv.variants.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class KeywordEntry:
    form: str
    lemma: str
    phones: tuple

    def __post_init__(self):
        object.__setattr__(self, "phones", tuple(self.phones))


def parse_keyword_line(line: str):
    parts = line.split(",")
    if len(parts) != 3:
        raise ValueError("expected 'form,lemma,phones'")
    form, lemma, phones = (p.strip() for p in parts)
    if not form or not lemma:
        raise ValueError("empty form or lemma")
    return KeywordEntry(form, lemma, tuple(phones.split()))


def load_keyword_list(path, inventory: PhonemeInventory, min_phones: int = 4,
                      strict: bool = True) -> list:
    """Read a ``form,lemma,phones`` list.

    Unknown phones, malformed lines and duplicate forms always raise. Entries
    shorter than ``min_phones`` raise in strict mode and are dropped with a
    warning otherwise.
    """
    entries, problems, short = [], [], []
    seen = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            entry = parse_keyword_line(line)
        except ValueError as e:
            problems.append(f"{path}:{lineno}: {e}")
            continue
        unknown = [p for p in entry.phones if not inventory.is_phone(p)]
        if unknown:
            problems.append(f"{path}:{lineno}: unknown phone symbol {unknown[0]!r} in {entry.form!r}")
            continue
        if entry.form in seen:
            problems.append(f"{path}:{lineno}: duplicate form {entry.form!r} (first on line {seen[entry.form]})")
            continue
        seen[entry.form] = lineno
        if len(entry.phones) < min_phones:
            short.append(f"{path}:{lineno}: {entry.form!r} has {len(entry.phones)} < {min_phones} phones")
            continue
        entries.append(entry)
    if problems:
        raise KeywordListError("\n".join(problems))
    if short:
        if strict:
            raise KeywordListError("\n".join(short))
        for msg in short:
            log.warning("dropping keyword: %s", msg)
    return entries


def write_keyword_list(entries, path) -> None:
    lines = [f"{e.form},{e.lemma},{' '.join(e.phones)}" for e in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class HmmUnit:
    unit_id: int
    kind: str
    state_ids: tuple
    keyword: Optional[KeywordEntry] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "state_ids", tuple(int(s) for s in self.state_ids))
        if not self.state_ids:
            raise ValueError("unit needs at least one state")
        if self.kind not in (FILLER, KEYWORD):
            raise ValueError(f"bad unit kind {self.kind!r}")

    @property
    def num_states(self) -> int:
        return len(self.state_ids)


def build_keyword_model(entry: KeywordEntry, inventory: PhonemeInventory,
                        context_mode: str = "monophone", unit_id: int = 0) -> HmmUnit:
    mode = canonical_mode(context_mode)
    phones = entry.phones
    states = []
    for i, p in enumerate(phones):
        if not inventory.is_phone(p):
            raise KeywordListError(f"{entry.form!r}: unknown phone {p!r}")
        ids = None
        # word-boundary phones stay context independent: their outer neighbour is an arbitrary filler
        if mode == "triphone" and 0 < i < len(phones) - 1:
            key = (p, phones[i - 1], phones[i + 1])
            ids = inventory.variants.get(key)
            if ids is None:
                log.warning("no triphone variant %s-%s+%s for %r; using context-independent model",
                            key[1], key[0], key[2], entry.form)
        states.extend(ids if ids is not None else inventory.ci_states(p))
    return HmmUnit(unit_id, KEYWORD, tuple(states), keyword=entry, name=entry.form)


def build_keyword_models(entries, inventory, context_mode="monophone", first_id=0) -> list:
    return [build_keyword_model(e, inventory, context_mode, first_id + i)
            for i, e in enumerate(entries)]


def build_filler_set(inventory: PhonemeInventory, mode: str = "monophone", first_id: int = 0):
    """Filler units for ``mode`` plus the pooling map when mode is quasi-monophone."""
    mode = canonical_mode(mode)
    if mode == "triphone":
        models = inventory.physical_models()
        state_map = None
    else:
        models = [(sym, inventory.ci_states(sym)) for sym in inventory.symbols]
        state_map = inventory.quasi_state_map() if mode == "quasi_monophone" else None
    units = [HmmUnit(first_id + i, FILLER, ids, name=sym) for i, (sym, ids) in enumerate(models)]
    return units, state_map


def keyword_context_mode(filler_mode: str) -> str:
    return "triphone" if canonical_mode(filler_mode) == "triphone" else "monophone"
