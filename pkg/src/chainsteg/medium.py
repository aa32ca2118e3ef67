"""Medium-capacity channel: grind addresses whose selected digest bits carry
payload chunks, then (optionally) order the outputs to carry a permutation
rank as extra bits.

Every emitted address is a real derived address — the digest bits are never
written directly, only searched for — so a recorded derivation index can
re-derive every output (the no-manual-modification property).

PERMUTED mode spends t = ceil(log2 n) bits per chunk on a masked slot tag so
the receiver can restore payload order after the permutation is applied.
Tags are masked with a keyed per-slot stream; counters whose masks collide
are unusable for PERMUTED transactions and both sides skip them (usability
is computable from the shared key alone, so the skip set never desyncs).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

from . import backend
from .bitio import bits_to_int, int_to_bits
from .errors import (
    GrindExhausted,
    PermutationMismatch,
    TagCorruption,
    ValidationError,
)
from .hdw import (
    DOMAIN_GRIND,
    Address,
    Channel,
    DerivationIndex,
    KeyMaterial,
    signal_address,
)
from .ledger import DEFAULT_FEE, DUST, KIND_P2PKH, StegoTransaction, TxInput, TxOutput
from .permcode import CanonicalSet, PermRank, perm_capacity_bits, rank, unrank


class Mode(Enum):
    ORDERED = "ordered"
    PERMUTED = "permuted"


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length()


@dataclass(frozen=True)
class ChannelConfig:
    """Sender/receiver agreement: outputs per transaction, bits per address,
    chunk ordering mode, and which digest bits carry payload."""

    n: int = 5
    m: int = 15
    mode: Mode = Mode.ORDERED
    bit_selector: tuple[int, ...] | None = None
    grind_cap: int | None = None
    address_version: int = 0x00
    max_fields_per_tx: int = 0  # high channel: 0 = single transaction
    high_kind: int = KIND_P2PKH  # p2pkh/p2sh flavor of high-channel outputs
    debug_unmasked_tags: bool = False

    def __post_init__(self):
        if not 2 <= self.n <= 20:
            raise ValidationError("n must be in [2, 20]")
        if not 0 <= self.m <= 24:
            raise ValidationError("m must be in [0, 24]")
        if self.mode is Mode.PERMUTED and self.m <= self.tag_bits:
            raise ValidationError(
                f"PERMUTED needs m > ceil(log2 n) = {self.tag_bits}"
            )
        if self.bit_selector is not None:
            sel = self.bit_selector
            if len(sel) != self.m or len(set(sel)) != self.m:
                raise ValidationError("bit_selector must hold m distinct positions")
            if any(not 0 <= p < 160 for p in sel):
                raise ValidationError("bit positions must be in [0, 160)")

    @property
    def selector(self) -> tuple[int, ...]:
        if self.bit_selector is not None:
            return self.bit_selector
        return tuple(range(self.m - 1, -1, -1))  # m least-significant bits

    @property
    def tag_bits(self) -> int:
        return _ceil_log2(self.n)

    @property
    def attempts_cap(self) -> int:
        return self.grind_cap if self.grind_cap is not None else 2 ** (self.m + 8)


@dataclass(frozen=True)
class Chunk:
    bits: int
    slot: int

    def validate(self, cfg: ChannelConfig) -> None:
        if self.bits >> cfg.m:
            raise ValidationError(f"chunk value {self.bits} exceeds {cfg.m} bits")


@dataclass(frozen=True)
class GrindResult:
    address: Address
    index: DerivationIndex
    attempts: int


@dataclass
class CapacityReport:
    n: int
    m: int
    paper: float  # n*m + log2(n!), fractional bits included
    ordered: int
    permuted: int | None


def effective_capacity(cfg: ChannelConfig) -> CapacityReport:
    t = cfg.tag_bits
    permuted = None
    if cfg.m > t and cfg.n >= 2:
        permuted = cfg.n * (cfg.m - t) + perm_capacity_bits(cfg.n)
    return CapacityReport(
        n=cfg.n,
        m=cfg.m,
        paper=cfg.n * cfg.m + math.log2(math.factorial(cfg.n)),
        ordered=cfg.n * cfg.m,
        permuted=permuted,
    )


def payload_bits_per_tx(cfg: ChannelConfig) -> int:
    cap = effective_capacity(cfg)
    return cap.ordered if cfg.mode is Mode.ORDERED else cap.permuted


def grind(
    km: KeyMaterial,
    target: Chunk,
    cfg: ChannelConfig,
    start_index: int,
) -> GrindResult:
    """Smallest grind counter >= start_index whose address carries the
    target bits. Deterministic; backend-accelerated."""
    target.validate(cfg)
    if start_index < 1:
        raise ValidationError("start_index must be >= 1")
    hit = backend.get().grind_scan(
        km.k,
        DOMAIN_GRIND,
        km.gy,
        start_index,
        cfg.attempts_cap,
        cfg.selector,
        target.bits,
    )
    if hit is None:
        raise GrindExhausted(
            f"no match for {cfg.m}-bit chunk {target.bits:#x} within "
            f"{cfg.attempts_cap} attempts",
            next_counter=start_index + cfg.attempts_cap,
        )
    counter, attempts = hit
    idx = DerivationIndex(DOMAIN_GRIND, counter)
    digest = backend.get().derive_digest(km.k, DOMAIN_GRIND, counter, km.gy)
    return GrindResult(
        address=Address(digest, cfg.address_version),
        index=idx,
        attempts=attempts,
    )


# ---------------------------------------------------------------------------
# Slot-tag masking (PERMUTED mode)
#
# mask(slot) = first t bits of SHA-256(k || "tagmask" || counter || slot).
# Masks are independent per slot, so the n masked tags can collide; a counter
# whose tags collide is unusable (slot recovery would be ambiguous) and both
# sides skip it deterministically. A wrong key yields an unrelated tag set,
# so a matched transaction fails to unmask with probability 1 - n!/2^(t*n).

def masked_slot_tags(k: bytes, counter: int, n: int, t: int) -> list[int]:
    """Masked tag per slot (may collide; see med_counter_usable)."""
    tags = []
    for slot in range(n):
        msg = k + b"tagmask" + counter.to_bytes(8, "big") + bytes([slot])
        mask = int.from_bytes(hashlib.sha256(msg).digest()[:4], "big") >> (32 - t)
        tags.append(slot ^ mask)
    return tags


def med_counter_usable(k: bytes, counter: int, cfg: "ChannelConfig") -> bool:
    """PERMUTED transactions only ride counters whose masked tags are
    distinct; ORDERED mode uses every counter."""
    if cfg.mode is not Mode.PERMUTED:
        return True
    tags = masked_slot_tags(k, counter, cfg.n, cfg.tag_bits)
    return len(set(tags)) == cfg.n


def next_usable_counter(k: bytes, counter: int, cfg: "ChannelConfig") -> int:
    while not med_counter_usable(k, counter, cfg):
        counter += 1
    return counter


# ---------------------------------------------------------------------------
# Embedding

@dataclass
class MediumEmbed:
    """A ground, ordered output set awaiting funding."""

    counter: int
    signal_address: Address
    stego_outputs: tuple[TxOutput, ...]
    grind_records: tuple[GrindResult, ...]  # aligned with stego_outputs
    change_output: TxOutput
    change_index: DerivationIndex
    fee: int

    @property
    def required_funding(self) -> int:
        total = sum(o.amount for o in self.stego_outputs)
        return total + self.change_output.amount + self.fee

    def transaction(self, funding_outpoint: tuple[bytes, int] | None = None) -> StegoTransaction:
        outpoint = funding_outpoint or (bytes(32), 0)
        return StegoTransaction(
            inputs=(TxInput(outpoint[0], outpoint[1], self.signal_address.digest),),
            outputs=(*self.stego_outputs, self.change_output),
            fee=self.fee,
        )


def _grind_distinct(km, chunks, cfg, session, seen: set[bytes]):
    """Grind every chunk, never emitting two equal digests."""
    results = []
    for chunk in chunks:
        start = session.next_grind
        while True:
            result = grind(km, chunk, cfg, start)
            session.next_grind = result.index.counter + 1
            if result.address.digest not in seen:
                break
            start = result.index.counter + 1  # duplicate: resume past it
        seen.add(result.address.digest)
        results.append(result)
    return results


def embed(
    km: KeyMaterial,
    payload: list[int],
    cfg: ChannelConfig,
    session,
) -> MediumEmbed:
    """Build one transaction's stego outputs for `payload` bits.

    Consumes grind counters from the session and reads (without advancing)
    the MED signal counter. Output amounts come from the session RNG.
    """
    expected = payload_bits_per_tx(cfg)
    if len(payload) != expected:
        raise ValidationError(f"payload must be exactly {expected} bits, got {len(payload)}")
    if any(b not in (0, 1) for b in payload):
        raise ValidationError("payload must be a bit list")
    counter = session.next_signal["MED"]
    signal = signal_address(km, session, Channel.MED, cfg.address_version)

    if cfg.mode is Mode.ORDERED:
        chunks = [
            Chunk(bits=bits_to_int(payload[i * cfg.m : (i + 1) * cfg.m]), slot=i)
            for i in range(cfg.n)
        ]
        records = _grind_distinct(km, chunks, cfg, session, set())
        ordered_records = records
    else:
        t = cfg.tag_bits
        data_bits = cfg.m - t
        if cfg.debug_unmasked_tags:
            tags = list(range(cfg.n))
        else:
            tags = masked_slot_tags(km.k, counter, cfg.n, t)
            if len(set(tags)) != cfg.n:
                raise ValidationError(
                    f"MED counter {counter} is unusable in PERMUTED mode "
                    "(colliding slot tags); skip to the next counter"
                )
        chunks = []
        for slot in range(cfg.n):
            bits = payload[slot * data_bits : (slot + 1) * data_bits]
            chunks.append(Chunk(bits=(tags[slot] << data_bits) | bits_to_int(bits), slot=slot))
        records = _grind_distinct(km, chunks, cfg, session, set())
        v = bits_to_int(payload[cfg.n * data_bits :])
        canon = CanonicalSet.from_addresses([r.address for r in records])
        order = unrank(PermRank.of(v, cfg.n), canon)
        by_digest = {r.address.digest: r for r in records}
        ordered_records = [by_digest[a.digest] for a in order]

    rng = session.rng
    stego_outputs = tuple(
        TxOutput(rec.address.digest, rng.randint(DUST, 1_000_000), KIND_P2PKH)
        for rec in ordered_records
    )
    change_counter = session.next_grind
    session.next_grind += 1
    change_digest = backend.get().derive_digest(km.k, DOMAIN_GRIND, change_counter, km.gy)
    change_output = TxOutput(change_digest, rng.randint(DUST, 1_000_000), KIND_P2PKH)
    return MediumEmbed(
        counter=counter,
        signal_address=signal,
        stego_outputs=stego_outputs,
        grind_records=tuple(ordered_records),
        change_output=change_output,
        change_index=DerivationIndex(DOMAIN_GRIND, change_counter),
        fee=DEFAULT_FEE,
    )


def extract(
    tx: StegoTransaction,
    km: KeyMaterial,
    cfg: ChannelConfig,
    counter: int,
) -> list[int]:
    """Recover the payload bits from a matched transaction.

    `counter` is the MED signal counter the input address matched at.
    """
    if len(tx.outputs) != cfg.n + 1:
        raise TagCorruption(
            f"expected {cfg.n} stego outputs plus change, got {len(tx.outputs)}"
        )
    stego = tx.outputs[: cfg.n]
    digests = [o.field for o in stego]
    if len(set(digests)) != len(digests):
        raise PermutationMismatch("duplicate output digests")
    sel = cfg.selector
    chunks = [backend.select_bits(d, sel) for d in digests]

    if cfg.mode is Mode.ORDERED:
        bits: list[int] = []
        for c in chunks:
            bits.extend(int_to_bits(c, cfg.m))
        return bits

    t = cfg.tag_bits
    data_bits = cfg.m - t
    if cfg.debug_unmasked_tags:
        expected_tags = list(range(cfg.n))
    else:
        expected_tags = masked_slot_tags(km.k, counter, cfg.n, t)
        if len(set(expected_tags)) != cfg.n:
            raise TagCorruption(
                "matched counter is unusable under this key (colliding tags)"
            )
    tag_to_slot = {tag: slot for slot, tag in enumerate(expected_tags)}
    slot_payloads: dict[int, int] = {}
    for c in chunks:
        tag = c >> data_bits
        slot = tag_to_slot.get(tag)
        if slot is None or slot in slot_payloads:
            raise TagCorruption("slot tags do not unmask to a permutation")
        slot_payloads[slot] = c & ((1 << data_bits) - 1)
    addresses = [Address(d, cfg.address_version) for d in digests]
    canon = CanonicalSet.from_addresses(addresses)
    v = rank(addresses, canon)
    bits = []
    for slot in range(cfg.n):
        bits.extend(int_to_bits(slot_payloads[slot], data_bits))
    bits.extend(int_to_bits(v.value, perm_capacity_bits(cfg.n)))
    return bits
