"""Deterministic simulated blockchain: mempool, block assembly, scan access.

No proof of work and no networking; confirmation is an explicit mine_block
call. Output order inside a transaction is preserved bit-exactly (the
permutation channel depends on it). Decoy traffic is generated at mining
time from a seeded RNG so whole chains are reproducible byte for byte.

Chain file format (normative): a sequence of records, each
    4-byte big-endian length || block bytes
Block bytes: height u64 || prev_hash 32B || timestamp u64 || tx_count u32
|| transactions || block_hash 32B, where block_hash = sha256d of everything
before it. Transaction bytes: input_count u32 || inputs (prev_txid 32B,
vout u32, address 20B) || output_count u32 || outputs (field 20B, kind u8,
amount u64) || fee u64. txid = sha256d(transaction bytes).
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field

from .errors import CorruptChain, Rejected, ValidationError
from .hashes import sha256d

DUST = 546
DEFAULT_FEE = 1000
BLOCK_SUBSIDY = 50_0000_0000
_GENESIS_TIME = 1_600_000_000
_NULL32 = bytes(32)

KIND_P2PKH = 0
KIND_P2SH = 1


@dataclass(frozen=True)
class TxInput:
    prev_txid: bytes
    vout: int
    address: bytes  # 20-byte digest of the output being spent

    def serialize(self) -> bytes:
        return self.prev_txid + struct.pack(">I", self.vout) + self.address


@dataclass(frozen=True)
class TxOutput:
    field: bytes  # 20 bytes: an address digest or a raw stego field
    amount: int
    kind: int = KIND_P2PKH

    def serialize(self) -> bytes:
        return self.field + struct.pack(">BQ", self.kind, self.amount)


@dataclass(frozen=True)
class StegoTransaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    fee: int

    def serialize(self) -> bytes:
        parts = [struct.pack(">I", len(self.inputs))]
        parts += [i.serialize() for i in self.inputs]
        parts.append(struct.pack(">I", len(self.outputs)))
        parts += [o.serialize() for o in self.outputs]
        parts.append(struct.pack(">Q", self.fee))
        return b"".join(parts)

    @property
    def txid(self) -> bytes:
        return sha256d(self.serialize())

    @property
    def is_coinbase(self) -> bool:
        return len(self.inputs) == 1 and self.inputs[0].prev_txid == _NULL32

    @classmethod
    def deserialize(cls, data: bytes, offset: int = 0) -> tuple["StegoTransaction", int]:
        (n_in,) = struct.unpack_from(">I", data, offset)
        offset += 4
        inputs = []
        for _ in range(n_in):
            prev = data[offset : offset + 32]
            (vout,) = struct.unpack_from(">I", data, offset + 32)
            addr = data[offset + 36 : offset + 56]
            inputs.append(TxInput(prev, vout, addr))
            offset += 56
        (n_out,) = struct.unpack_from(">I", data, offset)
        offset += 4
        outputs = []
        for _ in range(n_out):
            fld = data[offset : offset + 20]
            kind, amount = struct.unpack_from(">BQ", data, offset + 20)
            outputs.append(TxOutput(fld, amount, kind))
            offset += 29
        (fee,) = struct.unpack_from(">Q", data, offset)
        return cls(tuple(inputs), tuple(outputs), fee), offset + 8


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    transactions: tuple[StegoTransaction, ...]
    block_hash: bytes = b""  # claimed hash, sealed at creation

    def body_bytes(self) -> bytes:
        parts = [
            struct.pack(">Q", self.height),
            self.prev_hash,
            struct.pack(">QI", self.timestamp, len(self.transactions)),
        ]
        parts += [tx.serialize() for tx in self.transactions]
        return b"".join(parts)

    @classmethod
    def seal(cls, height, prev_hash, timestamp, transactions) -> "Block":
        blk = cls(height, prev_hash, timestamp, tuple(transactions))
        return cls(
            height, prev_hash, timestamp, tuple(transactions),
            block_hash=sha256d(blk.body_bytes()),
        )

    def verify(self) -> None:
        if sha256d(self.body_bytes()) != self.block_hash:
            raise CorruptChain(f"block {self.height} failed hash re-verification")

    def serialize(self) -> bytes:
        return self.body_bytes() + self.block_hash

    @classmethod
    def deserialize(cls, data: bytes) -> "Block":
        try:
            height, = struct.unpack_from(">Q", data, 0)
            prev = data[8:40]
            timestamp, n_tx = struct.unpack_from(">QI", data, 40)
            offset = 52
            txs = []
            for _ in range(n_tx):
                tx, offset = StegoTransaction.deserialize(data, offset)
                txs.append(tx)
            claimed = data[offset : offset + 32]
            if offset + 32 != len(data):
                raise CorruptChain("trailing bytes in block record")
        except (struct.error, IndexError) as exc:
            raise CorruptChain(f"truncated block record: {exc}") from exc
        block = cls(height, prev, timestamp, tuple(txs), block_hash=claimed)
        block.verify()
        return block


@dataclass
class NoiseProfile:
    """Cover-traffic generator settings; output counts follow a truncated
    normal matching observed transaction statistics."""

    rate: float = 5.0  # decoy transactions per block
    out_mean: float = 3.45
    out_sd: float = 1.2
    out_min: int = 1
    out_max: int = 30

    def sample_outputs(self, rng: random.Random) -> int:
        while True:
            n = round(rng.gauss(self.out_mean, self.out_sd))
            if self.out_min <= n <= self.out_max:
                return n

    def sample_count(self, rng: random.Random) -> int:
        # Knuth Poisson; rate is small so this is fine.
        limit = math.exp(-self.rate)
        k, prod = 0, rng.random()
        while prod > limit:
            k += 1
            prod *= rng.random()
        return k


class Ledger:
    """Single-writer chain state; reads of confirmed data are pure."""

    def __init__(self, dust: int = DUST):
        self.dust = dust
        self.blocks: list[Block] = []
        self.mempool: list[StegoTransaction] = []
        self._mempool_ids: set[bytes] = set()
        self._mempool_outputs: dict[tuple[bytes, int], TxOutput] = {}
        self._mempool_reserved: set[tuple[bytes, int]] = set()
        self._utxos: dict[tuple[bytes, int], TxOutput] = {}
        self._spent: set[tuple[bytes, int]] = set()
        self._pool: list[tuple[bytes, int]] = []  # decoy-economy outpoints
        self._issued = 0
        self._persisted_blocks = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def create(
        cls,
        genesis_allocations: list[tuple[bytes, int]] | None = None,
        pool_fund: int = 10**15,
        dust: int = DUST,
    ) -> "Ledger":
        ledger = cls(dust=dust)
        rng = random.Random(0xC0FFEE)
        outputs = [TxOutput(rng.randbytes(20), pool_fund)]
        for digest, amount in genesis_allocations or []:
            outputs.append(TxOutput(digest, amount))
        coinbase = StegoTransaction(
            inputs=(TxInput(_NULL32, 0, bytes(20)),),
            outputs=tuple(outputs),
            fee=0,
        )
        block = Block.seal(0, _NULL32, _GENESIS_TIME, (coinbase,))
        ledger._connect(block)
        ledger._pool.append((coinbase.txid, 0))
        return ledger

    # -- submission --------------------------------------------------------

    def utxo(self, outpoint: tuple[bytes, int]) -> TxOutput | None:
        return self._utxos.get(outpoint)

    def submit(self, tx: StegoTransaction) -> bytes:
        txid = tx.txid
        if txid in self._mempool_ids:
            return txid  # idempotent resubmission
        if not tx.inputs:
            raise Rejected("transaction has no inputs")
        if any(i.prev_txid == _NULL32 for i in tx.inputs):
            raise Rejected("null outpoints are reserved for coinbase")
        total_in = 0
        seen: set[tuple[bytes, int]] = set()
        for inp in tx.inputs:
            outpoint = (inp.prev_txid, inp.vout)
            if outpoint in seen:
                raise Rejected("duplicate outpoint within transaction")
            seen.add(outpoint)
            if outpoint in self._spent or outpoint in self._mempool_reserved:
                raise Rejected(f"outpoint {inp.prev_txid.hex()[:16]}:{inp.vout} already spent")
            prev = self._utxos.get(outpoint) or self._mempool_outputs.get(outpoint)
            if prev is None:
                raise Rejected("input references unknown output")
            if prev.field != inp.address:
                raise Rejected("input address does not match referenced output")
            total_in += prev.amount
        if not tx.outputs:
            raise Rejected("transaction has no outputs")
        for out in tx.outputs:
            if len(out.field) != 20:
                raise Rejected("output field must be 20 bytes")
            if out.amount < self.dust:
                raise Rejected(f"output below dust threshold ({out.amount} < {self.dust})")
        if tx.fee < 0 or total_in != sum(o.amount for o in tx.outputs) + tx.fee:
            raise Rejected("inputs do not balance outputs plus fee")
        self.mempool.append(tx)
        self._mempool_ids.add(txid)
        for inp in tx.inputs:
            self._mempool_reserved.add((inp.prev_txid, inp.vout))
        for vout, out in enumerate(tx.outputs):
            self._mempool_outputs[(txid, vout)] = out
        return txid

    # -- mining ------------------------------------------------------------

    def _make_decoy(self, rng: random.Random, profile: NoiseProfile) -> StegoTransaction | None:
        if not self._pool:
            return None
        outpoint = self._pool.pop(rng.randrange(len(self._pool)))
        prev = self._utxos[outpoint]
        n_out = profile.sample_outputs(rng)
        fee = rng.randint(200, 2000)
        budget = prev.amount - fee
        amounts = []
        for _ in range(n_out - 1):
            amounts.append(rng.randint(self.dust, 1_000_000))
        change = budget - sum(amounts)
        if change < self.dust:  # pool fragment too small; merge everything
            amounts, change = [], budget
            n_out = 1
        outputs = [TxOutput(rng.randbytes(20), a) for a in amounts]
        change_pos = rng.randrange(n_out)
        outputs.insert(change_pos, TxOutput(rng.randbytes(20), change))
        tx = StegoTransaction(
            inputs=(TxInput(outpoint[0], outpoint[1], prev.field),),
            outputs=tuple(outputs),
            fee=fee,
        )
        self._pool_pending = getattr(self, "_pool_pending", [])
        self._pool_pending.append((tx.txid, change_pos))
        return tx

    def mine_block(self, decoys: NoiseProfile | None = None, seed: int = 0) -> Block:
        height = len(self.blocks)
        rng = random.Random((seed << 20) ^ height)
        self._pool_pending = []
        profile = decoys or NoiseProfile(rate=0.0)
        decoy_txs = []
        for _ in range(profile.sample_count(rng)):
            tx = self._make_decoy(rng, profile)
            if tx is not None:
                decoy_txs.append(tx)
        real = list(self.mempool)
        txs = self._shuffle_topological(real + decoy_txs, rng)
        fees = sum(tx.fee for tx in txs)
        coinbase = StegoTransaction(
            inputs=(TxInput(_NULL32, height, bytes(20)),),
            outputs=(TxOutput(rng.randbytes(20), BLOCK_SUBSIDY + fees),),
            fee=0,
        )
        block = Block.seal(
            height,
            self.blocks[-1].block_hash if self.blocks else _NULL32,
            _GENESIS_TIME + 600 * height,
            (coinbase, *txs),
        )
        self._connect(block)
        self._pool.append((coinbase.txid, 0))
        self._pool.extend(self._pool_pending)
        self._pool_pending = []
        self.mempool.clear()
        self._mempool_ids.clear()
        self._mempool_outputs.clear()
        self._mempool_reserved.clear()
        return block

    @staticmethod
    def _shuffle_topological(txs: list[StegoTransaction], rng: random.Random):
        """Random order that still places spenders after their parents."""
        pending = list(txs)
        rng.shuffle(pending)
        placed: list[StegoTransaction] = []
        placed_ids: set[bytes] = set()
        while pending:
            progress = False
            rest = []
            batch_ids = {t.txid for t in pending}
            for tx in pending:
                deps = {i.prev_txid for i in tx.inputs}
                # A dependency inside this same block must already be placed.
                if all(d in placed_ids or d not in batch_ids for d in deps):
                    placed.append(tx)
                    placed_ids.add(tx.txid)
                    progress = True
                else:
                    rest.append(tx)
            pending = rest
            if not progress and pending:
                raise Rejected("dependency cycle in mempool")
        return placed

    def _connect(self, block: Block) -> None:
        for tx in block.transactions:
            if not tx.is_coinbase:
                for inp in tx.inputs:
                    outpoint = (inp.prev_txid, inp.vout)
                    del self._utxos[outpoint]
                    self._spent.add(outpoint)
            else:
                self._issued += sum(o.amount for o in tx.outputs) - sum(
                    t.fee for t in block.transactions
                )
            for vout, out in enumerate(tx.outputs):
                self._utxos[(tx.txid, vout)] = out
        self.blocks.append(block)

    # -- reading -----------------------------------------------------------

    @property
    def tip_height(self) -> int:
        return len(self.blocks) - 1

    def scan(self, from_height: int, address_predicate):
        """Confirmed transactions whose input address satisfies the
        predicate, in chain order. Re-verifies block hashes on read."""
        if isinstance(address_predicate, (set, frozenset)):
            members = address_predicate
            address_predicate = lambda d: d in members  # noqa: E731
        results = []
        for block in self.blocks[max(from_height, 0) :]:
            block.verify()
            for tx in block.transactions:
                if tx.is_coinbase:
                    continue
                if any(address_predicate(i.address) for i in tx.inputs):
                    results.append((block.height, tx))
        return results

    def total_supply(self) -> int:
        return self._issued

    def utxo_total(self) -> int:
        return sum(o.amount for o in self._utxos.values())

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Append blocks not yet persisted (append-only record file).

        Unconfirmed transactions go to a `<path>.mempool` sidecar (same
        length-prefixed record framing) so a separate mine invocation can
        pick them up; the block-file format itself stays append-only.
        """
        mode = "ab" if self._persisted_blocks else "wb"
        with open(path, mode) as fh:
            for block in self.blocks[self._persisted_blocks :]:
                raw = block.serialize()
                fh.write(struct.pack(">I", len(raw)) + raw)
        self._persisted_blocks = len(self.blocks)
        sidecar = f"{path}.mempool"
        if self.mempool:
            with open(sidecar, "wb") as fh:
                for tx in self.mempool:
                    raw = tx.serialize()
                    fh.write(struct.pack(">I", len(raw)) + raw)
        else:
            try:
                import os

                os.remove(sidecar)
            except FileNotFoundError:
                pass

    @classmethod
    def load(cls, path, dust: int = DUST) -> "Ledger":
        ledger = cls(dust=dust)
        with open(path, "rb") as fh:
            data = fh.read()
        offset = 0
        prev_hash = _NULL32
        while offset < len(data):
            if offset + 4 > len(data):
                raise CorruptChain("truncated record length")
            (length,) = struct.unpack_from(">I", data, offset)
            offset += 4
            if offset + length > len(data):
                raise CorruptChain("record extends past end of file")
            block = Block.deserialize(data[offset : offset + length])
            offset += length
            if block.height != len(ledger.blocks):
                raise CorruptChain(f"unexpected height {block.height}")
            if block.prev_hash != prev_hash:
                raise CorruptChain(f"block {block.height} breaks the hash chain")
            ledger._connect(block)
            prev_hash = block.block_hash
        if not ledger.blocks:
            raise CorruptChain("empty chain file")
        ledger._persisted_blocks = len(ledger.blocks)
        # Rebuild the decoy pool conservatively: coinbase outputs still unspent.
        for block in ledger.blocks:
            for tx in block.transactions:
                if tx.is_coinbase and (tx.txid, 0) in ledger._utxos:
                    ledger._pool.append((tx.txid, 0))
        try:
            with open(f"{path}.mempool", "rb") as fh:
                raw = fh.read()
        except FileNotFoundError:
            return ledger
        offset = 0
        while offset < len(raw):
            (length,) = struct.unpack_from(">I", raw, offset)
            offset += 4
            tx, consumed = StegoTransaction.deserialize(raw[offset : offset + length])
            if consumed != length:
                raise CorruptChain("trailing bytes in mempool record")
            offset += length
            ledger.submit(tx)
        return ledger

    def export_text(self) -> str:
        """Canonical human-readable dump, one paragraph per block."""
        lines = []
        for block in self.blocks:
            lines.append(
                f"block {block.height} hash={block.block_hash.hex()} "
                f"prev={block.prev_hash.hex()} time={block.timestamp} "
                f"txs={len(block.transactions)}"
            )
            for tx in block.transactions:
                lines.append(f"  tx {tx.txid.hex()} fee={tx.fee}")
                for inp in tx.inputs:
                    lines.append(
                        f"    in  {inp.prev_txid.hex()}:{inp.vout} addr={inp.address.hex()}"
                    )
                for vout, out in enumerate(tx.outputs):
                    lines.append(
                        f"    out {vout} field={out.field.hex()} kind={out.kind} "
                        f"amount={out.amount}"
                    )
        return "\n".join(lines) + "\n"
