import random

import pytest

from chainsteg.errors import CorruptChain, Rejected
from chainsteg.ledger import (
    BLOCK_SUBSIDY,
    Block,
    Ledger,
    NoiseProfile,
    StegoTransaction,
    TxInput,
    TxOutput,
)


def fresh_ledger():
    return Ledger.create(genesis_allocations=[(b"\xaa" * 20, 10**9)])


def genesis_outpoint(ledger):
    coinbase = ledger.blocks[0].transactions[0]
    return (coinbase.txid, 1)  # vout 0 is the decoy pool


def spend_genesis(ledger, outputs, fee):
    outpoint = genesis_outpoint(ledger)
    return StegoTransaction(
        inputs=(TxInput(outpoint[0], outpoint[1], b"\xaa" * 20),),
        outputs=tuple(outputs),
        fee=fee,
    )


def test_submit_and_mine():
    ledger = fresh_ledger()
    tx = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    txid = ledger.submit(tx)
    assert len(ledger.mempool) == 1
    assert ledger.submit(tx) == txid  # idempotent
    assert len(ledger.mempool) == 1
    block = ledger.mine_block()
    assert block.height == 1
    assert tx in block.transactions
    assert ledger.utxo((txid, 0)).amount == 10**9 - 1000


def test_double_spend_rejected():
    ledger = fresh_ledger()
    tx1 = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    tx2 = spend_genesis(ledger, [TxOutput(b"\x02" * 20, 10**9 - 1000)], 1000)
    ledger.submit(tx1)
    with pytest.raises(Rejected):
        ledger.submit(tx2)
    ledger.mine_block()
    with pytest.raises(Rejected):
        ledger.submit(tx2)


def test_validation_rules():
    ledger = fresh_ledger()
    with pytest.raises(Rejected):  # dust
        ledger.submit(spend_genesis(ledger, [TxOutput(b"\x01" * 20, 100),
                                             TxOutput(b"\x02" * 20, 10**9 - 1100)], 1000))
    with pytest.raises(Rejected):  # imbalance
        ledger.submit(spend_genesis(ledger, [TxOutput(b"\x01" * 20, 5000)], 1000))
    with pytest.raises(Rejected):  # wrong input address
        outpoint = genesis_outpoint(ledger)
        ledger.submit(StegoTransaction(
            inputs=(TxInput(outpoint[0], outpoint[1], b"\xbb" * 20),),
            outputs=(TxOutput(b"\x01" * 20, 10**9 - 1000),),
            fee=1000,
        ))
    with pytest.raises(Rejected):  # unknown outpoint
        ledger.submit(StegoTransaction(
            inputs=(TxInput(b"\x99" * 32, 0, b"\xaa" * 20),),
            outputs=(TxOutput(b"\x01" * 20, 1000),),
            fee=0,
        ))
    with pytest.raises(Rejected):  # null outpoint reserved
        ledger.submit(StegoTransaction(
            inputs=(TxInput(bytes(32), 0, b"\xaa" * 20),),
            outputs=(TxOutput(b"\x01" * 20, 1000),),
            fee=0,
        ))


def test_mempool_chaining():
    ledger = fresh_ledger()
    tx1 = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    txid1 = ledger.submit(tx1)
    tx2 = StegoTransaction(
        inputs=(TxInput(txid1, 0, b"\x01" * 20),),
        outputs=(TxOutput(b"\x02" * 20, 10**9 - 2000),),
        fee=1000,
    )
    ledger.submit(tx2)
    block = ledger.mine_block(seed=99)
    order = [tx.txid for tx in block.transactions]
    assert order.index(txid1) < order.index(tx2.txid)


def test_empty_block_and_determinism():
    l1 = fresh_ledger()
    l2 = fresh_ledger()
    b1 = l1.mine_block(NoiseProfile(rate=0.0), seed=5)
    b2 = l2.mine_block(NoiseProfile(rate=0.0), seed=5)
    assert len(b1.transactions) == 1  # coinbase only
    assert b1.serialize() == b2.serialize()
    b3 = l1.mine_block(NoiseProfile(rate=3.0), seed=6)
    b4 = l2.mine_block(NoiseProfile(rate=3.0), seed=6)
    assert b3.serialize() == b4.serialize()


def test_output_order_preserved():
    ledger = fresh_ledger()
    outputs = [TxOutput(bytes([i]) * 20, 1000 + i) for i in range(5)]
    total = sum(o.amount for o in outputs)
    tx = spend_genesis(ledger, outputs + [TxOutput(b"\x77" * 20, 10**9 - total - 1000)], 1000)
    ledger.submit(tx)
    block = ledger.mine_block()
    mined = next(t for t in block.transactions if t.txid == tx.txid)
    assert [o.field for o in mined.outputs[:5]] == [o.field for o in outputs]


def test_decoy_output_count_statistics():
    ledger = Ledger.create()
    profile = NoiseProfile(rate=60.0)
    counts = []
    seed = 0
    while len(counts) < 10000:
        seed += 1
        block = ledger.mine_block(profile, seed=seed)
        for tx in block.transactions[1:]:
            counts.append(len(tx.outputs))
    counts = counts[:10000]
    mean = sum(counts) / len(counts)
    assert abs(mean - 3.45) < 0.1
    assert all(1 <= c <= 30 for c in counts)


def test_conservation():
    ledger = fresh_ledger()
    tx = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 5000)], 5000)
    ledger.submit(tx)
    for seed in range(5):
        ledger.mine_block(NoiseProfile(rate=4.0), seed=seed)
    assert ledger.utxo_total() == ledger.total_supply()
    # supply = genesis issuance + one subsidy per mined block
    genesis_total = sum(
        o.amount for o in ledger.blocks[0].transactions[0].outputs
    )
    assert ledger.total_supply() == genesis_total + 5 * BLOCK_SUBSIDY


def test_scan():
    ledger = fresh_ledger()
    tx = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    ledger.submit(tx)
    ledger.mine_block(NoiseProfile(rate=2.0), seed=1)
    assert ledger.scan(0, {b"\xff" * 20}) == []
    hits = ledger.scan(0, {b"\xaa" * 20})
    assert len(hits) == 1 and hits[0][1].txid == tx.txid
    assert ledger.scan(0, {b"\xaa" * 20}) == hits  # pure read
    assert ledger.scan(2, {b"\xaa" * 20}) == []


def test_scan_detects_tampering():
    ledger = fresh_ledger()
    ledger.mine_block()
    good = ledger.blocks[1]
    ledger.blocks[1] = Block(
        height=good.height,
        prev_hash=good.prev_hash,
        timestamp=good.timestamp + 1,  # mutate a confirmed field
        transactions=good.transactions,
        block_hash=good.block_hash,
    )
    with pytest.raises(CorruptChain):
        ledger.scan(0, set())
    ledger.blocks[1] = good
    ledger.scan(0, set())


def test_save_load_roundtrip(tmp_path):
    path = tmp_path / "chain.bin"
    ledger = fresh_ledger()
    tx = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    ledger.submit(tx)
    ledger.mine_block(NoiseProfile(rate=3.0), seed=2)
    ledger.save(path)
    loaded = Ledger.load(path)
    assert len(loaded.blocks) == len(ledger.blocks)
    for a, b in zip(loaded.blocks, ledger.blocks):
        assert a.serialize() == b.serialize()
    assert loaded.utxo_total() == ledger.utxo_total()
    # append-only: mine more, save again, reload
    loaded.mine_block(seed=3)
    loaded.save(path)
    again = Ledger.load(path)
    assert len(again.blocks) == 3


def test_mempool_sidecar(tmp_path):
    path = tmp_path / "chain.bin"
    ledger = fresh_ledger()
    tx = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    ledger.submit(tx)
    ledger.save(path)
    loaded = Ledger.load(path)
    assert len(loaded.mempool) == 1
    block = loaded.mine_block()
    assert tx in block.transactions
    loaded.save(path)
    assert not (tmp_path / "chain.bin.mempool").exists()


def test_single_byte_corruption_detected(tmp_path):
    path = tmp_path / "chain.bin"
    ledger = fresh_ledger()
    tx = spend_genesis(ledger, [TxOutput(b"\x01" * 20, 10**9 - 1000)], 1000)
    ledger.submit(tx)
    ledger.mine_block(NoiseProfile(rate=3.0), seed=7)
    ledger.save(path)
    raw = path.read_bytes()
    rng = random.Random(123)
    for _ in range(40):
        pos = rng.randrange(len(raw))
        bit = 1 << rng.randrange(8)
        mutated = bytearray(raw)
        mutated[pos] ^= bit
        path.write_bytes(bytes(mutated))
        with pytest.raises(CorruptChain):
            Ledger.load(path)
    path.write_bytes(raw)
    Ledger.load(path)  # pristine file still loads


def test_block_deserialize_rejects_trailing_bytes():
    ledger = fresh_ledger()
    raw = ledger.blocks[0].serialize()
    with pytest.raises(CorruptChain):
        Block.deserialize(raw + b"\x00")


def test_export_text():
    ledger = fresh_ledger()
    ledger.mine_block()
    text = ledger.export_text()
    assert "block 0" in text and "block 1" in text
    assert ledger.blocks[1].block_hash.hex() in text
