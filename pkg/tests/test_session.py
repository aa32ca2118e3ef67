import random

import pytest

from chainsteg import Channel, ChannelConfig, Mode, NoiseProfile
from chainsteg.errors import ValidationError
from chainsteg.hdw import DerivationIndex, KeyMaterial, signal_address
from chainsteg.ledger import StegoTransaction, TxInput, TxOutput
from chainsteg.medium import payload_bits_per_tx
from chainsteg.session import SessionState


def pair(km, cfg, tx_seed=21, rx_seed=99):
    sender = SessionState(km, cfg, seed=tx_seed)
    ledger = sender.genesis_ledger()
    receiver = SessionState(km.public_only(), cfg, seed=rx_seed)
    return sender, receiver, ledger


def test_med_roundtrip_multi_tx(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    msg = b"the quick brown fox jumps over the lazy dog"
    txids = sender.send_message(ledger, msg, Channel.MED)
    assert len(txids) == -(-((len(msg) * 8) + 16) // payload_bits_per_tx(ordered_cfg))
    ledger.mine_block(NoiseProfile(rate=3.0), seed=1)
    assert receiver.detect_and_receive(ledger) == [("MED", msg)]
    # counters synchronized after quiescence
    assert receiver.next_signal["MED"] == sender.next_signal["MED"]
    assert receiver.detect_and_receive(ledger) == []  # exactly once


def test_permuted_roundtrip(km, permuted_cfg):
    sender, receiver, ledger = pair(km, permuted_cfg)
    msg = bytes(range(64))
    sender.send_message(ledger, msg, Channel.MED)
    ledger.mine_block(NoiseProfile(rate=2.0), seed=2)
    assert receiver.detect_and_receive(ledger) == [("MED", msg)]


def test_empty_med_message(km):
    # capacity 18 >= 16-bit length prefix: one tx of header plus padding
    cfg = ChannelConfig(n=3, m=6, mode=Mode.ORDERED)
    sender, receiver, ledger = pair(km, cfg)
    txids = sender.send_message(ledger, b"", Channel.MED)
    assert len(txids) == 1
    ledger.mine_block()
    assert receiver.detect_and_receive(ledger) == [("MED", b"")]


def test_empty_med_message_small_capacity(km, ordered_cfg):
    # capacity 12 < 16: the length prefix alone spans two transactions
    sender, receiver, ledger = pair(km, ordered_cfg)
    txids = sender.send_message(ledger, b"", Channel.MED)
    assert len(txids) == 2
    ledger.mine_block()
    assert receiver.detect_and_receive(ledger) == [("MED", b"")]


def test_med_framing_arithmetic():
    # 66-byte message at n=5, m=15 ORDERED: ceil((16+528)/75) = 8 transactions
    cfg = ChannelConfig(n=5, m=15)
    cap = payload_bits_per_tx(cfg)
    assert cap == 75
    assert -(-(16 + 8 * 66) // cap) == 8


def test_high_roundtrip(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    msg = b"\x00\x01\x02" * 321
    sender.send_message(ledger, msg, Channel.HIGH)
    ledger.mine_block(NoiseProfile(rate=4.0), seed=3)
    assert receiver.detect_and_receive(ledger) == [("HIGH", msg)]


def test_interleaved_channels(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    sender.send_message(ledger, b"medium one", Channel.MED)
    sender.send_message(ledger, b"high one", Channel.HIGH)
    sender.send_message(ledger, b"medium two", Channel.MED)
    ledger.mine_block(NoiseProfile(rate=5.0), seed=4)
    got = receiver.detect_and_receive(ledger)
    assert ("MED", b"medium one") in got
    assert ("MED", b"medium two") in got
    assert ("HIGH", b"high one") in got
    assert len(got) == 3


def test_message_split_across_blocks(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    msg = bytes(range(100, 140))
    blocks_before = len(ledger.blocks)
    txids = sender.send_message(
        ledger, msg, Channel.MED,
        confirm=lambda: ledger.mine_block(NoiseProfile(rate=1.0), seed=5),
    )
    assert len(ledger.blocks) == blocks_before + len(txids)
    # scan after each block: message returns only once complete
    partial = SessionState(km, ordered_cfg, seed=7)
    results = []
    for height in range(1, len(ledger.blocks)):
        snapshot_led = ledger  # receiver just advances cursor
        partial.scan_ceiling = height
        results.extend(partial.detect_and_receive(snapshot_led))
    assert results == [("MED", msg)]


def test_incremental_scan_returns_once(km, ordered_cfg):
    sender, _, ledger = pair(km, ordered_cfg)
    msg = bytes(range(60))
    receiver = SessionState(km, ordered_cfg, seed=8)
    collected = []
    sender.send_message(
        ledger, msg, Channel.MED,
        confirm=lambda: (
            ledger.mine_block(NoiseProfile(rate=2.0), seed=len(ledger.blocks)),
            collected.extend(receiver.detect_and_receive(ledger)),
        ),
    )
    collected.extend(receiver.detect_and_receive(ledger))
    assert collected == [("MED", msg)]


def test_rotation_and_handover(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    sender.send_message(ledger, b"before rotation", Channel.MED)
    new_km = sender.rotate_keys(ledger)
    assert sender.km == new_km
    assert sender.next_signal == {"HIGH": 1, "MED": 1}
    sender.send_message(ledger, b"after rotation", Channel.MED)
    ledger.mine_block(NoiseProfile(rate=3.0), seed=6)  # everything in one block
    got = receiver.detect_and_receive(ledger)
    assert ("MED", b"before rotation") in got
    assert ("MED", b"after rotation") in got
    assert len(receiver.generations) == 2
    assert receiver.km.k == new_km.k


def test_rotation_replay_is_noop(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    new_km = sender.rotate_keys(ledger)
    ledger.mine_block()
    receiver.detect_and_receive(ledger)
    assert len(receiver.generations) == 2
    # replay: same rotation frame re-sent under the old key with same msg_id
    old_gen = sender.generations[0]
    import chainsteg.high as high

    payload = new_km.k + new_km.y.to_bytes(32, "big")
    counter = old_gen.next_signal["HIGH"]
    high.guard_nonce(old_gen, counter, payload, 0, high.VERSION_ROTATE)
    fields = high.frame_message(sender.generations[0].km, payload, 0, counter,
                                sender.rng, high.VERSION_ROTATE)
    outputs, change, _ = high.build_tx_outputs(
        old_gen.km, fields, counter, sender
    )
    signal = None
    from chainsteg import backend
    digest = backend.get().derive_digest(old_gen.km.k, Channel.HIGH.value,
                                         counter, old_gen.km.gy)
    outpoint = sender._fund(ledger, digest, sum(o.amount for o in outputs)
                            + change.amount + 1000)
    tx = StegoTransaction(
        inputs=(TxInput(outpoint[0], outpoint[1], digest),),
        outputs=(*outputs, change),
        fee=1000,
    )
    ledger.submit(tx)
    old_gen.next_signal["HIGH"] = counter + 1
    ledger.mine_block()
    got = receiver.detect_and_receive(ledger)
    assert got == []
    assert len(receiver.generations) == 2  # replay did not add a generation


def test_quarantine_and_advance(km, ordered_cfg):
    sender, receiver, ledger = pair(km, ordered_cfg)
    # craft a poisoned tx on the next MED signal address: wrong output count
    digest = signal_address(km, sender, Channel.MED).digest
    outpoint = sender._fund(ledger, digest, 5000)
    poison = StegoTransaction(
        inputs=(TxInput(outpoint[0], outpoint[1], digest),),
        outputs=(TxOutput(b"\x11" * 20, 4000),),  # not n+1 outputs
        fee=1000,
    )
    ledger.submit(poison)
    sender.current.next_signal["MED"] += 1  # sender burns the counter
    sender.send_message(ledger, b"healthy message", Channel.MED)
    ledger.mine_block(NoiseProfile(rate=2.0), seed=9)
    got = receiver.detect_and_receive(ledger)
    assert got == [("MED", b"healthy message")]
    assert len(receiver.quarantine) == 1
    assert receiver.quarantine[0][0] == poison.txid.hex()


def test_no_plaintext_on_chain(km, ordered_cfg):
    sender, _, ledger = pair(km, ordered_cfg)
    msg = b"EXTREMELY-DISTINCTIVE-PLAINTEXT-MARKER-0123456789"
    sender.send_message(ledger, msg, Channel.MED)
    sender.send_message(ledger, msg, Channel.HIGH)
    ledger.mine_block(NoiseProfile(rate=3.0), seed=10)
    chain_bytes = b"".join(b.serialize() for b in ledger.blocks)
    chain_bytes += b"".join(t.serialize() for t in ledger.mempool)
    assert msg not in chain_bytes
    for window in range(len(msg) - 8):
        assert msg[window : window + 8] not in chain_bytes


def test_insufficient_funds(km, ordered_cfg):
    sender = SessionState(km, ordered_cfg, seed=30)
    ledger = sender.genesis_ledger(amount=10000)  # tiny wallet
    with pytest.raises(ValidationError):
        sender.send_message(ledger, b"x" * 400, Channel.MED)


def test_session_persistence_resume(km, ordered_cfg, tmp_path):
    sender, receiver, ledger = pair(km, ordered_cfg)
    sender.send_message(ledger, b"part one", Channel.MED)
    ledger.mine_block(seed=1)
    receiver.detect_and_receive(ledger)
    spath, rpath = tmp_path / "s.bin", tmp_path / "r.bin"
    sender.save(spath)
    receiver.save(rpath)
    sender2 = SessionState.load(spath)
    receiver2 = SessionState.load(rpath)
    assert sender2.next_signal == sender.next_signal
    assert sender2.next_grind == sender.next_grind
    assert [u.txid for u in sender2.wallet] == [u.txid for u in sender.wallet]
    assert receiver2.cursor == receiver.cursor
    assert receiver2.drain_inbox() == [("MED", b"part one")]
    sender2.send_message(ledger, b"part two", Channel.HIGH)
    ledger.mine_block(seed=2)
    assert receiver2.detect_and_receive(ledger) == [("HIGH", b"part two")]


def test_switch_config(km):
    cfg1 = ChannelConfig(n=3, m=4, mode=Mode.ORDERED)
    cfg2 = ChannelConfig(n=4, m=6, mode=Mode.PERMUTED)
    sender = SessionState(km, cfg1, seed=41)
    ledger = sender.genesis_ledger()
    receiver = SessionState(km, cfg1, seed=42)
    sender.send_message(ledger, b"old params", Channel.MED)
    sender.switch_config(ledger, cfg2)
    sender.send_message(ledger, b"new params", Channel.MED)
    ledger.mine_block(seed=11)
    got = receiver.detect_and_receive(ledger)
    assert ("MED", b"old params") in got
    assert ("MED", b"new params") in got
    assert receiver.cfg == cfg2


def test_randomized_interleavings(km, ordered_cfg):
    rng = random.Random(1234)
    for trial in range(3):
        sender, receiver, ledger = pair(km, ordered_cfg,
                                        tx_seed=100 + trial, rx_seed=200 + trial)
        messages = [rng.randbytes(rng.randint(1, 80)) for _ in range(4)]
        got = []
        for i, msg in enumerate(messages):
            chan = Channel.MED if i % 2 == 0 else Channel.HIGH
            sender.send_message(ledger, msg, chan)
            if rng.random() < 0.7:
                ledger.mine_block(NoiseProfile(rate=2.0), seed=rng.randrange(2**30))
            if rng.random() < 0.5:
                got.extend(receiver.detect_and_receive(ledger))
        ledger.mine_block(NoiseProfile(rate=2.0), seed=rng.randrange(2**30))
        got.extend(receiver.detect_and_receive(ledger))
        assert sorted(data for _, data in got) == sorted(messages)
        # repeated scans return nothing new
        assert receiver.detect_and_receive(ledger) == []


def test_wallet_conservation(km, ordered_cfg):
    sender, _, ledger = pair(km, ordered_cfg)
    sender.send_message(ledger, b"spend some funds", Channel.MED)
    ledger.mine_block(seed=3)
    assert ledger.utxo_total() == ledger.total_supply()
    # wallet entries re-derive and exist on chain
    for utxo in sender.wallet:
        out = ledger.utxo((utxo.txid, utxo.vout))
        assert out is not None and out.amount == utxo.amount
        assert sender._wallet_digest(utxo) == out.field
