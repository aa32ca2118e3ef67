import random

import pytest

from chainsteg.hashes import (
    _ripemd160_pure,
    b58decode,
    b58encode,
    base58check_decode,
    base58check_encode,
    hash160,
    ripemd160,
    sha256,
)

# Published RIPEMD-160 vectors (Dobbertin/Bosselaers/Preneel test suite).
RIPEMD_VECTORS = {
    b"": "9c1185a5c5e9fc54612808977ee8f548b2258d31",
    b"a": "0bdc9d2d256b3ee9daae347be6f4dc835a467ffe",
    b"abc": "8eb208f7e05d987a9b044a8e98c6b087f15a0bfc",
    b"message digest": "5d0689ef49d2fae572b881b123a85ffa21595f36",
    b"abcdefghijklmnopqrstuvwxyz": "f71c27109c692c1b56bbdceb5b9d2865b3708dbc",
    b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq":
        "12a053384a9c0c88e405a06c27dcf49ada62eb2b",
}


@pytest.mark.parametrize("msg,hexdigest", RIPEMD_VECTORS.items())
def test_ripemd160_vectors(msg, hexdigest):
    assert _ripemd160_pure(msg).hex() == hexdigest
    assert ripemd160(msg).hex() == hexdigest


def test_ripemd160_million_a():
    assert _ripemd160_pure(b"a" * 1000000).hex() == (
        "52783243c1697bdbe16d37f97f68f08325dc1528"
    )


def test_canonical_address_vector():
    # compressed public key of private key 1
    pub = bytes.fromhex(
        "0279be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798"
    )
    assert base58check_encode(0, hash160(pub)) == "1BgGZ9tcN4rm9KBzDn7KprQz87SZ26SAMH"


def test_base58check_roundtrip():
    rng = random.Random(5)
    for _ in range(300):
        digest = rng.randbytes(20)
        version = rng.randrange(256)
        text = base58check_encode(version, digest)
        assert base58check_decode(text) == (version, digest)


def test_base58check_checksum_corruption():
    text = base58check_encode(0, bytes(range(20)))
    alphabet = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
    for i in range(len(text)):
        wrong = alphabet[(alphabet.index(text[i]) + 1) % 58]
        corrupted = text[:i] + wrong + text[i + 1 :]
        with pytest.raises(ValueError):
            base58check_decode(corrupted)


def test_b58_leading_zeros():
    raw = b"\x00\x00\x01\x02"
    assert b58decode(b58encode(raw)) == raw


def test_b58_rejects_bad_characters():
    with pytest.raises(ValueError):
        b58decode("0OIl")


def test_kernel_hash_parity():
    kernel = pytest.importorskip("chainsteg._kernel")
    rng = random.Random(9)
    for n in (0, 1, 20, 32, 33, 41, 55):
        data = rng.randbytes(n)
        assert kernel.sha256(data) == sha256(data)
        assert kernel.hash160(data) == hash160(data)
