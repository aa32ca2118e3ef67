# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grinding kernel: secp256k1 fixed-base derivation and digest
scanning with 4x64-bit field limbs, batch inversion, and single-block
SHA-256 / RIPEMD-160 implementations so the whole attempt loop runs in C.

Results are bit-identical to the pure backend; parity is enforced by tests.
"""

from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

cdef extern from *:
    """
    typedef unsigned long long u64;
    typedef unsigned int u32;
    typedef unsigned char u8;
    typedef unsigned __int128 u128;

    /* secp256k1 field: p = 2^256 - 2^32 - 977. Unrolled comba multiply with
       fold-by-(2^256 mod p) reduction; the only way a reduced value can be
       >= p is with limbs 1..3 all-ones, which the normalize step exploits. */

    #define FE_C 0x1000003D1ULL
    #define FE_P0 0xFFFFFFFEFFFFFC2FULL

    #define FE_MULADD(A, B) do { \
        u128 _t = (u128)(A) * (B); \
        u64 _lo = (u64)_t, _hi = (u64)(_t >> 64); \
        c0 += _lo; _hi += (c0 < _lo); c1 += _hi; c2 += (c1 < _hi); \
    } while (0)

    #define FE_STEP(X) do { (X) = c0; c0 = c1; c1 = c2; c2 = 0; } while (0)

    static inline void fe_reduce8(u64 *r, u64 t0, u64 t1, u64 t2, u64 t3,
                                  u64 t4, u64 t5, u64 t6, u64 t7) {
        u128 acc;
        u64 r0, r1, r2, r3, ex;
        acc = (u128)t4 * FE_C + t0; r0 = (u64)acc; acc >>= 64;
        acc += (u128)t5 * FE_C + t1; r1 = (u64)acc; acc >>= 64;
        acc += (u128)t6 * FE_C + t2; r2 = (u64)acc; acc >>= 64;
        acc += (u128)t7 * FE_C + t3; r3 = (u64)acc; acc >>= 64;
        ex = (u64)acc;
        acc = (u128)ex * FE_C + r0; r0 = (u64)acc; acc >>= 64;
        acc += r1; r1 = (u64)acc; acc >>= 64;
        acc += r2; r2 = (u64)acc; acc >>= 64;
        acc += r3; r3 = (u64)acc; acc >>= 64;
        if ((u64)acc) {  /* overflowed 2^256 once more: add FE_C */
            acc = (u128)r0 + FE_C; r0 = (u64)acc; acc >>= 64;
            acc += r1; r1 = (u64)acc; acc >>= 64;
            acc += r2; r2 = (u64)acc; acc >>= 64;
            r3 += (u64)acc;
        }
        if (r3 == ~0ULL && r2 == ~0ULL && r1 == ~0ULL && r0 >= FE_P0) {
            r0 = r0 + FE_C;  /* wraps below 2^64 */
            r1 = 0; r2 = 0; r3 = 0;
        }
        r[0] = r0; r[1] = r1; r[2] = r2; r[3] = r3;
    }

    static inline void fe_mul_c(u64 *r, const u64 *a, const u64 *b) {
        u64 c0 = 0, c1 = 0, c2 = 0;
        u64 t0, t1, t2, t3, t4, t5, t6, t7;
        FE_MULADD(a[0], b[0]); FE_STEP(t0);
        FE_MULADD(a[0], b[1]); FE_MULADD(a[1], b[0]); FE_STEP(t1);
        FE_MULADD(a[0], b[2]); FE_MULADD(a[1], b[1]); FE_MULADD(a[2], b[0]); FE_STEP(t2);
        FE_MULADD(a[0], b[3]); FE_MULADD(a[1], b[2]); FE_MULADD(a[2], b[1]);
        FE_MULADD(a[3], b[0]); FE_STEP(t3);
        FE_MULADD(a[1], b[3]); FE_MULADD(a[2], b[2]); FE_MULADD(a[3], b[1]); FE_STEP(t4);
        FE_MULADD(a[2], b[3]); FE_MULADD(a[3], b[2]); FE_STEP(t5);
        FE_MULADD(a[3], b[3]); FE_STEP(t6);
        t7 = c0;
        fe_reduce8(r, t0, t1, t2, t3, t4, t5, t6, t7);
    }

    static inline void fe_sqr_c(u64 *r, const u64 *a) {
        u64 c0 = 0, c1 = 0, c2 = 0;
        u64 t0, t1, t2, t3, t4, t5, t6, t7;
        FE_MULADD(a[0], a[0]); FE_STEP(t0);
        FE_MULADD(a[0], a[1]); FE_MULADD(a[0], a[1]); FE_STEP(t1);
        FE_MULADD(a[0], a[2]); FE_MULADD(a[0], a[2]); FE_MULADD(a[1], a[1]); FE_STEP(t2);
        FE_MULADD(a[0], a[3]); FE_MULADD(a[0], a[3]); FE_MULADD(a[1], a[2]);
        FE_MULADD(a[1], a[2]); FE_STEP(t3);
        FE_MULADD(a[1], a[3]); FE_MULADD(a[1], a[3]); FE_MULADD(a[2], a[2]); FE_STEP(t4);
        FE_MULADD(a[2], a[3]); FE_MULADD(a[2], a[3]); FE_STEP(t5);
        FE_MULADD(a[3], a[3]); FE_STEP(t6);
        t7 = c0;
        fe_reduce8(r, t0, t1, t2, t3, t4, t5, t6, t7);
    }

    static inline void fe_add_c(u64 *r, const u64 *a, const u64 *b) {
        u128 acc;
        u64 r0, r1, r2, r3;
        acc = (u128)a[0] + b[0]; r0 = (u64)acc; acc >>= 64;
        acc += (u128)a[1] + b[1]; r1 = (u64)acc; acc >>= 64;
        acc += (u128)a[2] + b[2]; r2 = (u64)acc; acc >>= 64;
        acc += (u128)a[3] + b[3]; r3 = (u64)acc; acc >>= 64;
        if ((u64)acc) {
            acc = (u128)r0 + FE_C; r0 = (u64)acc; acc >>= 64;
            acc += r1; r1 = (u64)acc; acc >>= 64;
            acc += r2; r2 = (u64)acc; acc >>= 64;
            r3 += (u64)acc;
        }
        if (r3 == ~0ULL && r2 == ~0ULL && r1 == ~0ULL && r0 >= FE_P0) {
            r0 = r0 + FE_C;
            r1 = 0; r2 = 0; r3 = 0;
        }
        r[0] = r0; r[1] = r1; r[2] = r2; r[3] = r3;
    }

    static inline void fe_sub_c(u64 *r, const u64 *a, const u64 *b) {
        u128 acc;
        u64 r0, r1, r2, r3, borrow;
        acc = (u128)a[0] - b[0]; r0 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
        acc = (u128)a[1] - b[1] - borrow; r1 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
        acc = (u128)a[2] - b[2] - borrow; r2 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
        acc = (u128)a[3] - b[3] - borrow; r3 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
        if (borrow) {  /* wrapped: subtract FE_C to add p */
            acc = (u128)r0 - FE_C; r0 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
            acc = (u128)r1 - borrow; r1 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
            acc = (u128)r2 - borrow; r2 = (u64)acc; borrow = (u64)(acc >> 64) & 1;
            r3 -= borrow;
        }
        r[0] = r0; r[1] = r1; r[2] = r2; r[3] = r3;
    }
    """
    ctypedef unsigned long long u64
    ctypedef unsigned int u32
    ctypedef unsigned char u8
    ctypedef int u128 "u128"
    void fe_mul_c(u64* r, const u64* a, const u64* b) nogil
    void fe_sqr_c(u64* r, const u64* a) nogil
    void fe_add_c(u64* r, const u64* a, const u64* b) nogil
    void fe_sub_c(u64* r, const u64* a, const u64* b) nogil

# ---------------------------------------------------------------------------
# Field arithmetic mod p = 2^256 - 2^32 - 977

cdef u64 REDC = 0x1000003D1  # 2^256 mod p

cdef u64[4] P_LIMB
P_LIMB[0] = 0xFFFFFFFEFFFFFC2F
P_LIMB[1] = 0xFFFFFFFFFFFFFFFF
P_LIMB[2] = 0xFFFFFFFFFFFFFFFF
P_LIMB[3] = 0xFFFFFFFFFFFFFFFF

cdef u64[4] PM2_LIMB  # p - 2, inversion exponent
PM2_LIMB[0] = 0xFFFFFFFEFFFFFC2D
PM2_LIMB[1] = 0xFFFFFFFFFFFFFFFF
PM2_LIMB[2] = 0xFFFFFFFFFFFFFFFF
PM2_LIMB[3] = 0xFFFFFFFFFFFFFFFF

cdef u64[4] Q_LIMB  # group order
Q_LIMB[0] = 0xBFD25E8CD0364141
Q_LIMB[1] = 0xBAAEDCE6AF48A03B
Q_LIMB[2] = 0xFFFFFFFFFFFFFFFE
Q_LIMB[3] = 0xFFFFFFFFFFFFFFFF


cdef inline void fe_set(u64* r, const u64* a) nogil:
    r[0] = a[0]; r[1] = a[1]; r[2] = a[2]; r[3] = a[3]


cdef inline bint fe_is_zero(const u64* a) nogil:
    return (a[0] | a[1] | a[2] | a[3]) == 0


cdef inline int fe_cmp(const u64* a, const u64* b) nogil:
    cdef int i
    for i in range(3, -1, -1):
        if a[i] < b[i]:
            return -1
        if a[i] > b[i]:
            return 1
    return 0


cdef inline void fe_add(u64* r, const u64* a, const u64* b) nogil:
    fe_add_c(r, a, b)


cdef inline void fe_sub(u64* r, const u64* a, const u64* b) nogil:
    fe_sub_c(r, a, b)


cdef inline void fe_mul(u64* r, const u64* a, const u64* b) nogil:
    fe_mul_c(r, a, b)


cdef inline void fe_sqr(u64* r, const u64* a) nogil:
    fe_sqr_c(r, a)


cdef void fe_inv(u64* r, const u64* a) nogil:
    # Fermat: a^(p-2); plain MSB-first square-and-multiply
    cdef u64[4] acc
    cdef int limb, bit
    cdef bint started = 0
    acc[0] = 1; acc[1] = 0; acc[2] = 0; acc[3] = 0
    for limb in range(3, -1, -1):
        for bit in range(63, -1, -1):
            if started:
                fe_sqr(acc, acc)
            if (PM2_LIMB[limb] >> bit) & 1:
                if started:
                    fe_mul(acc, acc, a)
                else:
                    fe_set(acc, a)
                    started = 1
    fe_set(r, acc)


# ---------------------------------------------------------------------------
# Jacobian point arithmetic (a = 0 curve)

cdef struct JPt:
    u64 X[4]
    u64 Y[4]
    u64 Z[4]


cdef inline void jpt_set_infinity(JPt* p) nogil:
    memset(p, 0, sizeof(JPt))
    p.X[0] = 1
    p.Y[0] = 1


cdef inline bint jpt_is_infinity(const JPt* p) nogil:
    return fe_is_zero(p.Z)


cdef void jpt_double(JPt* r, const JPt* p) nogil:
    # safe when r aliases p: p.Y/p.Z are consumed before r.Y/r.Z are written
    cdef u64[4] a, b, c, d, e, f, t, z3
    if jpt_is_infinity(p) or fe_is_zero(p.Y):
        jpt_set_infinity(r)
        return
    fe_mul(z3, p.Y, p.Z)
    fe_add(z3, z3, z3)
    fe_sqr(a, p.X)
    fe_sqr(b, p.Y)
    fe_sqr(c, b)
    fe_add(t, p.X, b)
    fe_sqr(t, t)
    fe_sub(t, t, a)
    fe_sub(t, t, c)
    fe_add(d, t, t)
    fe_add(e, a, a)
    fe_add(e, e, a)
    fe_sqr(f, e)
    # X3 = F - 2D
    fe_sub(t, f, d)
    fe_sub(r.X, t, d)
    # Y3 = E(D - X3) - 8C
    fe_sub(t, d, r.X)
    fe_mul(t, e, t)
    fe_add(c, c, c)  # 2C
    fe_add(c, c, c)  # 4C
    fe_add(c, c, c)  # 8C
    fe_sub(r.Y, t, c)
    fe_set(r.Z, z3)


cdef void jpt_add_affine(JPt* r, const JPt* p, const u64* qx, const u64* qy) nogil:
    cdef u64[4] z1z1, u2, s2, h, rr, h2, h3, v, t
    if jpt_is_infinity(p):
        fe_set(r.X, qx)
        fe_set(r.Y, qy)
        memset(r.Z, 0, 32)
        r.Z[0] = 1
        return
    fe_sqr(z1z1, p.Z)
    fe_mul(u2, qx, z1z1)
    fe_mul(s2, qy, p.Z)
    fe_mul(s2, s2, z1z1)
    fe_sub(h, u2, p.X)
    fe_sub(rr, s2, p.Y)
    if fe_is_zero(h):
        if fe_is_zero(rr):
            jpt_double(r, p)
        else:
            jpt_set_infinity(r)
        return
    fe_sqr(h2, h)
    fe_mul(h3, h, h2)
    fe_mul(v, p.X, h2)
    # X3 = r^2 - h^3 - 2v
    fe_sqr(t, rr)
    fe_sub(t, t, h3)
    fe_sub(t, t, v)
    fe_sub(r.X, t, v)
    # Y3 = r(v - X3) - Y1 h^3
    fe_sub(t, v, r.X)
    fe_mul(t, rr, t)
    fe_mul(h3, p.Y, h3)
    fe_sub(r.Y, t, h3)
    # Z3 = Z1 h
    fe_mul(r.Z, p.Z, h)


# ---------------------------------------------------------------------------
# Fixed-base comb table: WINDOW-bit windows over the scalar

DEF WINDOW = 12
DEF N_WINDOWS = 22          # ceil(256 / WINDOW)
DEF ENTRIES = 4095          # 2^WINDOW - 1

cdef u64* TBL_X = NULL
cdef u64* TBL_Y = NULL


cdef void _mult_gen(JPt* r, const u64* scalar) nogil:
    """scalar (little-endian limbs, < q) times the generator."""
    cdef int w, bit_lo, limb, shift
    cdef u64 window
    cdef u64* ex
    cdef u64* ey
    jpt_set_infinity(r)
    for w in range(N_WINDOWS):
        bit_lo = w * WINDOW
        limb = bit_lo >> 6
        shift = bit_lo & 63
        window = scalar[limb] >> shift
        if shift > 64 - WINDOW and limb < 3:
            window |= scalar[limb + 1] << (64 - shift)
        window &= (1 << WINDOW) - 1
        if window:
            ex = TBL_X + ((w * ENTRIES + (window - 1)) << 2)
            ey = TBL_Y + ((w * ENTRIES + (window - 1)) << 2)
            jpt_add_affine(r, r, ex, ey)


# ---------------------------------------------------------------------------
# Single-block SHA-256 (messages are always <= 55 bytes here)

cdef u32[64] SHA_K
cdef u32[8] SHA_H0


cdef inline u32 _rotr(u32 x, int n) nogil:
    return (x >> n) | (x << (32 - n))


cdef void sha256_block(const u8* msg, int length, u8* out) nogil:
    """SHA-256 of a message short enough for one padded block."""
    cdef u8[64] block
    cdef u32[64] w
    cdef u32 a, b, c, d, e, f, g, h, s0, s1, ch, maj, t1, t2
    cdef int i
    memset(block, 0, 64)
    memcpy(block, msg, length)
    block[length] = 0x80
    cdef u64 bits = <u64>length * 8
    for i in range(8):
        block[63 - i] = <u8>(bits >> (8 * i))
    for i in range(16):
        w[i] = (<u32>block[4 * i] << 24) | (<u32>block[4 * i + 1] << 16) | \
               (<u32>block[4 * i + 2] << 8) | <u32>block[4 * i + 3]
    for i in range(16, 64):
        s0 = _rotr(w[i - 15], 7) ^ _rotr(w[i - 15], 18) ^ (w[i - 15] >> 3)
        s1 = _rotr(w[i - 2], 17) ^ _rotr(w[i - 2], 19) ^ (w[i - 2] >> 10)
        w[i] = w[i - 16] + s0 + w[i - 7] + s1
    a = SHA_H0[0]; b = SHA_H0[1]; c = SHA_H0[2]; d = SHA_H0[3]
    e = SHA_H0[4]; f = SHA_H0[5]; g = SHA_H0[6]; h = SHA_H0[7]
    for i in range(64):
        s1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
        ch = (e & f) ^ ((~e) & g)
        t1 = h + s1 + ch + SHA_K[i] + w[i]
        s0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
        maj = (a & b) ^ (a & c) ^ (b & c)
        t2 = s0 + maj
        h = g; g = f; f = e; e = d + t1
        d = c; c = b; b = a; a = t1 + t2
    cdef u32[8] hh
    hh[0] = SHA_H0[0] + a; hh[1] = SHA_H0[1] + b
    hh[2] = SHA_H0[2] + c; hh[3] = SHA_H0[3] + d
    hh[4] = SHA_H0[4] + e; hh[5] = SHA_H0[5] + f
    hh[6] = SHA_H0[6] + g; hh[7] = SHA_H0[7] + h
    for i in range(8):
        out[4 * i] = <u8>(hh[i] >> 24)
        out[4 * i + 1] = <u8>(hh[i] >> 16)
        out[4 * i + 2] = <u8>(hh[i] >> 8)
        out[4 * i + 3] = <u8>hh[i]


# ---------------------------------------------------------------------------
# Single-block RIPEMD-160 for 32-byte inputs

cdef int[80] RMD_RL
cdef int[80] RMD_RR
cdef int[80] RMD_SL
cdef int[80] RMD_SR
cdef u32[5] RMD_KL
cdef u32[5] RMD_KR


cdef inline u32 _rotl(u32 x, int n) nogil:
    return (x << n) | (x >> (32 - n))


cdef inline u32 _rmd_f(int j, u32 x, u32 y, u32 z) nogil:
    if j < 16:
        return x ^ y ^ z
    elif j < 32:
        return (x & y) | ((~x) & z)
    elif j < 48:
        return (x | (~y)) ^ z
    elif j < 64:
        return (x & z) | (y & (~z))
    return x ^ (y | (~z))


cdef void ripemd160_32(const u8* msg, u8* out) nogil:
    """RIPEMD-160 of exactly 32 bytes (one padded block)."""
    cdef u8[64] block
    cdef u32[16] x
    cdef u32 al, bl, cl, dl, el, ar, br, cr, dr, er, t
    cdef int i, j
    memset(block, 0, 64)
    memcpy(block, msg, 32)
    block[32] = 0x80
    block[56] = 0  # bit length 256 little-endian: bytes 56..63
    block[57] = 1
    for i in range(16):
        x[i] = <u32>block[4 * i] | (<u32>block[4 * i + 1] << 8) | \
               (<u32>block[4 * i + 2] << 16) | (<u32>block[4 * i + 3] << 24)
    al = <u32>0x67452301; bl = <u32>0xEFCDAB89; cl = <u32>0x98BADCFE
    dl = <u32>0x10325476; el = <u32>0xC3D2E1F0
    ar = al; br = bl; cr = cl; dr = dl; er = el
    for j in range(80):
        t = al + _rmd_f(j, bl, cl, dl) + x[RMD_RL[j]] + RMD_KL[j >> 4]
        t = _rotl(t, RMD_SL[j]) + el
        al = el; el = dl; dl = _rotl(cl, 10); cl = bl; bl = t
        t = ar + _rmd_f(79 - j, br, cr, dr) + x[RMD_RR[j]] + RMD_KR[j >> 4]
        t = _rotl(t, RMD_SR[j]) + er
        ar = er; er = dr; dr = _rotl(cr, 10); cr = br; br = t
    cdef u32[5] hh
    hh[0] = <u32>0xEFCDAB89 + cl + dr
    hh[1] = <u32>0x98BADCFE + dl + er
    hh[2] = <u32>0x10325476 + el + ar
    hh[3] = <u32>0xC3D2E1F0 + al + br
    hh[4] = <u32>0x67452301 + bl + cr
    for i in range(5):
        out[4 * i] = <u8>hh[i]
        out[4 * i + 1] = <u8>(hh[i] >> 8)
        out[4 * i + 2] = <u8>(hh[i] >> 16)
        out[4 * i + 3] = <u8>(hh[i] >> 24)


# ---------------------------------------------------------------------------
# limb <-> bytes helpers

cdef inline void be32_to_limbs(const u8* data, u64* r) nogil:
    cdef int i, j
    for i in range(4):
        r[3 - i] = 0
        for j in range(8):
            r[3 - i] = (r[3 - i] << 8) | data[8 * i + j]


cdef inline void limbs_to_be32(const u64* a, u8* out) nogil:
    cdef int i, j
    for i in range(4):
        for j in range(8):
            out[8 * i + j] = <u8>(a[3 - i] >> (8 * (7 - j)))


cdef inline void scalar_mod_q(u64* r) nogil:
    cdef u64[4] t
    cdef u128 cur
    cdef int i
    cdef u64 borrow
    if fe_cmp(r, Q_LIMB) >= 0:
        borrow = 0
        for i in range(4):
            cur = <u128>r[i] - Q_LIMB[i] - borrow
            t[i] = <u64>cur
            borrow = 1 if (cur >> 64) else 0
        fe_set(r, t)


# ---------------------------------------------------------------------------
# The attempt pipeline

DEF BATCH = 64


cdef void _derive_one(const u8* k, u8 tag, u64 counter,
                      const u64* gyx, const u64* gyy, JPt* out) nogil:
    """One counter's public point (Jacobian); thread-safe (own buffers)."""
    cdef u8[41] msg
    cdef u8[32] hbuf
    cdef u64[4] scalar
    cdef int j
    memcpy(msg, k, 32)
    msg[32] = tag
    for j in range(8):
        msg[33 + j] = <u8>(counter >> (8 * (7 - j)))
    sha256_block(msg, 41, hbuf)
    be32_to_limbs(hbuf, scalar)
    scalar_mod_q(scalar)
    _mult_gen(out, scalar)
    jpt_add_affine(out, out, gyx, gyy)


cdef int _derive_batch(const u8* k, u8 tag, u64 start, int count,
                       const u64* gyx, const u64* gyy,
                       u8* digests, u8* ok_flags) nogil:
    """Compute hash160 digests for `count` consecutive counters.

    digests: count*20 bytes; ok_flags[i]=0 marks a degenerate index.
    """
    cdef JPt[BATCH] pts
    cdef u64[4] zinv, zi2, t, prefix_acc
    cdef u64[BATCH * 4] prefix
    cdef u8[33] pub
    cdef u8[32] sha_out
    cdef int i
    for i in range(count):
        _derive_one(k, tag, start + <u64>i, gyx, gyy, &pts[i])
        ok_flags[i] = 0 if jpt_is_infinity(&pts[i]) else 1
    # batch inversion of the Z coordinates (Montgomery's trick)
    prefix_acc[0] = 1; prefix_acc[1] = 0; prefix_acc[2] = 0; prefix_acc[3] = 0
    for i in range(count):
        fe_set(&prefix[i * 4], prefix_acc)
        if ok_flags[i]:
            fe_mul(prefix_acc, prefix_acc, pts[i].Z)
    fe_inv(zinv, prefix_acc)
    for i in range(count - 1, -1, -1):
        if not ok_flags[i]:
            continue
        fe_mul(t, zinv, &prefix[i * 4])      # 1/Z_i
        fe_mul(zinv, zinv, pts[i].Z)
        fe_sqr(zi2, t)
        fe_mul(&pts[i].X[0], pts[i].X, zi2)  # affine x
        fe_mul(zi2, zi2, t)
        fe_mul(&pts[i].Y[0], pts[i].Y, zi2)  # affine y
    for i in range(count):
        if not ok_flags[i]:
            memset(digests + i * 20, 0, 20)
            continue
        pub[0] = 0x02 | <u8>(pts[i].Y[0] & 1)
        limbs_to_be32(pts[i].X, pub + 1)
        sha256_block(pub, 33, sha_out)
        ripemd160_32(sha_out, digests + i * 20)
    return count


cdef inline u64 _select_bits(const u8* digest, const int* positions, int m) nogil:
    cdef u64 out = 0
    cdef int i, pos
    for i in range(m):
        pos = positions[i]
        out = (out << 1) | ((digest[19 - (pos >> 3)] >> (pos & 7)) & 1)
    return out


# ---------------------------------------------------------------------------
# Python-visible API

def derive_digest(bytes k, int tag, counter, gy_x, gy_y):
    """hash160 of the derived public key, or None for a degenerate index."""
    cdef u64[4] gyx, gyy
    cdef u8[20] digest
    cdef u8[1] ok
    cdef u8[32] xb, yb
    cdef u64 ctr = counter
    if len(k) != 32:
        raise ValueError("k must be 32 bytes")
    _int_to_be32(gy_x, xb)
    _int_to_be32(gy_y, yb)
    be32_to_limbs(xb, gyx)
    be32_to_limbs(yb, gyy)
    _derive_batch(<const u8*>k, <u8>tag, ctr, 1, gyx, gyy, digest, ok)
    if not ok[0]:
        return None
    return bytes(digest[:20])


def derive_compressed(bytes k, int tag, counter, gy_x, gy_y):
    """Compressed public key bytes for one derivation index."""
    cdef u64[4] gyx, gyy, scalar
    cdef JPt pt
    cdef u64[4] zinv, zi2
    cdef u8[41] msg
    cdef u8[32] hbuf, xb, yb
    cdef u8[33] pub
    cdef u64 ctr = counter
    cdef int j
    if len(k) != 32:
        raise ValueError("k must be 32 bytes")
    _int_to_be32(gy_x, xb)
    _int_to_be32(gy_y, yb)
    be32_to_limbs(xb, gyx)
    be32_to_limbs(yb, gyy)
    memcpy(msg, <const u8*>k, 32)
    msg[32] = <u8>tag
    for j in range(8):
        msg[33 + j] = <u8>(ctr >> (8 * (7 - j)))
    sha256_block(msg, 41, hbuf)
    be32_to_limbs(hbuf, scalar)
    scalar_mod_q(scalar)
    _mult_gen(&pt, scalar)
    jpt_add_affine(&pt, &pt, gyx, gyy)
    if jpt_is_infinity(&pt):
        return None
    fe_inv(zinv, pt.Z)
    fe_sqr(zi2, zinv)
    fe_mul(pt.X, pt.X, zi2)
    fe_mul(zi2, zi2, zinv)
    fe_mul(pt.Y, pt.Y, zi2)
    pub[0] = 0x02 | <u8>(pt.Y[0] & 1)
    limbs_to_be32(pt.X, pub + 1)
    return bytes(pub[:33])


def grind_scan(bytes k, int tag, gy_x, gy_y, start, max_attempts,
               positions, target):
    """Smallest counter >= start whose digest carries `target` on the
    selected bit positions; returns (counter, attempts) or None."""
    cdef u64[4] gyx, gyy
    cdef u8[32] xb, yb
    cdef u8[BATCH * 20] digests
    cdef u8[BATCH] ok
    cdef int[24] pos_arr
    cdef int m = len(positions)
    cdef u64 tgt = target
    cdef u64 first = start
    cdef u64 budget = max_attempts
    cdef u64 done = 0
    cdef int count, i
    if len(k) != 32:
        raise ValueError("k must be 32 bytes")
    if m > 24:
        raise ValueError("at most 24 selected bits")
    for i in range(m):
        pos_arr[i] = positions[i]
    _int_to_be32(gy_x, xb)
    _int_to_be32(gy_y, yb)
    be32_to_limbs(xb, gyx)
    be32_to_limbs(yb, gyy)
    cdef const u8* kp = <const u8*>k
    cdef u8 tag_c = <u8>tag
    # expected attempts ~2^m: small m wants small batches to avoid waste
    cdef int batch = BATCH
    if m < 6:
        batch = 8 if m <= 3 else (1 << m)
    cdef long hit
    with nogil:
        hit = -1
        while done < budget:
            count = batch if budget - done > <u64>batch else <int>(budget - done)
            _derive_batch(kp, tag_c, first + done, count,
                          gyx, gyy, digests, ok)
            for i in range(count):
                if ok[i] and _select_bits(digests + i * 20, pos_arr, m) == tgt:
                    hit = <long>(done + i)
                    break
            if hit >= 0:
                break
            done += count
    if hit < 0:
        return None
    return (int(first + <u64>hit), int(<u64>hit + 1))


def hash160(bytes data):
    """hash160 restricted to inputs <= 55 bytes (current callers use 33)."""
    cdef u8[32] sha_out
    cdef u8[20] out
    if len(data) > 55:
        raise ValueError("single-block helper: input too long")
    sha256_block(<const u8*>data, len(data), sha_out)
    ripemd160_32(sha_out, out)
    return bytes(out[:20])


def sha256(bytes data):
    cdef u8[32] out
    if len(data) > 55:
        raise ValueError("single-block helper: input too long")
    sha256_block(<const u8*>data, len(data), out)
    return bytes(out[:32])


cdef void _int_to_be32(value, u8* out):
    cdef bytes raw = int(value).to_bytes(32, "big")
    memcpy(out, <const u8*>raw, 32)


# ---------------------------------------------------------------------------
# Module initialization: exact constants and the comb table

def _exact_frac_root(n, power, bits):
    """floor(2^bits * frac(n^(1/power))) computed with exact integers."""
    shifted = n << (power * bits)
    root = _int_nth_root(shifted, power)
    return root & ((1 << bits) - 1)


def _int_nth_root(n, power):
    hi = 1 << ((n.bit_length() + power - 1) // power + 1)
    lo = 0
    while lo < hi - 1:
        mid = (lo + hi) // 2
        if mid ** power <= n:
            lo = mid
        else:
            hi = mid
    return lo


def _primes(count):
    out, cand = [], 2
    while len(out) < count:
        if all(cand % p for p in out):
            out.append(cand)
        cand += 1
    return out


def _init_hash_constants():
    primes = _primes(64)
    for i, p in enumerate(primes):
        SHA_K[i] = _exact_frac_root(p, 3, 32)
    for i, p in enumerate(primes[:8]):
        SHA_H0[i] = _exact_frac_root(p, 2, 32)
    rl = [
        0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15,
        7, 4, 13, 1, 10, 6, 15, 3, 12, 0, 9, 5, 2, 14, 11, 8,
        3, 10, 14, 4, 9, 15, 8, 1, 2, 7, 0, 6, 13, 11, 5, 12,
        1, 9, 11, 10, 0, 8, 12, 4, 13, 3, 7, 15, 14, 5, 6, 2,
        4, 0, 5, 9, 7, 12, 2, 10, 14, 1, 3, 8, 11, 6, 15, 13,
    ]
    rr = [
        5, 14, 7, 0, 9, 2, 11, 4, 13, 6, 15, 8, 1, 10, 3, 12,
        6, 11, 3, 7, 0, 13, 5, 10, 14, 15, 8, 12, 4, 9, 1, 2,
        15, 5, 1, 3, 7, 14, 6, 9, 11, 8, 12, 2, 10, 0, 4, 13,
        8, 6, 4, 1, 3, 11, 15, 0, 5, 12, 2, 13, 9, 7, 10, 14,
        12, 15, 10, 4, 1, 5, 8, 7, 6, 2, 13, 14, 0, 3, 9, 11,
    ]
    sl = [
        11, 14, 15, 12, 5, 8, 7, 9, 11, 13, 14, 15, 6, 7, 9, 8,
        7, 6, 8, 13, 11, 9, 7, 15, 7, 12, 15, 9, 11, 7, 13, 12,
        11, 13, 6, 7, 14, 9, 13, 15, 14, 8, 13, 6, 5, 12, 7, 5,
        11, 12, 14, 15, 14, 15, 9, 8, 9, 14, 5, 6, 8, 6, 5, 12,
        9, 15, 5, 11, 6, 8, 13, 12, 5, 12, 13, 14, 11, 8, 5, 6,
    ]
    sr = [
        8, 9, 9, 11, 13, 15, 15, 5, 7, 7, 8, 11, 14, 14, 12, 6,
        9, 13, 15, 7, 12, 8, 9, 11, 7, 7, 12, 7, 6, 15, 13, 11,
        9, 7, 15, 11, 8, 6, 6, 14, 12, 13, 5, 14, 13, 13, 7, 5,
        15, 5, 8, 11, 14, 14, 6, 14, 6, 9, 12, 9, 12, 5, 15, 8,
        8, 5, 12, 9, 12, 5, 14, 6, 8, 13, 6, 5, 15, 13, 11, 11,
    ]
    for i in range(80):
        RMD_RL[i] = rl[i]
        RMD_RR[i] = rr[i]
        RMD_SL[i] = sl[i]
        RMD_SR[i] = sr[i]
    kl = [0x00000000, 0x5A827999, 0x6ED9EBA1, 0x8F1BBCDC, 0xA953FD4E]
    kr = [0x50A28BE6, 0x5C4DD124, 0x6D703EF3, 0x7A6D76E9, 0x00000000]
    for i in range(5):
        RMD_KL[i] = kl[i]
        RMD_KR[i] = kr[i]


def _init_table(window_bases):
    """window_bases: list of (x, y) ints, base of each 12-bit window."""
    global TBL_X, TBL_Y
    cdef u64* tx = <u64*>malloc(N_WINDOWS * ENTRIES * 4 * sizeof(u64))
    cdef u64* ty = <u64*>malloc(N_WINDOWS * ENTRIES * 4 * sizeof(u64))
    cdef JPt* scratch = <JPt*>malloc(ENTRIES * sizeof(JPt))
    cdef u64* prefix = <u64*>malloc(ENTRIES * 4 * sizeof(u64))
    if tx == NULL or ty == NULL or scratch == NULL or prefix == NULL:
        raise MemoryError
    cdef u64[4] bx, by, acc, zinv, zi2, t
    cdef u8[32] buf
    cdef int w, j, i
    cdef long off
    for w in range(N_WINDOWS):
        x_int, y_int = window_bases[w]
        _int_to_be32(x_int, buf)
        be32_to_limbs(buf, bx)
        _int_to_be32(y_int, buf)
        be32_to_limbs(buf, by)
        with nogil:
            # scratch[j] = (j+1) * base, j in 0..ENTRIES-1
            fe_set(scratch[0].X, bx)
            fe_set(scratch[0].Y, by)
            memset(scratch[0].Z, 0, 32)
            scratch[0].Z[0] = 1
            for j in range(1, ENTRIES):
                jpt_add_affine(&scratch[j], &scratch[j - 1], bx, by)
            # batch-normalize the window
            acc[0] = 1; acc[1] = 0; acc[2] = 0; acc[3] = 0
            for j in range(ENTRIES):
                fe_set(&prefix[j * 4], acc)
                fe_mul(acc, acc, scratch[j].Z)
            fe_inv(zinv, acc)
            for j in range(ENTRIES - 1, -1, -1):
                off = (<long>w * ENTRIES + j) << 2
                fe_mul(t, zinv, &prefix[j * 4])
                fe_mul(zinv, zinv, scratch[j].Z)
                fe_sqr(zi2, t)
                fe_mul(tx + off, scratch[j].X, zi2)
                fe_mul(zi2, zi2, t)
                fe_mul(ty + off, scratch[j].Y, zi2)
    free(scratch)
    free(prefix)
    TBL_X = tx
    TBL_Y = ty


def _bootstrap():
    _init_hash_constants()
    gx = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
    gy = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
    p = 2**256 - 2**32 - 977

    def add(p1, p2):
        if p1 is None:
            return p2
        if p2 is None:
            return p1
        x1, y1 = p1
        x2, y2 = p2
        if x1 == x2 and (y1 + y2) % p == 0:
            return None
        if p1 == p2:
            m = 3 * x1 * x1 * pow(2 * y1, -1, p) % p
        else:
            m = (y2 - y1) * pow(x2 - x1, -1, p) % p
        x3 = (m * m - x1 - x2) % p
        return (x3, (m * (x1 - x3) - y1) % p)

    bases = []
    base = (gx, gy)
    for _ in range(N_WINDOWS):
        bases.append(base)
        for _ in range(WINDOW):
            base = add(base, base)
    _init_table(bases)


_bootstrap()


def _microbench(int iters):
    """Rough per-op timings for tuning; not part of the API."""
    import time
    cdef u64[4] a, b, r
    cdef u8[32] h
    cdef u8[41] msg
    cdef JPt pt
    cdef int i
    a[0] = 0x123456789ABCDEF0; a[1] = 0xFEDCBA9876543210
    a[2] = 0x0F1E2D3C4B5A6978; a[3] = 0x1122334455667788
    fe_set(b, a); b[0] ^= 0x5555
    memset(msg, 0x42, 41)
    out = {}
    t0 = time.perf_counter()
    with nogil:
        for i in range(iters):
            fe_mul(r, a, b)
            fe_set(a, r)
    out["fe_mul_ns"] = (time.perf_counter() - t0) / iters * 1e9
    fe_set(pt.X, a); fe_set(pt.Y, b)
    memset(pt.Z, 0, 32); pt.Z[0] = 1
    t0 = time.perf_counter()
    with nogil:
        for i in range(iters // 10):
            jpt_add_affine(&pt, &pt, a, b)
    out["jpt_add_ns"] = (time.perf_counter() - t0) / (iters // 10) * 1e9
    t0 = time.perf_counter()
    with nogil:
        for i in range(iters // 10):
            sha256_block(msg, 41, h)
    out["sha256_ns"] = (time.perf_counter() - t0) / (iters // 10) * 1e9
    t0 = time.perf_counter()
    with nogil:
        for i in range(iters // 10):
            ripemd160_32(h, h + 0)
    out["ripemd_ns"] = (time.perf_counter() - t0) / (iters // 10) * 1e9
    t0 = time.perf_counter()
    with nogil:
        for i in range(iters // 100):
            fe_inv(r, a)
    out["fe_inv_ns"] = (time.perf_counter() - t0) / (iters // 100) * 1e9
    return out
