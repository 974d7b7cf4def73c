"""Property tests: the ring is an exact FIFO under arbitrary interleavings."""

import hashlib
import os
import random

from hypothesis import HealthCheck, given, settings, strategies as st

from pvran.vchan import ByteRing, LocalU32, pair


def _ring(cap, head=0, tail=0):
    return ByteRing(memoryview(bytearray(cap)), cap, LocalU32(head), LocalU32(tail))


# An op sequence is writes (bytes) and reads (sizes); the model is a byte queue.
_ops = st.lists(
    st.one_of(
        st.binary(min_size=0, max_size=40),
        st.integers(min_value=1, max_value=40),
    ),
    max_size=200,
)

_caps = st.sampled_from([1, 2, 8, 16, 64])
_starts = st.sampled_from([0, 1, 7, 2**31, 2**32 - 5])


@given(_caps, _starts, _ops)
def test_ring_matches_fifo_model(cap, start, ops):
    r = _ring(cap, head=start, tail=start)
    model = bytearray()
    for op in ops:
        if isinstance(op, bytes):
            n = r.write_some(op)
            # Writes take exactly what fits, front-first.
            assert n == min(len(op), cap - len(model))
            model.extend(op[:n])
        else:
            out = r.read_some(op)
            expect = bytes(model[: min(op, len(model))])
            assert out == expect
            del model[: len(out)]
        assert r.readable() == len(model)
        assert r.writable() == cap - len(model)


@given(_caps, _starts, st.lists(st.binary(min_size=1, max_size=33), max_size=60))
def test_ring_streams_bytes_in_order(cap, start, chunks):
    # Alternate write-what-fits / drain-all; the concatenation must be exact.
    r = _ring(cap, head=start, tail=start)
    fed = b"".join(chunks)
    out = bytearray()
    for chunk in chunks:
        off = 0
        while off < len(chunk):
            off += r.write_some(chunk[off:])
            out.extend(r.read_some(cap))
    out.extend(r.read_some(cap))
    assert bytes(out) == fed


@given(
    st.integers(0, 2**32 - 1),
    st.lists(st.tuples(st.booleans(), st.integers(1, 16)), max_size=100),
)
def test_counter_arithmetic_never_desyncs(start, steps):
    # Occupancy tracked through arbitrary long-run counter positions.
    r = _ring(16, head=start, tail=start)
    occ = 0
    for is_write, n in steps:
        if is_write:
            wrote = r.write_some(b"\xab" * n)
            occ += wrote
        else:
            got = r.read_some(n)
            occ -= len(got)
        assert 0 <= occ <= 16
        assert r.readable() == occ


@settings(deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**48))
def test_nonblocking_pair_duplex_fifo(seed):
    # Both directions at once through one channel pair, driven single-threaded.
    rnd = random.Random(seed)
    srv, cli = pair(read_cap=32, write_cap=16, blocking=False)
    to_srv = hashlib.sha256()
    from_cli = hashlib.sha256()
    to_cli = hashlib.sha256()
    from_srv = hashlib.sha256()
    target = 2048
    sent_c2s = got_c2s = sent_s2c = got_s2c = 0

    def done(sent, got):
        return sent >= target and got == sent

    while not (done(sent_c2s, got_c2s) and done(sent_s2c, got_s2c)):
        action = rnd.randrange(4)
        if action == 0 and sent_c2s < target:
            chunk = os.urandom(rnd.randint(1, 48))
            n = cli.write(chunk)
            to_srv.update(chunk[:n])
            sent_c2s += n
        elif action == 1 and sent_s2c < target:
            chunk = os.urandom(rnd.randint(1, 48))
            n = srv.write(chunk)
            to_cli.update(chunk[:n])
            sent_s2c += n
        elif action == 2:
            out = srv.read(rnd.randint(1, 64))
            from_cli.update(out)
            got_c2s += len(out)
        elif action == 3:
            out = cli.read(rnd.randint(1, 64))
            from_srv.update(out)
            got_s2c += len(out)
    assert to_srv.digest() == from_cli.digest()
    assert to_cli.digest() == from_srv.digest()
    srv.release()
    cli.release()
