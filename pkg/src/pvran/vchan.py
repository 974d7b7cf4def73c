"""Inter-domain style byte channels: rendezvous, shared-memory SPSC rings, doorbells.

A *stream channel* is one endpoint of a bi-directional byte pipe built from
two single-producer single-consumer rings (one per direction) plus a pair of
doorbells used to sleep and wake across the boundary. The server allocates
the shared region and publishes its credentials in a rendezvous store (a
directory of small text files); a client looks the credentials up, maps the
same region, and the two sides then exchange bytes in FIFO order with no
further coordination.

Two backing modes:

* cross-process: a memory-mapped region file plus two named FIFOs for the
  doorbells. Works between threads too, and is the default everywhere.
* in-process: plain ``bytearray`` buffers and condition-variable doorbells,
  for deterministic unit testing of the ring logic (``pair()``).

Shared-region layout (all integers little-endian)::

    offset  size  field
    0       4     magic "PVCH"
    4       2     version (currently 1)
    6       2     role of the creator (0 = server)
    8       4     read-ring offset     (ring the server reads, client writes)
    12      4     read-ring capacity
    16      4     write-ring offset    (ring the server writes, client reads)
    20      4     write-ring capacity
    24      4     read-ring head counter offset
    28      4     read-ring tail counter offset
    32      4     write-ring head counter offset
    36      4     write-ring tail counter offset
    40      24    reserved, zero
    64      4     read-ring head   (free-running u32)
    68      4     read-ring tail
    72      4     write-ring head
    76      4     write-ring tail
    80      4     server-closed flag
    84      4     client-closed flag
    88      4     read-ring consumer-waiting flag
    92      4     read-ring producer-waiting flag
    96      4     write-ring consumer-waiting flag
    100     4     write-ring producer-waiting flag
    104     24    reserved, zero
    128     ...   read-ring bytes, then write-ring bytes

Ring protocol: head and tail are free-running 32-bit counters reduced modulo
the (power-of-two) capacity for addressing; occupancy is ``(head - tail)
mod 2^32`` so the ring is full at ``occupancy == capacity`` and no slot is
wasted. The producer is the only writer of head, the consumer of tail.
Counter stores are 4-byte aligned single writes; on the x86-TSO hosts this
targets, combined with CPython's memory-model guarantees, publication
ordering holds without explicit fences.

Doorbell discipline: posts are suppressed unless the peer declared it is
about to sleep. A side that finds its ring unusable stores 1 into its
waiting flag, re-checks the ring, and only then sleeps on its doorbell,
clearing the flag on wake; the other side posts after a state change only
when it sees that flag set. The re-check after the flag store closes the
race with a state change that landed just before the store, and posts are
sticky, so a post issued while the waiter is between the re-check and the
sleep is still consumed. Close posts both doorbells unconditionally. Waits
are additionally capped at a short poll slice, so even a hypothetically
lost wakeup only costs one slice, never liveness.
"""

from __future__ import annotations

import os
import select
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

MAGIC = b"PVCH"
VERSION = 1
HEADER_SIZE = 64
RINGS_OFFSET = 128

# Counter/flag offsets inside the region.
_OFF_R_HEAD, _OFF_R_TAIL = 64, 68
_OFF_W_HEAD, _OFF_W_TAIL = 72, 76
_OFF_SRV_CLOSED, _OFF_CLI_CLOSED = 80, 84
_OFF_R_CONS_WAIT, _OFF_R_PROD_WAIT = 88, 92
_OFF_W_CONS_WAIT, _OFF_W_PROD_WAIT = 96, 100

_U32 = 0xFFFFFFFF
_U32_STRUCT = struct.Struct("<I")

# Upper bound on any single doorbell wait; bounds staleness if a wakeup is
# ever missed without turning waits into spins.
_WAIT_SLICE_S = 0.05

#: Default per-direction ring capacity: holds at least two subframes of the
#: widest supported profile (2 x 122880 bytes) so one subframe of scheduler
#: jitter never stalls a streamer.
DEFAULT_RING_CAPACITY = 256 * 1024


class VchanError(Exception):
    pass


class PathCollision(VchanError):
    """Path already published by this server."""


class UnknownPath(VchanError):
    """Lookup of a path nobody published."""


class CredentialError(VchanError):
    """Published credentials do not match the mapped region."""


class CapacityError(VchanError):
    """Ring capacity is not a power of two (or is absurdly small)."""


class ChannelClosed(VchanError):
    """Operation on an endpoint that was closed locally."""


class PeerClosed(VchanError):
    """Write toward a peer that already closed."""


class EndOfStream(VchanError):
    """Peer closed and the ring is drained. ``partial`` holds any shortfall bytes."""

    def __init__(self, partial: bytes = b""):
        super().__init__("end of stream")
        self.partial = partial


class WaitTimeout(VchanError):
    pass


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def min_ring_capacity(bytes_per_block: int) -> int:
    """Smallest power-of-two capacity holding two blocks of the given size."""
    need = 2 * bytes_per_block
    cap = 1
    while cap < need:
        cap <<= 1
    return cap


# ---------------------------------------------------------------------------
# Counters and flags: one API over mmap-backed and plain-Python storage
# ---------------------------------------------------------------------------

class MappedU32:
    __slots__ = ("_buf", "_off")

    def __init__(self, buf, off: int):
        self._buf = buf
        self._off = off

    def load(self) -> int:
        return _U32_STRUCT.unpack_from(self._buf, self._off)[0]

    def store(self, v: int) -> None:
        _U32_STRUCT.pack_into(self._buf, self._off, v & _U32)


class LocalU32:
    __slots__ = ("v",)

    def __init__(self, v: int = 0):
        self.v = v

    def load(self) -> int:
        return self.v

    def store(self, v: int) -> None:
        self.v = v & _U32


# ---------------------------------------------------------------------------
# SPSC byte ring
# ---------------------------------------------------------------------------

class ByteRing:
    """One direction of byte flow. Producer calls write_some, consumer read_some."""

    __slots__ = ("buf", "capacity", "head", "tail", "_mask")

    def __init__(self, buf, capacity: int, head, tail):
        if not is_power_of_two(capacity):
            raise CapacityError(f"capacity {capacity} is not a power of two")
        self.buf = buf
        self.capacity = capacity
        self.head = head
        self.tail = tail
        self._mask = capacity - 1

    def readable(self) -> int:
        return (self.head.load() - self.tail.load()) & _U32

    def writable(self) -> int:
        return self.capacity - self.readable()

    def write_some(self, data) -> int:
        """Copy in up to len(data) bytes; returns the count actually written."""
        h = self.head.load()
        free = self.capacity - ((h - self.tail.load()) & _U32)
        n = len(data)
        if n > free:
            n = free
        if n == 0:
            return 0
        pos = h & self._mask
        first = self.capacity - pos
        if n <= first:
            self.buf[pos:pos + n] = data[:n]
        else:
            self.buf[pos:pos + first] = data[:first]
            self.buf[0:n - first] = data[first:n]
        # Data must be visible before the head publication.
        self.head.store(h + n)
        return n

    def read_some(self, n: int) -> bytes:
        """Pop up to n bytes in FIFO order; b'' when empty."""
        t = self.tail.load()
        avail = (self.head.load() - t) & _U32
        if n > avail:
            n = avail
        if n == 0:
            return b""
        pos = t & self._mask
        first = self.capacity - pos
        if n <= first:
            out = bytes(self.buf[pos:pos + n])
        else:
            out = bytes(self.buf[pos:pos + first]) + bytes(self.buf[0:n - first])
        self.tail.store(t + n)
        return out


# ---------------------------------------------------------------------------
# Doorbells
# ---------------------------------------------------------------------------

class LocalDoorbell:
    """Condition-backed doorbell with sticky posts (a binary semaphore)."""

    def __init__(self):
        self._cond = threading.Condition()
        self._pending = False

    def post(self) -> None:
        with self._cond:
            self._pending = True
            self._cond.notify_all()

    def wait(self, timeout: float) -> bool:
        with self._cond:
            if not self._pending:
                self._cond.wait(timeout)
            fired = self._pending
            self._pending = False
            return fired

    def close(self) -> None:
        self.post()


class FifoDoorbell:
    """Named-FIFO doorbell usable across processes.

    Posts are single bytes; they persist in the pipe until a wait drains
    them, which is what makes post-then-wait races lose no wakeups. The FIFO
    is opened O_RDWR so neither side ever sees ENXIO or EOF.
    """

    def __init__(self, path: str | Path, create: bool = False):
        self.path = str(path)
        if create:
            os.mkfifo(self.path)
        self._fd = os.open(self.path, os.O_RDWR | os.O_NONBLOCK)
        self._poll = select.poll()
        self._poll.register(self._fd, select.POLLIN)
        self._closed = False

    def post(self) -> None:
        if self._closed:
            return
        try:
            os.write(self._fd, b"\x00")
        except (BlockingIOError, OSError):
            # Pipe full means wakeups are already pending; closed fd means
            # teardown is racing us and the waiter is exiting anyway.
            pass

    def wait(self, timeout: float) -> bool:
        if self._closed:
            return True
        try:
            ready = self._poll.poll(max(timeout, 0) * 1000.0)
        except OSError:
            return True
        if not ready:
            return False
        # One drain read is enough: a leftover byte only causes a spurious
        # wake later, and every caller re-checks ring state in a loop.
        try:
            os.read(self._fd, 4096)
        except (BlockingIOError, OSError):
            pass
        return True

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                os.close(self._fd)
            except OSError:
                pass

    def unlink(self) -> None:
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


# ---------------------------------------------------------------------------
# Stream channel endpoints
# ---------------------------------------------------------------------------

class StreamChannel:
    """One endpoint of a bi-directional byte channel.

    Discipline: at most one thread reads and one thread writes a given
    endpoint at a time; an internal lock per direction serializes accidental
    concurrent use rather than corrupting the ring.

    Blocking mode: ``write`` returns only once every byte is enqueued and
    ``read(n)`` returns exactly n bytes (or raises :class:`EndOfStream` when
    the peer closes first). Non-blocking mode transfers what fits and
    returns immediately, possibly with a zero count / short result.
    """

    def __init__(self, role: str, read_ring: ByteRing, write_ring: ByteRing,
                 wait_db, post_db, my_closed, peer_closed,
                 my_read_wait, my_write_wait, peer_read_wait, peer_write_wait,
                 blocking: bool = True, name: str = ""):
        self.role = role
        self.name = name
        self.blocking = blocking
        self._read_ring = read_ring
        self._write_ring = write_ring
        self._wait_db = wait_db
        self._post_db = post_db
        self._my_closed = my_closed
        self._peer_closed = peer_closed
        # Waiting flags for doorbell suppression: my_* are set by this
        # endpoint before it sleeps, peer_* are checked before posting.
        self._my_read_wait = my_read_wait
        self._my_write_wait = my_write_wait
        self._peer_read_wait = peer_read_wait
        self._peer_write_wait = peer_write_wait
        self._local_closed = False
        self._rlock = threading.Lock()
        self._wlock = threading.Lock()
        self._resources: list = []
        # Occupancy high-water marks, fed into the metrics path.
        self.write_high_water = 0
        self.read_high_water = 0

    # -- state ------------------------------------------------------------

    def data_ready(self) -> int:
        """Consumer-visible byte count, without blocking."""
        return self._read_ring.readable()

    def write_space(self) -> int:
        return self._write_ring.writable()

    def peer_is_closed(self) -> bool:
        return self._peer_closed.load() != 0

    def is_closed(self) -> bool:
        return self._local_closed

    # -- data path ----------------------------------------------------------

    def write(self, data, timeout: float | None = None) -> int:
        mv = memoryview(data)
        with self._wlock:
            if self._local_closed:
                raise ChannelClosed(self.name)
            if self._peer_closed.load():
                raise PeerClosed(self.name)
            if not self.blocking:
                n = self._write_ring.write_some(mv)
                if n:
                    self._bump_write_hw()
                    if self._peer_read_wait.load():
                        self._post_db.post()
                return n

            total = 0
            size = len(mv)
            deadline = None if timeout is None else time.monotonic() + timeout
            while total < size:
                n = self._write_ring.write_some(mv[total:] if total else mv)
                if n:
                    total += n
                    self._bump_write_hw()
                    if self._peer_read_wait.load():
                        self._post_db.post()
                    continue
                if self._peer_closed.load():
                    raise PeerClosed(self.name)
                if self._local_closed:
                    raise ChannelClosed(self.name)
                # Declare the sleep before re-checking: the peer only posts
                # while this flag is set, so the re-check closes the race
                # with a read that freed space just before the store.
                self._my_write_wait.store(1)
                try:
                    if self._write_ring.writable() == 0 and not self._peer_closed.load():
                        self._wait(deadline)
                finally:
                    self._my_write_wait.store(0)
            return total

    def read(self, n: int, timeout: float | None = None) -> bytes:
        if n <= 0:
            raise ValueError("read size must be positive")
        with self._rlock:
            if self._local_closed:
                raise ChannelClosed(self.name)
            if not self.blocking:
                avail = self._read_ring.readable()
                if avail > self.read_high_water:
                    self.read_high_water = avail
                out = self._read_ring.read_some(n)
                if out and self._peer_write_wait.load():
                    self._post_db.post()
                return out

            chunks: list[bytes] = []
            got = 0
            deadline = None if timeout is None else time.monotonic() + timeout
            while got < n:
                avail = self._read_ring.readable()
                if avail > self.read_high_water:
                    self.read_high_water = avail
                chunk = self._read_ring.read_some(n - got)
                if chunk:
                    got += len(chunk)
                    chunks.append(chunk)
                    if self._peer_write_wait.load():
                        self._post_db.post()
                    continue
                if self._peer_closed.load():
                    raise EndOfStream(partial=b"".join(chunks))
                if self._local_closed:
                    raise ChannelClosed(self.name)
                self._my_read_wait.store(1)
                try:
                    if self._read_ring.readable() == 0 and not self._peer_closed.load():
                        self._wait(deadline)
                finally:
                    self._my_read_wait.store(0)
            if len(chunks) == 1:
                return chunks[0]
            return b"".join(chunks)

    def wait_readable(self, min_bytes: int = 1, timeout: float | None = None) -> bool:
        """Block until at least min_bytes are readable without consuming them.

        Returns False on timeout. Raises :class:`EndOfStream` if the peer
        closed while fewer than min_bytes remain buffered, since the count
        can then never be reached. Lets message framing check availability
        before a read so a timeout never strands a half-consumed header.
        """
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            avail = self._read_ring.readable()
            if avail >= min_bytes:
                return True
            if self._peer_closed.load():
                if self._read_ring.readable() >= min_bytes:
                    return True
                raise EndOfStream()
            if self._local_closed:
                raise ChannelClosed(self.name)
            self._my_read_wait.store(1)
            try:
                if (self._read_ring.readable() >= min_bytes
                        or self._peer_closed.load()):
                    continue
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return False
                    self._wait_db.wait(min(remaining, _WAIT_SLICE_S))
                else:
                    self._wait_db.wait(_WAIT_SLICE_S)
            finally:
                self._my_read_wait.store(0)

    def _wait(self, deadline: float | None) -> None:
        if deadline is None:
            self._wait_db.wait(_WAIT_SLICE_S)
            return
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise WaitTimeout(self.name)
        self._wait_db.wait(min(remaining, _WAIT_SLICE_S))

    def _bump_write_hw(self) -> None:
        occ = self._write_ring.readable()
        if occ > self.write_high_water:
            self.write_high_water = occ

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        """Protocol close: peers see peer-closed, blocked locals wake. Idempotent."""
        if self._local_closed:
            return
        self._local_closed = True
        self._my_closed.store(1)
        self._post_db.post()
        self._wait_db.post()

    def release(self) -> None:
        """Free OS resources. Call only after worker threads using this endpoint stopped."""
        self.close()
        # Ring views must go before a backing mmap can close.
        for ring in (self._read_ring, self._write_ring):
            try:
                ring.buf.release()
            except (AttributeError, ValueError):
                pass
        for res in self._resources:
            try:
                res()
            except (OSError, BufferError):
                pass
        self._resources.clear()

    def __enter__(self) -> "StreamChannel":
        return self

    def __exit__(self, *exc) -> None:
        self.release()


# ---------------------------------------------------------------------------
# Rendezvous store
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RingCredentials:
    """What a client needs to map a server's channel.

    Capacities are from the server's perspective: ``read_ring_capacity`` is
    the ring the server reads (so the one the client writes).
    """

    ring_ref: str
    doorbell_port: str
    read_ring_capacity: int
    write_ring_capacity: int
    blocking: bool

    def to_text(self) -> str:
        return (
            f"ring_ref = {self.ring_ref}\n"
            f"doorbell_port = {self.doorbell_port}\n"
            f"read_ring_capacity = {self.read_ring_capacity}\n"
            f"write_ring_capacity = {self.write_ring_capacity}\n"
            f"blocking = {1 if self.blocking else 0}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "RingCredentials":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        try:
            return cls(
                ring_ref=fields["ring_ref"],
                doorbell_port=fields["doorbell_port"],
                read_ring_capacity=int(fields["read_ring_capacity"]),
                write_ring_capacity=int(fields["write_ring_capacity"]),
                blocking=fields["blocking"] == "1",
            )
        except KeyError as e:
            raise CredentialError(f"credential file missing {e}") from None


def _check_path(path: str) -> None:
    if not path or path.startswith("/") or path.endswith("/"):
        raise VchanError(f"bad rendezvous path {path!r}")
    for part in path.split("/"):
        if not part or part in (".", "..") or not all(
            c.isalnum() or c in "._-" for c in part
        ):
            raise VchanError(f"bad rendezvous path component {part!r}")


class RendezvousStore:
    """Directory-backed credential registry, one small file per published path.

    Keys live under ``<root>/keys/<server_id>/<path>``; shared regions and
    doorbell FIFOs under ``<root>/regions/``. Publishing an already-present
    path fails; unpublish makes the path reusable.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.keys_dir = self.root / "keys"
        self.regions_dir = self.root / "regions"
        self.keys_dir.mkdir(parents=True, exist_ok=True)
        self.regions_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _key_file(self, server_id: str, path: str) -> Path:
        _check_path(path)
        _check_path(server_id)
        return self.keys_dir / server_id / path

    def publish(self, server_id: str, path: str, creds: RingCredentials) -> None:
        key = self._key_file(server_id, path)
        with self._lock:
            if key.exists():
                raise PathCollision(f"{server_id}:{path}")
            key.parent.mkdir(parents=True, exist_ok=True)
            tmp = key.with_name(key.name + ".tmp")
            tmp.write_text(creds.to_text())
            tmp.rename(key)

    def lookup(self, server_id: str, path: str) -> RingCredentials:
        key = self._key_file(server_id, path)
        try:
            text = key.read_text()
        except FileNotFoundError:
            raise UnknownPath(f"{server_id}:{path}") from None
        return RingCredentials.from_text(text)

    def unpublish(self, server_id: str, path: str) -> None:
        key = self._key_file(server_id, path)
        try:
            key.unlink()
        except FileNotFoundError:
            pass

    def is_published(self, server_id: str, path: str) -> bool:
        return self._key_file(server_id, path).exists()


# ---------------------------------------------------------------------------
# Channel construction
# ---------------------------------------------------------------------------

def _region_base(server_id: str, path: str) -> str:
    return f"{server_id}+{path.replace('/', '+')}"


def _write_header(buf, read_cap: int, write_cap: int) -> None:
    struct.pack_into("<4sHH", buf, 0, MAGIC, VERSION, 0)
    struct.pack_into(
        "<IIII", buf, 8,
        RINGS_OFFSET, read_cap, RINGS_OFFSET + read_cap, write_cap,
    )
    struct.pack_into(
        "<IIII", buf, 24,
        _OFF_R_HEAD, _OFF_R_TAIL, _OFF_W_HEAD, _OFF_W_TAIL,
    )


def server_create(store: RendezvousStore, path: str, read_cap: int = DEFAULT_RING_CAPACITY,
                  write_cap: int = DEFAULT_RING_CAPACITY, blocking: bool = True,
                  server_id: str = "dom0") -> StreamChannel:
    """Allocate a zeroed shared region, publish credentials, return the server endpoint.

    ``read_cap`` is the ring this server will read from (the client writes
    it); both capacities must be powers of two.
    """
    import mmap

    for cap in (read_cap, write_cap):
        if not is_power_of_two(cap):
            raise CapacityError(f"ring capacity {cap} is not a power of two")

    base = _region_base(server_id, path)
    region_path = store.regions_dir / f"{base}.ring"
    db_base = store.regions_dir / base

    creds = RingCredentials(
        ring_ref=f"{base}.ring",
        doorbell_port=base,
        read_ring_capacity=read_cap,
        write_ring_capacity=write_cap,
        blocking=blocking,
    )
    store.publish(server_id, path, creds)  # raises PathCollision first

    total = RINGS_OFFSET + read_cap + write_cap
    with open(region_path, "wb") as f:
        f.truncate(total)
    fileno = os.open(region_path, os.O_RDWR)
    mm = mmap.mmap(fileno, total)
    os.close(fileno)
    _write_header(mm, read_cap, write_cap)

    db_server = FifoDoorbell(str(db_base) + ".db_s", create=True)
    db_client = FifoDoorbell(str(db_base) + ".db_c", create=True)

    read_ring = ByteRing(
        memoryview(mm)[RINGS_OFFSET:RINGS_OFFSET + read_cap], read_cap,
        MappedU32(mm, _OFF_R_HEAD), MappedU32(mm, _OFF_R_TAIL),
    )
    write_ring = ByteRing(
        memoryview(mm)[RINGS_OFFSET + read_cap:RINGS_OFFSET + read_cap + write_cap], write_cap,
        MappedU32(mm, _OFF_W_HEAD), MappedU32(mm, _OFF_W_TAIL),
    )
    chan = StreamChannel(
        role="server", read_ring=read_ring, write_ring=write_ring,
        wait_db=db_server, post_db=db_client,
        my_closed=MappedU32(mm, _OFF_SRV_CLOSED), peer_closed=MappedU32(mm, _OFF_CLI_CLOSED),
        my_read_wait=MappedU32(mm, _OFF_R_CONS_WAIT),
        my_write_wait=MappedU32(mm, _OFF_W_PROD_WAIT),
        peer_read_wait=MappedU32(mm, _OFF_W_CONS_WAIT),
        peer_write_wait=MappedU32(mm, _OFF_R_PROD_WAIT),
        blocking=blocking, name=f"{server_id}:{path}",
    )
    chan._resources = [db_server.close, db_client.close, mm.close]
    return chan


def client_connect(store: RendezvousStore, server_id: str, path: str) -> StreamChannel:
    """Map a published region and return the client endpoint (rings swapped)."""
    import mmap

    creds = store.lookup(server_id, path)
    region_path = store.regions_dir / creds.ring_ref
    try:
        fileno = os.open(region_path, os.O_RDWR)
    except FileNotFoundError:
        raise CredentialError(f"region file {creds.ring_ref} missing") from None
    size = os.fstat(fileno).st_size
    mm = mmap.mmap(fileno, size)
    os.close(fileno)

    magic, version, _role = struct.unpack_from("<4sHH", mm, 0)
    if magic != MAGIC:
        mm.close()
        raise CredentialError(f"bad region magic {magic!r}")
    if version != VERSION:
        mm.close()
        raise CredentialError(f"unsupported region version {version}")
    r_off, r_cap, w_off, w_cap = struct.unpack_from("<IIII", mm, 8)
    if (r_cap, w_cap) != (creds.read_ring_capacity, creds.write_ring_capacity):
        mm.close()
        raise CredentialError("capacities in region do not match credentials")

    db_base = store.regions_dir / creds.doorbell_port
    db_server = FifoDoorbell(str(db_base) + ".db_s")
    db_client = FifoDoorbell(str(db_base) + ".db_c")

    # The client's read ring is the ring the server writes, and vice versa.
    client_read = ByteRing(
        memoryview(mm)[w_off:w_off + w_cap], w_cap,
        MappedU32(mm, _OFF_W_HEAD), MappedU32(mm, _OFF_W_TAIL),
    )
    client_write = ByteRing(
        memoryview(mm)[r_off:r_off + r_cap], r_cap,
        MappedU32(mm, _OFF_R_HEAD), MappedU32(mm, _OFF_R_TAIL),
    )
    chan = StreamChannel(
        role="client", read_ring=client_read, write_ring=client_write,
        wait_db=db_client, post_db=db_server,
        my_closed=MappedU32(mm, _OFF_CLI_CLOSED), peer_closed=MappedU32(mm, _OFF_SRV_CLOSED),
        my_read_wait=MappedU32(mm, _OFF_W_CONS_WAIT),
        my_write_wait=MappedU32(mm, _OFF_R_PROD_WAIT),
        peer_read_wait=MappedU32(mm, _OFF_R_CONS_WAIT),
        peer_write_wait=MappedU32(mm, _OFF_W_PROD_WAIT),
        blocking=creds.blocking, name=f"{server_id}:{path}",
    )
    chan._resources = [db_server.close, db_client.close, mm.close]
    return chan


def server_teardown(store: RendezvousStore, server_id: str, path: str) -> None:
    """Unpublish a path and delete its region file and doorbell FIFOs."""
    try:
        creds = store.lookup(server_id, path)
    except UnknownPath:
        return
    store.unpublish(server_id, path)
    for name in (creds.ring_ref, creds.doorbell_port + ".db_s", creds.doorbell_port + ".db_c"):
        try:
            (store.regions_dir / name).unlink()
        except FileNotFoundError:
            pass


def pair(read_cap: int = DEFAULT_RING_CAPACITY, write_cap: int = DEFAULT_RING_CAPACITY,
         blocking: bool = True) -> tuple[StreamChannel, StreamChannel]:
    """In-process channel pair (plain memory, condition-variable doorbells).

    ``read_cap`` is the capacity of the ring the first ("server") endpoint
    reads. Intended for deterministic unit tests of ring behaviour.
    """
    for cap in (read_cap, write_cap):
        if not is_power_of_two(cap):
            raise CapacityError(f"ring capacity {cap} is not a power of two")

    buf_a = bytearray(read_cap)   # server reads, client writes
    buf_b = bytearray(write_cap)  # server writes, client reads
    a_head, a_tail = LocalU32(), LocalU32()
    b_head, b_tail = LocalU32(), LocalU32()
    srv_closed, cli_closed = LocalU32(), LocalU32()
    a_cons_wait, a_prod_wait = LocalU32(), LocalU32()
    b_cons_wait, b_prod_wait = LocalU32(), LocalU32()
    db_s, db_c = LocalDoorbell(), LocalDoorbell()

    server = StreamChannel(
        role="server",
        read_ring=ByteRing(memoryview(buf_a), read_cap, a_head, a_tail),
        write_ring=ByteRing(memoryview(buf_b), write_cap, b_head, b_tail),
        wait_db=db_s, post_db=db_c,
        my_closed=srv_closed, peer_closed=cli_closed,
        my_read_wait=a_cons_wait, my_write_wait=b_prod_wait,
        peer_read_wait=b_cons_wait, peer_write_wait=a_prod_wait,
        blocking=blocking, name="pair:server",
    )
    client = StreamChannel(
        role="client",
        read_ring=ByteRing(memoryview(buf_b), write_cap, b_head, b_tail),
        write_ring=ByteRing(memoryview(buf_a), read_cap, a_head, a_tail),
        wait_db=db_c, post_db=db_s,
        my_closed=cli_closed, peer_closed=srv_closed,
        my_read_wait=b_cons_wait, my_write_wait=a_prod_wait,
        peer_read_wait=a_cons_wait, peer_write_wait=b_prod_wait,
        blocking=blocking, name="pair:client",
    )
    return server, client
