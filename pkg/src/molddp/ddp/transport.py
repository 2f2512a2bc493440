"""Point-to-point transports for SPMD workers.

Two implementations share one tiny interface (``send``/``recv`` of numpy
arrays between ranks): :class:`InProcessMesh` for threads in one process
and :class:`TcpTransport` for separate processes that meet at a rank-0
rendezvous address.

Wire frame (all little-endian)::

    u64  length of everything that follows, CRC included
    u8   version (1)
    u8   dtype code
    u8   ndim
    u8   reserved
    u32  sender rank
    u64  sequence number (per sender -> receiver pair)
    u64  shape[ndim]
    ...  raw array bytes, C order
    u32  CRC32 of the header and array bytes
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
import zlib

import numpy as np

FRAME_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3, np.dtype("u1"): 4,
                np.dtype("<i4"): 5}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_FRAME_HEAD = struct.Struct("<BBBBIQ")
DEFAULT_TIMEOUT = 120.0


class TransportFailure(RuntimeError):
    pass


class Timeout(TransportFailure):
    pass


class ProtocolError(TransportFailure):
    """Out-of-order sequence number, bad CRC or malformed frame."""


def encode_frame(array: np.ndarray, rank: int, seq: int) -> bytes:
    a = np.ascontiguousarray(array)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|",) else a.dtype
    if dt not in _DTYPE_CODES:
        raise TypeError(f"unsupported dtype {a.dtype} for transport")
    a = a.astype(dt, copy=False)
    body = (_FRAME_HEAD.pack(FRAME_VERSION, _DTYPE_CODES[dt], a.ndim, 0, rank, seq)
            + struct.pack(f"<{a.ndim}Q", *a.shape) + a.tobytes())
    return struct.pack("<Q", len(body) + 4) + body + struct.pack("<I", zlib.crc32(body))


def decode_frame(frame: bytes) -> tuple[np.ndarray, int, int]:
    """Inverse of :func:`encode_frame`."""
    if len(frame) < 8 + _FRAME_HEAD.size + 4:
        raise ProtocolError("frame too short")
    (length,) = struct.unpack("<Q", frame[:8])
    if length != len(frame) - 8:
        raise ProtocolError(f"frame length {len(frame) - 8} does not match prefix {length}")
    body, (crc,) = frame[8:-4], struct.unpack("<I", frame[-4:])
    if zlib.crc32(body) != crc:
        raise ProtocolError("frame checksum mismatch")
    version, code, ndim, _, rank, seq = _FRAME_HEAD.unpack_from(body, 0)
    if version != FRAME_VERSION:
        raise ProtocolError(f"unsupported frame version {version}")
    if code not in _CODE_DTYPES:
        raise ProtocolError(f"unknown dtype code {code}")
    pos = _FRAME_HEAD.size
    shape = struct.unpack_from(f"<{ndim}Q", body, pos)
    pos += 8 * ndim
    dt = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(body) - pos != count * dt.itemsize:
        raise ProtocolError("frame payload size disagrees with its shape")
    arr = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True), rank, seq


class Transport:
    """Ordered, reliable point-to-point channel between every pair of ranks."""

    rank: int
    world_size: int
    timeout: float

    def send(self, dst: int, array: np.ndarray) -> None:
        raise NotImplementedError

    def recv(self, src: int) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessMesh(Transport):
    """Queue-backed transport for worker threads. Build with :meth:`create`."""

    def __init__(self, rank: int, world_size: int, queues: dict, timeout: float,
                 aborted: threading.Event | None = None):
        self.rank = rank
        self.world_size = world_size
        self._queues = queues
        self._aborted = aborted or threading.Event()
        self.timeout = timeout
        self._send_seq = [0] * world_size
        self._recv_seq = [0] * world_size

    @classmethod
    def create(cls, world_size: int, timeout: float = DEFAULT_TIMEOUT) -> list[InProcessMesh]:
        queues = {(s, d): queue.Queue() for s in range(world_size) for d in range(world_size) if s != d}
        aborted = threading.Event()
        return [cls(r, world_size, queues, timeout, aborted) for r in range(world_size)]

    def abort(self) -> None:
        """Fail-stop: every pending and future receive on the mesh raises."""
        self._aborted.set()

    def send(self, dst: int, array: np.ndarray) -> None:
        if dst == self.rank or not 0 <= dst < self.world_size:
            raise TransportFailure(f"rank {self.rank} cannot send to {dst}")
        self._queues[(self.rank, dst)].put((self._send_seq[dst], np.array(array, copy=True)))
        self._send_seq[dst] += 1

    def recv(self, src: int) -> np.ndarray:
        if src == self.rank or not 0 <= src < self.world_size:
            raise TransportFailure(f"rank {self.rank} cannot receive from {src}")
        q = self._queues[(src, self.rank)]
        deadline = time.monotonic() + self.timeout
        while True:
            if self._aborted.is_set():
                raise TransportFailure(f"rank {self.rank}: job aborted by a failing peer")
            try:
                seq, arr = q.get(timeout=min(0.05, max(deadline - time.monotonic(), 0)))
                break
            except queue.Empty:
                if time.monotonic() >= deadline:
                    raise Timeout(f"rank {self.rank}: no message from rank {src} within {self.timeout}s") from None
        if seq != self._recv_seq[src]:
            raise ProtocolError(f"rank {self.rank}: expected seq {self._recv_seq[src]} from {src}, got {seq}")
        self._recv_seq[src] += 1
        return arr


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise TransportFailure("connection closed by peer")
        got += k
    return bytes(buf)


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"rendezvous address must look like host:port, got {addr!r}")
    return host, int(port)


def _dial(addr, deadline: float) -> socket.socket:
    """Connect to ``addr``, retrying refused connections until ``deadline``.

    Spawned ranks start unevenly, so a peer may not be listening yet.
    """
    pause = 0.01
    while True:
        left = deadline - time.monotonic()
        if left <= 0:
            raise socket.timeout(f"connect to {addr[0]}:{addr[1]} timed out")
        try:
            return socket.create_connection(addr, timeout=left)
        except (ConnectionRefusedError, ConnectionResetError):
            time.sleep(min(pause, left))
            pause = min(pause * 2, 0.5)


class TcpTransport(Transport):
    """Full mesh of TCP connections, bootstrapped through rank 0.

    Rank 0 listens on the rendezvous address. Every other rank opens its
    own listener, reports (rank, host, port) to rank 0 and receives the
    full table back. Rank ``j`` then dials every rank ``i < j``; the link
    to rank 0 is the rendezvous connection itself. Sends go through one
    background thread per peer so simultaneous ring exchanges cannot
    deadlock on full socket buffers.
    """

    def __init__(self, rank: int, world_size: int, rendezvous: str, timeout: float = DEFAULT_TIMEOUT):
        self.rank = rank
        self.world_size = world_size
        self.timeout = timeout
        self._send_seq = [0] * world_size
        self._recv_seq = [0] * world_size
        self._socks: dict[int, socket.socket] = {}
        self._outbox: dict[int, queue.Queue] = {}
        self._senders: list[threading.Thread] = []
        self._send_error: list[BaseException] = []
        host, port = parse_address(rendezvous)
        try:
            if world_size > 1:
                self._connect_mesh(host, port)
        except socket.timeout:
            self.close()
            raise Timeout(f"rank {rank}: rendezvous at {rendezvous} timed out") from None
        except OSError as e:
            self.close()
            raise TransportFailure(f"rank {rank}: rendezvous at {rendezvous} failed: {e}") from None
        for peer, s in self._socks.items():
            s.settimeout(timeout)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            q: queue.Queue = queue.Queue()
            self._outbox[peer] = q
            t = threading.Thread(target=self._sender, args=(s, q), daemon=True)
            t.start()
            self._senders.append(t)

    def _connect_mesh(self, host: str, port: int) -> None:
        w, r = self.world_size, self.rank
        hello = struct.Struct("<IH64s")
        if r == 0:
            lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            lst.bind((host, port))
            lst.listen(w)
            lst.settimeout(self.timeout)
            table = {}
            try:
                while len(table) < w - 1:
                    conn, _ = lst.accept()
                    conn.settimeout(self.timeout)
                    peer, pport, phost = hello.unpack(_recv_exact(conn, hello.size))
                    if not 0 < peer < w or peer in table:
                        conn.close()
                        raise TransportFailure(f"unexpected rendezvous from rank {peer}")
                    table[peer] = (phost.rstrip(b"\0"), pport)
                    self._socks[peer] = conn
            finally:
                lst.close()
            blob = b"".join(hello.pack(p, table[p][1], table[p][0]) for p in range(1, w))
            for peer in range(1, w):
                self._socks[peer].sendall(blob)
            return
        lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lst.bind((host if host not in ("0.0.0.0", "") else "", 0))
        lst.listen(w)
        lst.settimeout(self.timeout)
        my_host = socket.gethostbyname(host) if host not in ("0.0.0.0", "") else "127.0.0.1"
        try:
            deadline = time.monotonic() + self.timeout
            root = _dial((host, port), deadline)
            root.sendall(hello.pack(r, lst.getsockname()[1], my_host.encode()))
            self._socks[0] = root
            table = {}
            raw = _recv_exact(root, hello.size * (w - 1))
            for k in range(w - 1):
                peer, pport, phost = hello.unpack_from(raw, k * hello.size)
                table[peer] = (phost.rstrip(b"\0").decode(), pport)
            for peer in range(1, r):
                s = _dial(table[peer], deadline)
                s.sendall(struct.pack("<I", r))
                self._socks[peer] = s
            for _ in range(r + 1, w):
                conn, _ = lst.accept()
                conn.settimeout(self.timeout)
                (peer,) = struct.unpack("<I", _recv_exact(conn, 4))
                self._socks[peer] = conn
        finally:
            lst.close()

    def _sender(self, sock: socket.socket, q: queue.Queue) -> None:
        while True:
            frame = q.get()
            if frame is None:
                return
            try:
                sock.sendall(frame)
            except OSError as e:
                self._send_error.append(e)
                return

    def send(self, dst: int, array: np.ndarray) -> None:
        if self._send_error:
            raise TransportFailure(f"rank {self.rank}: earlier send failed: {self._send_error[0]}")
        if dst not in self._outbox:
            raise TransportFailure(f"rank {self.rank} has no link to {dst}")
        self._outbox[dst].put(encode_frame(array, self.rank, self._send_seq[dst]))
        self._send_seq[dst] += 1

    def recv(self, src: int) -> np.ndarray:
        sock = self._socks.get(src)
        if sock is None:
            raise TransportFailure(f"rank {self.rank} has no link to {src}")
        try:
            head = _recv_exact(sock, 8)
            (length,) = struct.unpack("<Q", head)
            arr, rank, seq = decode_frame(head + _recv_exact(sock, length))
        except socket.timeout:
            raise Timeout(f"rank {self.rank}: no message from rank {src} within {self.timeout}s") from None
        except OSError as e:
            raise TransportFailure(f"rank {self.rank}: receive from {src} failed: {e}") from None
        if rank != src or seq != self._recv_seq[src]:
            raise ProtocolError(f"rank {self.rank}: expected (rank {src}, seq {self._recv_seq[src]}), "
                                f"got (rank {rank}, seq {seq})")
        self._recv_seq[src] += 1
        return arr

    def close(self) -> None:
        for q in self._outbox.values():
            q.put(None)
        for t in self._senders:
            t.join(timeout=self.timeout)
        for s in self._socks.values():
            try:
                s.close()
            except OSError:
                pass
        self._socks.clear()
        self._outbox.clear()


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]
