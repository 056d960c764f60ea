"""Reliable ordered byte-stream transports: an in-process duplex pipe and TCP."""

from __future__ import annotations

import os
import socket
import threading
from collections import deque
from typing import Optional

DEFAULT_E2_PORT = 36421


def e2_port() -> int:
    return int(os.environ.get("E2_PORT", DEFAULT_E2_PORT))


class _Channel:
    def __init__(self):
        self.chunks: deque[bytes] = deque()
        self.closed = False
        self.cond = threading.Condition()


class PipeEnd:
    """One side of an in-process duplex pipe.

    `recv` returns b"" once the peer has closed and everything was read,
    and None when nothing arrived within `timeout` seconds.
    """

    def __init__(self, inbox: _Channel, outbox: _Channel):
        self._in = inbox
        self._out = outbox

    def send(self, data: bytes) -> None:
        with self._out.cond:
            if self._out.closed:
                raise BrokenPipeError("pipe closed")
            self._out.chunks.append(bytes(data))
            self._out.cond.notify_all()

    def recv(self, timeout: Optional[float] = 0.0) -> Optional[bytes]:
        with self._in.cond:
            if not self._in.chunks and not self._in.closed and timeout != 0.0:
                self._in.cond.wait_for(lambda: self._in.chunks or self._in.closed, timeout)
            if self._in.chunks:
                return self._in.chunks.popleft()
            if self._in.closed:
                return b""
            return None

    def close(self) -> None:
        for ch in (self._out, self._in):
            with ch.cond:
                ch.closed = True
                ch.cond.notify_all()


def pipe_pair() -> tuple[PipeEnd, PipeEnd]:
    a_to_b, b_to_a = _Channel(), _Channel()
    return PipeEnd(b_to_a, a_to_b), PipeEnd(a_to_b, b_to_a)


class TcpTransport:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, host: str = "127.0.0.1", port: Optional[int] = None, timeout: float = 5.0) -> "TcpTransport":
        return cls(socket.create_connection((host, port or e2_port()), timeout=timeout))

    def send(self, data: bytes) -> None:
        self.sock.settimeout(None)
        self.sock.sendall(data)

    def recv(self, timeout: Optional[float] = 0.0) -> Optional[bytes]:
        self.sock.settimeout(timeout)
        try:
            return self.sock.recv(65536)
        except (socket.timeout, BlockingIOError):
            return None
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def listen(port: Optional[int] = None, host: str = "127.0.0.1") -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, e2_port() if port is None else port))
    srv.listen(1)
    return srv
