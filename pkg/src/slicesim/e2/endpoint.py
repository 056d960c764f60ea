"""E2 session endpoint: setup handshake, transaction matching and dispatch."""

from __future__ import annotations

import logging
import time
from typing import Callable, Mapping, Optional

from .codec import (
    REQUESTS,
    Body,
    E2Error,
    E2Message,
    E2SetupRequestBody,
    FrameReader,
    encode,
    is_response,
    response_matches,
)

log = logging.getLogger(__name__)

HANDSHAKE_TIMEOUT_S = 5.0

# message types each role is allowed to send
SENDS = {
    "gnb": {"E2SetupRequest", "RicSubscriptionResponse", "RicIndication", "RicControlAck", "RicControlFailure"},
    "ric": {"E2SetupResponse", "RicSubscriptionRequest", "RicControlRequest"},
}
PEER = {"gnb": "ric", "ric": "gnb"}


class SessionError(E2Error):
    pass


class HandshakeTimeout(SessionError):
    pass


class ProtocolViolation(SessionError):
    pass


class TransportClosed(SessionError):
    pass


Handler = Callable[["E2Endpoint", E2Message], None]


class E2Endpoint:
    """One end of an E2 connection.

    Everything is non-blocking unless a timeout is passed, so two endpoints
    can share a single thread over an in-process pipe. Handlers are keyed by
    msg_type; for responses the handler also receives the original request
    via `endpoint.last_request`.
    """

    def __init__(self, role: str, transport, handlers: Optional[Mapping[str, Handler]] = None):
        if role not in SENDS:
            raise ValueError(f"role must be gnb or ric, not {role!r}")
        self.role = role
        self.transport = transport
        self.handlers = dict(handlers or {})
        self.reader = FrameReader()
        self.next_txn = 1
        self.pending: dict[int, E2Message] = {}
        self.last_request: Optional[E2Message] = None
        self.peer_last_txn = 0
        self.setup_done = False
        self.closed = False
        self.setup_request: Optional[E2SetupRequestBody] = None

    # ------------------------------------------------------------ sending

    def _send(self, msg: E2Message) -> None:
        if msg.msg_type not in SENDS[self.role]:
            raise ProtocolViolation(f"{self.role} may not send {msg.msg_type}")
        if not self.setup_done and msg.msg_type not in ("E2SetupRequest", "E2SetupResponse"):
            raise ProtocolViolation(f"{msg.msg_type} before E2 setup completed")
        data = encode(msg)
        try:
            self.transport.send(data)
        except OSError as e:
            raise TransportClosed(str(e)) from None

    def _new_txn(self) -> int:
        txn = self.next_txn
        self.next_txn += 1
        return txn

    def request(self, msg_type: str, body: Body) -> int:
        if msg_type not in REQUESTS:
            raise ProtocolViolation(f"{msg_type} is not a request")
        msg = E2Message(msg_type, self._new_txn(), body)
        self._send(msg)
        self.pending[msg.transaction_id] = msg
        return msg.transaction_id

    def indicate(self, body: Body) -> int:
        msg = E2Message("RicIndication", self._new_txn(), body)
        self._send(msg)
        return msg.transaction_id

    def respond(self, request: E2Message, msg_type: str, body: Body = None) -> None:
        if not response_matches(request.msg_type, msg_type):
            raise ProtocolViolation(f"{msg_type} does not answer {request.msg_type}")
        self._send(E2Message(msg_type, request.transaction_id, body))

    def start_setup(self, body: E2SetupRequestBody) -> int:
        if self.role != "gnb":
            raise ProtocolViolation("only the gNB initiates E2 setup")
        return self.request("E2SetupRequest", body)

    # ------------------------------------------------------------ receiving

    def _check_incoming(self, msg: E2Message) -> None:
        if msg.msg_type not in SENDS[PEER[self.role]]:
            raise ProtocolViolation(f"{PEER[self.role]} may not send {msg.msg_type}")
        if not self.setup_done and msg.msg_type not in ("E2SetupRequest", "E2SetupResponse"):
            raise ProtocolViolation(f"{msg.msg_type} before E2 setup completed")
        if is_response(msg.msg_type):
            req = self.pending.pop(msg.transaction_id, None)
            if req is None or not response_matches(req.msg_type, msg.msg_type):
                raise ProtocolViolation(
                    f"{msg.msg_type} with unmatched transaction_id {msg.transaction_id}")
            self.last_request = req
        else:
            if msg.transaction_id <= self.peer_last_txn:
                raise ProtocolViolation(
                    f"transaction_id {msg.transaction_id} does not increase (last {self.peer_last_txn})")
            self.peer_last_txn = msg.transaction_id
            self.last_request = None

    def _dispatch(self, msg: E2Message) -> None:
        self._check_incoming(msg)
        if msg.msg_type == "E2SetupRequest":
            if self.setup_done:
                raise ProtocolViolation("duplicate E2SetupRequest")
            self.setup_request = msg.body
        handler = self.handlers.get(msg.msg_type)
        if msg.msg_type in ("E2SetupRequest", "E2SetupResponse"):
            self.setup_done = True
        if handler is not None:
            handler(self, msg)
        elif msg.msg_type == "E2SetupRequest":
            raise ProtocolViolation("RIC has no E2SetupRequest handler")
        else:
            log.debug("%s: no handler for %s", self.role, msg.msg_type)

    def pump(self, timeout: Optional[float] = 0.0) -> int:
        """Read whatever the transport has and dispatch complete messages.

        Waits at most `timeout` seconds for the first chunk. Returns the
        number of messages dispatched.
        """
        if self.closed:
            raise TransportClosed("endpoint closed")
        count = 0
        wait = timeout
        while True:
            data = self.transport.recv(wait)
            if data is None:
                return count
            if data == b"":
                self.closed = True
                if count:
                    return count
                raise TransportClosed(f"{PEER[self.role]} closed the connection")
            for msg in self.reader.feed(data):
                self._dispatch(msg)
                count += 1
            wait = 0.0

    def wait_for(self, predicate: Callable[[], bool], timeout: float, what: str = "condition") -> None:
        deadline = time.monotonic() + timeout
        while not predicate():
            left = deadline - time.monotonic()
            if left <= 0:
                raise HandshakeTimeout(f"timed out after {timeout:.1f}s waiting for {what}")
            self.pump(min(left, 0.25))

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.transport.close()


def run_endpoint(role: str, transport, handlers: Optional[Mapping[str, Handler]] = None,
                 setup: Optional[E2SetupRequestBody] = None,
                 timeout: float = HANDSHAKE_TIMEOUT_S) -> E2Endpoint:
    """Open a session and block until the E2 setup handshake completes.

    The gNB sends `setup`; the RIC waits for it and answers through its
    E2SetupRequest handler. Afterwards call `pump` to dispatch traffic.
    """
    ep = E2Endpoint(role, transport, handlers)
    if role == "gnb":
        if setup is None:
            raise ValueError("gNB endpoint needs a setup body")
        ep.start_setup(setup)
    ep.wait_for(lambda: ep.setup_done and (role == "ric" or not ep.pending), timeout, "E2 setup")
    return ep
