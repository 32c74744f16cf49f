"""Line-delimited request/response encoding for the message store.

See ``docs/WIRE_FORMAT.md`` for the byte layout.  Every frame is one ASCII
header line ending in ``\\n`` whose last token is the payload length in
bytes, followed by exactly that many payload bytes.  Numeric payloads are
little-endian IEEE-754 float64.
"""
from __future__ import annotations

import socket
import socketserver
import threading

import numpy as np

from ..inference import IncomingMessages, OutgoingMessages
from ..model import KernelConfig
from .store import MessageStore

MAGIC = b"ATF/1"
MAX_PAYLOAD = 1 << 24
MAX_HEADER = 4096
_F64 = np.dtype("<f8")


class WireError(RuntimeError):
    pass


def _check_id(video_id: str) -> str:
    video_id = str(video_id)
    if not video_id or any(not (33 <= ord(c) <= 126) for c in video_id):
        raise WireError(f"video id must be non-empty printable ASCII without spaces: {video_id!r}")
    return video_id


def _frame(tokens: list, payload: bytes = b"") -> bytes:
    head = b" ".join([MAGIC] + [str(t).encode("ascii") for t in tokens] + [str(len(payload)).encode()])
    return head + b"\n" + payload


def read_frame(stream) -> tuple[list[str], bytes] | None:
    """Read one frame; ``None`` on clean EOF."""
    line = stream.readline(MAX_HEADER + 1)
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise WireError("header line too long or truncated")
    parts = line.decode("ascii").split()
    if len(parts) < 3 or parts[0].encode() != MAGIC:
        raise WireError(f"bad header {line!r}")
    try:
        n = int(parts[-1])
    except ValueError as exc:
        raise WireError(f"bad payload length in {line!r}") from exc
    if not 0 <= n <= MAX_PAYLOAD:
        raise WireError(f"payload length {n} out of range")
    payload = stream.read(n) if n else b""
    if len(payload) != n:
        raise WireError("truncated payload")
    return parts[1:-1], payload


def _floats(payload: bytes) -> np.ndarray:
    if len(payload) % 8:
        raise WireError("payload is not a whole number of float64 values")
    return np.frombuffer(payload, dtype=_F64).astype(float)


def _f64(*vectors) -> bytes:
    return b"".join(np.asarray(v, dtype=_F64).tobytes() for v in vectors)


# request encoders ----------------------------------------------------------

def encode_send(video_id: str, msg: OutgoingMessages) -> bytes:
    O, M = msg.fa.shape[0], msg.h.shape[0]
    return _frame(["SEND", _check_id(video_id), int(msg.frame_index), O, M, int(msg.has_truth)],
                  _f64(msg.fa, msg.fb, msg.h, msg.h_star, msg.k, msg.k_star))


def encode_get(video_id: str, target_frame: int, cfg: KernelConfig) -> bytes:
    return _frame(["GET", _check_id(video_id), int(target_frame)],
                  _f64([cfg.sigma, cfg.kernel_weight]))


def encode_reset(video_id: str) -> bytes:
    return _frame(["RESET", _check_id(video_id)])


def encode_size(video_id: str) -> bytes:
    return _frame(["SIZE", _check_id(video_id)])


def decode_send(args: list[str], payload: bytes) -> tuple[str, OutgoingMessages]:
    if len(args) != 6:
        raise WireError("SEND expects: video frame n_object n_intent has_truth")
    video_id, frame, O, M, truth = args[1], int(args[2]), int(args[3]), int(args[4]), args[5]
    if truth not in ("0", "1"):
        raise WireError("has_truth must be 0 or 1")
    vals = _floats(payload)
    if vals.shape[0] != 4 * O + 2 * M:
        raise WireError(f"SEND payload holds {vals.shape[0]} values, expected {4 * O + 2 * M}")
    cuts = np.cumsum([O, O, M, M, O])
    fa, fb, h, hs, k, ks = np.split(vals, cuts)
    return video_id, OutgoingMessages(fa, fb, h, hs, k, ks, frame_index=frame,
                                      has_truth=truth == "1")


def encode_incoming(inc: IncomingMessages) -> bytes:
    return _frame(["OK", inc.fa_in.shape[0], inc.h_in.shape[0]], _f64(*inc.as_tuple()))


def decode_incoming(args: list[str], payload: bytes) -> IncomingMessages:
    O, M = int(args[1]), int(args[2])
    vals = _floats(payload)
    if vals.shape[0] != 6 * O + 2 * M:
        raise WireError("GET response has the wrong number of values")
    return IncomingMessages(*np.split(vals, np.cumsum([O, O, M, M, O, O, O])))


# server --------------------------------------------------------------------

def handle_request(store: MessageStore, args: list[str], payload: bytes) -> bytes:
    """Apply one decoded request to ``store`` and return the encoded response."""
    try:
        verb = args[0] if args else ""
        if verb == "SEND":
            video_id, msg = decode_send(args, payload)
            return _frame(["OK", store.send(_check_id(video_id), msg)])
        if verb == "GET":
            if len(args) != 3:
                raise WireError("GET expects: video target_frame")
            sigma, kw = _floats(payload) if len(payload) == 16 else (None, None)
            if sigma is None:
                raise WireError("GET payload must hold sigma and kernel_weight")
            inc = store.get_approximate_incoming(_check_id(args[1]), int(args[2]),
                                                 KernelConfig(sigma=sigma, kernel_weight=kw))
            return encode_incoming(inc)
        if verb == "RESET":
            store.reset_video(_check_id(args[1]))
            return _frame(["OK", 0])
        if verb == "SIZE":
            return _frame(["OK", store.size(_check_id(args[1]))])
        raise WireError(f"unknown verb {verb!r}")
    except (ValueError, WireError, IndexError) as exc:
        return _frame(["ERR"], str(exc).encode("utf-8"))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                req = read_frame(self.rfile)
            except WireError as exc:
                self.wfile.write(_frame(["ERR"], str(exc).encode("utf-8")))
                return
            if req is None:
                return
            self.wfile.write(handle_request(self.server.store, *req))
            self.wfile.flush()


class MessageServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: MessageStore, address=("127.0.0.1", 0)):
        super().__init__(address, _Handler)
        self.store = store


def serve_in_thread(store: MessageStore, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a daemon thread; returns ``(server, (host, port))``."""
    srv = MessageServer(store, (host, port))
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    return srv, srv.server_address


# client --------------------------------------------------------------------

class RemoteStore:
    """Client with the same surface as ``MessageStore``."""

    def __init__(self, address, n_object: int, n_intent: int, timeout: float = 30.0):
        self.n_object = n_object
        self.n_intent = n_intent
        self._sock = socket.create_connection(address, timeout=timeout)
        self._io = self._sock.makefile("rwb")
        self._lock = threading.Lock()

    def _call(self, data: bytes):
        with self._lock:
            self._io.write(data)
            self._io.flush()
            resp = read_frame(self._io)
        if resp is None:
            raise WireError("server closed the connection")
        args, payload = resp
        if args and args[0] == "ERR":
            raise WireError(payload.decode("utf-8", "replace"))
        return args, payload

    def send(self, video_id: str, msg: OutgoingMessages) -> int:
        args, _ = self._call(encode_send(video_id, msg))
        return int(args[1])

    def get_approximate_incoming(self, video_id: str, target_frame, cfg: KernelConfig
                                 ) -> IncomingMessages:
        return decode_incoming(*self._call(encode_get(video_id, int(target_frame), cfg)))

    def reset_video(self, video_id: str) -> None:
        self._call(encode_reset(video_id))

    def size(self, video_id: str) -> int:
        args, _ = self._call(encode_size(video_id))
        return int(args[1])

    def close(self) -> None:
        self._io.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
