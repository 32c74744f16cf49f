"""In-process message store with recency-discounted incoming messages."""
from __future__ import annotations

import threading

import numpy as np

from .. import kernels
from ..inference import IncomingMessages, OutgoingMessages
from ..model import KernelConfig

DEFAULT_DISCOUNT = 0.9

_FIELDS = ("fa", "fb", "h", "h_star", "k", "k_star")


class MalformedMessage(ValueError):
    pass


class _VideoSlots:
    """Dense latest-only record table for one video."""

    def __init__(self, n_object: int, n_intent: int, capacity: int = 32):
        self.lock = threading.Lock()
        self.counter = 0
        self.slot_of: dict[int, int] = {}
        self.n = 0
        self._alloc(n_object, n_intent, capacity)

    def _alloc(self, O, M, cap):
        self.pos = np.zeros(cap)
        self.stamp = np.zeros(cap, dtype=np.int64)
        self.has_truth = np.zeros(cap, dtype=np.bool_)
        self.vec = {name: np.zeros((cap, M if name.startswith("h") else O)) for name in _FIELDS}

    def _grow(self):
        cap = 2 * self.pos.shape[0]
        self.pos = np.resize(self.pos, cap)
        self.stamp = np.resize(self.stamp, cap)
        self.has_truth = np.resize(self.has_truth, cap)
        for name, arr in self.vec.items():
            new = np.zeros((cap, arr.shape[1]))
            new[: arr.shape[0]] = arr
            self.vec[name] = new

    def write(self, msg: OutgoingMessages) -> int:
        with self.lock:
            slot = self.slot_of.get(msg.frame_index)
            if slot is None:
                if self.n == self.pos.shape[0]:
                    self._grow()
                slot = self.n
                self.n += 1
                self.slot_of[msg.frame_index] = slot
            self.counter += 1
            self.pos[slot] = msg.frame_index
            self.stamp[slot] = self.counter
            self.has_truth[slot] = msg.has_truth
            for name in _FIELDS:
                self.vec[name][slot] = getattr(msg, name)
            return self.counter

    def snapshot(self):
        with self.lock:
            n = self.n
            return (self.pos[:n].copy(), self.stamp[:n].copy(), self.has_truth[:n].copy(),
                    {name: arr[:n].copy() for name, arr in self.vec.items()})


class MessageStore:
    """Latest outgoing messages per (video, frame), served as approximate incoming sums.

    ``h_mode`` is ``"count"`` (h = number of contributing messages) or a
    float used as a fixed h.  With ``kernel_weighting=False`` the frame
    kernel is dropped and only the recency discount weights messages.
    """

    def __init__(self, n_object: int, n_intent: int, discount: float = DEFAULT_DISCOUNT,
                 h_mode: str | float = "count", kernel_weighting: bool = True):
        if not 0.0 <= discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if h_mode == "count":
            self._h_fixed = -1.0
        else:
            self._h_fixed = float(h_mode)
            if not self._h_fixed >= 0:
                raise ValueError("fixed h must be a non-negative number")
        self.n_object = n_object
        self.n_intent = n_intent
        self.discount = float(discount)
        self.h_mode = h_mode
        self.kernel_weighting = kernel_weighting
        self._videos: dict[str, _VideoSlots] = {}
        self._registry_lock = threading.Lock()

    def _slots(self, video_id: str, create: bool) -> _VideoSlots | None:
        with self._registry_lock:
            slots = self._videos.get(video_id)
            if slots is None and create:
                slots = _VideoSlots(self.n_object, self.n_intent)
                self._videos[video_id] = slots
            return slots

    def _validate(self, msg) -> None:
        if not isinstance(msg, OutgoingMessages):
            raise MalformedMessage(f"expected OutgoingMessages, got {type(msg).__name__}")
        if msg.fa.shape[0] != self.n_object or msg.h.shape[0] != self.n_intent:
            raise MalformedMessage(
                f"message sized ({msg.fa.shape[0]}, {msg.h.shape[0]}), store expects "
                f"({self.n_object}, {self.n_intent})")
        if int(msg.frame_index) != msg.frame_index or msg.frame_index < 0:
            raise MalformedMessage(f"bad frame index {msg.frame_index!r}")

    def send(self, video_id: str, msg: OutgoingMessages) -> int:
        """Store ``msg`` under its frame; returns the assigned iteration stamp."""
        self._validate(msg)
        return self._slots(str(video_id), True).write(msg)

    def get_approximate_incoming(self, video_id: str, target_frame, cfg: KernelConfig
                                 ) -> IncomingMessages:
        slots = self._slots(str(video_id), False)
        if slots is None:
            return IncomingMessages.zeros(self.n_object, self.n_intent)
        pos, stamp, truth, vec = slots.snapshot()
        out = kernels.approx_incoming(
            pos, stamp, truth, vec["fa"], vec["fb"], vec["h"], vec["h_star"], vec["k"],
            vec["k_star"], float(target_frame), self.discount, self._h_fixed, float(cfg.sigma),
            float(cfg.kernel_weight), self.kernel_weighting)
        return IncomingMessages(*(np.asarray(v, dtype=float) for v in out))

    def reset_video(self, video_id: str) -> None:
        with self._registry_lock:
            self._videos.pop(str(video_id), None)

    def size(self, video_id: str | None = None) -> int:
        with self._registry_lock:
            videos = list(self._videos.values()) if video_id is None else \
                [self._videos[str(video_id)]] if str(video_id) in self._videos else []
        return sum(v.n for v in videos)

    def record(self, video_id: str, frame_index: int) -> OutgoingMessages | None:
        """The stored record for one frame, with its stamp, or None."""
        slots = self._slots(str(video_id), False)
        if slots is None:
            return None
        with slots.lock:
            slot = slots.slot_of.get(int(frame_index))
            if slot is None:
                return None
            return OutgoingMessages(*(slots.vec[n][slot].copy() for n in _FIELDS),
                                    frame_index=int(frame_index),
                                    iteration=int(slots.stamp[slot]),
                                    has_truth=bool(slots.has_truth[slot]))

    def video_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._videos)
