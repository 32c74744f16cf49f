"""Message store shared by asynchronous training workers."""
from .store import DEFAULT_DISCOUNT, MalformedMessage, MessageStore
from .wire import MessageServer, RemoteStore, WireError, serve_in_thread

__all__ = [
    "DEFAULT_DISCOUNT",
    "MalformedMessage",
    "MessageServer",
    "MessageStore",
    "RemoteStore",
    "WireError",
    "serve_in_thread",
]
