"""Desk-scale storage behind output ports.

sql and streaming ports are CSV files with a header row (streaming ports are
appended to); blob ports are opaque bytes. Ports with encryption enabled hold
AES-GCM ciphertext that is transparently decrypted with the port's data key.
Relative addresses resolve against the store root.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path
from typing import Callable

from ..errors import MeshError
from ..model import OutputPort
from . import crypto

KeyLookup = Callable[[str], bytes]


def parse_csv(data: bytes) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(data.decode("utf-8"), newline="")))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def render_csv(header: list[str], rows: list[list[str]]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


class DatasetStore:
    def __init__(self, root: Path | str, key_lookup: KeyLookup | None = None):
        self.root = Path(root)
        self.key_lookup = key_lookup

    def path(self, address: str) -> Path:
        p = Path(address)
        return p if p.is_absolute() else self.root / p

    def exists(self, address: str) -> bool:
        return self.path(address).exists()

    def mtime(self, address: str) -> float | None:
        p = self.path(address)
        return p.stat().st_mtime if p.exists() else None

    def _key(self, ref: str) -> bytes:
        if self.key_lookup is None:
            raise MeshError(f"no key access configured for encrypted port {ref}")
        return self.key_lookup(ref)

    def read_raw(self, address: str) -> bytes | None:
        p = self.path(address)
        return p.read_bytes() if p.exists() else None

    def write_raw(self, address: str, data: bytes) -> None:
        p = self.path(address)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, p)

    def read_bytes(self, ref: str, port: OutputPort) -> bytes | None:
        data = self.read_raw(port.address)
        if data is None or not port.encryption_enabled:
            return data
        return crypto.decrypt(data, self._key(ref))

    def write_bytes(self, ref: str, port: OutputPort, data: bytes) -> None:
        if port.encryption_enabled:
            data = crypto.encrypt(self._key(ref), data)
        self.write_raw(port.address, data)

    def read_rows(self, ref: str, port: OutputPort) -> tuple[list[str], list[list[str]]] | None:
        data = self.read_bytes(ref, port)
        return None if data is None else parse_csv(data)

    def write_rows(self, ref: str, port: OutputPort, header: list[str], rows: list[list[str]]) -> None:
        self.write_bytes(ref, port, render_csv(header, rows))

    def read_copy(self, address: str) -> tuple[list[str], list[list[str]]] | None:
        data = self.read_raw(address)
        return None if data is None else parse_csv(data)

    def write_copy(self, address: str, header: list[str], rows: list[list[str]]) -> None:
        self.write_raw(address, render_csv(header, rows))
