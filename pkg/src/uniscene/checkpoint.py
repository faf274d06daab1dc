"""Named-tensor checkpoints with provenance (UOCK format).

Layout: magic "UOCK", u32 version=1, u32 tensor count, then per tensor
(sorted by name): u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
f32 data little-endian; finally u32 provenance length + UTF-8 provenance
text.  The provenance text is the canonical run-config text plus
``provenance.*`` lines (stage, epoch, config hash, parent digest).

The content digest is the sha256 of the tensor section, so it identifies
the learned weights; fine-tuned checkpoints chain to their warm-start
checkpoint through ``parent_digest``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import MAGIC_CHECKPOINT, ByteReader, atomic_write_bytes
from .errors import FormatError

STAGE_PRETRAINED = "pretrained"
STAGE_FINETUNED = "finetuned"
STAGE_SCRATCH = "scratch"


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    stage: str
    epoch: int
    config_text: str
    parent_digest: str | None = None
    loss_curve: list[float] = field(default_factory=list)  # in-memory only

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def _tensor_section(self) -> bytes:
        out = bytearray()
        for name in self.names():
            data = np.ascontiguousarray(self.tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            out += struct.pack("<H", len(encoded))
            out += encoded
            out += struct.pack("<B", data.ndim)
            out += struct.pack(f"<{data.ndim}I", *data.shape)
            out += data.tobytes()
        return bytes(out)

    def digest(self) -> str:
        return hashlib.sha256(self._tensor_section()).hexdigest()

    def provenance_text(self) -> str:
        lines = [self.config_text,
                 f"provenance.config_hash = {_hash_text(self.config_text)}\n",
                 f"provenance.digest = {self.digest()}\n",
                 f"provenance.epoch = {self.epoch}\n"]
        if self.parent_digest is not None:
            lines.append(f"provenance.parent_digest = {self.parent_digest}\n")
        lines.append(f"provenance.stage = {self.stage}\n")
        return "".join(lines)

    def to_bytes(self) -> bytes:
        section = self._tensor_section()
        prov = self.provenance_text().encode("utf-8")
        return (MAGIC_CHECKPOINT + struct.pack("<II", 1, len(self.tensors))
                + section + struct.pack("<I", len(prov)) + prov)

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_bytes())


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = ByteReader(data)
    r.magic(MAGIC_CHECKPOINT)
    r.version()
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u16("tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        ndim = r.u8("tensor ndim")
        dims = tuple(r.u32(f"dim of {name}") for _ in range(ndim))
        n = int(np.prod(dims)) if dims else 1
        tensors[name] = r.f32s(n, f"data of {name}").reshape(dims)
    prov_len = r.u32("provenance length")
    prov = r.take(prov_len, "provenance text").decode("utf-8")
    r.done()

    config_lines = []
    meta = {}
    for line in prov.splitlines(keepends=True):
        key = line.split("=", 1)[0].strip()
        if key.startswith("provenance."):
            meta[key.removeprefix("provenance.")] = line.split("=", 1)[1].strip()
        else:
            config_lines.append(line)
    if "stage" not in meta or "epoch" not in meta:
        raise FormatError("provenance block missing stage/epoch", len(data) - prov_len)
    return Checkpoint(tensors=tensors, stage=meta["stage"],
                      epoch=int(meta["epoch"]),
                      config_text="".join(config_lines),
                      parent_digest=meta.get("parent_digest"))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def strip_decoder(ck: Checkpoint) -> Checkpoint:
    """Keep only the encoder and depth-head tensors (the warm-start subset)."""
    kept = {name: value.copy() for name, value in ck.tensors.items()
            if name.startswith(("encoder.", "depth_head."))}
    return Checkpoint(tensors=kept, stage=ck.stage, epoch=ck.epoch,
                      config_text=ck.config_text,
                      parent_digest=ck.parent_digest)
