"""Binary dataset ("CFDS") and checkpoint ("CFNW") files.

Both formats are little-endian throughout and self-describing, so a file can
be validated without building a network. Writes go to a temporary file in the
target directory and are renamed into place.

Dataset layout::

    header  magic "CFDS" | version u32 | count u32 | H u16 | W u16 |
            channels u16 (=3) | num_classes u16 | granularity u8 |
            theme kind u8 | seed u64                          (30 bytes)
    body    count x [image H*W*3 u8 | labels H*W u16 | scene label u16 |
                     instance map H*W u16]

Checkpoint layout::

    header  magic "CFNW" | version u32 | descriptor length u32 | descriptor
    body    per tensor: name length u16 | name | ndim u8 | dims u32 x ndim |
            float32 data

Checkpoint tensors are the network parameters in declaration order followed
by the batch-norm running statistics.
"""

from __future__ import annotations

import contextlib
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import BadMagicError, CorruptFileError, TruncatedFileError, VersionMismatchError
from .network import Network, NetworkConfig, build_network
from .synth.scene import MetaBatch, Observation
from .synth.themes import THEME_KIND_CODES, theme_for_index

DATASET_MAGIC = b"CFDS"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"CFNW"
CHECKPOINT_VERSION = 1

_HEADER = struct.Struct("<4sIIHHHHBBQ")
_GRANULARITY_CODES = {"coarse": 0, "fine": 1}
_THEME_OF_CODE = {v: k for k, v in THEME_KIND_CODES.items()}


@contextlib.contextmanager
def atomic_write(path):
    """Yield a binary handle on a temp file that replaces ``path`` on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class DatasetHeader:
    version: int
    count: int
    height: int
    width: int
    channels: int
    num_classes: int
    granularity: str
    theme: str
    seed: int

    @property
    def record_size(self) -> int:
        hw = self.height * self.width
        return hw * self.channels + 2 * hw + 2 + 2 * hw

    @property
    def file_size(self) -> int:
        return _HEADER.size + self.count * self.record_size

    def pack(self) -> bytes:
        return _HEADER.pack(
            DATASET_MAGIC,
            self.version,
            self.count,
            self.height,
            self.width,
            self.channels,
            self.num_classes,
            _GRANULARITY_CODES[self.granularity],
            THEME_KIND_CODES[self.theme],
            self.seed,
        )


def _parse_dataset_header(raw: bytes, path) -> DatasetHeader:
    if len(raw) < 4 or raw[:4] != DATASET_MAGIC:
        raise BadMagicError(f"{path}: not a dataset file (magic {raw[:4]!r}, expected {DATASET_MAGIC!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header is {len(raw)} bytes, expected {_HEADER.size}")
    _, version, count, h, w, channels, num_classes, gran, theme, seed = _HEADER.unpack(raw[: _HEADER.size])
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"{path}: dataset format version {version}, this build reads {DATASET_VERSION}")
    if channels != 3:
        raise CorruptFileError(f"{path}: field channels={channels}, expected 3")
    if gran not in (0, 1):
        raise CorruptFileError(f"{path}: field granularity={gran} is not 0 (coarse) or 1 (fine)")
    if theme not in _THEME_OF_CODE:
        raise CorruptFileError(f"{path}: field theme kind={theme} is unknown")
    if num_classes < 2:
        raise CorruptFileError(f"{path}: field num_classes={num_classes} must be >= 2")
    granularity = "coarse" if gran == 0 else "fine"
    return DatasetHeader(version, count, h, w, channels, num_classes, granularity, _THEME_OF_CODE[theme], seed)


def read_dataset_header(path) -> DatasetHeader:
    """Parse and size-check the header without reading the body."""
    with open(path, "rb") as fh:
        header = _parse_dataset_header(fh.read(_HEADER.size), path)
    actual = os.path.getsize(path)
    if actual < header.file_size:
        raise TruncatedFileError(f"{path}: {actual} bytes, header implies {header.file_size}")
    if actual > header.file_size:
        raise CorruptFileError(f"{path}: {actual - header.file_size} trailing bytes after the last observation")
    return header


def _encode_observation(obs, header: DatasetHeader) -> bytes:
    h, w = header.height, header.width
    image = np.asarray(obs.image)
    if image.shape != (h, w, 3) or image.dtype != np.uint8:
        raise ValueError(f"observation image must be ({h}, {w}, 3) uint8, got {image.shape} {image.dtype}")
    labels = np.asarray(obs.dense_labels)
    if labels.shape != (h, w):
        raise ValueError(f"dense labels must be ({h}, {w}), got {labels.shape}")
    if labels.size and int(labels.max()) >= header.num_classes:
        raise ValueError(f"label {int(labels.max())} >= num_classes {header.num_classes}")
    scene = int(obs.scene_label)
    if not 0 <= scene < header.num_classes:
        raise ValueError(f"scene label {scene} outside [0, {header.num_classes})")
    instances = getattr(obs, "instance_map", None)
    instances = np.zeros((h, w), np.uint16) if instances is None else np.asarray(instances)
    return b"".join(
        (
            np.ascontiguousarray(image).tobytes(),
            labels.astype("<u2").tobytes(),
            struct.pack("<H", scene),
            instances.astype("<u2").tobytes(),
        )
    )


def write_dataset(
    path,
    observations: Iterable,
    count: int,
    size,
    num_classes: int,
    granularity: str,
    theme: str,
    seed: int,
) -> DatasetHeader:
    """Stream ``count`` observations into a dataset file (atomically)."""
    h, w = (size, size) if isinstance(size, int) else size
    header = DatasetHeader(DATASET_VERSION, count, h, w, 3, num_classes, granularity, theme, seed)
    written = 0
    with atomic_write(path) as fh:
        fh.write(header.pack())
        for obs in observations:
            if written == count:
                raise ValueError(f"more than the declared {count} observations")
            fh.write(_encode_observation(obs, header))
            written += 1
        if written != count:
            raise ValueError(f"declared {count} observations but received {written}")
    return header


def write_meta_batch(path, batch: MetaBatch) -> DatasetHeader:
    first = batch.observations[0]
    h, w = first.dense_labels.shape
    return write_dataset(path, batch.observations, len(batch), (h, w), batch.num_classes, batch.granularity, batch.theme, batch.seed)


def _decode(buf: bytes, header: DatasetHeader, index: int, path) -> Observation:
    h, w = header.height, header.width
    hw = h * w
    o = 0
    image = np.frombuffer(buf, np.uint8, 3 * hw, o).reshape(h, w, 3).copy()
    o += 3 * hw
    labels = np.frombuffer(buf, "<u2", hw, o).reshape(h, w).astype(np.uint16)
    o += 2 * hw
    (scene,) = struct.unpack_from("<H", buf, o)
    o += 2
    instances = np.frombuffer(buf, "<u2", hw, o).reshape(h, w).astype(np.uint16)
    if labels.size and int(labels.max()) >= header.num_classes:
        raise CorruptFileError(f"{path}: observation {index} field dense_labels has value {int(labels.max())} >= num_classes {header.num_classes}")
    if scene >= header.num_classes:
        raise CorruptFileError(f"{path}: observation {index} field scene_label={scene} >= num_classes {header.num_classes}")
    return Observation(
        image=image,
        dense_labels=labels,
        scene_label=int(scene),
        instance_map=instances,
        widgets=(),
        theme=theme_for_index(header.theme, index).name,
        granularity=header.granularity,
    )


def iter_dataset(path) -> Iterator[Observation]:
    """Stream observations one at a time after validating the header and size."""
    header = read_dataset_header(path)
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        for i in range(header.count):
            buf = fh.read(header.record_size)
            if len(buf) != header.record_size:
                raise TruncatedFileError(f"{path}: observation {i} is cut short")
            yield _decode(buf, header, i, path)


def read_dataset(path) -> MetaBatch:
    header = read_dataset_header(path)
    obs = list(iter_dataset(path))
    return MetaBatch(obs, header.granularity, header.seed, header.theme, header.height, header.num_classes)


# ---------------------------------------------------------------- checkpoints


def _checkpoint_tensors(net: Network) -> list:
    tensors = [(name, t.data) for name, t in net.named_parameters()]
    tensors += list(net.named_buffers())
    return tensors


def write_checkpoint_raw(path, descriptor: str, tensors) -> None:
    desc = descriptor.encode("utf-8")
    with atomic_write(path) as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(desc)) + desc)
        for name, data in tensors:
            raw_name = name.encode("utf-8")
            data = np.asarray(data)
            fh.write(struct.pack("<H", len(raw_name)) + raw_name)
            fh.write(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_checkpoint_raw(path) -> tuple[str, list]:
    """Descriptor text plus (name, float32 array) pairs, validated structurally."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r})")
    if len(blob) < 12:
        raise TruncatedFileError(f"{path}: checkpoint header cut short")
    version, desc_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}")
    o = 12
    if o + desc_len > len(blob):
        raise TruncatedFileError(f"{path}: architecture descriptor cut short")
    try:
        descriptor = blob[o : o + desc_len].decode("utf-8")
    except UnicodeDecodeError as err:
        raise CorruptFileError(f"{path}: descriptor is not UTF-8") from err
    o += desc_len
    tensors = []

    def need(n, what):
        if o + n > len(blob):
            raise TruncatedFileError(f"{path}: tensor #{len(tensors)} {what} cut short")

    while o < len(blob):
        need(2, "name length")
        (name_len,) = struct.unpack_from("<H", blob, o)
        o += 2
        need(name_len + 1, "name")
        try:
            name = blob[o : o + name_len].decode("utf-8")
        except UnicodeDecodeError as err:
            raise CorruptFileError(f"{path}: tensor #{len(tensors)} name is not UTF-8") from err
        o += name_len
        ndim = blob[o]
        o += 1
        need(4 * ndim, "shape")
        shape = struct.unpack_from(f"<{ndim}I", blob, o)
        o += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        need(4 * n, f"({name}) data")
        data = np.frombuffer(blob, "<f4", n, o).reshape(shape).astype(np.float32)
        o += 4 * n
        tensors.append((name, data))
    return descriptor, tensors


def save_checkpoint(net: Network, path) -> None:
    write_checkpoint_raw(path, net.config.to_descriptor(), _checkpoint_tensors(net))


def load_checkpoint(path) -> Network:
    """Rebuild the network from the stored descriptor and load every tensor."""
    descriptor, tensors = read_checkpoint_raw(path)
    try:
        config = NetworkConfig.from_descriptor(descriptor)
        net = build_network(config)
    except (KeyError, ValueError) as err:
        raise CorruptFileError(f"{path}: bad architecture descriptor: {err}") from err
    expected = _checkpoint_tensors(net)
    if len(expected) != len(tensors):
        raise CorruptFileError(f"{path}: {len(tensors)} tensors stored, architecture needs {len(expected)}")
    targets = dict(net.named_parameters())
    buffers = dict(net.named_buffers())
    for (want_name, want), (name, data) in zip(expected, tensors):
        if name != want_name:
            raise CorruptFileError(f"{path}: tensor {name!r} found where {want_name!r} was expected")
        if data.shape != np.shape(want):
            raise CorruptFileError(f"{path}: tensor {name!r} has shape {data.shape}, expected {np.shape(want)}")
        if name in targets:
            targets[name].data = data.astype(targets[name].data.dtype)
        else:
            buffers[name][...] = data
    net.eval()
    return net
