"""Read-only parser for classic HFS (Mac OS Standard) disk images.

The volume header, the Master Directory Block, sits at byte offset 1024
and carries the allocation geometry plus the locations of the two special
files: the catalog B-tree, which maps (parent id, name) keys to file and
folder records, and the extents-overflow B-tree, which holds extent
records beyond the three kept inline per fork.  All multi-byte fields are
big-endian; B-tree nodes are 512 bytes with a record-offset table growing
backwards from the node end.

Images are accepted as bytes, paths, or binary file objects.  Paths are
mapped read-only; nothing here ever writes to an image.
"""

from __future__ import annotations

import mmap
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import NamedTuple

from . import macroman

SECTOR = 512
HFS_SIGNATURE = b"BD"
MDB_OFFSET = 1024
ROOT_PARENT_ID = 1
ROOT_FOLDER_ID = 2

HFS_EPOCH = datetime(1904, 1, 1, tzinfo=timezone.utc)

_MDB_FMT = ">2sLLHHHHHLLHLH28pLHLLLHLL32sHHHL6HL6H"
_MDB_SIZE = struct.calcsize(_MDB_FMT)
_NODE_DESC_FMT = ">LLBBH"
_BT_HEADER_FMT = ">HLLLLHHLL"
_FILE_REC_FMT = ">BB16sLHLLHLLLLL16sH12s12s"
_PARTITION_FMT = ">2s2xLLL32s32s"

_NODE_SIZE = 512
_HEADER_NODE = 1
_LEAF_NODE = 0xFF

_REC_FOLDER = 1
_REC_FILE = 2
_REC_FOLDER_THREAD = 3
_REC_FILE_THREAD = 4

_DATA_FORK = 0x00
_RSRC_FORK = 0xFF

_PARTITION_SCAN_LIMIT = 1024 * 1024


class HfsError(Exception):
    """Base for all HFS parsing and access failures."""


class NotHfs(HfsError):
    pass


class Truncated(HfsError):
    pass


class CorruptCatalog(HfsError):
    pass


class CorruptExtents(HfsError):
    pass


class UnknownId(HfsError):
    pass


class NotFound(HfsError):
    pass


class NotAFolder(HfsError):
    pass


class IoError(HfsError):
    pass


@dataclass(frozen=True)
class HfsDate:
    """Unsigned 32-bit seconds since 1904-01-01T00:00:00, taken as UTC."""

    raw: int


def hfs_date_to_timestamp(d: HfsDate) -> datetime:
    return HFS_EPOCH + timedelta(seconds=d.raw)


class ExtentDescriptor(NamedTuple):
    start_block: int
    block_count: int


@dataclass(frozen=True)
class ForkLocator:
    size: int
    extents: tuple[ExtentDescriptor, ...]


@dataclass(frozen=True)
class MasterDirectoryBlock:
    signature: bytes
    volume_name: str
    creation_date: HfsDate
    modification_date: HfsDate
    allocation_block_size: int
    allocation_block_count: int
    first_allocation_block: int
    file_count: int
    folder_count: int
    catalog_file: ForkLocator
    extents_overflow_file: ForkLocator


@dataclass
class CatalogRecord:
    kind: str  # 'file' | 'folder' | 'thread'
    id: int
    parent_id: int
    name: str
    valence: int = 0
    type_code: str | None = None
    creator_code: str | None = None
    data_size: int = 0
    rsrc_size: int = 0
    data_extents: tuple[ExtentDescriptor, ...] = ()
    rsrc_extents: tuple[ExtentDescriptor, ...] = ()
    created: HfsDate | None = None
    modified: HfsDate | None = None


def _unpack_extents(buf: bytes, offset: int) -> tuple[ExtentDescriptor, ...]:
    pairs = struct.unpack_from(">6H", buf, offset)
    out = []
    for start, count in zip(pairs[::2], pairs[1::2]):
        if count == 0:  # an all-zero descriptor terminates the record
            break
        out.append(ExtentDescriptor(start, count))
    return tuple(out)


def _acquire(source):
    """Return (buffer, closers) for bytes, paths, or binary file objects."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return source, ()
    if isinstance(source, (str, Path)):
        f = open(source, "rb")
        try:
            mm = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
        except ValueError:
            f.close()
            raise Truncated(f"{source}: image file is empty") from None
        except OSError as e:
            f.close()
            raise IoError(f"{source}: {e}") from e
        return mm, (mm, f)
    if hasattr(source, "read"):
        source.seek(0)
        return source.read(), ()
    raise TypeError(f"unsupported image source: {type(source)!r}")


def _locate_volume(img) -> int:
    """Byte offset of the HFS volume inside the image.

    A bare volume has the 'BD' signature at offset 1024.  Failing that,
    512-byte-aligned offsets over the first MiB are scanned for an Apple
    partition map entry describing an Apple_HFS partition.
    """
    if bytes(img[MDB_OFFSET:MDB_OFFSET + 2]) == HFS_SIGNATURE:
        return 0
    limit = min(len(img), _PARTITION_SCAN_LIMIT)
    for off in range(SECTOR, limit - 79, SECTOR):
        if bytes(img[off:off + 2]) != b"PM":
            continue
        _, _, part_start, _, _, par_type = struct.unpack_from(_PARTITION_FMT, img, off)
        if par_type.split(b"\x00", 1)[0] != b"Apple_HFS":
            continue
        base = part_start * SECTOR
        if base + MDB_OFFSET + 2 <= len(img) and bytes(img[base + MDB_OFFSET:base + MDB_OFFSET + 2]) == HFS_SIGNATURE:
            return base
    raise NotHfs("no HFS master directory block signature found")


def open_volume(source) -> "Volume":
    """Open an HFS image for reading; the image is never modified."""
    img, closers = _acquire(source)
    try:
        if len(img) < 3 * SECTOR:
            raise Truncated("image shorter than boot blocks plus volume header")
        base = _locate_volume(img)
        mdb, bitmap = _parse_mdb(img, base)
        return Volume(img, base, mdb, bitmap, closers)
    except BaseException:
        for c in closers:
            c.close()
        raise


def _parse_mdb(img, base: int) -> tuple[MasterDirectoryBlock, bytes]:
    if base + MDB_OFFSET + _MDB_SIZE > len(img):
        raise Truncated("image too short for a full master directory block")
    (sig, cr_date, mod_date, _attrs, _root_files, vbm_start, _alloc_ptr,
     n_blocks, block_size, _clump, alloc_start, _next_cnid, _free_blocks,
     vol_name, _backup, _seq, _writes, _xt_clump, _ct_clump, _root_dirs,
     file_count, dir_count, _finder, _c1, _c2, _c3,
     xt_size, xs1, xc1, xs2, xc2, xs3, xc3,
     ct_size, cs1, cc1, cs2, cc2, cs3, cc3) = struct.unpack_from(_MDB_FMT, img, base + MDB_OFFSET)

    if sig != HFS_SIGNATURE:
        raise NotHfs("bad volume signature %r" % sig)
    if block_size == 0 or block_size % SECTOR:
        raise CorruptCatalog("invalid allocation block size %d" % block_size)

    alloc_base = base + alloc_start * SECTOR
    if alloc_base + n_blocks * block_size > len(img):
        raise Truncated("allocation area extends past end of image")

    bitmap_len = (n_blocks + 7) // 8
    bitmap_off = base + vbm_start * SECTOR
    if bitmap_off + bitmap_len > len(img):
        raise Truncated("allocation bitmap extends past end of image")
    bitmap = bytes(img[bitmap_off:bitmap_off + bitmap_len])

    def fork(size: int, raw: tuple[int, ...]) -> ForkLocator:
        extents = []
        for start, count in zip(raw[::2], raw[1::2]):
            if count == 0:
                break
            if alloc_base + (start + count) * block_size > len(img):
                raise Truncated("special file extent points past end of image")
            extents.append(ExtentDescriptor(start, count))
        return ForkLocator(size, tuple(extents))

    mdb = MasterDirectoryBlock(
        signature=sig,
        volume_name=macroman.decode_name(vol_name),
        creation_date=HfsDate(cr_date),
        modification_date=HfsDate(mod_date),
        allocation_block_size=block_size,
        allocation_block_count=n_blocks,
        first_allocation_block=alloc_start,
        file_count=file_count,
        folder_count=dir_count,
        catalog_file=fork(ct_size, (cs1, cc1, cs2, cc2, cs3, cc3)),
        extents_overflow_file=fork(xt_size, (xs1, xc1, xs2, xc2, xs3, xc3)),
    )
    return mdb, bitmap


def _split_node(tree: bytes, index: int, exc=CorruptCatalog):
    off = index * _NODE_SIZE
    if off < 0 or off + _NODE_SIZE > len(tree):
        raise exc("b-tree node %d outside file" % index)
    flink, _blink, ntype, height, n_recs = struct.unpack_from(_NODE_DESC_FMT, tree, off)
    table_off = off + _NODE_SIZE - 2 * (n_recs + 1)
    if table_off < off + 14:
        raise exc("node %d record count %d does not fit" % (index, n_recs))
    offsets = struct.unpack_from(">%dH" % (n_recs + 1), tree, table_off)[::-1]
    prev = 14
    for o in offsets:
        if o < prev or off + o > table_off:
            raise exc("node %d has a malformed record offset table" % index)
        prev = o
    records = [tree[off + a:off + b] for a, b in zip(offsets, offsets[1:])]
    return flink, ntype, height, records


def _leaf_records(tree: bytes, label: str, exc=CorruptCatalog) -> list[bytes]:
    """All leaf records of a B-tree file, following the leaf forward chain."""
    if len(tree) < _NODE_SIZE:
        raise exc(f"{label} b-tree smaller than one node")
    _, ntype, _, header_recs = _split_node(tree, 0, exc)
    if ntype != _HEADER_NODE or not header_recs:
        raise exc(f"{label} b-tree has no header node")
    header = header_recs[0]
    if len(header) < struct.calcsize(_BT_HEADER_FMT):
        raise exc(f"{label} b-tree header record too short")
    (_depth, _root, _n_recs, first_leaf, last_leaf,
     node_size, _key_len, _n_nodes, _free) = struct.unpack_from(_BT_HEADER_FMT, header)
    if node_size != _NODE_SIZE:
        raise exc(f"{label} b-tree node size {node_size} unsupported")

    out: list[bytes] = []
    if first_leaf == 0:
        return out
    seen: set[int] = set()
    node = first_leaf
    while True:
        if node in seen:
            raise exc(f"{label} leaf chain loops")
        seen.add(node)
        flink, ntype, _, records = _split_node(tree, node, exc)
        if ntype != _LEAF_NODE:
            raise exc(f"{label} leaf chain reaches a non-leaf node")
        out.extend(records)
        if node == last_leaf:
            break
        if flink == 0:
            raise exc(f"{label} leaf chain ends before the last leaf")
        node = flink
    return out


def _parse_catalog_record(rec: bytes):
    """One catalog leaf record -> (raw_name, CatalogRecord), or None for threads."""
    if len(rec) < 8:
        raise CorruptCatalog("catalog record too short")
    key_len = rec[0]
    if key_len < 6 or 1 + key_len > len(rec):
        raise CorruptCatalog("catalog key length out of range")
    parent_id, name_len = struct.unpack_from(">LB", rec, 2)
    if name_len != key_len - 6:
        raise CorruptCatalog("catalog key name length mismatch")
    raw_name = bytes(rec[7:7 + name_len])
    val_off = 1 + key_len
    if val_off & 1:
        val_off += 1
    val = rec[val_off:]
    if len(val) < 2:
        raise CorruptCatalog("catalog record value missing")
    rec_type = val[0]

    if rec_type == _REC_FOLDER:
        if len(val) < 2 + struct.calcsize(">HHLLLL"):
            raise CorruptCatalog("folder record too short")
        _flags, valence, folder_id, created, modified, _backup = struct.unpack_from(">HHLLLL", val, 2)
        return raw_name, CatalogRecord(
            kind="folder", id=folder_id, parent_id=parent_id,
            name=macroman.decode_name(raw_name), valence=valence,
            created=HfsDate(created), modified=HfsDate(modified))

    if rec_type == _REC_FILE:
        if len(val) < 2 + struct.calcsize(_FILE_REC_FMT):
            raise CorruptCatalog("file record too short")
        (_flags, _ftype, finder_info, file_id, _d_start, d_len, _d_phys,
         _r_start, r_len, _r_phys, created, modified, _backup,
         _xinfo, _clump, d_ext, r_ext) = struct.unpack_from(_FILE_REC_FMT, val, 2)
        type_code, creator_code = struct.unpack_from(">4s4s", finder_info, 0)
        return raw_name, CatalogRecord(
            kind="file", id=file_id, parent_id=parent_id,
            name=macroman.decode_name(raw_name),
            type_code=type_code.decode("mac_roman"),
            creator_code=creator_code.decode("mac_roman"),
            data_size=d_len, rsrc_size=r_len,
            data_extents=_unpack_extents(d_ext, 0),
            rsrc_extents=_unpack_extents(r_ext, 0),
            created=HfsDate(created), modified=HfsDate(modified))

    if rec_type in (_REC_FOLDER_THREAD, _REC_FILE_THREAD):
        return None
    raise CorruptCatalog("unknown catalog record type %d" % rec_type)


class Volume:
    """Handle over one parsed HFS volume; all reads are pure after open.

    The catalog is loaded lazily on first access and cached; concurrent
    readers are fine once open has returned.
    """

    def __init__(self, img, base, mdb, bitmap, closers):
        self._img = img
        self._base = base
        self._mdb = mdb
        self._allocation_bitmap = bitmap  # parsed, never consulted: no allocation happens
        self._closers = closers
        self._lock = threading.Lock()
        self._catalog = None
        self._overflow: dict | None = None
        self._extent_cache: dict = {}

    @property
    def mdb(self) -> MasterDirectoryBlock:
        return self._mdb

    @property
    def volume_name(self) -> str:
        return self._mdb.volume_name

    @property
    def file_count(self) -> int:
        return self._mdb.file_count

    @property
    def folder_count(self) -> int:
        return self._mdb.folder_count

    def close(self) -> None:
        for c in self._closers:
            c.close()
        self._closers = ()

    def __enter__(self) -> "Volume":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # internal plumbing

    def _slice(self, offset: int, length: int, exc=Truncated) -> bytes:
        if offset < 0 or length < 0 or offset + length > len(self._img):
            raise exc("read outside image bounds")
        return bytes(self._img[offset:offset + length])

    def _alloc_base(self) -> int:
        return self._base + self._mdb.first_allocation_block * SECTOR

    def _special_fork_bytes(self, locator: ForkLocator, cnid: int, overflow) -> bytes:
        block_size = self._mdb.allocation_block_size
        alloc_base = self._alloc_base()
        extents = list(locator.extents)
        if overflow:
            for _fabn, more in overflow.get((_DATA_FORK, cnid), []):
                extents.extend(more)
        out = bytearray()
        for ext in extents:
            if len(out) >= locator.size:
                break
            out += self._slice(alloc_base + ext.start_block * block_size,
                               ext.block_count * block_size)
        if len(out) < locator.size:
            raise Truncated("b-tree file smaller than its declared size")
        return bytes(out[:locator.size])

    def _parse_overflow(self) -> dict:
        tree = self._special_fork_bytes(self._mdb.extents_overflow_file, 3, None)
        table: dict = defaultdict(list)
        for rec in _leaf_records(tree, "extents", CorruptExtents):
            if len(rec) < 20:
                raise CorruptExtents("extents record too short")
            if rec[0] != 7:
                raise CorruptExtents("unexpected extents key length %d" % rec[0])
            fork_type = rec[1]
            file_id, fabn = struct.unpack_from(">LH", rec, 2)
            table[(fork_type, file_id)].append((fabn, _unpack_extents(rec, 8)))
        for runs in table.values():
            runs.sort()
        return dict(table)

    def _parse_catalog(self):
        tree = self._special_fork_bytes(self._mdb.catalog_file, 4, self._overflow)
        records: dict[int, CatalogRecord] = {}
        raw_names: dict[int, bytes] = {}
        children: dict[int, list[CatalogRecord]] = defaultdict(list)
        for rec_bytes in _leaf_records(tree, "catalog"):
            parsed = _parse_catalog_record(rec_bytes)
            if parsed is None:
                continue
            raw_name, record = parsed
            if record.id in records:
                raise CorruptCatalog("duplicate catalog node id %d" % record.id)
            if record.id in (0, ROOT_PARENT_ID) or record.id == record.parent_id:
                raise CorruptCatalog("invalid catalog node id %d" % record.id)
            records[record.id] = record
            raw_names[record.id] = raw_name
            children[record.parent_id].append(record)

        root = records.get(ROOT_FOLDER_ID)
        if root is None or root.kind != "folder" or root.parent_id != ROOT_PARENT_ID:
            raise CorruptCatalog("catalog has no root folder")
        if [r.id for r in children.get(ROOT_PARENT_ID, [])] != [ROOT_FOLDER_ID]:
            raise CorruptCatalog("root folder is not the sole child of the root parent")

        by_key: dict[int, dict[bytes, CatalogRecord]] = {}
        for parent_id, siblings in children.items():
            parent = records.get(parent_id)
            if parent_id != ROOT_PARENT_ID and (parent is None or parent.kind != "folder"):
                raise CorruptCatalog("entries under missing folder %d" % parent_id)
            siblings.sort(key=lambda r: macroman.fold(raw_names[r.id]))
            keys: dict[bytes, CatalogRecord] = {}
            for r in siblings:
                k = macroman.fold(raw_names[r.id])
                if k in keys:
                    raise CorruptCatalog("case-colliding sibling names under folder %d" % parent_id)
                keys[k] = r
            by_key[parent_id] = keys
        for r in records.values():
            if r.kind == "folder" and r.valence != len(children.get(r.id, [])):
                raise CorruptCatalog("folder %d valence %d does not match %d children"
                                     % (r.id, r.valence, len(children.get(r.id, []))))
        return records, dict(children), by_key

    def _ensure_catalog(self):
        if self._catalog is None:
            with self._lock:
                if self._catalog is None:
                    self._overflow = self._parse_overflow()
                    self._catalog = self._parse_catalog()
        return self._catalog

    def _fork_extents(self, record: CatalogRecord, fork: str) -> tuple[ExtentDescriptor, ...]:
        key = (record.id, fork)
        cached = self._extent_cache.get(key)
        if cached is not None:
            return cached
        extents = list(record.data_extents if fork == "data" else record.rsrc_extents)
        fork_type = _DATA_FORK if fork == "data" else _RSRC_FORK
        for _fabn, more in (self._overflow or {}).get((fork_type, record.id), []):
            extents.extend(more)
        result = tuple(extents)
        self._extent_cache[key] = result
        return result

    # public operations

    def list_children(self, folder_id: int) -> list[CatalogRecord]:
        """Immediate children of a folder, in catalog key order."""
        records, children, _ = self._ensure_catalog()
        rec = records.get(folder_id)
        if rec is None or rec.kind != "folder":
            raise UnknownId(f"no folder with id {folder_id}")
        return list(children.get(folder_id, []))

    def lookup(self, path: str) -> CatalogRecord:
        """Resolve a '/'-separated path from the root, case-insensitively."""
        records, _children, by_key = self._ensure_catalog()
        current = records[ROOT_FOLDER_ID]
        for component in (c for c in path.split("/") if c):
            if current.kind != "folder":
                raise NotAFolder(f"{current.name!r} is not a folder")
            try:
                key = macroman.fold(macroman.encode_name(component))
            except UnicodeEncodeError:
                raise NotFound(f"not found: {path}") from None
            nxt = by_key.get(current.id, {}).get(key)
            if nxt is None:
                raise NotFound(f"not found: {path}")
            current = nxt
        return current

    def read_fork(self, record: CatalogRecord, fork: str = "data",
                  offset: int = 0, length: int | None = None) -> bytes:
        """Bytes of one fork, mapped through the inline extents and then the
        extents-overflow tree; never reads past the logical fork size."""
        if record.kind != "file":
            raise ValueError("read_fork requires a file record")
        if fork not in ("data", "rsrc"):
            raise ValueError(f"unknown fork {fork!r}")
        if offset < 0 or (length is not None and length < 0):
            raise ValueError("offset and length must be non-negative")
        self._ensure_catalog()
        size = record.data_size if fork == "data" else record.rsrc_size
        available = size - offset
        if available <= 0:
            return b""
        want = available if length is None else min(length, available)

        block_size = self._mdb.allocation_block_size
        alloc_base = self._alloc_base()
        out = bytearray()
        position = 0
        cursor = offset
        remaining = want
        for ext in self._fork_extents(record, fork):
            ext_bytes = ext.block_count * block_size
            if cursor < position + ext_bytes:
                within = cursor - position
                take = min(remaining, ext_bytes - within)
                out += self._slice(alloc_base + ext.start_block * block_size + within,
                                   take, exc=CorruptExtents)
                cursor += take
                remaining -= take
                if remaining == 0:
                    break
            position += ext_bytes
        if remaining:
            raise CorruptExtents("fork bytes not covered by any extent")
        return bytes(out)
