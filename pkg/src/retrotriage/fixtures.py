"""Deterministic builder of small, fully valid classic-HFS images.

The writer lays every structure out directly from the published on-disk
format: boot blocks, the master directory block, the allocation bitmap,
an empty extents-overflow B-tree, a single-level catalog B-tree (header
node plus a chain of leaf nodes) and contiguously allocated forks.  It
shares no parsing machinery with the reader, so the two sides can check
each other.
"""

from __future__ import annotations

import base64
import random
import struct
from dataclasses import dataclass, field

from . import macroman

SECTOR = 512
MDB_OFFSET = 1024
DEFAULT_IMAGE_SIZE = 4 * 1024 * 1024
MAX_FILES = 32
MAX_FORK_SIZE = 64 * 1024
MAX_NAME_LEN = 31
MAX_VOLUME_NAME_LEN = 27

_MDB_FMT = ">2sLLHHHHHLLHLH28pLHLLLHLL32sHHHL6HL6H"

_TYPE_CODES = ("TEXT", "APPL", "WDBN", "PICT", "STAK", "ttro", "8BPS", "????")
_CREATOR_CODES = ("ttxt", "MSWD", "8BIM", "WILD", "CARO", "MOSS", "????")

_NAME_ALPHABET = (
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789"
    "éèàçüÉŒøπ∆ _.-"
)


class FixtureError(Exception):
    pass


class SpecTooLarge(FixtureError):
    pass


class InvalidName(FixtureError):
    pass


@dataclass
class FileSpec:
    name: str
    data: bytes = b""
    rsrc: bytes = b""
    type_code: str = "????"
    creator_code: str = "????"
    created: int = 0
    modified: int = 0


@dataclass
class FolderSpec:
    name: str
    children: list = field(default_factory=list)
    created: int = 0
    modified: int = 0


@dataclass
class FixtureSpec:
    volume_name: str = "Untitled"
    allocation_block_size: int = SECTOR
    entries: list = field(default_factory=list)


def _checked_name(name: str, limit: int) -> bytes:
    if not name or len(name) > limit:
        raise InvalidName(f"name {name!r} must be 1..{limit} characters")
    if "/" in name:
        raise InvalidName(f"{name!r}: '/' is the path separator; use ':' for an embedded slash")
    if name in (".", ".."):
        raise InvalidName(f"{name!r} is not a usable name")
    try:
        return macroman.encode_name(name)
    except UnicodeEncodeError:
        raise InvalidName(f"{name!r} is not MacRoman-encodable") from None


def _checked_code(code: str) -> bytes:
    try:
        raw = code.encode("mac_roman")
    except UnicodeEncodeError:
        raise InvalidName(f"type/creator code {code!r} is not MacRoman-encodable") from None
    if len(raw) != 4:
        raise InvalidName(f"type/creator code {code!r} must be exactly 4 characters")
    return raw


def _checked_date(raw: int) -> int:
    if not 0 <= raw < 2 ** 32:
        raise FixtureError(f"timestamp {raw} outside unsigned 32-bit range")
    return raw


def _validate(spec: FixtureSpec) -> None:
    if spec.allocation_block_size <= 0 or spec.allocation_block_size % SECTOR:
        raise FixtureError("allocation block size must be a positive multiple of 512")
    _checked_name(spec.volume_name, MAX_VOLUME_NAME_LEN)
    total_files = 0

    def visit(entries: list) -> None:
        nonlocal total_files
        seen: set[bytes] = set()
        for entry in entries:
            raw = _checked_name(entry.name, MAX_NAME_LEN)
            key = macroman.fold(raw)
            if key in seen:
                raise InvalidName(f"{entry.name!r} collides case-insensitively with a sibling")
            seen.add(key)
            if isinstance(entry, FileSpec):
                total_files += 1
                if len(entry.data) > MAX_FORK_SIZE or len(entry.rsrc) > MAX_FORK_SIZE:
                    raise SpecTooLarge(f"{entry.name!r}: forks are capped at {MAX_FORK_SIZE} bytes")
                _checked_code(entry.type_code)
                _checked_code(entry.creator_code)
                _checked_date(entry.created)
                _checked_date(entry.modified)
            elif isinstance(entry, FolderSpec):
                _checked_date(entry.created)
                _checked_date(entry.modified)
                visit(entry.children)
            else:
                raise TypeError(f"unexpected entry {entry!r}")

    visit(spec.entries)
    if total_files > MAX_FILES:
        raise SpecTooLarge(f"{total_files} files exceed the {MAX_FILES}-file cap")


# B-tree node assembly

def _pack_node(flink: int, blink: int, ntype: int, height: int, records: list[bytes]) -> bytes:
    buf = bytearray(SECTOR)
    left = 14
    right = SECTOR - 2
    for rec in records:
        if left + len(rec) > right - 2:
            raise SpecTooLarge("catalog record does not fit a B-tree node")
        buf[left:left + len(rec)] = rec
        struct.pack_into(">H", buf, right, left)
        left += len(rec)
        right -= 2
    struct.pack_into(">H", buf, right, left)  # free-space offset
    struct.pack_into(">LLBBH", buf, 0, flink, blink, ntype, height, len(records))
    return bytes(buf)


def _node_bitmap(total_bits: int, set_bits: int) -> bytes:
    full, rem = divmod(set_bits, 8)
    out = bytearray(b"\xff" * full)
    if rem:
        out.append((0xFF00 >> rem) & 0xFF)
    out.extend(b"\x00" * ((total_bits + 7) // 8 - len(out)))
    return bytes(out)


def _pack_btree_header(depth: int, root: int, n_recs: int, first: int, last: int,
                       key_len: int, n_nodes: int, free: int, used_nodes: int) -> bytes:
    header = struct.pack(">HLLLLHHLL76x", depth, root, n_recs, first, last,
                         SECTOR, key_len, n_nodes, free)
    return _pack_node(0, 0, 1, 0, [header, bytes(128), _node_bitmap(2048, used_nodes)])


def _empty_extents_tree() -> bytes:
    # Header plus one spare free node; nothing ever overflows here because
    # every fork is allocated contiguously.
    return _pack_btree_header(0, 0, 0, 0, 0, key_len=7, n_nodes=2, free=1, used_nodes=1) + bytes(SECTOR)


# catalog record assembly

def _pack_key(parent_id: int, raw_name: bytes) -> bytes:
    key = struct.pack(">LB", parent_id, len(raw_name)) + raw_name
    rec = bytes((len(key) + 1, 0)) + key
    return rec + b"\x00" if len(rec) & 1 else rec


def _folder_value(valence: int, folder_id: int, created: int, modified: int) -> bytes:
    return struct.pack(">BBHHLLLL16s16s16x", 1, 0, 0, valence, folder_id,
                       created, modified, 0, b"", b"")


def _file_value(file_id: int, type_code: bytes, creator_code: bytes,
                data_len: int, data_ext: tuple[int, int],
                rsrc_len: int, rsrc_ext: tuple[int, int],
                created: int, modified: int, block_size: int) -> bytes:
    finder_info = struct.pack(">4s4sHHH6x", type_code, creator_code, 0, 0, 0)
    d_phys = data_ext[1] * block_size
    r_phys = rsrc_ext[1] * block_size
    d_rec = struct.pack(">6H", data_ext[0], data_ext[1], 0, 0, 0, 0)
    r_rec = struct.pack(">6H", rsrc_ext[0], rsrc_ext[1], 0, 0, 0, 0)
    return struct.pack(">BBBB16sLHLLHLLLLL16sH12s12s4x",
                       2, 0, 0, 0, finder_info, file_id,
                       data_ext[0], data_len, d_phys,
                       rsrc_ext[0], rsrc_len, r_phys,
                       created, modified, 0, b"", 0, d_rec, r_rec)


def _thread_value(is_file: bool, parent_id: int, raw_name: bytes) -> bytes:
    return struct.pack(">BB8xLB31s", 4 if is_file else 3, 0, parent_id,
                       len(raw_name), raw_name)


def build_hfs_image(spec: FixtureSpec, seed: int = 0, *,
                    image_size: int = DEFAULT_IMAGE_SIZE) -> bytes:
    """Emit a well-formed classic-HFS image for the given tree.

    Pure function of (spec, seed, image_size); the seed only shuffles the
    on-disk placement of forks, never the tree itself.
    """
    _validate(spec)
    if image_size % SECTOR or image_size < 32 * 1024:
        raise FixtureError("image size must be a multiple of 512 and at least 32 KiB")
    block_size = spec.allocation_block_size
    vol_raw = _checked_name(spec.volume_name, MAX_VOLUME_NAME_LEN)

    # geometry: 2 boot sectors, 1 MDB sector, bitmap sectors, allocation
    # area, then the alternate MDB sector and one spare sector at the end
    bitmap_sectors = 0
    while (image_size - (5 + bitmap_sectors) * SECTOR) // block_size > bitmap_sectors * SECTOR * 8:
        bitmap_sectors += 1
    n_blocks = (image_size - (5 + bitmap_sectors) * SECTOR) // block_size
    if n_blocks > 0xFFFF:
        raise SpecTooLarge("allocation block count exceeds 16 bits; raise the block size")
    alloc_start = 3 + bitmap_sectors

    # flatten the tree and assign catalog node ids in definition order
    objects: list[tuple[int, int, object, bytes]] = []
    next_id = 16

    def flatten(parent_cnid: int, entries: list) -> None:
        nonlocal next_id
        for entry in entries:
            cnid = next_id
            next_id += 1
            objects.append((cnid, parent_cnid, entry, macroman.encode_name(entry.name)))
            if isinstance(entry, FolderSpec):
                flatten(cnid, entry.children)

    flatten(2, spec.entries)
    child_count = {2: len(spec.entries)}
    for cnid, _parent, entry, _raw in objects:
        if isinstance(entry, FolderSpec):
            child_count[cnid] = len(entry.children)

    # allocate forks contiguously, in seed-shuffled order
    rng = random.Random(seed)
    forks: list[tuple[int, str, bytes]] = []
    for cnid, _parent, entry, _raw in objects:
        if isinstance(entry, FileSpec):
            forks.append((cnid, "data", entry.data))
            forks.append((cnid, "rsrc", entry.rsrc))
    rng.shuffle(forks)

    alloc = bytearray(n_blocks * block_size)
    cursor = 0
    placement: dict[tuple[int, str], tuple[int, int]] = {}

    def place(payload: bytes) -> tuple[int, int]:
        nonlocal cursor
        if not payload:
            return (0, 0)
        blocks = -(-len(payload) // block_size)
        start = cursor
        if (cursor + blocks) > n_blocks:
            raise SpecTooLarge("content does not fit the image")
        alloc[start * block_size:start * block_size + len(payload)] = payload
        cursor += blocks
        return (start, blocks)

    for cnid, fork, payload in forks:
        placement[(cnid, fork)] = place(payload)

    extents_tree = _empty_extents_tree()
    xt_start, xt_blocks = place(extents_tree)

    # catalog records: a main record and a thread record per object
    records: list[tuple[int, bytes, bytes]] = []  # (parent_id, fold key, packed record)

    def add(parent_id: int, raw_name: bytes, value: bytes) -> None:
        records.append((parent_id, macroman.fold(raw_name), _pack_key(parent_id, raw_name) + value))

    add(1, vol_raw, _folder_value(child_count[2], 2, 0, 0))
    add(2, b"", _thread_value(False, 1, vol_raw))
    for cnid, parent, entry, raw in objects:
        if isinstance(entry, FolderSpec):
            add(parent, raw, _folder_value(child_count[cnid], cnid, entry.created, entry.modified))
            add(cnid, b"", _thread_value(False, parent, raw))
        else:
            add(parent, raw, _file_value(
                cnid, _checked_code(entry.type_code), _checked_code(entry.creator_code),
                len(entry.data), placement[(cnid, "data")],
                len(entry.rsrc), placement[(cnid, "rsrc")],
                entry.created, entry.modified, block_size))
            add(cnid, b"", _thread_value(True, parent, raw))
    records.sort(key=lambda r: (r[0], r[1]))

    # pack leaves greedily; every record fits a node on its own
    leaves: list[list[bytes]] = [[]]
    for _parent, _key, rec in records:
        trial = leaves[-1] + [rec]
        if 14 + sum(map(len, trial)) + 2 * (len(trial) + 1) > SECTOR:
            leaves.append([rec])
        else:
            leaves[-1] = trial

    n_leaves = len(leaves)
    catalog_nodes = [_pack_btree_header(1, 1, len(records), 1, n_leaves,
                                        key_len=37, n_nodes=1 + n_leaves, free=0,
                                        used_nodes=1 + n_leaves)]
    for i, recs in enumerate(leaves):
        node = 1 + i
        flink = node + 1 if i < n_leaves - 1 else 0
        blink = node - 1 if i > 0 else 0
        catalog_nodes.append(_pack_node(flink, blink, 0xFF, 1, recs))
    catalog_tree = b"".join(catalog_nodes)
    ct_start, ct_blocks = place(catalog_tree)

    # master directory block
    root_files = sum(isinstance(e, FileSpec) for e in spec.entries)
    root_dirs = sum(isinstance(e, FolderSpec) for e in spec.entries)
    total_files = sum(isinstance(e, FileSpec) for _c, _p, e, _r in objects)
    total_dirs = sum(isinstance(e, FolderSpec) for _c, _p, e, _r in objects)
    mdb = struct.pack(
        _MDB_FMT,
        b"BD", 0, 0, 0x0100, root_files,
        3, cursor, n_blocks, block_size, block_size, alloc_start,
        next_id, n_blocks - cursor, vol_raw, 0, 0,
        0, block_size, block_size, root_dirs, total_files, total_dirs,
        b"", 0, 0, 0,
        len(extents_tree), xt_start, xt_blocks, 0, 0, 0, 0,
        len(catalog_tree), ct_start, ct_blocks, 0, 0, 0, 0)

    image = bytearray(image_size)
    image[MDB_OFFSET:MDB_OFFSET + len(mdb)] = mdb
    bitmap = _node_bitmap(bitmap_sectors * SECTOR * 8, cursor)
    image[3 * SECTOR:3 * SECTOR + len(bitmap)] = bitmap
    image[alloc_start * SECTOR:alloc_start * SECTOR + len(alloc)] = alloc
    image[image_size - 2 * SECTOR:image_size - 2 * SECTOR + len(mdb)] = mdb
    return bytes(image)


def random_spec(seed: int) -> FixtureSpec:
    """Size-bounded random tree, deterministic per seed and always buildable."""
    rng = random.Random(seed)
    spec = FixtureSpec(volume_name=f"Vol {seed % 10000}", entries=[])
    containers: list[tuple[list, int]] = [(spec.entries, 0)]
    used: dict[int, set[bytes]] = {id(spec.entries): set()}

    def fresh_name(container: list) -> str:
        while True:
            n = rng.randint(1, 12)
            name = "".join(rng.choice(_NAME_ALPHABET) for _ in range(n))
            if rng.random() < 0.05 and len(name) > 2:
                name = name[0] + ":" + name[2:]
            if name in (".", ".."):
                continue
            key = macroman.fold(macroman.encode_name(name))
            if key not in used[id(container)]:
                used[id(container)].add(key)
                return name

    for _ in range(rng.randint(0, 6)):
        shallow = [c for c in containers if c[1] <= 2]
        container, depth = rng.choice(shallow)
        folder = FolderSpec(name=fresh_name(container), children=[],
                            created=rng.randrange(2 ** 32), modified=rng.randrange(2 ** 32))
        container.append(folder)
        containers.append((folder.children, depth + 1))
        used[id(folder.children)] = set()

    budget = 3 * 1024 * 1024

    def fork_size() -> int:
        r = rng.random()
        if r < 0.25:
            return 0
        if r < 0.85:
            return rng.randint(1, 2048)
        return rng.randint(2048, MAX_FORK_SIZE)

    for _ in range(rng.randint(0, MAX_FILES)):
        container, _depth = rng.choice(containers)
        d = min(fork_size(), budget)
        budget -= d
        r = min(fork_size(), budget)
        budget -= r
        container.append(FileSpec(
            name=fresh_name(container),
            data=rng.randbytes(d), rsrc=rng.randbytes(r),
            type_code=rng.choice(_TYPE_CODES), creator_code=rng.choice(_CREATOR_CODES),
            created=rng.randrange(2 ** 32), modified=rng.randrange(2 ** 32)))
    return spec


def spec_from_dict(doc: dict) -> FixtureSpec:
    """Build a FixtureSpec from the JSON form used by the debug CLI.

    Fork payloads are given either as text ("data") or base64 ("data_b64").
    """
    def payload(node: dict, key: str) -> bytes:
        if f"{key}_b64" in node:
            return base64.b64decode(node[f"{key}_b64"])
        return node.get(key, "").encode("utf-8")

    def entry(node: dict):
        if node.get("kind") == "folder":
            return FolderSpec(name=node["name"],
                              children=[entry(c) for c in node.get("children", [])],
                              created=node.get("created", 0), modified=node.get("modified", 0))
        return FileSpec(name=node["name"], data=payload(node, "data"), rsrc=payload(node, "rsrc"),
                        type_code=node.get("type_code", "????"),
                        creator_code=node.get("creator_code", "????"),
                        created=node.get("created", 0), modified=node.get("modified", 0))

    return FixtureSpec(volume_name=doc.get("volume_name", "Untitled"),
                       allocation_block_size=doc.get("allocation_block_size", SECTOR),
                       entries=[entry(e) for e in doc.get("entries", [])])
