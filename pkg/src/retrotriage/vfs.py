"""Uniform read-only walking of HFS images and host directory trees.

Resource forks are surfaced through a virtual `.rsrc` folder beside the
files that carry them, so downstream consumers (hashing, extraction) can
treat both forks as ordinary files.  Walks are depth-first and
deterministic: siblings come in byte order of their NFC-normalized names,
and each directory's virtual `.rsrc` group follows its real children.
"""

from __future__ import annotations

import os
import unicodedata
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import hfs

CHUNK = 64 * 1024
RSRC_DIR = ".rsrc"


class VfsError(Exception):
    pass


class UnrecognizedSource(VfsError):
    pass


class Gone(VfsError):
    pass


class IoError(VfsError):
    pass


@dataclass(frozen=True)
class FileEntry:
    relative_path: str  # '/'-separated, "" is the root itself (never emitted)
    name: str
    kind: str  # 'file' | 'folder'
    data_size: int = 0
    rsrc_size: int = 0
    created: datetime | None = None
    modified: datetime | None = None
    accessed: datetime | None = None
    type_code: str | None = None
    creator_code: str | None = None
    origin: str = ""
    virtual_rsrc: bool = False  # entry shadows another file's resource fork


@dataclass(frozen=True)
class WalkError:
    relative_path: str
    message: str
    severity: str = "error"  # 'error' for read failures, 'warning' for advisories


@dataclass(frozen=True)
class WalkOptions:
    skip_zero_size: bool = False
    include_rsrc_projection: bool = False
    follow_depth_limit: int | None = None

    def __post_init__(self):
        if self.follow_depth_limit is not None and self.follow_depth_limit < 1:
            raise ValueError("follow_depth_limit must be >= 1")


class SourceHandle:
    """Read-only handle over one walkable source."""

    def __init__(self, kind: str, origin: str, volume: hfs.Volume | None = None,
                 root: Path | None = None):
        self.kind = kind
        self.origin = origin
        self._volume = volume
        self._root = root

    @property
    def volume(self) -> hfs.Volume | None:
        return self._volume

    def close(self) -> None:
        if self._volume is not None:
            self._volume.close()

    def __enter__(self) -> "SourceHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_source(locator, kind: str = "auto") -> SourceHandle:
    """Open a disk image or a directory tree for walking.

    Auto-detection tries the HFS signature first and falls back to
    requiring a directory.
    """
    if kind not in ("auto", "hfs", "dir"):
        raise ValueError(f"unknown source kind {kind!r}")
    if isinstance(locator, (bytes, bytearray, memoryview)):
        if kind == "dir":
            raise UnrecognizedSource("an in-memory buffer cannot be a directory source")
        try:
            return SourceHandle("hfs", "<memory>", volume=hfs.open_volume(locator))
        except hfs.NotHfs as e:
            raise UnrecognizedSource(str(e)) from e

    path = Path(locator)
    if not path.exists():
        raise IoError(f"{locator}: no such file or directory")
    if kind in ("auto", "hfs") and path.is_file():
        try:
            return SourceHandle("hfs", str(locator), volume=hfs.open_volume(path))
        except hfs.NotHfs as e:
            if kind == "hfs":
                raise UnrecognizedSource(f"{locator}: {e}") from e
        except hfs.Truncated as e:
            if kind == "hfs":
                raise
    if kind in ("auto", "dir") and path.is_dir():
        return SourceHandle("dir", str(locator), root=path)
    raise UnrecognizedSource(f"{locator}: neither an HFS image nor a directory")


def _order_key(name: str) -> bytes:
    return unicodedata.normalize("NFC", name).encode("utf-8")


def _utc(ts: float) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


def _hfs_dt(d: hfs.HfsDate | None) -> datetime | None:
    return None if d is None else hfs.hfs_date_to_timestamp(d)


def walk(src: SourceHandle, opts: WalkOptions | None = None):
    """Deterministic stream of FileEntry and WalkError records.

    Per-entry failures become WalkError records and the walk continues.
    """
    opts = opts or WalkOptions()
    if src.kind == "hfs":
        yield from _hfs_level(src, hfs.ROOT_FOLDER_ID, "", 1, opts)
    else:
        yield from _dir_level(src, src._root, "", 1, opts)


def _hfs_level(src: SourceHandle, folder_id: int, prefix: str, depth: int, opts: WalkOptions):
    if opts.follow_depth_limit is not None and depth > opts.follow_depth_limit:
        return
    vol = src._volume
    try:
        children = sorted(vol.list_children(folder_id), key=lambda r: _order_key(r.name))
    except hfs.HfsError as e:
        yield WalkError(prefix, f"cannot list folder: {e}")
        return

    rsrc_bearing: list[hfs.CatalogRecord] = []
    collision = False
    for child in children:
        rel = f"{prefix}/{child.name}" if prefix else child.name
        if child.name == RSRC_DIR:
            collision = True
        if child.kind == "folder":
            yield FileEntry(rel, child.name, "folder",
                            created=_hfs_dt(child.created), modified=_hfs_dt(child.modified),
                            origin=src.origin)
            yield from _hfs_level(src, child.id, rel, depth + 1, opts)
        else:
            if child.rsrc_size > 0:
                rsrc_bearing.append(child)
            if opts.skip_zero_size and child.data_size == 0:
                continue
            yield FileEntry(rel, child.name, "file", child.data_size, child.rsrc_size,
                            created=_hfs_dt(child.created), modified=_hfs_dt(child.modified),
                            type_code=child.type_code, creator_code=child.creator_code,
                            origin=src.origin)

    if opts.include_rsrc_projection and rsrc_bearing:
        base = f"{prefix}/{RSRC_DIR}" if prefix else RSRC_DIR
        if collision:
            # never shadow real data: a real '.rsrc' wins over the projection
            yield WalkError(base, "real '.rsrc' entry suppresses the resource-fork projection",
                            severity="warning")
            return
        yield FileEntry(base, RSRC_DIR, "folder", origin=src.origin)
        if opts.follow_depth_limit is not None and depth + 1 > opts.follow_depth_limit:
            return
        for f in rsrc_bearing:
            yield FileEntry(f"{base}/{f.name}", f.name, "file", data_size=f.rsrc_size,
                            created=_hfs_dt(f.created), modified=_hfs_dt(f.modified),
                            type_code=f.type_code, creator_code=f.creator_code,
                            origin=src.origin, virtual_rsrc=True)


def _dir_level(src: SourceHandle, dirpath: Path, prefix: str, depth: int, opts: WalkOptions):
    if opts.follow_depth_limit is not None and depth > opts.follow_depth_limit:
        return
    try:
        with os.scandir(dirpath) as it:
            entries = sorted(it, key=lambda e: _order_key(e.name))
    except OSError as e:
        yield WalkError(prefix, f"cannot list directory: {e}")
        return
    for de in entries:
        rel = f"{prefix}/{de.name}" if prefix else de.name
        try:
            if de.is_symlink():
                yield WalkError(rel, "symbolic link skipped", severity="warning")
                continue
            if de.is_dir(follow_symlinks=False):
                st = de.stat(follow_symlinks=False)
                # no accessed time for folders: listing them perturbs it
                yield FileEntry(rel, de.name, "folder",
                                modified=_utc(st.st_mtime), origin=src.origin)
                yield from _dir_level(src, Path(de.path), rel, depth + 1, opts)
            elif de.is_file(follow_symlinks=False):
                st = de.stat(follow_symlinks=False)
                if opts.skip_zero_size and st.st_size == 0:
                    continue
                yield FileEntry(rel, de.name, "file", st.st_size, 0,
                                modified=_utc(st.st_mtime), accessed=_utc(st.st_atime),
                                origin=src.origin)
            else:
                yield WalkError(rel, "special file skipped", severity="warning")
        except OSError as e:
            yield WalkError(rel, str(e))


def read_entry(src: SourceHandle, entry: FileEntry):
    """Byte-chunk iterator over one file entry.

    Ordinary entries stream the data fork; virtual `.rsrc` entries stream
    the resource fork of the file they shadow.  The total delivered always
    equals the entry's advertised size.
    """
    if entry.kind != "file":
        raise ValueError("read_entry requires a file entry")
    if src.kind == "hfs":
        return _read_hfs(src, entry)
    return _read_dir(src, entry)


def _read_hfs(src: SourceHandle, entry: FileEntry):
    vol = src._volume
    parts = entry.relative_path.split("/")
    fork = "data"
    if entry.virtual_rsrc:
        parts = parts[:-2] + [parts[-1]]
        fork = "rsrc"
    try:
        record = vol.lookup("/".join(parts))
    except hfs.HfsError as e:
        raise Gone(f"{entry.relative_path}: {e}") from e
    if record.kind != "file":
        raise Gone(f"{entry.relative_path}: no longer a file")

    def chunks():
        size = record.rsrc_size if fork == "rsrc" else record.data_size
        position = 0
        while position < size:
            try:
                chunk = vol.read_fork(record, fork, position, min(CHUNK, size - position))
            except hfs.HfsError as e:
                raise IoError(f"{entry.relative_path}: {e}") from e
            yield chunk
            position += len(chunk)

    return chunks()


def _read_dir(src: SourceHandle, entry: FileEntry):
    if entry.virtual_rsrc:
        raise Gone(f"{entry.relative_path}: directory sources carry no resource forks")
    path = src._root / entry.relative_path
    try:
        handle = open(path, "rb")
    except FileNotFoundError as e:
        raise Gone(f"{entry.relative_path}: {e}") from e
    except OSError as e:
        raise IoError(f"{entry.relative_path}: {e}") from e

    def chunks():
        remaining = entry.data_size
        with handle:
            while remaining:
                chunk = handle.read(min(CHUNK, remaining))
                if not chunk:
                    raise IoError(f"{entry.relative_path}: file shrank while reading")
                yield chunk
                remaining -= len(chunk)

    return chunks()
