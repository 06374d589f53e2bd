"""Reference fingerprint store for known-file filtering.

Modeled on the NIST reference data sets: operating systems, packages,
deduplicated MD5 fingerprints, and the many-to-many links tying them
together.  The default backend is a single SQLite file; the API keeps the
backend swappable behind the Store surface.  Fingerprint identity is the
pair (md5, size); a SHA-1 column is reserved but optional.
"""

from __future__ import annotations

import csv
import hashlib
import io
import re
import sqlite3
from dataclasses import dataclass, replace
from pathlib import Path

from . import vfs

FORMAT_VERSION = "1"
PACKAGE_KINDS = ("os-baseline", "application")
RDS_COLUMNS = ["MD5", "FileName", "FileSize", "ProductName", "ProductVersion",
               "OpSystemName", "OpSystemVersion", "Language"]

_MD5_RE = re.compile(r"^[0-9a-f]{32}$")

_SCHEMA = """
CREATE TABLE meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE operating_system (
    os_id   INTEGER PRIMARY KEY,
    name    TEXT NOT NULL,
    version TEXT NOT NULL,
    UNIQUE (name, version)
);
CREATE TABLE package (
    package_id INTEGER PRIMARY KEY,
    name       TEXT NOT NULL,
    version    TEXT NOT NULL,
    language   TEXT NOT NULL,
    os_ref     INTEGER NOT NULL REFERENCES operating_system(os_id),
    kind       TEXT NOT NULL CHECK (kind IN ('os-baseline', 'application')),
    UNIQUE (name, version, language, os_ref)
);
CREATE TABLE fingerprint (
    fingerprint_id INTEGER PRIMARY KEY,
    md5  TEXT NOT NULL,
    size INTEGER NOT NULL,
    sha1 TEXT,
    UNIQUE (md5, size)
);
CREATE TABLE package_link (
    package_id     INTEGER NOT NULL REFERENCES package(package_id),
    fingerprint_id INTEGER NOT NULL REFERENCES fingerprint(fingerprint_id),
    filename       TEXT NOT NULL,
    relative_path  TEXT NOT NULL,
    UNIQUE (package_id, fingerprint_id, relative_path)
);
CREATE INDEX link_by_fingerprint ON package_link (fingerprint_id);
CREATE INDEX link_by_package ON package_link (package_id);
"""


class StoreError(Exception):
    pass


class AlreadyExists(StoreError):
    pass


class UnknownOs(StoreError):
    pass


class UnknownPackage(StoreError):
    pass


class EmptyBaseline(StoreError):
    pass


class ParseError(StoreError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class StoreDescriptor:
    name: str
    version_label: str


@dataclass(frozen=True)
class Hit:
    store_name: str
    package_id: int
    package_name: str
    os_name: str
    os_version: str
    filename: str


@dataclass(frozen=True)
class PackageInfo:
    name: str
    version: str
    language: str
    os_name: str
    os_version: str
    kind: str
    fingerprint_count: int


@dataclass
class IngestStats:
    files_seen: int = 0
    fingerprints_inserted: int = 0
    links_created: int = 0
    links_existing: int = 0
    zero_size_skipped: int = 0
    read_errors: int = 0
    suppressed_as_baseline: int = 0


def normalize_md5(md5: str) -> str:
    s = md5.strip().lower()
    if not _MD5_RE.match(s):
        raise ValueError(f"malformed md5 hash: {md5!r}")
    return s


def fingerprint_entry(src: vfs.SourceHandle, entry: vfs.FileEntry) -> tuple[str, int]:
    """MD5 hex digest and byte count of one walked entry's content."""
    digest = hashlib.md5()
    total = 0
    for chunk in vfs.read_entry(src, entry):
        digest.update(chunk)
        total += len(chunk)
    return digest.hexdigest(), total


def init_store(locator, descriptor: StoreDescriptor) -> "Store":
    """Create an empty store file carrying the descriptor."""
    if not descriptor.name:
        raise ValueError("store name must be non-empty")
    path = Path(locator)
    if path.exists():
        raise AlreadyExists(f"{locator}: store already exists")
    conn = sqlite3.connect(path)
    try:
        with conn:
            conn.executescript(_SCHEMA)
            conn.executemany("INSERT INTO meta VALUES (?, ?)", [
                ("format_version", FORMAT_VERSION),
                ("name", descriptor.name),
                ("version_label", descriptor.version_label),
            ])
    except BaseException:
        conn.close()
        path.unlink(missing_ok=True)
        raise
    return Store(conn, str(path), descriptor)


def open_store(locator) -> "Store":
    path = Path(locator)
    if not path.exists():
        raise StoreError(f"{locator}: no such store")
    conn = sqlite3.connect(path)
    try:
        meta = dict(conn.execute("SELECT key, value FROM meta"))
    except sqlite3.Error as e:
        conn.close()
        raise StoreError(f"{locator}: not a fingerprint store ({e})") from e
    if meta.get("format_version") != FORMAT_VERSION:
        conn.close()
        raise StoreError(f"{locator}: unsupported store format {meta.get('format_version')!r}")
    return Store(conn, str(path), StoreDescriptor(meta["name"], meta["version_label"]))


def lookup_md5(stores, md5: str, size: int | None = None) -> list[Hit]:
    """Hits across several stores, grouped in store order."""
    digest = normalize_md5(md5)
    hits: list[Hit] = []
    for store in stores:
        hits.extend(store.lookup(digest, size))
    return hits


class Store:
    """One attached fingerprint store (concurrent readers, single writer)."""

    def __init__(self, conn: sqlite3.Connection, path: str, descriptor: StoreDescriptor):
        self._conn = conn
        self.path = path
        self.descriptor = descriptor

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # administration

    def add_os(self, name: str, version: str) -> int:
        """Insert or fetch an operating system row; idempotent on (name, version)."""
        with self._conn:
            return self._add_os(self._conn.cursor(), name, version)

    def _add_os(self, cur, name: str, version: str) -> int:
        if not name:
            raise ValueError("operating system name must be non-empty")
        row = cur.execute("SELECT os_id FROM operating_system WHERE name=? AND version=?",
                          (name, version)).fetchone()
        if row:
            return row[0]
        return cur.execute("INSERT INTO operating_system (name, version) VALUES (?, ?)",
                           (name, version)).lastrowid

    def add_package(self, name: str, version: str, language: str, os_ref: int,
                    kind: str = "application") -> int:
        """Insert or fetch a package row; idempotent on its uniqueness key."""
        with self._conn:
            return self._add_package(self._conn.cursor(), name, version, language, os_ref, kind)

    def _add_package(self, cur, name, version, language, os_ref, kind) -> int:
        if kind not in PACKAGE_KINDS:
            raise ValueError(f"package kind must be one of {PACKAGE_KINDS}")
        if not cur.execute("SELECT 1 FROM operating_system WHERE os_id=?", (os_ref,)).fetchone():
            raise UnknownOs(f"no operating system with id {os_ref}")
        row = cur.execute(
            "SELECT package_id FROM package WHERE name=? AND version=? AND language=? AND os_ref=?",
            (name, version, language, os_ref)).fetchone()
        if row:
            return row[0]
        return cur.execute(
            "INSERT INTO package (name, version, language, os_ref, kind) VALUES (?, ?, ?, ?, ?)",
            (name, version, language, os_ref, kind)).lastrowid

    # ingestion

    def _package_exists(self, package_id: int) -> bool:
        return bool(self._conn.execute("SELECT 1 FROM package WHERE package_id=?",
                                       (package_id,)).fetchone())

    def _upsert_fingerprint(self, cur, md5: str, size: int) -> tuple[int, int]:
        inserted = cur.execute("INSERT OR IGNORE INTO fingerprint (md5, size) VALUES (?, ?)",
                               (md5, size)).rowcount
        fp_id = cur.execute("SELECT fingerprint_id FROM fingerprint WHERE md5=? AND size=?",
                            (md5, size)).fetchone()[0]
        return fp_id, inserted

    def _linked_md5_sizes(self, package_id: int) -> set[tuple[str, int]]:
        rows = self._conn.execute(
            "SELECT DISTINCT f.md5, f.size FROM fingerprint f "
            "JOIN package_link l ON l.fingerprint_id = f.fingerprint_id "
            "WHERE l.package_id=?", (package_id,))
        return set(rows)

    def ingest_source(self, package_id: int, src: vfs.SourceHandle,
                      opts: vfs.WalkOptions | None = None, *,
                      _suppress: set[tuple[str, int]] | None = None) -> IngestStats:
        """Fingerprint every non-empty file of a source and link it to a package.

        The zero-size exclusion is always in force.  Re-running on the same
        source changes nothing.
        """
        if not self._package_exists(package_id):
            raise UnknownPackage(f"no package with id {package_id}")
        walk_opts = replace(opts or vfs.WalkOptions(), skip_zero_size=False)
        stats = IngestStats()
        cur = self._conn.cursor()
        try:
            for event in vfs.walk(src, walk_opts):
                if isinstance(event, vfs.WalkError):
                    if event.severity == "error":
                        stats.read_errors += 1
                    continue
                if event.kind != "file":
                    continue
                stats.files_seen += 1
                if event.data_size == 0:
                    stats.zero_size_skipped += 1
                    continue
                try:
                    md5, size = fingerprint_entry(src, event)
                except vfs.VfsError:
                    stats.read_errors += 1
                    continue
                if _suppress is not None and (md5, size) in _suppress:
                    stats.suppressed_as_baseline += 1
                    continue
                fp_id, inserted = self._upsert_fingerprint(cur, md5, size)
                stats.fingerprints_inserted += inserted
                created = cur.execute(
                    "INSERT OR IGNORE INTO package_link "
                    "(package_id, fingerprint_id, filename, relative_path) VALUES (?, ?, ?, ?)",
                    (package_id, fp_id, event.name, event.relative_path)).rowcount
                if created:
                    stats.links_created += 1
                else:
                    stats.links_existing += 1
            self._conn.commit()
        except BaseException:
            self._conn.rollback()
            raise
        return stats

    def ingest_diff(self, package_id: int, src: vfs.SourceHandle,
                    baseline_package_id: int,
                    opts: vfs.WalkOptions | None = None) -> IngestStats:
        """Ingest a post-install source, suppressing everything the baseline
        package already links; keeps application link sets disjoint from
        their OS baseline."""
        if not self._package_exists(baseline_package_id):
            raise UnknownPackage(f"no package with id {baseline_package_id}")
        baseline = self._linked_md5_sizes(baseline_package_id)
        if not baseline:
            raise EmptyBaseline(f"package {baseline_package_id} has no fingerprints")
        return self.ingest_source(package_id, src, opts, _suppress=baseline)

    def import_rds(self, source, profile: str = "simple") -> IngestStats:
        """Import a delimited reference set; atomic, rolled back on any error.

        The 'simple' profile is a UTF-8 CSV with a quoted header line whose
        columns are exactly MD5, FileName, FileSize, ProductName,
        ProductVersion, OpSystemName, OpSystemVersion, Language.
        """
        if profile != "simple":
            raise ValueError(f"unknown import profile {profile!r}")
        if isinstance(source, (str, Path)):
            fh = open(source, "r", encoding="utf-8", newline="")
            own = True
        else:
            fh = source
            own = False
        stats = IngestStats()
        cur = self._conn.cursor()
        try:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != RDS_COLUMNS:
                raise ParseError(1, "header must be exactly: " + ",".join(RDS_COLUMNS))
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(RDS_COLUMNS):
                    raise ParseError(lineno, f"expected {len(RDS_COLUMNS)} columns, got {len(row)}")
                md5_raw, filename, size_raw, product, product_version, os_name, os_version, language = row
                try:
                    md5 = normalize_md5(md5_raw)
                except ValueError as e:
                    raise ParseError(lineno, str(e)) from None
                try:
                    size = int(size_raw)
                except ValueError:
                    raise ParseError(lineno, f"malformed file size {size_raw!r}") from None
                if size < 0:
                    raise ParseError(lineno, f"negative file size {size}")
                stats.files_seen += 1
                os_id = self._add_os(cur, os_name, os_version)
                package_id = self._add_package(cur, product, product_version, language,
                                               os_id, "application")
                fp_id, inserted = self._upsert_fingerprint(cur, md5, size)
                stats.fingerprints_inserted += inserted
                created = cur.execute(
                    "INSERT OR IGNORE INTO package_link "
                    "(package_id, fingerprint_id, filename, relative_path) VALUES (?, ?, ?, ?)",
                    (package_id, fp_id, filename, filename)).rowcount
                if created:
                    stats.links_created += 1
                else:
                    stats.links_existing += 1
            self._conn.commit()
        except BaseException:
            self._conn.rollback()
            raise
        finally:
            if own:
                fh.close()
        return stats

    # queries

    def lookup(self, md5: str, size: int | None = None) -> list[Hit]:
        """One hit per distinct (package, filename) link carrying the hash."""
        digest = normalize_md5(md5)
        sql = ("SELECT DISTINCT p.package_id, p.name, o.name, o.version, l.filename "
               "FROM fingerprint f "
               "JOIN package_link l ON l.fingerprint_id = f.fingerprint_id "
               "JOIN package p ON p.package_id = l.package_id "
               "JOIN operating_system o ON o.os_id = p.os_ref "
               "WHERE f.md5 = ?")
        args: list = [digest]
        if size is not None:
            sql += " AND f.size = ?"
            args.append(size)
        sql += " ORDER BY p.package_id, l.filename"
        return [Hit(self.descriptor.name, pid, pname, oname, over, fname)
                for pid, pname, oname, over, fname in self._conn.execute(sql, args)]

    def package_catalog(self) -> dict[int, PackageInfo]:
        """Metadata and distinct-fingerprint counts for every package."""
        rows = self._conn.execute(
            "SELECT p.package_id, p.name, p.version, p.language, o.name, o.version, p.kind,"
            " (SELECT COUNT(DISTINCT l.fingerprint_id) FROM package_link l"
            "  WHERE l.package_id = p.package_id)"
            " FROM package p JOIN operating_system o ON o.os_id = p.os_ref")
        return {pid: PackageInfo(name, version, language, os_name, os_version, kind, n)
                for pid, name, version, language, os_name, os_version, kind, n in rows}

    def counts(self) -> dict[str, int]:
        out = {}
        for label, table in (("operating_systems", "operating_system"),
                             ("packages", "package"),
                             ("fingerprints", "fingerprint"),
                             ("links", "package_link")):
            out[label] = self._conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]
        return out
