"""Match a walked source against fingerprint stores.

Every non-empty file is hashed once and looked up in each attached store;
the outcome aggregates into the three report families: unmatched files,
detected operating systems, and package correspondences.  Two percentages
are kept per package: the displayed occurrence ratio counts matched file
instances and may exceed 100 when the source holds duplicates, while
coverage counts distinct matched fingerprints and never does.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import hashdb, vfs


class NoStores(Exception):
    pass


@dataclass(frozen=True)
class AnalysisConfig:
    source_name: str
    examiner: str
    include_rsrc_projection: bool = False
    parallelism: int = 1
    started_at: datetime | None = None  # pin for reproducible reports

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


@dataclass(frozen=True)
class UnmatchedFile:
    relative_path: str
    size: int
    md5: str


@dataclass(frozen=True)
class OsDetectionRow:
    os_name: str
    os_version: str
    occurrences: int
    store_name: str


@dataclass
class PackageRow:
    package_id: int
    name: str
    version: str
    language: str
    os_name: str
    occurrence_ratio_percent: int
    coverage_percent: int
    occurrences: int
    matched_files: list[str]


@dataclass
class Counters:
    files_walked: int = 0  # file entries, zero-size included
    zero_size_skipped: int = 0
    read_errors: int = 0  # walked file entries whose content could not be read
    matched_instances: int = 0


@dataclass
class AnalysisResult:
    source_name: str
    examiner: str
    started_at: datetime
    databases: list[hashdb.StoreDescriptor]
    unmatched: list[UnmatchedFile]
    os_rows: list[OsDetectionRow]
    package_rows: dict[str, list[PackageRow]]  # store name -> rows, in attach order
    counters: Counters
    error_files: list[tuple[str, str]] = field(default_factory=list)
    walk_errors: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[tuple[str, str]] = field(default_factory=list)


def _percent(numerator: int, denominator: int) -> int:
    # integer percent, halves rounded away from zero
    return math.floor(100 * numerator / denominator + 0.5)


def classify_file(hits_per_store) -> str:
    """'unmatched' iff every attached store returned zero hits."""
    for hits in hits_per_store:
        if isinstance(hits, int):
            n = hits
        elif isinstance(hits, dict):
            n = sum(hits.values())
        else:
            n = len(hits)
        if n:
            return "matched"
    return "unmatched"


class _StoreTally:
    def __init__(self):
        self.package_occurrences: Counter = Counter()
        self.package_fingerprints: dict[int, set] = defaultdict(set)
        self.package_files: dict[int, list[str]] = defaultdict(list)
        self.os_occurrences: Counter = Counter()


def analyze(src: vfs.SourceHandle, stores, config: AnalysisConfig) -> AnalysisResult:
    """Walk, hash and match one source against the attached stores.

    The zero-size exclusion is always in force; ordering of the result
    tables depends only on the data, so any worker count gives identical
    results.
    """
    stores = list(stores)
    if not stores:
        raise NoStores("at least one fingerprint store must be attached")
    started = config.started_at or datetime.now(timezone.utc)

    counters = Counters()
    walk_errors: list[tuple[str, str]] = []
    warnings: list[tuple[str, str]] = []
    entries: list[vfs.FileEntry] = []
    walk_opts = vfs.WalkOptions(skip_zero_size=False,
                                include_rsrc_projection=config.include_rsrc_projection)
    for event in vfs.walk(src, walk_opts):
        if isinstance(event, vfs.WalkError):
            target = warnings if event.severity == "warning" else walk_errors
            target.append((event.relative_path, event.message))
            continue
        if event.kind != "file":
            continue
        counters.files_walked += 1
        if event.data_size == 0:
            counters.zero_size_skipped += 1
            continue
        entries.append(event)

    def job(entry: vfs.FileEntry):
        try:
            return entry, hashdb.fingerprint_entry(src, entry), None
        except vfs.VfsError as e:
            return entry, None, str(e)

    if config.parallelism > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            hashed = list(pool.map(job, entries))
    else:
        hashed = [job(e) for e in entries]

    tallies = {s.descriptor.name: _StoreTally() for s in stores}
    unmatched: list[UnmatchedFile] = []
    error_files: list[tuple[str, str]] = []

    for entry, fingerprint, error in hashed:
        if error is not None:
            counters.read_errors += 1
            error_files.append((entry.relative_path, error))
            continue
        md5, size = fingerprint
        matched = False
        for store in stores:
            hits = store.lookup(md5, size)
            if not hits:
                continue
            matched = True
            tally = tallies[store.descriptor.name]
            packages_seen: set[int] = set()
            os_seen: set[tuple[str, str]] = set()
            for hit in hits:
                tally.package_occurrences[hit.package_id] += 1
                tally.package_fingerprints[hit.package_id].add((md5, size))
                if hit.package_id not in packages_seen:
                    packages_seen.add(hit.package_id)
                    tally.package_files[hit.package_id].append(entry.relative_path)
                os_seen.add((hit.os_name, hit.os_version))
            for os_key in os_seen:  # an instance counts once per OS per store
                tally.os_occurrences[os_key] += 1
        if matched:
            counters.matched_instances += 1
        else:
            unmatched.append(UnmatchedFile(entry.relative_path, size, md5))

    os_rows: list[OsDetectionRow] = []
    package_rows: dict[str, list[PackageRow]] = {}
    for store in stores:
        name = store.descriptor.name
        tally = tallies[name]
        rows = [OsDetectionRow(os_name, os_version, occurrences, name)
                for (os_name, os_version), occurrences in tally.os_occurrences.items()]
        rows.sort(key=lambda r: (-r.occurrences, r.os_name, r.os_version))
        os_rows.extend(rows)

        catalog = store.package_catalog()
        prows = []
        for package_id, occurrences in tally.package_occurrences.items():
            info = catalog[package_id]
            prows.append(PackageRow(
                package_id=package_id, name=info.name, version=info.version,
                language=info.language, os_name=info.os_name,
                occurrence_ratio_percent=_percent(occurrences, info.fingerprint_count),
                coverage_percent=_percent(len(tally.package_fingerprints[package_id]),
                                          info.fingerprint_count),
                occurrences=occurrences,
                matched_files=list(tally.package_files[package_id])))
        prows.sort(key=lambda r: (-r.occurrences, r.name, r.version, r.language))
        package_rows[name] = prows

    non_zero = counters.files_walked - counters.zero_size_skipped
    assert counters.matched_instances + len(unmatched) + counters.read_errors == non_zero

    return AnalysisResult(
        source_name=config.source_name,
        examiner=config.examiner,
        started_at=started,
        databases=[s.descriptor for s in stores],
        unmatched=unmatched,
        os_rows=os_rows,
        package_rows=package_rows,
        counters=counters,
        error_files=error_files,
        walk_errors=walk_errors,
        warnings=warnings)
