"""Command-line interface.

Subcommands cover HFS inspection and extraction, fingerprint-store
administration and ingestion, and full analysis runs.  Diagnostics go to
stderr, machine-readable output to stdout; exit codes are 0 for success,
1 for operational failures, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, fixtures, hashdb, hfs, matcher, report, vfs

ENV_DEFAULT_STORE = "RETRO_TRIAGE_STORE"

_IMAGE_HELP = ("Images are accepted as bare HFS volumes (signature at byte offset 1024) "
               "or preceded by an Apple partition map: when the signature is absent, "
               "512-byte-aligned offsets over the first MiB are scanned for an "
               "Apple_HFS partition entry.")


def _fmt_date(d: hfs.HfsDate | None) -> str:
    if d is None:
        return "-"
    return hfs.hfs_date_to_timestamp(d).strftime("%Y-%m-%dT%H:%M:%SZ")


def _ls_line(rec: hfs.CatalogRecord) -> str:
    if rec.kind == "folder":
        return f"d ----/---- {0:>10} {0:>10} {_fmt_date(rec.modified)} {rec.name}"
    return (f"f {rec.type_code}/{rec.creator_code} {rec.data_size:>10} "
            f"{rec.rsrc_size:>10} {_fmt_date(rec.modified)} {rec.name}")


def cmd_hfs_ls(args) -> int:
    with hfs.open_volume(args.image) as vol:
        rec = vol.lookup(args.path)
        rows = vol.list_children(rec.id) if rec.kind == "folder" else [rec]
        for r in rows:
            print(_ls_line(r))
    return 0


def cmd_hfs_tree(args) -> int:
    with hfs.open_volume(args.image) as vol:
        print(f"{vol.volume_name}/")

        def descend(folder_id: int, indent: int) -> None:
            for child in vol.list_children(folder_id):
                suffix = "/" if child.kind == "folder" else ""
                print(f"{'  ' * indent}{child.name}{suffix}")
                if child.kind == "folder":
                    descend(child.id, indent + 1)

        descend(hfs.ROOT_FOLDER_ID, 1)
    return 0


def cmd_hfs_cat(args) -> int:
    with hfs.open_volume(args.image) as vol:
        rec = vol.lookup(args.path)
        if rec.kind != "file":
            print(f"error: {args.path} is a folder", file=sys.stderr)
            return 1
        size = rec.data_size if args.fork == "data" else rec.rsrc_size
        position = 0
        while position < size:
            chunk = vol.read_fork(rec, args.fork, position, min(vfs.CHUNK, size - position))
            sys.stdout.buffer.write(chunk)
            position += len(chunk)
        sys.stdout.buffer.flush()
    return 0


def cmd_hfs_extract(args) -> int:
    out_root = Path(args.outdir)
    out_root.mkdir(parents=True, exist_ok=True)
    files = folders = 0
    with vfs.open_source(args.image, kind="hfs") as src:
        opts = vfs.WalkOptions(include_rsrc_projection=args.rsrc)
        for event in vfs.walk(src, opts):
            if isinstance(event, vfs.WalkError):
                print(f"warning: {event.relative_path}: {event.message}", file=sys.stderr)
                continue
            if any(part in (".", "..") for part in event.relative_path.split("/")):
                print(f"warning: {event.relative_path}: unsafe name skipped", file=sys.stderr)
                continue
            target = out_root / event.relative_path
            if event.kind == "folder":
                target.mkdir(parents=True, exist_ok=True)
                folders += 1
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "wb") as fh:
                for chunk in vfs.read_entry(src, event):
                    fh.write(chunk)
            files += 1
    print(f"files: {files}")
    print(f"folders: {folders}")
    return 0


def _print_stats(stats: hashdb.IngestStats, diff: bool = False) -> None:
    print(f"files_seen: {stats.files_seen}")
    print(f"fingerprints_inserted: {stats.fingerprints_inserted}")
    print(f"links_created: {stats.links_created}")
    print(f"links_existing: {stats.links_existing}")
    print(f"zero_size_skipped: {stats.zero_size_skipped}")
    print(f"read_errors: {stats.read_errors}")
    if diff:
        print(f"suppressed_as_baseline: {stats.suppressed_as_baseline}")


def cmd_db_init(args) -> int:
    with hashdb.init_store(args.store, hashdb.StoreDescriptor(args.name, args.version_label)) as store:
        print(f"name: {store.descriptor.name}")
        print(f"version_label: {store.descriptor.version_label}")
    return 0


def cmd_db_info(args) -> int:
    with hashdb.open_store(args.store) as store:
        print(f"name: {store.descriptor.name}")
        print(f"version_label: {store.descriptor.version_label}")
        for key, value in store.counts().items():
            print(f"{key}: {value}")
    return 0


def cmd_db_add_os(args) -> int:
    with hashdb.open_store(args.store) as store:
        print(f"os_id: {store.add_os(args.name, args.version)}")
    return 0


def cmd_db_add_package(args) -> int:
    with hashdb.open_store(args.store) as store:
        package_id = store.add_package(args.name, args.version, args.language,
                                       args.os, args.kind)
        print(f"package_id: {package_id}")
    return 0


def cmd_db_ingest(args) -> int:
    with hashdb.open_store(args.store) as store, vfs.open_source(args.source) as src:
        opts = vfs.WalkOptions(include_rsrc_projection=args.rsrc)
        stats = store.ingest_source(args.package, src, opts)
        _print_stats(stats)
    return 0


def cmd_db_ingest_diff(args) -> int:
    with hashdb.open_store(args.store) as store, vfs.open_source(args.source) as src:
        opts = vfs.WalkOptions(include_rsrc_projection=args.rsrc)
        stats = store.ingest_diff(args.package, src, args.baseline, opts)
        _print_stats(stats, diff=True)
    return 0


def cmd_db_import_rds(args) -> int:
    with hashdb.open_store(args.store) as store:
        stats = store.import_rds(args.csv)
        _print_stats(stats)
    return 0


def _parse_timestamp(value: str) -> datetime:
    dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def cmd_analyze(args) -> int:
    store_paths = list(args.db or [])
    if not store_paths:
        env = os.environ.get(ENV_DEFAULT_STORE)
        if env:
            store_paths = [env]
    if not store_paths:
        args._parser.error(f"analyze requires at least one --db (or {ENV_DEFAULT_STORE})")

    stores = []
    try:
        for path in store_paths:
            stores.append(hashdb.open_store(path))
        with vfs.open_source(args.source) as src:
            config = matcher.AnalysisConfig(
                source_name=args.source_name,
                examiner=args.examiner,
                include_rsrc_projection=args.rsrc,
                parallelism=args.jobs,
                started_at=_parse_timestamp(args.timestamp) if args.timestamp else None)
            result = matcher.analyze(src, stores, config)
    finally:
        for store in stores:
            store.close()

    out = Path(args.out)
    report.write_report(result, out, page_size=args.page_size)
    print(f"files_walked: {result.counters.files_walked}")
    print(f"zero_size_skipped: {result.counters.zero_size_skipped}")
    print(f"read_errors: {result.counters.read_errors}")
    print(f"matched_instances: {result.counters.matched_instances}")
    print(f"unmatched: {len(result.unmatched)}")
    print(f"report_json: {out / 'report.json'}")
    print(f"report_html: {out / 'report.html'}")
    return 0


def cmd_fixtures_build(args) -> int:
    doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    spec = fixtures.spec_from_dict(doc)
    image = fixtures.build_hfs_image(spec, seed=args.seed)
    Path(args.out).write_bytes(image)
    print(f"image: {args.out}")
    print(f"bytes: {len(image)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retro-triage",
        description="Triage toolkit for classic Mac disk images: read HFS volumes "
                    "and their resource forks, maintain known-file fingerprint stores, "
                    "and separate user files from system and application files.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_hfs = sub.add_parser("hfs", help="inspect and extract classic HFS disk images",
                           epilog=_IMAGE_HELP)
    hfs_sub = p_hfs.add_subparsers(dest="hfs_command", required=True)

    p = hfs_sub.add_parser("ls", help="list a folder", epilog=_IMAGE_HELP)
    p.add_argument("image")
    p.add_argument("path", nargs="?", default="/")
    p.set_defaults(func=cmd_hfs_ls)

    p = hfs_sub.add_parser("tree", help="print the whole tree")
    p.add_argument("image")
    p.set_defaults(func=cmd_hfs_tree)

    p = hfs_sub.add_parser("cat", help="write one fork to stdout")
    p.add_argument("image")
    p.add_argument("path")
    p.add_argument("--fork", choices=("data", "rsrc"), default="data")
    p.set_defaults(func=cmd_hfs_cat)

    p = hfs_sub.add_parser("extract", help="materialize the tree into a directory")
    p.add_argument("image")
    p.add_argument("outdir")
    p.add_argument("--rsrc", action="store_true",
                   help="also write resource forks under .rsrc/ directories")
    p.set_defaults(func=cmd_hfs_extract)

    p_db = sub.add_parser("db", help="administer fingerprint stores")
    db_sub = p_db.add_subparsers(dest="db_command", required=True)

    p = db_sub.add_parser("init", help="create an empty store")
    p.add_argument("store")
    p.add_argument("--name", required=True)
    p.add_argument("--version-label", required=True)
    p.set_defaults(func=cmd_db_init)

    p = db_sub.add_parser("info", help="print descriptor and row counts")
    p.add_argument("store")
    p.set_defaults(func=cmd_db_info)

    p = db_sub.add_parser("add-os", help="register an operating system")
    p.add_argument("store")
    p.add_argument("--name", required=True)
    p.add_argument("--version", required=True)
    p.set_defaults(func=cmd_db_add_os)

    p = db_sub.add_parser("add-package", help="register a package")
    p.add_argument("store")
    p.add_argument("--name", required=True)
    p.add_argument("--version", required=True)
    p.add_argument("--language", default="")
    p.add_argument("--os", type=int, required=True, help="os_id the package belongs to")
    p.add_argument("--kind", choices=hashdb.PACKAGE_KINDS, default="application")
    p.set_defaults(func=cmd_db_add_package)

    p = db_sub.add_parser("ingest", help="fingerprint a source into a package")
    p.add_argument("store")
    p.add_argument("source", help="disk image or directory")
    p.add_argument("--package", type=int, required=True)
    p.add_argument("--rsrc", action="store_true",
                   help="also fingerprint resource forks via the .rsrc projection")
    p.set_defaults(func=cmd_db_ingest)

    p = db_sub.add_parser("ingest-diff",
                          help="ingest a post-install source minus a baseline package")
    p.add_argument("store")
    p.add_argument("source")
    p.add_argument("--package", type=int, required=True)
    p.add_argument("--baseline", type=int, required=True)
    p.add_argument("--rsrc", action="store_true")
    p.set_defaults(func=cmd_db_ingest_diff)

    p = db_sub.add_parser("import-rds", help="import a delimited reference set")
    p.add_argument("store")
    p.add_argument("csv")
    p.set_defaults(func=cmd_db_import_rds)

    p = sub.add_parser("analyze",
                       help="match a source against stores and write report.json/report.html")
    p.add_argument("source", help="disk image or directory")
    p.add_argument("--db", action="append",
                   help=f"fingerprint store, repeatable; defaults to ${ENV_DEFAULT_STORE}")
    p.add_argument("--source-name", required=True)
    p.add_argument("--examiner", required=True)
    p.add_argument("--out", required=True, help="output directory for the report files")
    p.add_argument("--page-size", type=int, default=report.DEFAULT_PAGE_SIZE)
    p.add_argument("--jobs", type=int, default=1, help="hashing worker count")
    p.add_argument("--rsrc", action="store_true",
                   help="include resource forks via the .rsrc projection")
    p.add_argument("--timestamp", help=argparse.SUPPRESS)  # pin started_at, for reproducible output
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fixtures")  # debug helper, hidden from the top-level help
    fx_sub = p.add_subparsers(dest="fixtures_command", required=True)
    p = fx_sub.add_parser("build", help="build an HFS image from a JSON tree spec")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixtures_build)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._parser = parser
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (hfs.HfsError, vfs.VfsError, hashdb.StoreError, fixtures.FixtureError,
            matcher.NoStores, OSError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
