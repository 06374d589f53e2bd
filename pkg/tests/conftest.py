"""Shared fixtures and the naive recount oracle used by matcher tests."""

import hashlib
import random
import sqlite3

import pytest

from retrotriage import fixtures


def small_spec() -> fixtures.FixtureSpec:
    return fixtures.FixtureSpec(volume_name="TestVol", entries=[
        fixtures.FileSpec("letter", data=b"hello", rsrc=b"xyz",
                          type_code="TEXT", creator_code="ttxt",
                          created=100, modified=2082844800),
        fixtures.FileSpec("empty"),
        fixtures.FolderSpec("Docs", children=[
            fixtures.FileSpec("letter", data=b"nested letter", rsrc=b""),
            fixtures.FileSpec("résumé", data=b"cv", rsrc=b"fork",
                              type_code="WDBN", creator_code="MSWD"),
        ], created=5, modified=6),
    ])


@pytest.fixture
def small_image() -> bytes:
    return fixtures.build_hfs_image(small_spec(), seed=7)


def make_tree(root, files: dict) -> None:
    """Materialize {relative_path: bytes} under a directory."""
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(content)


def md5_hex(data: bytes) -> str:
    return hashlib.md5(data).hexdigest()


# Naive recount oracle: reads the raw store tables with its own sqlite
# connection and recomputes the three report families with plain loops.

def load_store_dump(store_path):
    conn = sqlite3.connect(store_path)
    try:
        name = dict(conn.execute("SELECT key, value FROM meta"))["name"]
        packages = {
            pid: (pname, pver, lang, os_name, os_version)
            for pid, pname, pver, lang, os_name, os_version in conn.execute(
                "SELECT p.package_id, p.name, p.version, p.language, o.name, o.version "
                "FROM package p JOIN operating_system o ON o.os_id = p.os_ref")
        }
        links = list(conn.execute(
            "SELECT l.package_id, f.md5, f.size, l.filename "
            "FROM package_link l JOIN fingerprint f "
            "ON f.fingerprint_id = l.fingerprint_id"))
    finally:
        conn.close()
    return name, packages, links


def naive_recount(store_paths, instances):
    """Brute-force recomputation of the analysis tables.

    instances: [(relative_path, md5, size)] of non-empty files in walk order.
    Returns (unmatched, os_rows, package_rows) as plain tuples comparable to
    the production result.
    """
    dumps = [load_store_dump(p) for p in store_paths]

    unmatched = []
    per_store = {name: {"os": {}, "pkg_occ": {}, "pkg_fps": {}, "pkg_files": {}}
                 for name, _p, _l in dumps}
    for path, md5, size in instances:
        matched = False
        for name, packages, links in dumps:
            hits = sorted({(pid, fname) for pid, lmd5, lsize, fname in links
                           if lmd5 == md5 and lsize == size})
            if not hits:
                continue
            matched = True
            state = per_store[name]
            seen_pkg = set()
            seen_os = set()
            for pid, _fname in hits:
                state["pkg_occ"][pid] = state["pkg_occ"].get(pid, 0) + 1
                state["pkg_fps"].setdefault(pid, set()).add((md5, size))
                if pid not in seen_pkg:
                    seen_pkg.add(pid)
                    state["pkg_files"].setdefault(pid, []).append(path)
                seen_os.add(packages[pid][3:5])
            for os_key in seen_os:
                state["os"][os_key] = state["os"].get(os_key, 0) + 1
        if not matched:
            unmatched.append((path, size, md5))

    def pct(n, d):
        import math
        return math.floor(100 * n / d + 0.5)

    os_rows = []
    package_rows = {}
    for name, packages, links in dumps:
        state = per_store[name]
        rows = [(osn, osv, occ, name) for (osn, osv), occ in state["os"].items()]
        rows.sort(key=lambda r: (-r[2], r[0], r[1]))
        os_rows.extend(rows)
        fp_counts = {}
        for pid, lmd5, lsize, _f in links:
            fp_counts.setdefault(pid, set()).add((lmd5, lsize))
        prows = []
        for pid, occ in state["pkg_occ"].items():
            pname, pver, lang, osn, _osv = packages[pid]
            total = len(fp_counts[pid])
            prows.append((pid, pname, pver, lang, osn,
                          pct(occ, total), pct(len(state["pkg_fps"][pid]), total),
                          occ, tuple(state["pkg_files"][pid])))
        prows.sort(key=lambda r: (-r[7], r[1], r[2], r[3]))
        package_rows[name] = prows
    return unmatched, os_rows, package_rows


def result_tables(result):
    """Flatten an AnalysisResult into the oracle's plain-tuple shape."""
    unmatched = [(u.relative_path, u.size, u.md5) for u in result.unmatched]
    os_rows = [(r.os_name, r.os_version, r.occurrences, r.store_name)
               for r in result.os_rows]
    package_rows = {
        store: [(r.package_id, r.name, r.version, r.language, r.os_name,
                 r.occurrence_ratio_percent, r.coverage_percent, r.occurrences,
                 tuple(r.matched_files)) for r in rows]
        for store, rows in result.package_rows.items()
    }
    return unmatched, os_rows, package_rows


def synth_pair(tmp_path, seed: int):
    """One seeded synthetic (stores, source dir) pair, <= 200 files."""
    from retrotriage import hashdb

    rng = random.Random(seed)
    src_dir = tmp_path / f"src{seed}"
    src_dir.mkdir()

    pool = [rng.randbytes(rng.randint(1, 200)) for _ in range(rng.randint(4, 40))]
    n_files = rng.randint(1, 200)
    subdirs = ["", "sub", "sub/deep", "other"]
    for i in range(n_files):
        rel = f"{rng.choice(subdirs)}/f{i:03d}".lstrip("/")
        content = rng.choice(pool) if rng.random() < 0.8 else rng.randbytes(rng.randint(1, 64))
        if rng.random() < 0.05:
            content = b""
        path = src_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(content)

    store_paths = []
    for s in range(rng.randint(1, 2)):
        sp = tmp_path / f"store{seed}_{s}.db"
        store = hashdb.init_store(sp, hashdb.StoreDescriptor(f"store{s}", f"v{seed}"))
        os_ids = [store.add_os(f"OS {o}", f"{o}.0") for o in range(1, rng.randint(2, 4))]
        pkg_ids = []
        for p in range(rng.randint(1, 4)):
            pkg_ids.append(store.add_package(
                f"Pkg {p}", "1.0", "French", rng.choice(os_ids),
                "os-baseline" if p == 0 else "application"))
        conn = sqlite3.connect(sp)
        with conn:
            for content in pool:
                if rng.random() < 0.6:
                    continue
                md5, size = md5_hex(content), len(content)
                conn.execute("INSERT OR IGNORE INTO fingerprint (md5, size) VALUES (?, ?)",
                             (md5, size))
                fp = conn.execute("SELECT fingerprint_id FROM fingerprint "
                                  "WHERE md5=? AND size=?", (md5, size)).fetchone()[0]
                for pid in pkg_ids:
                    if rng.random() < 0.5:
                        conn.execute(
                            "INSERT OR IGNORE INTO package_link VALUES (?, ?, ?, ?)",
                            (pid, fp, f"name{fp}", f"path/name{fp}"))
                        if rng.random() < 0.2:  # a second filename for the same pair
                            conn.execute(
                                "INSERT OR IGNORE INTO package_link VALUES (?, ?, ?, ?)",
                                (pid, fp, f"alt{fp}", f"alt/name{fp}"))
            # unrelated fingerprints never present on the source
            for j in range(rng.randint(0, 30)):
                filler = md5_hex(b"filler%d-%d" % (seed, j))
                conn.execute("INSERT OR IGNORE INTO fingerprint (md5, size) VALUES (?, ?)",
                             (filler, 10_000 + j))
                fp = conn.execute("SELECT fingerprint_id FROM fingerprint "
                                  "WHERE md5=? AND size=?", (filler, 10_000 + j)).fetchone()[0]
                conn.execute("INSERT OR IGNORE INTO package_link VALUES (?, ?, ?, ?)",
                             (rng.choice(pkg_ids), fp, f"ghost{j}", f"ghost/{j}"))
        conn.close()
        store.close()
        store_paths.append(sp)
    return store_paths, src_dir
