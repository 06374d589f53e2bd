"""Store tests: persistence, idempotent ingestion, diff, lookup, RDS import."""

import io
import sqlite3

import pytest

from conftest import make_tree
from retrotriage import fixtures, hashdb, vfs
from retrotriage.hashdb import StoreDescriptor

# frozen with the coreutils md5sum tool
ALPHA_MD5 = "9f9f90dbe3e5ee1218c86b8839db1995"  # b"alpha\n"
BETA_MD5 = "f0cf2a92516045024a0c99147b28f05b"   # b"beta\n"
GAMMA_MD5 = "303febb9068384eca46b5b6516843b35"  # b"gamma\n"

# RFC 1321 appendix test suite
RFC1321_VECTORS = [
    (b"", "d41d8cd98f00b204e9800998ecf8427e"),
    (b"a", "0cc175b9c0f1b6a831c399e269772661"),
    (b"abc", "900150983cd24fb0d6963f7d28e17f72"),
    (b"message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
    (b"abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
    (b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
     "d174ab98d277d9f5a5611c2c9f419d9f"),
    (b"1234567890" * 8, "57edf4a22be3c955ac49da2e2107b67a"),
]


@pytest.fixture
def store(tmp_path):
    with hashdb.init_store(tmp_path / "s.db", StoreDescriptor("hashdb_mac", "2025.04.25")) as s:
        yield s


def test_init_then_reopen_preserves_descriptor(tmp_path):
    path = tmp_path / "s.db"
    created = hashdb.init_store(path, StoreDescriptor("hashdb_mac",
                                                      "2025.04.25 - GREYC-mac_os_6_to_10"))
    created.close()
    with hashdb.open_store(path) as reopened:
        assert reopened.descriptor == StoreDescriptor("hashdb_mac",
                                                      "2025.04.25 - GREYC-mac_os_6_to_10")


def test_init_twice_raises(tmp_path):
    path = tmp_path / "s.db"
    hashdb.init_store(path, StoreDescriptor("a", "1")).close()
    with pytest.raises(hashdb.AlreadyExists):
        hashdb.init_store(path, StoreDescriptor("a", "1"))


def test_init_empty_name_rejected(tmp_path):
    with pytest.raises(ValueError):
        hashdb.init_store(tmp_path / "s.db", StoreDescriptor("", "1"))


def test_open_missing_store(tmp_path):
    with pytest.raises(hashdb.StoreError):
        hashdb.open_store(tmp_path / "absent.db")


def test_add_os_idempotent(store):
    first = store.add_os("Mac OS X Tiger", "10.4")
    assert store.add_os("Mac OS X Tiger", "10.4") == first
    assert store.add_os("Mac OS X Tiger", "10.3") != first


def test_add_package_idempotent_and_unknown_os(store):
    os_id = store.add_os("Mac OS 9", "9.0.5")
    pid = store.add_package("StuffIt Deluxe", "11", "French", os_id, "application")
    assert store.add_package("StuffIt Deluxe", "11", "French", os_id, "application") == pid
    with pytest.raises(hashdb.UnknownOs):
        store.add_package("Lost", "1", "French", 999)
    with pytest.raises(ValueError):
        store.add_package("Bad", "1", "French", os_id, kind="mystery")


def _dir_source(tmp_path):
    src_dir = tmp_path / "tree"
    make_tree(src_dir, {"alpha.txt": b"alpha\n", "beta.txt": b"beta\n",
                        "sub/gamma.txt": b"gamma\n"})
    return vfs.open_source(src_dir)


def test_ingest_source_against_md5sum_oracle(store, tmp_path):
    os_id = store.add_os("OS", "1")
    pid = store.add_package("Base", "1", "French", os_id, "os-baseline")
    with _dir_source(tmp_path) as src:
        stats = store.ingest_source(pid, src)
    assert stats.files_seen == 3
    assert stats.fingerprints_inserted == 3
    assert stats.links_created == 3
    for md5, size, name in [(ALPHA_MD5, 6, "alpha.txt"), (BETA_MD5, 5, "beta.txt"),
                            (GAMMA_MD5, 6, "gamma.txt")]:
        hits = store.lookup(md5, size)
        assert [h.filename for h in hits] == [name]
        assert hits[0].store_name == "hashdb_mac"


def test_reingest_is_idempotent(store, tmp_path):
    os_id = store.add_os("OS", "1")
    pid = store.add_package("Base", "1", "French", os_id, "os-baseline")
    with _dir_source(tmp_path) as src:
        store.ingest_source(pid, src)
        again = store.ingest_source(pid, src)
    assert again.fingerprints_inserted == 0
    assert again.links_created == 0
    assert again.links_existing == 3
    assert store.counts() == {"operating_systems": 1, "packages": 1,
                              "fingerprints": 3, "links": 3}


def test_ingest_skips_zero_size_even_when_asked_not_to(store, tmp_path):
    src_dir = tmp_path / "z"
    make_tree(src_dir, {"empty": b"", "full": b"x"})
    os_id = store.add_os("OS", "1")
    pid = store.add_package("P", "1", "", os_id)
    with vfs.open_source(src_dir) as src:
        stats = store.ingest_source(pid, src, vfs.WalkOptions(skip_zero_size=False))
    assert stats.zero_size_skipped == 1
    assert stats.links_created == 1


def test_ingest_unknown_package(store, tmp_path):
    with _dir_source(tmp_path) as src:
        with pytest.raises(hashdb.UnknownPackage):
            store.ingest_source(42, src)


def test_ingest_hfs_source_with_projection(store):
    spec = fixtures.FixtureSpec(volume_name="V", entries=[
        fixtures.FileSpec("f", data=b"data!", rsrc=b"fork!")])
    os_id = store.add_os("OS", "1")
    pid = store.add_package("P", "1", "", os_id)
    with vfs.open_source(fixtures.build_hfs_image(spec)) as src:
        stats = store.ingest_source(pid, src, vfs.WalkOptions(include_rsrc_projection=True))
    # the data fork and the projected resource fork are two fingerprints
    assert stats.files_seen == 2
    assert stats.links_created == 2


def test_ingest_diff_disjoint(store, tmp_path):
    base_dir = tmp_path / "base"
    make_tree(base_dir, {"h1": b"one", "h2": b"two"})
    post_dir = tmp_path / "post"
    make_tree(post_dir, {"h1": b"one", "h2": b"two", "h3": b"three"})
    os_id = store.add_os("OS", "1")
    base_pid = store.add_package("Base", "1", "", os_id, "os-baseline")
    app_pid = store.add_package("App", "1", "", os_id, "application")
    with vfs.open_source(base_dir) as src:
        store.ingest_source(base_pid, src)
    with vfs.open_source(post_dir) as src:
        stats = store.ingest_diff(app_pid, src, base_pid)
    assert stats.suppressed_as_baseline == 2
    assert stats.links_created == 1
    assert store._linked_md5_sizes(app_pid).isdisjoint(store._linked_md5_sizes(base_pid))


def test_ingest_diff_identical_source(store, tmp_path):
    base_dir = tmp_path / "base"
    make_tree(base_dir, {"h1": b"one"})
    os_id = store.add_os("OS", "1")
    base_pid = store.add_package("Base", "1", "", os_id, "os-baseline")
    app_pid = store.add_package("App", "1", "", os_id)
    with vfs.open_source(base_dir) as src:
        store.ingest_source(base_pid, src)
        stats = store.ingest_diff(app_pid, src, base_pid)
    assert stats.links_created == 0
    assert stats.suppressed_as_baseline == 1


def test_ingest_diff_empty_baseline(store, tmp_path):
    os_id = store.add_os("OS", "1")
    base_pid = store.add_package("Base", "1", "", os_id, "os-baseline")
    app_pid = store.add_package("App", "1", "", os_id)
    with _dir_source(tmp_path) as src:
        with pytest.raises(hashdb.EmptyBaseline):
            store.ingest_diff(app_pid, src, base_pid)


def test_lookup_multiplicity_three_packages(store, tmp_path):
    src_dir = tmp_path / "shared"
    make_tree(src_dir, {"Font.ttf": b"fontbytes"})
    os_id = store.add_os("Mac OS X Tiger", "10.4")
    pids = [store.add_package(f"Pkg{i}", "1", "French", os_id) for i in range(3)]
    with vfs.open_source(src_dir) as src:
        for pid in pids:
            store.ingest_source(pid, src)
    md5 = hashdb.fingerprint_entry(
        vfs.open_source(src_dir),
        next(e for e in vfs.walk(vfs.open_source(src_dir)) if e.kind == "file"))[0]
    hits = store.lookup(md5)
    assert len(hits) == 3  # one hit per matching package link
    assert sorted(h.package_name for h in hits) == ["Pkg0", "Pkg1", "Pkg2"]
    assert store.counts()["fingerprints"] == 1  # stored once, linked thrice


def test_lookup_across_two_stores(tmp_path):
    src_dir = tmp_path / "t"
    make_tree(src_dir, {"f": b"shared"})
    paths = []
    for name in ("hashdb", "hashdb_mac"):
        path = tmp_path / f"{name}.db"
        with hashdb.init_store(path, StoreDescriptor(name, "v")) as s:
            pid = s.add_package("P", "1", "", s.add_os("OS", "1"))
            with vfs.open_source(src_dir) as src:
                s.ingest_source(pid, src)
        paths.append(path)
    stores = [hashdb.open_store(p) for p in paths]
    try:
        with vfs.open_source(src_dir) as src:
            entry = next(e for e in vfs.walk(src) if e.kind == "file")
            md5, size = hashdb.fingerprint_entry(src, entry)
        hits = hashdb.lookup_md5(stores, md5, size)
        assert [h.store_name for h in hits] == ["hashdb", "hashdb_mac"]
        assert hashdb.lookup_md5(stores, "0" * 32) == []
    finally:
        for s in stores:
            s.close()


def test_lookup_rejects_malformed_hash(store):
    for bad in ("xyz", "g" * 32, "a" * 31, ""):
        with pytest.raises(ValueError):
            store.lookup(bad)


def test_md5_reference_vectors():
    import hashlib
    for message, expected in RFC1321_VECTORS:
        assert hashlib.md5(message).hexdigest() == expected


def _rds(text: str) -> io.StringIO:
    return io.StringIO(text)


RDS_HEADER = ('"MD5","FileName","FileSize","ProductName","ProductVersion",'
              '"OpSystemName","OpSystemVersion","Language"\n')


def test_import_rds_basic(store):
    stats = store.import_rds(_rds(
        RDS_HEADER
        + f'"{ALPHA_MD5}","alpha.txt","6","Adobe Acrobat","6.0","Mac OS X Tiger","10.4","French"\n'
        + f'"{BETA_MD5}","beta.txt","5","Adobe Acrobat","6.0","Mac OS X Tiger","10.4","French"\n'))
    assert stats.fingerprints_inserted == 2
    assert store.counts() == {"operating_systems": 1, "packages": 1,
                              "fingerprints": 2, "links": 2}
    hits = store.lookup(ALPHA_MD5, 6)
    assert hits[0].package_name == "Adobe Acrobat"
    assert hits[0].os_name == "Mac OS X Tiger"


def test_import_rds_duplicate_hash_two_filenames(store):
    stats = store.import_rds(_rds(
        RDS_HEADER
        + f'"{ALPHA_MD5}","one","6","P","1","O","1","en"\n'
        + f'"{ALPHA_MD5}","two","6","P","1","O","1","en"\n'))
    assert stats.fingerprints_inserted == 1
    assert stats.links_created == 2
    assert len(store.lookup(ALPHA_MD5)) == 2


def test_import_rds_parse_error_rolls_back(store, tmp_path):
    body = RDS_HEADER
    for i in range(3):
        body += f'"{ALPHA_MD5[:-1]}{i}","f{i}","1","P","1","O","1","en"\n'
    body += '"NOT A HASH","f5","1","P","1","O","1","en"\n'
    with pytest.raises(hashdb.ParseError) as exc_info:
        store.import_rds(_rds(body))
    assert exc_info.value.line == 5
    assert store.counts() == {"operating_systems": 0, "packages": 0,
                              "fingerprints": 0, "links": 0}


def test_import_rds_bad_header(store):
    with pytest.raises(hashdb.ParseError) as exc_info:
        store.import_rds(_rds('"MD5","Nope"\n'))
    assert exc_info.value.line == 1


def test_import_rds_bad_size(store):
    with pytest.raises(hashdb.ParseError) as exc_info:
        store.import_rds(_rds(RDS_HEADER + f'"{ALPHA_MD5}","f","many","P","1","O","1","en"\n'))
    assert exc_info.value.line == 2


def test_import_rds_uppercase_hash_normalized(store):
    store.import_rds(_rds(RDS_HEADER
                          + f'"{ALPHA_MD5.upper()}","f","6","P","1","O","1","en"\n'))
    assert len(store.lookup(ALPHA_MD5, 6)) == 1


def test_store_file_round_trips_all_types(store, tmp_path):
    os_id = store.add_os("Mac OS 8", "8.6")
    pid = store.add_package("Game", "2.0", "English", os_id, "application")
    store.import_rds(_rds(RDS_HEADER + f'"{GAMMA_MD5}","g","6","P","1","Mac OS 8","8.6","en"\n'))
    with hashdb.open_store(store.path) as reread:
        catalog = reread.package_catalog()
        assert catalog[pid].name == "Game"
        assert catalog[pid].kind == "application"
        assert any(info.os_version == "8.6" for info in catalog.values())
    # the file is plain sqlite: self-describing meta survives raw access
    raw = sqlite3.connect(store.path)
    assert dict(raw.execute("SELECT key, value FROM meta"))["name"] == "hashdb_mac"
    raw.close()
