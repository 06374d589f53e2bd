"""Report tests: canonical JSON golden file, HTML contract, pager law."""

import json
import re
from datetime import datetime, timezone

import pytest

from retrotriage import report
from retrotriage.hashdb import StoreDescriptor
from retrotriage.matcher import (AnalysisResult, Counters, OsDetectionRow,
                                 PackageRow, UnmatchedFile)

PINNED = datetime(2025, 6, 6, 10, 59, 40, tzinfo=timezone.utc)


def make_result(unmatched=(), os_rows=(), packages=None, counters=None,
                source_name="mini.img", examiner="alice", databases=None):
    return AnalysisResult(
        source_name=source_name,
        examiner=examiner,
        started_at=PINNED,
        databases=list(databases or [StoreDescriptor("hashdb", "2025.03.20 - legacy")]),
        unmatched=list(unmatched),
        os_rows=list(os_rows),
        package_rows=dict(packages or {"hashdb": []}),
        counters=counters or Counters(),
    )


def three_file_result():
    return make_result(
        unmatched=[UnmatchedFile("Desktop DF", 79554, "9832c6dfbd563bbf066a5b2da0da3600")],
        os_rows=[OsDetectionRow("Mac OS X Tiger", "10.4", 2, "hashdb")],
        packages={"hashdb": [PackageRow(
            package_id=2, name="Mac OS X Tiger (vierge)", version="10.4",
            language="French", os_name="Mac OS X Tiger",
            occurrence_ratio_percent=67, coverage_percent=67, occurrences=2,
            matched_files=["Applications/App", "System/Font"])]},
        counters=Counters(files_walked=3, zero_size_skipped=0, read_errors=0,
                          matched_instances=2),
    )


# hand-written from the documented schema, not generated by the code under test
EXPECTED_THREE_FILE_JSON = (
    '{"analysis":{"date":"2025-06-06T10:59:40Z","examiner":"alice",'
    '"source_name":"mini.img","databases":[{"name":"hashdb",'
    '"version":"2025.03.20 - legacy"}]},'
    '"counters":{"files_walked":3,"zero_size_skipped":0,"read_errors":0,'
    '"matched_instances":2},'
    '"unmatched":[{"path":"Desktop DF","size":79554,'
    '"md5":"9832c6dfbd563bbf066a5b2da0da3600"}],'
    '"os_detections":[{"os_name":"Mac OS X Tiger","os_version":"10.4",'
    '"occurrences":2,"database":"hashdb"}],'
    '"packages":[{"database":"hashdb","package_id":2,'
    '"name":"Mac OS X Tiger (vierge)","version":"10.4","language":"French",'
    '"os_name":"Mac OS X Tiger","occurrence_ratio_percent":67,'
    '"coverage_percent":67,"occurrences":2,'
    '"matched_files":["Applications/App","System/Font"]}]}'
).encode("utf-8")


def test_json_matches_hand_written_document():
    assert report.to_json(three_file_result()) == EXPECTED_THREE_FILE_JSON


def test_json_is_canonical_across_calls():
    result = three_file_result()
    assert report.to_json(result) == report.to_json(result)


def test_empty_result_serializes():
    doc = json.loads(report.to_json(make_result()))
    assert doc["unmatched"] == []
    assert doc["os_detections"] == []
    assert doc["packages"] == []
    assert doc["counters"]["files_walked"] == 0


@pytest.mark.parametrize("rows,pages", [(0, 1), (9, 1), (10, 1), (11, 2), (25, 3)])
def test_page_count_law(rows, pages):
    assert report.page_count(rows, 10) == pages


def test_page_count_large():
    assert report.page_count(178975, 10) == 17898
    with pytest.raises(ValueError):
        report.page_count(5, 0)


def _unmatched(n):
    return [UnmatchedFile(f"dir/file{i:05d}", i + 1, f"{i:032x}") for i in range(n)]


def test_html_pager_initial_label():
    html_25 = report.to_html(make_result(unmatched=_unmatched(25))).decode("utf-8")
    assert "Page 1 / 3" in html_25
    html_0 = report.to_html(make_result()).decode("utf-8")
    assert "Page 1 / 1" in html_0
    assert "Nom du fichier" in html_0  # empty table keeps its header
    html_7 = report.to_html(make_result(unmatched=_unmatched(7)), page_size=3).decode("utf-8")
    assert "Page 1 / 3" in html_7


def test_html_french_section_headings_verbatim():
    html = report.to_html(three_file_result()).decode("utf-8")
    for needle in [
        "Rapport d'analyse de la source mini.img",
        "Pour cette analyse, seuls ont été conservés les fichiers qui ne sont pas de taille nulle.",
        "Informations concernant l'analyse",
        "Informations sur la(s) base(s) de données",
        "Base de données : <b>hashdb</b> | version : 2025.03.20 - legacy",
        "Nom de la data source",
        "Nom de l'examineur",
        "Liste des fichiers sans correspondance",
        "Nom du fichier", "Taille", "Hash MD5",
        "Précédent", "Suivant", "Lien vers JSON (1 Ko)",
        "OS détectés par des correspondances sur la source",
        "Nom de l'OS", "# occurrences", "Base de données",
        "Correspondances avec des packages connus",
        "Correspondances détectées dans la base de données : hashdb",
        "Nom du package", "Langue", "% de correspondance", "Détails",
        "Afficher/Masquer les fichiers",
    ]:
        assert needle in html, needle


def test_html_is_self_contained():
    html = report.to_html(make_result(unmatched=_unmatched(30)))
    assert not re.search(rb"(?:https?|ftp|file)://", html)
    assert b'href="report.json"' in html  # the one relative link


def test_html_embedded_data_equals_json():
    result = three_file_result()
    html = report.to_html(result).decode("utf-8")
    match = re.search(r'<script id="report-data" type="application/json">(.*?)</script>',
                      html, re.S)
    assert match
    assert json.loads(match.group(1)) == json.loads(report.to_json(result))


def test_html_percent_encodes_displayed_paths():
    result = make_result(packages={"hashdb": [PackageRow(
        package_id=1, name="ABBY FineReader", version="5", language="French",
        os_name="Mac OS X Tiger", occurrence_ratio_percent=11, coverage_percent=11,
        occurrences=1,
        matched_files=["Applications/ABBY FineReader 5 Sprint/Readme"])]})
    html = report.to_html(result).decode("utf-8")
    assert "Applications/ABBY%20FineReader%205%20Sprint/Readme" in html


def test_encode_path_keeps_separators():
    assert report.encode_path("a b/c:d/é") == "a%20b/c%3Ad/%C3%A9"
    assert report.encode_path("plain/path") == "plain/path"


def test_bar_clamps_but_number_does_not():
    result = make_result(packages={"hashdb": [PackageRow(
        package_id=5, name="Adobe Acrobat", version="6.0", language="French",
        os_name="Mac OS X Tiger", occurrence_ratio_percent=138, coverage_percent=92,
        occurrences=69, matched_files=[])]})
    html = report.to_html(result).decode("utf-8")
    assert "width: 100%" in html
    assert " 138%" in html
    assert "width: 138%" not in html


def test_html_escapes_untrusted_strings():
    result = make_result(source_name='<script>alert("x")</script>')
    html = report.to_html(result).decode("utf-8")
    assert '<script>alert' not in html
    assert '&lt;script&gt;' in html


def test_html_byte_stable():
    result = three_file_result()
    assert report.to_html(result) == report.to_html(result)


def test_write_report_side_by_side(tmp_path):
    doc = report.write_report(three_file_result(), tmp_path / "out")
    json_path = tmp_path / "out" / "report.json"
    html_path = tmp_path / "out" / "report.html"
    assert json_path.read_bytes() == doc.json_bytes
    assert html_path.read_bytes() == doc.html_bytes
    assert doc.json_size_kib == (len(doc.json_bytes) + 1023) // 1024
