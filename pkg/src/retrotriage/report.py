"""Serialize an analysis result to canonical JSON and self-contained HTML.

Both documents derive from the same AnalysisResult and are byte-stable:
the timestamp comes from the result, keys keep a fixed order, and the
HTML embeds the full JSON document for its client-side pager.  Section
headings and table labels are French, matching the report format this
reproduces; auxiliary strings are English.  The JSON key order is
documented in docs/report-schema.md.
"""

from __future__ import annotations

import html
import json
import math
import urllib.parse
from dataclasses import dataclass
from datetime import timezone
from pathlib import Path

from .matcher import AnalysisResult

DEFAULT_PAGE_SIZE = 10


@dataclass(frozen=True)
class ReportDocument:
    json_bytes: bytes
    html_bytes: bytes
    json_size_kib: int


def page_count(n_rows: int, page_size: int) -> int:
    """Number of pager pages; an empty table still shows one page."""
    if page_size < 1:
        raise ValueError("page_size must be >= 1")
    return max(1, math.ceil(n_rows / page_size))


def encode_path(path: str) -> str:
    """Percent-encode each path segment (RFC 3986 unreserved set), keeping '/'."""
    return "/".join(urllib.parse.quote(segment, safe="") for segment in path.split("/"))


def _rfc3339(dt) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def result_to_dict(result: AnalysisResult) -> dict:
    return {
        "analysis": {
            "date": _rfc3339(result.started_at),
            "examiner": result.examiner,
            "source_name": result.source_name,
            "databases": [{"name": d.name, "version": d.version_label}
                          for d in result.databases],
        },
        "counters": {
            "files_walked": result.counters.files_walked,
            "zero_size_skipped": result.counters.zero_size_skipped,
            "read_errors": result.counters.read_errors,
            "matched_instances": result.counters.matched_instances,
        },
        "unmatched": [{"path": u.relative_path, "size": u.size, "md5": u.md5}
                      for u in result.unmatched],
        "os_detections": [{"os_name": r.os_name, "os_version": r.os_version,
                           "occurrences": r.occurrences, "database": r.store_name}
                          for r in result.os_rows],
        "packages": [
            {"database": store_name, "package_id": r.package_id, "name": r.name,
             "version": r.version, "language": r.language, "os_name": r.os_name,
             "occurrence_ratio_percent": r.occurrence_ratio_percent,
             "coverage_percent": r.coverage_percent, "occurrences": r.occurrences,
             "matched_files": list(r.matched_files)}
            for store_name, rows in result.package_rows.items() for r in rows],
    }


def to_json(result: AnalysisResult) -> bytes:
    return json.dumps(result_to_dict(result), ensure_ascii=False,
                      separators=(",", ":")).encode("utf-8")


_STYLE = """
body { font-family: sans-serif; margin: 2em; color: #222; }
h1 { font-size: 1.4em; } h2 { font-size: 1.15em; margin-top: 1.6em; }
h3 { font-size: 1em; margin-top: 1.2em; }
table { border-collapse: collapse; margin: 0.6em 0; }
th, td { border: 1px solid #999; padding: 0.25em 0.6em; text-align: left; }
th { background: #eee; }
.pager a { margin-right: 1em; }
.pager span { margin-right: 1em; font-weight: bold; }
.bar { display: inline-block; width: 120px; height: 0.8em; border: 1px solid #888;
       vertical-align: middle; margin-right: 0.4em; }
.bar-fill { height: 100%; background: #4a78b0; }
.files { margin: 0.3em 0 0.3em 1.2em; }
.hidden { display: none; }
"""

_SCRIPT = """
(function () {
  "use strict";
  var data = JSON.parse(document.getElementById("report-data").textContent);
  var rows = data.unmatched;
  var pageSize = %PAGE_SIZE%;
  var pages = Math.max(1, Math.ceil(rows.length / pageSize));
  var page = 1;
  function encodeSegment(s) {
    return encodeURIComponent(s).replace(/[!'()*]/g, function (c) {
      return "%" + c.charCodeAt(0).toString(16).toUpperCase();
    });
  }
  function encodePath(p) {
    return p.split("/").map(encodeSegment).join("/");
  }
  function render() {
    var body = document.getElementById("unmatched-body");
    body.textContent = "";
    var start = (page - 1) * pageSize;
    rows.slice(start, start + pageSize).forEach(function (r) {
      var tr = document.createElement("tr");
      [encodePath(r.path), String(r.size), r.md5].forEach(function (value) {
        var td = document.createElement("td");
        td.textContent = value;
        tr.appendChild(td);
      });
      body.appendChild(tr);
    });
    document.getElementById("pager-label").textContent = "Page " + page + " / " + pages;
  }
  document.getElementById("pager-prev").addEventListener("click", function (e) {
    e.preventDefault();
    if (page > 1) { page -= 1; render(); }
  });
  document.getElementById("pager-next").addEventListener("click", function (e) {
    e.preventDefault();
    if (page < pages) { page += 1; render(); }
  });
  Array.prototype.forEach.call(document.getElementsByClassName("toggle"), function (a) {
    a.addEventListener("click", function (e) {
      e.preventDefault();
      a.nextElementSibling.classList.toggle("hidden");
    });
  });
  render();
})();
"""


def to_html(result: AnalysisResult, page_size: int = DEFAULT_PAGE_SIZE, *,
            _json_bytes: bytes | None = None) -> bytes:
    """Single self-contained HTML document; no external references."""
    if page_size < 1:
        raise ValueError("page_size must be >= 1")
    json_bytes = to_json(result) if _json_bytes is None else _json_bytes
    kib = (len(json_bytes) + 1023) // 1024
    pages = page_count(len(result.unmatched), page_size)
    esc = html.escape

    out: list[str] = []
    w = out.append
    w("<!DOCTYPE html>\n<html lang=\"fr\">\n<head>\n<meta charset=\"utf-8\">\n")
    w(f"<title>Rapport d'analyse de la source {esc(result.source_name)}</title>\n")
    w(f"<style>{_STYLE}</style>\n</head>\n<body>\n")
    w(f"<h1>Rapport d'analyse de la source {esc(result.source_name)}</h1>\n")
    w("<p>Pour cette analyse, seuls ont été conservés les fichiers qui ne sont pas "
      "de taille nulle.</p>\n")

    w("<h2>Informations concernant l'analyse :</h2>\n<ul>\n")
    w(f"<li>Date : {_rfc3339(result.started_at)}</li>\n")
    w("<li>Informations sur la(s) base(s) de données :\n<ul>\n")
    for d in result.databases:
        w(f"<li>Base de données : <b>{esc(d.name)}</b> | version : {esc(d.version_label)}</li>\n")
    w("</ul>\n</li>\n")
    w(f"<li>Nom de la data source : {esc(result.source_name)}</li>\n")
    w(f"<li>Nom de l'examineur : {esc(result.examiner)}</li>\n</ul>\n")

    w("<h2>Liste des fichiers sans correspondance :</h2>\n")
    w("<table id=\"unmatched-table\">\n<thead><tr>"
      "<th>Nom du fichier</th><th>Taille</th><th>Hash MD5</th>"
      "</tr></thead>\n<tbody id=\"unmatched-body\"></tbody>\n</table>\n")
    w("<p class=\"pager\">")
    w("<a href=\"#\" id=\"pager-prev\">Précédent</a>")
    w(f"<span id=\"pager-label\">Page 1 / {pages}</span>")
    w("<a href=\"#\" id=\"pager-next\">Suivant</a>")
    w(f"<a href=\"report.json\">Lien vers JSON ({kib} Ko)</a>")
    w("</p>\n")

    w("<h2>OS détectés par des correspondances sur la source :</h2>\n")
    w("<table>\n<thead><tr><th>Nom de l'OS</th><th>Version</th>"
      "<th># occurrences</th><th>Base de données</th></tr></thead>\n<tbody>\n")
    for r in result.os_rows:
        w(f"<tr><td>{esc(r.os_name)}</td><td>{esc(r.os_version)}</td>"
          f"<td>{r.occurrences}</td><td>{esc(r.store_name)}</td></tr>\n")
    w("</tbody>\n</table>\n")

    w("<h2>Correspondances avec des packages connus :</h2>\n")
    for store_name, rows in result.package_rows.items():
        w(f"<h3>Correspondances détectées dans la base de données : {esc(store_name)}</h3>\n")
        w("<table>\n<thead><tr><th>ID</th><th>Nom du package</th><th>Version</th>"
          "<th>Langue</th><th>OS</th><th>% de correspondance</th>"
          "<th># occurrences</th><th>Détails</th></tr></thead>\n<tbody>\n")
        for r in rows:
            width = min(100, r.occurrence_ratio_percent)  # bar clamps, the number does not
            files = "".join(f"<li>{esc(encode_path(p))}</li>" for p in r.matched_files)
            w(f"<tr><td>{r.package_id}</td><td>{esc(r.name)}</td><td>{esc(r.version)}</td>"
              f"<td>{esc(r.language)}</td><td>{esc(r.os_name)}</td>"
              f"<td><span class=\"bar\"><span class=\"bar-fill\" "
              f"style=\"width: {width}%\"></span></span> {r.occurrence_ratio_percent}%</td>"
              f"<td>{r.occurrences}</td>"
              f"<td><a href=\"#\" class=\"toggle\">Afficher/Masquer les fichiers</a>"
              f"<ul class=\"files hidden\">{files}</ul></td></tr>\n")
        w("</tbody>\n</table>\n")

    embedded = json_bytes.decode("utf-8").replace("<", "\\u003c")
    w(f"<script id=\"report-data\" type=\"application/json\">{embedded}</script>\n")
    w("<script>")
    w(_SCRIPT.replace("%PAGE_SIZE%", str(page_size)))
    w("</script>\n</body>\n</html>\n")
    return "".join(out).encode("utf-8")


def build_report(result: AnalysisResult, page_size: int = DEFAULT_PAGE_SIZE) -> ReportDocument:
    json_bytes = to_json(result)
    html_bytes = to_html(result, page_size, _json_bytes=json_bytes)
    return ReportDocument(json_bytes, html_bytes, (len(json_bytes) + 1023) // 1024)


def write_report(result: AnalysisResult, outdir, page_size: int = DEFAULT_PAGE_SIZE) -> ReportDocument:
    """Write report.json and report.html side by side under outdir."""
    doc = build_report(result, page_size)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(doc.json_bytes)
    (out / "report.html").write_bytes(doc.html_bytes)
    return doc
