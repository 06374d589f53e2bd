"""Forensic triage toolkit for classic Mac disk images.

Reads classic HFS volumes including resource forks, maintains reference
fingerprint stores of known OS and application files, and separates
user-produced files from system noise, emitting JSON and HTML analysis
reports.
"""

__version__ = "0.1.0"
