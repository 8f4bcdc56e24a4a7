"""Regenerate the canonical Sioux Falls TNTP files shipped in ``gce_market/data``.

The link table and trip matrix are read from the Sioux Falls reference
project bundled with the ``aequilibrae`` wheel (``reference_files/sioux_falls.zip``),
which carries the standard community data set (24 nodes, 76 links, 360600 trips).

Usage::

    pip download aequilibrae --no-deps -d /tmp/ae
    python tools/make_sioux_falls_tntp.py /tmp/ae/aequilibrae-*.whl src/gce_market/data
"""
import io
import sqlite3
import sys
import tempfile
import zipfile
from pathlib import Path

import h5py


def main(wheel, outdir):
    outdir = Path(outdir)
    with zipfile.ZipFile(wheel) as whl:
        inner = whl.read("aequilibrae/reference_files/sioux_falls.zip")
    with tempfile.TemporaryDirectory() as tmp, zipfile.ZipFile(io.BytesIO(inner)) as proj:
        proj.extractall(tmp)
        con = sqlite3.connect(Path(tmp) / "project_database.sqlite")
        links = con.execute(
            "select a_node, b_node, capacity_ab, free_flow_time, b, power "
            "from links order by link_id"
        ).fetchall()
        n_nodes = con.execute("select count(*) from nodes").fetchone()[0]
        con.close()
        with h5py.File(Path(tmp) / "matrices" / "demand.omx", "r") as f:
            trips = f["data/matrix"][:]
            taz = f["lookup/taz"][:]

    lines = [
        f"<NUMBER OF ZONES> {len(taz)}",
        f"<NUMBER OF NODES> {n_nodes}",
        "<FIRST THRU NODE> 1",
        f"<NUMBER OF LINKS> {len(links)}",
        "<END OF METADATA>",
        "",
        "",
        "~ \tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for a, b, cap, fft, bb, power in links:
        lines.append(f"\t{a}\t{b}\t{cap:.5f}\t{fft:g}\t{fft:g}\t{bb:g}\t{power:g}\t0\t0\t1\t;")
    (outdir / "SiouxFalls_net.tntp").write_text("\n".join(lines) + "\n")

    lines = [
        f"<NUMBER OF ZONES> {len(taz)}",
        f"<TOTAL OD FLOW> {trips.sum():.1f}",
        "<END OF METADATA>",
        "",
    ]
    for i, o in enumerate(taz):
        lines.append("")
        lines.append(f"Origin \t{o}")
        row = [f"{d:5d} : {trips[i, j]:8.1f};" for j, d in enumerate(taz)]
        for k in range(0, len(row), 5):
            lines.append("    ".join(row[k:k + 5]))
    (outdir / "SiouxFalls_trips.tntp").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
