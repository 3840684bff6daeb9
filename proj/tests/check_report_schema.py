"""Writes a small model dump from Python, runs `pfram compute` on it and
validates the report against the published schema."""

import json
import random
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def write_pfrm(path, records):
    with open(path, "wb") as f:
        f.write(b"PFRM" + struct.pack("<II", 1, len(records)))
        for image_id, rows in records:
            raw = image_id.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(struct.pack("<II", len(rows), len(rows[0])))
            for row in rows:
                f.write(struct.pack(f"<{len(row)}f", *row))


def main():
    cli, schema_path = sys.argv[1], sys.argv[2]
    schema = json.loads(Path(schema_path).read_text())
    rng = random.Random(5)
    labels = [f"obj{i}" for i in range(15)]
    objects = {f"im{i}": rng.sample(labels, rng.randint(5, 9)) for i in range(30)}

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "objects.json").write_text(json.dumps(objects))
        layers = []
        for index in (-1, 0, 4, 8):
            records = []
            for image_id, present in objects.items():
                rows = []
                for label in present:
                    row = [rng.gauss(0.0, 0.3) for _ in labels]
                    row[labels.index(label)] += 1.0
                    rows.append(row)
                records.append((image_id, rows))
            write_pfrm(tmp / f"layer{index}.pfrm", records)
            layers.append({"index": index, "path": f"layer{index}.pfrm"})
        manifest = {"model": "py-stub", "dim": len(labels), "layers": layers,
                    "condition_tag": "inst_0", "seed": 1}
        (tmp / "manifest.json").write_text(json.dumps(manifest))

        for extra in ([], ["--sample-count", "20", "--seed", "0", "--seed", "1", "--seed", "2"]):
            out = tmp / "report.json"
            subprocess.run([cli, "compute", "--manifest", str(tmp / "manifest.json"),
                            "--gt", str(tmp / "objects.json"), "--metric", "knn",
                            "--k", "5", "--k", "10", "--out", str(out), *extra], check=True)
            report = json.loads(out.read_text())
            jsonschema.validate(report, schema)
            curve = (tmp / "report.csv").read_text().splitlines()
            assert curve[0] == "layer,k,score,stderr", curve[0]
            assert len(curve) - 1 == len(report["layers"]) * len(report["metric"]["k"])

        bad = dict(report, version="1")
        try:
            jsonschema.validate(bad, schema)
        except jsonschema.ValidationError:
            pass
        else:
            raise AssertionError("schema accepted a string version")
    print("report validates against", schema_path)


if __name__ == "__main__":
    main()
