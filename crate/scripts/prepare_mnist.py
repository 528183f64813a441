#!/usr/bin/env python3
"""Convert the 5000-sample MNIST subset bundled with mlxtend into IDX files.

The source file is sorted by label, so the split takes the first 80% of
every class for training and the rest for testing, keeping the file order
inside each split interleaved by class. Writes
<out>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte.
"""
import argparse
import gzip
import struct
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(source: Path):
    if source.suffix == ".whl":
        raw = zipfile.ZipFile(source).read(MEMBER)
    else:
        raw = source.read_bytes()
    for line in gzip.decompress(raw).decode().splitlines():
        values = [int(float(v)) for v in line.split(",")]
        yield values[:-1], values[-1]


def write_split(out: Path, prefix: str, rows):
    images = bytearray(struct.pack(">IIII", 0x803, len(rows), 28, 28))
    labels = bytearray(struct.pack(">II", 0x801, len(rows)))
    for pixels, label in rows:
        images.extend(bytes(pixels))
        labels.append(label)
    (out / f"{prefix}-images-idx3-ubyte").write_bytes(images)
    (out / f"{prefix}-labels-idx1-ubyte").write_bytes(labels)


def interleave(groups):
    out = []
    for i in range(max(len(g) for g in groups)):
        out.extend(g[i] for g in groups if i < len(g))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--train-frac", type=float, default=0.8)
    args = ap.parse_args()

    rows = list(read_rows(args.source))
    assert all(len(p) == 784 for p, _ in rows)
    out = args.out / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    by_class = {}
    for row in rows:
        by_class.setdefault(row[1], []).append(row)
    train, test = [], []
    for label in sorted(by_class):
        group = by_class[label]
        cut = round(args.train_frac * len(group))
        train.append(group[:cut])
        test.append(group[cut:])
    train = interleave(train)
    test = interleave(test)
    write_split(out, "train", train)
    write_split(out, "t10k", test)
    print(f"wrote {len(train)} train and {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
