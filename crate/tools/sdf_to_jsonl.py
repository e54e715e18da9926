#!/usr/bin/env python3
"""Convert V2000 SD files into the pathmp molecule-per-line format.

Usage:
    sdf_to_jsonl.py --field SOL --units "log mol/L" in.sdf [in2.sdf ...] > out.jsonl

Only the connection table and one numeric data field are read. Charges,
isotopes and stereo flags are ignored. Coordinates are dropped unless
--keep-coords is given (2D depictions are not geometry).
"""

import argparse
import json
import random
import sys

BOND_ORDERS = {1: "single", 2: "double", 3: "triple", 4: "aromatic"}


def read_records(path):
    with open(path) as fh:
        block = []
        for line in fh:
            if line.startswith("$$$$"):
                yield block
                block = []
            else:
                block.append(line.rstrip("\n"))
        if any(l.strip() for l in block):
            yield block


def parse_block(block, field, keep_coords):
    counts = block[3]
    n_atoms, n_bonds = int(counts[0:3]), int(counts[3:6])
    if "V2000" not in counts:
        raise ValueError("only V2000 connection tables are supported")
    atoms = []
    for line in block[4 : 4 + n_atoms]:
        x, y, z = float(line[0:10]), float(line[10:20]), float(line[20:30])
        atom = {"element": line[31:34].strip()}
        if keep_coords:
            atom["coords"] = [x, y, z]
        atoms.append(atom)
    bonds = []
    for line in block[4 + n_atoms : 4 + n_atoms + n_bonds]:
        i, j, order = int(line[0:3]), int(line[3:6]), int(line[6:9])
        if order not in BOND_ORDERS:
            raise ValueError(f"unsupported bond type {order}")
        bonds.append([i - 1, j - 1, BOND_ORDERS[order]])
    value = None
    for k, line in enumerate(block):
        if line.startswith(">") and f"<{field}>" in line:
            value = float(block[k + 1])
    if value is None:
        raise ValueError(f"missing data field {field}")
    return block[0].strip(), atoms, bonds, value


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+")
    ap.add_argument("--field", required=True, help="SD data field holding the target")
    ap.add_argument("--units", default=None)
    ap.add_argument("--keep-coords", action="store_true")
    ap.add_argument("--sample", type=int, default=None, help="keep a random subset of this size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    mols = []
    for path in args.inputs:
        for block in read_records(path):
            name, atoms, bonds, value = parse_block(block, args.field, args.keep_coords)
            mols.append((name, atoms, bonds, value))
    if args.sample is not None:
        mols = random.Random(args.seed).sample(mols, args.sample)

    elements = sorted({a["element"] for _, atoms, _, _ in mols for a in atoms})
    header = {"elements": elements, "targets": [args.field]}
    if args.units:
        header["units"] = args.units
    out = sys.stdout
    out.write(json.dumps({"header": header}) + "\n")
    for k, (name, atoms, bonds, value) in enumerate(mols):
        line = {
            "id": name or f"mol-{k}",
            "elements": [a["element"] for a in atoms],
            "bonds": bonds,
            "targets": [value],
        }
        if args.keep_coords:
            line["coords"] = [a["coords"] for a in atoms]
        out.write(json.dumps(line) + "\n")


if __name__ == "__main__":
    main()
