"""Regenerate smiles_oracle.csv from RDKit (development-time only).

Run once; the CSV is committed and the test suite never imports RDKit.
    python tests/fixtures/make_smiles_oracle.py
"""

import csv
import random
from pathlib import Path

from rdkit import Chem, RDLogger, RDConfig

from molddp.corpus import generate_corpus
from molddp.smiles import SmilesError, parse_smiles

RDLogger.DisableLog("rdApp.*")
HERE = Path(__file__).parent
SOURCES = [
    Path(RDConfig.RDDataDir) / "NCI" / "first_5K.smi",
    Path(RDConfig.RDContribDir) / "FreeWilson" / "data" / "CHEMBL2321810.smi",
]


def oracle_counts(smi):
    m = Chem.MolFromSmiles(smi)
    if m is None:
        return None
    mh = Chem.AddHs(m)
    return m.GetNumAtoms(), m.GetNumBonds(), mh.GetNumAtoms() - m.GetNumAtoms()


def in_dialect(smi):
    try:
        parse_smiles(smi)
    except SmilesError:
        return False
    return True


def main():
    real = []
    for src in SOURCES:
        for line in src.read_text().splitlines():
            if line.strip():
                real.append(line.split()[0])
    rng = random.Random(20240601)
    rng.shuffle(real)
    rows = []
    for smi in real:
        if len(rows) >= 1000:
            break
        counts = oracle_counts(smi)
        if counts is None or not in_dialect(smi):
            continue
        rows.append(("nci_chembl", smi, *counts))
    for rec in generate_corpus(200, seed=777):
        rows.append(("synthetic", rec["smiles"], *oracle_counts(rec["smiles"])))
    with open(HERE / "smiles_oracle.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source", "smiles", "heavy_atoms", "bonds", "hydrogens"])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows")


if __name__ == "__main__":
    main()
