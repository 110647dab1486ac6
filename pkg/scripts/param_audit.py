"""Parameter accounting for every fusion kind at full width (d_model=1024).

    python scripts/param_audit.py [--metadata] [--csv out.csv]
"""
import argparse
import csv
import sys

from pasturefuse.audit import full_audit


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--metadata", action="store_true", help="include the metadata branch")
    ap.add_argument("--csv", help="also write the rows as CSV")
    args = ap.parse_args()
    rows = full_audit(metadata=args.metadata)
    for r in rows:
        print(r.fmt())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["component", "symbolic", "allocated", "reference", "rel_dev"])
            for r in rows:
                w.writerow([r.component, r.symbolic, r.allocated, r.reference, r.rel_dev])
    return 0 if all(r.consistent for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
