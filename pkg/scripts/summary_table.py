"""Print the strategy x monthly-batches table (final AUC, mean C-AUC, mean FWT-AUC) of a results directory."""
import argparse
import csv
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results")
    args = ap.parse_args()
    rows = list(csv.DictReader((Path(args.results) / "summary.csv").open()))
    settings = sorted({int(r["monthly_batches"]) for r in rows})
    kinds = list(dict.fromkeys(r["strategy"] for r in rows))
    cell = {(r["strategy"], int(r["monthly_batches"])): r for r in rows}

    head = f"{'strategy':<16}" + "".join(f"| mb={mb:<3} AUC   C-AUC  FWT   " for mb in settings)
    print(head)
    print("-" * len(head))
    for k in kinds:
        line = f"{k:<16}"
        for mb in settings:
            r = cell.get((k, mb))
            if r is None:
                line += "|" + " " * 29
                continue
            fwt = f"{float(r['mean_fwt_auc']):.3f}" if r["mean_fwt_auc"] else "  -  "
            line += f"| {float(r['auc']):.3f}  {float(r['mean_c_auc']):.3f}  {fwt}      "
        print(line)


if __name__ == "__main__":
    main()
