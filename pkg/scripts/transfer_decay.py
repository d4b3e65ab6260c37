"""Transfer-decay statistics of a results directory, with the k-step curve.

    python3 scripts/transfer_decay.py results/full --min-eval-auc 0.75
"""
import argparse
import json

from chronocl.hypothesis import ResultSet, analyze, t_comp
from chronocl.runner import read_records


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("results")
    ap.add_argument("--min-eval-auc", type=float, default=0.75)
    ap.add_argument("--max-k", type=int, default=6)
    args = ap.parse_args()

    recs = [r for r in read_records(f"{args.results}/runs.jsonl") if r.method != "FullRetraining"]
    doc = analyze(ResultSet([r.to_run() for r in recs], args.min_eval_auc), ks=range(args.max_k + 1))
    print(json.dumps({k: v for k, v in doc.items() if k != "t_comp"}, indent=2, sort_keys=True))
    td = doc["t_decay"] if doc["t_decay"] is not None else doc["t_decay_unfiltered"]
    if td is None:
        return
    label = "filtered" if doc["t_decay"] is not None else "unfiltered (no run passed the filter)"
    print(f"\nk-step AUC 0.5 + t_max * t_decay^k, {label}:")
    for k in range(args.max_k + 1):
        print(f"  k={k}: {t_comp(doc['t_max'], td, k):.4f}")


if __name__ == "__main__":
    main()
