"""Record worst-case ratios of the verify suites into the packaged baseline file.

Rerun only when an intentional numerical change moves the constants; the
regression check allows +5% over the stored values.
"""

import argparse
import json
from pathlib import Path

from mzh.verify import baseline_key, run_suite

CONFIGS = [
    # q, lam, seed, resolution, count
    (2.0, 1.0, 7, 24, 20),
    (2.0, 1.0, 7, 32, 20),
    (3.0, 0.5, 7, 24, 20),
]

OUT = Path(__file__).resolve().parents[1] / "src" / "mzh" / "data" / "baselines.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(OUT))
    a = ap.parse_args()
    worst = {}
    for q, lam, seed, res, count in CONFIGS:
        reps = run_suite("all", q, lam, seed, res, count)
        for key, rep in reps.items():
            suite, name = key.split("/", 1)
            worst[baseline_key(suite, name, q, lam, seed, res, count)] = rep.worst
            print(f"{suite:12s} {name:28s} q={q} lam={lam} res={res}: {rep.worst:.6g}")
    Path(a.out).write_text(json.dumps({"worst": worst}, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
