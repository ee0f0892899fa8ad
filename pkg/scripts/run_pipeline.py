"""Run the full reproducible pipeline and print the top-level certificate digest."""

import argparse
import json
from pathlib import Path

from cbl.cli import run_pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    files = run_pipeline(a.out, a.seed, a.threads)
    cert = json.loads(Path(a.out, "certificate.json").read_text())
    print(f"{len(files)} files under {a.out}")
    print(f"final digest {cert['final_digest']}")


if __name__ == "__main__":
    main()
