"""Run every spec under scripts/specs and print the headline constants."""
import argparse
import sys
from pathlib import Path

from hypstat.experiment import run

SPECS = Path(__file__).resolve().parent / "specs"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("specs", nargs="*", type=Path, default=sorted(SPECS.glob("*.yaml")))
    args = ap.parse_args(argv)
    failed = 0
    for p in args.specs:
        man = run(p)
        s = man.summary
        keys = ("tau", "sigma2", "sigma2_normalized", "v_d", "ks", "tau_hat", "similarity")
        print(f"{p.stem}: ok={man.ok} " + " ".join(f"{k}={s[k]}" for k in keys if k in s))
        failed += not man.ok
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
