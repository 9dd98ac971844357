"""Command-line front end.

    hypstat run <spec>                  execute a spec, write reports + manifest
    hypstat validate <spec>             check a spec without running it
    hypstat diff <m1> <m2>              compare two manifests
    hypstat plotdata <report> --kind K  write plot-ready CSV (cdf|manhattan|moments|growth)

Exit codes: 0 ok, 1 a requested task failed, 2 spec/usage error.
The cache root is ``spec.cache``, else ``$HYPSTAT_CACHE``, else ``~/.cache/hypstat``.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import PLOT_KINDS, IncomparableError, SpecError, diff, emit_plot_data, \
    format_diff, load_spec, run

log = logging.getLogger("hypstat")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypstat", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute an experiment spec")
    r.add_argument("spec")
    v = sub.add_parser("validate", help="check a spec")
    v.add_argument("spec")
    d = sub.add_parser("diff", help="compare two run manifests")
    d.add_argument("m1")
    d.add_argument("m2")
    q = sub.add_parser("plotdata", help="emit plot-ready CSV from a report")
    q.add_argument("report")
    q.add_argument("--kind", required=True, choices=PLOT_KINDS)
    q.add_argument("-o", "--out", default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "validate":
            spec = load_spec(args.spec)
            print(f"OK {spec.name} hash={spec.hash[:12]} tasks={','.join(spec.tasks)}")
            return 0
        if args.cmd == "run":
            man = run(args.spec)
            for name, st in man.tasks.items():
                line = f"{name:<14}{st['status']}"
                if st["status"] != "ok":
                    line += f"  {st.get('error', '')}"
                print(line)
            for k, v in man.summary.items():
                if k != "routes":
                    print(f"  {k} = {v}")
            return 0 if man.ok else 1
        if args.cmd == "diff":
            print(format_diff(diff(args.m1, args.m2)))
            return 0
        if args.cmd == "plotdata":
            print(emit_plot_data(args.report, args.kind, args.out))
            return 0
    except (SpecError, IncomparableError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
