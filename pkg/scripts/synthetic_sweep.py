#!/usr/bin/env python3
"""Hyper-parameter sweeps on a synthetic bundle.

Two grids, mirroring the usual ablation layout: proxy count k against
per-proxy word count n at fixed m, and fusion variant against label count m.
Writes one CSV per grid.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from dcir.evalbench import sweep
from dcir.synthetic import make_bundle


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--domains", type=int, default=4)
    ap.add_argument("--per-cluster", type=int, default=25)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--noise", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ks", default="1,5,10,20")
    ap.add_argument("--ns", default="1,3,7,15")
    ap.add_argument("--m", type=int, default=7)
    ap.add_argument("--ms", default="1,3,7,10")
    ap.add_argument("--threads", type=int, default=0)
    ap.add_argument("--out-dir", default="sweep_out")
    args = ap.parse_args()

    sb = make_bundle(
        n_classes=args.classes,
        n_domains=args.domains,
        per_cluster=args.per_cluster,
        dim=args.dim,
        noise=args.noise,
        seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ks = tuple(int(v) for v in args.ks.split(","))
    ns = tuple(int(v) for v in args.ns.split(","))
    grid = sweep(sb.bundle, methods=("freedom",), ks=ks, ns=ns, ms=(args.m,), threads=args.threads)
    (out / "k_vs_n.csv").write_text(grid.to_csv(), encoding="utf-8")
    print(f"k vs n (m={args.m}) -> {out / 'k_vs_n.csv'}")
    print(grid.to_csv())

    ms = tuple(int(v) for v in args.ms.split(","))
    components = sweep(
        sb.bundle,
        methods=("late", "late+", "freedom"),
        ks=(20,),
        ns=(7,),
        ms=ms,
        threads=args.threads,
        string_fn=sb.string_fn,
    )
    (out / "component_vs_m.csv").write_text(components.to_csv(), encoding="utf-8")
    print(f"component vs m -> {out / 'component_vs_m.csv'}")
    print(components.to_csv())


if __name__ == "__main__":
    main()
