"""Train the desk-scale encoder on the synthetic cohort and report the collapse diagnostics.

Takes roughly a quarter of an hour on one CPU core.
"""

import argparse
import dataclasses
import logging
import time
from pathlib import Path

import numpy as np

from ecg_sbncl.config import load_config
from ecg_sbncl.evaluation import embedding_spread
from ecg_sbncl.io import load_strips
from ecg_sbncl.io.strips import stack_values
from ecg_sbncl.sbncl import embed, projection, train
from ecg_sbncl.synthetic import make_cohort


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--store", type=Path, help="strip store; default: generate the 20 x 200 cohort")
    p.add_argument("--out-dir", type=Path, default=Path("runs/desk"))
    p.add_argument("--config", default="desk")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.iterations is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, iterations=args.iterations))
    strips = load_strips(args.store) if args.store else make_cohort()

    t = time.perf_counter()
    res = train(cfg.model, cfg.heads, cfg.ssl, cfg.train, strips, out_dir=args.out_dir)
    print(f"{res.state.iteration} iterations in {time.perf_counter() - t:.0f}s, final loss {res.losses[-1]:.3e}")

    values = stack_values(strips)
    subjects = np.array([s.subject_id for s in strips])
    cross, pooled = embedding_spread(embed(values, res.state.encoder_params(), cfg.model), subjects)
    print(f"cross-subject spread {cross:.4f}  pooled {pooled:.4f}  ratio {cross / pooled:.3f}")
    for it, m in res.metric_curve:
        print(f"  iteration {it:5d}  gender KNN accuracy {m:.4f}")

    # how far apart different subjects sit in the teacher's projection space
    sub = slice(None, None, max(1, len(strips) // 400))
    z = projection(values[sub], res.state.teacher, cfg.model).data
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    cos = 1 - z @ z.T
    other = subjects[sub][:, None] != subjects[sub][None, :]
    print(f"mean cosine loss, same subject {cos[~other].mean():.2e}  different subjects {cos[other].mean():.2e}")


if __name__ == "__main__":
    main()
