"""Write the synthetic cohort, two rhythm datasets and a sleep dataset as strip stores."""

import argparse
from pathlib import Path

from ecg_sbncl.io import save_strips
from ecg_sbncl.synthetic import make_cohort, make_rhythm_dataset, make_sleep_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", type=Path)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--strips-per-subject", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    stores = {
        "cohort.sbst": make_cohort(args.subjects, args.strips_per_subject, seed=args.seed),
        "rhythm_a.sbst": make_rhythm_dataset(6, 600.0, seed=args.seed + 1, prefix="a"),
        "rhythm_b.sbst": make_rhythm_dataset(6, 600.0, seed=args.seed + 2, prefix="b"),
        "sleep.sbst": make_sleep_dataset(9, 90, seed=args.seed + 3),
    }
    for name, strips in stores.items():
        save_strips(strips, args.out / name)
        print(f"{name:16s} {len(strips):6d} strips")


if __name__ == "__main__":
    main()
