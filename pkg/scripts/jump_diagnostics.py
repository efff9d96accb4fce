"""Single-step jump-count statistics against the (qh)^k tail bound."""
import argparse

import numpy as np
from scipy import stats

from tamedms.chain import jump_count_statistics, validate_generator
from tamedms.rng import stream


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    gen = validate_generator([[-1, 1], [1, -1]])
    hs, means = [], []
    print(f"{'h':>10}{'P(N>=1)':>12}{'(qh)':>10}{'P(N>=2)':>12}{'(qh)^2':>10}{'E[N^2]':>10}")
    for j in range(4, 10):
        h = 2.0 ** -j
        st = jump_count_statistics(gen, h, args.samples, stream(args.seed, j, 3))
        qh = gen.q_max * h
        print(f"{h:>10.5f}{st.tail[1][0]:>12.3e}{qh:>10.3e}{st.tail[2][0]:>12.3e}"
              f"{qh ** 2:>10.3e}{st.second_moment[0]:>10.3e}")
        hs.append(h)
        means.append(st.mean[0])
    slope = stats.linregress(np.log2(hs), np.log2(means)).slope
    print(f"log-log slope of E[N] against h: {slope:.3f}")


if __name__ == "__main__":
    main()
