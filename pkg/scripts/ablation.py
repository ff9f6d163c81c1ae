"""Data-proximity vs image-space coupling at identical parameters.

Runs the complementary method and the image-space (BB) baseline with the same
alpha, beta, mu and outer iterations, printing the per-step error traces.

    python3 scripts/ablation.py --size 128 --alpha 1e-4 --beta 6e-5
"""

import argparse

from limitedct import experiment as ex
from limitedct.metrics import rel_l2


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--photons", type=float, default=1e4)
    ap.add_argument("--alpha", type=float, default=1e-4)
    ap.add_argument("--beta", type=float, default=6e-5)
    ap.add_argument("--mu", type=float, default=1.0)
    ap.add_argument("--outer-iters", type=int, default=0)
    args = ap.parse_args()

    cfg = ex.RunConfig(size=args.size, photons=args.photons, alpha=args.alpha, beta=args.beta,
                       mu=args.mu, outer_iters=args.outer_iters)
    data = ex.make_data(cfg)
    bank = ex.bank_for(cfg)
    scfg = cfg.solver_config()
    for method in ("complementary", "bb"):
        trace = []
        res = ex.run_method(method, data.noisy, scfg, bank,
                            callback=lambda n, u, a: trace.append(rel_l2(u, data.truth)))
        print(f"{method:13s} final {rel_l2(res.image, data.truth):.4f}  ({res.seconds:.0f} s)")
        print("  per outer step: " + " ".join(f"{e:.4f}" for e in trace))


if __name__ == "__main__":
    main()
