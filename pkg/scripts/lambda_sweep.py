"""Rugosity penalty sweep on two spirals: final c_hat and accuracy per lambda.

The penalty set is tangent jitter (m=8, eps=0.05) on the training points;
lambda = 0 trains on the plain loss.  c_hat is measured on that same set.

    python3 scripts/lambda_sweep.py --lams 0 0.001 0.01 0.1 --seeds 0 1 2 3 4
"""

import argparse
import sys

import numpy as np

from tangent_rugosity import network as nw
from tangent_rugosity.augment import make_tangent_jitter
from tangent_rugosity.linalg import make_rng
from tangent_rugosity.manifold import gen_spirals, split
from tangent_rugosity.rugosity import c_hat, network_handle
from tangent_rugosity.train import TrainConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.001, 0.01, 0.1])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--mode", choices=["sample", "full"], default="sample")
    args = parser.parse_args()

    values = {lam: [] for lam in args.lams}
    print("seed,lam,train_acc,test_acc,c_hat")
    for seed in args.seeds:
        tr, te = split(gen_spirals(1200, 0.0, make_rng(100 + seed)), 500, make_rng(200 + seed))
        pen = make_tangent_jitter(tr, 8, 0.05, make_rng(300 + seed))
        for lam in args.lams:
            cfg = TrainConfig(epochs=args.epochs, eval_every=args.epochs, seed=seed, lam=lam, penalty_mode=args.mode)
            net = nw.init_network([2, 64, 64, 2], "relu", make_rng(seed))
            net, trace = train(net, tr, te, cfg, penalty_set=pen if lam > 0 else None)
            value = c_hat(network_handle(net), tr, pen).value
            values[lam].append(value)
            print(f"{seed},{lam:g},{trace.final.train_acc:.4f},{trace.final.test_acc:.4f},{value:.6g}", flush=True)
    for lam in args.lams:
        print(f"median,{lam:g},,,{np.median(values[lam]):.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
