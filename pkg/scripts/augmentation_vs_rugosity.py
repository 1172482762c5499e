"""Train with and without augmentation and compare test-split rugosity.

Spirals use tangent jitter (m=8, eps=0.05); the MNIST subset uses every
translation of up to two pixels.  Prints one CSV row per (seed, arm) and
writes per-epoch traces next to the summary when --out is given.

    python3 scripts/augmentation_vs_rugosity.py spirals --seeds 0 1 2 3 4
    python3 scripts/augmentation_vs_rugosity.py mnist --seeds 0 1 2
"""

import argparse
import os
import sys

from tangent_rugosity import network as nw
from tangent_rugosity.augment import make_tangent_jitter, make_translations
from tangent_rugosity.linalg import make_rng
from tangent_rugosity.manifold import gen_spirals, load_idx, split
from tangent_rugosity.rugosity import RugosityConfig, jacobian_norm, network_handle, rugosity_piecewise
from tangent_rugosity.train import TrainConfig, train

MNIST = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data", "mnist")


def spirals_setup(seed):
    tr, te = split(gen_spirals(1200, 0.0, make_rng(100 + seed)), 500, make_rng(200 + seed))
    aug = make_tangent_jitter(tr, 8, 0.05, make_rng(300 + seed))
    return tr, te, aug, [2, 64, 64, 2], RugosityConfig(eps=0.02, m=8, seed=seed)


def mnist_setup(seed):
    tr = load_idx(os.path.join(MNIST, "train-images-idx3-ubyte.gz"), os.path.join(MNIST, "train-labels-idx1-ubyte.gz"))
    te = load_idx(os.path.join(MNIST, "t10k-images-idx3-ubyte.gz"), os.path.join(MNIST, "t10k-labels-idx1-ubyte.gz"))
    return tr, te, make_translations(tr, 2), [784, 64, 64, 10], RugosityConfig(m=8, seed=seed)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("dataset", choices=["spirals", "mnist"])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--epochs", type=int, help="default 300 for spirals, 30 for mnist")
    parser.add_argument("--out", help="directory for per-run trace CSVs")
    args = parser.parse_args()
    setup = spirals_setup if args.dataset == "spirals" else mnist_setup
    epochs = args.epochs or (300 if args.dataset == "spirals" else 30)

    print("seed,augmented,train_acc,test_acc,rugosity2_test,jacobian_test")
    for seed in args.seeds:
        tr, te, aug, widths, rcfg = setup(seed)
        for a in (None, aug):
            cfg = TrainConfig(epochs=epochs, eval_every=max(1, epochs // 10), seed=seed)
            net = nw.init_network(widths, "relu", make_rng(seed))
            net, trace = train(net, tr, te, cfg, aug=a, rugosity_cfg=rcfg)
            fh = network_handle(net)
            rug = rugosity_piecewise(fh, te, rcfg).squared
            jac = jacobian_norm(fh, te).value
            last = trace.final
            print(f"{seed},{a is not None:d},{last.train_acc:.4f},{last.test_acc:.4f},{rug:.6g},{jac:.6g}", flush=True)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                trace.write(os.path.join(args.out, f"{args.dataset}_seed={seed}_aug={a is not None:d}.csv"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
