"""Diagnostic: is the true causal structure a stable optimum of the demo theory?

Fits the NTN groundings of li, co, di and im to the ground-truth relations by
weighted cross-entropy, then continues with ordinary theory-driven synthesis
and reports likelihood and im recovery.  This uses the ground truth and is
not part of the synthesis method; compare with scripts/demo_experiment.py,
which starts from random initializations.
"""

import argparse
import copy
import sys

import numpy as np

from palo import autodiff as ad
from palo import synthesis
from palo.demo import DemoConfig, bundled_theory, demo_binding, demo_synth_config, generate_network, score_recovery
from palo.grounding import InitConfig, init_params


def fit_to_truth(net, sig, theory, steps=1500, lr=0.03):
    n = net.n
    e = net.embeddings
    x = np.concatenate([np.repeat(e[:, None, :], n, 1), np.repeat(e[None, :, :], n, 0)], -1)
    params = init_params(sig, theory, InitConfig(0))
    opt = synthesis.Adam(lr)
    for _ in range(steps):
        leaves = {k: ad.Tensor(v, True) for k, v in params.items() if k.startswith("pred")}
        loss = ad.Tensor(0.0)
        for p in ("li", "co", "di", "im"):
            y = getattr(net, p).astype(float)
            prob = ad.ntn(ad.Tensor(x), *(leaves[f"pred:{p}:{k}"] for k in "WVbU"))
            w = np.where(y > 0, 0.5 / y.mean(), 0.5 / (1 - y.mean())) / y.size
            ll = ad.add(ad.mul(ad.log(prob, 1e-7), y * w), ad.mul(ad.log(ad.sub(1.0, prob), 1e-7), (1 - y) * w))
            loss = ad.sub(loss, ad.sum_(ll))
        loss.backward()
        opt.step(params, {k: l.grad for k, l in leaves.items()})
    return params


def main(argv=None):
    ap = argparse.ArgumentParser(description="warm-start probe")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--stiffness", type=float, default=1000.0)
    args = ap.parse_args(argv)
    cfg = DemoConfig(seed=args.seed)
    net = generate_network(cfg)
    tf = bundled_theory(net, cfg)
    sig = tf.signature
    start = fit_to_truth(net, sig, tf.theory)
    print("after fitting to the truth:", score_recovery(start, net, sig))
    synthesis.init_params = lambda *a, **k: copy.deepcopy(start)
    scfg = demo_synth_config(args.seed, args.epochs)
    scfg.penalty_stiffness = args.stiffness
    try:
        res = synthesis.synthesize(tf.theory, sig, demo_binding(net), scfg)
    except synthesis.SynthesisFailed as e:
        res = e.best
    print(f"after theory training: likelihood {res.likelihood:.4f} feasible {res.feasible}")
    for a in res.axioms:
        if not a.in_interval:
            print(f"  {a.name}: mean {a.mean:.4f} outside [{a.lower:g}, {a.upper:g}]")
    print(score_recovery(res.params, net, sig))
    return 0


if __name__ == "__main__":
    sys.exit(main())
