"""Walk the FLIP example through augmentation, abstraction and the guarantees.

Usage: python3 scripts/flip_walkthrough.py [--success P] [--delay D] [--epsilon E]
"""

from __future__ import annotations

import argparse

from dhrl.envs import make_flip
from dhrl.experiments import build_pipeline, lifted_optimal_policy
from dhrl.guarantees import compression_report, value_loss_report


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--success", type=float, default=1.0, help="flip success probability")
    parser.add_argument("--delay", type=int, default=1)
    parser.add_argument("--epsilon", type=float, default=None, help="omit for the exact partition")
    args = parser.parse_args(argv)

    p = build_pipeline(make_flip(args.success), args.delay, args.epsilon)
    print(f"{p.aug.num_states} augmented states -> {p.hom.num_abstract_states} blocks")
    for i, x in enumerate(p.aug.states):
        print(f"  x{i} = (s{x.base_state}, {list(x.action_history)})  belief {p.aug.beliefs[i].round(4).tolist()}  block {p.hom.f_x[i]}")
    policy, sol = lifted_optimal_policy(p)
    print(f"abstract V* = {sol.v.round(6).tolist()}")
    print(f"lifted actions = {policy.actions().tolist()}")
    comp = compression_report(p.aug, p.hom)
    print(f"zeta = {comp.zeta} (bound {comp.bound})")
    loss = value_loss_report(p.aug, p.abstract, p.hom)
    print(f"C1 = {loss.c1:.4g}, C2 = {loss.c2:.4g}, xi = {loss.xi:.4g}, bound = {loss.bound:.4g}, measured = {loss.measured:.3g}")


if __name__ == "__main__":
    main()
