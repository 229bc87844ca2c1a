"""Train the toy latent model on the bundled grammar and compare ASEU on
unambiguous (A) and two-answer (B) prompts, one run per seed.

    python scripts/aseu_directional.py --seeds 20
    python scripts/aseu_directional.py --seeds 5 --sigma-e2 0.1 --no-prefix-training
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace

from semuq.aseu.experiment import (
    EXPERIMENT_CONFIG,
    EXPERIMENT_EPOCHS,
    grammar_and_config,
    kind_means,
    run_directional,
    score_prompts,
    untrained_scores,
)
from semuq.aseu.scoring import ScoringConfig, posterior_entropy_score


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=EXPERIMENT_EPOCHS)
    ap.add_argument("--sigma-e2", type=float, default=EXPERIMENT_CONFIG.sigma_e2)
    ap.add_argument("--no-prefix-training", action="store_true")
    ap.add_argument("--k", type=int, default=10, help="latent samples per step")
    ap.add_argument("--length-norm", default="divide_by_length",
                    choices=["none", "divide_by_length", "divide_by_log_length"])
    args = ap.parse_args()

    base = replace(EXPERIMENT_CONFIG, sigma_e2=args.sigma_e2, prefix_training=not args.no_prefix_training)
    wins = 0
    print("seed  mean_A   mean_B   B>A  ent_A    ent_B    untrained_A(T=4)  trained_A(T=4)  secs")
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        t0 = time.perf_counter()
        scfg = ScoringConfig(k_samples=args.k, length_norm=args.length_norm, seed=seed)
        res = run_directional(seed, args.epochs, base, replace(scfg, eos_id=0))
        wins += res.b_above_a
        ent = {k: posterior_entropy_score(r) for k, r in res.scores.items()}
        ent_a = sum(v for k, v in ent.items() if k.startswith("A")) / sum(k.startswith("A") for k in ent)
        ent_b = sum(v for k, v in ent.items() if k.startswith("B")) / sum(k.startswith("B") for k in ent)
        # same fixed output length for both, so length normalisation does not favour either
        fixed = replace(scfg, eos_id=None, max_new_tokens=4)
        fresh_a = kind_means(untrained_scores(seed, base, fixed))[0]
        grammar, cfg = grammar_and_config(seed, base)
        trained_a = kind_means(score_prompts(grammar, res.trained.params, cfg, fixed))[0]
        print(f"{seed:>4}  {res.mean_a:.4f}   {res.mean_b:.4f}   {'yes' if res.b_above_a else 'NO ':3}  "
              f"{ent_a:+.3f}   {ent_b:+.3f}   {fresh_a:.4f}            {trained_a:.4f}          "
              f"{time.perf_counter() - t0:.1f}")
    print(f"B above A in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
