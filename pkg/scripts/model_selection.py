"""Cross-validated log-loss over the dimensionality-reduction grid.

Every PCA / PLS / PCA+PLS size with and without deflation and adjustment, on
one synthetic cohort, plus the confounder-only baseline. Folds are stratified
and seeded; all fitting happens inside the training folds.

    python scripts/model_selection.py --folds 10 --out results/cv_grid.csv
"""

import argparse
import math
from itertools import product
from pathlib import Path

import pandas as pd

from morpho.discriminant import PipelineConfig, confounder_only_cv, cross_validate
from morpho.runtime import pmap
from morpho.synth import generate, imbalance_spec

CONFOUNDERS = ("age", "bsa", "sex", "bmi")
PCA_SIZES = (5, 10, 20, 40)
PLS_SIZES = (1, 2, 3, 5)


def grid(folds, seed):
    dr = [("pca", p, 3) for p in PCA_SIZES]
    dr += [("pls", 20, k) for k in PLS_SIZES]
    dr += [("pca+pls", p, k) for p in (10, 20, 40) for k in (2, 3, 5) if k <= p]
    for (method, p, k), deflate, adjust in product(dr, (False, True), (False, True)):
        yield PipelineConfig(
            dr_method=method,
            pca_modes=p,
            pls_modes=k,
            deflate=deflate,
            adjust=adjust,
            confounders=CONFOUNDERS,
            cv_folds=folds,
            seed=seed,
        )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cohort-seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/cv_grid.csv"))
    args = ap.parse_args()

    cohort, _ = generate(imbalance_spec(args.cohort_seed))
    cfgs = list(grid(args.folds, args.seed))
    losses = pmap(lambda c: cross_validate(cohort, c), cfgs)
    df = pd.DataFrame(
        {
            "config": [c.label for c in cfgs],
            "deflate": [c.deflate for c in cfgs],
            "adjust": [c.adjust for c in cfgs],
            "log_loss": losses,
        }
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(args.out, index=False, float_format="%.17g")

    table = df.pivot_table(index="config", columns=["deflate", "adjust"], values="log_loss", sort=False)
    table.columns = [f"{'defl' if d else 'raw'}/{'adj' if a else 'unadj'}" for d, a in table.columns]
    print(table.to_string(float_format=lambda v: f"{v:.3f}"))
    base = confounder_only_cv(cohort, CONFOUNDERS, args.folds, args.seed)
    print(f"\nchance {math.log(2):.3f}, confounders only {base:.3f}")
    best = df.loc[df["log_loss"].idxmin()]
    print(f"best: {best['config']} deflate={best['deflate']} adjust={best['adjust']} ({best['log_loss']:.3f})")


if __name__ == "__main__":
    main()
