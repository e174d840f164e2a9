"""Action-space coverage: PCA of generated versus source end-effector actions.

Generates a dataset, then writes projections.csv, projections.svg and
stats.json next to it.

    python3 scripts/pca_coverage.py --task tray-lift --variant D1 --n 100 --out runs/pca
"""

import argparse
import json
from pathlib import Path

from dexgen.datagen import GenConfig, generate_dataset
from dexgen.dataset import compute_stats, projections_csv, projections_svg
from dexgen.demo import scripted_expert, segment
from dexgen.tasks import builtin_task


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="tray-lift")
    ap.add_argument("--variant", default="D1")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--sources", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="runs/pca")
    args = ap.parse_args()

    task = builtin_task(args.task)
    demos = [scripted_expert(task, 1000 + i) for i in range(args.sources)]
    eps, gs = generate_dataset(task, [segment(d, task) for d in demos], GenConfig(seed=args.seed, variant=args.variant), args.n)
    report = compute_stats(eps, demos)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "projections.csv").write_text(projections_csv(report))
    (out / "projections.svg").write_text(projections_svg(report))
    (out / "stats.json").write_text(json.dumps({**report.summary(), "gen_stats": gs.to_dict()}, indent=1))
    print(f"{args.task} {args.variant}: {len(eps)} episodes, generation rate {gs.success_rate:.3f}")
    for name, fam in report.families.items():
        if fam.explained_variance_ratio is None:
            print(f"  {name}: {fam.note}")
        else:
            r = fam.explained_variance_ratio
            inside = fam.source_inside_generated_hull
            extra = "" if inside is None else f", sources inside generated hull: {inside}"
            print(f"  {name}: PC1 {r[0]:.3f}, PC2 {r[1] if len(r) > 1 else 0.0:.3f}{extra}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
