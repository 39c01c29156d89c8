from pathlib import Path

from anova.management.base import AnalysisCommand
from anova.pipeline import run_validation
from anova.stats.config import config


class Command(AnalysisCommand):
    help = "Preflight a data/design pair: missingness per cell, CMR feasibility, normality screen"

    def add_arguments(self, parser):
        parser.add_argument("--data", required=True, help="Response CSV")
        parser.add_argument("--design", required=True, help="Design CSV")
        parser.add_argument("--formula", help="Model terms (only checked for validity)")
        parser.add_argument("--alpha", type=float, default=config.ALPHA, help="Normality test level")
        parser.add_argument("--out", help="Where cell_counts.csv, normality.csv and manifest.json go (default: $FACTORLAB_OUTPUT_DIR/validate)")

    def handle(self, *args, **options):
        out = Path(options["out"]) if options["out"] else None
        with self.exit_codes():
            result = run_validation(options["data"], options["design"], options["formula"], out, options["alpha"])

        counts = result.counts.set_index("cell")
        total = int(counts.to_numpy().sum())
        self.stdout.write("=== OBSERVED VALUES PER CELL ===")
        self.stdout.write(counts.to_string())
        missing = int(result.normality["n_missing"].sum())
        self.stdout.write(f"\n{total} observed, {missing} missing entries")

        if result.cmr_feasible:
            self.stdout.write(self.style.SUCCESS("CMR feasible: every cell has observed values for every response"))
        else:
            self.stdout.write(self.style.ERROR("CMR infeasible for:"))
            for cell, response in result.infeasible:
                self.stdout.write(f"  - ({cell}) response '{response}'")

        flagged = result.normality[result.normality["non_normal"]]
        if flagged.empty:
            self.stdout.write(self.style.SUCCESS("No response fails the normality screen"))
        else:
            self.stdout.write(self.style.WARNING(f"{len(flagged)} responses fail the normality screen:"))
            for _, row in flagged.iterrows():
                self.stdout.write(
                    f"  - {row['response']}: p={row['p_normal']:.4g}, suggested transform: {row['suggested_transform']}"
                )
