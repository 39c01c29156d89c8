"""Run the GLM factorization and inference pipeline on a data/design pair."""

from pathlib import Path

from anova.management.base import AnalysisCommand
from anova.pipeline import MISSING_METHODS, PCMR, PERMUTATION, TESTS, PipelineConfig, run_analysis
from anova.stats.config import config
from anova.stats.infer import Correction, Scheme, Statistic
from anova.stats.transform import NONE, TRANSFORMS


class Command(AnalysisCommand):
    help = "Factorize a multi-response dataset and test every model term"

    def add_arguments(self, parser):
        parser.add_argument("--data", required=True, help="Response CSV (header = response names)")
        parser.add_argument("--design", required=True, help="Design CSV (header = factor names)")
        parser.add_argument(
            "--formula",
            help="Model terms, e.g. 'A+B+A*B' (default: main effects of every factor)",
        )
        parser.add_argument("--missing", choices=MISSING_METHODS, default=PCMR)
        parser.add_argument("--transform", choices=TRANSFORMS, default=NONE)
        parser.add_argument(
            "--boxcox-shift",
            action="store_true",
            help="Shift non-positive responses by 1 - min before Box-Cox",
        )
        parser.add_argument("--test", choices=TESTS, default=PERMUTATION)
        parser.add_argument("--stat", choices=[s.value for s in Statistic], default=Statistic.F_RATIO.value)
        parser.add_argument("--perms", type=int, default=config.N_PERMUTATIONS, help="Permutations B")
        parser.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.RAW.value)
        parser.add_argument("--mtc", choices=[c.value for c in Correction], default=Correction.BH.value)
        parser.add_argument("--alpha", type=float, default=config.ALPHA)
        parser.add_argument("--outlier-alpha", type=float, default=config.OUTLIER_ALPHA)
        parser.add_argument(
            "--components",
            type=int,
            help="Residual PCA components for the outlier screen (default: 70%% of variance)",
        )
        parser.add_argument("--remove-outliers", action="store_true", help="Drop flagged rows and refit once")
        parser.add_argument(
            "--dual-pipeline",
            action="store_true",
            help="Also compare raw data (with outlier removal) against rank-transformed data",
        )
        parser.add_argument("--asca", action="store_true", help="Write a PCA of every term's effect matrix")
        parser.add_argument("--group", help="Two-level factor for traditional or stratified tests")
        parser.add_argument("--stratify-by", help="Repeat the one-way test within each level of this factor")
        parser.add_argument("--welch", action="store_true", help="Welch instead of pooled t-tests")
        parser.add_argument("--plots", action="store_true", help="Also render SVG plots")
        self.add_common_arguments(parser)

    def handle(self, *args, **options):
        self.check_environment()
        cfg = PipelineConfig(
            data_path=Path(options["data"]),
            design_path=Path(options["design"]),
            formula=options["formula"],
            missing=options["missing"],
            transform=options["transform"],
            boxcox_shift=options["boxcox_shift"],
            test=options["test"],
            statistic=options["stat"],
            n_permutations=options["perms"],
            scheme=options["scheme"],
            correction=options["mtc"],
            alpha=options["alpha"],
            outlier_alpha=options["outlier_alpha"],
            n_components=options["components"],
            remove_outliers=options["remove_outliers"],
            dual_pipeline=options["dual_pipeline"],
            asca=options["asca"],
            group=options["group"],
            stratify_by=options["stratify_by"],
            welch=options["welch"],
            output_dir=Path(self.output_dir(options, "analyze")),
            seed=options["seed"],
            n_jobs=options["threads"],
            plots=options["plots"],
        )

        with self.exit_codes():
            result = run_analysis(cfg)

        report = result.outcome.report
        self.stdout.write(
            f"{len(report.response_names)} responses x {len(report.terms)} terms, "
            f"{report.test} test, {cfg.correction} correction"
        )
        frame = report.to_frame(cfg.alpha, cfg.correction)
        for term, rows in frame.groupby("term", sort=False):
            self.stdout.write(f"  {term}: {int(rows['significant'].sum())}/{len(rows)} significant at {cfg.alpha}")

        outliers = result.outcome.outliers
        if outliers is not None and outliers.flagged.size:
            ids = [int(i) for i in outliers.observation_ids[outliers.flagged]]
            action = "removed" if result.outcome.removed else "flagged"
            self.stdout.write(self.style.WARNING(f"Outlying observations {action}: {ids}"))

        if result.consistency is not None:
            disagree = int((result.consistency["verdict"] == "disagree").sum())
            style = self.style.WARNING if disagree else self.style.SUCCESS
            self.stdout.write(style(f"Raw vs rank pipelines: {disagree} disagreements"))

        for message in result.manifest.warnings:
            self.stdout.write(self.style.WARNING(f"warning: {message}"))
        self.stdout.write(
            self.style.SUCCESS(f"Analysis complete! Wrote {len(result.outputs) + 1} files to {cfg.output_dir}")
        )
