"""
Management command to write a demo case/control x timepoint dataset.
"""

from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from faker import Faker

from anova.io import write_csv
from anova.management.base import AnalysisCommand
from anova.stats.config import config
from anova.stats.design import DesignSpec, FactorSpec
from anova.stats.glm import ResponseMatrix
from anova.stats.impute import induce_missing
from anova.stats.numerics import RngStream

GROUPS = ("control", "case")
TIMEPOINTS = ("T1", "T2", "T3")

# Stream ids for the two random draws of one seed
_VALUES_STREAM = 11
_MISSING_STREAM = 12


class Command(AnalysisCommand):
    RESPONSE_COUNT = 14
    REPLICATES = 8
    MISSING_FRACTION = 0.05
    # Responses 0-3 differ by group, 2-5 by timepoint; the rest are noise.
    GROUP_EFFECTS = slice(0, 4)
    TIME_EFFECTS = slice(2, 6)
    help = "Writes demo_data.csv and demo_design.csv for trying the analysis commands"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.faker = Faker("en_GB")

    def add_arguments(self, parser):
        parser.add_argument("--out", help="Output directory (default: $FACTORLAB_OUTPUT_DIR/demo)")
        parser.add_argument("--seed", type=int, default=config.SEED, help="Seed for the values, missing mask and labels")
        parser.add_argument("--replicates", type=int, default=self.REPLICATES, help="Subjects per group and timepoint")
        parser.add_argument("--missing", type=float, default=self.MISSING_FRACTION, help="Fraction of entries masked")
        parser.add_argument("--no-outlier", action="store_true", help="Skip the planted outlier")

    def handle(self, *args, **options):
        out = Path(options["out"] or settings.FACTORLAB_OUTPUT_DIR / "demo")
        seed = options["seed"]
        self.faker.seed_instance(seed)

        with self.exit_codes():
            design_frame, design = self.build_design(options["replicates"])
            names = self.response_names()
            values, outlier = self.generate_values(design, names, seed, plant_outlier=not options["no_outlier"])
            matrix = ResponseMatrix.from_array(values, names)
            matrix = induce_missing(matrix, options["missing"], RngStream(seed, _MISSING_STREAM), design)

            write_csv(design_frame, out / "demo_design.csv")
            write_csv(matrix.to_frame(), out / "demo_data.csv")

        self.stdout.write(self.style.SUCCESS(f"✓ Wrote {design.n_obs} observations x {len(names)} responses"))
        if outlier is not None:
            row, column = outlier
            self.stdout.write(self.style.WARNING(f"Planted outlier: observation {row + 1}, response '{names[column]}'"))
        self.stdout.write(
            self.style.SUCCESS(
                f"Seeding complete! Try: manage.py analyze --data {out / 'demo_data.csv'} "
                f"--design {out / 'demo_design.csv'} --formula 'group+time+group*time'"
            )
        )

    def build_design(self, replicates):
        rows = [
            {"group": group, "time": time}
            for group in GROUPS
            for time in TIMEPOINTS
            for _ in range(replicates)
        ]
        frame = pd.DataFrame(rows)
        design = DesignSpec(
            (FactorSpec("group", len(GROUPS), GROUPS), FactorSpec("time", len(TIMEPOINTS), TIMEPOINTS)),
            np.column_stack(
                [
                    frame["group"].map({g: i + 1 for i, g in enumerate(GROUPS)}),
                    frame["time"].map({t: i + 1 for i, t in enumerate(TIMEPOINTS)}),
                ]
            ),
            ((0,), (1,), (0, 1)),
        )
        return frame, design

    def response_names(self):
        # Keep generating until the marker symbols are unique
        names = []
        while len(names) < self.RESPONSE_COUNT:
            symbol = f"{self.faker.lexify('???').upper()}{self.faker.random_int(1, 99)}"
            if symbol not in names:
                names.append(symbol)
        return names

    def generate_values(self, design, names, seed, plant_outlier=True):
        """Log-normal concentrations with group and time shifts on the log scale."""
        generator = RngStream(seed, _VALUES_STREAM).generator()
        n, m = design.n_obs, len(names)
        baseline = generator.uniform(1.0, 3.0, size=m)
        log_values = baseline + generator.normal(0.0, 0.4, size=(n, m))

        is_case = design.assignments[:, 0] == 2
        log_values[is_case, self.GROUP_EFFECTS] += 0.8
        time_shift = np.array([0.0, 0.5, 1.0])[design.assignments[:, 1] - 1]
        log_values[:, self.TIME_EFFECTS] += time_shift[:, None]
        values = np.exp(log_values)

        outlier = None
        if plant_outlier:
            row = int(generator.integers(n))
            column = m - 1
            values[row, column] = values[:, column].mean() + 10 * values[:, column].std(ddof=1)
            outlier = (row, column)
        return values, outlier
