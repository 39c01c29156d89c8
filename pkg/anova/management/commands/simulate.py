"""Regenerate the simulation studies: SS table, imputation error curves, power curves."""

from dataclasses import replace

from anova.management.base import AnalysisCommand, float_list, name_list
from anova.pipeline import run_simulation
from anova.stats import sim
from anova.stats.config import config
from anova.stats.exceptions import InvalidConfig


class Command(AnalysisCommand):
    help = "Run a simulation study (table1, fig1 or power) and write its tables"

    def add_arguments(self, parser):
        parser.add_argument("study", choices=["table1", "fig1", "power"])
        parser.add_argument(
            "--missing",
            type=float,
            default=0.05,
            help="table1: fraction of entries masked completely at random",
        )
        parser.add_argument("--sims", type=int, default=10, help="table1: simulated datasets averaged")
        parser.add_argument(
            "--grid",
            type=float_list,
            help="fig1: missing fractions; power: effect sizes (comma-separated)",
        )
        parser.add_argument("--replicates", type=int, help="fig1/power: replicates per grid point")
        parser.add_argument("--perms", type=int, default=200, help="fig1/power: permutations B")
        parser.add_argument(
            "--models",
            type=name_list,
            default=tuple(sim.MODELS),
            help="fig1: comma-separated models (additive, interaction)",
        )
        parser.add_argument(
            "--dist",
            type=name_list,
            default=(sim.NORMAL,),
            help=f"power: residual distributions, comma-separated or 'all' ({', '.join(sim.DISTRIBUTIONS)})",
        )
        parser.add_argument(
            "--transforms",
            type=name_list,
            default=sim.POWER_TRANSFORMS,
            help="power: transforms compared",
        )
        parser.add_argument("--responses", type=int, help="Responses per simulated dataset")
        parser.add_argument("--alpha", type=float, default=config.ALPHA)
        parser.add_argument("--check", action="store_true", help="Print pass/fail for the ordering checks")
        parser.add_argument("--plots", action="store_true", help="Also render SVG line plots")
        self.add_common_arguments(parser)

    def handle(self, *args, **options):
        self.check_environment()
        study = options["study"]
        with self.exit_codes():
            cfg, params = self.build(study, options)
            out = self.output_dir(options, f"simulate_{study}")
            self.stdout.write(f"Running {study} simulation into {out}...")
            result = run_simulation(study, cfg, params, out, render=options["plots"])

        for message in dict.fromkeys(result.warnings):
            self.stdout.write(self.style.WARNING(f"warning: {message}"))
        if options["check"]:
            for check in result.checks:
                style = self.style.SUCCESS if check.passed else self.style.ERROR
                verdict = "PASS" if check.passed else "FAIL"
                self.stdout.write(style(f"CHECK {verdict} {check.name}: {check.detail}"))
            summary = "passed" if result.passed else "failed"
            self.stdout.write(f"{study} checks {summary} ({sum(c.passed for c in result.checks)}/{len(result.checks)})")
        self.stdout.write(self.style.SUCCESS(f"Simulation complete! Wrote {len(result.outputs) + 1} files."))

    def build(self, study, options):
        """SimConfig and study parameters from the parsed flags."""
        base = sim.power_config() if study == "power" else sim.SimConfig()
        cfg = replace(base, seed=options["seed"], n_jobs=options["threads"])
        if options["responses"] is not None:
            if options["responses"] < 1:
                raise InvalidConfig("--responses must be at least 1")
            cfg = replace(cfg, n_responses=options["responses"])

        if study == "table1":
            if options["sims"] < 1:
                raise InvalidConfig("--sims must be at least 1")
            return cfg, {"n_sims": options["sims"], "missing_fraction": options["missing"]}

        if study == "fig1":
            unknown = [m for m in options["models"] if m not in sim.MODELS]
            if unknown:
                raise InvalidConfig(f"unknown models {unknown}, expected {list(sim.MODELS)}")
            return cfg, {
                "missing_grid": options["grid"] or sim.DEFAULT_MISSING_GRID,
                "n_replicates": options["replicates"] or 20,
                "n_permutations": options["perms"],
                "models": options["models"],
            }

        distributions = sim.DISTRIBUTIONS if options["dist"] == ("all",) else options["dist"]
        unknown = [d for d in distributions if d not in sim.DISTRIBUTIONS]
        unknown += [t for t in options["transforms"] if t not in sim.POWER_TRANSFORMS]
        if unknown:
            raise InvalidConfig(f"unknown distributions or transforms {unknown}")
        return cfg, {
            "effect_grid": options["grid"] or sim.DEFAULT_EFFECT_GRID,
            "transforms": options["transforms"],
            "distributions": distributions,
            "n_replicates": options["replicates"] or 300,
            "n_permutations": options["perms"],
            "alpha": options["alpha"],
        }
