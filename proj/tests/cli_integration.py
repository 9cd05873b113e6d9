#!/usr/bin/env python3
"""End-to-end checks of the ionrf command-line tool.

Usage: cli_integration.py <ionrf executable> <source dir>
"""

import csv
import json
import re
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

EXE = None
SRC = None


def run(*args, cwd=None):
    return subprocess.run([str(EXE), *map(str, args)], capture_output=True, text=True, cwd=cwd, timeout=240)


def load_jsonc(path):
    text = "\n".join(line for line in Path(path).read_text().splitlines() if not line.lstrip().startswith("//"))
    return json.loads(text)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def schema(name):
    return json.loads((SRC / "schemas" / f"{name}.schema.json").read_text())


def validate(doc, name):
    jsonschema.Draft202012Validator(schema(name)).validate(doc)


def write_config(directory, doc):
    path = Path(directory) / "config.json"
    path.write_text(json.dumps(doc))
    return path


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def ok(self, *args):
        result = run(*args)
        self.assertEqual(result.returncode, 0, msg=f"{args}\nstdout:{result.stdout}\nstderr:{result.stderr}")
        return result

    def config(self, name):
        return SRC / "configs" / name


class HelpText(CliTestCase):
    def test_root_help_lists_subcommands(self):
        out = self.ok("--help").stdout
        for sub in ("chain", "address", "spectrum", "protocol", "fit"):
            self.assertIn(sub, out)
        for flag in ("--config", "--seed", "--out", "--format"):
            self.assertIn(flag, out)

    def test_every_subcommand_documents_units(self):
        for sub in ("chain", "address", "spectrum", "protocol", "fit"):
            out = self.ok(sub, "--help").stdout
            for unit in ("[Hz]", "[T]", "[T/m]", "[s]", "[u]", "[e]", "[1/s]", "[K]", "[counts/s"):
                self.assertIn(unit, out, msg=f"{sub} --help lacks {unit}")
            self.assertRegex(out, r"\[m\]")

    def test_fit_help_lists_flags_with_units(self):
        out = self.ok("fit", "--help").stdout
        self.assertRegex(out, r"--trap-hz.*\[Hz\]")
        self.assertRegex(out, r"--eta-eff.*\[dimensionless\]")
        for flag in ("--components", "--compare", "--thermometry"):
            self.assertIn(flag, out)


@unittest.skipUnless(jsonschema, "jsonschema module not available")
class Schemas(CliTestCase):
    def test_schema_files_are_valid(self):
        for path in sorted((SRC / "schemas").glob("*.schema.json")):
            jsonschema.Draft202012Validator.check_schema(json.loads(path.read_text()))

    def test_example_configs_validate(self):
        paths = sorted((SRC / "configs").glob("*.jsonc"))
        self.assertGreaterEqual(len(paths), 3)
        for path in paths:
            validate(load_jsonc(path), "config")

    def test_reports_validate(self):
        cfg = self.config("sideband_thermometry.jsonc")
        out = self.tmp
        self.ok("chain", "--config", self.config("two_ion_reference.jsonc"), "--out", out)
        self.ok("address", "--config", self.config("two_ion_reference.jsonc"), "--out", out)
        self.ok("spectrum", "--config", cfg, "--out", out)
        self.ok("protocol", "--config", cfg, "--out", out)
        validate(json.loads((out / "chain_summary.json").read_text()), "chain_summary")
        validate(json.loads((out / "address.json").read_text()), "address")
        validate(json.loads((out / "spectrum_summary.json").read_text()), "spectrum_summary")
        validate(json.loads((out / "protocol.json").read_text()), "protocol")

        fits = [
            ("spectrum.csv", "--components", "3", "--compare", "2,3", "--thermometry", "--eta-eff", "1.1e-3",
             "--trap-hz", "46e3"),
            ("campaign_reduced.csv", "--folded-carrier-fwhm", "20e3", "--trap-hz", "46e3", "--thermometry",
             "--eta-eff", "1.1e-3"),
        ]
        for data, *flags in fits:
            fit_dir = self.tmp / f"fit_{data}"
            self.ok("fit", out / data, *flags, "--out", fit_dir)
            validate(json.loads((fit_dir / "fit.json").read_text()), "fit")

    def test_unknown_key_also_fails_schema(self):
        with self.assertRaises(jsonschema.ValidationError):
            validate({"trap": {"axial_hz": 1e3, "bogus": 1}}, "config")


class Determinism(CliTestCase):
    def run_all(self, out, seed):
        cfg = self.config("sideband_thermometry.jsonc")
        for sub in ("chain", "address", "spectrum", "protocol"):
            self.ok(sub, "--config", cfg, "--seed", seed, "--out", out)
        self.ok("fit", out / "campaign_reduced.csv", "--config", cfg, "--components", "2", "--compare", "1,2",
                "--out", out)
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    def test_reruns_are_byte_identical(self):
        first = self.run_all(self.tmp / "a", 11)
        second = self.run_all(self.tmp / "b", 11)
        self.assertEqual(sorted(first), sorted(second))
        for name in first:
            self.assertEqual(first[name], second[name], msg=name)

    def test_seed_changes_campaign(self):
        cfg = self.config("sideband_thermometry.jsonc")
        self.ok("protocol", "--config", cfg, "--seed", 1, "--out", self.tmp / "a")
        self.ok("protocol", "--config", cfg, "--seed", 2, "--out", self.tmp / "b")
        self.assertNotEqual((self.tmp / "a" / "campaign_raw.csv").read_bytes(),
                            (self.tmp / "b" / "campaign_raw.csv").read_bytes())

    def test_config_seed_matches_flag(self):
        cfg = load_jsonc(self.config("sideband_thermometry.jsonc"))
        cfg["seed"] = 5
        path = write_config(self.tmp, cfg)
        self.ok("protocol", "--config", path, "--out", self.tmp / "a")
        self.ok("protocol", "--config", self.config("sideband_thermometry.jsonc"), "--seed", 5,
                "--out", self.tmp / "b")
        self.assertEqual((self.tmp / "a" / "campaign_raw.csv").read_bytes(),
                         (self.tmp / "b" / "campaign_raw.csv").read_bytes())

    def test_no_temporary_files_left(self):
        files = self.run_all(self.tmp / "a", 3)
        self.assertFalse([n for n in files if n.endswith(".tmp")])


NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:e[-+]?\d+)?")


def significant_digits(token):
    mantissa = token.lstrip("-").split("e")[0].replace(".", "").lstrip("0")
    return len(mantissa.rstrip("0")) if "." not in token.split("e")[0] else len(mantissa)


class Precision(CliTestCase):
    def test_outputs_use_at_most_12_significant_digits(self):
        cfg = self.config("sideband_thermometry.jsonc")
        for sub in ("chain", "address", "spectrum", "protocol"):
            self.ok(sub, "--config", cfg, "--out", self.tmp)
        for path in self.tmp.iterdir():
            for token in NUMBER.findall(path.read_text()):
                self.assertLessEqual(significant_digits(token), 12, msg=f"{path.name}: {token}")


class Chain(CliTestCase):
    def chain(self, ions, axial_hz=36300.0):
        out = self.tmp / f"chain{ions}"
        self.ok("chain", "--config", write_config(self.tmp, {"ions": ions, "trap": {"axial_hz": axial_hz}}),
                "--out", out)
        return read_csv(out / "chain.csv"), json.loads((out / "chain_summary.json").read_text())

    def test_two_ion_separation(self):
        rows, summary = self.chain(2)
        self.assertEqual(len(rows), 2)
        self.assertAlmostEqual(float(rows[0]["separation_to_next_m"]), 31.4365e-6, delta=0.01e-6)
        self.assertEqual(rows[1]["separation_to_next_m"], "")
        self.assertEqual(summary["separations_m"][0], float(rows[0]["separation_to_next_m"]))

    def test_single_ion_sits_at_origin(self):
        rows, summary = self.chain(1)
        self.assertEqual(float(rows[0]["position_m"]), 0.0)
        self.assertEqual(summary["separations_m"], [])
        self.assertIsNone(summary["min_separation_m"])

    def test_three_to_two_ion_separation_ratio(self):
        _, two = self.chain(2)
        _, three = self.chain(3)
        ratio = two["separations_m"][0] / three["separations_m"][0]
        self.assertAlmostEqual(ratio, (8 / 5) ** (1 / 3), delta=1e-9)
        self.assertAlmostEqual(three["separations_m"][0], three["separations_m"][1], delta=1e-15)

    def test_json_table_format(self):
        out = self.tmp / "j"
        self.ok("chain", "--format", "json", "--out", out)
        rows = json.loads((out / "chain.json").read_text())
        self.assertEqual(len(rows), 2)
        self.assertIsNone(rows[1]["separation_to_next_m"])


class Address(CliTestCase):
    def test_reference_settings(self):
        self.ok("address", "--config", self.config("two_ion_reference.jsonc"), "--out", self.tmp)
        report = json.loads((self.tmp / "address.json").read_text())
        self.assertTrue(91e3 <= report["min_splitting_hz"] <= 96e3)
        self.assertTrue(0.06 <= report["worst_crosstalk"] <= 0.07)
        self.assertFalse(report["distinguishable"])
        self.assertGreater(report["required_gradient_tesla_per_m"], 0.27)
        rows = read_csv(self.tmp / "address_frequencies.csv")
        self.assertAlmostEqual((float(rows[0]["frequency_hz"]) + float(rows[1]["frequency_hz"])) / 2, 7.50e6,
                               delta=0.005 * 7.5e6)

    def test_zero_gradient_warns(self):
        path = write_config(self.tmp, {"field": {"gradient_tesla_per_m": 0.0}})
        result = self.ok("address", "--config", path, "--out", self.tmp)
        self.assertIn("warning", result.stderr)
        report = json.loads((self.tmp / "address.json").read_text())
        self.assertEqual(report["worst_crosstalk"], 1.0)
        self.assertEqual(report["frequencies_hz"][0], report["frequencies_hz"][1])
        self.assertTrue(report["warnings"])

    def test_forty_ions_distinguishable(self):
        self.ok("address", "--config", self.config("forty_ion.jsonc"), "--out", self.tmp)
        report = json.loads((self.tmp / "address.json").read_text())
        self.assertEqual(report["n_ions"], 40)
        self.assertTrue(report["distinguishable"])
        self.assertLess(report["worst_crosstalk"], 0.01)


class SpectrumAndFit(CliTestCase):
    def spectrum(self, doc):
        out = self.tmp / "spec"
        self.ok("spectrum", "--config", write_config(self.tmp, doc), "--out", out)
        return out

    def test_single_ion_line_is_symmetric(self):
        out = self.spectrum({"ions": 1, "grid": {"start_hz": -100e3, "stop_hz": 100e3, "step_hz": 5e3}})
        rows = read_csv(out / "spectrum.csv")
        signal = [float(r["signal"]) for r in rows]
        self.assertEqual(signal, signal[::-1])
        self.assertEqual(max(signal), signal[len(signal) // 2])

    def test_two_ion_round_trip(self):
        out = self.spectrum({"ions": 2, "grid": {"start_hz": -250e3, "stop_hz": 250e3, "step_hz": 5e3}})
        summary = json.loads((out / "spectrum_summary.json").read_text())
        expected = sorted(f - summary["reference_hz"] for f in summary["ion_frequencies_hz"])
        self.ok("fit", out / "spectrum.csv", "--components", "2", "--out", self.tmp)
        report = json.loads((self.tmp / "fit.json").read_text())
        centers = sorted(c["center_hz"] for c in report["fit"]["components"])
        # Unit sigmas: the stopping rule resolves centers to ~1e-6 of the line width.
        for got, want in zip(centers, expected):
            self.assertAlmostEqual(got, want, delta=0.05)
        self.assertTrue(report["fit"]["converged"])
        self.assertAlmostEqual(report["derived"]["splittings_hz"][0]["value"], expected[1] - expected[0], delta=0.1)

    def test_sideband_thermometry(self):
        out = self.tmp / "spec"
        self.ok("spectrum", "--config", self.config("sideband_thermometry.jsonc"), "--out", out)
        self.ok("fit", out / "spectrum.csv", "--components", "3", "--thermometry", "--eta-eff", "1.1e-3",
                "--trap-hz", "46e3", "--out", self.tmp)
        report = json.loads((self.tmp / "fit.json").read_text())
        self.assertAlmostEqual(report["derived"]["sideband_ratio"]["value"], 0.084, delta=1e-6)
        n = report["thermometry"]["mean_phonon"]["value"]
        self.assertTrue(6.8e4 <= n <= 7.0e4, n)
        self.assertAlmostEqual(report["thermometry"]["temperature_k"]["value"], 0.1533, delta=1e-3)

    def test_model_comparison_on_campaign(self):
        cfg = self.config("sideband_thermometry.jsonc")
        self.ok("protocol", "--config", cfg, "--out", self.tmp)
        self.ok("fit", self.tmp / "campaign_reduced.csv", "--compare", "1,2", "--out", self.tmp)
        report = json.loads((self.tmp / "fit.json").read_text())
        self.assertEqual(report["comparison"]["preferred_components"], 2)
        q1, q2 = (m["q_value"] for m in report["comparison"]["models"])
        self.assertLess(q1, 1e-3)
        self.assertGreaterEqual(q2, 1e-3)

    def test_protocol_recovers_ratio(self):
        self.ok("protocol", "--config", self.config("sideband_thermometry.jsonc"), "--out", self.tmp)
        report = json.loads((self.tmp / "protocol.json").read_text())
        ratio = report["sideband_fit"]["ratio"]
        self.assertLess(abs(ratio["value"] - 0.084), 3 * ratio["error"])
        self.assertTrue(report["center_check"]["passed"])
        self.assertEqual(report["n_records"], 7 * 40 * 16)
        rows = read_csv(self.tmp / "campaign_reduced.csv")
        self.assertEqual(list(rows[0]), ["frequency_hz", "signal", "sigma"])

    def test_two_column_input_warns(self):
        out = self.spectrum({"ions": 1})
        result = self.ok("fit", out / "spectrum.csv", "--out", self.tmp)
        self.assertIn("sigma", result.stderr)

    def test_rate_model_spectrum(self):
        self.ok("spectrum", "--config", self.config("rate_model.jsonc"), "--out", self.tmp)
        signal = [float(r["signal"]) for r in read_csv(self.tmp / "spectrum.csv")]
        self.assertTrue(all(s >= 0 for s in signal))
        self.assertGreater(max(signal), 0)


class ExitCodes(CliTestCase):
    def code(self, *args):
        return run(*args).returncode

    def test_config_errors(self):
        cases = [
            {"trap": {"axial_hz": 36.3e3, "bogus": 1}},
            {"unknown_section": {}},
            {"ions": 0},
            {"trap": {"axial_hz": -1}},
            {"field": {"offset_tesla": -1e-3}},
            {"line": {"kind": "gaussian"}},
            {"sidebands": {"mean_phonon": 1, "temperature_k": 1}},
            {"ions": "two"},
        ]
        for doc in cases:
            path = write_config(self.tmp, doc)
            for sub in ("chain", "address") if "field" not in doc else ("address",):
                self.assertEqual(self.code(sub, "--config", path, "--out", self.tmp), 2, msg=f"{sub} {doc}")

    def test_malformed_and_missing_config(self):
        bad = self.tmp / "bad.json"
        bad.write_text("{ not json")
        self.assertEqual(self.code("chain", "--config", bad), 2)
        self.assertEqual(self.code("chain", "--config", self.tmp / "missing.json"), 2)
        self.assertEqual(self.code("chain", "--format", "xml"), 2)
        self.assertEqual(self.code("nonsense"), 2)
        self.assertEqual(self.code("fit", self.tmp / "missing.csv", "--out", self.tmp), 2)

    def test_solver_non_convergence(self):
        path = write_config(self.tmp, {"ions": 40, "solver": {"max_iterations": 1}})
        result = run("chain", "--config", path, "--out", self.tmp)
        self.assertEqual(result.returncode, 3)
        self.assertFalse((self.tmp / "chain.csv").exists())

    def test_fit_non_convergence_still_writes_report(self):
        self.ok("protocol", "--config", self.config("sideband_thermometry.jsonc"), "--out", self.tmp)
        path = write_config(self.tmp, {"fit": {"max_iterations": 1}})
        result = run("fit", self.tmp / "campaign_reduced.csv", "--config", path, "--components", "2",
                     "--out", self.tmp / "f")
        self.assertEqual(result.returncode, 4)
        report = json.loads((self.tmp / "f" / "fit.json").read_text())
        self.assertFalse(report["fit"]["converged"])
        if jsonschema:
            validate(report, "fit")

    def test_rank_deficient_fit_is_exit_4(self):
        data = self.tmp / "flat.csv"
        data.write_text("frequency_hz,signal,sigma\n" + "".join(f"{1e12 + f},1,0.1\n" for f in range(0, 100000, 5000)))
        result = run("fit", data, "--folded-carrier-fwhm", "20e3", "--trap-hz", "46e3", "--out", self.tmp)
        self.assertEqual(result.returncode, 4)
        report = json.loads((self.tmp / "fit.json").read_text())
        self.assertFalse(report["fit"]["converged"])
        self.assertTrue(report["error"])


def main():
    global EXE, SRC
    if len(sys.argv) < 3:
        print(__doc__, file=sys.stderr)
        return 2
    EXE = Path(sys.argv[1]).resolve()
    SRC = Path(sys.argv[2]).resolve()
    program = unittest.main(argv=[sys.argv[0], "-v"], exit=False)
    return 0 if program.result.wasSuccessful() else 1


if __name__ == "__main__":
    sys.exit(main())
