import json
import math
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.artifact_store import ArtifactStore, emit_table, read_table


class TestTables(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_is_bit_exact(self):
        print("\n[Test] Verifying CSV tables keep every float bit...")
        print("      - Rationale: acceptance values are compared to 1e-10 and beyond.")
        rows = [{"N": 50, "energy": -7.123456789012345, "ok": True}, {"N": 100, "energy": 1e-300 / 3, "ok": False}]
        path = emit_table(rows, os.path.join(self.tmp.name, "sub", "table.csv"),
                          provenance={"subcommand": "test", "config": {"model": {"p": 0.1}}})
        table = read_table(path)
        self.assertEqual(table["rows"], rows)
        self.assertEqual(table["columns"], ["N", "energy", "ok"])
        self.assertEqual(table["provenance"]["config"]["model"]["p"], 0.1)

    def test_json_tables(self):
        print("\n[Test] Verifying JSON tables carry provenance and non-finite values...")
        print("      - Rationale: infinite correlation rates must not produce invalid JSON.")
        path = os.path.join(self.tmp.name, "summary.json")
        emit_table([{"gamma": math.inf, "values": [0.1, 0.2]}], path, provenance={"version": "0.1.0"})
        with open(path, "r", encoding="utf-8") as f:
            body = json.load(f)
        self.assertEqual(body["rows"][0]["gamma"], "inf")
        self.assertEqual(read_table(path)["provenance"]["version"], "0.1.0")

    def test_empty_rows(self):
        print("\n[Test] Verifying an empty table still gets its header...")
        print("      - Rationale: downstream readers expect the declared columns.")
        path = emit_table([], os.path.join(self.tmp.name, "empty.csv"), columns=["a", "b"])
        table = read_table(path)
        self.assertEqual(table["columns"], ["a", "b"])
        self.assertEqual(table["rows"], [])
        with self.assertRaises(ValueError):
            emit_table([], os.path.join(self.tmp.name, "x.txt"), fmt="xml")

    def test_failed_write_cleans_up(self):
        print("\n[Test] Verifying a failed replace leaves no temporary file...")
        print("      - Rationale: atomic writes must never leave partial artefacts behind.")
        path = os.path.join(self.tmp.name, "broken.csv")
        with patch('src.artifact_store.os.replace', side_effect=OSError("disk full")):
            with self.assertRaises(OSError):
                emit_table([{"a": 1}], path)
        self.assertFalse(os.path.exists(f"{path}.tmp"))
        self.assertFalse(os.path.exists(path))


class TestArtifactStore(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.store = ArtifactStore(os.path.join(self.tmp.name, "results"))

    def tearDown(self):
        self.tmp.cleanup()

    def test_record_and_lookup(self):
        print("\n[Test] Verifying runs are recorded and found again...")
        print("      - Rationale: every subcommand invocation is indexed with its config.")
        first = self.store.record_run("surface", {"model": {"m": 2}}, ["a.csv"])
        second = self.store.record_run("surface", {"model": {"m": 3}}, ["b.csv"], status="failed")
        self.assertEqual(self.store.get_run(first)["files"], ["a.csv"])
        self.assertEqual(len(self.store.get_all_runs()), 2)
        self.assertEqual(self.store.latest_run("surface")["run_id"], second)
        self.assertIsNone(self.store.latest_run("sample"))
        self.assertIsNone(self.store.get_run("missing"))

    def test_corrupt_index_is_backed_up(self):
        print("\n[Test] Verifying a corrupt run index is backed up and reset...")
        print("      - Rationale: a damaged index must not block new runs.")
        with open(self.store.index_file, "w", encoding="utf-8") as f:
            f.write("{not json")
        self.assertEqual(self.store.get_all_runs(), [])
        self.assertTrue(os.path.exists(f"{self.store.index_file}.backup"))
        self.store.record_run("validate", {}, [])
        self.assertEqual(len(self.store.get_all_runs()), 1)


if __name__ == '__main__':
    unittest.main()
