import os
import sys
import unittest
from pathlib import Path
from unittest.mock import patch

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.logger import OUTPUT_DIR_ENV, get_logger, resolve_output_dir


class TestLogger(unittest.TestCase):
    def test_singleton(self):
        print("\n[Test] Verifying the logger is a process-wide singleton...")
        print("      - Rationale: every module must write through the same handlers.")
        self.assertIs(get_logger(), get_logger())

    def test_levels(self):
        print("\n[Test] Verifying each log level reaches the 'chainlab' logger...")
        print("      - Rationale: numerical warnings must never be swallowed.")
        logger = get_logger()
        with self.assertLogs('chainlab', level='DEBUG') as logs:
            logger.debug("debug message")
            logger.info("info message")
            logger.warning("warning message")
            try:
                raise ValueError("Test error for logging")
            except ValueError as e:
                logger.error(f"error message: {str(e)}")
        self.assertEqual([r.levelname for r in logs.records], ["DEBUG", "INFO", "WARNING", "ERROR"])

    def test_stage_reports_outcome(self):
        print("\n[Test] Verifying stage() logs start, outcome and elapsed time...")
        print("      - Rationale: long computations are traced by stage records.")
        logger = get_logger()
        with self.assertLogs('chainlab', level='INFO') as logs:
            with logger.stage("unit"):
                pass
        self.assertIn("stage=unit status=start", logs.output[0])
        self.assertIn("stage=unit status=ok elapsed_ms=", logs.output[1])
        with self.assertLogs('chainlab', level='INFO') as logs:
            with self.assertRaises(RuntimeError):
                with logger.stage("broken"):
                    raise RuntimeError("boom")
        self.assertIn("stage=broken status=failed", logs.output[-1])

    def test_output_dir_override(self):
        print("\n[Test] Verifying CHAINLAB_OUTPUT_DIR overrides the output root...")
        print("      - Rationale: batch jobs redirect results without editing config files.")
        with patch.dict(os.environ, {OUTPUT_DIR_ENV: "/tmp/chainlab-out"}):
            self.assertEqual(resolve_output_dir(), "/tmp/chainlab-out")
        with patch.dict(os.environ, {OUTPUT_DIR_ENV: ""}):
            self.assertEqual(resolve_output_dir("fallback"), "fallback")


if __name__ == '__main__':
    unittest.main()
