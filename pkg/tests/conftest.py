"""Suite-wide setup: model loaders the test descriptions refer to."""

import sys

from tenstream.elements.filters import (ToyPlugin, list_frameworks,
                                        register_plugin)


def pytest_configure(config):
    # test descriptions name their model runner "tflite"; serve those model
    # files with the deterministic built-in runner under that framework name
    if "tflite" not in list_frameworks():
        register_plugin(ToyPlugin("tflite"))


def pytest_terminal_summary(terminalreporter):
    # end-to-end requirement results, printed outside output capture
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("requirement results")
        for line in lines:
            terminalreporter.write_line(line)
