from __future__ import annotations

import pytest

# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


def fast_cli_cases(tmp) -> list[tuple[str, list[str]]]:
    """One quick invocation per subcommand, writing into ``tmp``."""
    from decigibbs.lattice import Boundary, SpinField

    field = tmp / "field.txt"
    field.write_text(SpinField.from_sites(4, [(0, 0), (1, 0), (2, 1)], Boundary.plus()).to_text())
    image = tmp / "image.txt"
    image.write_text(SpinField.from_sites(2, [(0, 0), (-1, 0)], Boundary.plus()).to_text())
    return [
        ("kernel", ["kernel", "--shape", "3x1", "--beta", "0.4", "--out", str(tmp / "kernel.csv")]),
        ("sample", ["sample", "--n", "3", "--sweeps", "200", "--burn-in", "10", "--seed", "3", "--out", str(tmp / "samples.csv")]),
        ("sample-wolff", ["sample", "--n", "3", "--sweeps", "200", "--burn-in", "10", "--algorithm", "wolff", "--out", str(tmp / "wolff.csv")]),
        ("decimate", ["decimate", "--in", str(field), "--out", str(tmp / "decimated.txt")]),
        ("probe", ["probe-discontinuity", "--windows", "8", "--sweeps", "400", "--burn-in", "40", "--out", str(tmp / "probe.csv")]),
        ("potential-exact", ["potential", "--field", str(image), "--mmax", "2", "--out", str(tmp / "psi.csv")]),
        ("potential-mc", ["potential", "--mode", "mc", "--field", str(image), "--mmax", "2", "--window", "4", "--sweeps", "400", "--burn-in", "40", "--out", str(tmp / "psi_mc.csv")]),
        ("census", ["amoeba-census", "--beta", "0.6", "--samples", "20", "--n", "8", "--burn-in", "50", "--out", str(tmp / "census.csv")]),
        ("qcd", ["qcd", "--fields", "1", "--mmax", "4", "--image-half", "4", "--proxy-sweeps", "100", "--sweeps", "200", "--burn-in", "20", "--out", str(tmp / "qcd")]),
        ("entropy", ["entropy", "--samples", "100", "--n", "4", "--k", "1,2", "--out", str(tmp / "entropy.csv")]),
        ("entropy-relative", ["entropy", "--mode", "relative", "--beta", "0.5", "--beta-nu", "0.6", "--samples", "100", "--n", "4", "--k", "1", "--out", str(tmp / "rel.csv")]),
    ]


def manifest_for(argv: list[str]):
    from pathlib import Path

    out = Path(argv[argv.index("--out") + 1])
    return out / "manifest.json" if argv[0] == "qcd" else out.with_name(out.name + ".manifest.json")
