"""Regenerate the figure data: TORA gamma sweep, manipulator and optimizer runs.

Writes CSV/JSON under ``--out`` (default ``runs/``) through the ``softreset`` CLI.
"""

import argparse
import sys
from pathlib import Path

from softreset.cli import main

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def jobs(out: Path):
    yield ["sweep", str(CONFIGS / "tora_soft.toml"), "--param", "gamma", "--values", "10,100,1000",
           "--out", str(out / "tora_gamma")]
    yield ["run", str(CONFIGS / "tora_none.toml"), "--out", str(out / "tora_none")]
    yield ["run", str(CONFIGS / "tora_hard.toml"), "--out", str(out / "tora_hard")]
    for mode_cfg in ("manipulator", "sc_opt"):
        yield ["run", str(CONFIGS / f"{mode_cfg}.toml"), "--out", str(out / mode_cfg)]
    yield ["sweep", str(CONFIGS / "sc_opt.toml"), "--param", "mode", "--values", "soft,none",
           "--out", str(out / "sc_opt_modes")]


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "runs"))
    args = ap.parse_args()
    worst = 0
    for argv in jobs(Path(args.out)):
        print("softreset", " ".join(argv), flush=True)
        worst = max(worst, main(argv + ["--quiet"]))
    sys.exit(worst)
