"""Write the library scenarios and the default configuration as plain files.

    python3 scripts/make_scenarios.py [--root .]

Produces scenarios/<name>.json for every builder in ltvm.worlds and
configs/default.cfg with every tunable at its default.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from ltvm.core import Config, SensorModel, format_config
from ltvm.scangen import save_scenario
from ltvm.worlds import LIBRARY


def main() -> None:
    ap = argparse.ArgumentParser(description="Export scenario and configuration files.")
    ap.add_argument("--root", type=Path, default=Path(__file__).resolve().parent.parent)
    args = ap.parse_args()
    (args.root / "scenarios").mkdir(exist_ok=True)
    (args.root / "configs").mkdir(exist_ok=True)
    for name, build in sorted(LIBRARY.items()):
        path = args.root / "scenarios" / f"{name}.json"
        save_scenario(build(), path)
        print(path)
    cfg = args.root / "configs" / "default.cfg"
    cfg.write_text("# thresholds, constants and sensor noise model; key = value\n"
                   + format_config(Config(), SensorModel()))
    print(cfg)


if __name__ == "__main__":
    main()
