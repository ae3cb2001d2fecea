"""Regenerate the bundled degradation surrogate from a search config.

    python scripts/build_surrogate.py configs/toy_search.toml src/ehexit/data/toy_surrogate.json
"""
import json
import sys

from ehexit.config import load_config
from ehexit.experiment import build_surrogate


def main() -> None:
    cfg = load_config(sys.argv[1])
    sur = build_surrogate(cfg)
    with open(sys.argv[2], "w", encoding="utf-8") as f:
        json.dump(sur.to_dict(), f)
        f.write("\n")


if __name__ == "__main__":
    main()
