"""Recompute the frozen oracle values in tests/data.

Run from the repository root:  python tests/freeze_oracles.py
The fine-step parcel integration takes about a minute.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from oracles import fine_step_cape, flash_rate_scalar, oracle_lcl_index  # noqa: E402

from lightvar.soundings import isothermal_column, make_sounding, sounding_corpus  # noqa: E402

DATA = Path(__file__).parent / "data"


def oracle_columns():
    """Soundings whose reference CAPE is frozen: the corpus plus named cases."""
    named = {
        "reference_300K": make_sounding(t_sfc=300.0, rh_sfc=0.75),
        "warm_moist": make_sounding(t_sfc=304.0, rh_sfc=0.85),
        "marginal": make_sounding(t_sfc=297.0, rh_sfc=0.7),
        "isothermal": isothermal_column(),
    }
    return named, sounding_corpus(50, seed=0)


def main():
    named, corpus = oracle_columns()
    names = list(named)
    cols = list(named.values()) + corpus
    capes = fine_step_cape(cols)
    lcls = [oracle_lcl_index(c) for c in cols]
    out = {
        "named": {n: {"cape": float(capes[i]), "lcl_index": lcls[i]}
                  for i, n in enumerate(names)},
        "corpus_seed0_cape": [float(c) for c in capes[len(names):]],
        "corpus_seed0_lcl_index": lcls[len(names):],
        "flash_rate": {str(c): flash_rate_scalar(c) for c in (500.0, 1000.0, 2000.0, 3000.0)},
    }
    DATA.mkdir(exist_ok=True)
    (DATA / "cape_oracle.json").write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
