"""Recompute the frozen truth fixture with a large Monte-Carlo oracle.

Targets without a closed form (the logistic slope of a thresholded outcome,
the rank-test effect under the signal alternative) and the slope targets
whose values are checked against algebra (quantile, NB) are evaluated by
running the analysis estimator on one 10^7-sample draw, then frozen into
src/psps/simlab/truths.json. The oracle seed is dedicated to this script.

On a fresh checkout the fixture may not exist yet while the generators
require it, so a placeholder full of NaNs is written first and replaced at
the end.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from psps.datatypes import TaskSpec
from psps.estimators import fit_task
from psps.rng import substream
from psps.simlab import dgps

ORACLE_SAMPLES = 10_000_000
ORACLE_SEED = 910_199

VALUE_NAMES = (
    "logistic_slope",
    "quantile_slope",
    "negbin_slope",
    "wilcoxon_effect_signal",
)


def _seed_for(name: str) -> int:
    return int(substream(ORACLE_SEED, "oracle", name).integers(0, 2**63))


def _oracle_draw(dgp: str, name: str, options=None):
    return dgps.generate(
        dgp, ORACLE_SAMPLES, _seed_for(name), n_unlabeled=1, options=options
    )


def main() -> None:
    out = dgps._TRUTHS_FILE
    if not out.exists():
        out.write_text(
            json.dumps(
                {"version": 1, "values": {k: float("nan") for k in VALUE_NAMES}}
            )
        )
        dgps.frozen_truths.cache_clear()
    values: dict[str, float] = {}

    t0 = time.time()
    gd = _oracle_draw("logistic", "logistic_slope")
    est = fit_task(TaskSpec(task="logistic", target_columns=("x1",)), gd.labeled)
    values["logistic_slope"] = float(est.estimate[0])
    print(f"logistic_slope  {values['logistic_slope']:.6f}  ({time.time() - t0:.0f}s)")
    del gd

    t0 = time.time()
    gd = _oracle_draw("mean_lin_quant", "quantile_slope")
    est = fit_task(
        TaskSpec(task="quantile", quantile_level=0.75, target_columns=("x1",)),
        gd.labeled,
    )
    values["quantile_slope"] = float(est.estimate[0])
    ols = fit_task(TaskSpec(task="ols", target_columns=("x1",)), gd.labeled)
    mean = fit_task(TaskSpec(task="mean"), gd.labeled)
    c = dgps.calibration("mean_lin_quant")
    print(
        f"quantile_slope  {values['quantile_slope']:.6f}  "
        f"(algebra {np.sqrt(0.08):.6f}; ols check {ols.estimate[0]:.6f}; "
        f"mean check {mean.estimate[0]:.6f} vs {2 * c['beta2']:.6f}; "
        f"{time.time() - t0:.0f}s)"
    )
    del gd

    t0 = time.time()
    gd = _oracle_draw("negbin", "negbin_slope")
    est = fit_task(TaskSpec(task="negbin", target_columns=("x1",)), gd.labeled)
    values["negbin_slope"] = float(est.estimate[0])
    print(
        f"negbin_slope    {values['negbin_slope']:.6f}  "
        f"(algebra {np.sqrt(0.3):.6f}; {time.time() - t0:.0f}s)"
    )
    del gd

    t0 = time.time()
    gd = _oracle_draw("wilcoxon", "wilcoxon_effect_signal", options={"signal": True})
    est = fit_task(TaskSpec(task="wilcoxon", group_column="x1"), gd.labeled)
    values["wilcoxon_effect_signal"] = float(est.estimate[0])
    print(
        f"wilcoxon_effect_signal {values['wilcoxon_effect_signal']:.6f}  "
        f"({time.time() - t0:.0f}s)"
    )
    del gd

    payload = {
        "version": 1,
        "oracle_samples": ORACLE_SAMPLES,
        "oracle_seed": ORACLE_SEED,
        "values": values,
    }
    out.write_text(json.dumps(payload, indent=2) + "\n")
    dgps.frozen_truths.cache_clear()
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
