"""Run the experiment studies and write one JSON file per study.

    python3 scripts/run_studies.py --out results/            # everything
    python3 scripts/run_studies.py --only closed_forms bm    # a subset
"""
import argparse
import time
from pathlib import Path

from wbary import studies
from wbary.cli import atomic_write, dumps


def _jensen(kind):
    def run():
        fam = studies.jensen_refinement(kind)
        omegas, results = fam.pop("_omegas"), fam.pop("_results")
        fam["density"] = studies.density_study(omegas, results)
        if kind == "torus":
            fam["balance"] = studies.balance_study(omegas, results)
        return fam
    return run


STUDIES = {
    "oracle_equivalence": studies.oracle_equivalence,
    "closed_forms": studies.closed_forms,
    "lipschitz_inverse": studies.lipschitz_inverse_study,
    "distortion": studies.distortion_study,
    "jacobian": studies.jacobian_study,
    "jensen_torus": _jensen("torus"),
    "jensen_sphere": _jensen("sphere"),
    "bm": studies.bm_study,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="*", choices=sorted(STUDIES))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.only or STUDIES:
        t0 = time.perf_counter()
        payload = STUDIES[name]()
        atomic_write(out / f"{name}.json", dumps(payload))
        verdict = payload.get("passed") if isinstance(payload, dict) else None
        print(f"{name:20s} passed={verdict}  {time.perf_counter() - t0:7.1f} s")


if __name__ == "__main__":
    main()
