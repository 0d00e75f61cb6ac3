"""Regenerate the shipped model and inversion-config JSON files in configs/."""
import json
from pathlib import Path

from lqisoc import build_reaching_model, reaching_config, reaching_lqs_reduced, save_problem

OUT = Path(__file__).resolve().parents[1] / "configs"


def dump(obj, name):
    (OUT / name).write_text(json.dumps(obj.to_dict(), indent=1) + "\n")
    print("wrote", OUT / name)


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    for kind in ("lqg", "lqs"):
        save_problem(build_reaching_model(kind=kind), OUT / f"reaching_{kind}.json")
        print("wrote", OUT / f"reaching_{kind}.json")
        for budget in ("paper", "desk"):
            dump(reaching_config(kind, budget), f"isoc_{kind}_{budget}.json")
    problem, cfg = reaching_lqs_reduced()
    save_problem(problem, OUT / "reaching_lqs_reduced.json")
    dump(cfg, "isoc_lqs_reduced.json")
