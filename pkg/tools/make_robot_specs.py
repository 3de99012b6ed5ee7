"""Regenerate the bundled robot spec JSON files."""
import json
from pathlib import Path

from retargetkit.synth import upper_body_spec

ROBOTS = {
    "gr1_like": {"pelvis_spine": 0.10, "spine_chest": 0.15, "chest_neck": 0.18, "neck_head": 0.12,
                 "shoulder_width": 0.20, "shoulder_height": 0.12, "upper_arm": 0.25, "forearm": 0.22},
    "talos_like": {"pelvis_spine": 0.14, "spine_chest": 0.20, "chest_neck": 0.22, "neck_head": 0.15,
                   "shoulder_width": 0.22, "shoulder_height": 0.17, "upper_arm": 0.30, "forearm": 0.28},
    "g1_like": {"pelvis_spine": 0.07, "spine_chest": 0.10, "chest_neck": 0.13, "neck_head": 0.10,
                "shoulder_width": 0.15, "shoulder_height": 0.10, "upper_arm": 0.18, "forearm": 0.17},
}

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "retargetkit" / "data" / "robots"
    for name, dims in ROBOTS.items():
        (out / f"{name}.json").write_text(json.dumps(upper_body_spec(name, dims), indent=1) + "\n")
        print("wrote", out / f"{name}.json")
