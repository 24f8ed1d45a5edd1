#!/usr/bin/env python3
"""Regenerates the replay fixtures under fixtures/ from the bundled SOPs."""

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SOPS = ROOT / "sops"
OUT = ROOT / "fixtures"


def load(sop_id):
    return json.loads((SOPS / f"{sop_id}.sop").read_text())


def readings_for(step, overrides=None):
    """Readings that satisfy every parameter of `step`, keyed by equipment."""
    overrides = overrides or {}
    out = []
    for p in step["params"]:
        value = overrides.get(p["name"], p["expected"])
        r = {"name": p["name"], "value": value, "unit": p.get("unit", "")}
        out.append(r)
    return out


def context(step, readings):
    eq = [{"name": name, "position": "bench", "readings": []} for name in step["expected_equipment"]]
    if readings and eq:
        eq[0]["readings"] = readings
    return {
        "equipment": eq,
        "environment": "cleanroom bay, operator at the tool",
        "action": step["instruction"],
    }


def prediction(step_index, step_count, confidence, runner_up=0.1):
    cands = [{"step": step_index, "confidence": confidence}]
    other = step_index + 1 if step_index < step_count else step_index - 1
    if other >= 1 and other != step_index:
        cands.append({"step": other, "confidence": runner_up})
    return {"candidates": cands, "reasoning": f"scene matches step {step_index}"}


def write(name, header, frames, truth):
    lines = [json.dumps(header)]
    lines += [json.dumps(f) for f in frames]
    (OUT / f"{name}.rec").write_text("\n".join(lines) + "\n")
    (OUT / f"{name}.truth.json").write_text(json.dumps(truth, indent=2) + "\n")


def build(sop_id, tracking, plan):
    """`plan` is a list of (true_step, predicted_step, confidence, overrides)."""
    doc = load(sop_id)
    steps = {s["index"]: s for s in doc["steps"]}
    frames, truth_steps, truth_eq = [], [], []
    for i, (true_step, predicted, conf, overrides) in enumerate(plan):
        step = steps[true_step]
        frames.append({
            "frame_index": i,
            "timestamp_ms": 1000 * i,
            "description": f"frame {i}: {step['instruction']}",
            "context": context(step, readings_for(step, overrides)),
            "prediction": prediction(predicted, len(steps), conf),
        })
        truth_steps.append(true_step)
        truth_eq.append(step["expected_equipment"])
    header = {"sop_id": sop_id, "tracking": dict(tracking, sop_id=sop_id)}
    return header, frames, {"steps": truth_steps, "equipment": truth_eq}


def main():
    OUT.mkdir(exist_ok=True)
    rie_plan = {"memory_update_interval": 1, "prediction_interval": 3, "confidence_threshold": 0.8,
                "rationale": "short steps, frequent checks"}
    spin_plan = {"memory_update_interval": 2, "prediction_interval": 5, "confidence_threshold": 0.6,
                 "rationale": "long steps, sparse checks"}

    golden = [(s, s, 0.9, None) for s in range(1, 9) for _ in range(3)]
    write("rie_golden", *build("rie", rie_plan, golden))

    wrong = {"time": 10, "rf_power": 100}
    error = [(s, s, 0.9, None) for s in range(1, 4) for _ in range(3)]
    error += [(4, 4, 0.9, wrong)] * 3
    error += [(4, 4, 0.9, None)] * 3
    error += [(s, s, 0.9, None) for s in range(5, 9) for _ in range(3)]
    write("rie_error", *build("rie", rie_plan, error))

    stuck = [(s, 1, 0.9, None) for s in range(1, 9) for _ in range(3)]
    write("rie_stuck", *build("rie", rie_plan, stuck))

    # Step 4 is mistaken for step 6: an illegal jump the operator resolves.
    clarify = [(s, s, 0.9, None) for s in range(1, 4) for _ in range(3)]
    clarify += [(4, 6, 0.9, None)] * 3
    clarify += [(s, s, 0.9, None) for s in range(5, 9) for _ in range(3)]
    write("rie_clarify", *build("rie", rie_plan, clarify))

    # Ten frames per step keeps every other aggregation window inside one step.
    spin = [(s, s, 0.85, None) for s in range(1, 7) for _ in range(10)]
    write("spin_golden", *build("spin_coating", spin_plan, spin))

    (OUT / "rie_replay_config.json").write_text(json.dumps({
        "active_sop": "rie",
        "tracking": dict(rie_plan, sop_id="rie"),
        "history_window": 3,
    }, indent=2) + "\n")


if __name__ == "__main__":
    main()
