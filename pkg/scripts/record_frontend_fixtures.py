"""Record real service exchanges for the frontend's hermetic tests.

Reads a pipeline run directory (checkpoint + templates), replays each
template through the shared serving path, applies the scripted insulin
what-if edit exactly as the panel does, and freezes the requests/responses
into frontend/fixtures/. Fails if no hyper template shows a non-decreasing
hypo probability under the edit.
"""

import argparse
import copy
import json
import sys
from pathlib import Path

from glucopred.data import CLASS_NAMES
from glucopred.io import schema_to_dict
from glucopred.serving import ServingState, predict_from_request, slider_bounds


def raise_insulin_dose(schemas, bounds, request: dict, factor: float):
    """Mirror of the panel's edit: scale the freshest insulin-like dose,
    capped at the served upper bound."""
    edited = copy.deepcopy(request)
    for schema in schemas:
        if "dose" not in schema.numeric_features:
            continue
        rows = edited["sources"].get(schema.source_name, [])
        best = -1
        for i, row in enumerate(rows):
            drug = str(row["values"].get("drug") or "")
            if not drug.startswith("insulin"):
                continue
            if best < 0 or row["offset_minutes"] > rows[best]["offset_minutes"]:
                best = i
        if best < 0:
            continue
        before = float(rows[best]["values"].get("dose") or 0.0)
        after = before * factor
        cap = bounds.get(schema.source_name, {}).get("dose", {}).get("")
        if cap:
            after = min(after, cap["high"])
        rows[best]["values"]["dose"] = after
        return edited, (schema.source_name, best, before, after)
    return None, None


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--run", required=True, help="pipeline output root")
    parser.add_argument("--dest", default="frontend/fixtures")
    args = parser.parse_args()

    run = Path(args.run)
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)

    state = ServingState.from_checkpoint(run / "train" / "model.ckpt")
    templates = json.loads((run / "eval" / "templates.json").read_text())["templates"]
    assert len(templates) == 6, f"expected 6 templates, found {len(templates)}"

    # refresh stored predictions through the live path (belt and braces)
    for template in templates:
        stored = predict_from_request(state, template["request"])
        assert stored == template["stored_prediction"], template["name"]

    bounds = slider_bounds(state)
    hypo_idx = CLASS_NAMES.index("hypo")
    chosen = None
    for name in ("hyper_true_positive", "hyper_false_negative", "hyper_false_positive"):
        template = next(t for t in templates if t["name"] == name)
        for factor in (3.0, 5.0, 8.0):
            edited, edit = raise_insulin_dose(state.schemas, bounds, template["request"], factor)
            if edited is None:
                break
            before_resp = predict_from_request(state, template["request"])
            after_resp = predict_from_request(state, edited)
            if after_resp["probabilities"][hypo_idx] >= before_resp["probabilities"][hypo_idx]:
                chosen = {
                    "template_name": name,
                    "factor": factor,
                    "edit": {
                        "source": edit[0],
                        "index": edit[1],
                        "before": edit[2],
                        "after": edit[3],
                    },
                    "original_request": template["request"],
                    "original_response": before_resp,
                    "edited_request": edited,
                    "edited_response": after_resp,
                }
                break
        if chosen:
            break
    if chosen is None:
        print("no hyper template shows a non-decreasing hypo probability", file=sys.stderr)
        return 1

    (dest / "templates.json").write_text(json.dumps({"templates": templates}, indent=2))
    (dest / "whatif.json").write_text(json.dumps(chosen, indent=2))
    schema_doc = {
        "class_names": list(CLASS_NAMES),
        "sources": [schema_to_dict(s) for s in state.schemas],
        "bounds": bounds,
        "model_hash": state.model_hash,
    }
    (dest / "schema.json").write_text(json.dumps(schema_doc, indent=2))
    print(
        f"fixtures recorded from {chosen['template_name']} (dose x{chosen['factor']}): "
        f"P(hypo) {chosen['original_response']['probabilities'][hypo_idx]:.4f} -> "
        f"{chosen['edited_response']['probabilities'][hypo_idx]:.4f}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
