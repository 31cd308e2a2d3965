"""Freeze the vanilla (no RO bias, no TT prior) forward output used by the neutral-start check.

Run only when the simulator's vanilla path changes on purpose; the check compares at 1e-12.
"""
import json

from roap.attention_sim import forward
from roap.checks import GOLDEN_PATH, golden_setup


def main():
    cfg, params, batch = golden_setup()
    res = forward(batch, cfg, params)
    GOLDEN_PATH.write_text(json.dumps({"loss": res.loss, "outputs": res.outputs.tolist()}, indent=1))
    print(f"wrote {GOLDEN_PATH} (loss {res.loss:.17g})")


if __name__ == "__main__":
    main()
