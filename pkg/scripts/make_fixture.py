"""Regenerate the bundled synthetic price fixture and its manifest.

Usage: python3 scripts/make_fixture.py [outdir]
"""

import json
import sys
from pathlib import Path

from regtyler.portfolio import load_prices, make_synthetic_prices, write_prices

SEED = 20240601


def main(outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    dates, assets, prices, planted = make_synthetic_prices(seed=SEED)
    csv_path = outdir / "synthetic_prices.csv"
    with open(csv_path, "w", newline="") as fh:
        write_prices(dates, assets, prices, fh)
    panel = load_prices(csv_path)
    if panel.discarded != len(planted):
        raise SystemExit(f"discard count {panel.discarded} != planted {len(planted)}")
    manifest = {
        "file": csv_path.name,
        "assets": len(assets),
        "rows": len(dates),
        "seed": SEED,
        "distribution": "student_t, dof=3, AR(1) scatter beta=0.5, daily scale 0.01",
        "planted_return_rows": planted,
        "discarded": len(planted),
        "return_rows_kept": panel.length,
    }
    with open(outdir / "synthetic_prices.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {csv_path} ({len(dates)} rows, {len(assets)} assets, {len(planted)} planted discards)")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src" / "regtyler" / "data")
