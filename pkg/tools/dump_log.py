# tools/dump_log.py
import sys

import pandas as pd


def dump(path, rows=20, every=1):
    df = pd.read_csv(path)
    print(f"\n--- {path}: {len(df)} records, {len(df.columns)} columns ---")
    if df.empty:
        print("<no records>")
        return
    view = df.iloc[::every].head(rows)
    cols = ["t", "target_id", "e_rcm_mm", "e_vis_u", "e_vis_v", "e_vis_px", "solve_us", "status1", "status2"]
    print(view[[c for c in cols if c in view.columns]].to_string(index=False))


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("usage: python tools/dump_log.py <log.csv> [rows] [every]")
    else:
        rows = int(sys.argv[2]) if len(sys.argv) > 2 else 20
        every = int(sys.argv[3]) if len(sys.argv) > 3 else 1
        dump(sys.argv[1], rows=rows, every=every)
