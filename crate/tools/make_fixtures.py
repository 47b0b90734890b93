#!/usr/bin/env python3
"""Generate the synthetic subject archives used by the test suite.

Each fixture mimics the wrist-device archive layout: a pickle holding a
nested dict with `signal.wrist.BVP` (64 Hz PPG) and `signal.wrist.ACC`
(32 Hz, N×3), plus a per-window BPM `label` array for the labeled source.
Different pickle protocols are emitted on purpose so the reader's protocol
coverage stays exercised.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import os
import pickle

import numpy as np

ROOT = os.path.join(os.path.dirname(__file__), "..", "crates", "ppghr", "tests", "fixtures")

PPG_FS = 64
ACC_FS = 32
WIN_S = 8
SHIFT_S = 2


def instantaneous_freq(t, base):
    """Slowly drifting tone frequency in Hz."""
    return base + 0.2 * np.sin(2 * np.pi * t / 60.0)


def make_subject(name, seconds, base_freq, rng, labeled):
    t_ppg = np.arange(seconds * PPG_FS) / PPG_FS
    t_acc = np.arange(seconds * ACC_FS) / ACC_FS

    phase = 2 * np.pi * np.cumsum(instantaneous_freq(t_ppg, base_freq)) / PPG_FS
    bvp = np.sin(phase) + 0.05 * rng.standard_normal(len(t_ppg))

    acc = np.stack(
        [
            0.3 * np.sin(2 * np.pi * 0.5 * t_acc) + 0.05 * rng.standard_normal(len(t_acc)),
            0.1 * np.sin(2 * np.pi * 1.1 * t_acc + 0.4) + 0.05 * rng.standard_normal(len(t_acc)),
            0.95 + 0.05 * rng.standard_normal(len(t_acc)),
        ],
        axis=1,
    )

    data = {
        "signal": {
            "chest": {"ECG": np.zeros((seconds * 4, 1))},
            "wrist": {"BVP": bvp.reshape(-1, 1), "ACC": acc},
        },
        "subject": name,
        "questionnaire": {"AGE": 30.0, "Gender": "x"},
        "activity": np.zeros(seconds * 4, dtype=np.int64).reshape(-1, 1),
    }

    if labeled:
        n_windows = (seconds - WIN_S) // SHIFT_S + 1
        labels = []
        for w in range(n_windows):
            mid = np.arange(w * SHIFT_S, w * SHIFT_S + WIN_S, 1.0 / ACC_FS)
            labels.append(60.0 * instantaneous_freq(mid, base_freq).mean())
        data["label"] = np.array(labels)
        data["rpeaks"] = np.arange(100, dtype=np.int64)

    return data


def dump(data, path, protocol):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "wb") as f:
        pickle.dump(data, f, protocol=protocol)
    print(f"{path}  (protocol {protocol}, {os.path.getsize(path)} bytes)")


def main():
    rng = np.random.default_rng(20240817)

    # labeled source: four 60 s subjects, protocol 2
    for i, (name, freq) in enumerate([("S7", 1.2), ("S8", 1.5), ("S9", 1.9), ("S10", 2.1)]):
        data = make_subject(name, 60, freq, rng, labeled=True)
        dump(data, os.path.join(ROOT, "dalia", name, f"{name}.pkl"), protocol=2)

    # affect-dataset source: two subjects, protocol 4, no HR labels
    for name, freq in [("S2", 1.4), ("S3", 1.8)]:
        data = make_subject(name, 60, freq, rng, labeled=False)
        dump(data, os.path.join(ROOT, "wesad", name, f"{name}.pkl"), protocol=4)

    # unlabeled corpus: flat files, protocol 5
    for name, freq in [("u01", 1.1), ("u02", 2.3)]:
        data = make_subject(name, 60, freq, rng, labeled=False)
        dump(data, os.path.join(ROOT, "unlabeled", f"{name}.pkl"), protocol=5)

    # malformed archive: accelerometer missing
    broken = make_subject("SB", 20, 1.3, rng, labeled=False)
    del broken["signal"]["wrist"]["ACC"]
    dump(broken, os.path.join(ROOT, "broken", "no_acc.pkl"), protocol=2)

    # a big-endian variant to pin byte-order handling
    be = make_subject("SBE", 12, 1.6, rng, labeled=False)
    be["signal"]["wrist"]["BVP"] = be["signal"]["wrist"]["BVP"].astype(">f8")
    dump(be, os.path.join(ROOT, "bigendian", "sbe.pkl"), protocol=2)


if __name__ == "__main__":
    main()
