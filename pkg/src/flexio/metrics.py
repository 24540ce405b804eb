"""SI-SDR scoring with permutation resolution."""

from __future__ import annotations

import csv
import itertools
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import InvalidInput, InvalidTarget
from .model import separate

SI_SDR_CLAMP = 60.0


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, clamped to ``[-60, 60]``."""
    est, ref = np.asarray(est, np.float64), np.asarray(ref, np.float64)
    if est.shape != ref.shape:
        raise InvalidInput(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise InvalidTarget("reference signal is identically zero")
    target = np.dot(est, ref) / ref_energy * ref
    num, den = np.dot(target, target), np.sum((target - est) ** 2)
    if den == 0:
        return SI_SDR_CLAMP
    if num == 0:
        return -SI_SDR_CLAMP
    return float(np.clip(10 * np.log10(num / den), -SI_SDR_CLAMP, SI_SDR_CLAMP))


def si_sdr_improvement(est, ref, mix) -> float:
    return si_sdr(est, ref) - si_sdr(mix, ref)


def best_permutation(ests, refs) -> tuple[tuple[int, ...], list[float]]:
    """Assignment maximising mean SI-SDR; estimate ``i`` pairs with ``refs[perm[i]]``."""
    n = len(refs)
    scores = np.array([[si_sdr(e, r) for r in refs] for e in ests])
    perm = max(itertools.permutations(range(n)), key=lambda p: scores[np.arange(n), list(p)].mean())
    return perm, [float(scores[i, perm[i]]) for i in range(n)]


def score_scene(model, scene, ref_channel: int = 0) -> dict:
    result = separate(model, scene.mixture.astype(np.float32), scene.N, ref_channel)
    perm, scores = best_permutation(result.waveforms, scene.targets)
    mix = scene.mixture[ref_channel]
    mix_scores = [si_sdr(mix, scene.targets[perm[i]]) for i in range(scene.N)]
    return {
        "N": scene.N,
        "M": scene.M,
        "sisdr": float(np.mean(scores)),
        "sisdri": float(np.mean(np.subtract(scores, mix_scores))),
        "perm": perm,
    }


def evaluate(model, scenes, report_csv=None, ref_channel: int = 0) -> dict[tuple[int, int], dict]:
    """Mean SI-SDR and SI-SDRi per ``(N, M)`` group, optionally written as CSV."""
    groups: dict[tuple[int, int], list[dict]] = defaultdict(list)
    for scene in scenes:
        row = score_scene(model, scene, ref_channel)
        groups[(row["N"], row["M"])].append(row)
    table = {
        key: {
            "N": key[0],
            "M": key[1],
            "count": len(rows),
            "mean_sisdr": float(np.mean([r["sisdr"] for r in rows])),
            "mean_sisdri": float(np.mean([r["sisdri"] for r in rows])),
        }
        for key, rows in sorted(groups.items())
    }
    if report_csv is not None:
        write_report(table, report_csv)
    return table


def write_report(table, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["N", "M", "count", "mean_sisdr", "mean_sisdri"])
        writer.writeheader()
        for row in table.values():
            writer.writerow(row)
