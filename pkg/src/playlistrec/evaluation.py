"""Challenge metrics (R-precision, NDCG, clicks) and per-category reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .data import ChallengePlaylist, DataError

MAX_RECOMMENDATIONS = 500
CLICKS_MISS = 51


def _truth(ground_truth: Iterable[int]) -> set[int]:
    truth = set(ground_truth)
    if not truth:
        raise ValueError("ground truth must contain at least one track")
    return truth


def r_precision(
    recommended: Sequence[int], ground_truth: Iterable[int], artist_of: Mapping[int, int]
) -> float:
    """
    Track-level R-precision plus a quarter of the artist-level one.

    The artist part counts distinct ground-truth artists among the
    recommendations in the first ``|G|`` slots that missed at track level.
    """
    truth = _truth(ground_truth)
    window = recommended[: len(truth)]
    hits = sum(1 for t in window if t in truth)
    truth_artists = {artist_of[t] for t in truth}
    missed_artists = {artist_of[t] for t in window if t not in truth}
    artist_part = len(truth_artists & missed_artists) / len(truth_artists)
    return hits / len(truth) + 0.25 * artist_part


def ndcg(recommended: Sequence[int], ground_truth: Iterable[int]) -> float:
    """Binary-gain NDCG with a ``log2(rank + 1)`` discount."""
    truth = _truth(ground_truth)
    dcg = math.fsum(1.0 / math.log2(i + 2) for i, t in enumerate(recommended) if t in truth)
    idcg = math.fsum(1.0 / math.log2(i + 2) for i in range(min(len(truth), MAX_RECOMMENDATIONS)))
    return dcg / idcg


def clicks(recommended: Sequence[int], ground_truth: Iterable[int]) -> int:
    """Ten-track refreshes before the first relevant track; 51 on a miss."""
    truth = _truth(ground_truth)
    for i, t in enumerate(recommended[:MAX_RECOMMENDATIONS]):
        if t in truth:
            return i // 10
    return CLICKS_MISS


@dataclass
class CellMetrics:
    r_precision: float = 0.0
    ndcg: float = 0.0
    clicks: float = 0.0
    count: int = 0


@dataclass
class EvalReport:
    categories: dict[int, CellMetrics] = field(default_factory=dict)
    overall: CellMetrics = field(default_factory=CellMetrics)

    def to_json(self) -> str:
        doc = {
            "categories": {str(k): asdict(v) for k, v in sorted(self.categories.items())},
            "overall": asdict(self.overall),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        doc = json.loads(text)
        return cls(
            {int(k): CellMetrics(**v) for k, v in doc["categories"].items()},
            CellMetrics(**doc["overall"]),
        )


def _mean(rows: list[tuple[float, float, int]]) -> CellMetrics:
    n = len(rows)
    if n == 0:
        return CellMetrics()
    return CellMetrics(
        r_precision=math.fsum(r[0] for r in rows) / n,
        ndcg=math.fsum(r[1] for r in rows) / n,
        clicks=math.fsum(r[2] for r in rows) / n,
        count=n,
    )


def check_submission(submission: Mapping[int, Sequence[int]], challenges: Sequence[ChallengePlaylist]) -> None:
    for c in challenges:
        if c.pid not in submission:
            raise DataError(f"submission is missing playlist {c.pid}")
        recs = submission[c.pid]
        if len(recs) > MAX_RECOMMENDATIONS:
            raise DataError(f"playlist {c.pid}: {len(recs)} recommendations exceed {MAX_RECOMMENDATIONS}")
        if len(set(recs)) != len(recs):
            raise DataError(f"playlist {c.pid}: duplicate recommended tracks")
        visible = set(c.visible_ids)
        for t in recs:
            if t in visible:
                raise DataError(f"playlist {c.pid}: recommends visible track {t}")


def score_playlist(recs: Sequence[int], truth: Iterable[int], artist_of: Mapping[int, int]) -> tuple[float, float, int]:
    truth = set(truth)
    return r_precision(recs, truth, artist_of), ndcg(recs, truth), clicks(recs, truth)


def evaluate_run(
    submission: Mapping[int, Sequence[int]],
    challenges: Sequence[ChallengePlaylist],
    artist_of: Mapping[int, int],
) -> EvalReport:
    """Mean metrics per category and overall; playlists without hidden tracks are skipped."""
    check_submission(submission, challenges)
    per_cat: dict[int, list] = {}
    every = []
    for c in sorted(challenges, key=lambda c: (c.category, c.pid)):
        truth = c.ground_truth
        if not truth:
            continue
        row = score_playlist(list(submission[c.pid]), truth, artist_of)
        per_cat.setdefault(c.category, []).append(row)
        every.append(row)
    return EvalReport({k: _mean(v) for k, v in sorted(per_cat.items())}, _mean(every))


def write_submission(submission: Mapping[int, Sequence[int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        for pid in sorted(submission):
            w.writerow([pid, *submission[pid]])


def read_submission(path: str | Path) -> dict[int, list[int]]:
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].startswith("#") or row[0].strip() == "team_info":
                continue
            try:
                pid, tracks = int(row[0]), [int(x) for x in row[1:] if x.strip()]
            except ValueError as exc:
                raise DataError(f"submission line {line_no}: {exc}") from exc
            if pid in out:
                raise DataError(f"submission line {line_no}: duplicate playlist {pid}")
            out[pid] = tracks
    return out
