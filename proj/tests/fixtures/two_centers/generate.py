"""Writes videos.csv and annotations.csv whose class_stats match the per-center dataset table."""
import csv
import pathlib

CENTERS = {
    # name: (cases, frames, bleeding, mechanical, thermal)
    "Strasbourg": (70, 464973, 33634, 3674, 682),
    "Bern": (70, 316646, 28068, 5691, 683),
}
CHUNK = 150

here = pathlib.Path(__file__).parent
videos, annotations = [], []
for prefix, (name, (cases, frames, *events)) in zip(("sb", "be"), CENTERS.items()):
    per_video = [frames // cases + (1 if i < frames % cases else 0) for i in range(cases)]
    cursor = [0] * cases
    ids = [f"{prefix}{i:03d}" for i in range(cases)]
    for vid, n in zip(ids, per_video):
        videos.append((vid, name, n))
    chunk_no = 0
    for kind, total in zip(("BL", "MI", "TI"), events):
        remaining = total
        while remaining:
            length = min(CHUNK, remaining)
            v = chunk_no % cases
            start = cursor[v]
            annotations.append((ids[v], kind, 1 + chunk_no % 5, start, start + length - 1))
            cursor[v] += length + 3
            remaining -= length
            chunk_no += 1
    assert all(c <= n for c, n in zip(cursor, per_video))

with open(here / "videos.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["video_id", "source", "frames"])
    w.writerows(videos)
with open(here / "annotations.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["video_id", "event_type", "severity", "start_frame", "end_frame"])
    w.writerows(annotations)
