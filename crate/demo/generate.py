#!/usr/bin/env python3
"""Regenerate the demo fixture bundles.

Writes the bundle into demo/ itself (3 videos, 1,500 comments) and into
demo/next/ the same channel one week later with 5 newer comments. Output is fully
determined by SEED.
"""

import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

SEED = 20260301
FETCHED_AT = datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc)
NEXT_FETCHED_AT = FETCHED_AT + timedelta(days=7)
CHANNEL = {"channel_id": "UCharborlights-demo", "display_name": "Harbor Lights Documentaries"}

VIDEOS = [
    {"video_id": "vid-ferry", "title": "The Last Ferry Crossing", "published_at": datetime(2025, 3, 10, 15, 0, tzinfo=timezone.utc),
     "view_count": 184_220, "like_count": 9_310, "comments": 600},
    {"video_id": "vid-nightshift", "title": "Night Shift at the Harbor", "published_at": datetime(2025, 7, 2, 15, 0, tzinfo=timezone.utc),
     "view_count": 96_480, "like_count": 4_870, "comments": 500},
    {"video_id": "vid-salt", "title": "Salt and Stone", "published_at": datetime(2025, 11, 15, 15, 0, tzinfo=timezone.utc),
     "view_count": 251_900, "like_count": 15_020, "comments": 400},
]

# Comments on vid-salt in the last week before collection; makes a volume spike.
SALT_BURST = 150

TOPICS = {
    "music": (["the soundtrack", "the piano score", "the music", "the cello theme"],
              ["was beautiful", "gave me chills", "was wonderful and haunting"],
              ["was too loud during the interviews", "drowned out the voices", "felt repetitive and annoying"]),
    "narration": (["the narrator", "the voiceover", "the narration", "her calm voice"],
                  ["was excellent", "felt warm and honest", "was perfect for this story"],
                  ["sounded bored", "was hard to hear", "felt flat and dull"]),
    "camera": (["the drone shots", "the camera work", "the night footage", "the cinematography"],
               ["were stunning", "looked gorgeous", "were amazing"],
               ["were shaky", "looked blurry and dark", "were disappointing"]),
    "history": (["the archival footage", "the old photographs", "the harbor history", "the 1907 records"],
                ["were fascinating", "taught me so much", "were a great addition"],
                ["felt rushed", "were confusing", "were too short"]),
    "people": (["the dock workers", "the ferry captain", "the families", "the harbor pilot"],
               ["were inspiring", "made me smile", "were lovely people"],
               ["looked exhausted and sad", "seemed treated unfairly", "deserved better pay"]),
}

OPENERS = ["", "Honestly", "Wow,", "I think", "For me", "Watching from Lisbon,", "As a sailor,", "Not gonna lie,"]
CLOSERS = ["", ".", "!", " overall.", " in this one.", " to be honest.", " every time."]

UPDATE_REQUESTS = [
    "Please do an update on this story",
    "Would love a follow up with the night crew",
    "Where are they now? I keep thinking about the dock workers",
    "Any updates on the harbor pilot from the last scene?",
    "Hoping for a part 2 about the winter shifts",
    "Could you revisit this harbor in a few years",
]

NEXT_COMMENTS = [
    ("vid-salt", "The cello theme was beautiful, I came back to hear it again"),
    ("vid-salt", "The salt flats at dawn looked gorgeous"),
    ("vid-ferry", "The ferry captain was inspiring, what a career"),
    ("vid-nightshift", "The night footage was stunning"),
    ("vid-nightshift", "The narration felt warm and honest"),
]

SUPERFAN = ("UCfan-marta", "Marta Quinn", {"vid-ferry": 90, "vid-nightshift": 70, "vid-salt": 50})
REGULAR = ("UCreg-tomas", "Tomas Berg", {"vid-ferry": 60, "vid-nightshift": 50, "vid-salt": 40})


def iso(t):
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def comment_text(rng):
    subjects, pos, neg = TOPICS[rng.choice(sorted(TOPICS))]
    roll = rng.random()
    predicate = rng.choice(pos) if roll < 0.6 else rng.choice(neg) if roll < 0.9 else "was there"
    opener = rng.choice(OPENERS)
    subject = rng.choice(subjects)
    if not opener:
        subject = subject[0].upper() + subject[1:]
    text = f"{opener} {subject} {predicate}".strip() + rng.choice(CLOSERS)
    return text


def comment_times(rng, video, n):
    start, end = video["published_at"], FETCHED_AT
    span = (end - start).total_seconds()
    out = []
    for _ in range(n):
        # Most comments arrive soon after release.
        frac = min(rng.expovariate(4.0), 1.0) if rng.random() < 0.8 else rng.random()
        out.append(start + timedelta(seconds=int(frac * span)))
    return out


def build():
    rng = random.Random(SEED)
    authors = [(f"UCviewer-{i:04d}", f"Viewer {i}") for i in range(600)]
    comments = []
    for v in VIDEOS:
        vid, n = v["video_id"], v["comments"]
        slots = []
        if vid == "vid-salt":
            burst_start = FETCHED_AT - timedelta(days=5)
            slots += [burst_start + timedelta(seconds=rng.randrange(5 * 86400 - 3600)) for _ in range(SALT_BURST)]
            slots += comment_times(rng, {**v}, n - SALT_BURST)
            # Keep the background inside the earlier weeks so the burst stands out.
            slots = [t if t >= burst_start or t < FETCHED_AT - timedelta(days=14) else t - timedelta(days=14) for t in slots]
        else:
            slots = comment_times(rng, v, n)
        slots.sort()
        who = [SUPERFAN[:2]] * SUPERFAN[2][vid] + [REGULAR[:2]] * REGULAR[2][vid]
        who += [rng.choice(authors) for _ in range(n - len(who))]
        rng.shuffle(who)
        texts = [comment_text(rng) for _ in range(n)]
        if vid == "vid-nightshift":
            picks = rng.sample(range(n), len(UPDATE_REQUESTS))
            for i, t in zip(sorted(picks), UPDATE_REQUESTS):
                texts[i] = t
        for t, (aid, name), text in zip(slots, who, texts):
            comments.append({"video_id": vid, "author_id": aid, "author_display": name, "text": text,
                             "published_at": t, "like_count": int(rng.paretovariate(1.5)) - 1})
    comments.sort(key=lambda c: (c["published_at"], c["video_id"], c["text"]))
    tops = {}
    for i, c in enumerate(comments):
        c["comment_id"] = f"c{i + 1:05d}"
        parents = tops.get(c["video_id"], [])
        if parents and rng.random() < 0.12:
            c["parent_id"] = rng.choice(parents[-40:])
        else:
            parents.append(c["comment_id"])
            tops[c["video_id"]] = parents
    return comments


def write_bundle(dir_, comments, fetched_at):
    dir_.mkdir(parents=True, exist_ok=True)
    (dir_ / "channel.json").write_text(json.dumps({**CHANNEL, "fetched_at": iso(fetched_at)}, indent=2) + "\n")
    counts = {}
    for c in comments:
        counts[c["video_id"]] = counts.get(c["video_id"], 0) + 1
    videos = [{"video_id": v["video_id"], "title": v["title"], "published_at": iso(v["published_at"]),
               "view_count": v["view_count"], "like_count": v["like_count"],
               "comment_count_reported": counts[v["video_id"]], "fetched_at": iso(fetched_at)} for v in VIDEOS]
    (dir_ / "videos.json").write_text(json.dumps(videos, indent=2) + "\n")
    rows = []
    for c in comments:
        row = {"comment_id": c["comment_id"], "video_id": c["video_id"]}
        if "parent_id" in c:
            row["parent_id"] = c["parent_id"]
        row.update({"author_id": c["author_id"], "author_display": c["author_display"], "text": c["text"],
                    "published_at": iso(c["published_at"]), "like_count": c["like_count"]})
        rows.append(row)
    (dir_ / "comments.json").write_text(json.dumps(rows, indent=1, ensure_ascii=False) + "\n")


def main():
    root = Path(__file__).resolve().parent
    comments = build()
    write_bundle(root, comments, FETCHED_AT)
    newer = []
    for i, (vid, text) in enumerate(NEXT_COMMENTS):
        newer.append({"comment_id": f"n{i + 1:05d}", "video_id": vid, "author_id": f"UCviewer-{900 + i}",
                      "author_display": f"Viewer {900 + i}", "text": text,
                      "published_at": FETCHED_AT + timedelta(days=1, hours=3 * i), "like_count": 0})
    write_bundle(root / "next", comments + newer, NEXT_FETCHED_AT)


if __name__ == "__main__":
    main()
