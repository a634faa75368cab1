#!/usr/bin/env python3
"""Writes the bundled synthetic mini corpus under data/mini.

Each split directory holds tables/*.json, pairs.jsonl and
annotations.jsonl in the canonical layout read by `tabprobe`.
Output is fully determined by --seed.
"""

import argparse
import json
import random
from pathlib import Path

FIRST = """Amber Ashen Azure Birch Bright Cedar Cobalt Copper Crimson Crystal Dawn Deep
Dusk Ember Fable Fern Frost Gilded Golden Granite Harbor Hollow Iron Ivory Jade Juniper
Lantern Linen Lunar Maple Marble Meadow Misty Molten North Oak Onyx Opal Pale Pine Quiet
Raven Rustic Sable Scarlet Shadow Silver Slate Solar Stone Summer Velvet Violet Willow
Winter Wild""".split()
SECOND = """Anchor Arrow Bay Bell Bloom Bridge Brook Canyon Castle Cloud Coast Creek Crown
Dream Echo Field Flame Forest Garden Gate Glade Grove Haven Hill Island Lake Lantern Light
Mill Mirror Moon Mountain Orchard Path Peak Prairie River Road Rose Shore Sky Spring Star
Storm Stream Summit Tide Tower Trail Vale Valley Voyage Wave Wind""".split()
GIVEN = """Ada Bram Cora Dane Elin Faye Gus Hana Ivo Jora Kael Lina Milo Nora Otto Pia
Quin Rhea Sven Tova Ugo Vera Wren Xavi Yara Zeno""".split()
FAMILY = """Abernathy Brisco Calloway Dunmore Ellery Fairbanks Galloway Hartwell Ingram
Jessop Kimball Lockhart Merriweather Northcott Oakes Pendleton Quimby Radcliffe Sterling
Thackeray Underhill Vance Whitcombe Yardley Zeller""".split()
MONTHS = "January February March April May June July August September October November December".split()
GENRES = ["pop", "art rock", "soft rock", "jazz", "folk", "blues", "hard rock", "synth-pop", "soul", "country"]
LABELS = ["A&M", "Columbia", "Island", "Virgin", "Motown", "Capitol", "Atlantic", "Elektra"]
STUDIOS = ["Abbey Road Studios", "Sunset Sound", "Electric Lady", "Hansa Tonstudio", "Muscle Shoals"]
COUNTRIES = ["France", "Canada", "Japan", "Brazil", "Norway", "Kenya", "Chile", "India", "Italy", "Spain"]
LANGUAGES = ["English", "French", "Japanese", "Portuguese", "Norwegian", "Spanish", "Italian"]
OCCUPATIONS = ["singer", "actor", "writer", "painter", "architect", "engineer", "dancer", "director"]
ZONES = ["UTC+1", "UTC+2", "UTC-5", "UTC+9", "UTC-3", "UTC+5:30"]


class Corpus:
    def __init__(self, rng):
        self.rng = rng
        self.used_titles = set()

    def title(self):
        while True:
            t = f"{self.rng.choice(FIRST)} {self.rng.choice(SECOND)}"
            if t not in self.used_titles:
                self.used_titles.add(t)
                return t

    def person(self):
        return f"{self.rng.choice(GIVEN)} {self.rng.choice(FAMILY)}"

    def date(self, lo, hi):
        return self.rng.randint(1, 28), self.rng.choice(MONTHS), self.rng.randint(lo, hi)


def fmt_date(d):
    return f"{d[0]} {d[1]} {d[2]}"


def pick(rng, pool, lo, hi):
    return rng.sample(pool, rng.randint(lo, hi))


def album(c, title):
    r = c.rng
    rel = c.date(1960, 2015)
    minutes, seconds = r.randint(30, 70), r.randint(0, 59)
    tracks = r.randint(7, 16)
    genres = pick(r, GENRES, 1, 3)
    rows = {
        "Released": [fmt_date(rel)],
        "Recorded": [f"{r.choice(MONTHS)}–{r.choice(MONTHS)} {rel[2] - 1}"],
        "Studio": [r.choice(STUDIOS)],
        "Genre": genres,
        "Length": [f"{minutes}:{seconds:02d}"],
        "Label": [r.choice(LABELS)],
        "Producer": [c.person() for _ in range(r.randint(1, 2))],
        "Tracks": [str(tracks)],
        "Singles": [c.title() for _ in range(r.randint(2, 4))],
        "Peak position": [f"No. {r.randint(1, 40)}"],
        "Certification": [r.choice(["Gold", "Platinum", "Silver"])],
    }
    other_genre = r.choice([g for g in GENRES if g not in genres])
    y = rel[2]
    hyps = [
        (f"{title} is a {genres[0]} album with a length of {minutes} minutes.", "E", ["Genre", "Length"]),
        r.choice([
            (f"{title} was released after {y - 3}.", "E", ["Released"]),
            (f"{title} was released before {y - 2}.", "C", ["Released"]),
            (f"{title} was released in {y + 4}.", "C", ["Released"]),
        ]),
        r.choice([
            (f"{title} has more than {tracks - 2} tracks.", "E", ["Tracks"]),
            (f"{title} has less than {tracks - 3} tracks.", "C", ["Tracks"]),
            (f"{title} is not a {other_genre} album.", "E", ["Genre"]),
        ]),
        r.choice([
            (f"{title} sold over {r.randint(2, 9)} million copies.", "N", []),
            (f"{title} won a Grammy award in {y + 1}.", "N", []),
            (f"{title} was recorded over {r.randint(2, 5)} weeks.", "N", ["Recorded"]),
        ]),
    ]
    return rows, hyps


def person(c, title):
    r = c.rng
    born = c.date(1900, 1995)
    height = r.randint(150, 200)
    children = r.randint(0, 6)
    start = born[2] + r.randint(16, 30)
    occ = pick(r, OCCUPATIONS, 1, 3)
    rows = {
        "Born": [fmt_date(born)],
        "Nationality": [r.choice(COUNTRIES)],
        "Occupation": occ,
        "Height": [f"{height // 100}.{height % 100:02d} m"],
        "Spouse": [c.person()],
        "Children": [str(children)],
        "Years active": [f"{start}–{start + r.randint(5, 40)}"],
        "Awards": [f"{c.title()} Prize" for _ in range(r.randint(1, 3))],
        "Education": [f"{c.title()} College"],
        "Residence": [r.choice(COUNTRIES)],
        "Relatives": [c.person() for _ in range(r.randint(1, 3))],
    }
    other_occ = r.choice([o for o in OCCUPATIONS if o not in occ])
    y = born[2]
    hyps = [
        (f"{title} was born before {y + 5}.", "E", ["Born"]),
        r.choice([
            (f"{title} has more than {children + 2} children.", "C", ["Children"]),
            (f"{title} has {children} children.", "E", ["Children"]),
        ]),
        r.choice([
            (f"{title} works as a {occ[0]}.", "E", ["Occupation"]),
            (f"{title} is not a {other_occ}.", "E", ["Occupation"]),
            (f"{title} was born after {y + 6}.", "C", ["Born"]),
        ]),
        r.choice([
            (f"{title} has lived in {r.randint(3, 9)} countries.", "N", []),
            (f"{title} speaks two languages.", "N", []),
            (f"{title} retired in {start + 50}.", "N", ["Years active"]),
        ]),
    ]
    return rows, hyps


def movie(c, title):
    r = c.rng
    rel = c.date(1950, 2020)
    runtime = r.randint(80, 180)
    budget = r.randint(2, 200)
    rows = {
        "Directed by": [c.person()],
        "Starring": [c.person() for _ in range(r.randint(2, 4))],
        "Running time": [f"{runtime} minutes"],
        "Release date": [fmt_date(rel)],
        "Country": [r.choice(COUNTRIES)],
        "Language": pick(r, LANGUAGES, 1, 2),
        "Budget": [f"${budget} million"],
        "Box office": [f"${budget * r.randint(1, 6)} million"],
        "Music by": [c.person()],
        "Cinematography": [c.person()],
        "Production company": [f"{c.title()} Pictures"],
    }
    y = rel[2]
    hyps = [
        r.choice([
            (f"{title} has a running time of over {runtime - 20} minutes.", "E", ["Running time"]),
            (f"{title} has a running time of under {runtime - 25} minutes.", "C", ["Running time"]),
        ]),
        (f"{title} was released after {y - 4}.", "E", ["Release date"]),
        r.choice([
            (f"{title} had a budget of less than {budget + 10} million dollars.", "E", ["Budget"]),
            (f"{title} had a budget of more than {budget + 15} million dollars.", "C", ["Budget"]),
            (f"{title} was not directed by {c.person()}.", "E", ["Directed by"]),
        ]),
        r.choice([
            (f"{title} won {r.randint(2, 5)} Academy Awards.", "N", []),
            (f"{title} was filmed over {r.randint(3, 9)} months.", "N", []),
        ]),
    ]
    return rows, hyps


def city(c, title):
    r = c.rng
    founded = r.randint(800, 1900)
    pop = r.randint(20, 900) * 1000
    area = r.randint(40, 900)
    rows = {
        "Country": [r.choice(COUNTRIES)],
        "Founded": [str(founded)],
        "Population": [str(pop)],
        "Area": [f"{area} km2"],
        "Elevation": [f"{r.randint(2, 900)} m"],
        "Time zone": [r.choice(ZONES)],
        "Mayor": [c.person()],
        "Districts": [f"{c.title()}" for _ in range(r.randint(2, 4))],
        "Postal code": [str(r.randint(10000, 99999))],
        "Twin towns": [c.title() for _ in range(r.randint(1, 3))],
        "Website": [f"www.{title.lower().replace(' ', '')}.example"],
    }
    hyps = [
        (f"{title} was founded before {founded + 20}.", "E", ["Founded"]),
        r.choice([
            (f"{title} has a population of more than {pop // 2}.", "E", ["Population"]),
            (f"{title} has a population of less than {pop // 2}.", "C", ["Population"]),
        ]),
        r.choice([
            (f"{title} covers an area of over {area * 2} square kilometres.", "C", ["Area"]),
            (f"{title} is in {rows['Country'][0]}.", "E", ["Country"]),
            (f"{title} was founded after {founded + 30}.", "C", ["Founded"]),
        ]),
        r.choice([
            (f"{title} has {r.randint(2, 9)} universities.", "N", []),
            (f"{title} hosted the Olympics in {r.randint(1950, 2020)}.", "N", []),
        ]),
    ]
    return rows, hyps


BUILDERS = {"album": album, "person": person, "movie": movie, "city": city}


def make_split(name, seed, n_tables, annotators, out):
    rng = random.Random(seed)
    c = Corpus(rng)
    table_dir = out / name / "tables"
    table_dir.mkdir(parents=True, exist_ok=True)
    pairs, annotations = [], []
    workers = [f"w{i:02d}" for i in range(12)]
    categories = list(BUILDERS)
    for i in range(n_tables):
        category = categories[i % len(categories)]
        title = c.person() if category == "person" else c.title()
        while category == "person" and title in c.used_titles:
            title = c.person()
        c.used_titles.add(title)
        rows, hyps = BUILDERS[category](c, title)
        keys = list(rows)
        # keep 6..10 rows, always including every key a hypothesis uses
        needed = {k for _, _, ks in hyps for k in ks}
        optional = [k for k in keys if k not in needed]
        rng.shuffle(optional)
        keep_n = max(6, min(10, rng.randint(6, 10)))
        kept = set(needed) | set(optional[: max(0, keep_n - len(needed))])
        table_rows = [{"key": k, "values": rows[k]} for k in keys if k in kept]
        table_id = f"{name}-{category}-{i:03d}"
        table = {"table_id": table_id, "title": title, "category": category, "rows": table_rows}
        (table_dir / f"{table_id}.json").write_text(json.dumps(table, indent=2, ensure_ascii=False) + "\n")
        for j, (text, label, relevant) in enumerate(hyps):
            pair_id = f"{name}-{i:03d}-{j}"
            pairs.append({"pair_id": pair_id, "table_id": table_id, "hypothesis": text, "label": label})
            chosen = rng.sample(workers, annotators + rng.randint(0, 2))
            for w in chosen:
                noise = 0.05 + 0.1 * (int(w[1:]) % 4) / 3
                selected = sorted(
                    k
                    for k in kept
                    if (k in relevant and rng.random() > noise) or (k not in relevant and rng.random() < noise / 2)
                )
                oot = label == "N" and not relevant and rng.random() > noise
                annotations.append({"pair_id": pair_id, "annotator_id": w, "selected_keys": selected, "oot": oot})
    with open(out / name / "pairs.jsonl", "w") as f:
        for p in pairs:
            f.write(json.dumps(p, ensure_ascii=False) + "\n")
    with open(out / name / "annotations.jsonl", "w") as f:
        for a in annotations:
            f.write(json.dumps(a, ensure_ascii=False) + "\n")
    return len(pairs)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "mini")
    ap.add_argument("--seed", type=int, default=20240501)
    ap.add_argument("--tables", type=int, default=100)
    ap.add_argument("--annotators", type=int, default=5)
    args = ap.parse_args()
    for k, split in enumerate(["a1", "a2", "a3"]):
        n = make_split(split, args.seed + k, args.tables, args.annotators, args.out)
        print(f"{split}: {args.tables} tables, {n} pairs")


if __name__ == "__main__":
    main()
