"""Regenerate the bundled synthetic citation corpus and its side files.

The corpus mimics a WoS plain-text export of papers citing a single method
paper over 2010-2020. Ten research directions in five disciplines each draw
words from a private vocabulary, and yearly counts follow a fixed schedule:

  2010-2015  every direction at most 2 new citations per year   -> Budding
  2016       counts above 3, R9 and R14 appear                   -> Growing
  2017       R16 appears                                         -> Growing
  2018-2020  counts above 3, nothing new                         -> Mature

A few duplicates, out-of-window years and an unplaceable address are
planted so every parse step has something to do.

Writes into src/difftree/data/synthetic/: corpus.txt, truth.csv,
taxonomy.ini, pipeline.ini and label_map.ini. The label map is derived by
fitting the direction pass with the pipeline settings and sending each
topic to the direction whose vocabulary carries most of its word mass.

    python3 scripts/make_synthetic_corpus.py [--out DIR]
"""
from __future__ import annotations

import argparse
import csv
import tempfile
import textwrap
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "difftree" / "data" / "synthetic"
SEED = 20211
YEARS = range(2010, 2021)

DISCIPLINES = {
    "GS": ("Geosciences", "geographic regional geography landscape region territorial"),
    "AS": ("Agricultural Sciences", "agricultural agriculture agronomy farming agroecosystem cultivation"),
    "AS&M": ("Atmospheric Science & Meteorology", "atmospheric meteorology weather troposphere climatic boundary"),
    "HS": ("Health Sciences", "health public epidemiology medical morbidity risk"),
    "M&S": ("Mathematics & Statistics", "statistical probability regression stochastic bayesian mathematical"),
}
SHARED = "spatial heterogeneity geodetector factors explanatory driving".split()
FILLER = "the of and in this study results using based we were analysis method".split()

# code: (discipline, name, vocabulary, yearly counts 2010..2020)
DIRECTIONS = {
    "R1": ("GS", "geographic information and remote sensing",
           "gis raster remote sensing landsat imagery cartography elevation terrain satellite "
           "mapping grid geoinformation buffer overlay pixel",
           [0, 1, 1, 2, 2, 2, 6, 8, 10, 12, 14]),
    "R2": ("HS", "disease incidence and surveillance",
           "disease incidence mortality epidemic infection virus hfmd malaria cancer hospital "
           "surveillance outbreak transmission patients clinical tuberculosis",
           [1, 1, 2, 2, 2, 2, 5, 7, 8, 10, 12]),
    "R3": ("AS", "soil and crop systems",
           "soil crop yield nitrogen fertilizer organic carbon erosion moisture cropland farmland "
           "irrigation salinity wheat maize tillage",
           [0, 1, 0, 1, 2, 2, 4, 4, 5, 6, 6]),
    "R4": ("M&S", "spatial sampling and estimation",
           "sampling estimator variance bias stratified kriging interpolation bootstrap inference "
           "sample design unbiased precision survey estimation autocorrelation",
           [1, 0, 1, 2, 2, 2, 4, 5, 6, 6, 7]),
    "R5": ("AS&M", "climate change and vegetation",
           "climate temperature precipitation warming drought rainfall monsoon evapotranspiration "
           "phenology vegetation ndvi anomaly meteorological seasonal aridity snow",
           [0, 0, 0, 0, 0, 1, 4, 5, 6, 8, 9]),
    "R7": ("GS", "rural development",
           "rural village poverty livelihood household farmer migration settlement hollowing "
           "income county township alleviation peasant homestead agrarian",
           [0, 0, 1, 1, 2, 2, 4, 6, 7, 9, 10]),
    "R9": ("GS", "water monitoring",
           "water groundwater river basin runoff watershed streamflow hydrological lake wetland "
           "nitrate turbidity reservoir catchment aquifer discharge",
           [0, 0, 0, 0, 0, 0, 3, 4, 5, 6, 8]),
    "R14": ("AS&M", "air pollution",
            "pm25 haze aerosol pollution ozone emissions particulate concentration smog sulfur "
            "dioxide pollutant exposure visibility inversion fog",
            [0, 0, 0, 0, 0, 0, 3, 5, 6, 7, 8]),
    "R16": ("AS", "regional grain security",
            "grain food security production cereal rice supply consumption sufficiency harvest "
            "granary price demand stock subsidy storage",
            [0, 0, 0, 0, 0, 0, 0, 4, 5, 7, 8]),
    "R17": ("GS", "city development",
            "urban city urbanization expansion housing land sprawl metropolitan commuting density "
            "street built infrastructure planning gentrification megacity",
            [0, 0, 0, 1, 1, 2, 5, 6, 8, 9, 11]),
}

CHINA_CITIES = [("Wuhan", "430079"), ("Beijing", "100101"), ("Nanjing", "210023"), ("Guangzhou", "510275"),
                ("Lanzhou", "730000"), ("Chengdu", "610041"), ("Shanghai", "200241")]
ABROAD = ["USA", "USA", "USA", "England", "Australia", "Germany", "Italy", "Canada", "Netherlands",
          "Japan", "South Korea", "Iran", "India", "Brazil", "South Africa", "France", "Spain",
          "New Zealand", "Pakistan", "Ethiopia", "Malaysia"]
SURNAMES = "Wang Li Zhang Liu Chen Yang Huang Zhao Smith Jones Garcia Rossi Muller Kim Sato Singh".split()


def _zipf(n):
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def _words(rng, vocab, n):
    return list(rng.choice(vocab, size=n, p=_zipf(len(vocab))))


def make_text(rng, direction):
    discipline, _, vocab, _ = DIRECTIONS[direction]
    vocab = vocab.split()
    disc_words = DISCIPLINES[discipline][1].split()
    title = _words(rng, vocab, int(rng.integers(4, 7))) + _words(rng, disc_words, 1) + ["spatial", "heterogeneity"]
    rng.shuffle(title)
    n = int(rng.integers(50, 71))
    parts = (_words(rng, vocab, int(0.80 * n)) + _words(rng, disc_words, int(0.06 * n))
             + list(rng.choice(SHARED, size=int(0.03 * n))) + list(rng.choice(FILLER, size=int(0.11 * n))))
    rng.shuffle(parts)
    abstract = " ".join(parts).capitalize() + "."
    return " ".join(title).capitalize(), abstract


def make_address(rng):
    authors = "; ".join(f"{rng.choice(SURNAMES)}, {chr(65 + int(rng.integers(0, 26)))}."
                        for _ in range(int(rng.integers(1, 4))))
    if rng.random() < 0.55:
        city, post = CHINA_CITIES[int(rng.integers(len(CHINA_CITIES)))]
        place = f"{city} Univ, Sch Resource & Environm Sci, {city} {post}, Peoples R China"
    else:
        country = ABROAD[int(rng.integers(len(ABROAD)))]
        place = f"Univ {rng.choice(SURNAMES)}, Dept Geog, {country}"
    return f"[{authors}] {place}"


def record_lines(uid, title, year, abstract, addresses, doi):
    lines = ["PT J", f"AU {uid[-4:]}, X"]
    wrapped = textwrap.wrap(title, 70)
    lines.append(f"TI {wrapped[0]}")
    lines += [f"   {w}" for w in wrapped[1:]]
    lines.append("SO SYNTHETIC JOURNAL OF SPATIAL ANALYSIS")
    lines.append(f"C1 {addresses[0]}")
    lines += [f"   {a}" for a in addresses[1:]]
    ab = textwrap.wrap(abstract, 70)
    lines.append(f"AB {ab[0]}")
    lines += [f"   {w}" for w in ab[1:]]
    lines.append("WC Geography, Physical; Environmental Sciences")
    lines.append("SC Physical Geography; Environmental Sciences & Ecology")
    lines.append(f"PY {year}")
    if doi:
        lines.append(f"DI {doi}")
    lines.append(f"UT {uid}")
    lines.append("ER")
    lines.append("")
    return lines


def generate(out: Path):
    rng = np.random.default_rng(SEED)
    out.mkdir(parents=True, exist_ok=True)
    records = []  # (uid, direction, year, title, abstract, addresses, doi)
    n = 0
    for year_idx, year in enumerate(YEARS):
        for code, (_, _, _, counts) in DIRECTIONS.items():
            for _ in range(counts[year_idx]):
                n += 1
                uid = f"WOS:SYN{n:06d}"
                title, abstract = make_text(rng, code)
                addresses = [make_address(rng) for _ in range(int(rng.integers(1, 3)))]
                records.append((uid, code, year, title, abstract, addresses, f"10.9999/syn.{n:05d}"))
    order = rng.permutation(len(records))
    records = [records[i] for i in order]

    # planted noise: re-exported duplicates (new UT, same DOI), years outside the window,
    # one address no gazetteer entry can place
    extras = []
    for i in rng.choice(len(records), size=8, replace=False):
        uid, code, year, title, abstract, addresses, doi = records[i]
        extras.append((uid.replace("SYN", "DUP"), code, year, title, abstract, addresses, doi))
    for k, year in enumerate((2008, 2009, 2021, 2021, 2022)):
        code = list(DIRECTIONS)[k]
        title, abstract = make_text(rng, code)
        extras.append((f"WOS:OUT{k:06d}", code, year, title, abstract, [make_address(rng)], None))
    uid, code, year, title, abstract, _, doi = records[0]
    records[0] = (uid, code, year, title, abstract, ["[Doe, J.] Independent Researcher, Atlantis"], doi)
    merged = records + extras

    lines = ["FN Clarivate Analytics Web of Science", "VR 1.0"]
    for uid, _, year, title, abstract, addresses, doi in merged:
        lines += record_lines(uid, title, year, abstract, addresses, doi)
    lines.append("EF")
    (out / "corpus.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "direction", "discipline", "year"])
        for uid, code, year, *_ in records:
            w.writerow([uid, code, DIRECTIONS[code][0], year])

    tax = ["# Five disciplines and the ten research directions of the synthetic corpus.",
           "[disciplines]"]
    tax += [f"{code} = {name}" for code, (name, _) in DISCIPLINES.items()]
    tax += ["", "[directions]"]
    tax += [f"{code} = {disc} | {name}" for code, (disc, name, _, _) in DIRECTIONS.items()]
    (out / "taxonomy.ini").write_text("\n".join(tax) + "\n", encoding="utf-8")

    (out / "pipeline.ini").write_text(textwrap.dedent(f"""\
        # Pipeline settings for the bundled synthetic corpus. Input paths are
        # relative to this file; the output directory is relative to the
        # working directory.
        [inputs]
        corpus = corpus.txt
        stopwords = ../stopwords.txt
        gazetteer = ../gazetteer.tsv
        label_map = label_map.ini
        taxonomy = taxonomy.ini
        profiles = ../economy_profiles.csv

        [parameters]
        seed = {SEED}
        min_year = 2010
        max_year = 2020
        discipline_k = 3 4 5 6 7
        direction_k = 8 9 10 11 12
        alpha = 0.1
        beta = 0.01
        iterations = 500
        restarts = 8
        selection_tolerance = 0.02
        stage_threshold = 3
        cv_folds = 10
        cv_repeats = 100
        horizon_year = 2030
        q_permutations = 999
        q_log1p = false
        q_exclude = China

        [output]
        directory = difftree-out
        """), encoding="utf-8")
    return records


def derive_label_map(out: Path):
    """Fit the direction pass as the pipeline would and map topics to directions by word mass."""
    from difftree import pipeline, topics

    (out / "label_map.ini").write_text("[topics]\n0 = R1\n", encoding="utf-8")  # placeholder for validation
    with tempfile.TemporaryDirectory() as tmp:
        cfg = pipeline.load_config(out / "pipeline.ini", output_dir=tmp)
        pipeline.run_pipeline(cfg, ["topics"])
        model, vocab = topics.load_model(Path(tmp) / "model_direction.txt")
    owner = {w: code for code, (_, _, words, _) in DIRECTIONS.items() for w in words.split()}
    lines = ["# Topic -> research direction for the direction pass of pipeline.ini.",
             "# Regenerate with scripts/make_synthetic_corpus.py if the topic settings change.",
             "[topics]"]
    for k in range(model.K):
        mass = {}
        for idx, p in enumerate(model.topic_word[k]):
            code = owner.get(vocab.words[idx])
            if code:
                mass[code] = mass.get(code, 0.0) + p
        best = max(mass, key=mass.get)
        lines.append(f"{k} = {best}")
        print(f"topic {k:2d} -> {best} ({mass[best]:.2f} of mass)  {' '.join(model.top_words(vocab, 6)[k])}")
    (out / "label_map.ini").write_text("\n".join(lines) + "\n", encoding="utf-8")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    records = generate(args.out)
    print(f"wrote {len(records)} in-window records to {args.out / 'corpus.txt'}")
    derive_label_map(args.out)


if __name__ == "__main__":
    main()
