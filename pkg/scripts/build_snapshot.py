"""Rebuild the bundled Chile panel snapshot from World Bank series shipped in ``rdatasets``.

Run once, offline-capable after ``pip install rdatasets``::

    python scripts/build_snapshot.py

Sources (all originally World Bank WDI / UN Population Division):

* ``stevedata::wbd_example``  GDP per capita (constant 2015 US$) and life
  expectancy, 2000-2020.
* ``dslabs::gapminder``        GDP (constant 2000 US$), population and life
  expectancy, 1960-2016.  Used only to back-cast 1990-1999.
* ``gt::countrypops``          total population (SP.POP.TOTL), 1960-2022.

Back-casting: GDP per capita for 1990-1999 is chained at 2000 using the
year-on-year ratios of the older constant-2000-US$ series.  Life expectancy
for 1990-1999 is the Gapminder series shifted by its 2000 difference to WDI.
"""

from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import rdatasets

UNITS = {
    "CHL": "Chile",
    "ARG": "Argentina",
    "AUS": "Australia",
    "BOL": "Bolivia",
    "BRA": "Brazil",
    "CAN": "Canada",
    "CHN": "China",
    "COL": "Colombia",
    "CRI": "Costa Rica",
    "DOM": "Dominican Republic",
    "ECU": "Ecuador",
    "GTM": "Guatemala",
    "HND": "Honduras",
    "MEX": "Mexico",
    "NIC": "Nicaragua",
    "PAN": "Panama",
    "PER": "Peru",
    "PHL": "Philippines",
    "PRT": "Portugal",
    "ZAF": "South Africa",
    "ESP": "Spain",
    "USA": "United States",
    "URY": "Uruguay",
}
YEARS = range(1990, 2020)
SPLICE_YEAR = 2000

OUT = Path(__file__).resolve().parents[1] / "src" / "synthimpact" / "data"


def main() -> None:
    wbd = rdatasets.data("stevedata", "wbd_example").set_index(["iso3c", "year"])
    gap = rdatasets.data("dslabs", "gapminder")
    gap["iso3c"] = gap["country"].map({v: k for k, v in UNITS.items()})
    gap = gap.dropna(subset=["iso3c"]).set_index(["iso3c", "year"])
    pops = rdatasets.data("gt", "countrypops").set_index(["country_code_3", "year"])

    rows = []
    for iso in UNITS:
        w = wbd.loc[iso]
        g = gap.loc[iso]
        pop = pops.loc[iso, "population"].astype(float)

        old_pc = g["gdp"] / g["population"]
        back = old_pc.loc[1990 : SPLICE_YEAR - 1] / old_pc.loc[SPLICE_YEAR]
        gdp_pc = pd.concat([back * w.loc[SPLICE_YEAR, "rgdppc"], w["rgdppc"].loc[SPLICE_YEAR:2019]])

        shift = w.loc[SPLICE_YEAR, "lifeexp"] - g.loc[SPLICE_YEAR, "life_expectancy"]
        life = pd.concat(
            [g["life_expectancy"].loc[1990 : SPLICE_YEAR - 1] + shift, w["lifeexp"].loc[SPLICE_YEAR:2019]]
        )

        pop_growth = 100.0 * (pop / pop.shift(1) - 1.0)

        series = {
            "gdp_pc": gdp_pc,
            "population": pop,
            "population_growth": pop_growth,
            "life_expectancy": life,
        }
        for name, s in series.items():
            s = s.loc[YEARS.start : YEARS.stop - 1]
            if len(s) != len(YEARS) or s.isna().any():
                raise RuntimeError(f"{iso}/{name}: incomplete series")
            rows.extend((iso, name, int(year), float(value)) for year, value in s.items())

    frame = pd.DataFrame(rows, columns=["unit", "variable", "year", "value"])
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "chile_panel.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("unit,variable,year,value\n")
        for r in frame.itertuples(index=False):
            fh.write(f"{r.unit},{r.variable},{r.year},{r.value!r}\n")

    meta = {
        "unit_names": UNITS,
        "variables": {
            "gdp_pc": "GDP per capita, constant 2015 US$",
            "population": "Population, total (persons)",
            "population_growth": "Population growth, annual %",
            "life_expectancy": "Life expectancy at birth, total (years)",
        },
        "sources": {
            "gdp_pc": "WDI NY.GDP.PCAP.KD via rdatasets stevedata/wbd_example (2000-2019); "
            "1990-1999 chained with dslabs/gapminder GDP (constant 2000 US$) per capita ratios",
            "population": "WDI SP.POP.TOTL via rdatasets gt/countrypops",
            "population_growth": "computed from population",
            "life_expectancy": "WDI SP.DYN.LE00.IN via rdatasets stevedata/wbd_example (2000-2019); "
            "1990-1999 from dslabs/gapminder shifted to the 2000 WDI level",
        },
    }
    (OUT / "chile_panel.meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(frame)} rows to {OUT / 'chile_panel.csv'}")


if __name__ == "__main__":
    main()
