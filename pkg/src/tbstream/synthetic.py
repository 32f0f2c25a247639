"""Seeded synthetic patient-observation generator.

Emits CSV in the exact ingest schema: no/id/name identifiers, gender,
ISO date, HH:MM:SS time, and the 13 binary symptom columns, optionally
extended with numeric clinical columns (cough duration, lymph size, age,
sputum result, risk level) that exercise the threshold-based rules.
Rows are consistent with the ingest consistency checks unless dirty rows
are requested.
"""

from __future__ import annotations

import csv
import random
from datetime import datetime, timedelta
from typing import IO

from .vocab import SYMPTOM_KEYS

CLINICAL_COLUMNS = (
    "cough_duration_days",
    "cough_duration_weeks",
    "lymph_size_cm",
    "age_years",
    "sputum_positive",
    "risk_level",
    "weight_loss_grade",
    "under_dots",
    "symptom_improvement",
)

_FIRST_NAMES = (
    "Aarav", "Diya", "Kabir", "Meera", "Rohan", "Sana", "Vihaan", "Zara",
    "Ishaan", "Anaya", "Dev", "Kiara", "Arjun", "Nisha", "Raghav", "Tara",
)
_LAST_NAMES = (
    "Sharma", "Verma", "Iyer", "Khan", "Patel", "Reddy", "Das", "Mehta",
    "Kulkarni", "Bose", "Nair", "Singh",
)

_START = datetime(2020, 1, 1, 0, 0, 0)
_END = datetime(2021, 1, 31, 23, 59, 59)


def _repair_consistency(bits: dict[str, int], rng: random.Random) -> None:
    """Make severe-bleeding bits satisfy the ingest checks."""
    if bits["coughing_blood"] == 1 and bits["cough_phlegm_2to4w"] == 0 and bits["sputum_blood"] == 0:
        bits[rng.choice(("cough_phlegm_2to4w", "sputum_blood"))] = 1
    if bits["sputum_blood"] == 1 and bits["cough_phlegm_2to4w"] == 0 and bits["coughing_blood"] == 0:
        bits[rng.choice(("cough_phlegm_2to4w", "coughing_blood"))] = 1


def generate_rows(rows: int, seed: int, clinical: bool = False,
                  dirty_every: int = 0, symptom_rate: float = 0.25) -> list[dict[str, str]]:
    """Produce `rows` observation dicts, deterministically from `seed`.

    dirty_every=N injects one invalid cell every N rows (0 disables) so the
    rejection paths can be exercised end to end.
    """
    rng = random.Random(seed)
    span_seconds = int((_END - _START).total_seconds())
    out: list[dict[str, str]] = []
    for i in range(1, rows + 1):
        ts = _START + timedelta(seconds=rng.randrange(span_seconds))
        bits = {k: 1 if rng.random() < symptom_rate else 0 for k in SYMPTOM_KEYS}
        _repair_consistency(bits, rng)
        row = {
            "no": str(i),
            "id": f"K{i:05d}",
            "name": f"{rng.choice(_FIRST_NAMES)} {rng.choice(_LAST_NAMES)}",
            "gender": rng.choice(("Male", "Female")),
            "date": ts.strftime("%Y-%m-%d"),
            "time": ts.strftime("%H:%M:%S"),
        }
        row.update({k: str(v) for k, v in bits.items()})
        if clinical:
            days = rng.randint(0, 30)
            row["cough_duration_days"] = str(days)
            row["cough_duration_weeks"] = str(days // 7)
            row["lymph_size_cm"] = f"{rng.uniform(0.0, 5.0):.1f}"
            row["age_years"] = str(rng.randint(0, 90))
            row["sputum_positive"] = rng.choice(("Yes", "No", "No", "No"))
            row["risk_level"] = rng.choice(("High", "Medium", "Low"))
            row["weight_loss_grade"] = (
                rng.choice(("Severe", "Mild")) if bits["weight_loss"] else "")
            row["under_dots"] = rng.choice(("Yes", "No"))
            row["symptom_improvement"] = rng.choice(("Yes", "No"))
        if dirty_every and i % dirty_every == 0:
            kind = rng.choice(("gender", "date", "symptom"))
            if kind == "gender":
                row["gender"] = "unknown"
            elif kind == "date":
                row["date"] = "2020-13-40"
            else:
                row[rng.choice(SYMPTOM_KEYS)] = "2"
        out.append(row)
    return out


def write_csv(stream: IO, rows: list[dict[str, str]], clinical: bool = False) -> None:
    columns = ["no", "id", "name", "gender", "date", "time", *SYMPTOM_KEYS]
    if clinical:
        columns += list(CLINICAL_COLUMNS)
    writer = csv.DictWriter(stream, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def generate_csv(rows: int, seed: int, clinical: bool = False,
                 dirty_every: int = 0) -> str:
    """Convenience wrapper returning the CSV text."""
    import io

    buf = io.StringIO()
    write_csv(buf, generate_rows(rows, seed, clinical, dirty_every), clinical)
    return buf.getvalue()
