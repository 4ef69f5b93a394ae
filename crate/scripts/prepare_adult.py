#!/usr/bin/env python3
"""Build the desk-scale Adult Income subset used by the examples and tests.

Reads the raw UCI `adult.data` file (comma separated, no header) and writes a
CSV with the eight columns described by `data/adult/schema.toml`. Category
grouping follows the common counterfactual-explanation preprocessing recipe:

  workclass   -> Government | Other/Unknown | Private | Self-Employed
  education   -> Assoc | Bachelors | Doctorate | HS-grad | Masters |
                 Prof-school | School | Some-college
  marital     -> Divorced | Married | Separated | Single | Widowed
  occupation  -> Blue-Collar | Other/Unknown | Professional | Sales |
                 Service | White-Collar
  race        -> Black | Other | White
  gender      -> Female | Male

Usage: prepare_adult.py RAW_ADULT_DATA OUT_CSV [--rows 2000] [--seed 17]
"""

import argparse
import csv
import random

WORKCLASS = {
    "Federal-gov": "Government",
    "Local-gov": "Government",
    "State-gov": "Government",
    "Private": "Private",
    "Self-emp-inc": "Self-Employed",
    "Self-emp-not-inc": "Self-Employed",
}
EDUCATION = {
    "Assoc-acdm": "Assoc",
    "Assoc-voc": "Assoc",
    "Bachelors": "Bachelors",
    "Doctorate": "Doctorate",
    "HS-grad": "HS-grad",
    "Masters": "Masters",
    "Prof-school": "Prof-school",
    "Some-college": "Some-college",
}
MARITAL = {
    "Divorced": "Divorced",
    "Married-AF-spouse": "Married",
    "Married-civ-spouse": "Married",
    "Married-spouse-absent": "Married",
    "Never-married": "Single",
    "Separated": "Separated",
    "Widowed": "Widowed",
}
OCCUPATION = {
    "Adm-clerical": "White-Collar",
    "Craft-repair": "Blue-Collar",
    "Exec-managerial": "White-Collar",
    "Farming-fishing": "Blue-Collar",
    "Handlers-cleaners": "Blue-Collar",
    "Machine-op-inspct": "Blue-Collar",
    "Other-service": "Service",
    "Priv-house-serv": "Service",
    "Prof-specialty": "Professional",
    "Protective-serv": "Service",
    "Sales": "Sales",
    "Tech-support": "Service",
    "Transport-moving": "Blue-Collar",
}


def convert(fields):
    age, workclass, _, education, _, marital, occupation, _, race, sex, _, _, hours, _, income = (
        f.strip() for f in fields
    )
    return {
        "age": age,
        "hours_per_week": hours,
        "workclass": WORKCLASS.get(workclass, "Other/Unknown"),
        "education": EDUCATION.get(education, "School"),
        "marital_status": MARITAL[marital],
        "occupation": OCCUPATION.get(occupation, "Other/Unknown"),
        "race": race if race in ("White", "Black") else "Other",
        "gender": sex,
        "income": ">50K" if income.startswith(">50K") else "<=50K",
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("raw")
    parser.add_argument("out")
    parser.add_argument("--rows", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=17)
    args = parser.parse_args()

    with open(args.raw) as fh:
        rows = [convert(r) for r in csv.reader(fh) if len(r) == 15]
    random.Random(args.seed).shuffle(rows)
    rows = rows[: args.rows]

    columns = [
        "age",
        "hours_per_week",
        "workclass",
        "education",
        "marital_status",
        "occupation",
        "race",
        "gender",
        "income",
    ]
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


if __name__ == "__main__":
    main()
