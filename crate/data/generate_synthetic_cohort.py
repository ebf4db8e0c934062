#!/usr/bin/env python3
"""Generate a synthetic cohort with the column layout of the public
Diabetes 130-US-hospitals (1999-2008) readmission dataset.

The real file cannot be redistributed here. This generator produces a file
with the same header, value vocabularies and "?" missing sentinel so that
ingestion, policy checks and the agent pipeline can be exercised end to end.
Outcome probabilities depend on a handful of features so that cohort
statistics carry signal.

    python3 data/generate_synthetic_cohort.py --rows 5000 --seed 130 \
        > data/diabetes_synthetic.csv
"""
import argparse
import csv
import math
import random
import sys

MEDS = [
    "metformin", "repaglinide", "nateglinide", "chlorpropamide", "glimepiride",
    "acetohexamide", "glipizide", "glyburide", "tolbutamide", "pioglitazone",
    "rosiglitazone", "acarbose", "miglitol", "troglitazone", "tolazamide",
    "examide", "citoglipton", "insulin", "glyburide-metformin",
    "glipizide-metformin", "glimepiride-pioglitazone", "metformin-rosiglitazone",
    "metformin-pioglitazone",
]
COMMON_MEDS = {"metformin", "glipizide", "glyburide", "pioglitazone",
               "rosiglitazone", "glimepiride", "insulin", "repaglinide"}

HEADER = [
    "encounter_id", "patient_nbr", "race", "gender", "age", "weight",
    "admission_type_id", "discharge_disposition_id", "admission_source_id",
    "time_in_hospital", "payer_code", "medical_specialty", "num_lab_procedures",
    "num_procedures", "num_medications", "number_outpatient", "number_emergency",
    "number_inpatient", "diag_1", "diag_2", "diag_3", "number_diagnoses",
    "max_glu_serum", "A1Cresult", *MEDS, "change", "diabetesMed", "readmitted",
]

AGES = ["[0-10)", "[10-20)", "[20-30)", "[30-40)", "[40-50)", "[50-60)",
        "[60-70)", "[70-80)", "[80-90)", "[90-100)"]
AGE_W = [1, 2, 4, 8, 20, 40, 55, 60, 40, 8]
RACES = ["Caucasian", "AfricanAmerican", "Hispanic", "Asian", "Other", "?"]
RACE_W = [75, 19, 2, 1, 1.5, 2.5]
WEIGHTS = ["[0-25)", "[25-50)", "[50-75)", "[75-100)", "[100-125)",
           "[125-150)", "[150-175)", "[175-200)", ">200"]
PAYERS = ["MC", "MD", "HM", "UN", "BC", "SP", "CP", "SI", "DM", "CM", "CH",
          "PO", "WC", "OT", "OG", "MP"]
SPECIALTIES = ["InternalMedicine", "Emergency/Trauma", "Family/GeneralPractice",
               "Cardiology", "Surgery-General", "Nephrology", "Orthopedics",
               "Radiologist", "Pulmonology", "Psychiatry", "Gastroenterology"]
DIAGS = ["250.83", "250.02", "250.6", "428", "414", "786", "410", "486",
         "427", "491", "715", "682", "434", "780", "996", "276", "V57", "599",
         "403", "584"]


def wchoice(rng, items, weights):
    return rng.choices(items, weights=weights, k=1)[0]


def med_value(rng, name, insulin_bias):
    if name not in COMMON_MEDS:
        return "No" if rng.random() > 0.002 else "Steady"
    p_use = 0.55 if name == "insulin" else 0.12
    p_use += insulin_bias if name == "insulin" else 0.0
    if rng.random() > p_use:
        return "No"
    return wchoice(rng, ["Steady", "Up", "Down"], [70, 15, 15])


def row(rng, encounter_id, patient_nbr):
    age_idx = AGES.index(wchoice(rng, AGES, AGE_W))
    time_in_hospital = min(14, max(1, int(rng.expovariate(1 / 4.4)) + 1))
    number_inpatient = min(21, int(rng.expovariate(1 / 0.64)))
    number_emergency = min(76, int(rng.expovariate(1 / 0.2)))
    number_outpatient = min(42, int(rng.expovariate(1 / 0.37)))
    num_lab = min(132, max(1, int(rng.gauss(43, 19))))
    num_proc = min(6, int(rng.expovariate(1 / 1.3)))
    num_meds = min(81, max(1, int(rng.gauss(16, 8))))
    number_diagnoses = min(16, max(1, int(rng.gauss(7.4, 1.9))))
    discharge = wchoice(rng, [1, 3, 6, 18, 2, 22, 11, 5], [59, 14, 13, 4, 2, 2, 1.6, 1.2])
    a1c = wchoice(rng, ["None", ">8", "Norm", ">7"], [83, 8, 5, 4])
    glu = wchoice(rng, ["None", "Norm", ">200", ">300"], [95, 2.5, 1.5, 1])

    meds = {m: med_value(rng, m, 0.1 if a1c in (">7", ">8") else 0.0) for m in MEDS}
    changed = any(v in ("Up", "Down") for v in meds.values())
    on_meds = any(v != "No" for v in meds.values())

    logit = (-2.6 + 0.42 * min(number_inpatient, 6) + 0.25 * min(number_emergency, 4)
             + 0.05 * time_in_hospital + 0.08 * (age_idx - 6)
             + (0.6 if discharge in (3, 6, 22) else 0.0)
             + (0.5 if discharge == 11 else 0.0)
             + 0.04 * (number_diagnoses - 7) + (0.15 if changed else 0.0))
    p30 = 1 / (1 + math.exp(-logit))
    u = rng.random()
    if discharge == 11:
        readmitted = "NO"
    elif u < p30:
        readmitted = "<30"
    elif u < p30 + 0.34:
        readmitted = ">30"
    else:
        readmitted = "NO"

    values = {
        "encounter_id": encounter_id,
        "patient_nbr": patient_nbr,
        "race": wchoice(rng, RACES, RACE_W),
        "gender": wchoice(rng, ["Female", "Male"], [54, 46]),
        "age": AGES[age_idx],
        "weight": rng.choice(WEIGHTS) if rng.random() < 0.03 else "?",
        "admission_type_id": wchoice(rng, [1, 2, 3, 5, 6, 8], [53, 18, 18, 5, 5, 1]),
        "discharge_disposition_id": discharge,
        "admission_source_id": wchoice(rng, [7, 1, 17, 4, 6, 2], [56, 29, 7, 3, 2, 1]),
        "time_in_hospital": time_in_hospital,
        "payer_code": rng.choice(PAYERS) if rng.random() < 0.6 else "?",
        "medical_specialty": rng.choice(SPECIALTIES) if rng.random() < 0.51 else "?",
        "num_lab_procedures": num_lab,
        "num_procedures": num_proc,
        "num_medications": num_meds,
        "number_outpatient": number_outpatient,
        "number_emergency": number_emergency,
        "number_inpatient": number_inpatient,
        "diag_1": rng.choice(DIAGS),
        "diag_2": rng.choice(DIAGS) if rng.random() > 0.004 else "?",
        "diag_3": rng.choice(DIAGS) if rng.random() > 0.014 else "?",
        "number_diagnoses": number_diagnoses,
        "max_glu_serum": glu,
        "A1Cresult": a1c,
        **meds,
        "change": "Ch" if changed else "No",
        "diabetesMed": "Yes" if on_meds else "No",
        "readmitted": readmitted,
    }
    return [values[h] for h in HEADER]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=130)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(HEADER)
    encounter_id = 2278392
    patients = []
    for _ in range(args.rows):
        encounter_id += rng.randint(1, 400)
        if patients and rng.random() < 0.25:
            patient_nbr = rng.choice(patients)
        else:
            patient_nbr = rng.randint(100000, 190000000)
            patients.append(patient_nbr)
        out.writerow(row(rng, encounter_id, patient_nbr))


if __name__ == "__main__":
    main()
