#!/usr/bin/env python3
"""Writes role_table_oracle.toml: one consent per permitted (role, PHI) pair, then
every role x PHI x operation request with its expected outcome.

The permission rows below are typed in by hand from the published role
table, independently of fixtures/matrix.toml, so the scenario cross-checks
the fixture as well as the authorization path.
"""

from pathlib import Path

ROWS = """
PHI1001 | Patient, DOC, STF, EMC        | Patient, STF  | Patient, STF
PHI1002 | DOC, Patient                  | Patient, DOC  | Patient, DOC
PHI1003 | DOC, Patient, PLT             | PLT           | PLT
PHI1004 | DOC, Patient, NRS             | Patient, PLT  | Patient, PLT
PHI1005 | DOC, NRS, Patient, EMC        | DOC           | DOC
PHI1006 | DOC, Patient, NRS, PHR, INA, EMC | DOC        | DOC
PHI1007 | PLT, DOC, Patient, EMC        | PLT           | PLT
PHI1008 | RLT, DOC, Patient, EMC        | RLT           | RLT
PHI1009 | Patient, BLO, INA             | BLO, Patient  | BLO, Patient
PHI1010 | Patient, BLO, INA             | BLO, INA      | BLO, INA
"""

ROLES = ["DOC", "NRS", "STF", "BLO", "RLT", "PLT", "EMC", "PHR", "INA", "PATIENT", "EXTERNAL"]
OPS = ["Read", "Write", "Update"]


def table():
    allowed = {}
    for line in ROWS.strip().splitlines():
        phi, *cols = [c.strip() for c in line.split("|")]
        for op, col in zip(OPS, cols):
            for role in col.split(","):
                allowed.setdefault((role.strip().upper(), phi), []).append(op)
    return allowed


def user(role):
    return f"{role}:{role.lower()}-1"


def main():
    allowed = table()
    out = [
        "# Generated by gen_role_table_oracle.py; do not edit by hand.",
        'name = "role_table_oracle"',
        'required_roles = ["DOC", "NRS"]',
        "",
        "[[steps]]",
        'id = "setup"',
        'op = "create_ppa"',
        'at = "2024-06-03T09:00:00"',
        "[steps.ppa]",
        'ppa_id = "PPA-ORACLE"',
        'patient_id = "jordan"',
        'pc = ["patient=jordan"]',
        'prc = ["provider=general-hospital"]',
        'roc = ["hipaa"]',
        'validity_end = "2025-12-31"',
    ]
    for i, ((role, phi), ops) in enumerate(sorted(allowed.items())):
        out += [
            "[[steps.ppa.icc]]",
            f'consent_id = "t{i:03}"',
            'patient_id = "jordan"',
            f'users = ["{user(role)}"]',
            f'objects = ["{phi}"]',
            "operations = [" + ", ".join(f'"{o}"' for o in ops) + "]",
        ]
    n = 0
    for role in ROLES:
        for k in range(1, 11):
            phi = f"PHI{1000 + k}"
            for op in OPS:
                n += 1
                want = "Grant" if op in allowed.get((role, phi), []) else "Deny"
                out += [
                    "",
                    "[[steps]]",
                    f'id = "q{n:03}"',
                    'op = "request"',
                    f'user = "{user(role)}"',
                    'patient = "jordan"',
                    f'phi = "{phi}"',
                    f'operation = "{op}"',
                    f'expect = "{want}"',
                ]
    assert n == 330
    out += [
        "",
        "[[steps]]",
        'op = "expect"',
        'event_kind = "ConsentCreated"',
        f"event_count = {len(allowed)}",
    ]
    path = Path(__file__).with_name("role_table_oracle.toml")
    path.write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
