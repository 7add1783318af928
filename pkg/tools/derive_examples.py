"""Recompute the worked numeric examples without using the duedl package.

Exact rational arithmetic (fractions) for the evidence / fusion / MSE cases and
mpmath at 50 digits for the log-gamma / digamma case. Run it to regenerate
``tests/data/derived_examples.json``; the test suite asserts the library against
the frozen file and checks the file against a fresh run of this script.

    python tools/derive_examples.py [--write]
"""
import json
import sys
from fractions import Fraction as F
from pathlib import Path

import mpmath

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "derived_examples.json"


def evidence_k4():
    # one pixel, K=4, evidence (3, 0, 0, 0)
    e = [F(3), F(0), F(0), F(0)]
    k = len(e)
    alpha = [x + 1 for x in e]
    s = sum(alpha)
    return {"alpha": alpha, "S": s, "b": [x / s for x in e], "u": F(k) / s, "p": [a / s for a in alpha]}


def belief_uniform_evidence():
    e = [F(1)] * 4
    s = sum(e) + 4
    return {"S": s, "b": [x / s for x in e], "u": F(4) / s}


def prob_k2():
    e = [F(8), F(0)]
    alpha = [x + 1 for x in e]
    s = sum(alpha)
    return {"alpha": alpha, "S": s, "p": [a / s for a in alpha]}


def partial_mse_one_pixel():
    # y = (1, 0), e = (1, 0)
    y = [F(1), F(0)]
    alpha = [F(2), F(1)]
    s = sum(alpha)
    p = [a / s for a in alpha]
    total = F(0)
    for yj, pj in zip(y, p):
        total += (yj - pj) ** 2 + pj * (1 - pj) / (s + 1)
    return {"p": p, "S": s, "loss": total}


def partial_kl_two_class():
    # labelled class 0, alpha = (5, 3) -> alpha_hat = (1, 3)
    mpmath.mp.dps = 50
    ah = [mpmath.mpf(1), mpmath.mpf(3)]
    k = len(ah)
    s = sum(ah)
    val = mpmath.loggamma(s) - mpmath.loggamma(k) - sum(mpmath.loggamma(a) for a in ah)
    val += sum((a - 1) * (mpmath.digamma(a) - mpmath.digamma(s)) for a in ah)
    closed = mpmath.log(3) - mpmath.mpf(2) / 3
    assert abs(val - closed) < mpmath.mpf(10) ** -40
    return {"alpha_hat": [1, 3], "kl": val}


def dempster_two_class():
    b1, u1 = [F(6, 10), F(0)], F(4, 10)
    b2, u2 = [F(0), F(6, 10)], F(4, 10)
    k = 2
    conflict = sum(b1[n] * b2[m] for n in range(k) for m in range(k) if n != m)
    scale = 1 / (1 - conflict)
    b = [scale * (b1[j] * b2[j] + b1[j] * u2 + b2[j] * u1) for j in range(k)]
    u = scale * u1 * u2
    e = [k * bj / u for bj in b]
    s = F(k) / u
    alpha = [x + 1 for x in e]
    p = [a / s for a in alpha]
    # back through the evidence -> opinion map
    s_back = sum(e) + k
    return {"C": conflict, "b": b, "u": u, "e": e, "S": s, "alpha": alpha, "p": p,
            "b_roundtrip": [x / s_back for x in e], "u_roundtrip": F(k) / s_back}


def untrained_head(k=4):
    # raw = 0 everywhere -> e = ln 2 per class
    ln2 = mpmath.log(2)
    s = k * ln2 + k
    return {"e": ln2, "u": k / s, "p": (ln2 + 1) / s}


def dice_toy():
    # 4 predicted pixels, 4 true pixels, 2 shared
    return {"dice": F(2 * 2, 4 + 4)}


def ece_single_bin():
    # every pixel confidence 0.9, 60% correct
    return {"ece": abs(F(6, 10) - F(9, 10))}


def _plain(v):
    if isinstance(v, F):
        return {"num": v.numerator, "den": v.denominator, "float": float(v)}
    if isinstance(v, mpmath.mpf):
        return {"float": float(v), "digits": mpmath.nstr(v, 30)}
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def derive():
    return _plain({
        "evidence_k4": evidence_k4(),
        "belief_uniform_evidence": belief_uniform_evidence(),
        "prob_k2": prob_k2(),
        "partial_mse_one_pixel": partial_mse_one_pixel(),
        "partial_kl_two_class": partial_kl_two_class(),
        "dempster_two_class": dempster_two_class(),
        "untrained_head": untrained_head(),
        "dice_toy": dice_toy(),
        "ece_single_bin": ece_single_bin(),
    })


if __name__ == "__main__":
    result = derive()
    text = json.dumps(result, indent=1, sort_keys=True)
    if "--write" in sys.argv:
        OUT.parent.mkdir(parents=True, exist_ok=True)
        OUT.write_text(text + "\n")
        print(f"wrote {OUT}")
    else:
        print(text)
