"""Synthetic cohort shaped like a memory-clinic baseline visit.

Every observed predictor is a strictly monotone, bounded transform of a
latent variable, so the generative model stays fully known.  Latents:

* neuropsychology: four standard normals loading 0.8 on one shared factor;
* blood: twelve standard normals, four per factor on three factors, loading 0.85;
* age: a standard normal mapped to Uniform[55, 96] through the normal CDF;
* ApoE: e4 dose 0/1/2 with probabilities 0.70/0.25/0.05 (standardized);
* sex and ten medical-history flags: independent Bernoulli draws.

The disease score is

    L = neuropsych_signal * A * S_np + nuisance_signal * B * S_nu

where ``S_np`` is the standardized sum of the four neuropsych latents
(oriented so larger means more impaired) and ``S_nu`` the standardized sum
of the age, ApoE and three blood latents (one per blood factor).  Adding
standard logistic noise and taking the top ``round(n * class_balance)``
subjects gives the NonHC class.  Within NonHC, the highest 40% of scores
are labelled AD and the rest MCI.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtr

from .dataset import (BINARY_LEVELS, RAW_DIAGNOSES, Column, Schema, Table, binarize_diagnosis,
                      derive_age, drop_columns)
from .errors import ConfigError, UnknownColumn
from .forest import derive_seed

DEFAULT_N = 862
DEFAULT_BALANCE = 320 / 862

# Effect sizes at unit multipliers, calibrated with ``bayes_rate``: Bayes
# accuracy is about 96.4% on every predictor and 93.9% on the neuropsych four.
NEUROPSYCH_EFFECT = 14.0
NUISANCE_EFFECT = 15.0

NP_LOADING = 0.8
BLOOD_LOADING = 0.85
AGE_RANGE = (55.0, 96.0)
APOE_LEVELS = ("e3e3", "e3e4", "e4e4")
APOE_PROBS = (0.70, 0.25, 0.05)
AD_SHARE = 0.4

AGE = "AGE"
ID = "RID"
BIRTH = "BIRTHDATE"
EXAM = "EXAMDATE"
TARGET = "DIAGNOSIS"
SEX = "PTGENDER"
APOE = "APGEN"
MEDICAL = ("MHPSYCH", "MH2NEURL", "MH4CARD", "MH6HEPAT", "MH8MUSCL",
           "MH9ENDO", "MH10GAST", "MH12RENA", "MH16SMOK", "MH17MALI")
MEDICAL_PREVALENCE = (0.15, 0.10, 0.45, 0.05, 0.40, 0.25, 0.30, 0.08, 0.35, 0.20)
# (name, range, orientation): orientation +1 means larger is more impaired.
NEUROPSYCH = (("CDGLOBAL", (0.0, 3.0), 1), ("MMSCORE", (0.0, 30.0), -1),
              ("LIMMTOTAL", (0.0, 25.0), -1), ("LDELTOTAL", (0.0, 25.0), -1))
BLOOD = (("BAT126", (100.0, 1000.0)), ("HMT3", (3.0, 12.0)), ("HMT7", (10.0, 60.0)),
         ("HMT13", (100.0, 500.0)), ("HMT40", (10.0, 18.0)), ("HMT100", (20.0, 40.0)),
         ("HMT102", (30.0, 36.0)), ("RCT6", (2.0, 12.0)), ("RCT11", (60.0, 160.0)),
         ("RCT20", (100.0, 300.0)), ("RCT392", (0.5, 1.5)), ("AXT117", (0.5, 5.0)))
NUISANCE_BLOOD = (0, 4, 8)  # one analyte per blood factor

_BASE_DATE = np.datetime64("2006-11-01")
_EXAM_WINDOW_DAYS = 600


@dataclass(frozen=True)
class CohortConfig:
    n_subjects: int = DEFAULT_N
    seed: int = 0
    missing_rate: float = 0.05
    class_balance: float = DEFAULT_BALANCE
    neuropsych_signal: float = 1.0
    nuisance_signal: float = 0.15

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ConfigError("n_subjects must be >= 2")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("class_balance must lie in (0, 1)")

    @property
    def n_positive(self) -> int:
        return int(round(self.n_subjects * self.class_balance))


@dataclass(frozen=True)
class GroundTruth:
    config: CohortConfig
    score: np.ndarray  # latent disease score L, before noise
    noisy_score: np.ndarray
    labels: np.ndarray  # HC / NonHC
    diagnosis: np.ndarray  # HC / MCI / AD
    weights: dict = field(default_factory=dict)

    def to_rows(self):
        for i in range(len(self.score)):
            yield i + 1, self.score[i], self.noisy_score[i], self.labels[i], self.diagnosis[i]


# ------------------------------------------------------------ schema


def raw_schema() -> Schema:
    cols = [Column(ID, "identifier"), Column(BIRTH, "date", "Demographic"),
            Column(EXAM, "date", "Demographic"), Column(SEX, "binary", "Demographic")]
    cols += [Column(m, "binary", "MedicalHistory") for m in MEDICAL]
    cols.append(Column(APOE, "categorical", "ApoE", APOE_LEVELS))
    cols += [Column(nm, "numeric", "Neuropsych", rng) for nm, rng, _ in NEUROPSYCH]
    cols += [Column(nm, "numeric", "Blood", rng) for nm, rng in BLOOD]
    cols.append(Column(TARGET, "target", "Target", RAW_DIAGNOSES))
    return Schema(tuple(cols))


# ---------------------------------------------------- generative model

# Base standard normals: shared NP factor, 4 NP uniquenesses, 3 blood
# factors, 12 blood uniquenesses, age.
_N_BASE = 1 + 4 + 3 + 12 + 1


def _loadings() -> tuple[dict, np.ndarray]:
    """Rows mapping the base normals to each Gaussian latent."""
    rows = {}
    u_np = math.sqrt(1 - NP_LOADING ** 2)
    for k, (name, _, _) in enumerate(NEUROPSYCH):
        r = np.zeros(_N_BASE)
        r[0] = NP_LOADING
        r[1 + k] = u_np
        rows[name] = r
    u_b = math.sqrt(1 - BLOOD_LOADING ** 2)
    for j, (name, _) in enumerate(BLOOD):
        r = np.zeros(_N_BASE)
        r[5 + j // 4] = BLOOD_LOADING
        r[8 + j] = u_b
        rows[name] = r
    r = np.zeros(_N_BASE)
    r[-1] = 1.0
    rows[AGE] = r
    return rows, np.array(list(rows.values()))


def _apoe_z() -> np.ndarray:
    dose = np.arange(3.0)
    p = np.array(APOE_PROBS)
    mu = float(p @ dose)
    sd = math.sqrt(float(p @ (dose - mu) ** 2))
    return (dose - mu) / sd


def _weights(config: CohortConfig) -> tuple[np.ndarray, float]:
    """Score weights on the base normals and on the standardized ApoE dose."""
    rows, _ = _loadings()
    s_np = sum(rows[nm] for nm, _, _ in NEUROPSYCH)
    s_np = s_np / math.sqrt(float(s_np @ s_np))
    s_nu = rows[AGE] + sum(rows[BLOOD[j][0]] for j in NUISANCE_BLOOD)
    nu_var = float(s_nu @ s_nu) + 1.0  # ApoE term has unit variance
    a = config.neuropsych_signal * NEUROPSYCH_EFFECT
    b = config.nuisance_signal * NUISANCE_EFFECT / math.sqrt(nu_var)
    return a * s_np + b * s_nu, b


_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(40)
_GH_W = _GH_W / _GH_W.sum()
_GL_X, _GL_W = np.polynomial.laguerre.laggauss(60)


def _logistic_normal_mean(m, s: float) -> np.ndarray:
    """E[expit(m + s Z)] for standard normal Z, elementwise over ``m``.

    For small ``s`` the integrand is smooth in Z and Gauss-Hermite suffices.
    For large ``s`` it is nearly a step, so the step part is taken exactly
    (a normal CDF) and only the odd residual expit - step is integrated, by
    Gauss-Laguerre in the scaled distance from the step.
    """
    m = np.asarray(m, dtype=np.float64)
    if s <= 1.0:
        return expit(m[..., None] + s * _GH_X) @ _GH_W
    x0 = -m / s
    v = _GL_X / s
    # expit(-v) = e^-v / (1 + e^-v); Laguerre weights absorb the e^-v.
    g = 1.0 / (1.0 + np.exp(-_GL_X))
    phi = lambda t: np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    resid = (phi(x0[..., None] + v) - phi(x0[..., None] - v)) * g
    return ndtr(m / s) - (resid @ _GL_W) / s


def _population_threshold(w: np.ndarray, c_apoe: float, balance: float) -> float:
    """tau with P(L + logistic noise > tau) equal to ``balance``."""
    sd = math.sqrt(float(w @ w))
    offs = c_apoe * _apoe_z()

    def excess(tau):
        tot = 0.0
        for pa, off in zip(APOE_PROBS, offs):
            tot += pa * float(_logistic_normal_mean(np.array(off - tau), sd))
        return tot - balance

    span = 10.0 * (sd + abs(c_apoe) * 3 + 10)
    return brentq(excess, -span, span, xtol=1e-12)


def _draw(n: int, rng: np.random.Generator):
    """Base normals, ApoE codes, sex and medical flags for n subjects."""
    base = rng.standard_normal((n, _N_BASE))
    apoe = rng.choice(3, size=n, p=APOE_PROBS)
    sex = rng.random(n) < 0.5
    med = rng.random((n, len(MEDICAL))) < np.array(MEDICAL_PREVALENCE)
    return base, apoe, sex, med


def _to_range(g: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Monotone map of a standard normal into [lo, hi]."""
    return np.clip(lo + (hi - lo) * ndtr(g), lo, hi)


def generate_cohort(config: CohortConfig = CohortConfig()) -> tuple[Table, GroundTruth]:
    """Raw cohort (identifier, dates, 28 predictors, 3-level diagnosis) and its truth.

    Age enters through the birth and exam dates; :func:`analysis_table`
    derives it as the 29th predictor.
    """
    n = config.n_subjects
    rng = np.random.default_rng(config.seed)
    base, apoe, sex, med = _draw(n, rng)
    noise = rng.logistic(size=n)
    exam_offset = rng.integers(0, _EXAM_WINDOW_DAYS, size=n)
    day_frac = rng.random(n)

    rows, M = _loadings()
    G = base @ M.T
    w, c_apoe = _weights(config)
    score = base @ w + c_apoe * _apoe_z()[apoe]
    noisy = score + noise
    k = config.n_positive
    order = np.argsort(-noisy, kind="stable")
    labels = np.full(n, "HC", dtype=object)
    labels[order[:k]] = "NonHC"
    diagnosis = labels.copy()
    n_ad = int(round(AD_SHARE * k))
    diagnosis[order[:n_ad]] = "AD"
    diagnosis[order[n_ad:k]] = "MCI"

    names = list(rows)
    cols, miss = {}, {}
    cols[ID] = np.array([f"S{i + 1:05d}" for i in range(n)], dtype=object)
    exam = _BASE_DATE + exam_offset.astype("timedelta64[D]")
    age_years = AGE_RANGE[0] + (AGE_RANGE[1] - AGE_RANGE[0]) * ndtr(G[:, names.index(AGE)])
    # Birth date sits strictly inside the age year so whole-year age is exact.
    age_days = np.floor((np.floor(age_years) + 0.05 + 0.9 * day_frac) * 365.2425).astype(np.int64)
    age_days = np.minimum(age_days, int(math.floor((AGE_RANGE[1] - 0.05) * 365.2425)))
    cols[BIRTH] = exam - age_days.astype("timedelta64[D]")
    cols[EXAM] = exam
    cols[SEX] = np.where(sex, BINARY_LEVELS[1], BINARY_LEVELS[0]).astype(object)
    for j, m in enumerate(MEDICAL):
        cols[m] = np.where(med[:, j], BINARY_LEVELS[1], BINARY_LEVELS[0]).astype(object)
    cols[APOE] = np.array(APOE_LEVELS, dtype=object)[apoe]
    for nm, (lo, hi), sign in NEUROPSYCH:
        cols[nm] = _to_range(sign * G[:, names.index(nm)], lo, hi)
    for nm, (lo, hi) in BLOOD:
        cols[nm] = _to_range(G[:, names.index(nm)], lo, hi)
    cols[TARGET] = diagnosis
    schema = raw_schema()
    for c in schema.names:
        miss[c] = np.zeros(n, bool)
    table = Table(schema, cols, miss, n)
    if config.missing_rate > 0:
        table = inject_missing(table, config.missing_rate, derive_missing_seed(config.seed))

    weights = {"neuropsych_effect": config.neuropsych_signal * NEUROPSYCH_EFFECT,
               "nuisance_effect": config.nuisance_signal * NUISANCE_EFFECT,
               "apoe_weight": float(c_apoe)}
    for nm, r in rows.items():
        weights[nm] = float(w @ r) / float(r @ r)  # projection of the score weight onto that latent
    for m in MEDICAL + (SEX,):
        weights[m] = 0.0
    truth = GroundTruth(config, score, noisy, labels, diagnosis, weights)
    return table, truth


def derive_missing_seed(seed: int) -> int:
    return derive_seed(seed, 0x4D4341)


def inject_missing(table: Table, rate: float, seed: int) -> Table:
    """Mask each predictor or date cell independently with probability ``rate``.

    The target and identifier columns are never masked.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError("rate must lie in [0, 1)")
    if rate == 0:
        return table
    rng = np.random.default_rng(seed)
    miss = dict(table.missing)
    for c in table.schema.columns:
        if c.kind in ("target", "identifier"):
            continue
        hide = rng.random(table.n_rows) < rate
        miss[c.name] = table.missing[c.name] | hide
    return Table(table.schema, dict(table.columns), miss, table.n_rows)


def analysis_table(raw: Table) -> Table:
    """Derive age, drop identifiers and dates, collapse the diagnosis to HC/NonHC."""
    t = derive_age(raw, BIRTH, EXAM, AGE)
    t = drop_columns(t, [ID, BIRTH, EXAM])
    return binarize_diagnosis(t)


# ---------------------------------------------------------- Bayes oracle


def predictor_names() -> list[str]:
    return [SEX, *MEDICAL, APOE, *(nm for nm, _, _ in NEUROPSYCH), *(nm for nm, _ in BLOOD), AGE]


def bayes_rate(truth: GroundTruth, subset, n_draws: int = 100_000, seed: int = 12345) -> float:
    """Monte-Carlo accuracy of the Bayes classifier that sees only ``subset``.

    Fresh subjects are drawn from the generative model.  For each, the
    posterior P(NonHC | observed features) is computed exactly: the Gaussian
    part of the score is conditioned on the observed latents, unobserved
    ApoE is mixed over its prior, and the logistic link is integrated
    numerically.  The returned value is the mean of
    max(p, 1 - p) against the population threshold.
    """
    subset = list(subset)
    known = set(predictor_names())
    for s in subset:
        if s not in known:
            raise UnknownColumn(s)
    cfg = truth.config
    w, c_apoe = _weights(cfg)
    tau = _population_threshold(w, c_apoe, cfg.class_balance)
    rows, _ = _loadings()
    obs = [s for s in rows if s in subset]
    see_apoe = APOE in subset

    rng = np.random.default_rng(seed)
    base = rng.standard_normal((n_draws, _N_BASE))
    apoe = rng.choice(3, size=n_draws, p=APOE_PROBS)

    if obs:
        Ms = np.array([rows[s] for s in obs])
        K = Ms @ Ms.T
        beta = np.linalg.solve(K, Ms @ w)
        mu = (base @ Ms.T) @ beta
        var = float(w @ w - (Ms @ w) @ beta)
    else:
        mu = np.zeros(n_draws)
        var = float(w @ w)
    sd = math.sqrt(max(var, 0.0))
    z = _apoe_z()
    if see_apoe:
        p = _logistic_normal_mean(mu + c_apoe * z[apoe] - tau, sd)
    else:
        p = sum(pa * _logistic_normal_mean(mu + c_apoe * z[a] - tau, sd) for a, pa in enumerate(APOE_PROBS))
    return float(np.mean(np.maximum(p, 1.0 - p)))


# ------------------------------------------------- planted-signal table


def planted_table(n: int = 800, n_relevant: int = 4, n_noise: int = 24, seed: int = 0,
                  effect: float = 0.5, noise_scale: float = 0.5) -> Table:
    """Standard-normal predictors where only the first ``n_relevant`` drive the label.

    Columns are ``REL0..`` then ``NOISE0..`` plus an HC/NonHC target; the
    label is NonHC when ``effect * sum(relevant) + noise_scale * logistic``
    is positive.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n_relevant + n_noise))
    score = effect * X[:, :n_relevant].sum(axis=1) + noise_scale * rng.logistic(size=n)
    names = [f"REL{j}" for j in range(n_relevant)] + [f"NOISE{j}" for j in range(n_noise)]
    cols = tuple(Column(nm, "numeric") for nm in names) + (Column(TARGET, "target", "Target", ("HC", "NonHC")),)
    data = {nm: X[:, j] for j, nm in enumerate(names)}
    data[TARGET] = np.where(score > 0, "NonHC", "HC").astype(object)
    return Table(Schema(cols), data, {nm: np.zeros(n, bool) for nm in data}, n)


# -------------------------------------------------------------- export


def write_truth_csv(truth: GroundTruth, path) -> None:
    with open(path, "w") as fh:
        fh.write("row,score,noisy_score,label,diagnosis\n")
        for i, s, ns, lab, dx in truth.to_rows():
            fh.write(f"{i},{float(s)!r},{float(ns)!r},{lab},{dx}\n")


def write_weights_json(truth: GroundTruth, path) -> None:
    payload = {"config": asdict(truth.config), "weights": truth.weights}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
