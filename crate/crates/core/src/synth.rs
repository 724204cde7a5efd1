//! Synthetic tabular generators so every experiment runs offline.
//!
//! * `strong`: census-like, about 22% positives, driven by age, education
//!   and hours; the remaining columns are weak or pure noise.
//! * `weak`: hospital-like, roughly 89/11 imbalance, weak feature coupling.
//! * `noise`: target independent of every feature.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, ColumnSpec, Schema, Table};
use crate::error::{Error, Result};
use crate::util::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Strong,
    Weak,
    Noise,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Strong, SynthKind::Weak, SynthKind::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Strong => "strong",
            SynthKind::Weak => "weak",
            SynthKind::Noise => "noise",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic dataset '{s}'")))
    }
}

pub fn generate(kind: SynthKind, n: usize, seed: u64) -> Result<Table> {
    match kind {
        SynthKind::Strong => strong(n, seed),
        SynthKind::Weak => weak(n, seed),
        SynthKind::Noise => noise(n, seed),
    }
}

fn cat(name: &str, labels: &[&str]) -> ColumnSpec {
    let mut sorted: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
    sorted.sort();
    let mut c = ColumnSpec::qi(name, ColumnKind::Categorical);
    c.labels = sorted;
    c
}

/// Code of `label` under the lexicographic encoding used by `cat`.
fn code(spec: &ColumnSpec, label: &str) -> f64 {
    spec.labels
        .iter()
        .position(|l| l == label)
        .expect("known label") as f64
}

fn pick<'a>(rng: &mut ChaCha8Rng, labels: &[&'a str], weights: &[f64]) -> &'a str {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (l, w) in labels.iter().zip(weights) {
        if u < *w {
            return l;
        }
        u -= w;
    }
    labels[labels.len() - 1]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clamp_round(v: f64, lo: f64, hi: f64) -> f64 {
    v.round().clamp(lo, hi)
}

const WORKCLASS: &[&str] = &[
    "private",
    "self-emp",
    "federal-gov",
    "local-gov",
    "state-gov",
    "without-pay",
];
const MARITAL: &[&str] = &[
    "married",
    "never-married",
    "divorced",
    "separated",
    "widowed",
];
const OCCUPATION: &[&str] = &[
    "exec-managerial",
    "prof-specialty",
    "tech-support",
    "sales",
    "craft-repair",
    "adm-clerical",
    "machine-op",
    "transport",
    "service",
    "farming",
];
const RELATIONSHIP: &[&str] = &[
    "husband",
    "wife",
    "own-child",
    "not-in-family",
    "unmarried",
    "other-relative",
];
const RACE: &[&str] = &["white", "black", "asian-pac", "amer-indian", "other"];
const SEX: &[&str] = &["female", "male"];
const YES_NO: &[&str] = &["no", "yes"];
const REGION: &[&str] = &["north-america", "latin-america", "europe", "asia", "other"];

pub fn strong_schema() -> Schema {
    Schema::new(vec![
        ColumnSpec::qi("age", ColumnKind::Integer),
        cat("workclass", WORKCLASS),
        ColumnSpec::qi("education_num", ColumnKind::Integer),
        cat("marital_status", MARITAL),
        cat("occupation", OCCUPATION),
        cat("relationship", RELATIONSHIP),
        cat("race", RACE),
        cat("sex", SEX),
        ColumnSpec::qi("hours_per_week", ColumnKind::Integer),
        cat("native_region", REGION),
        cat("urban", YES_NO),
        cat("homeowner", YES_NO),
        cat("has_children", YES_NO),
        ColumnSpec::target("income_gt_50k"),
    ])
    .expect("static schema")
}

fn strong(n: usize, seed: u64) -> Result<Table> {
    let schema = strong_schema();
    let spec = |name: &str| schema.columns()[schema.index_of(name).unwrap()].clone();
    let (s_work, s_mar, s_occ, s_rel, s_race, s_sex, s_reg) = (
        spec("workclass"),
        spec("marital_status"),
        spec("occupation"),
        spec("relationship"),
        spec("race"),
        spec("sex"),
        spec("native_region"),
    );
    let mut rng = seeded_rng(seed, "synth-strong");
    let age_dist = Normal::new(40.0, 13.0).unwrap();
    let edu_dist = Normal::new(10.0, 2.6).unwrap();
    let hours_dist = Normal::new(41.0, 11.0).unwrap();

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let age = clamp_round(age_dist.sample(&mut rng), 17.0, 90.0);
        let edu = clamp_round(edu_dist.sample(&mut rng), 1.0, 16.0);
        let sex = pick(&mut rng, SEX, &[0.33, 0.67]);
        let married_p = sigmoid((age - 30.0) / 6.0) * 0.75;
        let marital = if rng.gen_bool(married_p) {
            "married"
        } else {
            pick(&mut rng, &MARITAL[1..], &[0.6, 0.2, 0.06, 0.14])
        };
        let relationship = if marital == "married" {
            if sex == "male" {
                "husband"
            } else {
                "wife"
            }
        } else if age < 26.0 {
            pick(
                &mut rng,
                &["own-child", "not-in-family", "other-relative"],
                &[0.6, 0.3, 0.1],
            )
        } else {
            pick(
                &mut rng,
                &["not-in-family", "unmarried", "own-child", "other-relative"],
                &[0.55, 0.3, 0.1, 0.05],
            )
        };
        let occupation = if edu >= 13.0 {
            pick(
                &mut rng,
                OCCUPATION,
                &[3.0, 4.0, 1.0, 1.5, 0.4, 1.0, 0.2, 0.2, 0.4, 0.1],
            )
        } else {
            pick(
                &mut rng,
                OCCUPATION,
                &[0.8, 0.3, 0.6, 1.2, 1.6, 1.4, 1.2, 0.9, 1.5, 0.5],
            )
        };
        let workclass = pick(&mut rng, WORKCLASS, &[0.40, 0.18, 0.10, 0.14, 0.12, 0.06]);
        let race = pick(&mut rng, RACE, &[0.40, 0.22, 0.18, 0.08, 0.12]);
        let region = pick(&mut rng, REGION, &[0.40, 0.20, 0.20, 0.12, 0.08]);
        let hours = clamp_round(hours_dist.sample(&mut rng), 1.0, 99.0);

        let mut z = -8.25;
        z += 0.075 * (age.min(55.0) - 17.0) - 0.06 * (age - 55.0).max(0.0);
        z += if (35.0..=58.0).contains(&age) {
            2.7
        } else {
            -2.7
        };
        z += 1.35 * (edu - 9.0);
        z += 0.135 * (hours - 40.0);
        z += match relationship {
            "husband" | "wife" => 0.69,
            "not-in-family" | "unmarried" => 0.12,
            _ => -0.24,
        };
        z += match occupation {
            "exec-managerial" | "prof-specialty" => 0.24,
            "tech-support" | "sales" => 0.09,
            "service" | "farming" => -0.18,
            _ => 0.0,
        };
        let y = rng.gen_bool(sigmoid(z));

        rows.push(vec![
            age,
            code(&s_work, workclass),
            edu,
            code(&s_mar, marital),
            code(&s_occ, occupation),
            code(&s_rel, relationship),
            code(&s_race, race),
            code(&s_sex, sex),
            hours,
            code(&s_reg, region),
            f64::from(rng.gen_bool(0.55) as u8),
            f64::from(rng.gen_bool(0.5) as u8),
            f64::from(rng.gen_bool(0.45) as u8),
            f64::from(y as u8),
        ]);
    }
    Table::new(schema, rows)
}

const ADMISSION_TYPE: &[&str] = &["emergency", "urgent", "elective", "newborn", "other"];
const DISCHARGE: &[&str] = &["home", "home-health", "snf", "transfer", "other"];
const ADMISSION_SOURCE: &[&str] = &["emergency-room", "referral", "transfer", "other"];
const GLU: &[&str] = &["none", "norm", "gt200", "gt300"];
const A1C: &[&str] = &["none", "norm", "gt7", "gt8"];
const GENDER: &[&str] = &["female", "male"];
const RACE_H: &[&str] = &[
    "caucasian",
    "african-american",
    "hispanic",
    "asian",
    "other",
];

pub fn weak_schema() -> Schema {
    Schema::new(vec![
        cat("race", RACE_H),
        cat("gender", GENDER),
        ColumnSpec::qi("age_bracket", ColumnKind::Integer),
        cat("admission_type", ADMISSION_TYPE),
        cat("discharge_disposition", DISCHARGE),
        cat("admission_source", ADMISSION_SOURCE),
        ColumnSpec::qi("time_in_hospital", ColumnKind::Integer),
        ColumnSpec::qi("num_lab_procedures", ColumnKind::Integer),
        ColumnSpec::qi("num_procedures", ColumnKind::Integer),
        ColumnSpec::qi("num_medications", ColumnKind::Integer),
        ColumnSpec::qi("number_outpatient", ColumnKind::Integer),
        ColumnSpec::qi("number_emergency", ColumnKind::Integer),
        ColumnSpec::qi("number_inpatient", ColumnKind::Integer),
        ColumnSpec::qi("number_diagnoses", ColumnKind::Integer),
        cat("max_glu_serum", GLU),
        cat("a1c_result", A1C),
        ColumnSpec::target("readmitted_30d"),
    ])
    .expect("static schema")
}

fn poissonish(rng: &mut ChaCha8Rng, mean: f64, cap: f64) -> f64 {
    // geometric-like count with the requested mean
    let p = 1.0 / (1.0 + mean);
    let mut k = 0.0;
    while k < cap && !rng.gen_bool(p) {
        k += 1.0;
    }
    k
}

fn weak(n: usize, seed: u64) -> Result<Table> {
    let schema = weak_schema();
    let spec = |name: &str| schema.columns()[schema.index_of(name).unwrap()].clone();
    let specs: Vec<ColumnSpec> = [
        "race",
        "gender",
        "admission_type",
        "discharge_disposition",
        "admission_source",
        "max_glu_serum",
        "a1c_result",
    ]
    .iter()
    .map(|s| spec(s))
    .collect();
    let mut rng = seeded_rng(seed, "synth-weak");
    let lab = Normal::new(43.0, 19.0).unwrap();
    let meds = Normal::new(16.0, 8.0).unwrap();
    let stay = Normal::new(4.4, 2.9).unwrap();
    let diag = Normal::new(7.4, 1.9).unwrap();

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let race = pick(&mut rng, RACE_H, &[0.75, 0.19, 0.02, 0.01, 0.03]);
        let gender = pick(&mut rng, GENDER, &[0.54, 0.46]);
        let age = clamp_round(Normal::new(6.1, 1.6).unwrap().sample(&mut rng), 0.0, 9.0);
        let adm = pick(&mut rng, ADMISSION_TYPE, &[0.53, 0.18, 0.19, 0.01, 0.09]);
        let dis = pick(&mut rng, DISCHARGE, &[0.59, 0.13, 0.14, 0.05, 0.09]);
        let src = pick(&mut rng, ADMISSION_SOURCE, &[0.56, 0.30, 0.06, 0.08]);
        let t_hosp = clamp_round(stay.sample(&mut rng), 1.0, 14.0);
        let n_lab = clamp_round(lab.sample(&mut rng), 1.0, 120.0);
        let n_proc = clamp_round(poissonish(&mut rng, 1.3, 6.0), 0.0, 6.0);
        let n_med = clamp_round(meds.sample(&mut rng) + 0.8 * t_hosp, 1.0, 80.0);
        let n_out = poissonish(&mut rng, 0.35, 40.0);
        let n_emerg = poissonish(&mut rng, 0.2, 40.0);
        let n_inp = poissonish(&mut rng, 0.6, 20.0);
        let n_diag = clamp_round(diag.sample(&mut rng), 1.0, 16.0);
        let glu = pick(&mut rng, GLU, &[0.95, 0.025, 0.015, 0.01]);
        let a1c = pick(&mut rng, A1C, &[0.83, 0.05, 0.04, 0.08]);

        let mut z = -2.35;
        z += 0.22 * n_inp.min(4.0);
        z += 0.06 * (n_diag - 7.0);
        z += 0.004 * (n_lab - 43.0);
        z += 0.006 * (n_med - 16.0);
        z += 0.05 * n_emerg.min(3.0);
        if dis == "snf" || dis == "transfer" {
            z += 0.25;
        }
        let y = rng.gen_bool(sigmoid(z));

        let codes = [race, gender, adm, dis, src, glu, a1c];
        let c: Vec<f64> = specs.iter().zip(codes).map(|(s, l)| code(s, l)).collect();
        rows.push(vec![
            c[0],
            c[1],
            age,
            c[2],
            c[3],
            c[4],
            t_hosp,
            n_lab,
            n_proc,
            n_med,
            n_out,
            n_emerg,
            n_inp,
            n_diag,
            c[5],
            c[6],
            f64::from(y as u8),
        ]);
    }
    Table::new(schema, rows)
}

pub fn noise_schema() -> Schema {
    let mut cols: Vec<ColumnSpec> = (0..6)
        .map(|j| ColumnSpec::qi(format!("n{j}"), ColumnKind::Continuous))
        .collect();
    cols.push(ColumnSpec::qi("i0", ColumnKind::Integer));
    cols.push(ColumnSpec::target("y"));
    Schema::new(cols).expect("static schema")
}

fn noise(n: usize, seed: u64) -> Result<Table> {
    let mut rng = seeded_rng(seed, "synth-noise");
    let rows = (0..n)
        .map(|_| {
            let mut r: Vec<f64> = (0..6)
                .map(|_| (rng.gen_range(-3.0..3.0) * 1e4f64).round() / 1e4)
                .collect();
            r.push(rng.gen_range(0..50) as f64);
            r.push(f64::from(rng.gen_bool(0.5) as u8));
            r
        })
        .collect();
    Table::new(noise_schema(), rows)
}
