//! Dataset ingestion, censoring, serialization and marginal goodness of fit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::inference::{weibull_mle, Dataset, Observation};

const DATASET1: &str = include_str!("../data/dataset1.csv");
const DATASET2: &str = include_str!("../data/dataset2.csv");

/// Observation window of the first reference dataset.
pub const DATASET1_WINDOW: (f64, f64) = (5.0, 2.0);

/// One input row. `censored_marker` rows carry no numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub age: Option<f64>,
    pub usage: Option<f64>,
    pub censored_marker: bool,
}

impl RawRecord {
    pub fn value(age: f64, usage: f64) -> Self {
        RawRecord {
            age: Some(age),
            usage: Some(usage),
            censored_marker: false,
        }
    }

    pub fn marker() -> Self {
        RawRecord {
            age: None,
            usage: None,
            censored_marker: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub age_col: String,
    pub usage_col: String,
    /// Multiplier applied to both columns on load.
    pub scale_factor: f64,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            age_col: "age".into(),
            usage_col: "usage".into(),
            scale_factor: 1.0,
        }
    }
}

const MARKER: &str = "---";

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, schema, path)
}

/// Parses CSV text. Lines starting with `#` are comments; an empty input
/// yields no records.
pub fn parse_records(text: &str, schema: &Schema, origin: &Path) -> Result<Vec<RawRecord>> {
    if text.lines().all(|l| l.trim().is_empty() || l.trim_start().starts_with('#')) {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            msg: format!("missing column '{name}'"),
        })
    };
    let ia = col(&schema.age_col)?;
    let iu = col(&schema.usage_col)?;
    // The reader skips comment lines without counting them, so source line
    // numbers come from the text itself; the first entry is the header.
    let data_lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, _)| i + 1)
        .collect();
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = data_lines.get(k + 1).copied().unwrap_or(0);
        let bad = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let a = rec.get(ia).ok_or_else(|| bad("missing age field".into()))?;
        let u = rec.get(iu).ok_or_else(|| bad("missing usage field".into()))?;
        match (a == MARKER, u == MARKER) {
            (true, true) => out.push(RawRecord::marker()),
            (false, false) => {
                let parse = |s: &str, what: &str| -> Result<f64> {
                    let v: f64 = s.parse().map_err(|_| bad(format!("{what} '{s}' is not a number")))?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(bad(format!("{what} {v} must be finite and nonnegative")));
                    }
                    Ok(v * schema.scale_factor)
                };
                out.push(RawRecord::value(parse(a, "age")?, parse(u, "usage")?));
            }
            _ => return Err(bad("censored marker must fill both columns".into())),
        }
    }
    Ok(out)
}

/// The first reference dataset: 34 failures and two marker rows.
pub fn bundled_dataset1() -> Vec<RawRecord> {
    parse_records(DATASET1, &Schema::default(), Path::new("dataset1.csv")).expect("bundled fixture parses")
}

/// The second reference dataset: 43 failures.
pub fn bundled_dataset2() -> Vec<RawRecord> {
    parse_records(DATASET2, &Schema::default(), Path::new("dataset2.csv")).expect("bundled fixture parses")
}

/// Censors every record with `age >= t0` or `usage >= u0` at `(t0, u0)`;
/// marker rows become censored records, and `pad_to_n` appends censored
/// records up to that total.
pub fn apply_censoring(records: &[RawRecord], t0: f64, u0: f64, pad_to_n: Option<usize>) -> Result<Dataset> {
    if !(t0 > 0.0) || !(u0 > 0.0) {
        return Err(Error::Domain(format!("censoring thresholds must be > 0, got ({t0}, {u0})")));
    }
    let censored = Observation {
        t: t0,
        u: u0,
        failed: false,
    };
    let mut obs: Vec<Observation> = records
        .iter()
        .map(|r| match (r.censored_marker, r.age, r.usage) {
            (false, Some(t), Some(u)) if t < t0 && u < u0 => Observation { t, u, failed: true },
            _ => censored,
        })
        .collect();
    if let Some(n) = pad_to_n {
        if n < obs.len() {
            return Err(Error::Config(format!(
                "pad_to_n = {n} is below the record count {}",
                obs.len()
            )));
        }
        obs.resize(n, censored);
    }
    Dataset::new(obs, t0, u0)
}

/// Inverse of [`apply_censoring`] up to padding: censored units come back as
/// numeric records at the thresholds, so re-censoring is idempotent.
pub fn to_records(data: &Dataset) -> Vec<RawRecord> {
    data.observations
        .iter()
        .map(|o| RawRecord::value(o.t, o.u))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub t0: f64,
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub u0: f64,
    pub n: usize,
    pub d: usize,
}

/// JSON has no infinity, so unbounded thresholds are written as `"inf"`.
fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) if s == "inf" => Ok(f64::INFINITY),
        Num::S(s) => Err(serde::de::Error::custom(format!("invalid threshold '{s}'"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    u: f64,
    failed: bool,
}

/// Sidecar path for a dataset CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `t,u,failed` CSV plus the `{t0, u0, n, d}` JSON sidecar.
pub fn write_dataset(data: &Dataset, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(csv_path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    for o in &data.observations {
        w.serialize(Row {
            t: o.t,
            u: o.u,
            failed: o.failed,
        })?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let meta = DatasetMeta {
        t0: data.t0,
        u0: data.u0,
        n: data.n(),
        d: data.d(),
    };
    let side = sidecar_path(csv_path);
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    let side = sidecar_path(csv_path);
    let meta: DatasetMeta =
        serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut obs = Vec::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        obs.push(Observation {
            t: r.t,
            u: r.u,
            failed: r.failed,
        });
    }
    let data = Dataset::new(obs, meta.t0, meta.u0)?;
    if data.n() != meta.n || data.d() != meta.d {
        return Err(Error::Parse {
            path: side,
            line: 0,
            msg: format!(
                "sidecar says n={}, d={} but the CSV has n={}, d={}",
                meta.n,
                meta.d,
                data.n(),
                data.d()
            ),
        });
    }
    Ok(data)
}

/// Goodness of fit of the two Weibull marginals on the failure records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_failures: usize,
    /// `(eta, lambda)` for age then usage.
    pub marginal_mles: [(f64, f64); 2],
    pub ad_stat_age: f64,
    pub ad_stat_usage: f64,
    /// Anderson–Darling p-values from the asymptotic distribution with the
    /// finite-sample correction.
    pub ad_p_age: f64,
    pub ad_p_usage: f64,
    /// p-values from the estimated-parameter Weibull table, interpolated
    /// and clamped to the tabulated range `[0.01, 0.25]`.
    pub ad_p_age_table: f64,
    pub ad_p_usage_table: f64,
    pub pearson_r: f64,
    /// `(theoretical, sample)` quantile pairs.
    pub qq_age: Vec<(f64, f64)>,
    pub qq_usage: Vec<(f64, f64)>,
}

pub const MIN_DIAGNOSTIC_FAILURES: usize = 8;

pub fn marginal_diagnostics(data: &Dataset) -> Result<FitDiagnostics> {
    let ts: Vec<f64> = data.failures().map(|o| o.t).collect();
    let us: Vec<f64> = data.failures().map(|o| o.u).collect();
    if ts.len() < MIN_DIAGNOSTIC_FAILURES {
        return Err(Error::InsufficientData(format!(
            "{} failures; at least {MIN_DIAGNOSTIC_FAILURES} are needed",
            ts.len()
        )));
    }
    let fit_t = weibull_mle(&ts)?;
    let fit_u = weibull_mle(&us)?;
    let a_t = anderson_darling(&ts, fit_t);
    let a_u = anderson_darling(&us, fit_u);
    let n = ts.len();
    Ok(FitDiagnostics {
        n_failures: n,
        marginal_mles: [fit_t, fit_u],
        ad_stat_age: a_t,
        ad_stat_usage: a_u,
        ad_p_age: ad_pvalue(n, a_t),
        ad_p_usage: ad_pvalue(n, a_u),
        ad_p_age_table: ad_pvalue_weibull_table(n, a_t),
        ad_p_usage_table: ad_pvalue_weibull_table(n, a_u),
        pearson_r: pearson(&ts, &us),
        qq_age: qq_points(&ts, fit_t),
        qq_usage: qq_points(&us, fit_u),
    })
}

fn weibull_cdf(x: f64, (eta, lambda): (f64, f64)) -> f64 {
    -(-(x / eta).powf(lambda)).exp_m1()
}

/// Anderson–Darling statistic of `xs` against a fitted Weibull.
pub fn anderson_darling(xs: &[f64], fit: (f64, f64)) -> f64 {
    let mut z: Vec<f64> = xs.iter().map(|&x| weibull_cdf(x, fit)).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let lo = z[i].max(1e-300).ln();
        let hi = (1.0 - z[n - 1 - i]).max(1e-300).ln();
        s += (2.0 * i as f64 + 1.0) * (lo + hi);
    }
    -nf - s / nf
}

/// Asymptotic Anderson–Darling CDF (Marsaglia & Marsaglia, 2004).
fn ad_inf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z)
            .exp())
        .exp()
    }
}

/// Finite-sample correction to [`ad_inf`].
fn ad_errfix(n: usize, x: f64) -> f64 {
    let nf = n as f64;
    if x > 0.8 {
        return (-130.2137
            + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x)
            / nf;
    }
    let c = 0.01265 + 0.1757 / nf;
    if x < c {
        let t = x / c;
        let t = t.sqrt() * (1.0 - t) * (49.0 * t - 102.0);
        return t * (0.0037 / (nf * nf) + 0.00078 / nf + 0.00006) / nf;
    }
    let t = (x - c) / (0.8 - c);
    let t = -0.00022633 + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
    t * (0.04213 + 0.01365 / nf) / nf
}

/// Upper-tail p-value of an Anderson–Darling statistic for sample size `n`.
pub fn ad_pvalue(n: usize, a2: f64) -> f64 {
    let cdf = ad_inf(a2);
    (1.0 - (cdf + ad_errfix(n, cdf))).clamp(0.0, 1.0)
}

/// p-value from the critical values of the modified statistic
/// `A^2 (1 + 0.2 / sqrt(n))` for a Weibull with both parameters estimated,
/// interpolated linearly in `ln p`.
pub fn ad_pvalue_weibull_table(n: usize, a2: f64) -> f64 {
    const TABLE: [(f64, f64); 5] = [(0.474, 0.25), (0.637, 0.10), (0.757, 0.05), (0.877, 0.025), (1.038, 0.01)];
    let a = a2 * (1.0 + 0.2 / (n as f64).sqrt());
    if a <= TABLE[0].0 {
        return TABLE[0].1;
    }
    for w in TABLE.windows(2) {
        let ((a0, p0), (a1, p1)) = (w[0], w[1]);
        if a <= a1 {
            let s = (a - a0) / (a1 - a0);
            return (p0.ln() + s * (p1.ln() - p0.ln())).exp();
        }
    }
    TABLE[4].1
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Weibull QQ pairs at plotting positions `(i - 0.5) / n`.
pub fn qq_points(xs: &[f64], (eta, lambda): (f64, f64)) -> Vec<(f64, f64)> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = (i as f64 + 0.5) / n;
            (eta * (-(-p).ln_1p()).powf(1.0 / lambda), x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_counts() {
        let d1 = bundled_dataset1();
        assert_eq!(d1.len(), 36);
        assert_eq!(d1.iter().filter(|r| r.censored_marker).count(), 2);
        let d2 = bundled_dataset2();
        assert_eq!(d2.len(), 43);
        assert_eq!(d2[0], RawRecord::value(0.01, 0.02));
        assert_eq!(d2[42], RawRecord::value(3.60, 6.23));
    }

    #[test]
    fn empty_and_malformed() {
        let s = Schema::default();
        assert!(parse_records("", &s, Path::new("x")).unwrap().is_empty());
        let err = parse_records("age,usage\n1.0,2.0\n1.0,abc\n", &s, Path::new("x.csv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        assert!(parse_records("age,usage\n---,1.0\n", &s, Path::new("x")).is_err());
    }

    #[test]
    fn scale_factor_applies() {
        let s = Schema {
            scale_factor: 100.0,
            ..Default::default()
        };
        let r = parse_records("usage,age\n0.5,0.25\n", &s, Path::new("x")).unwrap();
        assert_eq!(r[0], RawRecord::value(25.0, 50.0));
    }

    #[test]
    fn censoring_and_padding() {
        let d = apply_censoring(&bundled_dataset1(), 5.0, 2.0, Some(40)).unwrap();
        assert_eq!((d.n(), d.d()), (40, 34));
        assert!(apply_censoring(&bundled_dataset1(), 5.0, 2.0, Some(30)).is_err());
        let d = apply_censoring(&bundled_dataset2(), f64::INFINITY, f64::INFINITY, None).unwrap();
        assert_eq!(d.d(), 43);
    }

    #[test]
    fn collinear_pearson() {
        let t = [0.1, 0.5, 0.9, 1.3];
        let u: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        assert!((pearson(&t, &u) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ad_inf_reference_values() {
        // Asymptotic upper-tail critical values: 0.10 at 1.933, 0.05 at 2.492, 0.01 at 3.878.
        assert!((1.0 - ad_inf(1.933) - 0.10).abs() < 2e-4);
        assert!((1.0 - ad_inf(2.492) - 0.05).abs() < 2e-4);
        assert!((1.0 - ad_inf(3.878) - 0.01).abs() < 2e-4);
    }
}
