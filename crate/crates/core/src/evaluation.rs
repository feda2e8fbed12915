//! Usability evaluation arithmetic: SUS scoring and interpretation, and
//! per-task timing/error statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub const SUS_ITEMS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("invalid SUS response: {0}")]
    InvalidResponse(String),
    #[error("score {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("no samples")]
    EmptyInput,
    #[error("invalid task sample: {0}")]
    InvalidSample(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("band table: {0}")]
    BadTable(String),
}

/// Ten Likert answers in questionnaire order, each 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct SusResponse {
    items: [u8; SUS_ITEMS],
}

impl SusResponse {
    pub fn new(items: &[u8]) -> Result<Self, EvaluationError> {
        let items: [u8; SUS_ITEMS] = items.try_into().map_err(|_| {
            EvaluationError::InvalidResponse(format!("expected {SUS_ITEMS} items, got {}", items.len()))
        })?;
        if let Some((i, v)) = items.iter().enumerate().find(|(_, v)| !(1..=5).contains(*v)) {
            return Err(EvaluationError::InvalidResponse(format!("item {} = {v} outside 1..=5", i + 1)));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[u8; SUS_ITEMS] {
        &self.items
    }

    /// Sum of item contributions, 0..=40.
    pub fn raw_points(&self) -> u32 {
        self.items
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 2 == 0 { u32::from(v) - 1 } else { 5 - u32::from(v) })
            .sum()
    }
}

impl TryFrom<Vec<u8>> for SusResponse {
    type Error = EvaluationError;
    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        Self::new(&v)
    }
}

impl From<SusResponse> for Vec<u8> {
    fn from(r: SusResponse) -> Self {
        r.items.to_vec()
    }
}

/// Odd-numbered items contribute `v - 1`, even-numbered `5 - v`; the sum
/// is scaled by 2.5.
pub fn sus_score<T: Scalar>(response: &SusResponse) -> T {
    T::of(f64::from(response.raw_points()) * 2.5)
}

pub fn mean_sus<T: Scalar>(responses: &[SusResponse]) -> Result<T, EvaluationError> {
    if responses.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let total: u64 = responses.iter().map(|r| u64::from(r.raw_points())).sum();
    Ok(T::of(total as f64 * 2.5 / responses.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeBand {
    pub grade: String,
    pub min_score: f64,
    pub percentile_low: u32,
    pub percentile_high: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBand {
    pub label: String,
    pub min_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjectiveAnchor {
    pub label: String,
    pub anchor_score: f64,
}

/// Lookup tables for interpreting a mean SUS score. Bands are listed in
/// ascending `min_score` order; a score falls in the last band whose
/// minimum it reaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusBands {
    pub average_score: f64,
    pub grades: Vec<GradeBand>,
    pub acceptability: Vec<LabelBand>,
    pub nps: Vec<LabelBand>,
    pub adjectives: Vec<AdjectiveAnchor>,
}

pub const DEFAULT_SUS_BANDS_JSON: &str = include_str!("../assets/sus_bands.json");

impl Default for SusBands {
    fn default() -> Self {
        Self::from_json(DEFAULT_SUS_BANDS_JSON).expect("bundled band table is valid")
    }
}

fn ascending<I: Iterator<Item = f64>>(mut it: I) -> bool {
    let Some(mut prev) = it.next() else { return false };
    it.all(|v| {
        let ok = v > prev;
        prev = v;
        ok
    })
}

impl SusBands {
    pub fn from_json(text: &str) -> Result<Self, EvaluationError> {
        let t: SusBands = serde_json::from_str(text).map_err(|e| EvaluationError::BadTable(e.to_string()))?;
        let starts_at_zero = |v: Option<f64>| v == Some(0.0);
        if !ascending(t.grades.iter().map(|g| g.min_score))
            || !ascending(t.acceptability.iter().map(|g| g.min_score))
            || !ascending(t.nps.iter().map(|g| g.min_score))
            || !ascending(t.adjectives.iter().map(|g| g.anchor_score))
        {
            return Err(EvaluationError::BadTable("bands must be non-empty and strictly ascending".into()));
        }
        if !starts_at_zero(t.grades.first().map(|g| g.min_score))
            || !starts_at_zero(t.acceptability.first().map(|g| g.min_score))
            || !starts_at_zero(t.nps.first().map(|g| g.min_score))
        {
            return Err(EvaluationError::BadTable("first band must start at 0".into()));
        }
        Ok(t)
    }

    fn grade_for(&self, score: f64) -> &GradeBand {
        self.grades.iter().rev().find(|g| score >= g.min_score).expect("first band starts at 0")
    }

    fn label_for(bands: &[LabelBand], score: f64) -> &str {
        &bands.iter().rev().find(|b| score >= b.min_score).expect("first band starts at 0").label
    }

    /// Anchor label at or beyond the ends and on an anchor; otherwise
    /// "Lower–Upper border" for the anchors the score sits between.
    fn adjective_for(&self, score: f64) -> String {
        let a = &self.adjectives;
        if score <= a[0].anchor_score {
            return a[0].label.clone();
        }
        for w in a.windows(2) {
            if score == w[1].anchor_score {
                return w[1].label.clone();
            }
            if score < w[1].anchor_score {
                return format!("{}–{} border", w[0].label, w[1].label);
            }
        }
        a[a.len() - 1].label.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusInterpretation {
    pub mean_score: f64,
    pub letter_grade: String,
    pub percentile_low: u32,
    pub percentile_high: u32,
    pub below_average: bool,
    pub acceptability: String,
    pub nps_category: String,
    pub adjective: String,
}

pub fn sus_interpret<T: Scalar>(mean_score: T, bands: &SusBands) -> Result<SusInterpretation, EvaluationError> {
    let s = mean_score.to_f64_lossy();
    if !(0.0..=100.0).contains(&s) {
        return Err(EvaluationError::OutOfRange(s));
    }
    let g = bands.grade_for(s);
    Ok(SusInterpretation {
        mean_score: s,
        letter_grade: g.grade.clone(),
        percentile_low: g.percentile_low,
        percentile_high: g.percentile_high,
        below_average: s < bands.average_score,
        acceptability: SusBands::label_for(&bands.acceptability, s).to_string(),
        nps_category: SusBands::label_for(&bands.nps, s).to_string(),
        adjective: bands.adjective_for(s),
    })
}

/// Reading of a value that is a percentile rank rather than a raw score:
/// the grade band containing it and the raw-score range of that band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileReading {
    pub percentile: f64,
    pub letter_grade: String,
    pub score_low: f64,
    pub score_high: f64,
}

pub fn interpret_percentile(percentile: f64, bands: &SusBands) -> Result<PercentileReading, EvaluationError> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(EvaluationError::OutOfRange(percentile));
    }
    let idx = bands
        .grades
        .iter()
        .rposition(|g| percentile >= f64::from(g.percentile_low))
        .unwrap_or(0);
    let g = &bands.grades[idx];
    let score_high = bands.grades.get(idx + 1).map_or(100.0, |n| n.min_score);
    Ok(PercentileReading {
        percentile,
        letter_grade: g.grade.clone(),
        score_low: g.min_score,
        score_high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusReport {
    pub respondents: usize,
    pub scores: Vec<f64>,
    pub mean_score: f64,
    pub sd_score: f64,
    /// The mean read as a raw score.
    pub interpretation: SusInterpretation,
    /// The mean read as a percentile rank.
    pub as_percentile: PercentileReading,
}

pub fn sus_report(responses: &[SusResponse], bands: &SusBands) -> Result<SusReport, EvaluationError> {
    let mean: f64 = mean_sus(responses)?;
    let scores: Vec<f64> = responses.iter().map(sus_score).collect();
    let (_, sd) = welford(scores.iter().copied());
    Ok(SusReport {
        respondents: responses.len(),
        scores,
        mean_score: mean,
        sd_score: sd,
        interpretation: sus_interpret(mean, bands)?,
        as_percentile: interpret_percentile(mean, bands)?,
    })
}

impl SusReport {
    pub fn render_text(&self) -> String {
        let i = &self.interpretation;
        let mut out = String::new();
        let _ = writeln!(out, "respondents      {}", self.respondents);
        let _ = writeln!(out, "mean SUS         {:.2}", self.mean_score);
        let _ = writeln!(out, "sd SUS           {:.2}", self.sd_score);
        let _ = writeln!(out, "grade            {} (percentile {}-{})", i.letter_grade, i.percentile_low, i.percentile_high);
        let _ = writeln!(out, "acceptability    {}", i.acceptability);
        let _ = writeln!(out, "nps category     {}", i.nps_category);
        let _ = writeln!(out, "adjective        {}", i.adjective);
        let _ = writeln!(
            out,
            "as percentile    grade {} (raw {:.1}-{:.1})",
            self.as_percentile.letter_grade, self.as_percentile.score_low, self.as_percentile.score_high
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TaskSample<T> {
    pub task_id: String,
    pub duration_s: T,
    #[serde(default)]
    pub errors: u32,
}

impl<T: Scalar> TaskSample<T> {
    pub fn new(task_id: impl Into<String>, duration_s: T, errors: u32) -> Self {
        Self {
            task_id: task_id.into(),
            duration_s,
            errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics<T> {
    pub n: usize,
    pub mean_s: T,
    pub sd_s: T,
    pub min_s: T,
    pub max_s: T,
    pub mean_errors: T,
    pub sd_errors: T,
}

/// Single-pass mean and sample standard deviation (0 for one value).
fn welford<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> (T, T) {
    let mut n = T::zero();
    let mut mean = T::zero();
    let mut m2 = T::zero();
    for x in values {
        n = n + T::one();
        let d = x - mean;
        mean = mean + d / n;
        m2 = m2 + d * (x - mean);
    }
    let sd = if n > T::one() { (m2 / (n - T::one())).sqrt() } else { T::zero() };
    (mean, sd)
}

/// Statistics over the samples of one task. Standard deviations use the
/// `n - 1` denominator.
pub fn task_metrics<T: Scalar>(samples: &[TaskSample<T>]) -> Result<TaskMetrics<T>, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    for s in samples {
        if !s.duration_s.is_finite() || s.duration_s < T::zero() {
            return Err(EvaluationError::InvalidSample(format!(
                "{}: duration {} must be finite and non-negative",
                s.task_id, s.duration_s
            )));
        }
    }
    let (mean_s, sd_s) = welford(samples.iter().map(|s| s.duration_s));
    let (mean_errors, sd_errors) = welford(samples.iter().map(|s| T::of(f64::from(s.errors))));
    let min_s = samples.iter().map(|s| s.duration_s).fold(T::infinity(), T::min);
    let max_s = samples.iter().map(|s| s.duration_s).fold(T::neg_infinity(), T::max);
    Ok(TaskMetrics {
        n: samples.len(),
        mean_s,
        sd_s,
        min_s,
        max_s,
        mean_errors,
        sd_errors,
    })
}

/// Groups samples by task id and computes metrics for each.
pub fn task_report<T: Scalar>(samples: &[TaskSample<T>]) -> Result<BTreeMap<String, TaskMetrics<T>>, EvaluationError> {
    let mut groups: BTreeMap<String, Vec<TaskSample<T>>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.task_id.clone()).or_default().push(s.clone());
    }
    if groups.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    groups.into_iter().map(|(k, v)| Ok((k, task_metrics(&v)?))).collect()
}

pub fn render_task_table<T: Scalar>(report: &BTreeMap<String, TaskMetrics<T>>) -> String {
    let mut out = format!(
        "{:<12} {:>3} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}\n",
        "task", "n", "mean_s", "sd_s", "min_s", "max_s", "mean_err", "sd_err"
    );
    for (k, m) in report {
        let _ = writeln!(
            out,
            "{:<12} {:>3} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>8.2} {:>8.2}",
            k,
            m.n,
            m.mean_s.to_f64_lossy(),
            m.sd_s.to_f64_lossy(),
            m.min_s.to_f64_lossy(),
            m.max_s.to_f64_lossy(),
            m.mean_errors.to_f64_lossy(),
            m.sd_errors.to_f64_lossy()
        );
    }
    out
}

/// One respondent per row, ten integer item columns. A non-numeric first
/// row is taken as a header.
pub fn read_sus_csv<R: Read>(reader: R) -> Result<Vec<SusResponse>, EvaluationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| EvaluationError::Csv(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Result<Vec<u8>, _> = rec.iter().map(str::parse::<u8>).collect();
        match parsed {
            Ok(items) => out.push(
                SusResponse::new(&items)
                    .map_err(|e| EvaluationError::InvalidResponse(format!("row {}: {e}", i + 1)))?,
            ),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(EvaluationError::Csv(format!("row {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

/// Rows of `task_id,duration_s,errors` with a header line.
pub fn read_task_csv<T: Scalar, R: Read>(reader: R) -> Result<Vec<TaskSample<T>>, EvaluationError> {
    #[derive(Deserialize)]
    struct Row {
        task_id: String,
        duration_s: f64,
        #[serde(default)]
        errors: u32,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<Row>()
        .map(|r| {
            let r = r.map_err(|e| EvaluationError::Csv(e.to_string()))?;
            Ok(TaskSample::new(r.task_id, T::of(r.duration_s), r.errors))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn r(items: [u8; 10]) -> SusResponse {
        SusResponse::new(&items).unwrap()
    }

    #[test]
    fn canonical_scores() {
        assert_eq!(sus_score::<f64>(&r([3; 10])), 50.0);
        assert_eq!(sus_score::<f64>(&r([5, 1, 5, 1, 5, 1, 5, 1, 5, 1])), 100.0);
        assert_eq!(sus_score::<f64>(&r([1, 5, 1, 5, 1, 5, 1, 5, 1, 5])), 0.0);
        assert_eq!(sus_score::<f32>(&r([3; 10])), 50.0f32);
    }

    #[test]
    fn invalid_responses() {
        assert!(matches!(SusResponse::new(&[3; 9]), Err(EvaluationError::InvalidResponse(_))));
        assert!(SusResponse::new(&[3; 11]).is_err());
        assert!(SusResponse::new(&[3, 3, 3, 3, 0, 3, 3, 3, 3, 3]).is_err());
        assert!(SusResponse::new(&[3, 3, 3, 3, 6, 3, 3, 3, 3, 3]).is_err());
        assert!(serde_json::from_str::<SusResponse>("[1,2,3]").is_err());
    }

    #[test]
    fn interpret_83() {
        let i = sus_interpret(83.0, &SusBands::default()).unwrap();
        assert_eq!(i.letter_grade, "A");
        assert_eq!(i.acceptability, "Acceptable");
        assert_eq!(i.nps_category, "Promoter");
        assert_eq!(i.adjective, "Good–Excellent border");
    }

    #[test]
    fn interpret_extremes() {
        let b = SusBands::default();
        let i = sus_interpret(0.0, &b).unwrap();
        assert_eq!((i.letter_grade.as_str(), i.acceptability.as_str(), i.nps_category.as_str()), ("F", "Not Acceptable", "Detractor"));
        assert_eq!(sus_interpret(100.0, &b).unwrap().letter_grade, "A+");
        let i = sus_interpret(55.0, &b).unwrap();
        assert_eq!(i.letter_grade, "D");
        assert_eq!((i.percentile_low, i.percentile_high), (15, 34));
        assert!(i.below_average);
        assert_eq!(i.acceptability, "Marginal");
        assert!(matches!(sus_interpret(100.5, &b), Err(EvaluationError::OutOfRange(_))));
        assert!(sus_interpret(-1.0, &b).is_err());
    }

    #[test]
    fn percentile_reading() {
        let p = interpret_percentile(83.0, &SusBands::default()).unwrap();
        assert_eq!(p.letter_grade, "B+");
        assert_eq!((p.score_low, p.score_high), (77.2, 78.9));
        assert_eq!(interpret_percentile(100.0, &SusBands::default()).unwrap().letter_grade, "A+");
    }

    #[test]
    fn bad_tables_rejected() {
        assert!(SusBands::from_json("{}").is_err());
        let mut t = SusBands::default();
        t.grades.swap(0, 1);
        assert!(SusBands::from_json(&serde_json::to_string(&t).unwrap()).is_err());
    }

    #[test]
    fn task_examples() {
        let m = task_metrics(&[TaskSample::new("t", 12.0, 0)]).unwrap();
        assert_eq!((m.mean_s, m.sd_s), (12.0, 0.0));
        let m = task_metrics(&[TaskSample::new("t", 10.0, 0), TaskSample::new("t", 20.0, 2)]).unwrap();
        assert_eq!(m.mean_s, 15.0);
        assert_relative_eq!(m.sd_s, 50f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(m.sd_s, 7.0711, epsilon = 1e-4);
        assert_eq!(m.mean_errors, 1.0);
        assert_eq!(task_metrics::<f64>(&[]), Err(EvaluationError::EmptyInput));
        assert!(task_metrics(&[TaskSample::new("t", -1.0, 0)]).is_err());
        assert!(task_metrics(&[TaskSample::new("t", f64::NAN, 0)]).is_err());
    }

    #[test]
    fn csv_inputs() {
        let text = "q1,q2,q3,q4,q5,q6,q7,q8,q9,q10\n3,3,3,3,3,3,3,3,3,3\n5,1,5,1,5,1,5,1,5,1\n";
        let rs = read_sus_csv(text.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(mean_sus::<f64>(&rs).unwrap(), 75.0);
        assert!(read_sus_csv("3,3,3\n".as_bytes()).is_err());

        let text = "task_id,duration_s,errors\nt1,10,0\nt1,20,1\nt2,5,0\n";
        let s: Vec<TaskSample<f64>> = read_task_csv(text.as_bytes()).unwrap();
        let rep = task_report(&s).unwrap();
        assert_eq!(rep["t1"].mean_s, 15.0);
        assert_eq!(rep["t2"].n, 1);
        assert!(render_task_table(&rep).contains("t1"));
    }

    fn two_pass(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
        (mean, if v.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 })
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-12
    }

    proptest! {
        #[test]
        fn score_bounds(items in proptest::array::uniform10(1u8..=5)) {
            let s: f64 = sus_score(&r(items));
            prop_assert!((0.0..=100.0).contains(&s));
            prop_assert_eq!(s % 2.5, 0.0);
        }

        #[test]
        fn single_item_perturbation(items in proptest::array::uniform10(1u8..=5), idx in 0usize..10, v in 1u8..=5) {
            // Raising an odd-position item raises the score; raising an
            // even-position item lowers it, by 2.5 per step either way.
            let mut m = items;
            m[idx] = v;
            let before: f64 = sus_score(&r(items));
            let after: f64 = sus_score(&r(m));
            let step = f64::from(v) - f64::from(items[idx]);
            let sign = if idx % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert_eq!(after - before, sign * 2.5 * step);
            // Reflection: 6 - v on an even item equals v on an odd item.
            let mut f = items;
            f[idx] = 6 - items[idx];
            let reflected: f64 = sus_score(&r(f));
            prop_assert_eq!(reflected - before, sign * 2.5 * (f64::from(6 - items[idx]) - f64::from(items[idx])));
        }

        #[test]
        fn mean_permutation_invariant(rs in proptest::collection::vec(proptest::array::uniform10(1u8..=5), 1..20), seed in any::<u64>()) {
            let mut v: Vec<SusResponse> = rs.into_iter().map(r).collect();
            let a: f64 = mean_sus(&v).unwrap();
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(a, mean_sus::<f64>(&v).unwrap());
        }

        #[test]
        fn metrics_match_two_pass(durations in proptest::collection::vec(0.0f64..1e4, 1..50)) {
            let samples: Vec<TaskSample<f64>> = durations.iter().map(|d| TaskSample::new("t", *d, 0)).collect();
            let m = task_metrics(&samples).unwrap();
            let (mean, sd) = two_pass(&durations);
            prop_assert!(close(m.mean_s, mean), "{} vs {}", m.mean_s, mean);
            prop_assert!(close(m.sd_s, sd), "{} vs {}", m.sd_s, sd);
        }
    }
}
