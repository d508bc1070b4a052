use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use anyhow::Context;

pub const HEADER: [&str; 9] = ["scenario", "engine", "objective", "load", "class", "metric", "value", "ci", "seed"];

/// One metric for one class at one load point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub engine: String,
    pub objective: String,
    /// Load of the most loaded resource; absent for static results.
    pub load: Option<f64>,
    pub class: usize,
    /// `gamma`, `E_n`, `phi` or `throughput`.
    pub metric: String,
    pub value: f64,
    /// 95% half-width, for stochastic engines only.
    pub ci: Option<f64>,
    pub seed: Option<u64>,
}

impl ResultRow {
    fn key_cmp(&self, other: &Self) -> Ordering {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            (a, b) => a.is_some().cmp(&b.is_some()),
        };
        self.scenario
            .cmp(&other.scenario)
            .then_with(|| self.engine.cmp(&other.engine))
            .then_with(|| self.objective.cmp(&other.objective))
            .then_with(|| opt(self.load, other.load))
            .then_with(|| self.class.cmp(&other.class))
            .then_with(|| self.metric.cmp(&other.metric))
            .then_with(|| self.seed.cmp(&other.seed))
            .then_with(|| self.value.total_cmp(&other.value))
            .then_with(|| opt(self.ci, other.ci))
    }

    fn record(&self) -> [String; 9] {
        [
            self.scenario.clone(),
            self.engine.clone(),
            self.objective.clone(),
            self.load.map(sig9).unwrap_or_default(),
            self.class.to_string(),
            self.metric.clone(),
            sig9(self.value),
            self.ci.map(sig9).unwrap_or_default(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }
}

/// Renders `v` with nine significant digits: positional for moderate
/// magnitudes, scientific otherwise.
pub fn sig9(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = mantissa.strip_prefix('-').map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let body = if exp < 0 {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    } else {
        let point = exp as usize + 1;
        if point == digits.len() {
            digits
        } else {
            format!("{}.{}", &digits[..point], &digits[point..])
        }
    };
    format!("{sign}{body}")
}

/// Sorts rows by their key columns and writes them as CSV.
pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> anyhow::Result<()> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.key_cmp(b));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for row in sorted {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write_rows(rows, std::io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(objective: &str, load: Option<f64>, class: usize) -> ResultRow {
        ResultRow {
            scenario: "s".into(),
            engine: "fluid-sim".into(),
            objective: objective.into(),
            load,
            class,
            metric: "gamma".into(),
            value: 0.5,
            ci: Some(0.01),
            seed: Some(3),
        }
    }

    fn render(rows: &[ResultRow]) -> String {
        let mut buf = Vec::new();
        write_rows(rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.5), "0.500000000");
        assert_eq!(sig9(2.0 / 3.0), "0.666666667");
        assert_eq!(sig9(-1.25), "-1.25000000");
        assert_eq!(sig9(123456789.0), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e9");
        assert_eq!(sig9(0.0001234), "0.000123400000");
        assert_eq!(sig9(1.0e-7), "1.00000000e-7");
        assert_eq!(sig9(9.9999999999), "10.0000000");
        assert_eq!(sig9(0.0), "0.00000000");
        assert_eq!(sig9(f64::NAN), "nan");
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(render(&[]), "scenario,engine,objective,load,class,metric,value,ci,seed\n");
    }

    #[test]
    fn one_row() {
        assert_eq!(
            render(&[row("pf", Some(0.3), 1)]),
            "scenario,engine,objective,load,class,metric,value,ci,seed\n\
             s,fluid-sim,pf,0.300000000,1,gamma,0.500000000,0.0100000000,3\n"
        );
    }

    #[test]
    fn rows_are_sorted_by_key() {
        let rows = [row("pf", Some(0.5), 0), row("drf", Some(0.7), 1), row("drf", Some(0.7), 0), row("drf", None, 2)];
        let text = render(&rows);
        let keys: Vec<&str> = text.lines().skip(1).map(|l| &l[..l.find(",gamma").unwrap()]).collect();
        assert_eq!(
            keys,
            ["s,fluid-sim,drf,,2", "s,fluid-sim,drf,0.700000000,0", "s,fluid-sim,drf,0.700000000,1", "s,fluid-sim,pf,0.500000000,0"]
        );
        let mut reversed = rows.to_vec();
        reversed.reverse();
        assert_eq!(render(&reversed), text);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        assert!(write_results(&[], Path::new("/nonexistent-dir/x.csv")).is_err());
    }
}
