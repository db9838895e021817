//! `i2v stats`: the six headline dataset statistics.

use inpatient2vec::corpus::{cohort_stats, load_cohort, CohortStats};

use crate::{CliError, StatsArgs};

pub fn stats(args: StatsArgs) -> Result<(), CliError> {
    let cohort = load_cohort(&args.cohort)?;
    let s = cohort_stats(&cohort)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", render_stats(&s));
    }
    Ok(())
}

fn render_stats(s: &CohortStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24}{:>12}\n", "visits", s.visits));
    out.push_str(&format!("{:<24}{:>12}\n", "days", s.days));
    out.push_str(&format!("{:<24}{:>12}\n", "diagnosis codes", s.diagnosis_codes));
    out.push_str(&format!("{:<24}{:>12}\n", "activity codes", s.activity_codes));
    out.push_str(&format!("{:<24}{:>12.2}\n", "avg activities per day", s.avg_activities_per_day));
    out.push_str(&format!("{:<24}{:>12.2}\n", "avg length of stay", s.avg_los));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_aligned_rows() {
        let s = CohortStats {
            visits: 2000,
            days: 13985,
            diagnosis_codes: 20,
            activity_codes: 200,
            avg_activities_per_day: 8.127,
            avg_los: 6.9925,
        };
        let text = render_stats(&s);
        let expected = "visits                          2000\n\
                        days                           13985\n\
                        diagnosis codes                   20\n\
                        activity codes                   200\n\
                        avg activities per day          8.13\n\
                        avg length of stay              6.99\n";
        assert_eq!(text, expected);
        assert!(text.lines().all(|l| l.len() == 36));
    }
}
