//! Plain-text and CSV rendering of fitted models.

use std::fmt::Write as _;
use std::io::Write;

use super::{PermutationTestResult, RegressionResult};

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// One column per model, one row per term: `coef (p)` with significance
/// stars, then the unit count and overall model p-value.
pub fn regression_table(title: &str, columns: &[(String, &RegressionResult)]) -> String {
    let mut terms: Vec<&str> = Vec::new();
    for (_, fit) in columns {
        for t in &fit.terms {
            if !terms.contains(&t.term.as_str()) {
                terms.push(&t.term);
            }
        }
    }
    let width = 22;
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<14}", "");
    for (name, _) in columns {
        let _ = write!(out, "{name:>width$}");
    }
    out.push('\n');
    for term in &terms {
        let _ = write!(out, "{term:<14}");
        for (_, fit) in columns {
            let cell = fit
                .term(term)
                .map(|t| format!("{:.3} ({:.2}){}", t.coefficient, t.p_value, stars(t.p_value)))
                .unwrap_or_default();
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<14}", "n");
    for (_, fit) in columns {
        let _ = write!(out, "{:>width$}", fit.n_units);
    }
    out.push('\n');
    let _ = write!(out, "{:<14}", "model p");
    for (_, fit) in columns {
        let _ = write!(out, "{:>width$}", format!("{:.3}", fit.overall_p_value));
    }
    out.push('\n');
    out
}

/// `model,term,coefficient,std_error,t_stat,p_value,n_units,overall_p_value`.
pub fn write_regression_csv<W: Write>(out: W, columns: &[(String, &RegressionResult)]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["model", "term", "coefficient", "std_error", "t_stat", "p_value", "n_units", "overall_p_value"])?;
    for (name, fit) in columns {
        for t in &fit.terms {
            writer.write_record([
                name.clone(),
                t.term.clone(),
                t.coefficient.to_string(),
                t.std_error.to_string(),
                t.t_stat.to_string(),
                t.p_value.to_string(),
                fit.n_units.to_string(),
                fit.overall_p_value.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn permutation_summary(result: &PermutationTestResult) -> String {
    format!(
        "Randomization check\n  observed log-likelihood {:.4}\n  permuted: n={} mean={:.4} q05={:.4} median={:.4} q95={:.4}\n  failed fits {}\n  p = {:.4} (seed {})\n",
        result.observed_log_lik,
        result.permuted.count,
        result.permuted.mean,
        result.permuted.q05,
        result.permuted.median,
        result.permuted.q95,
        result.failed_permutations,
        result.p_value,
        result.seed,
    )
}
