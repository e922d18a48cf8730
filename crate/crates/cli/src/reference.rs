//! Published long-run values the experiments are compared with.

use permcmc::parallel::EstimateRow;

/// `(statistic, value, standard error)`.
pub const ISING: [(&str, f64, f64); 3] =
    [("energy", -26.944, 0.020), ("magnetization", 0.0, 0.0), ("abs_magnetization", 14.746, 0.012)];

pub const TRUNCNORM: [(&str, f64, f64); 4] =
    [("x1", 0.2329, 0.0012), ("x2", 0.2162, 0.0012), ("x1_sq", 0.5821, 0.0011), ("x2_sq", 0.5962, 0.0010)];

/// Exact `E[x2^2]` under the banana distribution.
pub const BANANA_X2_SQ: f64 = 3.0;

/// Deviation of each estimate from its reference in combined standard
/// errors, or `None` when no standard error is available.
pub fn compare(rows: &[EstimateRow], reference: &[(&str, f64, f64)]) -> Vec<(String, f64, Option<f64>)> {
    rows.iter()
        .filter_map(|row| {
            let &(_, value, se) = reference.iter().find(|(name, _, _)| *name == row.statistic)?;
            let z = row.se.map(|s| (row.estimate - value) / s.hypot(se));
            Some((row.statistic.clone(), value, z))
        })
        .collect()
}

/// Prints the comparison and returns whether any estimate is more than
/// three combined standard errors away.
pub fn report(rows: &[EstimateRow], reference: &[(&str, f64, f64)]) -> bool {
    let mut inconsistent = false;
    for (name, value, z) in compare(rows, reference) {
        match z {
            Some(z) => {
                let flag = if z.abs() > 3.0 {
                    inconsistent = true;
                    "  INCONSISTENT"
                } else {
                    ""
                };
                println!("  {name:<18} reference {value:>9.4}  z = {z:+6.2}{flag}");
            }
            None => println!("  {name:<18} reference {value:>9.4}  (no standard error with one chain)"),
        }
    }
    if inconsistent {
        println!("estimates are inconsistent with the reference values (|z| > 3)");
    } else {
        println!("estimates are consistent with the reference values");
    }
    inconsistent
}
