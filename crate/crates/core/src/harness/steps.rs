use serde::{Deserialize, Serialize};

use super::Schedules;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    /// Roman numeral of the condition, `i` through `v`.
    pub id: String,
    pub verdict: Verdict,
    pub detail: String,
}

const EPS: f64 = 1e-12;

fn check(id: &str, ok: bool, detail: String) -> ConditionCheck {
    ConditionCheck {
        id: id.to_string(),
        verdict: if ok { Verdict::Pass } else { Verdict::Warn },
        detail,
    }
}

/// Checks the two-timescale step-size conditions on power-law schedules
/// `coef / t^p` from their exponents alone:
///
/// - (i) `Σ a = Σ b = ∞`: `p_a, p_b <= 1`
/// - (ii) `Σ a², Σ b² < ∞`: `p_a, p_b > 1/2`
/// - (iii) `b/a → 0`: `p_b > p_a`
/// - (iv) `c → 0`: `p_c > 0`
/// - (v) `Σ a²/c² < ∞`: `2 (p_a - p_c) > 1`
///
/// Failures are warnings; nothing here blocks a run.
pub fn validate_step_sizes(schedules: &Schedules) -> Result<Vec<ConditionCheck>> {
    let (_, pa) = schedules.a.as_power_law().ok_or(Error::NotPowerLaw)?;
    let (_, pb) = schedules.b.as_power_law().ok_or(Error::NotPowerLaw)?;
    let (_, pc) = schedules.c.as_power_law().ok_or(Error::NotPowerLaw)?;
    let v = 2.0 * (pa - pc);
    Ok(vec![
        check(
            "i",
            pa <= 1.0 + EPS && pb <= 1.0 + EPS,
            format!("a exponent {pa}, b exponent {pb}; need both <= 1"),
        ),
        check(
            "ii",
            pa > 0.5 + EPS && pb > 0.5 + EPS,
            format!("a exponent {pa}, b exponent {pb}; need both > 0.5"),
        ),
        check(
            "iii",
            pb > pa + EPS,
            format!("b exponent {pb} must exceed a exponent {pa}"),
        ),
        check("iv", pc > EPS, format!("c exponent {pc} must be positive")),
        check("v", v > 1.0 + EPS, format!("2 (a exponent - c exponent) = {v:.6}; need > 1")),
    ])
}
