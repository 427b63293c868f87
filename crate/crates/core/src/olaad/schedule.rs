use serde::{Deserialize, Serialize};

/// A positive step-size sequence indexed from `t = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `coefficient / t^exponent`.
    PowerLaw { coefficient: f64, exponent: f64 },
    /// Explicit values for `t = 1, 2, ...`; the last value is held afterwards.
    Tabulated { values: Vec<f64> },
}

impl Schedule {
    pub fn power_law(coefficient: f64, exponent: f64) -> Self {
        Schedule::PowerLaw {
            coefficient,
            exponent,
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        let t = t.max(1);
        match self {
            Schedule::PowerLaw {
                coefficient,
                exponent,
            } => coefficient / (t as f64).powf(*exponent),
            Schedule::Tabulated { values } => {
                let i = (t as usize - 1).min(values.len().saturating_sub(1));
                values.get(i).copied().unwrap_or(0.0)
            }
        }
    }

    /// `(coefficient, exponent)` for power-law schedules.
    pub fn as_power_law(&self) -> Option<(f64, f64)> {
        match *self {
            Schedule::PowerLaw {
                coefficient,
                exponent,
            } => Some((coefficient, exponent)),
            Schedule::Tabulated { .. } => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Schedule::PowerLaw {
                coefficient,
                exponent,
            } => *coefficient > 0.0 && exponent.is_finite() && *exponent >= 0.0,
            Schedule::Tabulated { values } => {
                !values.is_empty() && values.iter().all(|v| *v > 0.0 && v.is_finite())
            }
        }
    }
}
