//! Windowed χ² detector run at every node.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sum of normalized innovation quadratics `zᵀ Σ⁻¹ z` over a window.
pub fn chi2_stat(window_values: &[f64]) -> f64 {
    window_values.iter().sum()
}

/// `zᵀ Σ⁻¹ z`.
pub fn normalized_quadratic(z: &DVector<f64>, sigma_inv: &DMatrix<f64>) -> Result<f64> {
    if sigma_inv.nrows() != z.len() || sigma_inv.ncols() != z.len() {
        return Err(Error::dim("normalized quadratic", sigma_inv.nrows(), z.len()));
    }
    Ok(z.dot(&(sigma_inv * z)))
}

/// Sliding window over the last `J` normalized quadratics of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    window: VecDeque<f64>,
    window_len: usize,
    threshold: f64,
}

impl DetectorState {
    pub fn new(window_len: usize, threshold: f64) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::Config("detector window length must be at least 1".into()));
        }
        if !(threshold > 0.0) {
            return Err(Error::Config(format!(
                "detector threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self {
            window: VecDeque::with_capacity(window_len),
            window_len,
            threshold,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.window_len
    }

    pub fn values(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    /// Pushes one precomputed quadratic; see [`detector_step`].
    pub fn push(&mut self, value: f64) -> DetectorOutput {
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(value);
        let stat: f64 = self.window.iter().sum();
        DetectorOutput {
            alarm: self.is_full() && stat >= self.threshold,
            stat,
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorOutput {
    pub alarm: bool,
    /// Window sum after the push.
    pub stat: f64,
    /// The pushed quadratic `z̃ᵀ Σ⁻¹ z̃`.
    pub value: f64,
}

/// Pushes `z̃ᵀ Σ⁻¹ z̃` and raises an alarm once the window is full and its sum
/// reaches the threshold.
pub fn detector_step(
    state: &mut DetectorState,
    z_tilde: &DVector<f64>,
    sigma_inv: &DMatrix<f64>,
) -> Result<DetectorOutput> {
    let value = normalized_quadratic(z_tilde, sigma_inv)?;
    Ok(state.push(value))
}

/// Alarm flags per time slot (outer) and node (inner).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlarmTrace {
    slots: Vec<Vec<bool>>,
}

impl AlarmTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slots(slots: Vec<Vec<bool>>) -> Self {
        Self { slots }
    }

    pub fn push_slot(&mut self, alarms: Vec<bool>) {
        self.slots.push(alarms);
    }

    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Vec<bool>] {
        &self.slots
    }

    /// Fraction of slots in which node `k` alarmed.
    pub fn node_rate(&self, k: usize) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        let hits = self.slots.iter().filter(|s| s.get(k).copied().unwrap_or(false)).count();
        hits as f64 / self.slots.len() as f64
    }

    pub fn nodes(&self) -> usize {
        self.slots.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Fraction of time slots in which at least one node alarmed.
pub fn estimate_detection_probability(trace: &AlarmTrace) -> Result<f64> {
    if trace.horizon() == 0 {
        return Err(Error::EmptyTrace);
    }
    let hits = trace.slots().iter().filter(|s| s.iter().any(|&a| a)).count();
    Ok(hits as f64 / trace.horizon() as f64)
}

/// Streaming counterpart of [`estimate_detection_probability`] for runs too
/// long to keep every slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlarmCounter {
    pub slots: u64,
    pub union_hits: u64,
    pub node_hits: Vec<u64>,
}

impl AlarmCounter {
    pub fn new(nodes: usize) -> Self {
        Self {
            slots: 0,
            union_hits: 0,
            node_hits: vec![0; nodes],
        }
    }

    pub fn record(&mut self, alarms: &[bool]) {
        self.slots += 1;
        if alarms.iter().any(|&a| a) {
            self.union_hits += 1;
        }
        for (h, &a) in self.node_hits.iter_mut().zip(alarms) {
            *h += a as u64;
        }
    }

    pub fn union_rate(&self) -> Result<f64> {
        if self.slots == 0 {
            return Err(Error::EmptyTrace);
        }
        Ok(self.union_hits as f64 / self.slots as f64)
    }

    pub fn node_rates(&self) -> Vec<f64> {
        let slots = self.slots.max(1) as f64;
        self.node_hits.iter().map(|&h| h as f64 / slots).collect()
    }
}

/// One detector output row for CSV export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmRecord {
    pub t: u64,
    pub node: usize,
    pub stat: f64,
    pub alarm: bool,
}

/// Writes `t,node,stat,alarm` rows.
pub fn write_alarm_csv(path: &Path, records: &[AlarmRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "t,node,stat,alarm")?;
        for r in records {
            writeln!(w, "{},{},{},{}", r.t, r.node, r.stat, r.alarm as u8)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}
