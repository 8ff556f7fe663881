//! Piecewise-constant low-mode control schedules.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};
use crate::spectral::ModeIndex;

/// Controls `v_k^l(t)`, constant on `S` equal subintervals of `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub horizon: f64,
    pub modes: Vec<ModeIndex>,
    /// `values[s][c]` is the value of mode `modes[c]` on segment `s`.
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_bound: Option<f64>,
}

impl ControlSchedule {
    pub fn zeros(modes: &[ModeIndex], horizon: f64, segments: usize) -> Result<Self> {
        Self::from_flat(modes, horizon, segments, &vec![0.0; segments * modes.len()])
    }

    /// Constant-in-time schedule.
    pub fn constant(modes: &[ModeIndex], horizon: f64, values: &[f64]) -> Result<Self> {
        Self::from_flat(modes, horizon, 1, values)
    }

    /// Segment-major flattened values: `flat[s * modes.len() + c]`.
    pub fn from_flat(
        modes: &[ModeIndex],
        horizon: f64,
        segments: usize,
        flat: &[f64],
    ) -> Result<Self> {
        if segments == 0 {
            return Err(invalid("segments", "need at least one segment"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", format!("{horizon} must be positive")));
        }
        if flat.len() != segments * modes.len() {
            return Err(LlgError::DimensionMismatch {
                expected: segments * modes.len(),
                found: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(invalid("values", "control values must be finite"));
        }
        let values = if modes.is_empty() {
            vec![Vec::new(); segments]
        } else {
            flat.chunks(modes.len()).map(<[f64]>::to_vec).collect()
        };
        Ok(Self {
            horizon,
            modes: modes.to_vec(),
            values,
            amplitude_bound: None,
        })
    }

    pub fn with_bound(mut self, bound: Option<f64>) -> Self {
        self.amplitude_bound = bound;
        self
    }

    pub fn segments(&self) -> usize {
        self.values.len()
    }

    pub fn segment_len(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(LlgError::OutsideSchedule {
                t,
                horizon: self.horizon,
            });
        }
        let s = (t.max(0.0) / self.segment_len()).floor() as usize;
        Ok(s.min(self.segments() - 1))
    }

    /// Values of all modes at time `t`.
    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        Ok(&self.values[self.segment_index(t)?])
    }

    /// Control energy `Σ_{k,l} ∫ |v_k^l|² dt`.
    pub fn energy(&self) -> f64 {
        self.segment_len() * self.values.iter().flatten().map(|v| v * v).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    /// CSV with columns `t_start, t_end, v_k^l...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t_start".to_string(), "t_end".to_string()];
        header.extend(
            self.modes
                .iter()
                .map(|m| format!("v_{}^{}", m.frequency, m.axis)),
        );
        wr.write_record(&header)?;
        let h = self.segment_len();
        for (s, row) in self.values.iter().enumerate() {
            let mut rec = vec![fmt17(s as f64 * h), fmt17((s + 1) as f64 * h)];
            rec.extend(row.iter().map(|v| fmt17(*v)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Full-precision formatting for CSV output (17 significant digits).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
