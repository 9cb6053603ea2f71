//! Periodic sampled waveforms: measured inflow series, their interpolation,
//! and synthetic inflow generation for runs without digitized patient data.

use crate::error::{Error, Result};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformKind {
    /// mL/s
    Flow,
    /// g/cm/s^2
    Pressure,
}

/// One period of a periodic signal, sampled at strictly increasing times in
/// [0, T). Evaluation wraps periodically with C1 cubic interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub period: f64,
    pub kind: WaveformKind,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Waveform {
    /// Build from samples. A closing sample at t = T is accepted and checked
    /// against the opening sample (must agree within 1% of the peak), then
    /// dropped; periodic continuation supplies it thereafter.
    pub fn new(mut times: Vec<f64>, mut values: Vec<f64>, period: f64, kind: WaveformKind) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::Value("waveform needs matching, non-empty samples".into()));
        }
        if period <= 0.0 {
            return Err(Error::Value(format!("waveform period must be positive, got {period}")));
        }
        if (times[0] - 0.0).abs() > 1e-12 * period {
            return Err(Error::Value(format!("waveform must start at t = 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Value("waveform sample times must increase".into()));
            }
        }
        let last = *times.last().unwrap();
        if last > period * (1.0 + 1e-12) {
            return Err(Error::Value(format!(
                "waveform sample at t = {last} beyond the period {period}"
            )));
        }
        if (last - period).abs() <= 1e-9 * period {
            let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let closure = (values[values.len() - 1] - values[0]).abs();
            if closure > 0.01 * peak {
                return Err(Error::Value(format!(
                    "waveform does not close periodically: |v(T) - v(0)| = {closure} vs peak {peak}"
                )));
            }
            times.pop();
            values.pop();
            if times.is_empty() {
                return Err(Error::Value("waveform needs at least one interior sample".into()));
            }
        }
        Ok(Waveform {
            period,
            kind,
            times,
            values,
        })
    }

    pub fn uniform(values: Vec<f64>, period: f64, kind: WaveformKind) -> Result<Self> {
        let n = values.len();
        let times = (0..n).map(|j| j as f64 * period / n as f64).collect();
        Waveform::new(times, values, period, kind)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// Read `t_s,q_mls` CSV holding one period. The period is the last
    /// sample's time when it closes the cycle, otherwise last time + the
    /// trailing sample spacing.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                let header: Vec<&str> = line.split(',').map(str::trim).collect();
                if header != ["t_s", "q_mls"] {
                    return Err(Error::Parse(format!(
                        "{}: expected header t_s,q_mls, got {line:?}",
                        path.display()
                    )));
                }
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: missing t", lineno + 1)))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let v: f64 = fields
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: missing value", lineno + 1)))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if fields.next().is_some() {
                return Err(Error::Parse(format!("line {}: too many fields", lineno + 1)));
            }
            times.push(t);
            values.push(v);
        }
        if times.len() < 2 {
            return Err(Error::Parse(format!(
                "{}: needs at least 2 samples",
                path.display()
            )));
        }
        // A file typically carries the closing sample at t = T; if it does
        // not, assume one more uniform spacing completes the cycle.
        let last = times[times.len() - 1];
        let period = if (values[values.len() - 1] - values[0]).abs()
            <= 0.01 * values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        {
            last
        } else {
            last + (last - times[times.len() - 2])
        };
        Waveform::new(times, values, period, WaveformKind::Flow)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t_s,q_mls\n");
        for (t, v) in self.samples() {
            out.push_str(&format!("{t:.9},{v:.9}\n"));
        }
        out.push_str(&format!("{:.9},{:.9}\n", self.period, self.values[0]));
        std::fs::write(path, out)?;
        Ok(())
    }

    fn wrap(&self, t: f64) -> f64 {
        let mut s = t % self.period;
        if s < 0.0 {
            s += self.period;
        }
        s
    }

    fn time_at(&self, i: isize) -> f64 {
        // Periodic extension of the sample times.
        let n = self.times.len() as isize;
        let cycle = i.div_euclid(n);
        let idx = i.rem_euclid(n) as usize;
        self.times[idx] + cycle as f64 * self.period
    }

    fn value_idx(&self, i: isize) -> f64 {
        let n = self.times.len() as isize;
        self.values[i.rem_euclid(n) as usize]
    }

    /// Periodic cubic Hermite interpolation with central-difference tangents
    /// (Catmull-Rom on uniform grids). Reproduces the samples exactly.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 {
            return self.values[0];
        }
        let s = self.wrap(t);
        // Find i with times[i] <= s < times[i+1] (periodic).
        let i = match self.times.binary_search_by(|probe| probe.total_cmp(&s)) {
            Ok(idx) => return self.values[idx],
            Err(idx) => idx as isize - 1,
        };
        let t0 = self.time_at(i);
        let t1 = self.time_at(i + 1);
        let h = t1 - t0;
        let u = (s - t0) / h;
        let v0 = self.value_idx(i);
        let v1 = self.value_idx(i + 1);
        let m0 = (self.value_idx(i + 1) - self.value_idx(i - 1)) / (self.time_at(i + 1) - self.time_at(i - 1));
        let m1 = (self.value_idx(i + 2) - self.value_idx(i)) / (self.time_at(i + 2) - self.time_at(i));
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * v0
            + (u3 - 2.0 * u2 + u) * h * m0
            + (-2.0 * u3 + 3.0 * u2) * v1
            + (u3 - u2) * h * m1
    }

    /// Period mean by the periodic trapezoid rule on the stored samples.
    pub fn mean(&self) -> f64 {
        let n = self.times.len();
        if n == 1 {
            return self.values[0];
        }
        let mut acc = 0.0;
        for i in 0..n {
            let t0 = self.times[i];
            let t1 = if i + 1 < n { self.times[i + 1] } else { self.period };
            let v0 = self.values[i];
            let v1 = self.values[(i + 1) % n];
            acc += 0.5 * (v0 + v1) * (t1 - t0);
        }
        acc / self.period
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Uniform resampling to `n` points via the interpolant.
    pub fn resample(&self, n: usize) -> Result<Waveform> {
        if n == 0 {
            return Err(Error::Value("cannot resample to zero points".into()));
        }
        let values = (0..n)
            .map(|j| self.value_at(j as f64 * self.period / n as f64))
            .collect();
        Waveform::uniform(values, self.period, self.kind)
    }

    /// Scale values and period; used by the exercise transform.
    pub fn scaled(&self, value_factor: f64, period_factor: f64, n: usize) -> Result<Waveform> {
        if value_factor <= 0.0 || period_factor <= 0.0 {
            return Err(Error::Value(format!(
                "scale factors must be positive (value {value_factor}, period {period_factor})"
            )));
        }
        let new_period = self.period * period_factor;
        let values: Vec<f64> = (0..n)
            .map(|j| value_factor * self.value_at(j as f64 * self.period / n as f64))
            .collect();
        Waveform::uniform(values, new_period, self.kind)
    }
}

/// Synthetic systolic-peaked inflow: a half-sine ejection over 36% of the
/// cycle, a brief 5%-of-peak backflow dip at valve closure, and zero
/// diastolic flow, normalized so the trapezoid period mean matches
/// `mean_flow` exactly.
pub fn synthetic_inflow(mean_flow: f64, period: f64, n: usize) -> Result<Waveform> {
    if mean_flow <= 0.0 || period <= 0.0 || n < 16 {
        return Err(Error::Value(
            "synthetic inflow needs positive mean and period and n >= 16".into(),
        ));
    }
    let t_sys = 0.36 * period;
    let t_dip = 0.08 * period;
    let dip = 0.05;
    let shape = |t: f64| -> f64 {
        if t < t_sys {
            (PI * t / t_sys).sin()
        } else if t < t_sys + t_dip {
            -dip * (PI * (t - t_sys) / t_dip).sin()
        } else {
            0.0
        }
    };
    let values: Vec<f64> = (0..n).map(|j| shape(j as f64 * period / n as f64)).collect();
    let base = Waveform::uniform(values, period, WaveformKind::Flow)?;
    let scale = mean_flow / base.mean();
    let values = base.values.iter().map(|v| v * scale).collect();
    Waveform::uniform(values, period, WaveformKind::Flow)
}
