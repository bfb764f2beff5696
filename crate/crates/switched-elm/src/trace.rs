//! Input-state traces: the raw training and evaluation unit.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A finite sequence of (state, input) pairs sampled at uniform steps.
///
/// Holds `x(0..=K)` and `u(0..=K)`; the horizon `K` is `len() - 1`. The
/// input dimension may be zero for autonomous systems.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    id: String,
    /// Sampling period in seconds.
    dt: f64,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

impl Trace {
    /// Minimum number of samples a trace must hold; switching detection needs
    /// `k-1`, `k`, and `k+1`.
    pub const MIN_LEN: usize = 3;

    pub fn new(
        id: impl Into<String>,
        dt: f64,
        states: Vec<DVector<f64>>,
        inputs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let id = id.into();
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "trace `{id}`: dt must be a positive finite number, got {dt}"
            )));
        }
        if states.len() < Self::MIN_LEN {
            return Err(Error::TraceTooShort {
                id,
                len: states.len(),
                need: Self::MIN_LEN,
            });
        }
        if inputs.len() != states.len() {
            return Err(Error::DimensionMismatch {
                what: "trace input count",
                expected: states.len(),
                got: inputs.len(),
            });
        }
        let n_x = states[0].len();
        let n_u = inputs[0].len();
        if n_x == 0 {
            return Err(Error::EmptyInput("trace state dimension"));
        }
        for (k, x) in states.iter().enumerate() {
            if x.len() != n_x {
                return Err(Error::InconsistentTraces(format!(
                    "trace `{id}`: state {k} has dimension {}, expected {n_x}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trace state"));
            }
        }
        for (k, u) in inputs.iter().enumerate() {
            if u.len() != n_u {
                return Err(Error::InconsistentTraces(format!(
                    "trace `{id}`: input {k} has dimension {}, expected {n_u}",
                    u.len()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trace input"));
            }
        }
        Ok(Self {
            id,
            dt,
            states,
            inputs,
        })
    }

    /// Build an autonomous trace (`n_u = 0`).
    pub fn autonomous(id: impl Into<String>, dt: f64, states: Vec<DVector<f64>>) -> Result<Self> {
        let inputs = vec![DVector::zeros(0); states.len()];
        Self::new(id, dt, states, inputs)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of samples, `K + 1`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least MIN_LEN samples
    }

    /// The horizon `K`.
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn input(&self, k: usize) -> &DVector<f64> {
        &self.inputs[k]
    }

    /// The concatenated `(x(k), u(k))` sample.
    pub fn concat_sample(&self, k: usize) -> DVector<f64> {
        let x = &self.states[k];
        let u = &self.inputs[k];
        DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).cloned())
    }

    /// Write the trace as CSV with header `k,x1..x{n_x},u1..u{n_u}`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.state_dim()).map(|i| format!("x{i}")));
        header.extend((1..=self.input_dim()).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut record = vec![k.to_string()];
            record.extend(self.states[k].iter().map(|v| format_float(*v)));
            record.extend(self.inputs[k].iter().map(|v| format_float(*v)));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a trace from CSV written by [`Trace::write_csv`]. The sampling
    /// period is not part of the file format and must be supplied.
    pub fn read_csv(path: impl AsRef<Path>, dt: f64) -> Result<Self> {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".to_string());
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let n_x = header.iter().filter(|h| h.starts_with('x')).count();
        let n_u = header.iter().filter(|h| h.starts_with('u')).count();
        if header.get(0) != Some("k") || n_x == 0 || 1 + n_x + n_u != header.len() {
            return Err(Error::InvalidConfig(format!(
                "{}: expected header `k,x1..x{{n_x}},u1..u{{n_u}}`, got `{}`",
                path.display(),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "{}: bad value in column {i} of row {:?}",
                            path.display(),
                            record.position().map(|p| p.line())
                        ))
                    })
            };
            let mut x = DVector::zeros(n_x);
            for i in 0..n_x {
                x[i] = parse(1 + i)?;
            }
            let mut u = DVector::zeros(n_u);
            for i in 0..n_u {
                u[i] = parse(1 + n_x + i)?;
            }
            states.push(x);
            inputs.push(u);
        }
        Self::new(id, dt, states, inputs)
    }
}

/// f64's Display prints the shortest form that parses back to the same bits.
fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Check that a set of traces shares horizon, dimensions, and step.
pub fn check_consistent(traces: &[Trace]) -> Result<()> {
    let first = traces.first().ok_or(Error::EmptyInput("trace set"))?;
    for t in &traces[1..] {
        if t.len() != first.len()
            || t.state_dim() != first.state_dim()
            || t.input_dim() != first.input_dim()
            || t.dt() != first.dt()
        {
            return Err(Error::InconsistentTraces(format!(
                "trace `{}` (len {}, n_x {}, n_u {}, dt {}) does not match `{}` (len {}, n_x {}, n_u {}, dt {})",
                t.id(), t.len(), t.state_dim(), t.input_dim(), t.dt(),
                first.id(), first.len(), first.state_dim(), first.input_dim(), first.dt(),
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(vals: &[[f64; 2]]) -> Vec<DVector<f64>> {
        vals.iter().map(|v| DVector::from_vec(v.to_vec())).collect()
    }

    #[test]
    fn rejects_short_and_inconsistent_traces() {
        assert!(Trace::autonomous("t", 0.1, vecs(&[[0., 0.], [1., 1.]])).is_err());
        let mut states = vecs(&[[0., 0.], [1., 1.], [2., 2.]]);
        states[1] = DVector::from_vec(vec![1.0]);
        assert!(Trace::autonomous("t", 0.1, states).is_err());
        let states = vecs(&[[0., 0.], [1., f64::NAN], [2., 2.]]);
        assert!(Trace::autonomous("t", 0.1, states).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_every_bit() {
        let states = vecs(&[
            [0.1234567890123456, -1e-300],
            [std::f64::consts::PI, 2.5e17],
            [-0.0, 42.0],
        ]);
        let inputs: Vec<_> = (0..3).map(|i| DVector::from_vec(vec![i as f64 / 3.0])).collect();
        let trace = Trace::new("roundtrip", 1e-5, states, inputs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        trace.write_csv(&path).unwrap();
        let back = Trace::read_csv(&path, 1e-5).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn autonomous_csv_has_no_input_columns() {
        let trace = Trace::autonomous("a", 1.0, vecs(&[[0., 1.], [1., 2.], [2., 3.]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("k,x1,x2\n"));
        let back = Trace::read_csv(&path, 1.0).unwrap();
        assert_eq!(back.input_dim(), 0);
        assert_eq!(back.horizon(), 2);
    }

    #[test]
    fn consistency_check_catches_shape_drift() {
        let a = Trace::autonomous("a", 1.0, vecs(&[[0., 1.], [1., 2.], [2., 3.]])).unwrap();
        let b = Trace::autonomous("b", 1.0, vecs(&[[0., 1.], [1., 2.], [2., 3.], [3., 4.]])).unwrap();
        assert!(check_consistent(std::slice::from_ref(&a)).is_ok());
        assert!(check_consistent(&[a, b]).is_err());
    }
}
