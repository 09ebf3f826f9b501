//! Time-stamped coupling data for one data field within the current window.
//!
//! A [`Storage`] is the per-field backend that collects [`Stample`]s as the
//! solver advances. At window end it is either trimmed to its final stample
//! (window accepted) or back to its first stample (window repeated).

use crate::error::{state, validation, Result};
use crate::waveform::Waveform;

/// Two time stamps closer than this (scaled by `max(1, |t|)`) denote the same instant.
pub const TIME_EPS: f64 = 1e-14;

/// Whether `a` and `b` denote the same instant under [`TIME_EPS`].
pub fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_EPS * a.abs().max(b.abs()).max(1.0)
}

/// One coupling-data snapshot: a scalar per vertex per data component.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!(
                "sample entry {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Sample {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A [`Sample`] paired with its absolute time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Stample {
    pub time: f64,
    pub sample: Sample,
}

impl Stample {
    pub fn new(time: f64, sample: Sample) -> Result<Self> {
        if !time.is_finite() {
            return Err(validation(format!("time stamp {time} is not finite")));
        }
        Ok(Self { time, sample })
    }
}

/// Time-ordered stamples of one data field plus its configured waveform degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Storage {
    stamples: Vec<Stample>,
    degree: usize,
}

impl Storage {
    /// An uninitialized storage. The first [`set_sample_at_time`](Self::set_sample_at_time)
    /// fixes the window start.
    pub fn new(degree: usize) -> Self {
        Self {
            stamples: Vec::new(),
            degree,
        }
    }

    /// A storage holding only the window-start stample.
    pub fn with_initial(time: f64, sample: Sample, degree: usize) -> Result<Self> {
        let mut storage = Self::new(degree);
        storage.set_sample_at_time(time, sample)?;
        Ok(storage)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn set_degree(&mut self, degree: usize) {
        self.degree = degree;
    }

    /// Inserts `sample` at `t`, replacing a stample at the same instant.
    pub fn set_sample_at_time(&mut self, t: f64, sample: Sample) -> Result<()> {
        if !t.is_finite() {
            return Err(validation(format!("time stamp {t} is not finite")));
        }
        if let Some(first) = self.stamples.first() {
            if first.sample.len() != sample.len() {
                return Err(validation(format!(
                    "sample length {} does not match storage sample length {}",
                    sample.len(),
                    first.sample.len()
                )));
            }
            if t < first.time && !same_time(t, first.time) {
                return Err(state(format!(
                    "cannot store sample at {t} before window start {}",
                    first.time
                )));
            }
        }
        // Most writes append at the end.
        match self
            .stamples
            .iter()
            .rposition(|s| s.time < t || same_time(s.time, t))
        {
            Some(i) if same_time(self.stamples[i].time, t) => self.stamples[i].sample = sample,
            Some(i) => self.stamples.insert(i + 1, Stample { time: t, sample }),
            None => self.stamples.insert(0, Stample { time: t, sample }),
        }
        Ok(())
    }

    /// Removes every stample strictly after `t`.
    pub fn trim_after(&mut self, t: f64) {
        self.stamples.retain(|s| s.time <= t || same_time(s.time, t));
    }

    /// Removes every stample strictly before `t`.
    pub fn trim_before(&mut self, t: f64) {
        self.stamples.retain(|s| s.time >= t || same_time(s.time, t));
    }

    /// Drops all stamples.
    pub fn clear(&mut self) {
        self.stamples.clear();
    }

    pub fn times(&self) -> Vec<f64> {
        self.stamples.iter().map(|s| s.time).collect()
    }

    pub fn stamples(&self) -> &[Stample] {
        &self.stamples
    }

    pub fn first(&self) -> Option<&Stample> {
        self.stamples.first()
    }

    pub fn last(&self) -> Option<&Stample> {
        self.stamples.last()
    }

    pub fn len(&self) -> usize {
        self.stamples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamples.is_empty()
    }

    /// Number of values per sample, if initialized.
    pub fn sample_len(&self) -> Option<usize> {
        self.stamples.first().map(|s| s.sample.len())
    }

    /// The stample stored at exactly `t`, if any.
    pub fn stample_at(&self, t: f64) -> Option<&Stample> {
        self.stamples.iter().find(|s| same_time(s.time, t))
    }

    /// Interpolated value at `t`. Builds a waveform on every call; callers
    /// evaluating many times should hold on to [`Waveform::build`] instead.
    pub fn sample(&self, t: f64) -> Result<Sample> {
        Waveform::build(self, self.degree)?.evaluate(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: f64) -> Sample {
        Sample::new(vec![v]).unwrap()
    }

    fn storage_of(points: &[(f64, f64)]) -> Storage {
        let mut st = Storage::new(1);
        for &(t, v) in points {
            st.set_sample_at_time(t, s(v)).unwrap();
        }
        st
    }

    fn values(st: &Storage) -> Vec<(f64, f64)> {
        st.stamples()
            .iter()
            .map(|x| (x.time, x.sample.values()[0]))
            .collect()
    }

    #[test]
    fn insertion_preserves_order() {
        let mut st = storage_of(&[(0.0, 1.0)]);
        st.set_sample_at_time(1.0, s(2.0)).unwrap();
        assert_eq!(values(&st), vec![(0.0, 1.0), (1.0, 2.0)]);
    }

    #[test]
    fn fourth_stample_appends() {
        let mut st = storage_of(&[(0.0, 0.0), (0.1, 1.0), (0.2, 2.0)]);
        st.set_sample_at_time(0.3, s(3.0)).unwrap();
        assert_eq!(st.times(), vec![0.0, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn same_time_write_replaces() {
        let mut st = storage_of(&[(0.0, 1.0)]);
        st.set_sample_at_time(0.0, s(5.0)).unwrap();
        assert_eq!(values(&st), vec![(0.0, 5.0)]);
    }

    #[test]
    fn near_identical_time_counts_as_same() {
        let mut st = storage_of(&[(0.0, 1.0), (0.3, 2.0)]);
        st.set_sample_at_time(0.1 + 0.2, s(7.0)).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st.last().unwrap().sample.values(), &[7.0]);
    }

    #[test]
    fn out_of_order_insert_is_sorted() {
        let mut st = storage_of(&[(0.0, 0.0), (1.0, 1.0)]);
        st.set_sample_at_time(0.5, s(0.5)).unwrap();
        assert_eq!(st.times(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Sample::new(vec![f64::NAN]).is_err());
        let mut st = storage_of(&[(0.0, 1.0)]);
        let err = st.set_sample_at_time(f64::INFINITY, s(1.0)).unwrap_err();
        assert!(matches!(err, crate::Error::Validation(_)));
    }

    #[test]
    fn rejects_time_before_window_start() {
        let mut st = storage_of(&[(1.0, 1.0)]);
        let err = st.set_sample_at_time(0.5, s(1.0)).unwrap_err();
        assert!(matches!(err, crate::Error::State(_)));
    }

    #[test]
    fn rejects_length_change() {
        let mut st = storage_of(&[(0.0, 1.0)]);
        let err = st
            .set_sample_at_time(1.0, Sample::new(vec![1.0, 2.0]).unwrap())
            .unwrap_err();
        assert!(matches!(err, crate::Error::Validation(_)));
    }

    #[test]
    fn trim_after_window_start() {
        let mut st = storage_of(&[(0.0, 0.0), (0.1, 1.0), (0.2, 2.0)]);
        st.trim_after(0.0);
        assert_eq!(st.times(), vec![0.0]);
        st.trim_after(0.0);
        assert_eq!(st.times(), vec![0.0]);
    }

    #[test]
    fn trim_after_keeps_boundary() {
        let mut st = storage_of(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        st.trim_after(1.0);
        assert_eq!(values(&st), vec![(0.0, 1.0), (1.0, 2.0)]);
    }

    #[test]
    fn trim_before_window_end() {
        let mut st = storage_of(&[(0.0, 0.0), (0.1, 1.0), (0.2, 2.0)]);
        st.trim_before(0.2);
        assert_eq!(st.times(), vec![0.2]);
        st.trim_before(0.2);
        assert_eq!(st.times(), vec![0.2]);
    }

    #[test]
    fn trim_before_keeps_boundary() {
        let mut st = storage_of(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        st.trim_before(1.0);
        assert_eq!(values(&st), vec![(1.0, 2.0), (2.0, 3.0)]);
    }

    #[test]
    fn times_lists_stamps() {
        assert_eq!(storage_of(&[(0.0, 1.0), (0.5, 2.0)]).times(), vec![0.0, 0.5]);
        assert_eq!(storage_of(&[(0.0, 1.0)]).times(), vec![0.0]);
    }

    #[test]
    fn window_with_n_steps_holds_n_plus_one() {
        let mut st = storage_of(&[(0.0, 0.0)]);
        let n = 7;
        for i in 1..=n {
            st.set_sample_at_time(i as f64 / n as f64, s(i as f64)).unwrap();
        }
        assert_eq!(st.len(), n + 1);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Set(f64, f64),
        TrimAfter(f64),
        TrimBefore(f64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => (0.0..10.0f64, -5.0..5.0f64).prop_map(|(t, v)| Op::Set(t, v)),
            1 => (0.0..10.0f64).prop_map(Op::TrimAfter),
            1 => (0.0..10.0f64).prop_map(Op::TrimBefore),
        ]
    }

    proptest! {
        #[test]
        fn stamples_stay_strictly_increasing(ops in proptest::collection::vec(op(), 1..60)) {
            let mut st = Storage::new(3);
            for op in ops {
                match op {
                    Op::Set(t, v) => { let _ = st.set_sample_at_time(t, s(v)); }
                    Op::TrimAfter(t) => st.trim_after(t),
                    Op::TrimBefore(t) => st.trim_before(t),
                }
                let times = st.times();
                prop_assert!(times.windows(2).all(|w| w[0] < w[1] && !same_time(w[0], w[1])));
            }
        }

        #[test]
        fn trim_both_sides_keeps_only_that_instant(
            times in proptest::collection::btree_set(0u32..50, 1..20),
            pick in 0usize..20,
        ) {
            let times: Vec<f64> = times.into_iter().map(|t| t as f64 * 0.1).collect();
            let mut st = Storage::new(1);
            for &t in &times {
                st.set_sample_at_time(t, s(t)).unwrap();
            }
            let t = times[pick % times.len()];
            st.trim_before(t);
            st.trim_after(t);
            prop_assert_eq!(st.times(), vec![t]);
        }
    }
}
