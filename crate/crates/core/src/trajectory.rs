//! Trajectories and inpainting conditions.
//!
//! A trajectory is a `horizon × channels` matrix stored row-major (time-major,
//! channel-minor). That flattening order is used everywhere: score models,
//! guide gradients and condition indices all address `values[t * channels + w]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    horizon: usize,
    channels: usize,
    values: Vec<f64>,
    /// Optional per-step actions, one row per timestep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actions: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn new(horizon: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 || channels == 0 {
            return Err(Error::invalid("trajectory needs horizon >= 1 and channels >= 1"));
        }
        if values.len() != horizon * channels {
            return Err(Error::Shape {
                expected: format!("{} values", horizon * channels),
                actual: format!("{}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory values".into()));
        }
        Ok(Self {
            horizon,
            channels,
            values,
            actions: None,
        })
    }

    pub fn zeros(horizon: usize, channels: usize) -> Self {
        assert!(horizon > 0 && channels > 0);
        Self {
            horizon,
            channels,
            values: vec![0.0; horizon * channels],
            actions: None,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::invalid("ragged trajectory rows"));
        }
        Self::new(rows.len(), channels, rows.concat())
    }

    /// Wraps raw sampler output without re-checking finiteness.
    pub(crate) fn from_flat_unchecked(horizon: usize, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), horizon * channels);
        Self {
            horizon,
            channels,
            values,
            actions: None,
        }
    }

    pub fn with_actions(mut self, actions: Vec<Vec<f64>>) -> Result<Self> {
        if actions.len() != self.horizon {
            return Err(Error::Shape {
                expected: format!("{} action rows", self.horizon),
                actual: format!("{}", actions.len()),
            });
        }
        if actions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actions".into()));
        }
        self.actions = Some(actions);
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        Shape {
            horizon: self.horizon,
            channels: self.channels,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn actions(&self) -> Option<&[Vec<f64>]> {
        self.actions.as_deref()
    }

    pub fn get(&self, t: usize, w: usize) -> f64 {
        self.values[t * self.channels + w]
    }

    pub fn set(&mut self, t: usize, w: usize, v: f64) {
        self.values[t * self.channels + w] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Flattened Euclidean distance.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub horizon: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(horizon: usize, channels: usize) -> Self {
        Self { horizon, channels }
    }

    pub fn len(&self) -> usize {
        self.horizon * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Entries `(t, w, value)` clamped during denoising.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    entries: Vec<(usize, usize, f64)>,
}

impl ConditionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut set = Self::new();
        for (t, w, v) in entries {
            set.insert(t, w, v)?;
        }
        Ok(set)
    }

    /// Adds an entry; duplicates of an existing `(t, w)` are rejected.
    pub fn insert(&mut self, t: usize, w: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("condition ({t}, {w})")));
        }
        if self.entries.iter().any(|&(et, ew, _)| et == t && ew == w) {
            return Err(Error::invalid(format!("duplicate condition at ({t}, {w})")));
        }
        self.entries.push((t, w, value));
        Ok(())
    }

    /// Clamps every channel of row `t` to `values`.
    pub fn insert_row(&mut self, t: usize, values: &[f64]) -> Result<()> {
        for (w, &v) in values.iter().enumerate() {
            self.insert(t, w, v)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, t: usize, w: usize) -> bool {
        self.entries.iter().any(|&(et, ew, _)| et == t && ew == w)
    }

    pub fn validate(&self, shape: Shape) -> Result<()> {
        for &(t, w, _) in &self.entries {
            if t >= shape.horizon || w >= shape.channels {
                return Err(Error::OutOfRange(format!(
                    "condition ({t}, {w}) outside {}x{}",
                    shape.horizon, shape.channels
                )));
            }
        }
        Ok(())
    }

    /// Union of `self` and `priority`; where both clamp the same entry the
    /// value from `priority` is kept.
    pub fn merged_with(&self, priority: &ConditionSet) -> ConditionSet {
        let mut entries: Vec<_> = self
            .entries
            .iter()
            .copied()
            .filter(|&(t, w, _)| !priority.contains(t, w))
            .collect();
        entries.extend_from_slice(&priority.entries);
        ConditionSet { entries }
    }

    /// Whether `traj` holds every clamped value exactly.
    pub fn satisfied_by(&self, traj: &Trajectory) -> bool {
        self.entries
            .iter()
            .all(|&(t, w, v)| traj.get(t, w).to_bits() == v.to_bits())
    }
}
