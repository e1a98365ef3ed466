//! Position popularity, sharing potential, spatial and temporal dispersion.
//!
//! Positions are time bins of a fixed granularity. A request covers bin `p`
//! when its half-open interval `[start_pos, end_pos)` contains the bin's
//! start instant `p * granularity`. Per-bin request counts `Q_p` give the
//! sharing potential `P = sum(max(Q_p - 1, 0))` over a total retrieved mass
//! `M = sum(Q_p)`, and the spatial dispersion `D = 1 - P / M`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::Workload;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("granularity must be positive, got {0}")]
    NonPositiveGranularity(f64),
    #[error("granularity {granularity} exceeds object length {object_length}")]
    GranularityExceedsObject { granularity: f64, object_length: f64 },
    #[error("position {index} is outside the record horizon {horizon}")]
    PositionOutOfRange { index: usize, horizon: usize },
    #[error("spatial dispersion is undefined for an empty record (M = 0)")]
    EmptyRecord,
    #[error("records do not share granularity and horizon")]
    ShapeMismatch,
    #[error("temporal dispersion needs at least one request")]
    EmptyWorkload,
    #[error("dispersion {0} is outside (0, 1]")]
    DispersionOutOfRange(f64),
}

/// Sparse per-position request counts over a horizon of `T` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityRecord {
    granularity: f64,
    horizon: usize,
    #[serde(with = "sparse_pairs")]
    counts: BTreeMap<usize, u64>,
}

mod sparse_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, u64>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(usize, u64)> = m.iter().map(|(k, v)| (*k, *v)).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, u64>, D::Error> {
        let pairs = Vec::<(usize, u64)>::deserialize(d)?;
        let mut m = BTreeMap::new();
        for (k, v) in pairs {
            if v > 0 {
                *m.entry(k).or_insert(0) += v;
            }
        }
        Ok(m)
    }
}

impl PopularityRecord {
    pub fn new(granularity: f64, horizon: usize) -> Result<Self, MetricsError> {
        if !(granularity.is_finite() && granularity > 0.0) {
            return Err(MetricsError::NonPositiveGranularity(granularity));
        }
        Ok(Self {
            granularity,
            horizon,
            counts: BTreeMap::new(),
        })
    }

    /// The record returned when merging nothing: unit granularity, zero horizon.
    pub fn empty() -> Self {
        Self {
            granularity: 1.0,
            horizon: 0,
            counts: BTreeMap::new(),
        }
    }

    pub fn from_counts(
        granularity: f64,
        horizon: usize,
        counts: impl IntoIterator<Item = (usize, u64)>,
    ) -> Result<Self, MetricsError> {
        let mut r = Self::new(granularity, horizon)?;
        for (p, q) in counts {
            r.add(p, q)?;
        }
        Ok(r)
    }

    pub fn granularity(&self) -> f64 {
        self.granularity
    }

    /// Number of position bins T.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn count(&self, p: usize) -> u64 {
        self.counts.get(&p).copied().unwrap_or(0)
    }

    /// Non-zero `(position, Q_p)` pairs in position order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().map(|(p, q)| (*p, *q))
    }

    pub fn add(&mut self, p: usize, count: u64) -> Result<(), MetricsError> {
        if p >= self.horizon {
            return Err(MetricsError::PositionOutOfRange {
                index: p,
                horizon: self.horizon,
            });
        }
        if count > 0 {
            *self.counts.entry(p).or_insert(0) += count;
        }
        Ok(())
    }

    /// Counts one request for `[start, end)` seconds. Returns the number of
    /// bins it covered.
    pub fn add_interval(&mut self, start: f64, end: f64) -> usize {
        let g = self.granularity;
        let mut p = (start / g).floor().max(0.0) as usize;
        while p > 0 && (p - 1) as f64 * g >= start {
            p -= 1;
        }
        while (p as f64) * g < start {
            p += 1;
        }
        let mut covered = 0;
        while p < self.horizon && (p as f64) * g < end {
            *self.counts.entry(p).or_insert(0) += 1;
            covered += 1;
            p += 1;
        }
        covered
    }

    /// Total retrieved mass M.
    pub fn total_mass(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Number of positions with `Q_p >= 1`.
    pub fn distinct_positions(&self) -> u64 {
        self.counts.len() as u64
    }

    pub fn same_shape(&self, other: &PopularityRecord) -> bool {
        self.granularity == other.granularity && self.horizon == other.horizon
    }

    /// Adds `other` pointwise into `self`.
    pub fn absorb(&mut self, other: &PopularityRecord) -> Result<(), MetricsError> {
        if !self.same_shape(other) {
            return Err(MetricsError::ShapeMismatch);
        }
        for (p, q) in other.iter() {
            *self.counts.entry(p).or_insert(0) += q;
        }
        Ok(())
    }
}

/// Builds the popularity record of a workload at the given bin width.
pub fn popularity(w: &Workload, granularity: f64) -> Result<PopularityRecord, MetricsError> {
    if !(granularity.is_finite() && granularity > 0.0) {
        return Err(MetricsError::NonPositiveGranularity(granularity));
    }
    if granularity > w.object_length {
        return Err(MetricsError::GranularityExceedsObject {
            granularity,
            object_length: w.object_length,
        });
    }
    let horizon = (w.object_length / granularity).ceil() as usize;
    let mut rec = PopularityRecord::new(granularity, horizon)?;
    for r in w.requests() {
        rec.add_interval(r.start_pos, r.end_pos);
    }
    Ok(rec)
}

/// Sharing potential P with each term clamped at zero.
pub fn sharing_potential(r: &PopularityRecord) -> u64 {
    r.iter().map(|(_, q)| q.saturating_sub(1)).sum()
}

/// Spatial dispersion `D = 1 - P / M`.
pub fn spatial_dispersion(r: &PopularityRecord) -> Result<f64, MetricsError> {
    let m = r.total_mass();
    if m == 0 {
        return Err(MetricsError::EmptyRecord);
    }
    // (M - P) / M avoids the rounding of 1 - P/M.
    Ok((m - sharing_potential(r)) as f64 / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalDispersion {
    /// Requests per object duration.
    pub request_rate: f64,
    pub temporal_dispersion: f64,
}

pub fn temporal_dispersion(w: &Workload) -> Result<TemporalDispersion, MetricsError> {
    let total = w.total_requests();
    if total == 0 {
        return Err(MetricsError::EmptyWorkload);
    }
    let n = total as f64 / (w.observation_window / w.object_length);
    Ok(TemporalDispersion {
        request_rate: n,
        temporal_dispersion: 1.0 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispersionCategory {
    Low,
    Intermediate,
    High,
}

impl fmt::Display for DispersionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DispersionCategory::Low => "low",
            DispersionCategory::Intermediate => "intermediate",
            DispersionCategory::High => "high",
        })
    }
}

/// Low below 0.1, Intermediate on (0.1, 0.5] plus the 0.1 boundary, High above 0.5.
pub fn categorize_dispersion(d: f64) -> Result<DispersionCategory, MetricsError> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(MetricsError::DispersionOutOfRange(d));
    }
    Ok(if d < 0.1 {
        DispersionCategory::Low
    } else if d <= 0.5 {
        DispersionCategory::Intermediate
    } else {
        DispersionCategory::High
    })
}

/// Pointwise sum of records that share granularity and horizon.
pub fn merge_records<'a, I>(records: I) -> Result<PopularityRecord, MetricsError>
where
    I: IntoIterator<Item = &'a PopularityRecord>,
{
    let mut it = records.into_iter();
    let Some(first) = it.next() else {
        return Ok(PopularityRecord::empty());
    };
    let mut out = first.clone();
    for r in it {
        out.absorb(r)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub n: f64,
    pub temporal_dispersion: f64,
    pub p: u64,
    pub m: u64,
    pub d: f64,
    pub category: DispersionCategory,
}

impl DispersionReport {
    /// Report for a record together with a request rate measured elsewhere.
    pub fn from_record(r: &PopularityRecord, request_rate: f64) -> Result<Self, MetricsError> {
        let d = spatial_dispersion(r)?;
        Ok(Self {
            n: request_rate,
            temporal_dispersion: if request_rate > 0.0 {
                1.0 / request_rate
            } else {
                f64::INFINITY
            },
            p: sharing_potential(r),
            m: r.total_mass(),
            d,
            category: categorize_dispersion(d)?,
        })
    }
}

pub fn dispersion_report(w: &Workload, granularity: f64) -> Result<DispersionReport, MetricsError> {
    let t = temporal_dispersion(w)?;
    let rec = popularity(w, granularity)?;
    DispersionReport::from_record(&rec, t.request_rate)
}
