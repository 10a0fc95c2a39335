use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pod array geometry and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PodConfig {
    pub pods: usize,
    pub rows: usize,
    pub cols: usize,
    /// Columns fed by one multicast input wire.
    pub mcast_u: usize,
    /// Rows merged by one fan-in output wire.
    pub fanin_v: usize,
    pub clock_hz: f64,
}

impl Default for PodConfig {
    fn default() -> Self {
        PodConfig {
            pods: 256,
            rows: 32,
            cols: 32,
            mcast_u: 16,
            fanin_v: 16,
            clock_hz: 1e9,
        }
    }
}

impl PodConfig {
    /// `pods` arrays of `rows x cols` with U and V clamped to the array.
    pub fn new(rows: usize, cols: usize, pods: usize) -> Self {
        PodConfig {
            pods,
            rows,
            cols,
            mcast_u: 16.min(cols.max(1)),
            fanin_v: 16.min(rows.max(1)),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("array dimensions must be positive"));
        }
        if self.mcast_u == 0 || self.mcast_u > self.cols {
            return Err(Error::config(format!("multicast factor {} outside 1..={}", self.mcast_u, self.cols)));
        }
        if self.fanin_v == 0 || self.fanin_v > self.rows {
            return Err(Error::config(format!("fan-in factor {} outside 1..={}", self.fanin_v, self.rows)));
        }
        if self.clock_hz.is_nan() || self.clock_hz <= 0.0 {
            return Err(Error::config("clock must be positive"));
        }
        Ok(())
    }

    /// Post-processors available for aggregation and activation. They work
    /// in pairs, so a single-pod system still gets one pair.
    pub fn post_processors(&self) -> usize {
        self.pods.max(2)
    }

    /// Pipeline fill plus drain of one array pass.
    pub fn fill_drain(&self) -> u64 {
        (self.cols.div_ceil(self.mcast_u) + self.rows.div_ceil(self.fanin_v)) as u64
    }

    /// Peak on-chip bank traffic of one pod per cycle: x and w reads of
    /// `rows` bytes, 16-bit psum read and write of `cols` values each.
    pub fn peak_bank_bytes_per_cycle(&self) -> u64 {
        (2 * self.rows + 4 * self.cols) as u64
    }
}
