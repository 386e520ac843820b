//! Run configuration: network dimensions, radio parameters and defaults.
//!
//! All internal computation uses linear SI units (watts, hertz, bits,
//! seconds, metres); decibel values appear only at configuration
//! boundaries and in the unit-conversion helpers below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convert a dB ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert a linear ratio to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Convert a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Convert a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts) + 30.0
}

/// Convert a power in dBW to watts.
pub fn dbw_to_watts(dbw: f64) -> f64 {
    db_to_linear(dbw)
}

/// Full description of one simulation run.
///
/// `Default` is the desk-scale profile (2 satellites, one 3-BS cluster,
/// 6 users), small enough that a complete run solves in seconds;
/// [`RunConfig::table_scale`] restores the full-size reference network
/// (3 satellites, 12 BSs in 4 clusters, 48 users).  Any field can be
/// overridden via JSON thanks to `#[serde(default)]`, with unspecified
/// fields falling back to the desk profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // ---- network dimensions -------------------------------------------
    /// Number of LEO satellites (M).
    pub num_leo: usize,
    /// Number of terrestrial base stations (N).
    pub num_bs: usize,
    /// Number of users (K).
    pub num_ue: usize,
    /// Number of uplink sub-channels per BS (N_SC).
    pub num_sc: usize,
    /// Maximum sub-channels one user may occupy simultaneously.
    pub max_sc_per_ue: usize,

    // ---- time ----------------------------------------------------------
    /// Slot duration in seconds (T_S).
    pub ts_duration_s: f64,
    /// Scheduling horizon in slots (N_T).
    pub max_ts: usize,

    // ---- spectrum ------------------------------------------------------
    /// Bandwidth of one terrestrial sub-channel in Hz (W_SC).
    pub sc_bandwidth_hz: f64,
    /// Backhaul bandwidth owned by each satellite in Hz (W_LEO).
    pub leo_bandwidth_hz: f64,
    /// Backhaul carrier frequency in Hz.
    pub carrier_freq_hz: f64,
    /// Noise power spectral density at BS and satellite receivers, dBm/Hz.
    pub noise_density_dbm_hz: f64,

    // ---- power budgets -------------------------------------------------
    /// Per-user transmit power cap in watts.
    pub ue_max_power_w: f64,
    /// Per-BS backhaul transmit power cap in watts.
    pub bs_max_power_w: f64,

    // ---- traffic -------------------------------------------------------
    /// Initial data demand per user in bits (D_k, identical for all users).
    pub demand_bits: f64,

    // ---- terrestrial geometry -----------------------------------------
    /// Service-area extent west-east, metres.
    pub area_width_m: f64,
    /// Service-area extent south-north, metres.
    pub area_height_m: f64,
    /// Latitude of the area centre, degrees.
    pub area_center_lat_deg: f64,
    /// Longitude of the area centre, degrees.
    pub area_center_lon_deg: f64,
    /// Base stations per cluster; `num_bs` must divide evenly.
    pub bs_per_cluster: usize,
    /// Radius of the BS ring around each cluster centre, metres.
    pub cluster_radius_m: f64,
    /// Users are dropped uniformly in a disc of this radius around their
    /// cluster centre, metres.
    pub ue_drop_radius_m: f64,
    /// BS antenna height above ground, metres.
    pub bs_height_m: f64,
    /// User antenna height above ground, metres.
    pub ue_height_m: f64,

    // ---- fading --------------------------------------------------------
    /// Rician K-factor of the small-scale access fading, dB.
    pub rician_k_db: f64,

    // ---- satellites ----------------------------------------------------
    /// Orbit altitude in metres.
    pub leo_altitude_m: f64,
    /// Sub-satellite points at the first slot, (latitude, longitude) degrees.
    pub leo_initial_positions: Vec<(f64, f64)>,
    /// Ground-track velocity (northward, eastward) in m/s.
    pub leo_track_velocity_mps: (f64, f64),
    /// Satellite receive antenna peak gain, dBi.
    pub sat_beam_peak_gain_db: f64,
    /// One-sided 3 dB beamwidth of the satellite antenna, degrees.
    pub sat_beam_3db_deg: f64,
    /// Maximum attenuation of the beam pattern relative to peak, dB.
    pub sat_beam_floor_db: f64,
    /// BS backhaul dish gain, dBi.
    pub bs_sat_antenna_gain_db: f64,

    // ---- reproducibility ----------------------------------------------
    /// Master seed; topology and fading derive independent streams from it.
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_leo: 2,
            num_bs: 3,
            num_ue: 6,
            num_sc: 4,
            max_sc_per_ue: 4,
            ts_duration_s: 0.03,
            max_ts: 50,
            sc_bandwidth_hz: 360e3,
            leo_bandwidth_hz: 1.2e6,
            carrier_freq_hz: 30e9,
            noise_density_dbm_hz: -174.0,
            ue_max_power_w: dbm_to_watts(24.0),
            bs_max_power_w: dbw_to_watts(14.0),
            demand_bits: 0.5e6,
            area_width_m: 5_000.0,
            area_height_m: 6_000.0,
            area_center_lat_deg: 40.0,
            area_center_lon_deg: 20.0,
            bs_per_cluster: 3,
            cluster_radius_m: 400.0,
            ue_drop_radius_m: 500.0,
            bs_height_m: 25.0,
            ue_height_m: 1.5,
            rician_k_db: 10.0,
            leo_altitude_m: 600e3,
            leo_initial_positions: vec![(39.93, 19.99), (39.97, 19.99)],
            leo_track_velocity_mps: (7_560.0, 0.0),
            sat_beam_peak_gain_db: 30.0,
            sat_beam_3db_deg: 4.4,
            sat_beam_floor_db: 30.0,
            bs_sat_antenna_gain_db: 17.5,
            rng_seed: 1,
        }
    }
}

impl RunConfig {
    /// Full-size reference network: 3 satellites, 12 BSs in 4 clusters,
    /// 48 users, 8 sub-channels, 2.5 Mbit demands over a shared 20 MHz
    /// satellite band.
    pub fn table_scale(seed: u64) -> Self {
        Self {
            num_leo: 3,
            num_bs: 12,
            num_ue: 48,
            num_sc: 8,
            max_sc_per_ue: 8,
            leo_bandwidth_hz: 20e6,
            demand_bits: 2.5e6,
            leo_initial_positions: vec![(39.93, 19.99), (39.97, 19.99), (39.95, 20.03)],
            rng_seed: seed,
            ..Self::default()
        }
    }

    /// Desk-scale network used for fast experiments and tests (alias for
    /// `Default`): 2 satellites, one 3-BS cluster, 6 users, 4 sub-channels,
    /// 0.5 Mbit demands.  The satellite band is scaled with the offered
    /// traffic rather than the BS count (desk demand is 1/40 of the
    /// full-size total) so the backhaul stays a working constraint the way
    /// it is in the reference system instead of falling away with the
    /// smaller network.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..Self::default()
        }
    }

    /// Number of BS clusters implied by `num_bs` and `bs_per_cluster`.
    pub fn num_clusters(&self) -> usize {
        self.num_bs / self.bs_per_cluster.max(1)
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_density_w_hz(&self) -> f64 {
        dbm_to_watts(self.noise_density_dbm_hz)
    }

    /// Noise power in one terrestrial sub-channel, watts.
    pub fn noise_per_sc_w(&self) -> f64 {
        self.noise_density_w_hz() * self.sc_bandwidth_hz
    }

    /// Check all fields for consistency.  Called by the scenario builder,
    /// so a bad configuration fails before any simulation starts.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        }

        if self.num_leo == 0 || self.num_bs == 0 || self.num_ue == 0 || self.num_sc == 0 {
            return Err(Error::Config(
                "num_leo, num_bs, num_ue and num_sc must all be at least 1".into(),
            ));
        }
        if self.max_sc_per_ue == 0 || self.max_sc_per_ue > self.num_sc {
            return Err(Error::Config(format!(
                "max_sc_per_ue must lie in 1..={}, got {}",
                self.num_sc, self.max_sc_per_ue
            )));
        }
        if self.max_ts == 0 {
            return Err(Error::Config("max_ts must be at least 1".into()));
        }
        if self.bs_per_cluster == 0 || self.num_bs % self.bs_per_cluster != 0 {
            return Err(Error::Config(format!(
                "bs_per_cluster ({}) must divide num_bs ({})",
                self.bs_per_cluster, self.num_bs
            )));
        }
        let clusters = self.num_clusters();
        if self.num_ue % clusters != 0 {
            return Err(Error::Config(format!(
                "num_ue ({}) must divide evenly over {clusters} clusters",
                self.num_ue
            )));
        }
        if self.leo_initial_positions.len() != self.num_leo {
            return Err(Error::Config(format!(
                "expected {} initial satellite positions, got {}",
                self.num_leo,
                self.leo_initial_positions.len()
            )));
        }
        for &(lat, lon) in &self.leo_initial_positions {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Config(format!(
                    "satellite position ({lat}, {lon}) outside valid lat/lon range"
                )));
            }
        }
        positive("ts_duration_s", self.ts_duration_s)?;
        positive("sc_bandwidth_hz", self.sc_bandwidth_hz)?;
        positive("leo_bandwidth_hz", self.leo_bandwidth_hz)?;
        positive("carrier_freq_hz", self.carrier_freq_hz)?;
        positive("ue_max_power_w", self.ue_max_power_w)?;
        positive("bs_max_power_w", self.bs_max_power_w)?;
        positive("leo_altitude_m", self.leo_altitude_m)?;
        positive("area_width_m", self.area_width_m)?;
        positive("area_height_m", self.area_height_m)?;
        positive("cluster_radius_m", self.cluster_radius_m)?;
        positive("ue_drop_radius_m", self.ue_drop_radius_m)?;
        if !self.demand_bits.is_finite() || self.demand_bits < 0.0 {
            return Err(Error::Config(format!(
                "demand_bits must be non-negative, got {}",
                self.demand_bits
            )));
        }
        if !self.noise_density_dbm_hz.is_finite() {
            return Err(Error::Config("noise_density_dbm_hz must be finite".into()));
        }
        Ok(())
    }

    /// Parse a config from JSON, fill omitted fields from the defaults and
    /// validate the result.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
