//! Scenario generation: node placement, satellite motion and channel gains.
//!
//! A scenario is everything the optimizers treat as given: BS and user
//! positions inside the service area, per-slot sub-satellite points, the
//! access channel tensor (slot x BS x user x sub-channel, Rician fading on
//! top of a log-distance path loss) and the deterministic BS-satellite
//! backhaul gains (free-space loss plus antenna patterns over the slant
//! range).  Everything is reproducible from `RunConfig::rng_seed`.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{db_to_linear, RunConfig};
use crate::error::{Error, Result};

/// Mean Earth radius, metres (spherical model).
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Speed of light, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

// Independent RNG streams derived from the master seed.
const STREAM_TOPOLOGY: u64 = 0x746f_706f;
const STREAM_FADING: u64 = 0x6661_6465;

/// Derive a child seed from the master seed and a stream tag (splitmix64
/// finalizer, so nearby seeds give unrelated streams).
pub(crate) fn sub_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A point on (or above) the spherical Earth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPosition {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl GeoPosition {
    pub fn new(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Self {
        Self {
            lat_deg,
            lon_deg,
            alt_m,
        }
    }

    /// Earth-centred Cartesian coordinates, metres.
    pub fn ecef(&self) -> [f64; 3] {
        let r = EARTH_RADIUS_M + self.alt_m;
        let lat = self.lat_deg.to_radians();
        let lon = self.lon_deg.to_radians();
        [
            r * lat.cos() * lon.cos(),
            r * lat.cos() * lon.sin(),
            r * lat.sin(),
        ]
    }
}

/// Straight-line distance between two positions, metres.
pub fn slant_range_m(a: &GeoPosition, b: &GeoPosition) -> f64 {
    let pa = a.ecef();
    let pb = b.ecef();
    let d = [pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Free-space path loss in dB at distance `d_m` and frequency `f_hz`.
pub fn fspl_db(d_m: f64, f_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * d_m * f_hz / SPEED_OF_LIGHT_M_S).log10()
}

/// Access-link path loss in dB over a 3-D distance in kilometres:
/// `145.4 + 37.5 log10(d_km)`.
pub fn pathloss_bs_ue(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) || !d_km.is_finite() {
        return Err(Error::Domain(format!(
            "path-loss distance must be positive and finite, got {d_km} km"
        )));
    }
    Ok(145.4 + 37.5 * d_km.log10())
}

/// Satellite receive-antenna gain towards an off-boresight angle, dB.
/// Quadratic roll-off with a floor, boresight at nadir.
fn sat_beam_gain_db(cfg: &RunConfig, off_boresight_deg: f64) -> f64 {
    let rolloff = 12.0 * (off_boresight_deg / cfg.sat_beam_3db_deg).powi(2);
    cfg.sat_beam_peak_gain_db - rolloff.min(cfg.sat_beam_floor_db)
}

/// Node placement produced by [`build_topology`].
#[derive(Debug, Clone)]
pub struct Topology {
    /// BS positions (geodetic, antenna height included).
    pub bs_positions: Vec<GeoPosition>,
    /// User positions (geodetic, antenna height included).
    pub ue_positions: Vec<GeoPosition>,
    /// Cluster index of each BS.
    pub bs_cluster: Vec<usize>,
    /// Cluster index of each user.
    pub ue_cluster: Vec<usize>,
    /// 3-D BS-to-user distances in metres, shape (num_bs, num_ue).
    pub distance_bs_ue_m: Array2<f64>,
}

/// Convert a local east/north offset (metres) from the area centre into a
/// geodetic position.
fn local_to_geo(cfg: &RunConfig, east_m: f64, north_m: f64, alt_m: f64) -> GeoPosition {
    let lat0 = cfg.area_center_lat_deg;
    let dlat = (north_m / EARTH_RADIUS_M).to_degrees();
    let dlon = (east_m / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees();
    GeoPosition::new(lat0 + dlat, cfg.area_center_lon_deg + dlon, alt_m)
}

/// Place BS clusters on a grid inside the service area and drop users
/// uniformly in a disc around their cluster centre.  Deterministic for a
/// given `rng_seed`.
pub fn build_topology(cfg: &RunConfig) -> Result<Topology> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.rng_seed, STREAM_TOPOLOGY));

    let clusters = cfg.num_clusters();
    // grid of cluster centres: as square as possible, centred on the area
    let grid_cols = (clusters as f64).sqrt().ceil() as usize;
    let grid_rows = clusters.div_ceil(grid_cols);
    let cell_w = cfg.area_width_m / grid_cols as f64;
    let cell_h = cfg.area_height_m / grid_rows as f64;
    let mut centers = Vec::with_capacity(clusters);
    for c in 0..clusters {
        let col = c % grid_cols;
        let row = c / grid_cols;
        let east = (col as f64 + 0.5) * cell_w - cfg.area_width_m / 2.0;
        let north = (row as f64 + 0.5) * cell_h - cfg.area_height_m / 2.0;
        centers.push((east, north));
    }

    // BSs on a ring around their cluster centre
    let mut bs_positions = Vec::with_capacity(cfg.num_bs);
    let mut bs_cluster = Vec::with_capacity(cfg.num_bs);
    let mut bs_local = Vec::with_capacity(cfg.num_bs);
    for c in 0..clusters {
        for j in 0..cfg.bs_per_cluster {
            let angle = std::f64::consts::FRAC_PI_2
                + 2.0 * std::f64::consts::PI * j as f64 / cfg.bs_per_cluster as f64;
            let east = centers[c].0 + cfg.cluster_radius_m * angle.cos();
            let north = centers[c].1 + cfg.cluster_radius_m * angle.sin();
            bs_local.push((east, north));
            bs_positions.push(local_to_geo(cfg, east, north, cfg.bs_height_m));
            bs_cluster.push(c);
        }
    }

    // users uniform in a disc around the cluster centre
    let per_cluster = cfg.num_ue / clusters;
    let mut ue_positions = Vec::with_capacity(cfg.num_ue);
    let mut ue_cluster = Vec::with_capacity(cfg.num_ue);
    let mut ue_local = Vec::with_capacity(cfg.num_ue);
    for c in 0..clusters {
        for _ in 0..per_cluster {
            let radius = cfg.ue_drop_radius_m * rng.random::<f64>().sqrt();
            let angle = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let east = centers[c].0 + radius * angle.cos();
            let north = centers[c].1 + radius * angle.sin();
            ue_local.push((east, north));
            ue_positions.push(local_to_geo(cfg, east, north, cfg.ue_height_m));
            ue_cluster.push(c);
        }
    }

    // 3-D distances on the local plane (area extent << Earth radius)
    let dz = cfg.bs_height_m - cfg.ue_height_m;
    let mut distance = Array2::zeros((cfg.num_bs, cfg.num_ue));
    for n in 0..cfg.num_bs {
        for k in 0..cfg.num_ue {
            let dx = bs_local[n].0 - ue_local[k].0;
            let dy = bs_local[n].1 - ue_local[k].1;
            distance[[n, k]] = (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }

    Ok(Topology {
        bs_positions,
        ue_positions,
        bs_cluster,
        ue_cluster,
        distance_bs_ue_m: distance,
    })
}

/// Sub-satellite positions at slot `t` (1-based).  Satellites move along
/// their ground track at the configured velocity; altitude is constant.
pub fn propagate_leo(cfg: &RunConfig, t: usize) -> Result<Vec<GeoPosition>> {
    if t == 0 || t > cfg.max_ts {
        return Err(Error::IndexOutOfRange(format!(
            "slot {t} outside 1..={}",
            cfg.max_ts
        )));
    }
    let elapsed = (t - 1) as f64 * cfg.ts_duration_s;
    let (v_north, v_east) = cfg.leo_track_velocity_mps;
    let positions = cfg
        .leo_initial_positions
        .iter()
        .map(|&(lat0, lon0)| {
            let dlat = (v_north * elapsed / EARTH_RADIUS_M).to_degrees();
            let dlon =
                (v_east * elapsed / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees();
            GeoPosition::new(lat0 + dlat, lon0 + dlon, cfg.leo_altitude_m)
        })
        .collect();
    Ok(positions)
}

/// One unit-mean Rician power gain (K-factor in linear scale).
fn rician_power_gain<R: Rng>(k_lin: f64, rng: &mut R) -> f64 {
    let los = (k_lin / (k_lin + 1.0)).sqrt();
    let scatter = (1.0 / (2.0 * (k_lin + 1.0))).sqrt();
    let re: f64 = los + scatter * rng.sample::<f64, _>(StandardNormal);
    let im: f64 = scatter * rng.sample::<f64, _>(StandardNormal);
    re * re + im * im
}

/// Channel gains for a whole run.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// Access power gains, shape (max_ts, num_bs, num_ue, num_sc); slot t
    /// is stored in row t-1.
    pub access_gain: Array4<f64>,
    /// Backhaul power gains, shape (max_ts, num_leo, num_bs).
    pub backhaul_gain: Array3<f64>,
    /// Noise power in one access sub-channel, watts.
    pub noise_per_sc_w: f64,
    /// Noise power spectral density at the satellites, W/Hz.
    pub noise_density_w_hz: f64,
}

impl ChannelSet {
    /// Access-gain slice for slot `t` (1-based), shape (num_bs, num_ue, num_sc).
    pub fn access_slice(&self, t: usize) -> ArrayView3<'_, f64> {
        self.access_gain.index_axis(Axis(0), t - 1)
    }

    /// Backhaul-gain slice for slot `t` (1-based), shape (num_leo, num_bs).
    pub fn backhaul_slice(&self, t: usize) -> ArrayView2<'_, f64> {
        self.backhaul_gain.index_axis(Axis(0), t - 1)
    }
}

/// Synthesize all channel gains for the run.
///
/// Access links: log-distance path loss [`pathloss_bs_ue`] with unit-mean
/// Rician fading drawn independently per (slot, BS, user, sub-channel).
/// Backhaul links: free-space loss over the slant range at the backhaul
/// carrier, satellite beam pattern and dish gain; no small-scale fading.
pub fn synthesize_channels(cfg: &RunConfig, topo: &Topology) -> Result<ChannelSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.rng_seed, STREAM_FADING));
    let k_lin = db_to_linear(cfg.rician_k_db);

    // distance-dependent part of the access gain, linear
    let mut pathgain = Array2::zeros((cfg.num_bs, cfg.num_ue));
    for n in 0..cfg.num_bs {
        for k in 0..cfg.num_ue {
            let d_km = topo.distance_bs_ue_m[[n, k]] / 1_000.0;
            pathgain[[n, k]] = db_to_linear(-pathloss_bs_ue(d_km)?);
        }
    }

    let mut access = Array4::zeros((cfg.max_ts, cfg.num_bs, cfg.num_ue, cfg.num_sc));
    for t in 0..cfg.max_ts {
        for n in 0..cfg.num_bs {
            for k in 0..cfg.num_ue {
                for s in 0..cfg.num_sc {
                    access[[t, n, k, s]] = pathgain[[n, k]] * rician_power_gain(k_lin, &mut rng);
                }
            }
        }
    }

    let mut backhaul = Array3::zeros((cfg.max_ts, cfg.num_leo, cfg.num_bs));
    for t in 1..=cfg.max_ts {
        let sats = propagate_leo(cfg, t)?;
        for (m, sat) in sats.iter().enumerate() {
            let nadir = GeoPosition::new(sat.lat_deg, sat.lon_deg, 0.0);
            let sat_ecef = sat.ecef();
            let to_nadir = direction(&sat_ecef, &nadir.ecef());
            for (n, bs) in topo.bs_positions.iter().enumerate() {
                let range = slant_range_m(sat, bs);
                let to_bs = direction(&sat_ecef, &bs.ecef());
                let cos_off = dot(&to_nadir, &to_bs).clamp(-1.0, 1.0);
                let off_deg = cos_off.acos().to_degrees();
                let gain_db = sat_beam_gain_db(cfg, off_deg) + cfg.bs_sat_antenna_gain_db
                    - fspl_db(range, cfg.carrier_freq_hz);
                backhaul[[t - 1, m, n]] = db_to_linear(gain_db);
            }
        }
    }

    Ok(ChannelSet {
        access_gain: access,
        backhaul_gain: backhaul,
        noise_per_sc_w: cfg.noise_per_sc_w(),
        noise_density_w_hz: cfg.noise_density_w_hz(),
    })
}

fn direction(from: &[f64; 3], to: &[f64; 3]) -> [f64; 3] {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / norm, d[1] / norm, d[2] / norm]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// An immutable bundle of configuration, topology and channels — the input
/// both optimizers consume.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: RunConfig,
    pub topology: Topology,
    pub channels: ChannelSet,
}

impl Scenario {
    /// Build topology and channels from a validated configuration.
    pub fn generate(cfg: RunConfig) -> Result<Self> {
        let topology = build_topology(&cfg)?;
        let channels = synthesize_channels(&cfg, &topology)?;
        Ok(Self {
            cfg,
            topology,
            channels,
        })
    }
}
